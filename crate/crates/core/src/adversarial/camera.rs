use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{dropout, LinearLayer, Parameter, Phase};
use crate::rng::Rng;

/// Predicts the camera of a (unit-normalized) embedding.
///
/// Two fully-connected layers, `d → hidden → n`, each followed by ReLU and
/// dropout. With `activate_logits` off the second layer emits raw logits.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraDiscriminator {
    pub hidden: LinearLayer,
    pub output: LinearLayer,
    pub dropout: f64,
    pub activate_logits: bool,
}

impl CameraDiscriminator {
    pub fn new(
        embedding_dim: usize,
        hidden: usize,
        num_cameras: usize,
        dropout: f64,
        activate_logits: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        if embedding_dim == 0 || hidden == 0 || num_cameras < 2 {
            return Err(Error::Config(format!(
                "discriminator needs positive widths and at least 2 cameras (got d={embedding_dim}, hidden={hidden}, n={num_cameras})"
            )));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Config(format!(
                "dropout rate must lie in [0, 1), got {dropout}"
            )));
        }
        Ok(Self {
            hidden: LinearLayer::new("discriminator.0", embedding_dim, hidden, rng),
            output: LinearLayer::new("discriminator.1", hidden, num_cameras, rng),
            dropout,
            activate_logits,
        })
    }

    pub fn num_cameras(&self) -> usize {
        self.output.output_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.input_dim()
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        x: Var,
        phase: &mut Phase<'_>,
        trainable: bool,
    ) -> Result<Var> {
        let h = self.hidden.forward(tape, x, trainable)?;
        let h = tape.relu(h);
        let h = dropout(tape, h, self.dropout, phase)?;
        let mut out = self.output.forward(tape, h, trainable)?;
        if self.activate_logits {
            out = tape.relu(out);
            out = dropout(tape, out, self.dropout, phase)?;
        }
        Ok(out)
    }

    /// Evaluation-mode logits for a batch of (already normalized) features.
    pub fn logits(&self, features: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.constant(features.clone());
        let y = self.forward(&mut tape, x, &mut Phase::Eval, false)?;
        Ok(tape.value(y).clone())
    }

    pub fn parameters(&self) -> Vec<&Parameter> {
        let mut v = self.hidden.parameters();
        v.extend(self.output.parameters());
        v
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut v = self.hidden.parameters_mut();
        v.extend(self.output.parameters_mut());
        v
    }
}

/// Smoothed one-hot targets `y(1 - alpha) + alpha / n`, one row per sample.
pub fn smoothed_targets(camera_ids: &[usize], num_cameras: usize, alpha: f64) -> Result<Tensor> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::Config(format!(
            "label smoothing must lie in [0, 1), got {alpha}"
        )));
    }
    let mut data = vec![alpha / num_cameras as f64; camera_ids.len() * num_cameras];
    for (i, &c) in camera_ids.iter().enumerate() {
        if c >= num_cameras {
            return Err(Error::Label(format!(
                "camera id {c} at row {i} is outside [0, {num_cameras})"
            )));
        }
        data[i * num_cameras + c] += 1.0 - alpha;
    }
    Tensor::matrix(camera_ids.len(), num_cameras, data)
}

/// Label-smoothed cross-entropy averaged over the batch.
pub fn camera_loss(tape: &mut Tape, logits: Var, camera_ids: &[usize], alpha: f64) -> Result<Var> {
    let shape = tape.value(logits).shape().to_vec();
    if shape.len() != 2 || shape[0] != camera_ids.len() || shape[0] == 0 {
        return Err(Error::Dimension {
            op: "camera_loss",
            left: shape,
            right: vec![camera_ids.len()],
        });
    }
    let targets = smoothed_targets(camera_ids, shape[1], alpha)?;
    let logp = tape.log_softmax_rows(logits)?;
    let t = tape.constant(targets);
    let weighted = tape.mul(logp, t)?;
    let s = tape.sum(weighted);
    Ok(tape.scale(s, -1.0 / camera_ids.len() as f64))
}

/// `atl - w2 * cam`.
pub fn acn_objective(atl: f64, cam: f64, w2: f64) -> f64 {
    atl - w2 * cam
}
