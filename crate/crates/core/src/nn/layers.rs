use rand::Rng as _;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// A named trainable tensor with an optional accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    name: String,
    pub value: Tensor,
    pub grad: Option<Tensor>,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        Self {
            name: name.into(),
            value,
            grad: None,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Var {
        tape.bind(&self.name, &self.value, trainable)
    }
}

/// Copies the gradients of every trainable binding on `tape` into the
/// matching parameters, adding to whatever they already hold.
pub fn collect_grads(tape: &Tape, params: &mut [&mut Parameter]) {
    for p in params.iter_mut() {
        if let Some(g) = tape.named_grad(p.name()) {
            match &mut p.grad {
                Some(acc) => {
                    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
                None => p.grad = Some(g),
            }
        }
    }
}

/// FNV-1a digest of parameter names and the exact bits of their values.
pub fn checksum<'a>(params: impl IntoIterator<Item = &'a Parameter>) -> u64 {
    const PRIME: u64 = 0x100_0000_01b3;
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |bytes: &[u8]| {
        for b in bytes {
            h ^= u64::from(*b);
            h = h.wrapping_mul(PRIME);
        }
    };
    for p in params {
        feed(p.name.as_bytes());
        for v in p.value.data() {
            feed(&v.to_bits().to_le_bytes());
        }
    }
    h
}

/// Whether a forward pass runs in training mode (dropout active, drawing from
/// the given generator) or evaluation mode.
pub enum Phase<'a> {
    Train(&'a mut Rng),
    Eval,
}

impl Phase<'_> {
    pub fn is_training(&self) -> bool {
        matches!(self, Phase::Train(_))
    }
}

/// Inverted dropout: in training mode each element is zeroed with
/// probability `rate` and survivors are scaled by `1 / (1 - rate)`.
pub fn dropout(tape: &mut Tape, x: Var, rate: f64, phase: &mut Phase<'_>) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!(
            "dropout rate must lie in [0, 1), got {rate}"
        )));
    }
    let Phase::Train(rng) = phase else {
        return Ok(x);
    };
    if rate == 0.0 {
        return Ok(x);
    }
    let keep = 1.0 / (1.0 - rate);
    let mask = (0..tape.value(x).len())
        .map(|_| {
            if rng.random::<f64>() < rate {
                0.0
            } else {
                keep
            }
        })
        .collect();
    tape.mask(x, mask)
}

/// Fully-connected layer computing `x·W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearLayer {
    pub weight: Parameter,
    pub bias: Parameter,
}

impl LinearLayer {
    /// Weights uniform in `±sqrt(6 / (in + out))`, bias zero.
    pub fn new(name: &str, input: usize, output: usize, rng: &mut Rng) -> Self {
        let bound = (6.0 / (input + output) as f64).sqrt();
        let w = (0..input * output)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Self {
            weight: Parameter::new(
                format!("{name}.weight"),
                Tensor::new(vec![input, output], w).expect("shape"),
            ),
            bias: Parameter::new(format!("{name}.bias"), Tensor::zeros(&[output])),
        }
    }

    pub fn from_parts(name: &str, weight: Tensor, bias: Tensor) -> Result<Self> {
        let (ws, bs) = (weight.shape(), bias.shape());
        if ws.len() != 2 || bs != [ws[1]] {
            return Err(Error::Dimension {
                op: "linear",
                left: ws.to_vec(),
                right: bs.to_vec(),
            });
        }
        Ok(Self {
            weight: Parameter::new(format!("{name}.weight"), weight),
            bias: Parameter::new(format!("{name}.bias"), bias),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn forward(&self, tape: &mut Tape, x: Var, trainable: bool) -> Result<Var> {
        let xs = tape.value(x).shape();
        if xs.len() != 2 || xs[1] != self.input_dim() {
            return Err(Error::Dimension {
                op: "linear",
                left: xs.to_vec(),
                right: self.weight.value.shape().to_vec(),
            });
        }
        let w = self.weight.bind(tape, trainable);
        let b = self.bias.bind(tape, trainable);
        let y = tape.matmul(x, w)?;
        tape.add_row(y, b)
    }

    pub fn parameters(&self) -> Vec<&Parameter> {
        vec![&self.weight, &self.bias]
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Multi-layer perceptron used as the feature extractor: ReLU (and optional
/// dropout) between layers, raw output after the last one.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpExtractor {
    layers: Vec<LinearLayer>,
    dropout: f64,
}

impl MlpExtractor {
    /// `widths` lists the input dimension followed by every layer width, so
    /// `[32, 64, 16]` is a 32→64→16 network.
    pub fn new(widths: &[usize], dropout: f64, rng: &mut Rng) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Config(format!(
                "extractor needs at least an input and an output width, all positive; got {widths:?}"
            )));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Config(format!(
                "dropout rate must lie in [0, 1), got {dropout}"
            )));
        }
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| LinearLayer::new(&format!("extractor.{i}"), w[0], w[1], rng))
            .collect();
        Ok(Self { layers, dropout })
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].input_dim()];
        w.extend(self.layers.iter().map(LinearLayer::output_dim));
        w
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(LinearLayer::output_dim).unwrap_or(0)
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        x: Var,
        phase: &mut Phase<'_>,
        trainable: bool,
    ) -> Result<Var> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, h, trainable)?;
            if i != last {
                h = tape.relu(h);
                h = dropout(tape, h, self.dropout, phase)?;
            }
        }
        Ok(h)
    }

    /// Inference-mode embedding of a `[n×input_dim]` matrix.
    pub fn embed(&self, inputs: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.constant(inputs.clone());
        let out = self.forward(&mut tape, x, &mut Phase::Eval, false)?;
        Ok(tape.value(out).clone())
    }

    pub fn parameters(&self) -> Vec<&Parameter> {
        self.layers
            .iter()
            .flat_map(LinearLayer::parameters)
            .collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        self.layers
            .iter_mut()
            .flat_map(LinearLayer::parameters_mut)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck;
    use crate::rng::seeded;

    #[test]
    fn identity_layer_passes_input_through() {
        let layer =
            LinearLayer::from_parts("id", Tensor::identity(3), Tensor::zeros(&[3])).unwrap();
        let mut tape = Tape::new();
        let input = Tensor::from_rows(&[[1.0, -2.0, 0.5], [4.0, 0.0, 9.0]]).unwrap();
        let x = tape.constant(input.clone());
        let y = layer.forward(&mut tape, x, false).unwrap();
        assert_eq!(tape.value(y), &input);
    }

    #[test]
    fn discriminator_widths_chain() {
        let mut rng = seeded(0, 0);
        let a = LinearLayer::new("a", 4, 256, &mut rng);
        let b = LinearLayer::new("b", 256, 6, &mut rng);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[5, 4], 0.1));
        let h = a.forward(&mut tape, x, false).unwrap();
        let y = b.forward(&mut tape, h, false).unwrap();
        assert_eq!(tape.value(h).shape(), &[5, 256]);
        assert_eq!(tape.value(y).shape(), &[5, 6]);
        let bad = tape.constant(Tensor::zeros(&[5, 3]));
        assert!(matches!(
            a.forward(&mut tape, bad, false),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn init_bounds() {
        let mut rng = seeded(3, 0);
        let l = LinearLayer::new("l", 10, 20, &mut rng);
        let bound = (6.0f64 / 30.0).sqrt();
        assert!(l.weight.value.data().iter().all(|w| w.abs() <= bound));
        assert!(l.bias.value.data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn linear_gradcheck() {
        let mut rng = seeded(7, 0);
        let layer = LinearLayer::new("l", 4, 3, &mut rng);
        let x: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = Tensor::matrix(3, 4, x).unwrap();
        let err = gradcheck(
            |tape, x| {
                let y = layer.forward(tape, x, true)?;
                let y = tape.mul(y, y)?;
                Ok(tape.sum(y))
            },
            &x,
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn dropout_modes() {
        let mut rng = seeded(1, 0);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[4, 4], 2.0));
        let y = dropout(&mut tape, x, 0.0, &mut Phase::Train(&mut rng)).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
        let y = dropout(&mut tape, x, 0.7, &mut Phase::Eval).unwrap();
        assert_eq!(y, x);
        assert!(matches!(
            dropout(&mut tape, x, 1.0, &mut Phase::Eval),
            Err(Error::Config(_))
        ));
        assert!(dropout(&mut tape, x, -0.1, &mut Phase::Eval).is_err());
    }

    #[test]
    fn dropout_preserves_mean() {
        let mut rng = seeded(2, 0);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[100_000], 1.0));
        let y = dropout(&mut tape, x, 0.5, &mut Phase::Train(&mut rng)).unwrap();
        let mean = tape.value(y).data().iter().sum::<f64>() / 100_000.0;
        assert!((mean - 1.0).abs() < 0.01, "{mean}");
    }

    #[test]
    fn extractor_is_deterministic_given_seed() {
        let build = || MlpExtractor::new(&[6, 8, 3], 0.5, &mut seeded(11, 1)).unwrap();
        let (a, b) = (build(), build());
        assert_eq!(a, b);
        let input = Tensor::full(&[2, 6], 0.3);
        let run = |m: &MlpExtractor| {
            let mut rng = seeded(5, 9);
            let mut tape = Tape::new();
            let x = tape.constant(input.clone());
            let y = m
                .forward(&mut tape, x, &mut Phase::Train(&mut rng), true)
                .unwrap();
            tape.value(y).clone()
        };
        assert_eq!(run(&a), run(&b));
        assert_eq!(a.embed(&input).unwrap().shape(), &[2, 3]);
        assert_eq!(a.widths(), vec![6, 8, 3]);
    }

    #[test]
    fn checksum_tracks_values() {
        let mut rng = seeded(0, 0);
        let mut l = LinearLayer::new("l", 2, 2, &mut rng);
        let before = checksum(l.parameters());
        assert_eq!(before, checksum(l.parameters()));
        l.bias.value.data_mut()[0] = 1e-300;
        assert_ne!(before, checksum(l.parameters()));
    }
}
