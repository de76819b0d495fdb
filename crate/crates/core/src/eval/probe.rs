use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::adversarial::camera_loss;
use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::nn::{collect_grads, Adam, AdamConfig, LinearLayer, Parameter};
use crate::rng::{seeded, stream};

/// A fresh one-hidden-layer camera classifier trained on frozen features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Share of each camera's samples used for fitting; the rest is scored.
    pub train_fraction: f64,
    /// Standardize each feature with the fitting split's mean and deviation.
    pub standardize: bool,
    /// When groups are supplied to the probe, keep every group wholly on one
    /// side of the fit/score split.
    pub split_by_group: bool,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            epochs: 40,
            batch_size: 64,
            lr: 1e-3,
            train_fraction: 0.5,
            standardize: true,
            split_by_group: false,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    /// Held-out accuracy.
    pub accuracy: f64,
    /// `1 / num_cameras`.
    pub chance_level: f64,
    pub num_cameras: usize,
    pub train_size: usize,
    pub test_size: usize,
}

fn standardizer(x: &Tensor, rows: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let d = x.cols();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for &i in rows {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v / n;
        }
    }
    let mut sd = vec![0.0; d];
    for &i in rows {
        for ((s, v), m) in sd.iter_mut().zip(x.row(i)).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    let sd = sd
        .into_iter()
        .map(|v| if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 })
        .collect();
    (mean, sd)
}

/// Trains a camera classifier on a stratified split of `features` and
/// reports its accuracy on the remaining samples.
pub fn camera_probe(
    features: &Tensor,
    camera_ids: &[usize],
    cfg: &ProbeConfig,
) -> Result<ProbeResult> {
    camera_probe_grouped(features, camera_ids, None, cfg)
}

/// [`camera_probe`] with optional group labels (typically person ids).
pub fn camera_probe_grouped(
    features: &Tensor,
    camera_ids: &[usize],
    groups: Option<&[usize]>,
    cfg: &ProbeConfig,
) -> Result<ProbeResult> {
    if features.rows() != camera_ids.len() {
        return Err(Error::Dimension {
            op: "camera_probe",
            left: features.shape().to_vec(),
            right: vec![camera_ids.len()],
        });
    }
    let mut by_camera: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in camera_ids.iter().enumerate() {
        by_camera.entry(c).or_default().push(i);
    }
    let n_cams = by_camera.len();
    if n_cams < 2 {
        return Err(Error::Config(format!(
            "camera probe needs at least 2 cameras, got {n_cams}"
        )));
    }
    if !(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0)
        || cfg.batch_size == 0
        || cfg.hidden == 0
    {
        return Err(Error::Config(format!("invalid probe settings {cfg:?}")));
    }
    let class_of: BTreeMap<usize, usize> =
        by_camera.keys().enumerate().map(|(k, &c)| (c, k)).collect();
    let mut rng = seeded(cfg.seed, stream::PROBE);
    let (mut fit, mut held) = (Vec::new(), Vec::new());
    if let (true, Some(groups)) = (cfg.split_by_group, groups) {
        let mut ids: Vec<usize> = groups
            .iter()
            .copied()
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        if ids.len() < 2 {
            return Err(Error::Split("group split needs at least 2 groups".into()));
        }
        ids.shuffle(&mut rng);
        let t = ((cfg.train_fraction * ids.len() as f64).round() as usize).clamp(1, ids.len() - 1);
        let fit_ids: std::collections::BTreeSet<usize> = ids[..t].iter().copied().collect();
        for (i, g) in groups.iter().enumerate() {
            if fit_ids.contains(g) {
                fit.push(i);
            } else {
                held.push(i);
            }
        }
    }
    let grouped = !fit.is_empty();
    for members in by_camera.values().filter(|_| !grouped) {
        if members.len() < 2 {
            return Err(Error::Split(
                "every camera needs at least 2 samples for the probe".into(),
            ));
        }
        let mut m = members.clone();
        m.shuffle(&mut rng);
        let t = ((cfg.train_fraction * m.len() as f64).round() as usize).clamp(1, m.len() - 1);
        fit.extend_from_slice(&m[..t]);
        held.extend_from_slice(&m[t..]);
    }

    let (mean, sd) = if cfg.standardize {
        standardizer(features, &fit)
    } else {
        (vec![0.0; features.cols()], vec![1.0; features.cols()])
    };
    let prepared = |rows: &[usize]| -> Tensor {
        let mut data = Vec::with_capacity(rows.len() * features.cols());
        for &i in rows {
            data.extend(
                features
                    .row(i)
                    .iter()
                    .zip(&mean)
                    .zip(&sd)
                    .map(|((v, m), s)| (v - m) / s),
            );
        }
        Tensor::matrix(rows.len(), features.cols(), data).expect("shape")
    };

    let mut l1 = LinearLayer::new("probe.0", features.cols(), cfg.hidden, &mut rng);
    let mut l2 = LinearLayer::new("probe.1", cfg.hidden, n_cams, &mut rng);
    let all_params = |l1: &LinearLayer, l2: &LinearLayer| -> Vec<Parameter> {
        l1.parameters()
            .into_iter()
            .chain(l2.parameters())
            .cloned()
            .collect()
    };
    let mut opt = Adam::new(
        AdamConfig::new(cfg.lr, 0.0),
        &all_params(&l1, &l2).iter().collect::<Vec<_>>(),
    )?;

    let mut order = fit.clone();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let x = tape.constant(prepared(chunk));
            let h = l1.forward(&mut tape, x, true)?;
            let h = tape.relu(h);
            let y = l2.forward(&mut tape, h, true)?;
            let classes: Vec<usize> = chunk.iter().map(|&i| class_of[&camera_ids[i]]).collect();
            let loss = camera_loss(&mut tape, y, &classes, 0.0)?;
            tape.backward(loss)?;
            let mut params: Vec<&mut Parameter> = l1.parameters_mut();
            params.extend(l2.parameters_mut());
            collect_grads(&tape, &mut params);
            opt.step(&mut params)?;
        }
    }

    let mut tape = Tape::new();
    let x = tape.constant(prepared(&held));
    let h = l1.forward(&mut tape, x, false)?;
    let h = tape.relu(h);
    let y = l2.forward(&mut tape, h, false)?;
    let logits = tape.value(y);
    let correct = held
        .iter()
        .enumerate()
        .filter(|&(r, &i)| {
            let row = logits.row(r);
            let mut best = 0;
            for k in 1..row.len() {
                if row[k] > row[best] {
                    best = k;
                }
            }
            best == class_of[&camera_ids[i]]
        })
        .count();
    Ok(ProbeResult {
        accuracy: correct as f64 / held.len() as f64,
        chance_level: 1.0 / n_cams as f64,
        num_cameras: n_cams,
        train_size: fit.len(),
        test_size: held.len(),
    })
}
