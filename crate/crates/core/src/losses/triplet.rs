//! Triplet losses over mined index triples.
//!
//! All variants reduce by the mean over the triplets of a batch and return
//! the angle diagnostics of the same triplets alongside the loss node.

use serde::{Deserialize, Serialize};

use super::distance::{
    cosine_matrix, distance_matrix, pairwise_angular, pairwise_euclidean, Metric,
};
use super::mining::TripletSet;
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Margins and weights of the embedding and camera losses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Margin of the Euclidean triplet loss.
    pub euclidean_margin: f64,
    /// Margin of the angular triplet loss, in radians. Also used as the
    /// margin of the two cosine variants.
    pub angular_margin: f64,
    /// Cosines are clamped to `[epsilon - 1, 1 - epsilon]` before `arccos`.
    pub epsilon: f64,
    /// Weight of the feature-norm regularizer.
    pub reg_weight: f64,
    /// Weight of the (subtracted) camera loss.
    pub cam_weight: f64,
    /// Label smoothing of the camera loss.
    pub smoothing: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self::angular()
    }
}

impl LossConfig {
    /// Settings for the angular loss: margin 0.08, camera weight 1e-4.
    pub fn angular() -> Self {
        Self {
            euclidean_margin: 0.8,
            angular_margin: 0.08,
            epsilon: 1e-7,
            reg_weight: 1e-3,
            cam_weight: 1e-4,
            smoothing: 0.1,
        }
    }

    /// The angular settings with the smaller 0.05 margin.
    pub fn angular_small_margin() -> Self {
        Self {
            angular_margin: 0.05,
            ..Self::angular()
        }
    }

    /// Settings for the Euclidean loss: camera weight 5e-4.
    pub fn euclidean() -> Self {
        Self {
            cam_weight: 5e-4,
            ..Self::angular()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("{what} (config: {self:?})")));
        if !(self.euclidean_margin >= 0.0) {
            return bad("euclidean_margin must be >= 0");
        }
        if !(self.angular_margin >= 0.0 && self.angular_margin < std::f64::consts::PI) {
            return bad("angular_margin must lie in [0, pi)");
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1e-2) {
            return bad("epsilon must be small and positive");
        }
        if !(self.reg_weight >= 0.0) || !(self.cam_weight >= 0.0) {
            return bad("loss weights must be >= 0");
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return bad("smoothing must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Mean anchor-positive and anchor-negative angles of a triplet set and the
/// fraction of triplets with a nonzero hinge.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AngleDiagnostics {
    pub mean_theta_ap: f64,
    pub mean_theta_an: f64,
    pub active_fraction: f64,
}

impl AngleDiagnostics {
    /// Angles are measured on raw feature values; zero-norm rows count as
    /// orthogonal to everything.
    pub fn measure(
        features: &Tensor,
        triplets: &TripletSet,
        eps: f64,
        active_fraction: f64,
    ) -> Self {
        let angle = |i: usize, j: usize| {
            let (a, b) = (features.row(i), features.row(j));
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            let c = if na > 0.0 && nb > 0.0 {
                dot / (na * nb)
            } else {
                0.0
            };
            c.max(eps - 1.0).min(1.0 - eps).acos()
        };
        let n = triplets.len().max(1) as f64;
        let (mut ap, mut an) = (0.0, 0.0);
        for t in triplets.iter() {
            ap += angle(t.anchor, t.positive);
            an += angle(t.anchor, t.negative);
        }
        Self {
            mean_theta_ap: ap / n,
            mean_theta_an: an / n,
            active_fraction,
        }
    }
}

/// A loss node together with its diagnostics.
#[derive(Clone, Copy, Debug)]
pub struct LossTerm {
    pub loss: Var,
    pub diagnostics: AngleDiagnostics,
}

fn check_triplets(tape: &Tape, features: Var, triplets: &TripletSet) -> Result<usize> {
    if triplets.is_empty() {
        return Err(Error::BatchComposition(
            "no triplets to average over".into(),
        ));
    }
    let b = tape.value(features).rows();
    if let Some(t) = triplets
        .iter()
        .find(|t| t.anchor.max(t.positive).max(t.negative) >= b)
    {
        return Err(Error::BatchComposition(format!(
            "triplet {t:?} indexes past batch of {b}"
        )));
    }
    Ok(b)
}

/// `mean([x]+)` and the fraction of positive entries.
fn hinge_mean(tape: &mut Tape, x: Var) -> Result<(Var, f64)> {
    let active = tape.value(x).data().iter().filter(|v| **v > 0.0).count() as f64
        / tape.value(x).len() as f64;
    let h = tape.relu(x);
    Ok((tape.mean(h)?, active))
}

fn finish(
    tape: &mut Tape,
    features: Var,
    triplets: &TripletSet,
    eps: f64,
    pre_hinge: Var,
) -> Result<LossTerm> {
    let (loss, active) = hinge_mean(tape, pre_hinge)?;
    let diagnostics = AngleDiagnostics::measure(tape.value(features), triplets, eps, active);
    Ok(LossTerm { loss, diagnostics })
}

/// Euclidean triplet loss `mean([D(a,p) - D(a,n) + margin]+)` on raw features.
pub fn triplet_l2(
    tape: &mut Tape,
    features: Var,
    triplets: &TripletSet,
    margin: f64,
) -> Result<LossTerm> {
    let b = check_triplets(tape, features, triplets)?;
    let d = pairwise_euclidean(tape, features)?;
    let dap = tape.gather(d, triplets.positive_pairs(b))?;
    let dan = tape.gather(d, triplets.negative_pairs(b))?;
    let diff = tape.sub(dap, dan)?;
    let x = tape.shift(diff, margin);
    finish(tape, features, triplets, 1e-7, x)
}

/// Cosine triplet loss `mean([cos θ_an - cos θ_ap + margin]+)`.
pub fn triplet_cosine(
    tape: &mut Tape,
    features: Var,
    triplets: &TripletSet,
    margin: f64,
) -> Result<LossTerm> {
    let b = check_triplets(tape, features, triplets)?;
    let c = cosine_matrix(tape, features)?;
    let cap = tape.gather(c, triplets.positive_pairs(b))?;
    let can = tape.gather(c, triplets.negative_pairs(b))?;
    let diff = tape.sub(can, cap)?;
    let x = tape.shift(diff, margin);
    finish(tape, features, triplets, 1e-7, x)
}

/// Margin-inside-cosine loss `mean([cos θ_an - cos(θ_ap + margin)]+)`.
///
/// Kept for observing its optimisation behaviour; the angular loss is the
/// one to train with.
pub fn triplet_cos_margin(
    tape: &mut Tape,
    features: Var,
    triplets: &TripletSet,
    margin: f64,
    eps: f64,
) -> Result<LossTerm> {
    let b = check_triplets(tape, features, triplets)?;
    let c = cosine_matrix(tape, features)?;
    let can = tape.gather(c, triplets.negative_pairs(b))?;
    let cap = tape.gather(c, triplets.positive_pairs(b))?;
    let cap = tape.clamp(cap, eps - 1.0, 1.0 - eps)?;
    let theta_ap = tape.arccos(cap)?;
    let shifted = tape.shift(theta_ap, margin);
    let cos_shifted = tape.cos(shifted);
    let x = tape.sub(can, cos_shifted)?;
    finish(tape, features, triplets, eps, x)
}

/// Angular embedding loss `mean([θ_ap - θ_an + margin]+)`.
pub fn atl_emb(
    tape: &mut Tape,
    features: Var,
    triplets: &TripletSet,
    margin: f64,
    eps: f64,
) -> Result<LossTerm> {
    let b = check_triplets(tape, features, triplets)?;
    let theta = pairwise_angular(tape, features, eps)?;
    let tap = tape.gather(theta, triplets.positive_pairs(b))?;
    let tan = tape.gather(theta, triplets.negative_pairs(b))?;
    let diff = tape.sub(tap, tan)?;
    let x = tape.shift(diff, margin);
    finish(tape, features, triplets, eps, x)
}

/// Mean over triplets of `(‖a‖ + ‖p‖ + ‖n‖) / 3` on raw features.
pub fn norm_regularizer(tape: &mut Tape, features: Var, triplets: &TripletSet) -> Result<Var> {
    check_triplets(tape, features, triplets)?;
    let norms = tape.l2norm_rows(features)?;
    let na = tape.gather(norms, triplets.iter().map(|t| t.anchor).collect())?;
    let np = tape.gather(norms, triplets.iter().map(|t| t.positive).collect())?;
    let nn = tape.gather(norms, triplets.iter().map(|t| t.negative).collect())?;
    let s = tape.add(na, np)?;
    let s = tape.add(s, nn)?;
    let s = tape.scale(s, 1.0 / 3.0);
    tape.mean(s)
}

/// The pieces of the full angular loss.
#[derive(Clone, Copy, Debug)]
pub struct AtlParts {
    pub emb: Var,
    pub reg: Var,
    pub total: Var,
    pub diagnostics: AngleDiagnostics,
}

/// `atl_emb + reg_weight * norm_regularizer`: angles on normalized features,
/// norms on raw ones.
pub fn atl_total(
    tape: &mut Tape,
    features: Var,
    triplets: &TripletSet,
    cfg: &LossConfig,
) -> Result<AtlParts> {
    let LossTerm {
        loss: emb,
        diagnostics,
    } = atl_emb(tape, features, triplets, cfg.angular_margin, cfg.epsilon)?;
    let reg = norm_regularizer(tape, features, triplets)?;
    let weighted = tape.scale(reg, cfg.reg_weight);
    let total = tape.add(emb, weighted)?;
    Ok(AtlParts {
        emb,
        reg,
        total,
        diagnostics,
    })
}

/// Which embedding loss a training run optimises.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingLoss {
    /// Euclidean triplet loss on raw features.
    Euclidean,
    /// Cosine-similarity triplet loss.
    Cosine,
    /// Margin inside the cosine.
    CosMargin,
    /// Angular triplet loss plus the norm regularizer.
    Angular,
}

impl EmbeddingLoss {
    /// Distance used for batch-hard mining under this loss.
    pub fn mining_metric(self) -> Metric {
        match self {
            EmbeddingLoss::Euclidean => Metric::Euclidean,
            _ => Metric::Angular,
        }
    }
}

/// Loss value and its parts as computed for one batch.
#[derive(Clone, Copy, Debug)]
pub struct EmbeddingParts {
    /// Hinge part of the loss.
    pub emb: Var,
    /// Norm regularizer; present for the angular loss only.
    pub reg: Option<Var>,
    /// `emb + reg_weight * reg`, or `emb` alone.
    pub total: Var,
    pub diagnostics: AngleDiagnostics,
}

/// Mines batch-hard triplets with the metric matching `kind` and evaluates
/// the loss.
pub fn mine_and_score(
    tape: &mut Tape,
    features: Var,
    person_ids: &[usize],
    kind: EmbeddingLoss,
    cfg: &LossConfig,
) -> Result<(TripletSet, EmbeddingParts)> {
    let dist = distance_matrix(tape.value(features), kind.mining_metric(), cfg.epsilon)?;
    let triplets = super::mining::batch_hard_mine(&dist, person_ids)?;
    let parts = score(tape, features, &triplets, kind, cfg)?;
    Ok((triplets, parts))
}

/// Evaluates the configured embedding loss on fixed triplets.
pub fn score(
    tape: &mut Tape,
    features: Var,
    triplets: &TripletSet,
    kind: EmbeddingLoss,
    cfg: &LossConfig,
) -> Result<EmbeddingParts> {
    let term = match kind {
        EmbeddingLoss::Angular => {
            let p = atl_total(tape, features, triplets, cfg)?;
            return Ok(EmbeddingParts {
                emb: p.emb,
                reg: Some(p.reg),
                total: p.total,
                diagnostics: p.diagnostics,
            });
        }
        EmbeddingLoss::Euclidean => triplet_l2(tape, features, triplets, cfg.euclidean_margin)?,
        EmbeddingLoss::Cosine => triplet_cosine(tape, features, triplets, cfg.angular_margin)?,
        EmbeddingLoss::CosMargin => {
            triplet_cos_margin(tape, features, triplets, cfg.angular_margin, cfg.epsilon)?
        }
    };
    Ok(EmbeddingParts {
        emb: term.loss,
        reg: None,
        total: term.loss,
        diagnostics: term.diagnostics,
    })
}
