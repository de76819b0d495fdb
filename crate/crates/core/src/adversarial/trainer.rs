use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::camera::CameraDiscriminator;
use super::log::{DiagnosticRecord, LogRecord, StepKind, TrainLog};
use super::steps::{d_step, f_step, FStepSettings};
use crate::data::{augment_flip, LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::losses::{EmbeddingLoss, FeatureBatch, IdentityIndex, LossConfig, Mining, PkSampler};
use crate::nn::{checksum, Adam, AdamConfig, LrSchedule, MlpExtractor};
use crate::rng::{seeded, stream};

/// The four method rows of the comparison: baseline, ATL, ACN, ATL + ACN.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrainMode {
    #[serde(rename = "baseline_L2", alias = "baseline_l2")]
    BaselineL2,
    #[serde(rename = "ATL", alias = "atl")]
    Atl,
    #[serde(rename = "ACN_L2", alias = "acn_l2")]
    AcnL2,
    #[serde(rename = "ACN_ATL", alias = "acn_atl")]
    AcnAtl,
}

impl TrainMode {
    pub fn is_adversarial(self) -> bool {
        matches!(self, TrainMode::AcnL2 | TrainMode::AcnAtl)
    }

    pub fn default_loss(self) -> EmbeddingLoss {
        match self {
            TrainMode::BaselineL2 | TrainMode::AcnL2 => EmbeddingLoss::Euclidean,
            TrainMode::Atl | TrainMode::AcnAtl => EmbeddingLoss::Angular,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::BaselineL2 => "baseline_L2",
            TrainMode::Atl => "ATL",
            TrainMode::AcnL2 => "ACN_L2",
            TrainMode::AcnAtl => "ACN_ATL",
        }
    }
}

/// Extractor architecture: `input → hidden... → embedding_dim`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_embedding_dim")]
    pub embedding_dim: usize,
    #[serde(default)]
    pub dropout: f64,
}

fn default_hidden() -> Vec<usize> {
    vec![64]
}
fn default_embedding_dim() -> usize {
    16
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: default_hidden(),
            embedding_dim: default_embedding_dim(),
            dropout: 0.0,
        }
    }
}

impl ModelConfig {
    pub fn widths(&self, input_dim: usize) -> Vec<usize> {
        let mut w = vec![input_dim];
        w.extend(&self.hidden);
        w.push(self.embedding_dim);
        w
    }

    pub fn build(&self, input_dim: usize, seed: u64) -> Result<MlpExtractor> {
        MlpExtractor::new(
            &self.widths(input_dim),
            self.dropout,
            &mut seeded(seed, stream::EXTRACTOR_INIT),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub mode: TrainMode,
    /// Overrides the embedding loss implied by `mode`.
    pub embedding_loss: Option<EmbeddingLoss>,
    pub mining: Mining,
    #[serde(alias = "P")]
    pub p: usize,
    #[serde(alias = "K_per_id")]
    pub k_per_id: usize,
    pub epochs: usize,
    pub extractor_lr: f64,
    pub discriminator_lr: f64,
    pub weight_decay: f64,
    /// Discriminator steps before each extractor step.
    #[serde(alias = "k")]
    pub d_steps_per_f_step: usize,
    /// Epochs at which both learning rates are multiplied by `decay_factor`.
    pub milestones: Vec<usize>,
    pub decay_factor: f64,
    pub seed: u64,
    /// Epochs of plain embedding training before the adversary is enabled.
    pub warmup_epochs: usize,
    pub discriminator_hidden: usize,
    pub discriminator_dropout: f64,
    pub discriminator_activate_logits: bool,
    /// Horizontal flip probability for image inputs (ignored otherwise).
    pub flip_probability: f64,
    /// Checksum the idle network around every step.
    pub verify_isolation: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::AcnAtl,
            embedding_loss: None,
            mining: Mining::BatchHard,
            p: 32,
            k_per_id: 4,
            epochs: 60,
            extractor_lr: 2e-4,
            discriminator_lr: 3e-4,
            weight_decay: 5e-4,
            d_steps_per_f_step: 1,
            milestones: vec![20, 40],
            decay_factor: 0.1,
            seed: 0,
            warmup_epochs: 0,
            discriminator_hidden: 256,
            discriminator_dropout: 0.5,
            discriminator_activate_logits: false,
            flip_probability: 0.0,
            verify_isolation: false,
        }
    }
}

impl TrainerConfig {
    /// Full-length schedule: 600 epochs, decay at 200 and 400.
    pub fn paper_schedule(self) -> Self {
        Self {
            epochs: 600,
            milestones: vec![200, 400],
            ..self
        }
    }

    pub fn loss_kind(&self) -> EmbeddingLoss {
        self.embedding_loss.unwrap_or(self.mode.default_loss())
    }

    pub fn validate(&self) -> Result<()> {
        if self.p < 2 || self.k_per_id < 2 {
            return Err(Error::Config(format!(
                "P and K_per_id must be >= 2, got P={}, K={}",
                self.p, self.k_per_id
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.d_steps_per_f_step == 0 {
            return Err(Error::Config("d_steps_per_f_step must be >= 1".into()));
        }
        if !(self.extractor_lr > 0.0) || !(self.discriminator_lr > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(Error::Config("flip_probability must lie in [0, 1]".into()));
        }
        LrSchedule::new(
            self.extractor_lr,
            self.milestones.clone(),
            self.decay_factor,
        )?;
        Ok(())
    }
}

/// Counts of checksum comparisons made during a run.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IsolationAudit {
    /// Discriminator steps after which the extractor checksum was compared.
    pub d_steps_checked: usize,
    /// Extractor steps after which the discriminator checksum was compared.
    pub f_steps_checked: usize,
    /// Steps after which the idle network had changed.
    pub violations: usize,
}

pub struct TrainOutcome {
    pub extractor: MlpExtractor,
    pub discriminator: Option<CameraDiscriminator>,
    pub log: TrainLog,
    pub audit: IsolationAudit,
}

/// Alternating training on the `Train` split of `dataset`.
///
/// Each epoch runs `ceil(num_train_ids / P)` combined iterations of
/// `d_steps_per_f_step` discriminator updates followed by one extractor
/// update. Non-adversarial modes build no discriminator at all.
pub fn train(
    dataset: &LabeledDataset,
    model: &ModelConfig,
    loss: &LossConfig,
    cfg: &TrainerConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    loss.validate()?;
    let train_idx = dataset.indices(Split::Train);
    if train_idx.is_empty() {
        return Err(Error::Config("dataset has no training samples".into()));
    }
    let train = dataset.batch(&train_idx);
    let adversarial = cfg.mode.is_adversarial();
    let distinct_cams: BTreeSet<usize> = train.camera_ids.iter().copied().collect();
    if adversarial && distinct_cams.len() < 2 {
        return Err(Error::Config(format!(
            "{} needs at least 2 cameras, training split has {}",
            cfg.mode.as_str(),
            distinct_cams.len()
        )));
    }

    let mut extractor = model.build(dataset.input_dim(), cfg.seed)?;
    let sched_f = LrSchedule::new(cfg.extractor_lr, cfg.milestones.clone(), cfg.decay_factor)?;
    let sched_d = LrSchedule::new(
        cfg.discriminator_lr,
        cfg.milestones.clone(),
        cfg.decay_factor,
    )?;
    let mut opt_f = Adam::new(
        AdamConfig::new(cfg.extractor_lr, cfg.weight_decay),
        &extractor.parameters(),
    )?;
    let mut disc_state = if adversarial {
        let disc = CameraDiscriminator::new(
            model.embedding_dim,
            cfg.discriminator_hidden,
            dataset.num_cameras(),
            cfg.discriminator_dropout,
            cfg.discriminator_activate_logits,
            &mut seeded(cfg.seed, stream::DISCRIMINATOR_INIT),
        )?;
        let opt = Adam::new(
            AdamConfig::new(cfg.discriminator_lr, cfg.weight_decay),
            &disc.parameters(),
        )?;
        Some((disc, opt))
    } else {
        None
    };

    let mut rng_f = seeded(cfg.seed, stream::EXTRACTOR_BATCHES);
    let mut rng_d = seeded(cfg.seed, stream::DISCRIMINATOR_BATCHES);
    let mut sampler = PkSampler::new(&train.person_ids, cfg.p, cfg.k_per_id)?;
    let d_index = IdentityIndex::new(&train.person_ids);
    let settings = FStepSettings {
        kind: cfg.loss_kind(),
        loss: *loss,
        mining: cfg.mining,
    };
    let flip_shape = dataset.image_shape.filter(|_| cfg.flip_probability > 0.0);

    let mut log = TrainLog {
        notes: vec![
            format!("mode={} loss={:?} k={}", cfg.mode.as_str(), settings.kind, cfg.d_steps_per_f_step),
            "discriminator batches: a fresh PK batch per D step, drawn independently of the F batch".into(),
            format!("warmup_epochs={}", cfg.warmup_epochs),
        ],
        ..TrainLog::default()
    };
    let mut audit = IsolationAudit::default();
    let mut last_good = None;
    let iters = sampler.batches_per_epoch();
    let mut iteration = 0;

    for epoch in 0..cfg.epochs {
        let (lr_f, lr_d) = (sched_f.lr_at(epoch), sched_d.lr_at(epoch));
        opt_f.set_lr(lr_f);
        let adversary_on = adversarial && epoch >= cfg.warmup_epochs;
        for _ in 0..iters {
            let nonfinite = |last_good| Error::NonFinite {
                iteration,
                last_good,
            };
            if let (true, Some((disc, opt_d))) = (adversary_on, disc_state.as_mut()) {
                opt_d.set_lr(lr_d);
                for _ in 0..cfg.d_steps_per_f_step {
                    let idx = d_index.sample(cfg.p, cfg.k_per_id, &mut rng_d)?;
                    let raw = train.features.select_rows(&idx);
                    let batch = FeatureBatch::new(
                        extractor.embed(&raw)?,
                        idx.iter().map(|&i| train.person_ids[i]).collect(),
                        idx.iter().map(|&i| train.camera_ids[i]).collect(),
                    )?;
                    let before = cfg
                        .verify_isolation
                        .then(|| checksum(extractor.parameters()));
                    let l_cam = match d_step(&batch, disc, opt_d, loss.smoothing, &mut rng_d) {
                        Err(Error::Degenerate(_)) | Err(Error::NonFinite { .. }) => {
                            return Err(nonfinite(last_good))
                        }
                        other => other?,
                    };
                    if let Some(h) = before {
                        audit.d_steps_checked += 1;
                        if checksum(extractor.parameters()) != h {
                            audit.violations += 1;
                        }
                    }
                    if !l_cam.is_finite() {
                        return Err(nonfinite(last_good));
                    }
                    log.push(LogRecord {
                        iteration,
                        epoch,
                        phase: StepKind::Discriminator,
                        l_emb: None,
                        l_reg: None,
                        l_atl: None,
                        l_cam: Some(l_cam),
                        l_acn: None,
                        lr_f,
                        lr_d: Some(lr_d),
                    });
                }
            }

            let idx = sampler.next_batch(&mut rng_f);
            let mut batch = FeatureBatch::new(
                train.features.select_rows(&idx),
                idx.iter().map(|&i| train.person_ids[i]).collect(),
                idx.iter().map(|&i| train.camera_ids[i]).collect(),
            )?;
            if let Some(shape) = flip_shape {
                batch.features =
                    augment_flip(&batch.features, shape, cfg.flip_probability, &mut rng_f)?;
            }
            let disc_ref = disc_state.as_ref().filter(|_| adversary_on).map(|(d, _)| d);
            let before = disc_ref
                .filter(|_| cfg.verify_isolation)
                .map(|d| checksum(d.parameters()));
            let report = match f_step(
                &batch,
                &mut extractor,
                disc_ref,
                &settings,
                &mut opt_f,
                &mut rng_f,
            ) {
                Err(Error::Degenerate(_)) | Err(Error::NonFinite { .. }) => {
                    return Err(nonfinite(last_good))
                }
                other => other?,
            };
            if let (Some(h), Some((d, _))) = (before, disc_state.as_ref()) {
                audit.f_steps_checked += 1;
                if checksum(d.parameters()) != h {
                    audit.violations += 1;
                }
            }
            if !extractor.parameters().iter().all(|p| p.value.is_finite()) {
                return Err(nonfinite(last_good));
            }
            log.push(LogRecord {
                iteration,
                epoch,
                phase: StepKind::Extractor,
                l_emb: Some(report.l_emb),
                l_reg: report.l_reg,
                l_atl: Some(report.l_atl),
                l_cam: report.l_cam,
                l_acn: Some(report.l_acn),
                lr_f,
                lr_d: adversarial.then_some(lr_d),
            });
            log.diagnostics.push(DiagnosticRecord {
                step: iteration,
                loss: report.l_atl,
                mean_theta_ap: report.diagnostics.mean_theta_ap,
                mean_theta_an: report.diagnostics.mean_theta_an,
                active_fraction: report.diagnostics.active_fraction,
            });
            last_good = Some(iteration);
            iteration += 1;
        }
        log::debug!(
            "epoch {epoch}: last loss {:?}",
            log.last(StepKind::Extractor).and_then(|r| r.l_acn)
        );
    }

    Ok(TrainOutcome {
        extractor,
        discriminator: disc_state.map(|(d, _)| d),
        log,
        audit,
    })
}
