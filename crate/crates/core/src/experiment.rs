//! End-to-end experiments: a JSON-described dataset, model, loss, trainer and
//! evaluation protocol, run as one unit.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adversarial::{train, ModelConfig, TrainOutcome, TrainerConfig};
use crate::data::{
    gen_synthetic, hold_out_samples, read_idx_files, read_manifest, split_query_gallery,
    LabeledDataset, Split, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::eval::{camera_probe_grouped, evaluate, EvalReport, ProbeConfig, Protocol};
use crate::losses::{EmbeddingLoss, FeatureBatch, LossConfig, Metric};
use crate::nn::MlpExtractor;
use crate::rng::{seeded, stream};

/// Where the samples of an experiment come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// A named preset, a full spec, or a preset with the spec's fields
    /// taken from `spec` when both are given.
    Synthetic {
        #[serde(default)]
        preset: Option<String>,
        #[serde(default)]
        spec: Option<SyntheticSpec>,
    },
    /// A pair of IDX files. Every class is both trained and tested on, so a
    /// share of each class's samples is held out before the query/gallery
    /// split.
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        limit: Option<usize>,
        #[serde(default = "default_holdout")]
        holdout_fraction: f64,
        #[serde(default = "default_query_fraction")]
        query_fraction: f64,
    },
    /// A CSV manifest with split tags already assigned.
    Manifest { path: PathBuf },
}

fn default_holdout() -> f64 {
    0.2
}
fn default_query_fraction() -> f64 {
    0.25
}

impl DatasetConfig {
    pub fn synthetic_preset(name: &str) -> Self {
        DatasetConfig::Synthetic {
            preset: Some(name.to_string()),
            spec: None,
        }
    }

    /// The synthetic spec this block describes, if it is synthetic.
    pub fn synthetic_spec(&self) -> Result<Option<SyntheticSpec>> {
        let DatasetConfig::Synthetic { preset, spec } = self else {
            return Ok(None);
        };
        match (preset, spec) {
            (_, Some(s)) => Ok(Some(s.clone())),
            (Some(p), None) => SyntheticSpec::preset(p).map(Some).ok_or_else(|| {
                Error::Config(format!(
                    "unknown synthetic preset {p:?}; known: {:?}",
                    SyntheticSpec::PRESETS
                ))
            }),
            (None, None) => Err(Error::Config(
                "synthetic dataset needs a preset or a spec".into(),
            )),
        }
    }

    /// Builds the dataset. `seed` replaces the synthetic seed and seeds the
    /// IDX hold-out split; relative paths resolve against `base`.
    pub fn load(&self, seed: Option<u64>, base: &Path) -> Result<LabeledDataset> {
        match self {
            DatasetConfig::Synthetic { .. } => {
                let mut spec = self.synthetic_spec()?.expect("synthetic block");
                if let Some(s) = seed {
                    spec.seed = s;
                }
                gen_synthetic(&spec)
            }
            DatasetConfig::Idx {
                images,
                labels,
                limit,
                holdout_fraction,
                query_fraction,
            } => {
                let mut ds = read_idx_files(&base.join(images), &base.join(labels))?;
                if let Some(n) = *limit {
                    let keep: Vec<usize> = (0..ds.len().min(n)).collect();
                    ds = subset(&ds, &keep)?;
                }
                let seed = seed.unwrap_or(0);
                let ds =
                    hold_out_samples(&ds, *holdout_fraction, &mut seeded(seed, stream::HOLDOUT))?;
                split_query_gallery(&ds, *query_fraction, &mut seeded(seed, stream::SPLIT))
            }
            DatasetConfig::Manifest { path } => {
                read_manifest(&std::fs::read_to_string(base.join(path))?)
            }
        }
    }
}

fn subset(ds: &LabeledDataset, keep: &[usize]) -> Result<LabeledDataset> {
    LabeledDataset::new(
        ds.inputs.select_rows(keep),
        keep.iter().map(|&i| ds.person_ids[i]).collect(),
        keep.iter().map(|&i| ds.camera_ids[i]).collect(),
        keep.iter().map(|&i| ds.splits[i]).collect(),
        ds.image_shape,
    )
}

/// Retrieval protocol and camera probe settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Defaults to the metric the training loss mines with.
    pub metric: Option<Metric>,
    pub exclude_same_camera: bool,
    /// Train the camera probe on test-side embeddings (multi-camera only).
    pub probe: bool,
    /// Keep each identity wholly on one side of the probe's split.
    pub probe_split_by_identity: bool,
    pub probe_config: ProbeConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            metric: None,
            exclude_same_camera: true,
            probe: true,
            probe_split_by_identity: false,
            probe_config: ProbeConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelConfig,
    /// Defaults to the settings of the mode's embedding loss.
    #[serde(default)]
    pub loss: Option<LossConfig>,
    #[serde(default)]
    pub trainer: TrainerConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Replaces the trainer seed and the dataset seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("invalid experiment config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset
            .synthetic_spec()?
            .map(|s| s.validate())
            .transpose()?;
        if self.model.embedding_dim == 0 || self.model.hidden.contains(&0) {
            return Err(Error::Config("layer widths must be >= 1".into()));
        }
        self.trainer.validate()?;
        self.loss().validate()
    }

    /// The loss block, or the defaults for the configured embedding loss.
    pub fn loss(&self) -> LossConfig {
        self.loss.unwrap_or(match self.trainer.loss_kind() {
            EmbeddingLoss::Euclidean => LossConfig::euclidean(),
            _ => LossConfig::angular(),
        })
    }

    pub fn metric(&self) -> Metric {
        self.eval
            .metric
            .unwrap_or(self.trainer.loss_kind().mining_metric())
    }

    /// Applies `seed` (or the config's own) to the trainer and fills in the
    /// loss defaults, so the result describes the run completely.
    pub fn resolved(&self, seed: Option<u64>) -> Self {
        let mut cfg = self.clone();
        cfg.seed = seed.or(self.seed);
        if let Some(s) = cfg.seed {
            cfg.trainer.seed = s;
        }
        cfg.loss = Some(self.loss());
        cfg.eval.metric = Some(self.metric());
        cfg
    }
}

/// Everything an experiment produced.
pub struct ExperimentOutcome {
    pub dataset: LabeledDataset,
    pub training: TrainOutcome,
    pub report: EvalReport,
    /// Query then gallery embeddings.
    pub embeddings: FeatureBatch,
}

/// Embeds the query and gallery splits and evaluates retrieval, plus the
/// camera probe when enabled and the data has several cameras.
pub fn evaluate_extractor(
    extractor: &MlpExtractor,
    dataset: &LabeledDataset,
    cfg: &EvalConfig,
    metric: Metric,
) -> Result<(EvalReport, FeatureBatch)> {
    if extractor.input_dim() != dataset.input_dim() {
        return Err(Error::Dimension {
            op: "evaluate extractor",
            left: vec![extractor.input_dim()],
            right: vec![dataset.input_dim()],
        });
    }
    dataset.check_query_gallery()?;
    let embed = |split| -> Result<FeatureBatch> {
        let b = dataset.split_batch(split);
        FeatureBatch::new(extractor.embed(&b.features)?, b.person_ids, b.camera_ids)
    };
    let query = embed(Split::Query)?;
    let gallery = embed(Split::Gallery)?;
    let protocol = Protocol {
        exclude_same_camera: cfg.exclude_same_camera,
    };
    let mut report = evaluate(&query, &gallery, metric, protocol)?;
    let all = concat(&query, &gallery)?;
    if cfg.probe && dataset.num_cameras() >= 2 {
        let groups = cfg
            .probe_split_by_identity
            .then_some(all.person_ids.as_slice());
        let probe_cfg = ProbeConfig {
            split_by_group: cfg.probe_split_by_identity,
            ..cfg.probe_config.clone()
        };
        let probe = camera_probe_grouped(&all.features, &all.camera_ids, groups, &probe_cfg)?;
        report.probe_accuracy = Some(probe.accuracy);
        report.chance_level = Some(probe.chance_level);
    }
    Ok((report, all))
}

fn concat(a: &FeatureBatch, b: &FeatureBatch) -> Result<FeatureBatch> {
    let mut data = a.features.data().to_vec();
    data.extend_from_slice(b.features.data());
    let features = crate::autodiff::Tensor::matrix(a.len() + b.len(), a.dim(), data)?;
    let mut pids = a.person_ids.clone();
    pids.extend(&b.person_ids);
    let mut cams = a.camera_ids.clone();
    cams.extend(&b.camera_ids);
    FeatureBatch::new(features, pids, cams)
}

/// Loads the data, trains and evaluates. Relative dataset paths resolve
/// against `base`.
pub fn run_experiment(cfg: &ExperimentConfig, base: &Path) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let cfg = cfg.resolved(None);
    let dataset = cfg.dataset.load(cfg.seed, base)?;
    dataset
        .check_identity_disjoint()
        .or_else(|e| match cfg.dataset {
            // closed-set digit data shares classes by construction
            DatasetConfig::Idx { .. } => Ok(()),
            _ => Err(e),
        })?;
    let training = train(&dataset, &cfg.model, &cfg.loss(), &cfg.trainer)?;
    let (report, embeddings) =
        evaluate_extractor(&training.extractor, &dataset, &cfg.eval, cfg.metric())?;
    Ok(ExperimentOutcome {
        dataset,
        training,
        report,
        embeddings,
    })
}
