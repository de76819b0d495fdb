//! Training and evaluation through the public entry points.

use std::path::Path;

use angleforge::adversarial::{train, ModelConfig, StepKind, TrainMode, TrainerConfig};
use angleforge::autodiff::Tensor;
use angleforge::data::{gen_synthetic, LabeledDataset, Split, SyntheticSpec};
use angleforge::experiment::{evaluate_extractor, DatasetConfig, EvalConfig};
use angleforge::losses::{LossConfig, Metric};
use angleforge::Error;

fn small_spec() -> SyntheticSpec {
    SyntheticSpec {
        num_identities: 8,
        num_test_identities: 6,
        num_cameras: 3,
        samples_per_identity_per_camera: 2,
        input_dim: 8,
        camera_nuisance_strength: 0.5,
        noise_sigma: 0.05,
        query_fraction: 0.25,
        seed: 3,
    }
}

fn small_trainer(mode: TrainMode) -> TrainerConfig {
    TrainerConfig {
        mode,
        p: 4,
        k_per_id: 3,
        epochs: 3,
        milestones: vec![2],
        d_steps_per_f_step: 2,
        extractor_lr: 3e-3,
        discriminator_lr: 4.5e-3,
        verify_isolation: true,
        ..TrainerConfig::default()
    }
}

fn model() -> ModelConfig {
    ModelConfig {
        hidden: vec![12],
        embedding_dim: 4,
        dropout: 0.0,
    }
}

#[test]
fn every_mode_trains_and_alternates() {
    let ds = gen_synthetic(&small_spec()).unwrap();
    for mode in [
        TrainMode::BaselineL2,
        TrainMode::Atl,
        TrainMode::AcnL2,
        TrainMode::AcnAtl,
    ] {
        let loss = if mode.default_loss() == angleforge::losses::EmbeddingLoss::Euclidean {
            LossConfig::euclidean()
        } else {
            LossConfig::angular()
        };
        let out = train(&ds, &model(), &loss, &small_trainer(mode)).unwrap();
        // 8 train ids / P=4 -> 2 iterations per epoch
        assert_eq!(out.log.count(StepKind::Extractor), 6, "{mode:?}");
        assert_eq!(out.discriminator.is_some(), mode.is_adversarial());
        if mode.is_adversarial() {
            assert_eq!(out.log.count(StepKind::Discriminator), 12);
            assert!(out.log.follows_alternation(2));
            assert_eq!(out.audit.violations, 0);
            assert_eq!(out.audit.d_steps_checked, 12);
            assert_eq!(out.audit.f_steps_checked, 6);
        } else {
            assert_eq!(out.log.count(StepKind::Discriminator), 0);
        }
        assert!(out
            .log
            .records
            .iter()
            .all(|r| r.l_acn.is_none_or(f64::is_finite)));
        assert_eq!(out.log.diagnostics.len(), 6);
    }
}

#[test]
fn adversarial_modes_need_two_cameras() {
    let ds = gen_synthetic(&SyntheticSpec {
        num_cameras: 1,
        samples_per_identity_per_camera: 4,
        ..small_spec()
    })
    .unwrap();
    let r = train(
        &ds,
        &model(),
        &LossConfig::angular(),
        &small_trainer(TrainMode::AcnAtl),
    );
    assert!(matches!(r, Err(Error::Config(_))));
    train(
        &ds,
        &model(),
        &LossConfig::angular(),
        &small_trainer(TrainMode::Atl),
    )
    .unwrap();
}

#[test]
fn divergence_reports_last_good_iteration() {
    let ds = gen_synthetic(&small_spec()).unwrap();
    let cfg = TrainerConfig {
        extractor_lr: 1e300,
        epochs: 5,
        milestones: vec![],
        ..small_trainer(TrainMode::BaselineL2)
    };
    match train(&ds, &model(), &LossConfig::euclidean(), &cfg) {
        Err(Error::NonFinite {
            iteration,
            last_good,
        }) => {
            assert!(iteration >= 1);
            assert_eq!(last_good, Some(iteration - 1));
        }
        other => panic!("expected a numeric failure, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn training_only_reads_the_train_split() {
    let ds = gen_synthetic(&small_spec()).unwrap();
    let mut poisoned = ds.clone();
    let dim = ds.input_dim();
    for i in ds
        .indices(Split::Query)
        .into_iter()
        .chain(ds.indices(Split::Gallery))
    {
        poisoned.inputs.data_mut()[i * dim..(i + 1) * dim].fill(1e6);
    }
    let cfg = small_trainer(TrainMode::AcnAtl);
    let a = train(&ds, &model(), &LossConfig::angular(), &cfg).unwrap();
    let b = train(&poisoned, &model(), &LossConfig::angular(), &cfg).unwrap();
    assert_eq!(a.log, b.log);
}

/// Mean over queries of the share of admissible gallery items that match.
fn chance_rank1(ds: &LabeledDataset, exclude_same_camera: bool) -> f64 {
    let q = ds.indices(Split::Query);
    let g = ds.indices(Split::Gallery);
    let mut total = 0.0;
    for &i in &q {
        let admissible: Vec<usize> = g
            .iter()
            .copied()
            .filter(|&j| {
                !(exclude_same_camera
                    && ds.person_ids[j] == ds.person_ids[i]
                    && ds.camera_ids[j] == ds.camera_ids[i])
            })
            .collect();
        let hits = admissible
            .iter()
            .filter(|&&j| ds.person_ids[j] == ds.person_ids[i])
            .count();
        total += hits as f64 / admissible.len() as f64;
    }
    total / q.len() as f64
}

#[test]
fn untrained_extractor_is_near_chance_under_strong_nuisance() {
    let ds = DatasetConfig::synthetic_preset("strong-nuisance")
        .load(None, Path::new("."))
        .unwrap();
    let chance = chance_rank1(&ds, true);
    assert!((chance - 0.0151).abs() < 1e-3, "{chance}");
    let eval = EvalConfig {
        probe: false,
        ..EvalConfig::default()
    };
    for seed in 0..3 {
        let f = ModelConfig::default().build(ds.input_dim(), seed).unwrap();
        let (r, _) = evaluate_extractor(&f, &ds, &eval, Metric::Angular).unwrap();
        assert!(r.rank1() <= chance + 0.05, "seed {seed}: {}", r.rank1());
    }
}

#[test]
fn evaluation_rejects_mismatched_extractor() {
    let ds = gen_synthetic(&small_spec()).unwrap();
    let f = model().build(ds.input_dim() + 1, 0).unwrap();
    let r = evaluate_extractor(&f, &ds, &EvalConfig::default(), Metric::Angular);
    assert!(matches!(r, Err(Error::Dimension { .. })));
}

#[test]
fn probe_reports_camera_leakage_of_raw_inputs() {
    let ds = gen_synthetic(&SyntheticSpec::strong_nuisance()).unwrap();
    let identity =
        angleforge::nn::MlpExtractor::new(&[32, 32], 0.0, &mut angleforge::rng::seeded(0, 0))
            .unwrap();
    // overwrite with the identity map so the probe sees the inputs themselves
    let mut f = identity;
    for p in f.parameters_mut() {
        p.value = if p.value.shape().len() == 2 {
            Tensor::identity(32)
        } else {
            Tensor::zeros(p.value.shape())
        };
    }
    let (r, emb) = evaluate_extractor(&f, &ds, &EvalConfig::default(), Metric::Angular).unwrap();
    assert_eq!(
        emb.len(),
        ds.indices(Split::Query).len() + ds.indices(Split::Gallery).len()
    );
    assert!(r.probe_accuracy.unwrap() > 0.9, "{r:?}");
    assert_eq!(r.chance_level, Some(0.25));
}
