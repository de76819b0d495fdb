//! Finite-difference verification of every loss gradient.
//!
//! Each case is checked on random batches with triplets mined once at the
//! sample point and then held fixed, so the function under test is smooth
//! except at hinge boundaries. Samples whose hinge arguments lie within
//! `kink_margin` of zero are redrawn rather than counted.

use std::time::{Duration, Instant};

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::adversarial::camera_loss;
use crate::autodiff::{gradcheck, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::losses::{
    atl_emb, atl_total, batch_hard_mine, distance_matrix, normalize_rows, triplet_cos_margin,
    triplet_cosine, triplet_l2, LossConfig, Metric, TripletSet,
};
use crate::rng::{seeded, stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub seeds: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Minimum distance of every hinge argument from zero.
    pub kink_margin: f64,
    pub identities: usize,
    pub per_identity: usize,
    pub dim: usize,
    pub cameras: usize,
    pub loss: LossConfig,
    pub seed: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            seeds: 20,
            step: 1e-4,
            tolerance: 1e-4,
            kink_margin: 1e-2,
            identities: 4,
            per_identity: 3,
            dim: 5,
            cameras: 3,
            loss: LossConfig::angular(),
            seed: 0,
        }
    }
}

/// One random point at which gradients are compared.
#[derive(Clone, Debug)]
pub struct GradSample {
    pub features: Tensor,
    pub person_ids: Vec<usize>,
    pub camera_ids: Vec<usize>,
    /// Mined with the metric of the case being checked.
    pub triplets: TripletSet,
    /// Fixed linear camera head, `[dim × cameras]`.
    pub head: Tensor,
}

pub type LossFn = fn(&mut Tape, Var, &GradSample, &LossConfig) -> Result<Var>;
/// Smallest absolute hinge argument at the sample; `None` for smooth losses.
pub type KinkFn = fn(&GradSample, &LossConfig) -> Option<f64>;

#[derive(Clone, Copy)]
pub struct LossCase {
    pub name: &'static str,
    pub mining: Metric,
    pub loss: LossFn,
    pub kink: KinkFn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub name: String,
    pub max_error: f64,
    pub samples: usize,
    /// Candidate points discarded for lying near a kink.
    pub rejected: usize,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub rows: Vec<LossReport>,
    pub elapsed: Duration,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.rows
            .iter()
            .filter(|r| !r.passed)
            .map(|r| r.name.as_str())
            .collect()
    }

    /// Fixed-width table, one row per loss.
    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<8} {:>12} {:>8} {:>9}  status\n",
            "loss", "max_rel_err", "samples", "rejected"
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{:<8} {:>12.3e} {:>8} {:>9}  {}\n",
                r.name,
                r.max_error,
                r.samples,
                r.rejected,
                if r.passed { "PASS" } else { "FAIL" }
            ));
        }
        s
    }
}

fn angle(a: &[f64], b: &[f64], eps: f64) -> f64 {
    cosine(a, b).max(eps - 1.0).min(1.0 - eps).acos()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn min_hinge(s: &GradSample, arg: impl Fn(&[f64], &[f64], &[f64]) -> f64) -> Option<f64> {
    s.triplets
        .iter()
        .map(|t| {
            let f = &s.features;
            arg(f.row(t.anchor), f.row(t.positive), f.row(t.negative)).abs()
        })
        .reduce(f64::min)
}

fn angular_kink(s: &GradSample, c: &LossConfig) -> Option<f64> {
    min_hinge(s, |a, p, n| {
        angle(a, p, c.epsilon) - angle(a, n, c.epsilon) + c.angular_margin
    })
}

fn camera_term(tape: &mut Tape, x: Var, s: &GradSample, c: &LossConfig) -> Result<Var> {
    let u = normalize_rows(tape, x)?;
    let w = tape.constant(s.head.clone());
    let logits = tape.matmul(u, w)?;
    camera_loss(tape, logits, &s.camera_ids, c.smoothing)
}

fn l_ori(tape: &mut Tape, x: Var, s: &GradSample, c: &LossConfig) -> Result<Var> {
    Ok(triplet_l2(tape, x, &s.triplets, c.euclidean_margin)?.loss)
}

fn l_cosine(tape: &mut Tape, x: Var, s: &GradSample, c: &LossConfig) -> Result<Var> {
    Ok(triplet_cosine(tape, x, &s.triplets, c.angular_margin)?.loss)
}

fn l_cos_margin(tape: &mut Tape, x: Var, s: &GradSample, c: &LossConfig) -> Result<Var> {
    Ok(triplet_cos_margin(tape, x, &s.triplets, c.angular_margin, c.epsilon)?.loss)
}

fn l_emb(tape: &mut Tape, x: Var, s: &GradSample, c: &LossConfig) -> Result<Var> {
    Ok(atl_emb(tape, x, &s.triplets, c.angular_margin, c.epsilon)?.loss)
}

fn l_atl(tape: &mut Tape, x: Var, s: &GradSample, c: &LossConfig) -> Result<Var> {
    Ok(atl_total(tape, x, &s.triplets, c)?.total)
}

fn l_acn(tape: &mut Tape, x: Var, s: &GradSample, c: &LossConfig) -> Result<Var> {
    let atl = atl_total(tape, x, &s.triplets, c)?.total;
    let cam = camera_term(tape, x, s, c)?;
    let cam = tape.scale(cam, -c.cam_weight);
    tape.add(atl, cam)
}

/// The seven losses: Euclidean, cosine, cosine-with-angular-margin, angular
/// embedding, angular with regularizer, camera, and the adversarial sum.
pub fn standard_cases() -> Vec<LossCase> {
    vec![
        LossCase {
            name: "L_ori",
            mining: Metric::Euclidean,
            loss: l_ori,
            kink: |s, c| {
                min_hinge(s, |a, p, n| {
                    euclid(a, p) - euclid(a, n) + c.euclidean_margin
                })
            },
        },
        LossCase {
            name: "L1",
            mining: Metric::Angular,
            loss: l_cosine,
            kink: |s, c| min_hinge(s, |a, p, n| cosine(a, n) - cosine(a, p) + c.angular_margin),
        },
        LossCase {
            name: "L2",
            mining: Metric::Angular,
            loss: l_cos_margin,
            kink: |s, c| {
                min_hinge(s, |a, p, n| {
                    cosine(a, n) - (angle(a, p, c.epsilon) + c.angular_margin).cos()
                })
            },
        },
        LossCase {
            name: "L_emb",
            mining: Metric::Angular,
            loss: l_emb,
            kink: angular_kink,
        },
        LossCase {
            name: "L_atl",
            mining: Metric::Angular,
            loss: l_atl,
            kink: angular_kink,
        },
        LossCase {
            name: "L_cam",
            mining: Metric::Angular,
            loss: camera_term,
            kink: |_, _| None,
        },
        LossCase {
            name: "L_acn",
            mining: Metric::Angular,
            loss: l_acn,
            kink: angular_kink,
        },
    ]
}

/// Draws one sample from `rng`: Gaussian features, `P×K` identity layout,
/// cycling camera ids and a Gaussian camera head.
pub fn draw_sample(
    cfg: &SuiteConfig,
    mining: Metric,
    rng: &mut crate::rng::Rng,
) -> Result<GradSample> {
    let b = cfg.identities * cfg.per_identity;
    let data: Vec<f64> = (0..b * cfg.dim)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    let features = Tensor::matrix(b, cfg.dim, data)?;
    let person_ids: Vec<usize> = (0..b).map(|i| i / cfg.per_identity).collect();
    let camera_ids: Vec<usize> = (0..b).map(|i| i % cfg.cameras).collect();
    let head_data: Vec<f64> = (0..cfg.dim * cfg.cameras)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    let head = Tensor::matrix(cfg.dim, cfg.cameras, head_data)?;
    let dist = distance_matrix(&features, mining, cfg.loss.epsilon)?;
    let triplets = batch_hard_mine(&dist, &person_ids)?;
    Ok(GradSample {
        features,
        person_ids,
        camera_ids,
        triplets,
        head,
    })
}

/// Checks one case on `cfg.seeds` accepted samples.
pub fn check_case(case: &LossCase, cfg: &SuiteConfig) -> Result<LossReport> {
    const MAX_ATTEMPTS: usize = 1000;
    let mut max_error: f64 = 0.0;
    let mut rejected = 0;
    for s in 0..cfg.seeds {
        let mut rng = seeded(cfg.seed.wrapping_add(s as u64), stream::GRADSUITE);
        let sample = loop {
            let sample = draw_sample(cfg, case.mining, &mut rng)?;
            match (case.kink)(&sample, &cfg.loss) {
                Some(m) if m < cfg.kink_margin => {
                    rejected += 1;
                    if rejected > MAX_ATTEMPTS {
                        return Err(Error::Usage(format!(
                            "{}: no kink-free sample in {MAX_ATTEMPTS} draws",
                            case.name
                        )));
                    }
                }
                _ => break sample,
            }
        };
        let err = gradcheck(
            |tape, x| (case.loss)(tape, x, &sample, &cfg.loss),
            &sample.features,
            cfg.step,
        )?;
        max_error = max_error.max(if err.is_nan() { f64::INFINITY } else { err });
    }
    Ok(LossReport {
        name: case.name.to_string(),
        max_error,
        samples: cfg.seeds,
        rejected,
        passed: max_error < cfg.tolerance,
    })
}

pub fn run_cases(cases: &[LossCase], cfg: &SuiteConfig) -> Result<SuiteReport> {
    let start = Instant::now();
    let rows = cases
        .iter()
        .map(|c| check_case(c, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(SuiteReport {
        rows,
        elapsed: start.elapsed(),
    })
}

/// Runs [`standard_cases`].
pub fn run_suite(cfg: &SuiteConfig) -> Result<SuiteReport> {
    run_cases(&standard_cases(), cfg)
}
