//! Synthetic identities observed through camera-specific affine distortions.
//!
//! Each identity owns a prototype drawn uniformly on the unit sphere. Camera
//! `c` applies `x -> x + s·(A_c x + b_c)` where `s` is the nuisance strength,
//! `A_c` has i.i.d. `N(0, 0.25 / dim)` entries and `b_c` is a random direction
//! of length 2. Isotropic Gaussian noise is added on top. `A_c` and `b_c` are
//! drawn from a stream keyed by `(seed, c)` alone, so the distortion of a
//! camera never depends on which identities it observes.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{split_query_gallery, LabeledDataset, Split};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::{seeded, stream, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    /// Identities in the training split.
    pub num_identities: usize,
    /// Identities in the test split, disjoint from the training ones.
    pub num_test_identities: usize,
    pub num_cameras: usize,
    pub samples_per_identity_per_camera: usize,
    pub input_dim: usize,
    pub camera_nuisance_strength: f64,
    pub noise_sigma: f64,
    /// Fraction of each test identity's samples used as queries.
    #[serde(default = "default_query_fraction")]
    pub query_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_query_fraction() -> f64 {
    0.25
}

impl SyntheticSpec {
    /// 50 + 50 identities, 4 cameras, 20 samples per identity, 32 dims,
    /// nuisance 0.3, noise 0.05.
    pub fn standard() -> Self {
        Self {
            num_identities: 50,
            num_test_identities: 50,
            num_cameras: 4,
            samples_per_identity_per_camera: 5,
            input_dim: 32,
            camera_nuisance_strength: 0.3,
            noise_sigma: 0.05,
            query_fraction: default_query_fraction(),
            seed: 0,
        }
    }

    /// The standard preset with nuisance strength 1.0.
    pub fn strong_nuisance() -> Self {
        Self {
            camera_nuisance_strength: 1.0,
            ..Self::standard()
        }
    }

    /// The standard preset without nuisance or noise: every sample of an
    /// identity equals its prototype.
    pub fn zero_nuisance() -> Self {
        Self {
            camera_nuisance_strength: 0.0,
            noise_sigma: 0.0,
            ..Self::standard()
        }
    }

    /// Six cameras, about 24 samples per identity.
    pub fn market_like() -> Self {
        Self {
            num_cameras: 6,
            samples_per_identity_per_camera: 4,
            ..Self::standard()
        }
    }

    /// Eight cameras, about 24 samples per identity.
    pub fn duke_like() -> Self {
        Self {
            num_cameras: 8,
            samples_per_identity_per_camera: 3,
            ..Self::standard()
        }
    }

    /// Ten cameras, one sample per camera.
    pub fn cuhk_like() -> Self {
        Self {
            num_cameras: 10,
            samples_per_identity_per_camera: 1,
            ..Self::standard()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        Some(match name {
            "standard" => Self::standard(),
            "strong-nuisance" => Self::strong_nuisance(),
            "zero-nuisance" => Self::zero_nuisance(),
            "market-like" => Self::market_like(),
            "duke-like" => Self::duke_like(),
            "cuhk-like" => Self::cuhk_like(),
            _ => return None,
        })
    }

    pub const PRESETS: [&'static str; 6] = [
        "standard",
        "strong-nuisance",
        "zero-nuisance",
        "market-like",
        "duke-like",
        "cuhk-like",
    ];

    pub fn validate(&self) -> Result<()> {
        if self.num_identities == 0
            || self.num_test_identities == 0
            || self.num_cameras == 0
            || self.samples_per_identity_per_camera == 0
            || self.input_dim == 0
        {
            return Err(Error::Config(format!(
                "all synthetic counts must be >= 1: {self:?}"
            )));
        }
        if self.num_cameras * self.samples_per_identity_per_camera < 2 {
            return Err(Error::Config(
                "each test identity needs at least 2 samples".into(),
            ));
        }
        if !(self.camera_nuisance_strength >= 0.0) || !(self.noise_sigma >= 0.0) {
            return Err(Error::Config(
                "nuisance strength and noise sigma must be >= 0".into(),
            ));
        }
        if !(self.query_fraction > 0.0 && self.query_fraction < 1.0) {
            return Err(Error::Config(format!(
                "query_fraction must lie in (0, 1), got {}",
                self.query_fraction
            )));
        }
        Ok(())
    }
}

/// Affine distortion of one camera.
pub(crate) struct CameraNuisance {
    matrix: Vec<f64>,
    offset: Vec<f64>,
}

impl CameraNuisance {
    pub(crate) fn draw(seed: u64, camera: usize, dim: usize) -> Self {
        let mut rng = seeded(seed, stream::CAMERA_BASE + camera as u64);
        let scale = 0.5 / (dim as f64).sqrt();
        let matrix = (0..dim * dim)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let offset = unit_vector(&mut rng, dim)
            .into_iter()
            .map(|v| 2.0 * v)
            .collect();
        Self { matrix, offset }
    }

    fn apply(&self, x: &[f64], strength: f64) -> Vec<f64> {
        let d = x.len();
        (0..d)
            .map(|i| {
                let ax: f64 = (0..d).map(|j| self.matrix[i * d + j] * x[j]).sum();
                x[i] + strength * (ax + self.offset[i])
            })
            .collect()
    }
}

fn unit_vector(rng: &mut Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Generates the dataset described by `spec`, with test identities already
/// split into query and gallery. Deterministic given `spec.seed`.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    let dim = spec.input_dim;
    let total_ids = spec.num_identities + spec.num_test_identities;
    let mut proto_rng = seeded(spec.seed, stream::PROTOTYPES);
    let prototypes: Vec<Vec<f64>> = (0..total_ids)
        .map(|_| unit_vector(&mut proto_rng, dim))
        .collect();
    let cameras: Vec<CameraNuisance> = (0..spec.num_cameras)
        .map(|c| CameraNuisance::draw(spec.seed, c, dim))
        .collect();

    let mut noise_rng = seeded(spec.seed, stream::NOISE);
    let per_id = spec.num_cameras * spec.samples_per_identity_per_camera;
    let mut data = Vec::with_capacity(total_ids * per_id * dim);
    let mut person_ids = Vec::with_capacity(total_ids * per_id);
    let mut camera_ids = Vec::with_capacity(total_ids * per_id);
    let mut splits = Vec::with_capacity(total_ids * per_id);
    for (id, proto) in prototypes.iter().enumerate() {
        for (c, cam) in cameras.iter().enumerate() {
            let clean = cam.apply(proto, spec.camera_nuisance_strength);
            for _ in 0..spec.samples_per_identity_per_camera {
                for v in &clean {
                    let noise = if spec.noise_sigma > 0.0 {
                        spec.noise_sigma * noise_rng.sample::<f64, _>(StandardNormal)
                    } else {
                        0.0
                    };
                    data.push(v + noise);
                }
                person_ids.push(id);
                camera_ids.push(c);
                splits.push(if id < spec.num_identities {
                    Split::Train
                } else {
                    Split::Test
                });
            }
        }
    }
    let n = person_ids.len();
    let ds = LabeledDataset::new(
        Tensor::matrix(n, dim, data)?,
        person_ids,
        camera_ids,
        splits,
        None,
    )?;
    let mut split_rng = seeded(spec.seed, stream::SPLIT);
    let ds = split_query_gallery(&ds, spec.query_fraction, &mut split_rng)?;
    ds.check_identity_disjoint()?;
    Ok(ds)
}
