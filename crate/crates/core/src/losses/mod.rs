//! Distance matrices, PK batch sampling, batch-hard mining and the triplet
//! loss family.

mod distance;
mod mining;
mod sampler;
mod triplet;

pub use distance::{
    cosine_matrix, cross_distances, distance_matrix, normalize_rows, pairwise_angular,
    pairwise_euclidean, Metric,
};
pub use mining::{batch_hard_mine, random_mine, Mining, Triplet, TripletSet};
pub use sampler::{pk_sample, IdentityIndex, PkSampler};
pub use triplet::{
    atl_emb, atl_total, mine_and_score, norm_regularizer, score, triplet_cos_margin,
    triplet_cosine, triplet_l2, AngleDiagnostics, AtlParts, EmbeddingLoss, EmbeddingParts,
    LossConfig, LossTerm,
};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Feature vectors with their person and camera labels.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBatch {
    pub features: Tensor,
    pub person_ids: Vec<usize>,
    pub camera_ids: Vec<usize>,
}

impl FeatureBatch {
    pub fn new(features: Tensor, person_ids: Vec<usize>, camera_ids: Vec<usize>) -> Result<Self> {
        let n = features.rows();
        if features.shape().len() != 2 || person_ids.len() != n || camera_ids.len() != n {
            return Err(Error::Dimension {
                op: "feature batch",
                left: features.shape().to_vec(),
                right: vec![person_ids.len(), camera_ids.len()],
            });
        }
        Ok(Self {
            features,
            person_ids,
            camera_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.person_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.person_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }
}
