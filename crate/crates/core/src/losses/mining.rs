use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// How triplets are chosen from a batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mining {
    #[default]
    BatchHard,
    /// A uniformly random positive and negative per anchor. Used for the
    /// low-dimensional digit demo, where hard mining collapses the embedding.
    Random,
}

/// Indices of one (anchor, positive, negative) triplet within a batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

/// One mined triplet per batch element.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TripletSet {
    triplets: Vec<Triplet>,
}

impl TripletSet {
    /// Validates the triplets against the batch labels.
    pub fn new(triplets: Vec<Triplet>, person_ids: &[usize]) -> Result<Self> {
        for t in &triplets {
            let b = person_ids.len();
            if t.anchor >= b || t.positive >= b || t.negative >= b {
                return Err(Error::BatchComposition(format!(
                    "triplet {t:?} indexes past batch of {b}"
                )));
            }
            if t.anchor == t.positive || person_ids[t.anchor] != person_ids[t.positive] {
                return Err(Error::BatchComposition(format!(
                    "triplet {t:?} has an invalid positive"
                )));
            }
            if person_ids[t.anchor] == person_ids[t.negative] {
                return Err(Error::BatchComposition(format!(
                    "triplet {t:?} has an invalid negative"
                )));
            }
        }
        Ok(Self { triplets })
    }

    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Triplet> {
        self.triplets.iter()
    }

    pub fn as_slice(&self) -> &[Triplet] {
        &self.triplets
    }

    /// Flat row-major indices of `(anchor, positive)` in a `batch×batch` matrix.
    pub fn positive_pairs(&self, batch: usize) -> Vec<usize> {
        self.triplets
            .iter()
            .map(|t| t.anchor * batch + t.positive)
            .collect()
    }

    /// Flat row-major indices of `(anchor, negative)` in a `batch×batch` matrix.
    pub fn negative_pairs(&self, batch: usize) -> Vec<usize> {
        self.triplets
            .iter()
            .map(|t| t.anchor * batch + t.negative)
            .collect()
    }
}

/// Batch-hard mining: for each anchor the farthest same-identity sample and
/// the nearest different-identity sample. Ties go to the lowest index.
pub fn batch_hard_mine(dist: &Tensor, person_ids: &[usize]) -> Result<TripletSet> {
    let b = person_ids.len();
    if dist.shape() != [b, b] {
        return Err(Error::Dimension {
            op: "batch_hard_mine",
            left: dist.shape().to_vec(),
            right: vec![b, b],
        });
    }
    let mut triplets = Vec::with_capacity(b);
    for a in 0..b {
        let row = dist.row(a);
        let mut pos: Option<usize> = None;
        let mut neg: Option<usize> = None;
        for j in 0..b {
            if person_ids[j] == person_ids[a] {
                if j != a && pos.is_none_or(|p| row[j] > row[p]) {
                    pos = Some(j);
                }
            } else if neg.is_none_or(|n| row[j] < row[n]) {
                neg = Some(j);
            }
        }
        match (pos, neg) {
            (Some(positive), Some(negative)) => triplets.push(Triplet {
                anchor: a,
                positive,
                negative,
            }),
            (None, _) => {
                return Err(Error::BatchComposition(format!(
                    "anchor {a} (person {}) has no positive in the batch",
                    person_ids[a]
                )))
            }
            (_, None) => {
                return Err(Error::BatchComposition(format!(
                    "anchor {a} (person {}) has no negative in the batch",
                    person_ids[a]
                )))
            }
        }
    }
    Ok(TripletSet { triplets })
}

/// One uniformly drawn positive and negative per anchor, anchors in order.
pub fn random_mine(person_ids: &[usize], rng: &mut Rng) -> Result<TripletSet> {
    let b = person_ids.len();
    let mut triplets = Vec::with_capacity(b);
    for a in 0..b {
        let pos: Vec<usize> = (0..b)
            .filter(|&j| j != a && person_ids[j] == person_ids[a])
            .collect();
        let neg: Vec<usize> = (0..b).filter(|&j| person_ids[j] != person_ids[a]).collect();
        let (Some(&positive), Some(&negative)) = (pos.choose(rng), neg.choose(rng)) else {
            return Err(Error::BatchComposition(format!(
                "anchor {a} (person {}) lacks a positive or a negative in the batch",
                person_ids[a]
            )));
        };
        triplets.push(Triplet {
            anchor: a,
            positive,
            negative,
        });
    }
    Ok(TripletSet { triplets })
}
