//! Datasets: the synthetic multi-camera generator, IDX ingestion,
//! augmentation, splitting and CSV manifests.

mod augment;
mod idx;
mod manifest;
mod split;
mod synthetic;

pub use augment::{augment_flip, flip_horizontal};
pub use idx::{
    encode_idx_images, encode_idx_labels, parse_idx_images, parse_idx_labels, read_idx,
    read_idx_files, IdxImages, IMAGES_MAGIC, LABELS_MAGIC,
};
pub use manifest::{read_manifest, write_manifest};
pub use split::{hold_out_samples, split_query_gallery};
pub use synthetic::{gen_synthetic, SyntheticSpec};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::losses::FeatureBatch;

/// Role of a sample in an experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    /// Held out but not yet assigned to query or gallery.
    Test,
    Query,
    Gallery,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Query => "query",
            Split::Gallery => "gallery",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "train" => Split::Train,
            "test" => Split::Test,
            "query" => Split::Query,
            "gallery" => Split::Gallery,
            _ => return None,
        })
    }

    pub fn is_test_side(self) -> bool {
        !matches!(self, Split::Train)
    }
}

/// Raw input vectors with person, camera and split labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    /// `[num_samples × input_dim]`.
    pub inputs: Tensor,
    pub person_ids: Vec<usize>,
    pub camera_ids: Vec<usize>,
    pub splits: Vec<Split>,
    /// `(width, height)` when the inputs are flattened single-channel images.
    pub image_shape: Option<(usize, usize)>,
}

/// Summary counts of a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub num_identities: usize,
    pub num_samples: usize,
    pub samples_per_identity: f64,
    pub num_cameras: usize,
    pub per_split: BTreeMap<String, usize>,
}

impl LabeledDataset {
    pub fn new(
        inputs: Tensor,
        person_ids: Vec<usize>,
        camera_ids: Vec<usize>,
        splits: Vec<Split>,
        image_shape: Option<(usize, usize)>,
    ) -> Result<Self> {
        let n = inputs.rows();
        if inputs.shape().len() != 2
            || person_ids.len() != n
            || camera_ids.len() != n
            || splits.len() != n
        {
            return Err(Error::Consistency(format!(
                "dataset columns disagree: inputs {:?}, {} person ids, {} camera ids, {} split tags",
                inputs.shape(),
                person_ids.len(),
                camera_ids.len(),
                splits.len()
            )));
        }
        if let Some((w, h)) = image_shape {
            if w * h == 0 || !inputs.cols().is_multiple_of(w * h) {
                return Err(Error::Consistency(format!(
                    "image shape {w}x{h} does not divide input dimension {}",
                    inputs.cols()
                )));
            }
        }
        Ok(Self {
            inputs,
            person_ids,
            camera_ids,
            splits,
            image_shape,
        })
    }

    pub fn len(&self) -> usize {
        self.person_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.person_ids.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.splits[i] == split)
            .collect()
    }

    pub fn batch(&self, indices: &[usize]) -> FeatureBatch {
        FeatureBatch {
            features: self.inputs.select_rows(indices),
            person_ids: indices.iter().map(|&i| self.person_ids[i]).collect(),
            camera_ids: indices.iter().map(|&i| self.camera_ids[i]).collect(),
        }
    }

    pub fn split_batch(&self, split: Split) -> FeatureBatch {
        self.batch(&self.indices(split))
    }

    /// Number of camera classes, i.e. `max camera id + 1`.
    pub fn num_cameras(&self) -> usize {
        self.camera_ids.iter().max().map_or(0, |m| m + 1)
    }

    pub fn stats(&self) -> DatasetStats {
        let ids: BTreeSet<usize> = self.person_ids.iter().copied().collect();
        let cams: BTreeSet<usize> = self.camera_ids.iter().copied().collect();
        let mut per_split = BTreeMap::new();
        for s in &self.splits {
            *per_split.entry(s.as_str().to_string()).or_insert(0) += 1;
        }
        DatasetStats {
            num_identities: ids.len(),
            num_samples: self.len(),
            samples_per_identity: if ids.is_empty() {
                0.0
            } else {
                self.len() as f64 / ids.len() as f64
            },
            num_cameras: cams.len(),
            per_split,
        }
    }

    /// Fails when any identity appears both in training and on the test side.
    pub fn check_identity_disjoint(&self) -> Result<()> {
        let train: BTreeSet<usize> = (0..self.len())
            .filter(|&i| self.splits[i] == Split::Train)
            .map(|i| self.person_ids[i])
            .collect();
        let shared: BTreeSet<usize> = (0..self.len())
            .filter(|&i| self.splits[i].is_test_side() && train.contains(&self.person_ids[i]))
            .map(|i| self.person_ids[i])
            .collect();
        if shared.is_empty() {
            Ok(())
        } else {
            Err(Error::Consistency(format!(
                "identities {:?} appear in both train and test splits",
                shared.into_iter().take(10).collect::<Vec<_>>()
            )))
        }
    }

    /// Fails when a query sample is also in the gallery (by index, trivially
    /// impossible) or when the query/gallery tags are missing entirely.
    pub fn check_query_gallery(&self) -> Result<()> {
        let q = self.indices(Split::Query).len();
        let g = self.indices(Split::Gallery).len();
        if q == 0 || g == 0 {
            return Err(Error::Split(format!(
                "dataset has {q} query and {g} gallery samples"
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> LabeledDataset {
        LabeledDataset::new(
            Tensor::matrix(4, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap(),
            vec![0, 0, 1, 1],
            vec![0, 1, 0, 1],
            vec![Split::Train, Split::Train, Split::Query, Split::Gallery],
            None,
        )
        .unwrap()
    }

    #[test]
    fn stats_and_disjointness() {
        let d = tiny();
        let s = d.stats();
        assert_eq!(s.num_identities, 2);
        assert_eq!(s.num_samples, 4);
        assert_eq!(s.samples_per_identity, 2.0);
        assert_eq!(s.num_cameras, 2);
        assert_eq!(s.per_split["train"], 2);
        d.check_identity_disjoint().unwrap();
        d.check_query_gallery().unwrap();

        let mut leaky = d.clone();
        leaky.person_ids[2] = 0;
        assert!(matches!(
            leaky.check_identity_disjoint(),
            Err(Error::Consistency(_))
        ));
    }

    #[test]
    fn batch_selects_rows_and_labels() {
        let d = tiny();
        let b = d.batch(&[3, 0]);
        assert_eq!(b.features.data(), &[3.0, 0.0]);
        assert_eq!(b.person_ids, vec![1, 0]);
        assert_eq!(b.camera_ids, vec![1, 0]);
    }

    #[test]
    fn mismatched_columns_rejected() {
        let r = LabeledDataset::new(
            Tensor::zeros(&[2, 3]),
            vec![0],
            vec![0, 0],
            vec![Split::Train; 2],
            None,
        );
        assert!(matches!(r, Err(Error::Consistency(_))));
    }
}
