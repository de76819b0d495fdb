use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::{LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::rng::Rng;

fn groups_of(dataset: &LabeledDataset, split: Split) -> BTreeMap<usize, Vec<usize>> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in dataset.indices(split) {
        groups.entry(dataset.person_ids[i]).or_default().push(i);
    }
    groups
}

fn share(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64).round() as usize).clamp(1, n - 1)
}

/// Splits every `Test` identity's samples into query and gallery. Each
/// identity contributes `round(fraction · n)` queries, at least one and
/// leaving at least one in the gallery.
pub fn split_query_gallery(
    dataset: &LabeledDataset,
    query_fraction: f64,
    rng: &mut Rng,
) -> Result<LabeledDataset> {
    if !(query_fraction > 0.0 && query_fraction < 1.0) {
        return Err(Error::Config(format!(
            "query fraction must lie in (0, 1), got {query_fraction}"
        )));
    }
    let groups = groups_of(dataset, Split::Test);
    let short: Vec<usize> = groups
        .iter()
        .filter(|(_, m)| m.len() < 2)
        .map(|(&id, _)| id)
        .collect();
    if !short.is_empty() {
        return Err(Error::Split(format!(
            "identities {short:?} have fewer than 2 test samples and cannot appear in both query and gallery"
        )));
    }
    let mut out = dataset.clone();
    for (_, mut members) in groups {
        let q = share(members.len(), query_fraction);
        members.shuffle(rng);
        for (rank, i) in members.into_iter().enumerate() {
            out.splits[i] = if rank < q {
                Split::Query
            } else {
                Split::Gallery
            };
        }
    }
    Ok(out)
}

/// Moves a share of each training identity's samples to `Test`, giving a
/// closed-set split where test identities were also seen in training.
pub fn hold_out_samples(
    dataset: &LabeledDataset,
    test_fraction: f64,
    rng: &mut Rng,
) -> Result<LabeledDataset> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let groups = groups_of(dataset, Split::Train);
    let mut out = dataset.clone();
    for (id, mut members) in groups {
        if members.len() < 3 {
            return Err(Error::Split(format!(
                "identity {id} has {} samples, need at least 3",
                members.len()
            )));
        }
        let t = share(members.len(), test_fraction)
            .max(2)
            .min(members.len() - 1);
        members.shuffle(rng);
        for &i in &members[..t] {
            out.splits[i] = Split::Test;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::rng::seeded;

    fn ds(ids: Vec<usize>, split: Split) -> LabeledDataset {
        let n = ids.len();
        LabeledDataset::new(
            Tensor::zeros(&[n, 1]),
            ids,
            vec![0; n],
            vec![split; n],
            None,
        )
        .unwrap()
    }

    #[test]
    fn query_gallery_partition() {
        let d = ds(vec![0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 1, 1], Split::Test);
        let s = split_query_gallery(&d, 0.25, &mut seeded(0, 0)).unwrap();
        let q = s.indices(Split::Query);
        let g = s.indices(Split::Gallery);
        assert_eq!(q.len() + g.len(), 12);
        assert_eq!(q.iter().filter(|&&i| s.person_ids[i] == 0).count(), 1);
        assert_eq!(q.iter().filter(|&&i| s.person_ids[i] == 1).count(), 2);
        assert!(q.iter().all(|i| !g.contains(i)));
    }

    #[test]
    fn singleton_identity_is_reported() {
        let d = ds(vec![0, 0, 7], Split::Test);
        match split_query_gallery(&d, 0.5, &mut seeded(0, 0)) {
            Err(Error::Split(m)) => assert!(m.contains('7')),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn hold_out_keeps_every_identity_in_train() {
        let d = ds((0..3).flat_map(|i| [i; 10]).collect(), Split::Train);
        let s = hold_out_samples(&d, 0.2, &mut seeded(1, 0)).unwrap();
        for id in 0..3 {
            let train = (0..s.len())
                .filter(|&i| s.person_ids[i] == id && s.splits[i] == Split::Train)
                .count();
            assert_eq!(train, 8);
        }
    }
}
