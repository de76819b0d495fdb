use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Sample indices grouped by identity, in ascending identity order.
#[derive(Clone, Debug)]
pub struct IdentityIndex {
    groups: Vec<(usize, Vec<usize>)>,
}

impl IdentityIndex {
    pub fn new(labels: &[usize]) -> Self {
        let mut map: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &l) in labels.iter().enumerate() {
            map.entry(l).or_default().push(i);
        }
        Self {
            groups: map.into_iter().collect(),
        }
    }

    pub fn num_identities(&self) -> usize {
        self.groups.len()
    }

    /// PK draw over this index; see [`pk_sample`].
    pub fn sample(&self, p: usize, k: usize, rng: &mut Rng) -> Result<Vec<usize>> {
        check_pk(p, k, self.num_identities())?;
        let chosen: Vec<usize> = (0..self.num_identities())
            .collect::<Vec<_>>()
            .choose_multiple(rng, p)
            .copied()
            .collect();
        let mut out = Vec::with_capacity(p * k);
        for g in chosen {
            self.draw(g, k, rng, &mut out);
        }
        Ok(out)
    }

    fn draw(&self, group: usize, k: usize, rng: &mut Rng, out: &mut Vec<usize>) {
        let members = &self.groups[group].1;
        if members.len() >= k {
            out.extend(members.choose_multiple(rng, k).copied());
        } else {
            out.extend((0..k).map(|_| members[rng.random_range(0..members.len())]));
        }
    }
}

fn check_pk(p: usize, k: usize, available: usize) -> Result<()> {
    if p == 0 || k == 0 {
        return Err(Error::Config(format!(
            "P and K must be positive, got P={p}, K={k}"
        )));
    }
    if available < p {
        return Err(Error::Config(format!(
            "PK sampling needs {p} identities, only {available} available"
        )));
    }
    Ok(())
}

/// Draws `p` distinct identities and `k` samples of each: without replacement
/// when an identity has at least `k` samples, with replacement otherwise.
pub fn pk_sample(labels: &[usize], p: usize, k: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    IdentityIndex::new(labels).sample(p, k, rng)
}

/// Epoch-aware PK sampler.
///
/// Within one pass identities are visited without replacement; an epoch is
/// `ceil(num_identities / P)` batches. The final batch of a pass, when short,
/// is topped up with identities drawn from outside that batch so every batch
/// still holds `P` distinct identities.
#[derive(Clone, Debug)]
pub struct PkSampler {
    index: IdentityIndex,
    p: usize,
    k: usize,
    order: Vec<usize>,
    cursor: usize,
}

impl PkSampler {
    pub fn new(labels: &[usize], p: usize, k: usize) -> Result<Self> {
        let index = IdentityIndex::new(labels);
        check_pk(p, k, index.num_identities())?;
        Ok(Self {
            index,
            p,
            k,
            order: Vec::new(),
            cursor: 0,
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.index.num_identities().div_ceil(self.p)
    }

    pub fn batch_size(&self) -> usize {
        self.p * self.k
    }

    pub fn next_batch(&mut self, rng: &mut Rng) -> Vec<usize> {
        let n = self.index.num_identities();
        if self.cursor >= self.order.len() {
            self.order = (0..n).collect();
            self.order.shuffle(rng);
            self.cursor = 0;
        }
        let end = (self.cursor + self.p).min(n);
        let mut groups: Vec<usize> = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        if groups.len() < self.p {
            let mut rest: Vec<usize> = (0..n).filter(|g| !groups.contains(g)).collect();
            rest.shuffle(rng);
            groups.extend(rest.into_iter().take(self.p - groups.len()));
        }
        let mut out = Vec::with_capacity(self.p * self.k);
        for g in groups {
            self.index.draw(g, self.k, rng, &mut out);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use std::collections::BTreeMap;

    fn counts(labels: &[usize], idx: &[usize]) -> BTreeMap<usize, usize> {
        let mut m = BTreeMap::new();
        for &i in idx {
            *m.entry(labels[i]).or_insert(0) += 1;
        }
        m
    }

    #[test]
    fn batch_size_is_p_times_k() {
        let labels: Vec<usize> = (0..40).flat_map(|id| std::iter::repeat_n(id, 6)).collect();
        let mut rng = seeded(0, 0);
        let idx = pk_sample(&labels, 32, 4, &mut rng).unwrap();
        assert_eq!(idx.len(), 128);
        let c = counts(&labels, &idx);
        assert_eq!(c.len(), 32);
        assert!(c.values().all(|&n| n == 4));
    }

    #[test]
    fn small_case() {
        let labels: Vec<usize> = (0..8).flat_map(|id| [id, id, id]).collect();
        let mut rng = seeded(1, 0);
        let idx = pk_sample(&labels, 4, 2, &mut rng).unwrap();
        assert_eq!(idx.len(), 8);
        let c = counts(&labels, &idx);
        assert_eq!(c.len(), 4);
        assert!(c.values().all(|&n| n == 2));
        let mut uniq = idx.clone();
        uniq.sort();
        uniq.dedup();
        assert_eq!(uniq.len(), 8);
    }

    #[test]
    fn single_image_identity_is_repeated() {
        let labels = vec![0, 1, 1, 1, 1];
        let mut rng = seeded(2, 0);
        let idx = pk_sample(&labels, 2, 4, &mut rng).unwrap();
        let zeros: Vec<usize> = idx.iter().copied().filter(|&i| labels[i] == 0).collect();
        assert_eq!(zeros, vec![0, 0, 0, 0]);
    }

    #[test]
    fn too_few_identities() {
        let mut rng = seeded(3, 0);
        assert!(matches!(
            pk_sample(&[0, 0, 1, 1], 3, 2, &mut rng),
            Err(Error::Config(_))
        ));
        assert!(PkSampler::new(&[0, 1], 3, 2).is_err());
    }

    #[test]
    fn epoch_visits_each_identity_once() {
        let labels: Vec<usize> = (0..10).flat_map(|id| [id; 5]).collect();
        let mut s = PkSampler::new(&labels, 4, 2).unwrap();
        assert_eq!(s.batches_per_epoch(), 3);
        let mut rng = seeded(4, 0);
        let mut seen = BTreeMap::new();
        for b in 0..3 {
            let batch = s.next_batch(&mut rng);
            assert_eq!(batch.len(), 8);
            let c = counts(&labels, &batch);
            assert_eq!(c.len(), 4);
            if b < 2 {
                for id in c.keys() {
                    *seen.entry(*id).or_insert(0) += 1;
                }
            }
        }
        assert_eq!(seen.len(), 8);
        assert!(seen.values().all(|&n| n == 1));
    }
}
