use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::WeakLabel;
use crate::error::{Error, Result};

/// Which class defines the length of an epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Anchor {
    /// Every bag of the larger class is visited each epoch; the smaller
    /// class is resampled with replacement.
    #[default]
    Majority,
    /// Every bag of the smaller class is visited each epoch; the larger
    /// class is drawn without replacement across epochs.
    Minority,
}

/// Half-and-half batches: each batch holds `batch_size / 2` positive and
/// `batch_size / 2` negative bags. Indices refer to the label slice given
/// at construction.
pub struct HnhSampler {
    positives: Vec<usize>,
    negatives: Vec<usize>,
    half: usize,
    anchor: Anchor,
    rng: ChaCha8Rng,
    // Remaining majority draws in minority-anchored mode.
    pool: Vec<usize>,
}

impl HnhSampler {
    pub fn new(labels: &[WeakLabel], batch_size: usize, anchor: Anchor, seed: u64) -> Result<Self> {
        if batch_size == 0 || batch_size % 2 != 0 {
            return Err(Error::Sampler(format!("batch size {batch_size} must be even and positive")));
        }
        let (mut positives, mut negatives) = (Vec::new(), Vec::new());
        for (i, l) in labels.iter().enumerate() {
            if l.is_positive() {
                positives.push(i);
            } else {
                negatives.push(i);
            }
        }
        if positives.is_empty() || negatives.is_empty() {
            return Err(Error::Sampler(format!(
                "need both classes, got {} positive and {} negative bags",
                positives.len(),
                negatives.len()
            )));
        }
        Ok(HnhSampler {
            positives,
            negatives,
            half: batch_size / 2,
            anchor,
            rng: ChaCha8Rng::seed_from_u64(seed),
            pool: Vec::new(),
        })
    }

    fn classes(&self) -> (&[usize], &[usize], bool) {
        let pos_major = self.positives.len() >= self.negatives.len();
        let (major, minor) = if pos_major {
            (&self.positives, &self.negatives)
        } else {
            (&self.negatives, &self.positives)
        };
        match self.anchor {
            Anchor::Majority => (major, minor, true),
            Anchor::Minority => (minor, major, false),
        }
    }

    pub fn batches_per_epoch(&self) -> usize {
        let (anchor, _, _) = self.classes();
        anchor.len().div_ceil(self.half)
    }

    /// The batches of the next epoch.
    pub fn next_epoch(&mut self) -> Vec<Vec<usize>> {
        let (anchor, other, with_replacement) = self.classes();
        let (anchor, other) = (anchor.to_vec(), other.to_vec());
        let mut order = anchor.clone();
        order.shuffle(&mut self.rng);
        let mut batches = Vec::with_capacity(self.batches_per_epoch());
        for chunk in order.chunks(self.half) {
            let mut batch = chunk.to_vec();
            while batch.len() < self.half {
                batch.push(anchor[self.rng.random_range(0..anchor.len())]);
            }
            for _ in 0..self.half {
                let pick = if with_replacement {
                    other[self.rng.random_range(0..other.len())]
                } else {
                    if self.pool.is_empty() {
                        self.pool = other.clone();
                        self.pool.shuffle(&mut self.rng);
                    }
                    self.pool.pop().unwrap()
                };
                batch.push(pick);
            }
            batches.push(batch);
        }
        batches
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(pos: usize, neg: usize) -> Vec<WeakLabel> {
        let mut v = vec![WeakLabel::Positive; pos];
        v.extend(vec![WeakLabel::Negative; neg]);
        v
    }

    fn check_epoch(ls: &[WeakLabel], batches: &[Vec<usize>], size: usize) {
        for b in batches {
            assert_eq!(b.len(), size);
            let p = b.iter().filter(|&&i| ls[i].is_positive()).count();
            assert_eq!(p, size / 2);
        }
    }

    #[test]
    fn nips4b_counts() {
        let ls = labels(587, 100);
        let mut s = HnhSampler::new(&ls, 32, Anchor::Majority, 1).unwrap();
        assert_eq!(s.batches_per_epoch(), 37);
        let e = s.next_epoch();
        assert_eq!(e.len(), 37);
        check_epoch(&ls, &e, 32);
        let mut seen = [false; 587];
        e.iter().flatten().filter(|&&i| i < 587).for_each(|&i| seen[i] = true);
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn dcase_counts_repeat_negatives() {
        let ls = labels(200, 160);
        let mut s = HnhSampler::new(&ls, 32, Anchor::Majority, 2).unwrap();
        let e = s.next_epoch();
        assert_eq!(e.len(), 13);
        check_epoch(&ls, &e, 32);
        let negs = e.iter().flatten().filter(|&&i| i >= 200).count();
        assert!(negs >= 200, "negatives drawn to match positives");
    }

    #[test]
    fn one_each() {
        let ls = labels(1, 1);
        let mut s = HnhSampler::new(&ls, 2, Anchor::Majority, 3).unwrap();
        for _ in 0..5 {
            let e = s.next_epoch();
            assert_eq!(e, vec![vec![0, 1]]);
        }
    }

    #[test]
    fn single_class_or_odd_size_is_an_error() {
        assert!(matches!(
            HnhSampler::new(&labels(3, 0), 2, Anchor::Majority, 0),
            Err(Error::Sampler(_))
        ));
        assert!(matches!(
            HnhSampler::new(&labels(3, 3), 5, Anchor::Majority, 0),
            Err(Error::Sampler(_))
        ));
    }

    #[test]
    fn minority_anchor_covers_minority() {
        let ls = labels(50, 7);
        let mut s = HnhSampler::new(&ls, 4, Anchor::Minority, 4).unwrap();
        assert_eq!(s.batches_per_epoch(), 4);
        let e = s.next_epoch();
        check_epoch(&ls, &e, 4);
        for n in 50..57 {
            assert!(e.iter().flatten().any(|&i| i == n));
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let ls = labels(30, 9);
        let mut a = HnhSampler::new(&ls, 8, Anchor::Majority, 9).unwrap();
        let mut b = HnhSampler::new(&ls, 8, Anchor::Majority, 9).unwrap();
        for _ in 0..3 {
            assert_eq!(a.next_epoch(), b.next_epoch());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn balanced_and_covering(pos in 1usize..60, neg in 1usize..60, half in 1usize..9, seed in any::<u64>()) {
            let ls = labels(pos, neg);
            let mut s = HnhSampler::new(&ls, half * 2, Anchor::Majority, seed).unwrap();
            for _ in 0..100 {
                let e = s.next_epoch();
                for b in &e {
                    let p = b.iter().filter(|&&i| ls[i].is_positive()).count();
                    prop_assert_eq!(p, half);
                    prop_assert_eq!(b.len(), 2 * half);
                }
                let majority: Vec<usize> = if pos >= neg { (0..pos).collect() } else { (pos..pos + neg).collect() };
                for m in majority {
                    prop_assert!(e.iter().flatten().any(|&i| i == m));
                }
            }
        }
    }
}
