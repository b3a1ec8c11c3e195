use std::ops::Range;

use rand::Rng;

use crate::error::{Error, Result};
use crate::sparsity::{SearchSpace, SparsityConfig};

/// The four sub-networks trained at every supernet step, in gradient
/// reduction order: dense, sparsest, then two random draws.
pub fn sandwich_sample<R: Rng + ?Sized>(space: &SearchSpace, rng: &mut R) -> [SparsityConfig; 4] {
    let first = space.sample(rng);
    let second = space.sample(rng);
    [space.dense(), space.sparsest(), first, second]
}

/// Equal contiguous sub-batches, in input order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchPartition {
    pub parts: Vec<Range<usize>>,
}

impl BatchPartition {
    pub fn part_size(&self) -> usize {
        self.parts.first().map_or(0, |r| r.len())
    }
}

pub fn split_batch(batch_size: usize, parts: usize) -> Result<BatchPartition> {
    if parts == 0 || batch_size == 0 || batch_size % parts != 0 {
        return Err(Error::param(format!(
            "batch of {batch_size} cannot be split into {parts} equal parts"
        )));
    }
    let size = batch_size / parts;
    Ok(BatchPartition {
        parts: (0..parts).map(|p| p * size..(p + 1) * size).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sandwich_ends_are_fixed() {
        let space = SearchSpace::with_default_ratios(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let [dense, sparsest, a, b] = sandwich_sample(&space, &mut rng);
        assert_eq!(dense.ratios(), &[0.0; 3]);
        assert_eq!(sparsest.ratios(), &[0.8; 3]);
        assert!(space.is_sampleable(&a) && space.is_sampleable(&b));
    }

    #[test]
    fn random_members_stay_in_sampleable_set() {
        let space = SearchSpace::with_default_ratios(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let s = sandwich_sample(&space, &mut rng);
            assert!(space.is_sampleable(&s[2]));
            assert!(space.is_sampleable(&s[3]));
        }
    }

    #[test]
    fn degenerate_space() {
        let space = SearchSpace::new(3, vec![0.0, 0.5]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = sandwich_sample(&space, &mut rng);
        for c in &s[1..] {
            assert_eq!(c.ratios(), &[0.5; 3]);
        }
    }

    #[test]
    fn split_examples() {
        let p = split_batch(64, 4).unwrap();
        assert_eq!(p.parts, vec![0..16, 16..32, 32..48, 48..64]);
        let p = split_batch(4, 4).unwrap();
        assert!(p.parts.iter().all(|r| r.len() == 1));
        assert!(split_batch(63, 4).is_err());
    }
}
