//! Pruning importance scores and mask construction.

use super::{pruned_block_count, BlockMask, BlockShape};
use crate::error::{Error, Result};

/// Adam-pruning importance `|w| · sqrt(v̂ + eps)`.
///
/// `v̂ = v / (1 - beta2^step)` is the bias-corrected second moment. Before
/// the first optimizer step `v̂` is taken as zero, so the score reduces to a
/// magnitude ranking.
pub fn adam_prune_score(weights: &[f64], v: &[f64], step_count: u64, beta2: f64, eps: f64) -> Result<Vec<f64>> {
    if weights.len() != v.len() {
        return Err(Error::shape(format!(
            "{} weights but {} second moments",
            weights.len(),
            v.len()
        )));
    }
    if let Some(bad) = v.iter().find(|x| !(**x >= 0.0)) {
        return Err(Error::numeric(format!("second moment {bad} is negative or NaN")));
    }
    let correction = if step_count == 0 {
        None
    } else {
        Some(1.0 - beta2.powi(step_count.min(i32::MAX as u64) as i32))
    };
    Ok(weights
        .iter()
        .zip(v)
        .map(|(w, v)| {
            let v_hat = correction.map_or(0.0, |c| v / c);
            w.abs() * (v_hat + eps).sqrt()
        })
        .collect())
}

/// Plain magnitude `|w|`.
pub fn magnitude_score(weights: &[f64]) -> Vec<f64> {
    weights.iter().map(|w| w.abs()).collect()
}

/// Instantaneous gradient importance `|w · g|`.
pub fn gradient_score(weights: &[f64], grads: &[f64]) -> Vec<f64> {
    weights.iter().zip(grads).map(|(w, g)| (w * g).abs()).collect()
}

/// Sums per-weight scores over each block; output is indexed row-major over
/// the block grid.
pub fn block_scores(scores: &[f64], rows: usize, cols: usize, block: BlockShape) -> Result<Vec<f64>> {
    if scores.len() != rows * cols {
        return Err(Error::shape(format!(
            "{} scores for a {rows}x{cols} matrix",
            scores.len()
        )));
    }
    let (_, bcols) = block.grid(rows, cols)?;
    let (grid_rows, grid_cols) = (rows / block.rows, bcols);
    let mut out = vec![0.0; grid_rows * grid_cols];
    for r in 0..rows {
        let base = (r / block.rows) * grid_cols;
        for c in 0..cols {
            out[base + c / block.cols] += scores[r * cols + c];
        }
    }
    Ok(out)
}

/// Prunes the `floor(s · n_blocks)` lowest-scoring blocks.
///
/// Ties are broken by block index: the lower index is pruned first.
pub fn build_block_mask(
    block_scores: &[f64],
    rows: usize,
    cols: usize,
    block: BlockShape,
    sparsity: f64,
) -> Result<BlockMask> {
    if !(0.0..1.0).contains(&sparsity) {
        return Err(Error::param(format!("sparsity {sparsity} outside [0, 1)")));
    }
    let (br, bc) = block.grid(rows, cols)?;
    let n = br * bc;
    if block_scores.len() != n {
        return Err(Error::shape(format!(
            "{} block scores for {n} blocks",
            block_scores.len()
        )));
    }
    let k = pruned_block_count(sparsity, n);
    let mut keep = vec![true; n];
    if k > 0 {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| block_scores[a].total_cmp(&block_scores[b]).then(a.cmp(&b)));
        for &i in &order[..k] {
            keep[i] = false;
        }
    }
    BlockMask::from_blocks(rows, cols, block, keep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const B: BlockShape = BlockShape::EIGHT_BY_ONE;

    #[test]
    fn score_examples() {
        assert_eq!(adam_prune_score(&[0.0], &[3.0], 5, 0.999, 1e-8).unwrap(), vec![0.0]);
        // v̂ = 0.25 when the correction is 1; use beta2 = 0 to make it so.
        assert_eq!(adam_prune_score(&[2.0], &[0.25], 1, 0.0, 0.0).unwrap(), vec![1.0]);
        assert!(adam_prune_score(&[1.0], &[-1.0], 1, 0.9, 0.0).is_err());
        assert!(adam_prune_score(&[1.0, 2.0], &[1.0], 1, 0.9, 0.0).is_err());
    }

    #[test]
    fn step_zero_ranking_is_magnitude_ranking() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w: Vec<f64> = (0..128).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..128).map(|_| rng.gen_range(0.0..5.0)).collect();
        let s = adam_prune_score(&w, &v, 0, 0.999, 1e-8).unwrap();
        let argsort = |x: &[f64]| {
            let mut idx: Vec<usize> = (0..x.len()).collect();
            idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
            idx
        };
        let mags: Vec<f64> = w.iter().map(|w| w.abs()).collect();
        assert_eq!(argsort(&s), argsort(&mags));
    }

    #[test]
    fn block_score_examples() {
        assert_eq!(block_scores(&[1.0; 32], 16, 2, B).unwrap(), vec![8.0; 4]);
        let mut one = vec![0.0; 32];
        one[9 * 2 + 1] = 5.0;
        let bs = block_scores(&one, 16, 2, B).unwrap();
        assert_eq!(bs, vec![0.0, 0.0, 0.0, 5.0]);
        assert!(block_scores(&[0.0; 30], 15, 2, B).is_err());
    }

    #[test]
    fn block_scores_match_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (rows, cols) = (24, 3);
        let s: Vec<f64> = (0..rows * cols).map(|_| rng.gen::<f64>()).collect();
        let got = block_scores(&s, rows, cols, B).unwrap();
        for br in 0..rows / 8 {
            for c in 0..cols {
                let mut sum = 0.0;
                for k in 0..8 {
                    sum += s[(br * 8 + k) * cols + c];
                }
                assert!((got[br * cols + c] - sum).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mask_examples() {
        let scores: Vec<f64> = (0..8).map(|i| [5.0, 1.0, 7.0, 3.0, 8.0, 2.0, 6.0, 4.0][i]).collect();
        let m0 = build_block_mask(&scores, 64, 1, B, 0.0).unwrap();
        assert_eq!(m0.pruned_blocks(), 0);
        assert_eq!(m0.achieved_sparsity(), 0.0);

        let m = build_block_mask(&scores, 64, 1, B, 0.5).unwrap();
        let pruned: Vec<usize> = (0..8).filter(|&i| !m.block_keeps()[i]).collect();
        assert_eq!(pruned, vec![1, 3, 5, 7]);

        assert!(build_block_mask(&scores, 64, 1, B, 1.0).is_err());
    }

    #[test]
    fn ties_prune_lower_indices_first() {
        let scores = vec![1.0; 10];
        let m = build_block_mask(&scores, 80, 1, B, 0.5).unwrap();
        // Stable sort oracle: equal keys keep their index order.
        let mut idx: Vec<usize> = (0..10).collect();
        idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
        let expect: Vec<bool> = (0..10).map(|i| !idx[..5].contains(&i)).collect();
        assert_eq!(m.block_keeps(), expect.as_slice());
        assert_eq!(m.block_keeps(), &[false, false, false, false, false, true, true, true, true, true]);
    }
}
