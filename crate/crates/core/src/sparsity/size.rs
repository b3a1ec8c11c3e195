use super::{pruned_block_count, BlockShape};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSize {
    pub rows: u64,
    pub cols: u64,
    pub prunable: bool,
}

/// Parameter counts needed to price a sparsity configuration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArchSizes {
    pub layers: Vec<LayerSize>,
    pub bias_count: u64,
    pub bytes_per_weight: u64,
    pub block: BlockShape,
}

impl ArchSizes {
    pub fn new(layers: Vec<LayerSize>, bias_count: u64, bytes_per_weight: u64) -> Result<Self> {
        let block = BlockShape::EIGHT_BY_ONE;
        if bytes_per_weight == 0 {
            return Err(Error::param("bytes per weight must be positive"));
        }
        for l in &layers {
            if l.rows == 0 || l.cols == 0 {
                return Err(Error::param("layer sizes must be positive"));
            }
            if l.prunable && (l.rows % block.rows as u64 != 0 || l.cols % block.cols as u64 != 0) {
                return Err(Error::shape(format!(
                    "prunable layer {}x{} is not divisible into {}x{} blocks",
                    l.rows, l.cols, block.rows, block.cols
                )));
            }
        }
        Ok(Self {
            layers,
            bias_count,
            bytes_per_weight,
            block,
        })
    }

    pub fn num_prunable(&self) -> usize {
        self.layers.iter().filter(|l| l.prunable).count()
    }

    pub fn total_params(&self) -> u64 {
        self.layers.iter().map(|l| l.rows * l.cols).sum::<u64>() + self.bias_count
    }
}

/// Bytes of the nonzero weights (plus biases) under a sparsity configuration.
///
/// Index overhead of a sparse storage format is not counted.
pub fn model_size_bytes(ratios: &[f64], arch: &ArchSizes) -> Result<u64> {
    if ratios.len() != arch.num_prunable() {
        return Err(Error::param(format!(
            "config has {} layers, architecture has {} prunable layers",
            ratios.len(),
            arch.num_prunable()
        )));
    }
    let block = arch.block.size() as u64;
    let mut ratio = ratios.iter();
    let mut weights = 0u64;
    for l in &arch.layers {
        let n = l.rows * l.cols;
        if l.prunable {
            let s = *ratio.next().expect("length checked");
            let n_blocks = n / block;
            let kept = n_blocks - pruned_block_count(s, n_blocks as usize) as u64;
            weights += kept * block;
        } else {
            weights += n;
        }
    }
    Ok((weights + arch.bias_count) * arch.bytes_per_weight)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_size_is_parameter_count() {
        let arch = ArchSizes::new(
            vec![
                LayerSize { rows: 16, cols: 4, prunable: false },
                LayerSize { rows: 16, cols: 16, prunable: true },
            ],
            20,
            1,
        )
        .unwrap();
        assert_eq!(model_size_bytes(&[0.0], &arch).unwrap(), arch.total_params());
        assert!(model_size_bytes(&[0.0, 0.5], &arch).is_err());
    }

    #[test]
    fn two_layer_arithmetic() {
        // Ten 8x1 blocks per layer, five bias bytes.
        let arch = ArchSizes::new(
            vec![
                LayerSize { rows: 8, cols: 10, prunable: true },
                LayerSize { rows: 8, cols: 10, prunable: true },
            ],
            5,
            1,
        )
        .unwrap();
        assert_eq!(model_size_bytes(&[0.5, 0.8], &arch).unwrap(), (5 + 2) * 8 + 5);
    }

    #[test]
    fn rejects_indivisible_prunable_layer() {
        assert!(ArchSizes::new(vec![LayerSize { rows: 12, cols: 3, prunable: true }], 0, 1).is_err());
        assert!(ArchSizes::new(vec![LayerSize { rows: 12, cols: 3, prunable: false }], 0, 1).is_ok());
    }
}
