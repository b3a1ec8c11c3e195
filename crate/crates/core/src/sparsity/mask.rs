//! Block-structured pruning masks.
//!
//! A weight matrix of shape `[out, in]` is tiled into aligned blocks of
//! `BlockShape::rows x BlockShape::cols` weights (8x1 by default: eight
//! consecutive output rows within one input column). A mask keeps or prunes
//! whole blocks; blocks are indexed row-major over the block grid, i.e.
//! `block_row * (in / block.cols) + block_col`.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BlockShape {
    pub rows: usize,
    pub cols: usize,
}

impl BlockShape {
    /// Eight output rows by one input column.
    pub const EIGHT_BY_ONE: BlockShape = BlockShape { rows: 8, cols: 1 };

    pub fn size(&self) -> usize {
        self.rows * self.cols
    }

    /// Number of blocks along each axis of a `rows x cols` matrix.
    pub fn grid(&self, rows: usize, cols: usize) -> Result<(usize, usize)> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::shape("block shape must be nonzero"));
        }
        if rows % self.rows != 0 || cols % self.cols != 0 {
            return Err(Error::shape(format!(
                "matrix {rows}x{cols} is not divisible into {}x{} blocks",
                self.rows, self.cols
            )));
        }
        Ok((rows / self.rows, cols / self.cols))
    }
}

impl Default for BlockShape {
    fn default() -> Self {
        Self::EIGHT_BY_ONE
    }
}

/// Keep/prune decision per block of one layer's weight matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockMask {
    rows: usize,
    cols: usize,
    block: BlockShape,
    keep: Vec<bool>,
    pruned: usize,
}

impl BlockMask {
    pub fn all_keep(rows: usize, cols: usize, block: BlockShape) -> Result<Self> {
        let (br, bc) = block.grid(rows, cols)?;
        Ok(Self {
            rows,
            cols,
            block,
            keep: vec![true; br * bc],
            pruned: 0,
        })
    }

    /// Builds a mask from explicit per-block decisions.
    pub fn from_blocks(rows: usize, cols: usize, block: BlockShape, keep: Vec<bool>) -> Result<Self> {
        let (br, bc) = block.grid(rows, cols)?;
        if keep.len() != br * bc {
            return Err(Error::shape(format!(
                "expected {} block decisions, got {}",
                br * bc,
                keep.len()
            )));
        }
        let pruned = keep.iter().filter(|k| !**k).count();
        Ok(Self {
            rows,
            cols,
            block,
            keep,
            pruned,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn block_shape(&self) -> BlockShape {
        self.block
    }

    pub fn n_blocks(&self) -> usize {
        self.keep.len()
    }

    pub fn pruned_blocks(&self) -> usize {
        self.pruned
    }

    pub fn achieved_sparsity(&self) -> f64 {
        if self.keep.is_empty() {
            0.0
        } else {
            self.pruned as f64 / self.keep.len() as f64
        }
    }

    pub fn block_keeps(&self) -> &[bool] {
        &self.keep
    }

    /// Whether the weight at `(row, col)` survives.
    pub fn keeps(&self, row: usize, col: usize) -> bool {
        let blocks_per_row = self.cols / self.block.cols;
        self.keep[(row / self.block.rows) * blocks_per_row + col / self.block.cols]
    }

    /// Per-weight multiplier (1.0 kept, 0.0 pruned), row-major `[rows, cols]`.
    pub fn weight_multipliers(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.rows * self.cols);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.push(if self.keeps(r, c) { 1.0 } else { 0.0 });
            }
        }
        out
    }

    /// Intersection-over-union of the pruned block sets of two masks.
    ///
    /// Two masks that prune nothing are considered identical (IoU 1).
    pub fn pruned_iou(&self, other: &BlockMask) -> f64 {
        debug_assert_eq!(self.keep.len(), other.keep.len());
        let mut inter = 0usize;
        let mut union = 0usize;
        for (a, b) in self.keep.iter().zip(&other.keep) {
            let (pa, pb) = (!a, !b);
            if pa && pb {
                inter += 1;
            }
            if pa || pb {
                union += 1;
            }
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }
}
