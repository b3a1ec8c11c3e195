//! Block-sparse weight-sharing supernets.
//!
//! One dense parameter set is trained so that every layerwise block-sparse
//! sub-network drawn from a [`sparsity::SearchSpace`] stays accurate. After
//! training, [`search`] walks the Pareto front of validation loss against
//! model size without retraining.
//!
//! Layout:
//! - [`tensor`]: tensors, autodiff tape, Adam.
//! - [`sparsity`]: configs, 8x1 block masks, cubic warm-up, size model.
//! - [`trainer`]: sandwich-sampled supernet training and baseline trainers.
//! - [`search`]: Pareto archive and evolutionary search.
//! - [`io`]: datasets, checkpoints, run configs and CSV exports.

pub mod error;
pub mod io;
pub mod search;
pub mod sparsity;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
