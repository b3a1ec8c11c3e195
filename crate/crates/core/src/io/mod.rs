//! Datasets, run configuration, checkpoints and CSV exports.

mod checkpoint;
mod config;
mod data;
mod export;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
pub use config::{DataSource, RunConfig, CONFIG_VERSION};
pub use data::{gen_synthetic, load_csv, synthetic_teacher_labels, Dataset, Split, SyntheticSpec};
pub use export::{
    read_front_csv, write_front_csv, write_metrics_csv, write_plot_csv, FRONT_HEADER, METRICS_HEADER, PLOT_HEADER,
};
