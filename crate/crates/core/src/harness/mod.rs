//! Operational shell: configuration, metrics, checkpoints, plots, the
//! verification suites and the command line.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod desk;
pub mod metrics;
pub mod plot;
pub mod verify;

pub use crate::agent::MetricsRecord;
pub use checkpoint::{
    checkpoint_load, checkpoint_save, conform, decode_checkpoint, encode_checkpoint, Manifest,
};
pub use config::{ExperimentConfig, RunSection, SEED_ENV_VAR};
pub use metrics::{parse_metrics, read_metrics, MetricsWriter};
pub use plot::{plot_metrics, write_csv};
