//! Desk-scale end-to-end harness: synthetic data, a small split
//! classifier, the encode/decode pipeline and rate-accuracy sweeps.

pub mod config;
pub mod dataset;
pub mod files;
pub mod pipeline;
pub mod surrogate;
pub mod sweep;

pub use config::HarnessConfig;
pub use dataset::{gen_synthetic_dataset, Dataset};
pub use files::{load_image, load_image_dir, SelectionFile};
pub use pipeline::{pipeline_decode, pipeline_encode, zero_fill, Restorer};
pub use surrogate::{train_surrogate, SurrogateConfig, SurrogateNet};
pub use sweep::{run_experiment, sweep, Experiment, SweepResult, SweepRow, CSV_HEADER};
