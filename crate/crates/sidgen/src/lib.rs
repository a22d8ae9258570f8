//! Pipeline configuration and the glue shared by the `sidgen` binary and
//! its end-to-end tests.

pub mod config;
pub mod pipeline;

pub use config::{PipelineConfig, QuantizerConfig};
pub use pipeline::Benchmark;
