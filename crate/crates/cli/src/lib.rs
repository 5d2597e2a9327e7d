//! Library half of the command-line pipeline: configuration layering,
//! artifact formats, and the stage implementations. The binary in `main.rs`
//! is a thin argument-parsing shell over these.

pub mod artifacts;
pub mod config;
pub mod pipeline;

pub use config::{parse_config_text, ConfigOverlay, RunConfig};
pub use pipeline::{
    compute_pipeline, flow_stage, run_pipeline, sound_stage, spectrum_stage, validate_stage,
    PipelineProducts,
};
