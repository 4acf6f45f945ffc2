//! Experiment driver for deep-prior sound-field reconstruction.
//!
//! The library exposes the command implementations behind the `sfr` binary
//! so integration tests and other tools can drive them in-process:
//! pretraining, adaptation (scratch / full fine-tuning / LoRA), the rank and
//! microphone-count sweeps, the cross-room transfer matrix, and report
//! aggregation. All commands are deterministic given a spec and its seeds.

pub mod commands;
pub mod csvio;
pub mod error;
pub mod plot;
pub mod render;
pub mod spec;
pub mod workers;

pub use commands::{
    cmd_adapt, cmd_cross_room, cmd_pretrain, cmd_report, cmd_sweep_mics, cmd_sweep_rank,
};
pub use error::{CliError, Result};
pub use spec::ExperimentSpec;
