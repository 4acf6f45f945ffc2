//! Deep-prior sound-field reconstruction.
//!
//! This crate reconstructs room-impulse-response (RIR) grids from sparse
//! microphone observations by fitting an untrained convolutional
//! autoencoder (a deep prior) to the observed channels, with optional
//! low-rank (LoRA) adaptation of a pretrained network to new sources and
//! rooms. It ships:
//!
//! - [`signal`]: RIR grids, sampling masks, the convolutional signal model,
//!   and the NMSE metric.
//! - [`room`]: an image-source shoebox simulator producing synthetic ground
//!   truth.
//! - [`net`]: the MultiRes-style convolutional autoencoder generator and its
//!   fixed noise input.
//! - [`lora`]: low-rank adapters for convolutions — construction, delta
//!   composition, attach/detach/swap, and parameter accounting.
//! - [`train`]: the deep-prior fitting loop (scratch / full fine-tune /
//!   LoRA) with AdamW, plus evaluation helpers.
//! - [`io`]: bit-exact file formats for grids, checkpoints, and adapter
//!   bundles.

pub mod error;
pub mod io;
pub mod lora;
pub mod net;
pub mod nn;
pub mod room;
pub mod signal;
pub mod tensor;
pub mod train;

pub use error::{Result, SfrError};
