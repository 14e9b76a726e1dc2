//! Occupancy estimation from non-speech audio.
//!
//! The pipeline runs multichannel audio through GCC-PHAT delay-and-sum
//! beamforming, builds one-second log-mel spectrograms, gates out speech,
//! embeds the remaining seconds, and regresses a per-second head count with a
//! small transformer trained by hand-written backpropagation. Embeddings can be
//! released through an L1-clipped Laplace mechanism with budget accounting.
//!
//! A synthetic waiting-room generator (`synth`) provides labeled data.

pub mod cli;
pub mod config;
pub mod dsp;
pub mod embed;
pub mod error;
pub mod eval;
pub mod gate;
pub mod model;
pub mod pipeline;
pub mod privacy;
pub mod store;
pub mod synth;

pub use error::{Error, Result};
