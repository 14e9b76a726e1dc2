//! Per-second speech gating and transformer window assembly.
//!
//! Scheme 1 drops every second the detector marks as speech and packs the
//! survivors into windows. Scheme 2 keeps the wall-clock grid, replaces speech
//! seconds with an all-zero spectrogram and carries the probability along.

mod detector;
mod scheme;

pub use detector::{speech_probability, GateFeatures, SpeechDetector};
pub use scheme::{
    assemble, assemble_scheme1, assemble_scheme2, write_gate_audit, Assembler, InputWindow,
    LabeledChunk, Maskable, Scheme, Scheme1Assembler, Scheme2Assembler, WindowIter, DEFAULT_WINDOW,
};

/// A second is speech when its probability is strictly above this value.
pub const SPEECH_THRESHOLD: f64 = 0.5;
