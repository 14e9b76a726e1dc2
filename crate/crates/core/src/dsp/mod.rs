//! Multichannel audio front end: TDOA estimation, delay-and-sum beamforming,
//! log-mel spectrograms and the file formats that carry them.

mod beamform;
mod clip;
mod gcc_phat;
pub mod matrix_io;
mod mel;
pub mod wav;

pub use beamform::beamform;
pub use clip::{MonoClip, MultichannelClip};
pub use gcc_phat::{brute_force_xcorr_lag, gcc_phat_tdoa, GccPhat, PHAT_FLOOR};
pub use mel::{
    hz_to_mel, log_mel_spectrogram, mel_to_hz, LogMelExtractor, MelFilterbank, Spectrogram,
    SpectrogramConfig,
};
