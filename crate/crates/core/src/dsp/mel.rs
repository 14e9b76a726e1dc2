use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use realfft::{RealFftPlanner, RealToComplex};
use serde::{Deserialize, Serialize};

use super::MonoClip;
use crate::error::{Error, Result};

/// Short-time log-mel front-end parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectrogramConfig {
    pub window_len: usize,
    pub hop_len: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
}

impl Default for SpectrogramConfig {
    /// 25 ms window, 10 ms hop at 16 kHz, 64 bands over 60-7800 Hz.
    fn default() -> Self {
        Self {
            window_len: 400,
            hop_len: 160,
            n_mels: 64,
            fmin: 60.0,
            fmax: 7800.0,
            log_floor: 1e-10,
        }
    }
}

impl SpectrogramConfig {
    /// The default front end with window, hop and `fmax` rescaled for another
    /// sample rate.
    pub fn for_sample_rate(sample_rate: u32) -> Self {
        let d = Self::default();
        let scale = sample_rate as f64 / 16_000.0;
        Self {
            window_len: (d.window_len as f64 * scale).round() as usize,
            hop_len: (d.hop_len as f64 * scale).round() as usize,
            fmax: d.fmax.min(sample_rate as f64 / 2.0 - 100.0 * scale),
            ..d
        }
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        if self.hop_len == 0 || self.hop_len > self.window_len {
            return Err(Error::config("need 0 < hop_len <= window_len"));
        }
        if self.n_mels == 0 {
            return Err(Error::config("n_mels must be at least 1"));
        }
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= sample_rate as f64 / 2.0) {
            return Err(Error::config(format!(
                "need 0 <= fmin < fmax <= {} Hz",
                sample_rate as f64 / 2.0
            )));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::config("log_floor must be positive"));
        }
        Ok(())
    }

    /// `1 + (len - window_len) / hop_len`, or zero when the clip is shorter
    /// than one window.
    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.window_len {
            0
        } else {
            1 + (len - self.window_len) / self.hop_len
        }
    }

    pub fn fft_len(&self) -> usize {
        self.window_len.next_power_of_two()
    }
}

/// Frames-by-bands matrix of log energies.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub frames: Array2<f64>,
    pub config: SpectrogramConfig,
    pub sample_rate: u32,
}

impl Spectrogram {
    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn n_mels(&self) -> usize {
        self.frames.ncols()
    }

    /// Seconds of audio the frames span.
    pub fn duration(&self) -> f64 {
        let n = self.num_frames();
        if n == 0 {
            return 0.0;
        }
        ((n - 1) * self.config.hop_len + self.config.window_len) as f64 / self.sample_rate as f64
    }

    /// Same shape, every cell zero: the masked representation of a speech
    /// second.
    pub fn zeroed(&self) -> Spectrogram {
        Spectrogram {
            frames: Array2::zeros(self.frames.raw_dim()),
            config: self.config,
            sample_rate: self.sample_rate,
        }
    }

    /// Centre frequency of every mel band.
    pub fn band_centres(&self) -> Vec<f64> {
        band_centres(&self.config)
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

fn mel_edges(config: &SpectrogramConfig) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(config.fmin), hz_to_mel(config.fmax));
    (0..config.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (config.n_mels + 1) as f64))
        .collect()
}

fn band_centres(config: &SpectrogramConfig) -> Vec<f64> {
    mel_edges(config)[1..=config.n_mels].to_vec()
}

/// Triangular filters on the one-sided power spectrum, unit peak height.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// Per band: first FFT bin and the weights from there on.
    bands: Vec<(usize, Vec<f64>)>,
}

impl MelFilterbank {
    pub fn new(config: &SpectrogramConfig, sample_rate: u32) -> Self {
        let n_fft = config.fft_len();
        let bin_hz = sample_rate as f64 / n_fft as f64;
        let edges = mel_edges(config);
        let bands = (0..config.n_mels)
            .map(|b| {
                let (lo, centre, hi) = (edges[b], edges[b + 1], edges[b + 2]);
                let first = (lo / bin_hz).ceil() as usize;
                let last = ((hi / bin_hz).floor() as usize).min(n_fft / 2);
                let weights = (first..=last)
                    .map(|k| {
                        let f = k as f64 * bin_hz;
                        if f <= centre {
                            (f - lo) / (centre - lo)
                        } else {
                            (hi - f) / (hi - centre)
                        }
                        .max(0.0)
                    })
                    .collect();
                (first, weights)
            })
            .collect();
        Self { bands }
    }

    pub fn n_mels(&self) -> usize {
        self.bands.len()
    }

    /// Band energies of one power spectrum.
    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        for ((first, weights), o) in self.bands.iter().zip(out.iter_mut()) {
            *o = weights
                .iter()
                .zip(power.iter().skip(*first))
                .map(|(w, p)| w * p)
                .sum();
        }
    }
}

/// Periodic Hann window.
pub(crate) fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
        .collect()
}

/// Reusable log-mel extractor for one configuration and sample rate.
pub struct LogMelExtractor {
    config: SpectrogramConfig,
    sample_rate: u32,
    window: Vec<f64>,
    filterbank: MelFilterbank,
    fft: Arc<dyn RealToComplex<f64>>,
}

impl LogMelExtractor {
    pub fn new(config: SpectrogramConfig, sample_rate: u32) -> Result<Self> {
        config.validate(sample_rate)?;
        let fft = RealFftPlanner::<f64>::new().plan_fft_forward(config.fft_len());
        Ok(Self {
            config,
            sample_rate,
            window: hann(config.window_len),
            filterbank: MelFilterbank::new(&config, sample_rate),
            fft,
        })
    }

    pub fn compute(&self, clip: &MonoClip) -> Result<Spectrogram> {
        if clip.sample_rate() != self.sample_rate {
            return Err(Error::shape(format!(
                "clip sample rate {} differs from extractor rate {}",
                clip.sample_rate(),
                self.sample_rate
            )));
        }
        let cfg = &self.config;
        let n_frames = cfg.frame_count(clip.len());
        if n_frames == 0 {
            return Err(Error::data(format!(
                "clip of {} samples is shorter than one window ({})",
                clip.len(),
                cfg.window_len
            )));
        }
        let n_fft = cfg.fft_len();
        let mut frames = Array2::zeros((n_frames, cfg.n_mels));
        let mut buf = vec![0.0; n_fft];
        let mut spec = self.fft.make_output_vec();
        let mut power = vec![0.0; n_fft / 2 + 1];
        let mut bands = vec![0.0; cfg.n_mels];
        let samples = clip.samples();
        for t in 0..n_frames {
            let start = t * cfg.hop_len;
            buf.iter_mut().for_each(|b| *b = 0.0);
            for (b, (s, w)) in buf.iter_mut().zip(
                samples[start..start + cfg.window_len]
                    .iter()
                    .zip(&self.window),
            ) {
                *b = s * w;
            }
            self.fft
                .process(&mut buf, &mut spec)
                .expect("fft buffer sizes are fixed by the plan");
            for (p, c) in power.iter_mut().zip(&spec) {
                *p = c.norm_sqr();
            }
            self.filterbank.apply(&power, &mut bands);
            for (cell, e) in frames.row_mut(t).iter_mut().zip(&bands) {
                *cell = (e + cfg.log_floor).ln();
            }
        }
        Ok(Spectrogram {
            frames,
            config: *cfg,
            sample_rate: self.sample_rate,
        })
    }
}

/// Hann-windowed power spectra through a triangular mel filterbank, then
/// `ln(energy + log_floor)`.
pub fn log_mel_spectrogram(clip: &MonoClip, config: &SpectrogramConfig) -> Result<Spectrogram> {
    LogMelExtractor::new(*config, clip.sample_rate())?.compute(clip)
}
