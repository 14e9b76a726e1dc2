use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::dsp::Spectrogram;
use crate::error::{Error, Result};

/// Hand-crafted speech cues extracted from one second of log-mel frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateFeatures {
    /// Share of energy in bands centred within 100-3000 Hz.
    pub band_ratio: f64,
    /// Energy-weighted mean spectral flatness over the speech bands, in [0, 1].
    pub flatness: f64,
    /// Share of envelope modulation power between 2 and 8 Hz.
    pub modulation: f64,
}

/// Heuristic speech detector: three spectral cues through a fixed logistic
/// map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpeechDetector {
    pub bias: f64,
    pub w_band: f64,
    pub w_tonality: f64,
    pub w_modulation: f64,
}

impl Default for SpeechDetector {
    fn default() -> Self {
        Self {
            bias: -24.0,
            w_band: 19.0,
            w_tonality: 12.0,
            w_modulation: 12.0,
        }
    }
}

const SPEECH_LO_HZ: f64 = 100.0;
const SPEECH_HI_HZ: f64 = 3000.0;
const MOD_LO_HZ: f64 = 2.0;
const MOD_HI_HZ: f64 = 8.0;

impl SpeechDetector {
    pub fn features(&self, chunk: &Spectrogram) -> Result<GateFeatures> {
        check_one_second(chunk)?;
        let floor = chunk.config.log_floor;
        let centres = chunk.band_centres();
        let speech_bands: Vec<usize> = (0..centres.len())
            .filter(|&b| (SPEECH_LO_HZ..=SPEECH_HI_HZ).contains(&centres[b]))
            .collect();
        let energy = chunk.frames.mapv(|v| (v.exp() - floor).max(0.0));

        let total: f64 = energy.sum();
        let in_band: f64 = energy
            .rows()
            .into_iter()
            .map(|r| speech_bands.iter().map(|&b| r[b]).sum::<f64>())
            .sum();
        let band_ratio = if total > 0.0 { in_band / total } else { 0.0 };

        // Flatness per frame over the speech bands, weighted by frame energy.
        let mut envelope = Vec::with_capacity(energy.nrows());
        let (mut flat_acc, mut weight_acc) = (0.0, 0.0);
        for row in energy.rows() {
            let vals: Vec<f64> = speech_bands.iter().map(|&b| row[b]).collect();
            let e: f64 = vals.iter().sum();
            envelope.push(e);
            if e > 0.0 && !vals.is_empty() {
                let tiny = e * 1e-9 / vals.len() as f64;
                let n = vals.len() as f64;
                let log_mean = vals.iter().map(|v| (v + tiny).ln()).sum::<f64>() / n;
                let flat = log_mean.exp() / (e / n + tiny);
                flat_acc += flat.min(1.0) * e;
                weight_acc += e;
            }
        }
        let flatness = if weight_acc > 0.0 {
            flat_acc / weight_acc
        } else {
            1.0
        };

        let modulation = modulation_share(
            &envelope,
            chunk.sample_rate as f64 / chunk.config.hop_len as f64,
        );
        Ok(GateFeatures {
            band_ratio,
            flatness,
            modulation,
        })
    }

    pub fn score(&self, f: &GateFeatures) -> f64 {
        let z = self.bias
            + self.w_band * f.band_ratio
            + self.w_tonality * (1.0 - f.flatness)
            + self.w_modulation * f.modulation;
        1.0 / (1.0 + (-z).exp())
    }

    /// Speech probability of one second.
    pub fn probability(&self, chunk: &Spectrogram) -> Result<f64> {
        Ok(self.score(&self.features(chunk)?))
    }
}

/// Speech probability under the default detector.
pub fn speech_probability(chunk: &Spectrogram) -> Result<f64> {
    SpeechDetector::default().probability(chunk)
}

fn check_one_second(chunk: &Spectrogram) -> Result<()> {
    let expected = chunk.config.frame_count(chunk.sample_rate as usize);
    if chunk.num_frames() != expected {
        return Err(Error::shape(format!(
            "gate expects one second ({expected} frames), got {}",
            chunk.num_frames()
        )));
    }
    Ok(())
}

/// Fraction of the mean-removed envelope's power spectrum that falls between
/// 2 and 8 Hz.
fn modulation_share(envelope: &[f64], frame_rate: f64) -> f64 {
    let n = envelope.len();
    if n < 4 {
        return 0.0;
    }
    let mean = envelope.iter().sum::<f64>() / n as f64;
    if mean <= 0.0 {
        return 0.0;
    }
    let centred: Vec<f64> = envelope.iter().map(|e| e / mean - 1.0).collect();
    let (mut in_band, mut total) = (0.0, 0.0);
    for k in 1..=n / 2 {
        let (mut re, mut im) = (0.0, 0.0);
        for (t, x) in centred.iter().enumerate() {
            let phase = -2.0 * PI * (k * t) as f64 / n as f64;
            re += x * phase.cos();
            im += x * phase.sin();
        }
        let p = re * re + im * im;
        let hz = k as f64 * frame_rate / n as f64;
        total += p;
        if (MOD_LO_HZ..=MOD_HI_HZ).contains(&hz) {
            in_band += p;
        }
    }
    if total > 0.0 {
        in_band / total
    } else {
        0.0
    }
}
