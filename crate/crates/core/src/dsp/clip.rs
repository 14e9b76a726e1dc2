use crate::error::{Error, Result};

/// Synchronized audio from `M` microphones.
#[derive(Debug, Clone, PartialEq)]
pub struct MultichannelClip {
    sample_rate: u32,
    channels: Vec<Vec<f64>>,
}

impl MultichannelClip {
    pub fn new(sample_rate: u32, channels: Vec<Vec<f64>>) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::data("sample rate must be positive"));
        }
        if channels.is_empty() {
            return Err(Error::data("clip needs at least one channel"));
        }
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::shape("all channels must have the same length"));
        }
        if channels.iter().flatten().any(|s| !s.is_finite()) {
            return Err(Error::data("clip contains non-finite samples"));
        }
        Ok(Self {
            sample_rate,
            channels,
        })
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    /// Samples per channel.
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, m: usize) -> &[f64] {
        &self.channels[m]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }

    /// A single channel as a mono clip.
    pub fn mono(&self, m: usize) -> Result<MonoClip> {
        MonoClip::new(self.sample_rate, self.channels[m].clone())
    }

    /// Samples `[start, start + len)` of every channel.
    pub fn slice(&self, start: usize, len: usize) -> Result<MultichannelClip> {
        if start + len > self.len() {
            return Err(Error::shape(format!(
                "slice {start}..{} exceeds clip length {}",
                start + len,
                self.len()
            )));
        }
        let channels = self
            .channels
            .iter()
            .map(|c| c[start..start + len].to_vec())
            .collect();
        Ok(Self {
            sample_rate: self.sample_rate,
            channels,
        })
    }

    pub fn scaled(&self, gain: f64) -> MultichannelClip {
        let channels = self
            .channels
            .iter()
            .map(|c| c.iter().map(|s| s * gain).collect())
            .collect();
        Self {
            sample_rate: self.sample_rate,
            channels,
        }
    }
}

/// Single-channel audio, typically the beamformer output.
#[derive(Debug, Clone, PartialEq)]
pub struct MonoClip {
    sample_rate: u32,
    samples: Vec<f64>,
}

impl MonoClip {
    pub fn new(sample_rate: u32, samples: Vec<f64>) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::data("sample rate must be positive"));
        }
        if samples.is_empty() {
            return Err(Error::data("mono clip must not be empty"));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::data("clip contains non-finite samples"));
        }
        Ok(Self {
            sample_rate,
            samples,
        })
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    /// Integer-factor decimation behind a windowed-sinc low-pass at the new
    /// Nyquist frequency.
    pub fn decimate(&self, factor: usize) -> Result<MonoClip> {
        if factor == 0 || !(self.sample_rate as usize).is_multiple_of(factor) {
            return Err(Error::config(format!(
                "decimation factor {factor} must divide the sample rate {}",
                self.sample_rate
            )));
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let taps = 16 * factor + 1;
        let centre = (taps / 2) as f64;
        let cutoff = 0.5 / factor as f64;
        let kernel: Vec<f64> = (0..taps)
            .map(|i| {
                let x = i as f64 - centre;
                let sinc = if x == 0.0 {
                    2.0 * cutoff
                } else {
                    (2.0 * std::f64::consts::PI * cutoff * x).sin() / (std::f64::consts::PI * x)
                };
                let w =
                    0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (taps - 1) as f64).cos();
                sinc * w
            })
            .collect();
        let half = taps / 2;
        let out: Vec<f64> = (0..self.samples.len())
            .step_by(factor)
            .map(|n| {
                kernel
                    .iter()
                    .enumerate()
                    .filter_map(|(k, w)| {
                        let idx = n as isize + k as isize - half as isize;
                        (idx >= 0 && (idx as usize) < self.samples.len())
                            .then(|| w * self.samples[idx as usize])
                    })
                    .sum()
            })
            .collect();
        MonoClip::new(self.sample_rate / factor as u32, out)
    }
}
