use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Embedding;
use crate::dsp::Spectrogram;
use crate::error::{Error, Result};

/// Output width of the frozen encoder.
pub const FROZEN_DIM: usize = 512;

/// Seed of the fixed projection matrix. Changing it changes every frozen
/// embedding.
pub const FROZEN_SEED: u64 = 0x0CC5_E115_F20E_0001;

/// Untrainable feature map: per-band mean, standard deviation, maximum and
/// mean absolute frame-to-frame delta, standardized and projected to
/// [`FROZEN_DIM`] dimensions by a seeded random matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenEncoder {
    n_mels: usize,
    projection: Array2<f64>,
    normalizer: FeatureNormalizer,
}

/// Per-feature affine standardization fitted once and then held fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNormalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureNormalizer {
    pub fn identity(n: usize) -> Self {
        Self {
            mean: vec![0.0; n],
            std: vec![1.0; n],
        }
    }

    /// Column means and standard deviations; near-constant columns keep unit
    /// scale.
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>, n: usize) -> Result<Self> {
        let mut count = 0usize;
        let mut sum = vec![0.0; n];
        let mut sq = vec![0.0; n];
        for row in rows {
            if row.len() != n {
                return Err(Error::shape(format!(
                    "feature row of {} values, expected {n}",
                    row.len()
                )));
            }
            count += 1;
            for (j, v) in row.iter().enumerate() {
                sum[j] += v;
                sq[j] += v * v;
            }
        }
        if count == 0 {
            return Err(Error::data("cannot fit a normalizer on zero rows"));
        }
        let c = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / c).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / c - m * m).max(0.0);
                if var > 1e-12 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, features: &mut [f64]) {
        for ((f, m), s) in features.iter_mut().zip(&self.mean).zip(&self.std) {
            *f = (*f - m) / s;
        }
    }
}

impl FrozenEncoder {
    pub fn new(n_mels: usize) -> Self {
        let n = 4 * n_mels;
        let bound = (3.0 / n as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(FROZEN_SEED);
        let projection = Array2::from_shape_fn((n, FROZEN_DIM), |_| rng.gen_range(-bound..bound));
        Self {
            n_mels,
            projection,
            normalizer: FeatureNormalizer::identity(n),
        }
    }

    pub fn with_normalizer(mut self, normalizer: FeatureNormalizer) -> Result<Self> {
        let n = self.num_features();
        if normalizer.mean.len() != n || normalizer.std.len() != n {
            return Err(Error::shape(format!("normalizer must cover {n} features")));
        }
        self.normalizer = normalizer;
        Ok(self)
    }

    pub fn normalizer(&self) -> &FeatureNormalizer {
        &self.normalizer
    }

    pub fn num_features(&self) -> usize {
        4 * self.n_mels
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    /// Raw summary statistics, before standardization.
    pub fn features(&self, spec: &Spectrogram) -> Result<Vec<f64>> {
        if spec.n_mels() != self.n_mels {
            return Err(Error::shape(format!(
                "frozen encoder built for {} bands, got {}",
                self.n_mels,
                spec.n_mels()
            )));
        }
        let t = spec.num_frames();
        if t == 0 {
            return Err(Error::shape("empty spectrogram"));
        }
        let m = self.n_mels;
        let mut out = vec![0.0; 4 * m];
        for (b, col) in spec.frames.columns().into_iter().enumerate() {
            let mean = col.sum() / t as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t as f64;
            let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let delta = if t > 1 {
                col.iter()
                    .zip(col.iter().skip(1))
                    .map(|(a, b)| (b - a).abs())
                    .sum::<f64>()
                    / (t - 1) as f64
            } else {
                0.0
            };
            out[b] = mean;
            out[m + b] = var.sqrt();
            out[2 * m + b] = max;
            out[3 * m + b] = delta;
        }
        Ok(out)
    }

    /// Standardizes and projects precomputed features.
    pub fn embed_features(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.num_features() {
            return Err(Error::shape(format!(
                "expected {} features, got {}",
                self.num_features(),
                features.len()
            )));
        }
        let mut f = features.to_vec();
        self.normalizer.apply(&mut f);
        let v = ndarray::ArrayView1::from(&f[..]);
        Ok(v.dot(&self.projection).to_vec())
    }

    pub fn embed(&self, spec: &Spectrogram) -> Result<Embedding> {
        Embedding::new(self.embed_features(&self.features(spec)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{log_mel_spectrogram, MonoClip, SpectrogramConfig};

    fn spec(samples: Vec<f64>) -> Spectrogram {
        log_mel_spectrogram(
            &MonoClip::new(16_000, samples).unwrap(),
            &SpectrogramConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn silent_clip_gives_constant_features() {
        let enc = FrozenEncoder::new(64);
        let s = spec(vec![0.0; 16_000]);
        let f = enc.features(&s).unwrap();
        let floor = 1e-10f64.ln();
        assert!(f[..64].iter().all(|v| (v - floor).abs() < 1e-9));
        assert!(f[64..128].iter().all(|v| v.abs() < 1e-9));
        assert!(f[128..192].iter().all(|v| *v == floor));
        assert!(f[192..].iter().all(|v| *v == 0.0));
        let a = enc.embed(&s).unwrap();
        let b = FrozenEncoder::new(64).embed(&s).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dim(), FROZEN_DIM);
    }

    #[test]
    fn one_changed_frame_changes_embedding() {
        let enc = FrozenEncoder::new(64);
        let samples: Vec<f64> = (0..16_000)
            .map(|n| ((n * 7919) % 101) as f64 / 101.0 - 0.5)
            .collect();
        let a = spec(samples);
        let mut b = a.clone();
        b.frames.row_mut(10).iter_mut().for_each(|v| *v += 1.0);
        assert_ne!(enc.embed(&a).unwrap(), enc.embed(&b).unwrap());
    }

    #[test]
    fn normalizer_fit_standardizes() {
        let rows = [vec![1.0, 5.0], vec![3.0, 5.0]];
        let n = FeatureNormalizer::fit(rows.iter().map(|r| r.as_slice()), 2).unwrap();
        assert_eq!(n.mean, vec![2.0, 5.0]);
        assert_eq!(n.std, vec![1.0, 1.0]);
        let mut x = vec![3.0, 5.0];
        n.apply(&mut x);
        assert_eq!(x, vec![1.0, 0.0]);
    }
}
