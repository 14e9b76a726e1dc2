//! Per-second embeddings: two encoders behind one interface, probability
//! appending and L1 clipping.

mod cnn;
mod frozen;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use cnn::{pool_grid, CnnCache, CnnConfig, CnnEncoder};
pub use frozen::{FeatureNormalizer, FrozenEncoder, FROZEN_DIM, FROZEN_SEED};

use crate::dsp::Spectrogram;
use crate::error::{Error, Result};
use crate::model::params::ParamStore;

/// Embedding width of the trainable encoder.
pub const TRAINABLE_DIM: usize = 128;

/// One second's embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f64>,
}

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("embedding contains non-finite values"));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn l1_norm(&self) -> f64 {
        l1(&self.values)
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// `T x d` matrix of per-second embeddings with their source seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence {
    pub rows: Array2<f64>,
    pub timestamps: Vec<u64>,
}

impl EmbeddingSequence {
    pub fn new(rows: Array2<f64>, timestamps: Vec<u64>) -> Result<Self> {
        if rows.nrows() != timestamps.len() {
            return Err(Error::shape(format!(
                "{} rows but {} timestamps",
                rows.nrows(),
                timestamps.len()
            )));
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("embedding sequence contains non-finite values"));
        }
        Ok(Self { rows, timestamps })
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }
}

/// L1 clipping radius `C`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ClipBound(f64);

impl ClipBound {
    pub fn new(c: f64) -> Result<Self> {
        if c > 0.0 && c.is_finite() {
            Ok(Self(c))
        } else {
            Err(Error::config(format!(
                "clip bound must be positive and finite, got {c}"
            )))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for ClipBound {
    type Error = Error;

    fn try_from(c: f64) -> Result<Self> {
        Self::new(c)
    }
}

impl From<ClipBound> for f64 {
    fn from(c: ClipBound) -> f64 {
        c.0
    }
}

pub(crate) fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// `e / max(1, |e|_1 / C)` in place; returns the scale factor applied.
pub fn clip_in_place(e: &mut [f64], bound: ClipBound) -> f64 {
    let norm = l1(e);
    let c = bound.get();
    if norm <= c {
        return 1.0;
    }
    // Step the scale down until the rounded result lies inside the ball, so
    // that clipping a clipped vector is the identity.
    let original = e.to_vec();
    let mut scale = c / norm;
    loop {
        for (x, o) in e.iter_mut().zip(&original) {
            *x = o * scale;
        }
        if l1(e) <= c {
            return scale;
        }
        scale = f64::from_bits(scale.to_bits() - 1);
    }
}

/// Projects `e` onto the L1 ball of radius `C` by rescaling.
pub fn clip_embedding(e: &Embedding, bound: ClipBound) -> Result<Embedding> {
    let mut values = e.values.clone();
    clip_in_place(&mut values, bound);
    Ok(Embedding { values })
}

/// Appends the speech probability as a final coordinate.
pub fn append_probability(e: &Embedding, p: f64) -> Result<Embedding> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::data(format!(
            "speech probability {p} outside [0, 1]"
        )));
    }
    let mut values = Vec::with_capacity(e.dim() + 1);
    values.extend_from_slice(&e.values);
    values.push(p);
    Ok(Embedding { values })
}

/// Which encoder maps spectrograms to embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    /// Fixed feature map projected to 512 dimensions.
    Frozen,
    /// Small CNN trained jointly with the transformer.
    Trainable,
}

impl std::str::FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frozen" => Ok(EncoderKind::Frozen),
            "trainable" => Ok(EncoderKind::Trainable),
            other => Err(Error::config(format!(
                "encoder must be frozen or trainable, got {other}"
            ))),
        }
    }
}

/// A ready-to-use encoder instance.
pub enum Encoder<'a> {
    Frozen(&'a FrozenEncoder),
    Trainable {
        encoder: &'a CnnEncoder,
        params: &'a ParamStore,
    },
}

/// Embeds one second of audio.
pub fn embed_chunk(spectrogram: &Spectrogram, encoder: &Encoder<'_>) -> Result<Embedding> {
    match encoder {
        Encoder::Frozen(f) => f.embed(spectrogram),
        Encoder::Trainable { encoder, params } => {
            let grid = encoder.prepare(spectrogram)?;
            let (out, _) = encoder.forward(params, &grid);
            Embedding::new(out)
        }
    }
}
