//! Laplace mechanism over L1-clipped embedding sequences, with a ledger of
//! the privacy budget spent.
//!
//! Each released second is clipped to `|e_i|_1 <= C`, so removing one second
//! (zeroing its row) moves the sequence by at most `C` in L1. Adding
//! `Laplace(C / epsilon)` noise to every coordinate then makes each release
//! `(epsilon, 0)`-differentially private per second, and `T` released seconds
//! compose to `epsilon * T`.

use std::path::Path;

use ndarray::Array2;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::matrix_io::{self, DpTag};
use crate::embed::{clip_in_place, l1, ClipBound, EmbeddingSequence};
use crate::error::{Error, Result};

/// Clip radius and per-second budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    pub clip: ClipBound,
    pub epsilon: f64,
}

impl PrivacyParams {
    pub fn new(clip: f64, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::config(format!(
                "epsilon must be positive and finite, got {epsilon}"
            )));
        }
        Ok(Self {
            clip: ClipBound::new(clip)?,
            epsilon,
        })
    }

    /// Laplace scale `C / epsilon`.
    pub fn noise_scale(&self) -> f64 {
        self.clip.get() / self.epsilon
    }

    pub fn tag(&self) -> DpTag {
        DpTag {
            clip_bound: self.clip.get(),
            epsilon: self.epsilon,
        }
    }
}

/// Randomness for the mechanism.
///
/// Production sources are seeded from OS entropy. A seeded source is
/// reproducible and therefore voids the privacy guarantee; use it for tests
/// and experiments only.
pub struct NoiseSource {
    rng: ChaCha20Rng,
    seeded: bool,
}

impl NoiseSource {
    pub fn from_entropy() -> Self {
        Self {
            rng: ChaCha20Rng::from_entropy(),
            seeded: false,
        }
    }

    /// Deterministic source. Offers no privacy.
    pub fn seeded(seed: u64) -> Self {
        Self {
            rng: ChaCha20Rng::seed_from_u64(seed),
            seeded: true,
        }
    }

    pub fn is_seeded(&self) -> bool {
        self.seeded
    }

    /// One draw from `Laplace(0, 1)`.
    pub fn standard_laplace(&mut self) -> f64 {
        standard_laplace(&mut self.rng)
    }
}

impl RngCore for NoiseSource {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}

/// Inverse-CDF draw: `u ~ U(-1/2, 1/2)`, `x = -sign(u) ln(1 - 2|u|)`.
pub(crate) fn standard_laplace<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.gen::<f64>() - 0.5;
        if u > -0.5 {
            return -u.signum() * (1.0 - 2.0 * u.abs()).ln();
        }
    }
}

/// One draw from `Laplace(0, b)`.
pub fn laplace_sample<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> Result<f64> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::config(format!(
            "laplace scale must be positive, got {scale}"
        )));
    }
    Ok(scale * standard_laplace(rng))
}

/// Running total of released seconds at a fixed per-second epsilon.
///
/// The spent budget is computed on read as `count * epsilon`, so it never
/// accumulates rounding drift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyLedger {
    clips_released: u64,
    per_clip_epsilon: f64,
}

#[derive(Serialize, Deserialize)]
struct LedgerJson {
    clips_released: u64,
    per_clip_epsilon: f64,
    total_spent: f64,
}

impl PrivacyLedger {
    pub fn new(per_clip_epsilon: f64) -> Result<Self> {
        if !(per_clip_epsilon > 0.0) || !per_clip_epsilon.is_finite() {
            return Err(Error::config("ledger epsilon must be positive and finite"));
        }
        Ok(Self {
            clips_released: 0,
            per_clip_epsilon,
        })
    }

    pub fn clips_released(&self) -> u64 {
        self.clips_released
    }

    pub fn per_clip_epsilon(&self) -> f64 {
        self.per_clip_epsilon
    }

    pub fn total_spent(&self) -> f64 {
        self.clips_released as f64 * self.per_clip_epsilon
    }

    fn charge(&mut self, clips: u64) {
        self.clips_released += clips;
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&LedgerJson {
            clips_released: self.clips_released,
            per_clip_epsilon: self.per_clip_epsilon,
            total_spent: self.total_spent(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let j: LedgerJson = serde_json::from_str(s)?;
        let ledger = Self {
            clips_released: j.clips_released,
            per_clip_epsilon: j.per_clip_epsilon,
        };
        if ledger.per_clip_epsilon <= 0.0 || ledger.total_spent() != j.total_spent {
            return Err(Error::data(
                "ledger total does not equal count times epsilon",
            ));
        }
        Ok(ledger)
    }
}

/// What `privatize` does with a row outside the clip ball.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Enforcement {
    /// Clip the row, then add noise.
    #[default]
    Reclip,
    /// Refuse the release.
    Reject,
}

/// Adds i.i.d. `Laplace(C / epsilon)` noise to every coordinate and charges
/// the ledger one epsilon per row. The input is not modified.
pub fn privatize<R: Rng + ?Sized>(
    seq: &EmbeddingSequence,
    params: &PrivacyParams,
    rng: &mut R,
    ledger: &mut PrivacyLedger,
    enforcement: Enforcement,
) -> Result<EmbeddingSequence> {
    if ledger.per_clip_epsilon() != params.epsilon {
        return Err(Error::Privacy(format!(
            "ledger tracks epsilon {} but release uses {}",
            ledger.per_clip_epsilon(),
            params.epsilon
        )));
    }
    let c = params.clip;
    let mut rows = seq.rows.clone();
    for (i, mut row) in rows.rows_mut().into_iter().enumerate() {
        let slice = row.as_slice_mut().expect("owned rows are contiguous");
        if l1(slice) > c.get() {
            match enforcement {
                Enforcement::Reclip => {
                    clip_in_place(slice, c);
                }
                Enforcement::Reject => {
                    return Err(Error::Privacy(format!(
                        "row {i} has L1 norm {} above the clip bound {}",
                        l1(slice),
                        c.get()
                    )));
                }
            }
        }
    }
    let b = params.noise_scale();
    rows.iter_mut()
        .for_each(|v| *v += b * standard_laplace(rng));
    ledger.charge(seq.len() as u64);
    EmbeddingSequence::new(rows, seq.timestamps.clone())
}

/// L1 distance between two sequences that differ in at most one row.
pub fn sensitivity_audit(with_row: &Array2<f64>, without_row: &Array2<f64>) -> Result<f64> {
    if with_row.dim() != without_row.dim() {
        return Err(Error::shape("audited sequences differ in shape"));
    }
    let differing = with_row
        .rows()
        .into_iter()
        .zip(without_row.rows())
        .filter(|(a, b)| a != b)
        .count();
    if differing > 1 {
        return Err(Error::data(format!(
            "sequences differ in {differing} rows, expected at most one"
        )));
    }
    Ok(with_row
        .iter()
        .zip(without_row.iter())
        .map(|(a, b)| (a - b).abs())
        .sum())
}

/// Writes a privatized sequence as a DP-flagged matrix file.
pub fn save_privatized(
    path: impl AsRef<Path>,
    seq: &EmbeddingSequence,
    params: &PrivacyParams,
) -> Result<()> {
    matrix_io::save_matrix(path, &seq.rows, Some(params.tag()))
}
