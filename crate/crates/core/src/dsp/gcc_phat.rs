use std::collections::HashMap;
use std::sync::Arc;

use realfft::num_complex::Complex;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};

use super::MonoClip;
use crate::error::{Error, Result};

/// Magnitude floor applied before PHAT normalization.
pub const PHAT_FLOOR: f64 = 1e-12;

/// GCC-PHAT delay estimator with cached FFT plans.
///
/// Plans are keyed by transform length, so one instance amortizes planning
/// across many equal-length blocks.
#[derive(Default)]
pub struct GccPhat {
    planner: RealFftPlanner<f64>,
    plans: HashMap<usize, (Arc<dyn RealToComplex<f64>>, Arc<dyn ComplexToReal<f64>>)>,
}

impl GccPhat {
    pub fn new() -> Self {
        Self::default()
    }

    fn plans(&mut self, n: usize) -> (Arc<dyn RealToComplex<f64>>, Arc<dyn ComplexToReal<f64>>) {
        let planner = &mut self.planner;
        self.plans
            .entry(n)
            .or_insert_with(|| (planner.plan_fft_forward(n), planner.plan_fft_inverse(n)))
            .clone()
    }

    fn spectrum(&mut self, signal: &[f64], n: usize) -> Vec<Complex<f64>> {
        let (fwd, _) = self.plans(n);
        let mut input = vec![0.0; n];
        input[..signal.len()].copy_from_slice(signal);
        let mut out = fwd.make_output_vec();
        fwd.process(&mut input, &mut out)
            .expect("fft buffer sizes are fixed by the plan");
        out
    }

    /// PHAT-weighted cross-correlation of `reference` against `other` for
    /// lags `-max_lag..=max_lag`, indexed by `lag + max_lag`.
    pub fn correlation(
        &mut self,
        reference: &[f64],
        other: &[f64],
        max_lag: usize,
    ) -> Result<Vec<f64>> {
        check_inputs(reference, other, max_lag)?;
        let n = (reference.len() + max_lag).next_power_of_two();
        let ref_spec = self.spectrum(reference, n);
        let other_spec = self.spectrum(other, n);
        let mut cross: Vec<Complex<f64>> = ref_spec
            .iter()
            .zip(&other_spec)
            .map(|(r, o)| {
                let g = r.conj() * o;
                g / g.norm().max(PHAT_FLOOR)
            })
            .collect();
        // DC and Nyquist bins of a real spectrum must be purely real.
        cross[0].im = 0.0;
        let last = cross.len() - 1;
        cross[last].im = 0.0;
        let (_, inv) = self.plans(n);
        let mut corr = inv.make_output_vec();
        inv.process(&mut cross, &mut corr)
            .expect("fft buffer sizes are fixed by the plan");
        let out = (-(max_lag as isize)..=max_lag as isize)
            .map(|lag| corr[lag.rem_euclid(n as isize) as usize])
            .collect();
        Ok(out)
    }

    /// Integer TDOA of `other` relative to `reference`; positive when `other`
    /// lags behind.
    pub fn tdoa(&mut self, reference: &[f64], other: &[f64], max_lag: usize) -> Result<i64> {
        let corr = self.correlation(reference, other, max_lag)?;
        Ok(argmax(&corr) as i64 - max_lag as i64)
    }
}

fn check_inputs(reference: &[f64], other: &[f64], max_lag: usize) -> Result<()> {
    if reference.len() != other.len() {
        return Err(Error::shape(format!(
            "gcc-phat inputs differ in length ({} vs {})",
            reference.len(),
            other.len()
        )));
    }
    if reference.is_empty() || 2 * max_lag >= reference.len() {
        return Err(Error::config(format!(
            "max_lag {max_lag} must be below half the clip length {}",
            reference.len()
        )));
    }
    let silent = |x: &[f64]| x.iter().all(|s| *s == 0.0);
    if silent(reference) || silent(other) {
        return Err(Error::NoSignal("gcc-phat input is all zeros".into()));
    }
    Ok(())
}

/// First index of the maximum; ties resolve to the smallest lag.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// GCC-PHAT time difference of arrival between two equal-length clips.
pub fn gcc_phat_tdoa(reference: &MonoClip, other: &MonoClip, max_lag: usize) -> Result<i64> {
    if reference.sample_rate() != other.sample_rate() {
        return Err(Error::shape("gcc-phat inputs differ in sample rate"));
    }
    GccPhat::new().tdoa(reference.samples(), other.samples(), max_lag)
}

/// Time-domain cross-correlation argmax, `sum_n reference[n] * other[n + lag]`.
///
/// Quadratic reference implementation of the lag convention used by
/// [`gcc_phat_tdoa`].
pub fn brute_force_xcorr_lag(reference: &[f64], other: &[f64], max_lag: usize) -> i64 {
    let n = reference.len() as isize;
    let corr: Vec<f64> = (-(max_lag as isize)..=max_lag as isize)
        .map(|lag| {
            (0..n)
                .filter(|i| (0..n).contains(&(i + lag)))
                .map(|i| reference[i as usize] * other[(i + lag) as usize])
                .sum()
        })
        .collect();
    argmax(&corr) as i64 - max_lag as i64
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn noise(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn delayed(x: &[f64], d: i64) -> Vec<f64> {
        (0..x.len() as i64)
            .map(|n| {
                let src = n - d;
                if (0..x.len() as i64).contains(&src) {
                    x[src as usize]
                } else {
                    0.0
                }
            })
            .collect()
    }

    fn mono(x: Vec<f64>) -> MonoClip {
        MonoClip::new(16_000, x).unwrap()
    }

    #[test]
    fn identical_clips_have_zero_lag() {
        let x = noise(2048, 1);
        assert_eq!(gcc_phat_tdoa(&mono(x.clone()), &mono(x), 32).unwrap(), 0);
    }

    #[test]
    fn delayed_and_advanced_copies() {
        let x = noise(2048, 2);
        let late = delayed(&x, 5);
        let early = delayed(&x, -7);
        assert_eq!(brute_force_xcorr_lag(&x, &late, 32), 5);
        assert_eq!(gcc_phat_tdoa(&mono(x.clone()), &mono(late), 32).unwrap(), 5);
        assert_eq!(brute_force_xcorr_lag(&x, &early, 32), -7);
        assert_eq!(gcc_phat_tdoa(&mono(x), &mono(early), 32).unwrap(), -7);
    }

    #[test]
    fn error_paths() {
        let x = noise(64, 3);
        assert!(matches!(
            gcc_phat_tdoa(&mono(x.clone()), &mono(x[..32].to_vec()), 4),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            gcc_phat_tdoa(&mono(x.clone()), &mono(x.clone()), 32),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            gcc_phat_tdoa(&mono(vec![0.0; 64]), &mono(x), 4),
            Err(Error::NoSignal(_))
        ));
    }

    #[test]
    fn matches_brute_force_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut est = GccPhat::new();
        for trial in 0..40 {
            let x = noise(1024, 1000 + trial);
            let d = rng.gen_range(-20i64..=20);
            let y = delayed(&x, d);
            assert_eq!(
                est.tdoa(&x, &y, 20).unwrap(),
                brute_force_xcorr_lag(&x, &y, 20)
            );
        }
    }
}
