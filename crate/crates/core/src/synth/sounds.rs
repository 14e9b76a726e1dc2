//! Source waveforms for the simulated room, each a pure function of its seed.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;

/// One-pole low-pass coefficient for cutoff `fc`.
fn lp_coef(fc: f64, fs: f64) -> f64 {
    1.0 - (-2.0 * PI * fc / fs).exp()
}

fn lowpass(x: &mut [f64], fc: f64, fs: f64) {
    let a = lp_coef(fc, fs);
    let mut y = 0.0;
    for v in x.iter_mut() {
        y += a * (*v - y);
        *v = y;
    }
}

fn highpass(x: &mut [f64], fc: f64, fs: f64) {
    let a = lp_coef(fc, fs);
    let mut y = 0.0;
    for v in x.iter_mut() {
        y += a * (*v - y);
        *v -= y;
    }
}

fn normal(rng: &mut Xoshiro256PlusPlus) -> f64 {
    rng.sample(StandardNormal)
}

fn white(rng: &mut Xoshiro256PlusPlus, n: usize) -> Vec<f64> {
    (0..n).map(|_| normal(rng)).collect()
}

/// Scales to unit RMS.
fn normalize(x: &mut [f64]) {
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v /= rms);
    }
}

/// Short linear fades so sources start and stop without clicks.
fn fade(x: &mut [f64], len: usize) {
    let n = x.len();
    let len = len.min(n / 2);
    for i in 0..len {
        let g = i as f64 / len as f64;
        x[i] *= g;
        x[n - 1 - i] *= g;
    }
}

pub(super) fn cough(seed: u64, n: usize, fs: f64) -> Vec<f64> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut x = white(&mut rng, n);
    lowpass(&mut x, rng.gen_range(2000.0..3500.0), fs);
    highpass(&mut x, 300.0, fs);
    let tau = n as f64 / fs / 4.0;
    let attack = 0.01 * fs;
    for (i, v) in x.iter_mut().enumerate() {
        let t = i as f64 / fs;
        let a = (i as f64 / attack).min(1.0);
        *v *= a * (-t / tau).exp();
    }
    normalize(&mut x);
    fade(&mut x, 16);
    x
}

pub(super) fn footsteps(seed: u64, steps: usize, interval: f64, fs: f64) -> Vec<f64> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let n = (steps as f64 * interval * fs).round() as usize;
    let mut x = vec![0.0; n];
    let click = (0.04 * fs) as usize;
    for s in 0..steps {
        let jitter = rng.gen_range(-0.03..0.03);
        let start = (((s as f64 + 0.1) * interval + jitter) * fs).max(0.0) as usize;
        let amp = rng.gen_range(0.6..1.0);
        let thump = rng.gen_range(60.0..110.0);
        for k in 0..click.min(n.saturating_sub(start)) {
            let t = k as f64 / fs;
            let env = (-t / 0.008).exp();
            x[start + k] += amp * env * (0.6 * normal(&mut rng) + (2.0 * PI * thump * t).sin());
        }
    }
    lowpass(&mut x, 1200.0, fs);
    normalize(&mut x);
    fade(&mut x, 16);
    x
}

pub(super) fn rustle(seed: u64, n: usize, fs: f64) -> Vec<f64> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut x = white(&mut rng, n);
    highpass(&mut x, rng.gen_range(800.0..1500.0), fs);
    lowpass(&mut x, 6000.0, fs);
    let rate = rng.gen_range(1.0..3.0);
    let phase = rng.gen_range(0.0..2.0 * PI);
    for (i, v) in x.iter_mut().enumerate() {
        let t = i as f64 / fs;
        let window = (PI * i as f64 / n as f64).sin();
        let wobble = 0.65 + 0.35 * (2.0 * PI * rate * t + phase).sin();
        *v *= window * wobble;
    }
    normalize(&mut x);
    x
}

/// Harmonic voiced tone with formant-shaped partials and syllable-rate
/// amplitude modulation near 4 Hz.
pub(super) fn speech(seed: u64, n: usize, fs: f64) -> Vec<f64> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let f0 = rng.gen_range(100.0..220.0);
    let syllable_rate = rng.gen_range(3.5..5.0);
    let am_phase = rng.gen_range(0.0..2.0 * PI);
    let vib_rate = rng.gen_range(0.3..1.0);
    let vib_phase = rng.gen_range(0.0..2.0 * PI);
    let formants = [
        rng.gen_range(450.0..750.0),
        rng.gen_range(1100.0..1900.0),
        rng.gen_range(2300.0..2900.0),
    ];
    let partials = ((3500.0 / f0) as usize).max(1);
    let amps: Vec<f64> = (1..=partials)
        .map(|k| {
            let f = f0 * k as f64;
            let shape: f64 = formants
                .iter()
                .map(|fm| (-((f - fm) / 250.0).powi(2)).exp())
                .sum();
            (0.15 + shape) / k as f64
        })
        .collect();
    let mut phase = 0.0;
    let mut x = vec![0.0; n];
    for (i, v) in x.iter_mut().enumerate() {
        let t = i as f64 / fs;
        let f = f0 * (1.0 + 0.06 * (2.0 * PI * vib_rate * t + vib_phase).sin());
        phase += 2.0 * PI * f / fs;
        if phase > 2.0 * PI {
            phase -= 2.0 * PI;
        }
        let mut s = 0.0;
        for (k, a) in amps.iter().enumerate() {
            s += a * ((k + 1) as f64 * phase).sin();
        }
        let am = (0.5 - 0.5 * (2.0 * PI * syllable_rate * t + am_phase).cos()).powf(1.5);
        *v = s * am;
    }
    normalize(&mut x);
    fade(&mut x, (0.02 * fs) as usize);
    x
}

/// Pink noise by Kellet's filter, unit RMS, with a warm-up so any block
/// starts in steady state.
pub(super) fn pink(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let warm = 2048;
    let mut b = [0.0f64; 7];
    let mut x = Vec::with_capacity(n);
    for i in 0..n + warm {
        let w: f64 = rng.gen_range(-1.0..1.0);
        b[0] = 0.99886 * b[0] + w * 0.0555179;
        b[1] = 0.99332 * b[1] + w * 0.0750759;
        b[2] = 0.96900 * b[2] + w * 0.1538520;
        b[3] = 0.86650 * b[3] + w * 0.3104856;
        b[4] = 0.55000 * b[4] + w * 0.5329522;
        b[5] = -0.7616 * b[5] - w * 0.0168980;
        let y = b[0] + b[1] + b[2] + b[3] + b[4] + b[5] + b[6] + w * 0.5362;
        b[6] = w * 0.115926;
        if i >= warm {
            x.push(y);
        }
    }
    normalize(&mut x);
    x
}
