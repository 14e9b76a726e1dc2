use super::{MonoClip, MultichannelClip};
use crate::error::{Error, Result};

/// Delay-and-sum beamformer.
///
/// Channel `m` is advanced by `tdoas[m]` samples (shifted by the negated
/// TDOA), vacated edge samples are zero, and the aligned channels are averaged.
pub fn beamform(clip: &MultichannelClip, tdoas: &[i64]) -> Result<MonoClip> {
    if tdoas.len() != clip.num_channels() {
        return Err(Error::shape(format!(
            "{} lags given for {} channels",
            tdoas.len(),
            clip.num_channels()
        )));
    }
    let len = clip.len() as i64;
    if let Some(bad) = tdoas.iter().find(|lag| lag.abs() >= len) {
        return Err(Error::config(format!(
            "lag {bad} exceeds clip length {len}"
        )));
    }
    let mut out = vec![0.0; clip.len()];
    for (channel, &lag) in clip.channels().iter().zip(tdoas) {
        let (dst, src) = if lag >= 0 {
            (0, lag as usize)
        } else {
            ((-lag) as usize, 0)
        };
        let n = clip.len() - lag.unsigned_abs() as usize;
        for (o, s) in out[dst..dst + n].iter_mut().zip(&channel[src..src + n]) {
            *o += s;
        }
    }
    let scale = 1.0 / clip.num_channels() as f64;
    out.iter_mut().for_each(|s| *s *= scale);
    MonoClip::new(clip.sample_rate(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| ((i * 37) % 11) as f64 / 11.0 - 0.5)
            .collect()
    }

    #[test]
    fn identical_channels_average_to_input() {
        let x = ramp(100);
        let clip = MultichannelClip::new(8_000, vec![x.clone(); 4]).unwrap();
        let out = beamform(&clip, &[0, 0, 0, 0]).unwrap();
        for (a, b) in out.samples().iter().zip(&x) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn realigns_delayed_channel() {
        let x = ramp(200);
        let d = 6;
        let mut y = vec![0.0; d];
        y.extend_from_slice(&x[..200 - d]);
        let clip = MultichannelClip::new(8_000, vec![x.clone(), y]).unwrap();
        let out = beamform(&clip, &[0, d as i64]).unwrap();
        assert_eq!(out.len(), 200);
        for n in 0..200 - d {
            assert!((out.samples()[n] - x[n]).abs() < 1e-15, "sample {n}");
        }
        for n in 200 - d..200 {
            assert!((out.samples()[n] - x[n] / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn single_channel_identity_and_errors() {
        let x = ramp(50);
        let clip = MultichannelClip::new(8_000, vec![x.clone()]).unwrap();
        assert_eq!(beamform(&clip, &[0]).unwrap().samples(), &x[..]);
        assert!(matches!(beamform(&clip, &[0, 1]), Err(Error::Shape(_))));
        assert!(beamform(&clip, &[50]).is_err());
    }

    #[test]
    fn negative_lag_shifts_right() {
        let clip = MultichannelClip::new(8_000, vec![vec![1.0, 2.0, 3.0, 4.0]]).unwrap();
        assert_eq!(
            beamform(&clip, &[-1]).unwrap().samples(),
            &[0.0, 1.0, 2.0, 3.0]
        );
        assert_eq!(
            beamform(&clip, &[2]).unwrap().samples(),
            &[3.0, 4.0, 0.0, 0.0]
        );
    }
}
