//! Per-second features paired with ground truth, split into contiguous fold
//! segments, and cut into transformer windows.

use std::ops::Range;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::features::FeatureTable;
use crate::error::{Error, Result};
use crate::eval::OccupancySeries;
use crate::gate::{Assembler, LabeledChunk, Maskable, Scheme, Scheme1Assembler, Scheme2Assembler};

/// How seconds become windows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowSpec {
    pub scheme: Scheme,
    pub window: usize,
    pub threshold: f64,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            scheme: Scheme::Discard,
            window: crate::gate::DEFAULT_WINDOW,
            threshold: crate::gate::SPEECH_THRESHOLD,
        }
    }
}

impl WindowSpec {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::config("window must be at least one second"));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::config("speech threshold must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// A second of the feature table, possibly replaced by silence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SecondRef {
    pub index: usize,
    pub masked: bool,
}

impl Maskable for SecondRef {
    fn masked(&self) -> Self {
        Self {
            masked: true,
            ..*self
        }
    }
}

/// A window of table rows with its targets.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowRef {
    pub fold: usize,
    pub seconds: Vec<SecondRef>,
    pub probs: Vec<f64>,
    pub timestamps: Vec<u64>,
    pub targets: Vec<f64>,
}

impl WindowRef {
    pub fn len(&self) -> usize {
        self.seconds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seconds.is_empty()
    }
}

/// Features and truth for one recording, tagged with contiguous folds.
#[derive(Debug)]
pub struct Dataset {
    features: FeatureTable,
    truth: Vec<f64>,
    folds: usize,
    reads: Vec<AtomicU64>,
}

impl Dataset {
    /// Pairs feature row `i` with the truth count at `features.times[i]`.
    pub fn new(features: FeatureTable, truth: &OccupancySeries, folds: usize) -> Result<Self> {
        if folds == 0 {
            return Err(Error::config("at least one fold is required"));
        }
        if features.len() < folds {
            return Err(Error::data(format!(
                "{} seconds cannot form {folds} folds",
                features.len()
            )));
        }
        let targets = features
            .times
            .iter()
            .map(|&t| {
                truth
                    .at(t)
                    .map(f64::from)
                    .ok_or_else(|| Error::data(format!("no ground truth for second {t}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            features,
            truth: targets,
            folds,
            reads: (0..folds).map(|_| AtomicU64::new(0)).collect(),
        })
    }

    pub fn features(&self) -> &FeatureTable {
        &self.features
    }

    /// Truth aligned with the feature rows.
    pub fn truth(&self) -> &[f64] {
        &self.truth
    }

    pub fn len(&self) -> usize {
        self.truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.is_empty()
    }

    pub fn num_folds(&self) -> usize {
        self.folds
    }

    /// Feature rows belonging to fold `k`.
    pub fn fold_range(&self, k: usize) -> Range<usize> {
        let n = self.len();
        k * n / self.folds..(k + 1) * n / self.folds
    }

    pub fn fold_of(&self, row: usize) -> usize {
        (0..self.folds)
            .find(|&k| self.fold_range(k).contains(&row))
            .unwrap_or(self.folds - 1)
    }

    /// How many times each fold's rows have been read since the last reset.
    pub fn access_counts(&self) -> Vec<u64> {
        self.reads
            .iter()
            .map(|r| r.load(Ordering::Relaxed))
            .collect()
    }

    pub fn reset_access_counts(&self) {
        for r in &self.reads {
            r.store(0, Ordering::Relaxed);
        }
    }

    /// Truth values of the given folds.
    pub fn truth_of(&self, folds: &[usize]) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        for &k in folds {
            self.check_fold(k)?;
            out.extend_from_slice(&self.truth[self.fold_range(k)]);
        }
        Ok(out)
    }

    /// Windows of the given folds. Windows never straddle a fold boundary.
    /// With `tail`, the leftover seconds at the end of each fold form one
    /// shorter window.
    pub fn windows(
        &self,
        folds: &[usize],
        spec: &WindowSpec,
        tail: bool,
    ) -> Result<Vec<WindowRef>> {
        spec.validate()?;
        let mut out = Vec::new();
        for &k in folds {
            self.check_fold(k)?;
            self.reads[k].fetch_add(1, Ordering::Relaxed);
            let before = out.len();
            self.fold_windows(k, spec, tail, &mut out)?;
            if out.len() == before {
                return Err(Error::data(format!("fold {k} yields no windows")));
            }
        }
        Ok(out)
    }

    fn check_fold(&self, k: usize) -> Result<()> {
        if k >= self.folds {
            return Err(Error::config(format!(
                "fold {k} out of range (0..{})",
                self.folds
            )));
        }
        Ok(())
    }

    fn fold_windows(
        &self,
        k: usize,
        spec: &WindowSpec,
        tail: bool,
        out: &mut Vec<WindowRef>,
    ) -> Result<()> {
        let range = self.fold_range(k);
        let mut asm: Box<dyn Assembler<SecondRef>> = match spec.scheme {
            Scheme::Discard => Box::new(Scheme1Assembler::with_threshold(
                spec.window,
                spec.threshold,
            )),
            Scheme::ZeroMask => Box::new(Scheme2Assembler::with_threshold(
                spec.window,
                spec.threshold,
            )),
        };
        let mut next_uncovered = range.start;
        for i in range.clone() {
            let p = self.features.speech_prob[i];
            let chunk = LabeledChunk::new(
                SecondRef {
                    index: i,
                    masked: false,
                },
                p,
                self.features.times[i],
            )?;
            if let Some(w) = asm.push(chunk) {
                next_uncovered = i + 1;
                out.push(self.window_ref(k, w.chunks, w.probs, w.timestamps));
            }
        }
        if tail {
            let mut seconds = Vec::new();
            for i in next_uncovered..range.end {
                let speech = self.features.speech_prob[i] > spec.threshold;
                match (spec.scheme, speech) {
                    (Scheme::Discard, true) => {}
                    (_, masked) => seconds.push(SecondRef { index: i, masked }),
                }
            }
            if !seconds.is_empty() {
                let probs = seconds
                    .iter()
                    .map(|s| self.features.speech_prob[s.index])
                    .collect();
                let times = seconds
                    .iter()
                    .map(|s| self.features.times[s.index])
                    .collect();
                out.push(self.window_ref(k, seconds, probs, times));
            }
        }
        Ok(())
    }

    fn window_ref(
        &self,
        fold: usize,
        seconds: Vec<SecondRef>,
        probs: Vec<f64>,
        timestamps: Vec<u64>,
    ) -> WindowRef {
        let targets = seconds.iter().map(|s| self.truth[s.index]).collect();
        WindowRef {
            fold,
            seconds,
            probs,
            timestamps,
            targets,
        }
    }
}

#[cfg(test)]
mod tests {
    use ndarray::Array2;

    use super::*;

    fn table(probs: &[f64]) -> FeatureTable {
        let n = probs.len();
        FeatureTable {
            times: (0..n as u64).collect(),
            speech_prob: probs.to_vec(),
            grids: Array2::zeros((n, 4)),
            summaries: Array2::zeros((n, 4)),
            tdoas: vec![vec![0]; n],
        }
    }

    fn truth(n: usize) -> OccupancySeries {
        OccupancySeries {
            counts: (0..n as u32).collect(),
            start_time: 0,
        }
    }

    #[test]
    fn folds_partition_the_rows() {
        let ds = Dataset::new(table(&[0.0; 103]), &truth(103), 10).unwrap();
        let mut covered = 0;
        for k in 0..10 {
            let r = ds.fold_range(k);
            assert_eq!(r.start, covered);
            covered = r.end;
            assert!(r.len() == 10 || r.len() == 11);
        }
        assert_eq!(covered, 103);
        assert_eq!(ds.fold_of(0), 0);
        assert_eq!(ds.fold_of(102), 9);
    }

    #[test]
    fn scheme1_windows_stay_inside_folds_and_skip_speech() {
        let mut probs = vec![0.0; 40];
        for i in (0..40).step_by(3) {
            probs[i] = 0.9;
        }
        let ds = Dataset::new(table(&probs), &truth(40), 2).unwrap();
        let spec = WindowSpec {
            scheme: Scheme::Discard,
            window: 4,
            threshold: 0.5,
        };
        let ws = ds.windows(&[0, 1], &spec, false).unwrap();
        for w in &ws {
            assert_eq!(w.len(), 4);
            let r = ds.fold_range(w.fold);
            for s in &w.seconds {
                assert!(r.contains(&s.index));
                assert!(probs[s.index] <= 0.5);
                assert!(!s.masked);
            }
            assert_eq!(
                w.targets,
                w.seconds.iter().map(|s| s.index as f64).collect::<Vec<_>>()
            );
        }
        let with_tail = ds.windows(&[0, 1], &spec, true).unwrap();
        let kept: usize = with_tail.iter().map(|w| w.len()).sum();
        assert_eq!(kept, probs.iter().filter(|p| **p <= 0.5).count());
    }

    #[test]
    fn scheme2_keeps_the_grid_and_masks_speech() {
        let probs = [0.1, 0.9, 0.2, 0.3, 0.8, 0.1, 0.0];
        let ds = Dataset::new(table(&probs), &truth(7), 1).unwrap();
        let spec = WindowSpec {
            scheme: Scheme::ZeroMask,
            window: 3,
            threshold: 0.5,
        };
        let ws = ds.windows(&[0], &spec, true).unwrap();
        assert_eq!(ws.len(), 3);
        assert_eq!(ws[2].len(), 1);
        let masked: Vec<bool> = ws
            .iter()
            .flat_map(|w| w.seconds.iter().map(|s| s.masked))
            .collect();
        assert_eq!(masked, vec![false, true, false, false, true, false, false]);
        assert_eq!(ws[0].probs, vec![0.1, 0.9, 0.2]);
    }

    #[test]
    fn access_counters_track_reads() {
        let ds = Dataset::new(table(&[0.0; 30]), &truth(30), 3).unwrap();
        let spec = WindowSpec {
            window: 5,
            ..Default::default()
        };
        ds.windows(&[0, 2], &spec, false).unwrap();
        assert_eq!(ds.access_counts(), vec![1, 0, 1]);
        ds.reset_access_counts();
        assert_eq!(ds.access_counts(), vec![0, 0, 0]);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(Dataset::new(table(&[0.0; 5]), &truth(5), 0).is_err());
        assert!(Dataset::new(table(&[0.0; 5]), &truth(3), 1).is_err());
        let ds = Dataset::new(table(&[0.9; 20]), &truth(20), 2).unwrap();
        let spec = WindowSpec {
            window: 5,
            ..Default::default()
        };
        assert!(matches!(ds.windows(&[0], &spec, true), Err(Error::Data(_))));
        assert!(matches!(
            ds.windows(&[2], &spec, true),
            Err(Error::Config(_))
        ));
    }
}
