//! Ground truth, error metrics, timescale aggregation and reports.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::EntryExitEvent;

/// Per-second head count starting at `start_time`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OccupancySeries {
    pub counts: Vec<u32>,
    pub start_time: u64,
}

impl OccupancySeries {
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }

    /// Count at absolute second `t`, if covered.
    pub fn at(&self, t: u64) -> Option<u32> {
        t.checked_sub(self.start_time)
            .and_then(|i| self.counts.get(i as usize).copied())
    }
}

/// Replays entries and exits from zero. Second `s` counts every event with
/// `timestamp <= s`.
pub fn occupancy_from_events(events: &[EntryExitEvent], duration: u64) -> Result<OccupancySeries> {
    let mut counts = Vec::with_capacity(duration as usize);
    let mut running: i64 = 0;
    let mut next = 0;
    for (i, e) in events.iter().enumerate() {
        if !(e.timestamp >= 0.0 && e.timestamp < duration as f64) {
            return Err(Error::data(format!(
                "event {i} at {} s lies outside [0, {duration})",
                e.timestamp
            )));
        }
        if i > 0 && e.timestamp < events[i - 1].timestamp {
            return Err(Error::data(format!("event {i} is out of time order")));
        }
        if e.delta != 1 && e.delta != -1 {
            return Err(Error::data(format!("event {i} has delta {}", e.delta)));
        }
    }
    for s in 0..duration {
        while next < events.len() && events[next].timestamp <= s as f64 {
            running += events[next].delta as i64;
            if running < 0 {
                return Err(Error::data(format!(
                    "occupancy falls below zero at event {next} (t = {} s)",
                    events[next].timestamp
                )));
            }
            next += 1;
        }
        counts.push(running as u32);
    }
    Ok(OccupancySeries {
        counts,
        start_time: 0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mae: f64,
    pub rmse: f64,
    pub rho: f64,
    pub n: usize,
}

/// Pearson correlation, or 0 when either side has no variance.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return 0.0;
    }
    (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)
}

pub fn compute_metrics(pred: &[f64], truth: &[f64]) -> Result<MetricsReport> {
    if pred.len() != truth.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} truth values",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::data("cannot score an empty series"));
    }
    let n = pred.len() as f64;
    let mae = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t).abs())
        .sum::<f64>()
        / n;
    let mse = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n;
    Ok(MetricsReport {
        mae,
        rmse: mse.sqrt(),
        rho: pearson(pred, truth),
        n: pred.len(),
    })
}

/// Scores a constant predictor equal to the training mean.
pub fn baseline_mean(train_truth: &[f64], test_truth: &[f64]) -> Result<MetricsReport> {
    if train_truth.is_empty() {
        return Err(Error::data("baseline needs training targets"));
    }
    let mean = train_truth.iter().sum::<f64>() / train_truth.len() as f64;
    compute_metrics(&vec![mean; test_truth.len()], test_truth)
}

/// Means of consecutive non-overlapping windows; a trailing partial window
/// is dropped.
pub fn aggregate(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::config(
            "aggregation window must be at least one second",
        ));
    }
    if window > series.len() {
        return Err(Error::data(format!(
            "window of {window} s exceeds series of {} s",
            series.len()
        )));
    }
    Ok(series
        .chunks_exact(window)
        .map(|c| c.iter().sum::<f64>() / window as f64)
        .collect())
}

/// One scored second.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredSecond {
    pub time: u64,
    pub truth: f64,
    pub prediction: f64,
}

/// Groups scored seconds into wall-clock windows `[k*w, (k+1)*w)` and
/// averages truth and prediction over the seconds present in each. Windows
/// with no scored second, and any window reaching past `end`, are dropped.
pub fn aggregate_aligned(
    points: &[ScoredSecond],
    window: u64,
    end: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if window == 0 {
        return Err(Error::config(
            "aggregation window must be at least one second",
        ));
    }
    let full = end / window;
    let mut sums = vec![(0.0, 0.0, 0usize); full as usize];
    for p in points {
        let k = p.time / window;
        if k < full {
            let s = &mut sums[k as usize];
            s.0 += p.prediction;
            s.1 += p.truth;
            s.2 += 1;
        }
    }
    let (pred, truth) = sums
        .into_iter()
        .filter(|s| s.2 > 0)
        .map(|(p, t, n)| (p / n as f64, t / n as f64))
        .unzip();
    Ok((pred, truth))
}

/// Metrics of the aligned window means at `window` seconds.
pub fn aggregated_metrics(points: &[ScoredSecond], window: u64, end: u64) -> Result<MetricsReport> {
    let (pred, truth) = aggregate_aligned(points, window, end)?;
    if pred.is_empty() {
        return Err(Error::data(format!(
            "no complete {window} s window holds a prediction"
        )));
    }
    compute_metrics(&pred, &truth)
}

/// A named row of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub modality: String,
    pub metrics: MetricsReport,
}

/// Plain-text table with columns model, modality, MAE, RMSE, rho.
pub fn format_table(rows: &[ReportRow]) -> String {
    let mw = rows
        .iter()
        .map(|r| r.model.len())
        .chain([5])
        .max()
        .unwrap_or(5);
    let dw = rows
        .iter()
        .map(|r| r.modality.len())
        .chain([8])
        .max()
        .unwrap_or(8);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<mw$}  {:<dw$}  {:>8}  {:>8}  {:>6}",
        "Model", "Modality", "MAE", "RMSE", "rho"
    );
    for r in rows {
        let m = &r.metrics;
        let _ = writeln!(
            out,
            "{:<mw$}  {:<dw$}  {:>8.3}  {:>8.3}  {:>6.3}",
            r.model, r.modality, m.mae, m.rmse, m.rho
        );
    }
    out
}

/// Plot-ready `time,truth,prediction` rows.
pub fn write_predictions_csv<W: Write>(w: W, points: &[ScoredSecond]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["time", "truth", "prediction"])?;
    for p in points {
        out.write_record([
            p.time.to_string(),
            p.truth.to_string(),
            format!("{:.6}", p.prediction),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn ev(t: f64, d: i32, id: u64) -> EntryExitEvent {
        EntryExitEvent {
            timestamp: t,
            delta: d,
            person_id: id,
        }
    }

    #[test]
    fn ground_truth_examples() {
        let s = occupancy_from_events(&[ev(1.5, 1, 0), ev(3.0, 1, 1), ev(5.2, -1, 0)], 8).unwrap();
        assert_eq!(s.counts, vec![0, 0, 1, 2, 2, 2, 1, 1]);
        assert_eq!(occupancy_from_events(&[], 4).unwrap().counts, vec![0; 4]);
        assert!(occupancy_from_events(&[ev(1.0, -1, 0)], 4).is_err());
        assert!(occupancy_from_events(&[ev(2.0, 1, 0), ev(1.0, 1, 1)], 4).is_err());
        assert!(occupancy_from_events(&[ev(4.0, 1, 0)], 4).is_err());
        assert_eq!(s.at(3), Some(2));
        assert_eq!(s.at(8), None);
    }

    #[test]
    fn metric_examples() {
        let m = compute_metrics(&[1.0, 2.0, 3.0], &[2.0, 2.0, 5.0]).unwrap();
        assert_eq!(m.mae, 1.0);
        assert!((m.rmse - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(
            compute_metrics(&[3.0; 4], &[1.0, 2.0, 3.0, 4.0])
                .unwrap()
                .rho,
            0.0
        );
        let same = compute_metrics(&[1.0, 2.0, 4.0], &[1.0, 2.0, 4.0]).unwrap();
        assert_eq!((same.mae, same.rmse), (0.0, 0.0));
        assert!((same.rho - 1.0).abs() < 1e-12);
        assert_eq!(compute_metrics(&[2.0; 3], &[2.0; 3]).unwrap().rho, 0.0);
        assert!(compute_metrics(&[], &[]).is_err());
        assert!(compute_metrics(&[1.0], &[1.0, 2.0]).is_err());
        assert_eq!(baseline_mean(&[1.0, 3.0], &[0.0, 4.0]).unwrap().mae, 2.0);
    }

    #[test]
    fn aggregate_examples() {
        assert_eq!(aggregate(&[2.0; 10], 3).unwrap(), vec![2.0; 3]);
        let s: Vec<f64> = (0..7200).map(|i| i as f64).collect();
        assert_eq!(aggregate(&s, 3600).unwrap(), vec![1799.5, 5399.5]);
        assert!(aggregate(&s, 7201).is_err());
        assert!(aggregate(&s, 0).is_err());
    }

    #[test]
    fn aligned_aggregation_skips_gaps_and_partial_tail() {
        let pts: Vec<ScoredSecond> = [0u64, 1, 5, 6, 7, 10]
            .iter()
            .map(|&t| ScoredSecond {
                time: t,
                truth: t as f64,
                prediction: 1.0,
            })
            .collect();
        let (p, t) = aggregate_aligned(&pts, 4, 11).unwrap();
        assert_eq!(p, vec![1.0, 1.0]);
        assert_eq!(t, vec![0.5, 6.0]);
    }

    #[test]
    fn table_and_csv() {
        let m = MetricsReport {
            mae: 1.0,
            rmse: 2.0,
            rho: 0.5,
            n: 3,
        };
        let t = format_table(&[ReportRow {
            model: "Transformer".into(),
            modality: "Audio".into(),
            metrics: m,
        }]);
        assert!(t.contains("Transformer") && t.contains("0.500"));
        let mut buf = Vec::new();
        write_predictions_csv(
            &mut buf,
            &[ScoredSecond {
                time: 3,
                truth: 2.0,
                prediction: 1.5,
            }],
        )
        .unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "time,truth,prediction\n3,2,1.500000\n"
        );
    }

    proptest! {
        #[test]
        fn mae_at_most_rmse_and_rho_symmetric(
            pairs in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 1..200)
        ) {
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let m = compute_metrics(&a, &b).unwrap();
            prop_assert!(m.mae <= m.rmse + 1e-12);
            prop_assert!((-1.0..=1.0).contains(&m.rho));
            prop_assert_eq!(pearson(&a, &b), pearson(&b, &a));
        }

        #[test]
        fn aggregate_commutes_with_integer_shift(
            xs in prop::collection::vec(-1000i32..1000, 1..300),
            c in -100i32..100,
            w in 1usize..20,
        ) {
            let x: Vec<f64> = xs.iter().map(|&v| v as f64).collect();
            let shifted: Vec<f64> = x.iter().map(|v| v + c as f64).collect();
            prop_assume!(w <= x.len());
            let a = aggregate(&x, w).unwrap();
            let b = aggregate(&shifted, w).unwrap();
            for (p, q) in a.iter().zip(&b) {
                prop_assert!((p + c as f64 - q).abs() <= 1e-9);
            }
        }
    }
}
