//! Held-out evaluation, leave-one-fold-out cross-validation and the privacy
//! sweep.

use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::estimator::{Estimator, EstimatorConfig, Prediction};
use crate::error::{Error, Result};
use crate::eval::{baseline_mean, compute_metrics, MetricsReport, ScoredSecond};
use crate::privacy::NoiseSource;
use crate::synth::mix;

/// Model and mean-baseline metrics on one set of held-out seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldOut {
    pub model: MetricsReport,
    pub baseline: MetricsReport,
    /// Held-out seconds without a prediction (speech under Scheme 1).
    pub unscored_seconds: usize,
}

/// Scores predictions against truth and against the training-mean baseline.
pub fn score(
    dataset: &Dataset,
    train_folds: &[usize],
    test_folds: &[usize],
    points: &[ScoredSecond],
) -> Result<HeldOut> {
    if points.is_empty() {
        return Err(Error::data("no held-out second received a prediction"));
    }
    let pred: Vec<f64> = points.iter().map(|p| p.prediction).collect();
    let truth: Vec<f64> = points.iter().map(|p| p.truth).collect();
    let train_truth = dataset.truth_of(train_folds)?;
    let total: usize = test_folds
        .iter()
        .map(|&k| dataset.fold_range(k).len())
        .sum();
    Ok(HeldOut {
        model: compute_metrics(&pred, &truth)?,
        baseline: baseline_mean(&train_truth, &truth)?,
        unscored_seconds: total - points.len(),
    })
}

/// Noise source for evaluation: seeded when a seed is given, otherwise OS
/// entropy.
pub fn eval_noise(seed: Option<u64>) -> NoiseSource {
    match seed {
        Some(s) => NoiseSource::seeded(s),
        None => NoiseSource::from_entropy(),
    }
}

/// Trains on `train_folds`, predicts `test_folds`.
pub fn train_and_score(
    dataset: &Dataset,
    train_folds: &[usize],
    test_folds: &[usize],
    config: &EstimatorConfig,
    noise_seed: Option<u64>,
) -> Result<(Estimator, Prediction, HeldOut)> {
    let (est, _) = Estimator::fit(dataset, train_folds, config)?;
    let mut noise = eval_noise(noise_seed);
    let pred = est.predict(dataset, test_folds, Some(&mut noise))?;
    let held = score(dataset, train_folds, test_folds, &pred.points)?;
    Ok((est, pred, held))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub seed: u64,
    pub result: HeldOut,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValReport {
    pub folds: Vec<FoldReport>,
    pub mean: MetricsReport,
    pub mean_baseline: MetricsReport,
}

/// Seed of fold `k`, derived from the run seed.
pub fn fold_seed(seed: u64, k: usize) -> u64 {
    mix(seed, k as u64 + 1)
}

/// Leave-one-fold-out: each fold is scored by a model trained on all other
/// folds. Folds run on up to `workers` threads; results do not depend on the
/// worker count.
pub fn cross_validate(
    dataset: &Dataset,
    config: &EstimatorConfig,
    workers: usize,
) -> Result<CrossValReport> {
    let n = dataset.num_folds();
    if n < 2 {
        return Err(Error::config("cross-validation needs at least two folds"));
    }
    let run = |k: usize| -> Result<FoldReport> {
        let train: Vec<usize> = (0..n).filter(|&j| j != k).collect();
        let mut cfg = *config;
        cfg.seed = fold_seed(config.seed, k);
        let (_, _, result) = train_and_score(dataset, &train, &[k], &cfg, Some(cfg.seed))?;
        Ok(FoldReport {
            fold: k,
            seed: cfg.seed,
            result,
        })
    };
    let workers = workers.clamp(1, n);
    let mut slots: Vec<Option<Result<FoldReport>>> = (0..n).map(|_| None).collect();
    if workers == 1 {
        for (k, slot) in slots.iter_mut().enumerate() {
            *slot = Some(run(k));
        }
    } else {
        let next = std::sync::atomic::AtomicUsize::new(0);
        let done = std::sync::Mutex::new(&mut slots);
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let k = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                    if k >= n {
                        break;
                    }
                    let r = run(k);
                    done.lock().expect("fold results lock")[k] = Some(r);
                });
            }
        });
    }
    let folds = slots
        .into_iter()
        .map(|r| r.expect("every fold ran"))
        .collect::<Result<Vec<_>>>()?;
    let mean = mean_report(folds.iter().map(|f| &f.result.model));
    let mean_baseline = mean_report(folds.iter().map(|f| &f.result.baseline));
    Ok(CrossValReport {
        folds,
        mean,
        mean_baseline,
    })
}

fn mean_report<'a>(reports: impl Iterator<Item = &'a MetricsReport>) -> MetricsReport {
    let all: Vec<&MetricsReport> = reports.collect();
    let k = all.len() as f64;
    MetricsReport {
        mae: all.iter().map(|r| r.mae).sum::<f64>() / k,
        rmse: all.iter().map(|r| r.rmse).sum::<f64>() / k,
        rho: all.iter().map(|r| r.rho).sum::<f64>() / k,
        n: all.iter().map(|r| r.n).sum(),
    }
}

/// Budgets swept by default, strongest privacy last.
pub const DEFAULT_EPSILONS: [f64; 6] = [5.0, 2.0, 1.0, 0.5, 0.25, 0.1];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSettings {
    pub clip: f64,
    /// Epochs of noise-aware training per budget.
    pub epochs: usize,
    /// Start each budget from the noise-free model instead of a fresh draw.
    pub warm_start: bool,
    /// Independent noisy evaluation passes averaged per budget.
    pub eval_repeats: usize,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            clip: 1.0,
            epochs: 30,
            warm_start: false,
            eval_repeats: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// `None` for the clipped, noise-free reference.
    pub epsilon: Option<f64>,
    pub metrics: MetricsReport,
    /// Budget spent by one evaluation pass.
    pub total_epsilon_spent: f64,
}

/// Noise-free reference first, then one noise-aware model per budget.
/// Evaluation noise for every budget comes from the same seeded stream so
/// the rows differ only through the noise scale and the trained weights.
pub fn dp_sweep(
    dataset: &Dataset,
    train_folds: &[usize],
    test_folds: &[usize],
    base: &EstimatorConfig,
    epsilons: &[f64],
    settings: &SweepSettings,
) -> Result<Vec<SweepRow>> {
    if settings.eval_repeats == 0 {
        return Err(Error::config("at least one evaluation pass is required"));
    }
    let mut reference_cfg = *base;
    reference_cfg.clip = Some(settings.clip);
    reference_cfg.epsilon = None;
    let (reference, _) = Estimator::fit(dataset, train_folds, &reference_cfg)?;
    let mut rows = vec![evaluate_repeated(
        dataset,
        train_folds,
        test_folds,
        &reference,
        base.seed,
        settings,
    )?];
    for &eps in epsilons {
        let mut cfg = reference_cfg;
        cfg.epsilon = Some(eps);
        cfg.epochs = settings.epochs;
        let init = settings.warm_start.then_some(&reference);
        let (est, _) = Estimator::fit_from(dataset, train_folds, &cfg, init)?;
        rows.push(evaluate_repeated(
            dataset,
            train_folds,
            test_folds,
            &est,
            base.seed,
            settings,
        )?);
    }
    Ok(rows)
}

/// Evaluates one trained, clipped model under inference noise at each
/// budget, without retraining.
pub fn inference_sweep(
    dataset: &Dataset,
    train_folds: &[usize],
    test_folds: &[usize],
    model: &Estimator,
    epsilons: &[f64],
    settings: &SweepSettings,
) -> Result<Vec<SweepRow>> {
    if settings.eval_repeats == 0 {
        return Err(Error::config("at least one evaluation pass is required"));
    }
    let seed = model.config().seed;
    let mut rows = Vec::new();
    if model.config().epsilon.is_none() {
        rows.push(evaluate_repeated(
            dataset,
            train_folds,
            test_folds,
            model,
            seed,
            settings,
        )?);
    }
    for &eps in epsilons {
        let est = model.with_epsilon(eps)?;
        rows.push(evaluate_repeated(
            dataset,
            train_folds,
            test_folds,
            &est,
            seed,
            settings,
        )?);
    }
    Ok(rows)
}

fn evaluate_repeated(
    dataset: &Dataset,
    train_folds: &[usize],
    test_folds: &[usize],
    est: &Estimator,
    seed: u64,
    settings: &SweepSettings,
) -> Result<SweepRow> {
    let mut reports = Vec::new();
    let mut spent = 0.0;
    for r in 0..settings.eval_repeats {
        let mut noise = NoiseSource::seeded(mix(seed, 0x6576_616c_0000 + r as u64));
        let pred = est.predict(dataset, test_folds, Some(&mut noise))?;
        spent = pred.ledger.map_or(0.0, |l| l.total_spent());
        reports.push(score(dataset, train_folds, test_folds, &pred.points)?.model);
    }
    Ok(SweepRow {
        epsilon: est.config().epsilon,
        metrics: mean_report(reports.iter()),
        total_epsilon_spent: spent,
    })
}

/// Renders sweep rows as `epsilon,mae,rmse,rho` CSV.
pub fn write_sweep_csv<W: std::io::Write>(w: W, rows: &[SweepRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["epsilon", "mae", "rmse", "rho", "total_epsilon_spent"])?;
    for r in rows {
        let eps = r
            .epsilon
            .map_or_else(|| "none".to_string(), |e| e.to_string());
        out.write_record([
            eps,
            format!("{:.6}", r.metrics.mae),
            format!("{:.6}", r.metrics.rmse),
            format!("{:.6}", r.metrics.rho),
            format!("{}", r.total_epsilon_spent),
        ])?;
    }
    out.flush()?;
    Ok(())
}
