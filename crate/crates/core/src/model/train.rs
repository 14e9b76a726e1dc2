//! MSE loss and the per-window Adam training loop.

use std::io::Write;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::net::{FrontInput, NetInput, OccupancyNet};
use crate::model::optim::{adam_step, AdamConfig, OptimState};
use crate::privacy::{standard_laplace, PrivacyParams};

pub fn mse_loss(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} targets",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::shape("empty series"));
    }
    Ok(pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / pred.len() as f64)
}

/// Derivative of [`mse_loss`] with respect to each prediction.
pub fn mse_grad(pred: &[f64], truth: &[f64]) -> Vec<f64> {
    let n = pred.len() as f64;
    pred.iter()
        .zip(truth)
        .map(|(p, t)| 2.0 * (p - t) / n)
        .collect()
}

/// Per-second network inputs of one training window.
#[derive(Debug, Clone, PartialEq)]
pub enum WindowFront {
    Rows(Array2<f64>),
    Grids(Vec<Vec<f64>>),
}

/// One window with its per-second targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingWindow {
    pub front: WindowFront,
    pub probs: Vec<f64>,
    pub targets: Vec<f64>,
    pub timestamps: Vec<u64>,
}

impl TrainingWindow {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn input(&self) -> NetInput<'_> {
        let front = match &self.front {
            WindowFront::Rows(r) => FrontInput::Rows(r.view()),
            WindowFront::Grids(g) => FrontInput::Grids(g),
        };
        NetInput {
            front,
            probs: Some(&self.probs),
            noise: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Start the head bias at the mean training target.
    pub init_bias_to_mean: bool,
    /// Inject Laplace noise at the release boundary during training.
    pub dp: Option<PrivacyParams>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            adam: AdamConfig::default(),
            seed: 0,
            init_bias_to_mean: true,
            dp: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean per-window loss of each epoch.
    pub loss_history: Vec<f64>,
    pub steps: u64,
}

const NOISE_STREAM: u64 = 0x6e6f_6973_6500_0001;

/// Trains in place. Each step is one window; the window order is reshuffled
/// every epoch from `config.seed`. With `dp` set, every forward pass sees
/// fresh `Laplace(C / epsilon)` noise drawn from a stream that depends only
/// on the seed, so runs at different epsilon share the same standardized
/// draws.
pub fn train(
    net: &mut OccupancyNet,
    windows: &[TrainingWindow],
    config: &TrainConfig,
) -> Result<TrainReport> {
    if windows.is_empty() {
        return Err(Error::data("training set is empty"));
    }
    if config.epochs == 0 {
        return Err(Error::config("epochs must be at least 1"));
    }
    config.adam.validate()?;
    for (i, w) in windows.iter().enumerate() {
        if w.is_empty() || w.probs.len() != w.len() || w.timestamps.len() != w.len() {
            return Err(Error::shape(format!("training window {i} is inconsistent")));
        }
        if w.targets.iter().any(|t| !t.is_finite()) {
            return Err(Error::data(format!(
                "training window {i} has non-finite targets"
            )));
        }
    }
    if let Some(dp) = &config.dp {
        if net.config().clip != Some(dp.clip) {
            return Err(Error::config(
                "noise-aware training needs the network clip bound to match the privacy clip bound",
            ));
        }
    }
    if config.init_bias_to_mean {
        let n: usize = windows.iter().map(|w| w.len()).sum();
        let mean = windows.iter().flat_map(|w| &w.targets).sum::<f64>() / n as f64;
        net.set_head_bias(mean);
    }

    let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(config.seed ^ NOISE_STREAM);
    let mut state = OptimState::new(net.params());
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let release_dim = net.config().release_dim();

    for epoch in 0..config.epochs {
        order.shuffle(&mut order_rng);
        let mut total = 0.0;
        for &i in &order {
            let w = &windows[i];
            let noise = config.dp.map(|dp| {
                let b = dp.noise_scale();
                Array2::from_shape_simple_fn((w.len(), release_dim), || {
                    b * standard_laplace(&mut noise_rng)
                })
            });
            let mut input = w.input();
            input.noise = noise.as_ref().map(|n| n.view());
            let (pred, cache) = net.forward(&input)?;
            let loss = mse_loss(&pred, &w.targets)?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "loss diverged at epoch {} on window {i}",
                    epoch + 1
                )));
            }
            total += loss;
            let grads = net.backward(&cache, &mse_grad(&pred, &w.targets))?;
            if !grads.all_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite gradient at epoch {} on window {i}",
                    epoch + 1
                )));
            }
            adam_step(net.params_mut(), &grads, &mut state, &config.adam)?;
        }
        history.push(total / windows.len() as f64);
    }
    Ok(TrainReport {
        loss_history: history,
        steps: state.step,
    })
}

/// Writes `epoch,mean_loss` rows.
pub fn write_loss_history<W: Write>(w: W, history: &[f64]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["epoch", "mean_loss"])?;
    for (i, l) in history.iter().enumerate() {
        out.write_record([(i + 1).to_string(), format!("{l:.10}")])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::model::net::NetConfig;
    use crate::model::transformer::TransformerConfig;

    fn small_net(seed: u64, dim: usize) -> OccupancyNet {
        let mut cfg = NetConfig::rows(dim);
        cfg.transformer = TransformerConfig {
            layers: 2,
            heads: 2,
            d_emb: 8,
            d_head: 4,
            window: 10,
            scaled_attention: false,
        };
        OccupancyNet::init(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn window(
        rng: &mut ChaCha8Rng,
        t: usize,
        dim: usize,
        target: impl Fn(&[f64]) -> f64,
    ) -> TrainingWindow {
        let rows = Array2::from_shape_simple_fn((t, dim), || rng.gen_range(-1.0..1.0));
        let targets = rows
            .rows()
            .into_iter()
            .map(|r| target(r.as_slice().unwrap()))
            .collect();
        TrainingWindow {
            front: WindowFront::Rows(rows),
            probs: vec![0.0; t],
            targets,
            timestamps: (0..t as u64).collect(),
        }
    }

    #[test]
    fn mse_examples() {
        assert_eq!(
            mse_loss(&[1.0, 2.0, 3.0], &[2.0, 2.0, 5.0]).unwrap(),
            5.0 / 3.0
        );
        assert_eq!(mse_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!(mse_loss(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn constant_target_is_learned() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let windows: Vec<_> = (0..300).map(|_| window(&mut rng, 10, 8, |_| 2.0)).collect();
        let mut net = small_net(1, 8);
        let cfg = TrainConfig {
            epochs: 30,
            init_bias_to_mean: false,
            seed: 4,
            ..TrainConfig::default()
        };
        let report = train(&mut net, &windows, &cfg).unwrap();
        let h = &report.loss_history;
        assert!(h.last().unwrap() < &0.01, "{h:?}");
        for pair in h[3..].windows(2) {
            assert!(pair[1] <= pair[0], "{h:?}");
        }
        let fresh = window(&mut rng, 10, 8, |_| 2.0);
        for p in net.predict(&fresh.input()).unwrap() {
            assert!((p - 2.0).abs() < 0.1, "{p}");
        }
    }

    #[test]
    fn same_seed_same_history() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let windows: Vec<_> = (0..6)
            .map(|_| window(&mut rng, 5, 8, |r| r[0] + 1.0))
            .collect();
        let cfg = TrainConfig {
            epochs: 4,
            seed: 7,
            ..TrainConfig::default()
        };
        let a = train(&mut small_net(2, 8), &windows, &cfg).unwrap();
        let b = train(&mut small_net(2, 8), &windows, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_and_mismatched_rejected() {
        let cfg = TrainConfig::default();
        assert!(matches!(
            train(&mut small_net(1, 8), &[], &cfg),
            Err(Error::Data(_))
        ));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut w = window(&mut rng, 4, 8, |_| 1.0);
        w.targets.pop();
        assert!(train(&mut small_net(1, 8), &[w], &cfg).is_err());
    }

    #[test]
    fn dp_training_requires_matching_clip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = window(&mut rng, 4, 8, |_| 1.0);
        let cfg = TrainConfig {
            epochs: 1,
            dp: Some(PrivacyParams::new(1.0, 1.0).unwrap()),
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&mut small_net(1, 8), &[w], &cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn loss_history_csv() {
        let mut buf = Vec::new();
        write_loss_history(&mut buf, &[0.5, 0.25]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "epoch,mean_loss\n1,0.5000000000\n2,0.2500000000\n"
        );
    }
}
