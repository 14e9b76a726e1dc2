//! Encoder plus transformer regressor trained on a [`Dataset`], with
//! checkpointing and privatized inference.

use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, WindowRef, WindowSpec};
use super::features::FeatureTable;
use crate::embed::{ClipBound, CnnConfig, EmbeddingSequence, FeatureNormalizer, FrozenEncoder};
use crate::error::{Error, Result};
use crate::eval::{OccupancySeries, ScoredSecond};
use crate::model::{
    train, AdamConfig, NetConfig, OccupancyNet, ParamStore, TrainConfig, TrainReport,
    TrainingWindow, TransformerConfig, WindowFront,
};
use crate::privacy::{privatize, Enforcement, NoiseSource, PrivacyLedger, PrivacyParams};

/// Which per-second encoder feeds the transformer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderChoice {
    /// Fixed summary-statistics projection to 512 dimensions.
    Frozen,
    /// CNN over pooled log-mel grids, trained jointly.
    Trainable,
}

impl std::str::FromStr for EncoderChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frozen" => Ok(EncoderChoice::Frozen),
            "trainable" => Ok(EncoderChoice::Trainable),
            other => Err(Error::config(format!(
                "encoder must be frozen or trainable, got {other}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    pub windows: WindowSpec,
    pub encoder: EncoderChoice,
    pub transformer: TransformerConfig,
    pub cnn: CnnConfig,
    /// L1 bound on every released row. Defaults to 1 when `epsilon` is set.
    pub clip: Option<f64>,
    /// Per-second privacy budget; enables noise-aware training and
    /// privatized inference.
    pub epsilon: Option<f64>,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            windows: WindowSpec::default(),
            encoder: EncoderChoice::Trainable,
            transformer: TransformerConfig::default(),
            cnn: CnnConfig::default(),
            clip: None,
            epsilon: None,
            epochs: 30,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

const INIT_STREAM: u64 = 0x696e_6974_0000_0001;

impl EstimatorConfig {
    pub fn clip_bound(&self) -> Result<Option<ClipBound>> {
        match (self.clip, self.epsilon) {
            (Some(c), _) => ClipBound::new(c).map(Some),
            (None, Some(_)) => ClipBound::new(1.0).map(Some),
            (None, None) => Ok(None),
        }
    }

    pub fn privacy(&self) -> Result<Option<PrivacyParams>> {
        match (self.epsilon, self.clip_bound()?) {
            (Some(eps), Some(c)) => PrivacyParams::new(c.get(), eps).map(Some),
            _ => Ok(None),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.windows.validate()?;
        self.transformer.validate()?;
        self.cnn.validate()?;
        self.adam.validate()?;
        self.privacy()?;
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.windows.window != self.transformer.window {
            return Err(Error::config(format!(
                "window spec of {} s does not match the transformer window of {}",
                self.windows.window, self.transformer.window
            )));
        }
        Ok(())
    }

    fn net_config(&self, front_dim: usize) -> Result<NetConfig> {
        let mut net = match self.encoder {
            EncoderChoice::Frozen => NetConfig::rows(front_dim),
            EncoderChoice::Trainable => NetConfig::cnn(self.cnn),
        };
        net.transformer = self.transformer;
        net.append_prob = self.windows.scheme == crate::gate::Scheme::ZeroMask;
        net.clip = self.clip_bound()?;
        Ok(net)
    }
}

#[derive(Serialize, Deserialize)]
struct Meta {
    format: String,
    config: EstimatorConfig,
    net: NetConfig,
    n_mels: usize,
    normalizer: Option<FeatureNormalizer>,
}

const META_FORMAT: &str = "occusense-estimator-1";

/// Front-end output of one second, as produced by
/// [`FrontEnd::analyze_second`](super::FrontEnd::analyze_second).
#[derive(Debug, Clone, Copy)]
pub struct SecondFeatures<'a> {
    pub grid: &'a [f64],
    pub summary: &'a [f64],
    pub speech_prob: f64,
}

/// Scored seconds of a prediction run and the budget it spent.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub points: Vec<ScoredSecond>,
    pub ledger: Option<PrivacyLedger>,
}

#[derive(Debug, Clone)]
pub struct Estimator {
    config: EstimatorConfig,
    net: OccupancyNet,
    frozen: Option<FrozenEncoder>,
}

impl Estimator {
    /// Trains on the given folds only.
    pub fn fit(
        dataset: &Dataset,
        folds: &[usize],
        config: &EstimatorConfig,
    ) -> Result<(Self, TrainReport)> {
        Self::fit_from(dataset, folds, config, None)
    }

    /// Like [`Estimator::fit`], starting from the parameters of `init`
    /// instead of a fresh draw.
    pub fn fit_from(
        dataset: &Dataset,
        folds: &[usize],
        config: &EstimatorConfig,
        init: Option<&Estimator>,
    ) -> Result<(Self, TrainReport)> {
        config.validate()?;
        let refs = dataset.windows(folds, &config.windows, false)?;
        let table = dataset.features();
        let n_mels = table.summaries.ncols() / 4;
        let (frozen, front_dim) = match config.encoder {
            EncoderChoice::Frozen => {
                let rows = refs
                    .iter()
                    .flat_map(|w| w.seconds.iter().filter(|s| !s.masked));
                let normalizer = FeatureNormalizer::fit(
                    rows.map(|s| {
                        table
                            .summaries
                            .row(s.index)
                            .to_slice()
                            .expect("contiguous row")
                    }),
                    table.summaries.ncols(),
                )?;
                let enc = FrozenEncoder::new(n_mels).with_normalizer(normalizer)?;
                let dim = crate::embed::FROZEN_DIM;
                (Some(enc), dim)
            }
            EncoderChoice::Trainable => {
                if table.grids.ncols() != config.cnn.grid_len() {
                    return Err(Error::shape(format!(
                        "feature grids have {} cells, the encoder expects {}",
                        table.grids.ncols(),
                        config.cnn.grid_len()
                    )));
                }
                (None, config.cnn.out_dim)
            }
        };
        let net_cfg = config.net_config(front_dim)?;
        let net = match init {
            Some(prev) => {
                if prev.net.config().transformer != net_cfg.transformer
                    || prev.net.config().front_dim() != net_cfg.front_dim()
                    || prev.net.config().append_prob != net_cfg.append_prob
                {
                    return Err(Error::config("warm start needs the same architecture"));
                }
                let mut cfg = net_cfg;
                cfg.front = prev.net.config().front;
                OccupancyNet::from_parts(cfg, prev.net.params().clone())?
            }
            None => OccupancyNet::init(
                net_cfg,
                &mut ChaCha8Rng::seed_from_u64(config.seed ^ INIT_STREAM),
            )?,
        };
        let mut est = Self {
            config: *config,
            net,
            frozen,
        };
        if config.encoder == EncoderChoice::Trainable && init.is_none() {
            let (mean, std) = grid_stats(&refs, &table.grids)?;
            est.net.set_cnn_normalization(mean, std)?;
        }
        let windows = refs
            .iter()
            .map(|w| est.materialize(dataset, w))
            .collect::<Result<Vec<_>>>()?;
        let train_cfg = TrainConfig {
            epochs: config.epochs,
            adam: config.adam,
            seed: config.seed,
            init_bias_to_mean: init.is_none(),
            dp: config.privacy()?,
        };
        let report = train(&mut est.net, &windows, &train_cfg)?;
        Ok((est, report))
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.config
    }

    /// The same trained weights released under budget `epsilon` at
    /// inference. The network must already clip its rows.
    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        let clip = self.net.config().clip.ok_or_else(|| {
            Error::config("inference noise needs a checkpoint trained with a clip bound")
        })?;
        let mut out = self.clone();
        out.config.clip = Some(clip.get());
        out.config.epsilon = Some(epsilon);
        out.config.privacy()?;
        Ok(out)
    }

    pub fn net(&self) -> &OccupancyNet {
        &self.net
    }

    fn materialize(&self, dataset: &Dataset, w: &WindowRef) -> Result<TrainingWindow> {
        let table = dataset.features();
        let front = match &self.frozen {
            Some(enc) => {
                let mut rows = Array2::zeros((w.len(), crate::embed::FROZEN_DIM));
                let zeros = vec![0.0; table.summaries.ncols()];
                for (i, s) in w.seconds.iter().enumerate() {
                    let feats = if s.masked {
                        zeros.as_slice()
                    } else {
                        table
                            .summaries
                            .row(s.index)
                            .to_slice()
                            .expect("contiguous row")
                    };
                    let e = enc.embed_features(feats)?;
                    rows.row_mut(i).assign(&ndarray::ArrayView1::from(&e));
                }
                WindowFront::Rows(rows)
            }
            None => WindowFront::Grids(
                w.seconds
                    .iter()
                    .map(|s| {
                        if s.masked {
                            vec![0.0; table.grids.ncols()]
                        } else {
                            table.grids.row(s.index).to_vec()
                        }
                    })
                    .collect(),
            ),
        };
        Ok(TrainingWindow {
            front,
            probs: w.probs.clone(),
            targets: w.targets.clone(),
            timestamps: w.timestamps.clone(),
        })
    }

    /// Predicts every scorable second of the given folds. A privatized
    /// estimator requires `noise` and reports the budget spent.
    pub fn predict(
        &self,
        dataset: &Dataset,
        folds: &[usize],
        noise: Option<&mut NoiseSource>,
    ) -> Result<Prediction> {
        let refs = dataset.windows(folds, &self.config.windows, true)?;
        let privacy = self.config.privacy()?;
        let mut noise = match (privacy, noise) {
            (Some(_), None) => {
                return Err(Error::Privacy(
                    "a privatized estimator needs a noise source for inference".into(),
                ))
            }
            (_, n) => n,
        };
        let mut ledger = privacy.map(|p| PrivacyLedger::new(p.epsilon)).transpose()?;
        let mut points = Vec::new();
        for w in &refs {
            let tw = self.materialize(dataset, w)?;
            let mut input = tw.input();
            let delta;
            if let (Some(p), Some(rng), Some(ledger)) =
                (privacy, noise.as_deref_mut(), ledger.as_mut())
            {
                let clean = self.net.release(&input)?;
                let seq = EmbeddingSequence::new(clean.clone(), w.timestamps.clone())?;
                let noisy = privatize(&seq, &p, rng, ledger, Enforcement::Reclip)?;
                delta = noisy.rows - &clean;
                input.noise = Some(delta.view());
            }
            let pred = self.net.predict(&input)?;
            points.extend(w.timestamps.iter().zip(&w.targets).zip(pred).map(
                |((&time, &truth), prediction)| ScoredSecond {
                    time,
                    truth,
                    prediction,
                },
            ));
        }
        points.sort_by_key(|p| p.time);
        Ok(Prediction { points, ledger })
    }

    /// Predicts a standalone run of consecutive seconds, gated by the
    /// estimator's scheme. Seconds that Scheme 1 discards get `None`.
    pub fn predict_seconds(
        &self,
        seconds: &[SecondFeatures<'_>],
        noise: Option<&mut NoiseSource>,
    ) -> Result<(Vec<Option<f64>>, Option<PrivacyLedger>)> {
        let n = seconds.len();
        if n == 0 {
            return Err(Error::shape("no seconds to predict"));
        }
        let (gl, sl) = (seconds[0].grid.len(), seconds[0].summary.len());
        if seconds
            .iter()
            .any(|s| s.grid.len() != gl || s.summary.len() != sl)
        {
            return Err(Error::shape(
                "every second needs the same grid and summary widths",
            ));
        }
        let mut grids = Vec::with_capacity(n * gl);
        let mut summaries = Vec::with_capacity(n * sl);
        for s in seconds {
            grids.extend_from_slice(s.grid);
            summaries.extend_from_slice(s.summary);
        }
        let table = FeatureTable {
            times: (0..n as u64).collect(),
            speech_prob: seconds.iter().map(|s| s.speech_prob).collect(),
            grids: Array2::from_shape_vec((n, gl), grids).expect("grid rows"),
            summaries: Array2::from_shape_vec((n, sl), summaries).expect("summary rows"),
            tdoas: vec![Vec::new(); n],
        };
        let mut out = vec![None; n];
        let spec = &self.config.windows;
        let all_dropped = spec.scheme == crate::gate::Scheme::Discard
            && table.speech_prob.iter().all(|&p| p > spec.threshold);
        if all_dropped {
            return Ok((out, None));
        }
        let truth = OccupancySeries {
            counts: vec![0; n],
            start_time: 0,
        };
        let ds = Dataset::new(table, &truth, 1)?;
        let pred = self.predict(&ds, &[0], noise)?;
        for p in pred.points {
            out[p.time as usize] = Some(p.prediction);
        }
        Ok((out, pred.ledger))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let meta = Meta {
            format: META_FORMAT.into(),
            config: self.config,
            net: *self.net.config(),
            n_mels: self.frozen.as_ref().map_or(0, |f| f.n_mels()),
            normalizer: self.frozen.as_ref().map(|f| f.normalizer().clone()),
        };
        self.net.params().save(path, &serde_json::to_string(&meta)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (params, meta) = ParamStore::load(path)?;
        let meta: Meta = serde_json::from_str(&meta)?;
        if meta.format != META_FORMAT {
            return Err(Error::data(format!(
                "unknown checkpoint format {}",
                meta.format
            )));
        }
        meta.config.validate()?;
        let frozen = match meta.normalizer {
            Some(n) => Some(FrozenEncoder::new(meta.n_mels).with_normalizer(n)?),
            None => None,
        };
        if (meta.config.encoder == EncoderChoice::Frozen) != frozen.is_some() {
            return Err(Error::data("checkpoint encoder metadata is inconsistent"));
        }
        let net = OccupancyNet::from_parts(meta.net, params)?;
        Ok(Self {
            config: meta.config,
            net,
            frozen,
        })
    }
}

fn grid_stats(refs: &[WindowRef], grids: &Array2<f64>) -> Result<(f64, f64)> {
    let (mut n, mut s, mut q) = (0usize, 0.0, 0.0);
    for w in refs {
        for sec in w.seconds.iter().filter(|s| !s.masked) {
            for v in grids.row(sec.index) {
                n += 1;
                s += v;
                q += v * v;
            }
        }
    }
    if n == 0 {
        return Err(Error::data(
            "no unmasked seconds to fit the encoder input scale",
        ));
    }
    let mean = s / n as f64;
    let std = (q / n as f64 - mean * mean).max(0.0).sqrt();
    Ok((mean, if std > 1e-9 { std } else { 1.0 }))
}
