//! The full regressor: optional CNN front end, probability column, L1 clip,
//! Laplace noise, adapter, attention stack, linear head.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embed::{clip_in_place, l1, ClipBound, CnnCache, CnnConfig, CnnEncoder};
use crate::error::{Error, Result};
use crate::model::params::{Grads, ParamId, ParamStore};
use crate::model::transformer::{
    layer_backward, layer_forward, LayerCache, LayerIds, LayerWeights, TransformerConfig,
};

/// What feeds each row before the optional probability column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FrontConfig {
    /// Precomputed embedding rows of width `dim`.
    Rows { dim: usize },
    /// Pooled spectrogram grids through a jointly trained CNN.
    Cnn {
        cnn: CnnConfig,
        input_mean: f64,
        input_std: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub transformer: TransformerConfig,
    pub front: FrontConfig,
    /// Append the speech probability to every row.
    pub append_prob: bool,
    /// L1 clip applied to each released row, probability column included.
    pub clip: Option<ClipBound>,
}

impl NetConfig {
    pub fn rows(dim: usize) -> Self {
        Self {
            transformer: TransformerConfig::default(),
            front: FrontConfig::Rows { dim },
            append_prob: false,
            clip: None,
        }
    }

    pub fn cnn(cnn: CnnConfig) -> Self {
        Self {
            transformer: TransformerConfig::default(),
            front: FrontConfig::Cnn {
                cnn,
                input_mean: 0.0,
                input_std: 1.0,
            },
            append_prob: false,
            clip: None,
        }
    }

    pub fn front_dim(&self) -> usize {
        match self.front {
            FrontConfig::Rows { dim } => dim,
            FrontConfig::Cnn { cnn, .. } => cnn.out_dim,
        }
    }

    /// Width of the row that is clipped, noised and released.
    pub fn release_dim(&self) -> usize {
        self.front_dim() + usize::from(self.append_prob)
    }

    pub fn has_adapter(&self) -> bool {
        self.release_dim() != self.transformer.d_emb
    }

    pub fn validate(&self) -> Result<()> {
        self.transformer.validate()?;
        if self.front_dim() == 0 {
            return Err(Error::config("front end must produce at least one column"));
        }
        if let FrontConfig::Cnn { cnn, .. } = self.front {
            cnn.validate()?;
        }
        Ok(())
    }
}

/// Per-second inputs for one window.
#[derive(Debug, Clone, Copy)]
pub enum FrontInput<'a> {
    Rows(ArrayView2<'a, f64>),
    Grids(&'a [Vec<f64>]),
}

impl FrontInput<'_> {
    pub fn len(&self) -> usize {
        match self {
            FrontInput::Rows(r) => r.nrows(),
            FrontInput::Grids(g) => g.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NetInput<'a> {
    pub front: FrontInput<'a>,
    /// Speech probability per row; required when the config appends it.
    pub probs: Option<&'a [f64]>,
    /// Additive noise on the released rows, `T x release_dim`.
    pub noise: Option<ArrayView2<'a, f64>>,
}

impl<'a> NetInput<'a> {
    pub fn rows(rows: ArrayView2<'a, f64>) -> Self {
        Self {
            front: FrontInput::Rows(rows),
            probs: None,
            noise: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct AdapterIds {
    w: ParamId,
    b: ParamId,
}

/// Intermediates of a forward pass, tied to the parameter generation that
/// produced them.
#[derive(Debug, Clone)]
pub struct ActivationCache {
    generation: u64,
    cnn: Option<CnnCache>,
    /// Released rows before clipping.
    raw: Array2<f64>,
    /// Rows after clip and noise, i.e. the adapter input.
    released: Array2<f64>,
    layers: Vec<LayerCache>,
    top: Array2<f64>,
}

impl ActivationCache {
    /// The rows as they leave the device: clipped and noised.
    pub fn released(&self) -> &Array2<f64> {
        &self.released
    }
}

/// Transformer regressor with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyNet {
    config: NetConfig,
    params: ParamStore,
    cnn: Option<CnnEncoder>,
    adapter: Option<AdapterIds>,
    layers: Vec<LayerIds>,
    head_w: ParamId,
    head_b: ParamId,
}

const CNN_PREFIX: &str = "encoder.";

impl OccupancyNet {
    /// Fresh parameters, uniform in `+-1/sqrt(fan_in)`, biases zero.
    pub fn init<R: Rng>(config: NetConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let cnn = match config.front {
            FrontConfig::Cnn {
                cnn,
                input_mean,
                input_std,
            } => {
                let mut enc = CnnEncoder::init(cnn, &mut params, CNN_PREFIX, rng)?;
                enc.set_input_normalization(input_mean, input_std)?;
                Some(enc)
            }
            FrontConfig::Rows { .. } => None,
        };
        let d = config.transformer.d_emb;
        let r = config.release_dim();
        let adapter = config.has_adapter().then(|| AdapterIds {
            w: params.add_uniform("adapter.w", &[r, d], r, rng),
            b: params.add_zeros("adapter.b", &[d]),
        });
        let layers = (0..config.transformer.layers)
            .map(|l| LayerIds {
                wq: params.add_uniform(format!("layer{l}.wq"), &[d, d], d, rng),
                wk: params.add_uniform(format!("layer{l}.wk"), &[d, d], d, rng),
                wv: params.add_uniform(format!("layer{l}.wv"), &[d, d], d, rng),
            })
            .collect();
        let head_w = params.add_uniform("head.w", &[d], d, rng);
        let head_b = params.add_zeros("head.b", &[1]);
        Ok(Self {
            config,
            params,
            cnn,
            adapter,
            layers,
            head_w,
            head_b,
        })
    }

    /// Binds a config to an existing parameter store, checking every block.
    pub fn from_parts(config: NetConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let d = config.transformer.d_emb;
        let r = config.release_dim();
        let find = |name: String, len: usize| -> Result<ParamId> {
            let id = params
                .find(&name)
                .ok_or_else(|| Error::data(format!("checkpoint lacks {name}")))?;
            if params.get(id).len() != len {
                return Err(Error::shape(format!(
                    "{name} has {} values, expected {len}",
                    params.get(id).len()
                )));
            }
            Ok(id)
        };
        let cnn = match config.front {
            FrontConfig::Cnn {
                cnn,
                input_mean,
                input_std,
            } => Some(CnnEncoder::attach(
                cnn, &params, CNN_PREFIX, input_mean, input_std,
            )?),
            FrontConfig::Rows { .. } => None,
        };
        let adapter = if config.has_adapter() {
            Some(AdapterIds {
                w: find("adapter.w".into(), r * d)?,
                b: find("adapter.b".into(), d)?,
            })
        } else {
            None
        };
        let layers = (0..config.transformer.layers)
            .map(|l| {
                Ok(LayerIds {
                    wq: find(format!("layer{l}.wq"), d * d)?,
                    wk: find(format!("layer{l}.wk"), d * d)?,
                    wv: find(format!("layer{l}.wv"), d * d)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let head_w = find("head.w".into(), d)?;
        let head_b = find("head.b".into(), 1)?;
        Ok(Self {
            config,
            params,
            cnn,
            adapter,
            layers,
            head_w,
            head_b,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn cnn(&self) -> Option<&CnnEncoder> {
        self.cnn.as_ref()
    }

    pub fn layer_ids(&self) -> &[LayerIds] {
        &self.layers
    }

    pub fn head_ids(&self) -> (ParamId, ParamId) {
        (self.head_w, self.head_b)
    }

    /// Fixes the CNN input standardization. No-op for row inputs.
    pub fn set_cnn_normalization(&mut self, mean: f64, std: f64) -> Result<()> {
        if let (
            Some(enc),
            FrontConfig::Cnn {
                input_mean,
                input_std,
                ..
            },
        ) = (self.cnn.as_mut(), &mut self.config.front)
        {
            enc.set_input_normalization(mean, std)?;
            *input_mean = mean;
            *input_std = std;
        }
        Ok(())
    }

    pub fn set_head_bias(&mut self, b: f64) {
        self.params.get_mut(self.head_b)[0] = b;
    }

    fn front_rows(
        &self,
        input: &NetInput<'_>,
        cnn_cache: &mut Option<CnnCache>,
    ) -> Result<Array2<f64>> {
        let t = input.front.len();
        if t == 0 {
            return Err(Error::shape("input window is empty"));
        }
        let fd = self.config.front_dim();
        let r = self.config.release_dim();
        let mut raw = Array2::zeros((t, r));
        match (input.front, &self.cnn) {
            (FrontInput::Rows(rows), None) => {
                if rows.ncols() != fd {
                    return Err(Error::shape(format!(
                        "input rows have {} columns, expected {fd}",
                        rows.ncols()
                    )));
                }
                raw.slice_mut(ndarray::s![.., ..fd]).assign(&rows);
            }
            (FrontInput::Grids(grids), Some(enc)) => {
                let n = enc.config().grid_len();
                if let Some(i) = grids.iter().position(|g| g.len() != n) {
                    return Err(Error::shape(format!(
                        "grid {i} has {} cells, expected {n}",
                        grids[i].len()
                    )));
                }
                let (out, cache) = enc.forward_batch(&self.params, grids);
                raw.slice_mut(ndarray::s![.., ..fd]).assign(&out);
                *cnn_cache = Some(cache);
            }
            (FrontInput::Rows(_), Some(_)) => {
                return Err(Error::shape("network expects spectrogram grids"))
            }
            (FrontInput::Grids(_), None) => {
                return Err(Error::shape("network expects embedding rows"))
            }
        }
        if self.config.append_prob {
            let probs = input
                .probs
                .ok_or_else(|| Error::shape("speech probabilities required"))?;
            if probs.len() != t {
                return Err(Error::shape(format!(
                    "{} probabilities for {t} rows",
                    probs.len()
                )));
            }
            for (i, p) in probs.iter().enumerate() {
                if !(0.0..=1.0).contains(p) {
                    return Err(Error::data(format!(
                        "speech probability {p} outside [0, 1]"
                    )));
                }
                raw[[i, fd]] = *p;
            }
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite embedding".into()));
        }
        Ok(raw)
    }

    /// Clipped, noised rows as released off-device, without running the
    /// transformer.
    pub fn release(&self, input: &NetInput<'_>) -> Result<Array2<f64>> {
        let raw = self.front_rows(input, &mut None)?;
        self.clip_and_noise(&raw, input)
    }

    fn clip_and_noise(&self, raw: &Array2<f64>, input: &NetInput<'_>) -> Result<Array2<f64>> {
        let mut rel = raw.clone();
        if let Some(c) = self.config.clip {
            for mut row in rel.rows_mut() {
                clip_in_place(row.as_slice_mut().expect("contiguous row"), c);
            }
        }
        if let Some(noise) = input.noise {
            if noise.dim() != rel.dim() {
                return Err(Error::shape(format!(
                    "noise is {:?}, rows are {:?}",
                    noise.dim(),
                    rel.dim()
                )));
            }
            rel += &noise;
        }
        Ok(rel)
    }

    pub fn forward(&self, input: &NetInput<'_>) -> Result<(Vec<f64>, ActivationCache)> {
        let mut cnn = None;
        let raw = self.front_rows(input, &mut cnn)?;
        let released = self.clip_and_noise(&raw, input)?;
        let d = self.config.transformer.d_emb;
        let mut x = match self.adapter {
            Some(a) => {
                let w =
                    ArrayView2::from_shape((self.config.release_dim(), d), self.params.get(a.w))
                        .expect("adapter shape");
                let b = ArrayView2::from_shape((1, d), self.params.get(a.b)).expect("adapter bias");
                released.dot(&w) + b
            }
            None => released.clone(),
        };
        let mut layers = Vec::with_capacity(self.layers.len());
        for ids in &self.layers {
            let w = LayerWeights::from_store(&self.params, ids, d);
            let (y, cache) = layer_forward(x, &w, &self.config.transformer)?;
            layers.push(cache);
            x = y;
        }
        let hw = self.params.get(self.head_w);
        let hb = self.params.get(self.head_b)[0];
        let pred: Vec<f64> = x
            .rows()
            .into_iter()
            .map(|r| hb + r.iter().zip(hw).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        if pred.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite prediction".into()));
        }
        let cache = ActivationCache {
            generation: self.params.generation(),
            cnn,
            raw,
            released,
            layers,
            top: x,
        };
        Ok((pred, cache))
    }

    pub fn predict(&self, input: &NetInput<'_>) -> Result<Vec<f64>> {
        Ok(self.forward(input)?.0)
    }

    /// Gradients of a loss whose derivative w.r.t. the predictions is
    /// `d_pred`.
    pub fn backward(&self, cache: &ActivationCache, d_pred: &[f64]) -> Result<Grads> {
        if cache.generation != self.params.generation() {
            return Err(Error::StaleCache {
                cache: cache.generation,
                params: self.params.generation(),
            });
        }
        let t = cache.top.nrows();
        if d_pred.len() != t {
            return Err(Error::shape(format!(
                "{} output gradients for {t} predictions",
                d_pred.len()
            )));
        }
        let d = self.config.transformer.d_emb;
        let mut grads = self.params.zero_grads();
        grads.get_mut(self.head_b)[0] = d_pred.iter().sum();
        let dp = ArrayView2::from_shape((t, 1), d_pred).expect("column");
        {
            let g = cache.top.t().dot(&dp);
            grads
                .get_mut(self.head_w)
                .iter_mut()
                .zip(g.iter())
                .for_each(|(a, b)| *a += b);
        }
        let hw = ArrayView2::from_shape((1, d), self.params.get(self.head_w)).expect("head row");
        let mut dx = dp.dot(&hw);
        for (ids, lc) in self.layers.iter().zip(&cache.layers).rev() {
            let w = LayerWeights::from_store(&self.params, ids, d);
            dx = layer_backward(lc, &dx, &w, ids, &self.config.transformer, &mut grads);
        }

        let needs_input_grad = self.cnn.is_some();
        let d_rel = match self.adapter {
            Some(a) => {
                let r = self.config.release_dim();
                let gw = cache.released.t().dot(&dx);
                grads
                    .get_mut(a.w)
                    .iter_mut()
                    .zip(gw.iter())
                    .for_each(|(x, y)| *x += y);
                let gb = dx.sum_axis(Axis(0));
                grads
                    .get_mut(a.b)
                    .iter_mut()
                    .zip(gb.iter())
                    .for_each(|(x, y)| *x += y);
                if !needs_input_grad {
                    return Ok(grads);
                }
                let w =
                    ArrayView2::from_shape((r, d), self.params.get(a.w)).expect("adapter shape");
                dx.dot(&w.t())
            }
            None => dx,
        };
        let Some(enc) = &self.cnn else {
            return Ok(grads);
        };

        let cc = cache.cnn.as_ref().expect("cnn forward cached");
        let fd = self.config.front_dim();
        let mut d_raw = d_rel;
        if let Some(c) = self.config.clip {
            for (mut g, e) in d_raw.rows_mut().into_iter().zip(cache.raw.rows()) {
                let s = l1(e.as_slice().expect("contiguous row"));
                if s > c.get() {
                    // Jacobian of e * C / |e|_1.
                    let dot: f64 = e.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
                    let k = c.get() / s;
                    g.zip_mut_with(&e, |gv, ev| *gv = k * (*gv - ev.signum() * dot / s));
                }
            }
        }
        enc.backward(
            &self.params,
            cc,
            d_raw.slice(ndarray::s![.., ..fd]),
            &mut grads,
        );
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn tiny(front: FrontConfig) -> NetConfig {
        NetConfig {
            transformer: TransformerConfig {
                layers: 1,
                heads: 2,
                d_emb: 8,
                d_head: 4,
                window: 4,
                scaled_attention: false,
            },
            front,
            append_prob: false,
            clip: None,
        }
    }

    fn rand_rows(rng: &mut ChaCha8Rng, t: usize, d: usize) -> Array2<f64> {
        Array2::from_shape_fn((t, d), |_| rng.gen_range(-1.0..1.0))
    }

    /// Loss `sum_t r_t * pred_t` with fixed random `r`, so `d_pred = r`.
    fn fd_check(
        net: &mut OccupancyNet,
        input: &NetInput<'_>,
        rng: &mut ChaCha8Rng,
        samples: usize,
    ) -> f64 {
        let (pred, cache) = net.forward(input).unwrap();
        let r: Vec<f64> = (0..pred.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let grads = net.backward(&cache, &r).unwrap();
        let loss = |n: &OccupancyNet| -> f64 {
            n.predict(input)
                .unwrap()
                .iter()
                .zip(&r)
                .map(|(a, b)| a * b)
                .sum()
        };
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        let blocks = net.params().len();
        for s in 0..samples {
            let id = ParamId(s % blocks);
            let n = net.params().get(id).len();
            let j = rng.gen_range(0..n);
            let orig = net.params().get(id)[j];
            net.params_mut().get_mut(id)[j] = orig + h;
            let up = loss(net);
            net.params_mut().get_mut(id)[j] = orig - h;
            let down = loss(net);
            net.params_mut().get_mut(id)[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads.get(id)[j];
            let err = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6);
            worst = worst.max(err);
        }
        worst
    }

    #[test]
    fn gradient_check_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut net = OccupancyNet::init(tiny(FrontConfig::Rows { dim: 8 }), &mut rng).unwrap();
        let x = rand_rows(&mut rng, 4, 8);
        let err = fd_check(&mut net, &NetInput::rows(x.view()), &mut rng, 60);
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn gradient_check_adapter_prob_clip_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut cfg = tiny(FrontConfig::Rows { dim: 5 });
        cfg.append_prob = true;
        cfg.clip = Some(ClipBound::new(1.5).unwrap());
        cfg.transformer.layers = 2;
        let mut net = OccupancyNet::init(cfg, &mut rng).unwrap();
        let x = rand_rows(&mut rng, 4, 5);
        let probs = [0.1, 0.9, 0.5, 0.0];
        let noise = rand_rows(&mut rng, 4, 6);
        let input = NetInput {
            front: FrontInput::Rows(x.view()),
            probs: Some(&probs),
            noise: Some(noise.view()),
        };
        let err = fd_check(&mut net, &input, &mut rng, 80);
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn gradient_check_through_cnn_and_clip() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let cnn = CnnConfig {
            grid_t: 4,
            grid_f: 8,
            c1: 2,
            c2: 3,
            out_dim: 7,
        };
        let mut cfg = tiny(FrontConfig::Cnn {
            cnn,
            input_mean: 0.1,
            input_std: 2.0,
        });
        cfg.append_prob = true;
        cfg.clip = Some(ClipBound::new(0.3).unwrap());
        let mut net = OccupancyNet::init(cfg, &mut rng).unwrap();
        let grids: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..32).map(|_| rng.gen_range(-3.0..3.0)).collect())
            .collect();
        let probs = [0.2, 0.4, 0.6, 0.8];
        let input = NetInput {
            front: FrontInput::Grids(&grids),
            probs: Some(&probs),
            noise: None,
        };
        let err = fd_check(&mut net, &input, &mut rng, 120);
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn zero_params_output_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = OccupancyNet::init(tiny(FrontConfig::Rows { dim: 8 }), &mut rng).unwrap();
        for t in net.params_mut().tensors_mut() {
            t.iter_mut().for_each(|v| *v = 0.0);
        }
        net.set_head_bias(2.5);
        let x = rand_rows(&mut rng, 7, 8);
        assert_eq!(
            net.predict(&NetInput::rows(x.view())).unwrap(),
            vec![2.5; 7]
        );
    }

    #[test]
    fn stale_cache_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = OccupancyNet::init(tiny(FrontConfig::Rows { dim: 8 }), &mut rng).unwrap();
        let x = rand_rows(&mut rng, 3, 8);
        let (_, cache) = net.forward(&NetInput::rows(x.view())).unwrap();
        net.set_head_bias(1.0);
        assert!(matches!(
            net.backward(&cache, &[1.0; 3]),
            Err(Error::StaleCache { .. })
        ));
    }

    #[test]
    fn doubling_output_gradient_doubles_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = OccupancyNet::init(tiny(FrontConfig::Rows { dim: 8 }), &mut rng).unwrap();
        let x = rand_rows(&mut rng, 4, 8);
        let (_, cache) = net.forward(&NetInput::rows(x.view())).unwrap();
        let g1 = net.backward(&cache, &[0.3, -0.2, 0.1, 0.7]).unwrap();
        let g2 = net.backward(&cache, &[0.6, -0.4, 0.2, 1.4]).unwrap();
        for (a, b) in g1
            .tensors()
            .iter()
            .flatten()
            .zip(g2.tensors().iter().flatten())
        {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn input_validation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut cfg = tiny(FrontConfig::Rows { dim: 8 });
        cfg.append_prob = true;
        let net = OccupancyNet::init(cfg, &mut rng).unwrap();
        let x = rand_rows(&mut rng, 3, 8);
        assert!(net.predict(&NetInput::rows(x.view())).is_err());
        let bad = [0.1, 1.5, 0.2];
        let input = NetInput {
            front: FrontInput::Rows(x.view()),
            probs: Some(&bad),
            noise: None,
        };
        assert!(net.predict(&input).is_err());
        let wide = rand_rows(&mut rng, 3, 9);
        assert!(matches!(
            net.predict(&NetInput::rows(wide.view())),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn from_parts_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = tiny(FrontConfig::Rows { dim: 6 });
        let net = OccupancyNet::init(cfg, &mut rng).unwrap();
        let again = OccupancyNet::from_parts(cfg, net.params().clone()).unwrap();
        let x = rand_rows(&mut rng, 5, 6);
        assert_eq!(
            net.predict(&NetInput::rows(x.view())).unwrap(),
            again.predict(&NetInput::rows(x.view())).unwrap()
        );
        assert!(
            OccupancyNet::from_parts(tiny(FrontConfig::Rows { dim: 7 }), net.params().clone())
                .is_err()
        );
    }
}
