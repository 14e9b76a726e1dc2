//! Multi-head self-attention layers with residual connection and ReLU.

use ndarray::{s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::params::{Grads, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformerConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_emb: usize,
    pub d_head: usize,
    /// Training window length in seconds. Inference accepts any length.
    pub window: usize,
    /// Divide attention logits by `sqrt(d_head)`. Off by default.
    pub scaled_attention: bool,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            heads: 8,
            d_emb: 128,
            d_head: 16,
            window: 60,
            scaled_attention: false,
        }
    }
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.d_head == 0 || self.heads * self.d_head != self.d_emb {
            return Err(Error::config(format!(
                "heads ({}) x d_head ({}) must equal d_emb ({})",
                self.heads, self.d_head, self.d_emb
            )));
        }
        if self.layers == 0 || self.window == 0 {
            return Err(Error::config("layers and window must be at least 1"));
        }
        Ok(())
    }

    pub(crate) fn logit_scale(&self) -> f64 {
        if self.scaled_attention {
            1.0 / (self.d_head as f64).sqrt()
        } else {
            1.0
        }
    }
}

/// Projection matrices of one layer, each `d_emb x d_emb`. Columns
/// `h*d_head..(h+1)*d_head` hold head `h`'s `W_Q`, `W_K`, `W_V`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerIds {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
}

/// Weight views for one layer.
#[derive(Debug, Clone, Copy)]
pub struct LayerWeights<'a> {
    pub wq: ArrayView2<'a, f64>,
    pub wk: ArrayView2<'a, f64>,
    pub wv: ArrayView2<'a, f64>,
}

impl<'a> LayerWeights<'a> {
    pub fn from_store(store: &'a ParamStore, ids: &LayerIds, d: usize) -> Self {
        let view = |id| ArrayView2::from_shape((d, d), store.get(id)).expect("layer weight shape");
        Self {
            wq: view(ids.wq),
            wk: view(ids.wk),
            wv: view(ids.wv),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LayerCache {
    x: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn: Vec<Array2<f64>>,
    z: Array2<f64>,
}

fn check_finite(a: &Array2<f64>, what: &str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical(format!("non-finite values in {what}")))
    }
}

/// Row-wise softmax after subtracting each row's maximum.
pub(crate) fn softmax_rows(s: &mut Array2<f64>) {
    for mut row in s.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

pub(crate) fn layer_forward(
    x: Array2<f64>,
    w: &LayerWeights<'_>,
    config: &TransformerConfig,
) -> Result<(Array2<f64>, LayerCache)> {
    let d = config.d_emb;
    if x.ncols() != d || x.nrows() == 0 {
        return Err(Error::shape(format!(
            "layer input is {}x{}, expected Tx{d}",
            x.nrows(),
            x.ncols()
        )));
    }
    check_finite(&x, "attention input")?;
    let q = x.dot(&w.wq);
    let k = x.dot(&w.wk);
    let v = x.dot(&w.wv);
    let scale = config.logit_scale();
    let mut o = Array2::zeros(x.raw_dim());
    let mut attn = Vec::with_capacity(config.heads);
    for h in 0..config.heads {
        let cols = s![.., h * config.d_head..(h + 1) * config.d_head];
        let mut a = q.slice(cols).dot(&k.slice(cols).t());
        if scale != 1.0 {
            a *= scale;
        }
        softmax_rows(&mut a);
        o.slice_mut(cols).assign(&a.dot(&v.slice(cols)));
        attn.push(a);
    }
    let z = &x + &o;
    let y = z.mapv(|v| v.max(0.0));
    check_finite(&y, "attention output")?;
    Ok((
        y,
        LayerCache {
            x,
            q,
            k,
            v,
            attn,
            z,
        },
    ))
}

/// Accumulates weight gradients and returns the gradient w.r.t. the layer
/// input.
pub(crate) fn layer_backward(
    cache: &LayerCache,
    dy: &Array2<f64>,
    w: &LayerWeights<'_>,
    ids: &LayerIds,
    config: &TransformerConfig,
    grads: &mut Grads,
) -> Array2<f64> {
    let mut dz = dy.clone();
    dz.zip_mut_with(&cache.z, |g, z| {
        if *z <= 0.0 {
            *g = 0.0
        }
    });
    let scale = config.logit_scale();
    let mut dq = Array2::zeros(cache.q.raw_dim());
    let mut dk = Array2::zeros(cache.k.raw_dim());
    let mut dv = Array2::zeros(cache.v.raw_dim());
    for (h, a) in cache.attn.iter().enumerate() {
        let cols = s![.., h * config.d_head..(h + 1) * config.d_head];
        let doh = dz.slice(cols);
        let da = doh.dot(&cache.v.slice(cols).t());
        dv.slice_mut(cols).assign(&a.t().dot(&doh));
        // Softmax Jacobian: dS = A * (dA - rowsum(dA * A)).
        let inner = (&da * a).sum_axis(Axis(1)).insert_axis(Axis(1));
        let mut ds = a * &(&da - &inner);
        if scale != 1.0 {
            ds *= scale;
        }
        dq.slice_mut(cols).assign(&ds.dot(&cache.k.slice(cols)));
        dk.slice_mut(cols).assign(&ds.t().dot(&cache.q.slice(cols)));
    }
    let xt = cache.x.t();
    for (id, d) in [(ids.wq, &dq), (ids.wk, &dk), (ids.wv, &dv)] {
        let g = xt.dot(d);
        for (acc, v) in grads.get_mut(id).iter_mut().zip(g.iter()) {
            *acc += v;
        }
    }
    let mut dx = dz;
    dx += &dq.dot(&w.wq.t());
    dx += &dk.dot(&w.wk.t());
    dx += &dv.dot(&w.wv.t());
    dx
}

/// One attention layer: per-head softmax attention, concatenation, residual,
/// ReLU. Returns the output and each head's `T x T` attention weights.
pub fn attention_layer(
    x: &Array2<f64>,
    weights: &LayerWeights<'_>,
    config: &TransformerConfig,
) -> Result<(Array2<f64>, Vec<Array2<f64>>)> {
    config.validate()?;
    for m in [&weights.wq, &weights.wk, &weights.wv] {
        if m.dim() != (config.d_emb, config.d_emb) {
            return Err(Error::shape("projection matrices must be d_emb x d_emb"));
        }
    }
    let (y, cache) = layer_forward(x.clone(), weights, config)?;
    Ok((y, cache.attn))
}
