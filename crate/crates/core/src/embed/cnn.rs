use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::Spectrogram;
use crate::error::{Error, Result};
use crate::model::params::{Grads, ParamId, ParamStore};

/// Shape of the trainable convolutional encoder.
///
/// The log-mel spectrogram is average-pooled to a `grid_t x grid_f` grid, then
/// passes conv3x3(c1) -> ReLU -> maxpool2 -> conv3x3(c2) -> ReLU -> maxpool2 ->
/// flatten -> linear(out_dim).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CnnConfig {
    pub grid_t: usize,
    pub grid_f: usize,
    pub c1: usize,
    pub c2: usize,
    pub out_dim: usize,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self {
            grid_t: 8,
            grid_f: 16,
            c1: 16,
            c2: 32,
            out_dim: super::TRAINABLE_DIM,
        }
    }
}

impl CnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_t == 0 || self.grid_f == 0 || !self.grid_t.is_multiple_of(4) || !self.grid_f.is_multiple_of(4) {
            return Err(Error::config(
                "cnn grid sides must be positive multiples of 4",
            ));
        }
        if self.c1 == 0 || self.c2 == 0 || self.out_dim == 0 {
            return Err(Error::config(
                "cnn channel counts and output width must be positive",
            ));
        }
        Ok(())
    }

    pub fn grid_len(&self) -> usize {
        self.grid_t * self.grid_f
    }

    fn flat_len(&self) -> usize {
        self.c2 * (self.grid_t / 4) * (self.grid_f / 4)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct CnnIds {
    conv1_w: ParamId,
    conv1_b: ParamId,
    conv2_w: ParamId,
    conv2_b: ParamId,
    fc_w: ParamId,
    fc_b: ParamId,
}

/// Convolutional encoder whose weights live in a shared [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct CnnEncoder {
    config: CnnConfig,
    ids: CnnIds,
    /// Fixed input standardization `(x - mean) / std`.
    input_mean: f64,
    input_std: f64,
}

/// Intermediates of one batched forward pass.
#[derive(Debug, Clone)]
pub struct CnnCache {
    batch: usize,
    cols1: Array2<f64>,
    pre1: Array2<f64>,
    arg1: Vec<usize>,
    cols2: Array2<f64>,
    pre2: Array2<f64>,
    arg2: Vec<usize>,
    flat: Array2<f64>,
}

const NAMES: [&str; 6] = ["conv1.w", "conv1.b", "conv2.w", "conv2.b", "fc.w", "fc.b"];

impl CnnEncoder {
    /// Registers freshly initialized weights under `prefix`.
    pub fn init<R: Rng>(
        config: CnnConfig,
        store: &mut ParamStore,
        prefix: &str,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let (c1, c2, flat, out) = (config.c1, config.c2, config.flat_len(), config.out_dim);
        let ids = CnnIds {
            conv1_w: store.add_uniform(format!("{prefix}conv1.w"), &[c1, 1, 3, 3], 9, rng),
            conv1_b: store.add_zeros(format!("{prefix}conv1.b"), &[c1]),
            conv2_w: store.add_uniform(format!("{prefix}conv2.w"), &[c2, c1, 3, 3], 9 * c1, rng),
            conv2_b: store.add_zeros(format!("{prefix}conv2.b"), &[c2]),
            fc_w: store.add_uniform(format!("{prefix}fc.w"), &[flat, out], flat, rng),
            fc_b: store.add_zeros(format!("{prefix}fc.b"), &[out]),
        };
        Ok(Self {
            config,
            ids,
            input_mean: 0.0,
            input_std: 1.0,
        })
    }

    /// Binds to weights already present in `store` (e.g. a loaded checkpoint).
    pub fn attach(
        config: CnnConfig,
        store: &ParamStore,
        prefix: &str,
        input_mean: f64,
        input_std: f64,
    ) -> Result<Self> {
        config.validate()?;
        let id = |i: usize| {
            store
                .find(&format!("{prefix}{}", NAMES[i]))
                .ok_or_else(|| Error::data(format!("checkpoint lacks {prefix}{}", NAMES[i])))
        };
        let ids = CnnIds {
            conv1_w: id(0)?,
            conv1_b: id(1)?,
            conv2_w: id(2)?,
            conv2_b: id(3)?,
            fc_w: id(4)?,
            fc_b: id(5)?,
        };
        let expect = [
            (ids.conv1_w, config.c1 * 9),
            (ids.conv2_w, config.c2 * config.c1 * 9),
            (ids.fc_w, config.flat_len() * config.out_dim),
        ];
        for (pid, n) in expect {
            if store.get(pid).len() != n {
                return Err(Error::shape(format!(
                    "{} has the wrong size",
                    store.param(pid).name
                )));
            }
        }
        let mut enc = Self {
            config,
            ids,
            input_mean: 0.0,
            input_std: 1.0,
        };
        enc.set_input_normalization(input_mean, input_std)?;
        Ok(enc)
    }

    pub fn config(&self) -> &CnnConfig {
        &self.config
    }

    pub fn input_normalization(&self) -> (f64, f64) {
        (self.input_mean, self.input_std)
    }

    pub fn set_input_normalization(&mut self, mean: f64, std: f64) -> Result<()> {
        if !mean.is_finite() || !(std > 0.0) || !std.is_finite() {
            return Err(Error::config(
                "input normalization needs finite mean and positive std",
            ));
        }
        self.input_mean = mean;
        self.input_std = std;
        Ok(())
    }

    /// Mean and standard deviation over every cell of the given grids.
    pub fn fit_input_normalization<'a>(
        &mut self,
        grids: impl IntoIterator<Item = &'a [f64]>,
    ) -> Result<()> {
        let (mut n, mut s, mut q) = (0usize, 0.0, 0.0);
        for g in grids {
            for v in g {
                n += 1;
                s += v;
                q += v * v;
            }
        }
        if n == 0 {
            return Err(Error::data("no grids to fit input normalization"));
        }
        let mean = s / n as f64;
        let std = (q / n as f64 - mean * mean).max(0.0).sqrt();
        self.set_input_normalization(mean, if std > 1e-9 { std } else { 1.0 })
    }

    /// Average-pools a spectrogram onto the encoder's input grid.
    pub fn prepare(&self, spec: &Spectrogram) -> Result<Vec<f64>> {
        pool_grid(spec, self.config.grid_t, self.config.grid_f)
    }

    /// Encodes one grid.
    pub fn forward(&self, store: &ParamStore, grid: &[f64]) -> (Vec<f64>, CnnCache) {
        let (out, cache) = self.forward_batch(store, &[grid]);
        (out.into_raw_vec_and_offset().0, cache)
    }

    /// Encodes a batch of grids, one output row per grid.
    pub fn forward_batch<G: AsRef<[f64]>>(
        &self,
        store: &ParamStore,
        grids: &[G],
    ) -> (Array2<f64>, CnnCache) {
        let c = &self.config;
        let n = grids.len();
        let (h, w) = (c.grid_t, c.grid_f);
        let mut input = Vec::with_capacity(n * h * w);
        for g in grids {
            let g = g.as_ref();
            assert_eq!(g.len(), c.grid_len(), "grid size");
            input.extend(g.iter().map(|v| (v - self.input_mean) / self.input_std));
        }
        let input = Array2::from_shape_vec((n * h * w, 1), input).expect("input shape");

        let cols1 = im2col(&input, n, h, w);
        let pre1 = cols1.dot(&kernel_matrix(store.get(self.ids.conv1_w), c.c1, 1))
            + row(store.get(self.ids.conv1_b));
        let (pool1, arg1) = relu_maxpool2(&pre1, n, h, w);

        let cols2 = im2col(&pool1, n, h / 2, w / 2);
        let pre2 = cols2.dot(&kernel_matrix(store.get(self.ids.conv2_w), c.c2, c.c1))
            + row(store.get(self.ids.conv2_b));
        let (pool2, arg2) = relu_maxpool2(&pre2, n, h / 2, w / 2);

        let flat = pool2
            .into_shape_with_order((n, c.flat_len()))
            .expect("flatten");
        let fc = ArrayView2::from_shape((c.flat_len(), c.out_dim), store.get(self.ids.fc_w))
            .expect("fc shape");
        let out = flat.dot(&fc) + row(store.get(self.ids.fc_b));
        (
            out,
            CnnCache {
                batch: n,
                cols1,
                pre1,
                arg1,
                cols2,
                pre2,
                arg2,
                flat,
            },
        )
    }

    /// Accumulates weight gradients for upstream gradient `d_out`, one row per
    /// grid of the cached batch.
    pub fn backward(
        &self,
        store: &ParamStore,
        cache: &CnnCache,
        d_out: ArrayView2<'_, f64>,
        grads: &mut Grads,
    ) {
        let c = &self.config;
        let n = cache.batch;
        let (h, w) = (c.grid_t, c.grid_f);
        assert_eq!(d_out.dim(), (n, c.out_dim), "upstream gradient shape");

        add_into(grads.get_mut(self.ids.fc_b), d_out.sum_axis(Axis(0)).iter());
        add_into(
            grads.get_mut(self.ids.fc_w),
            cache.flat.t().dot(&d_out).iter(),
        );
        let fc = ArrayView2::from_shape((c.flat_len(), c.out_dim), store.get(self.ids.fc_w))
            .expect("fc shape");
        let d_flat = d_out.dot(&fc.t());
        let d_pool2 = d_flat
            .into_shape_with_order((n * (h / 4) * (w / 4), c.c2))
            .expect("unflatten");

        let d_pre2 = unpool_relu(&d_pool2, &cache.arg2, &cache.pre2);
        let w2 = kernel_matrix(store.get(self.ids.conv2_w), c.c2, c.c1);
        add_kernel_grad(
            grads.get_mut(self.ids.conv2_w),
            &cache.cols2.t().dot(&d_pre2),
            c.c2,
            c.c1,
        );
        add_into(
            grads.get_mut(self.ids.conv2_b),
            d_pre2.sum_axis(Axis(0)).iter(),
        );
        let d_pool1 = col2im(&d_pre2.dot(&w2.t()), n, h / 2, w / 2, c.c1);

        let d_pre1 = unpool_relu(&d_pool1, &cache.arg1, &cache.pre1);
        add_kernel_grad(
            grads.get_mut(self.ids.conv1_w),
            &cache.cols1.t().dot(&d_pre1),
            c.c1,
            1,
        );
        add_into(
            grads.get_mut(self.ids.conv1_b),
            d_pre1.sum_axis(Axis(0)).iter(),
        );
    }
}

/// Block-average pooling of a spectrogram onto a `grid_t x grid_f` grid.
pub fn pool_grid(spec: &Spectrogram, grid_t: usize, grid_f: usize) -> Result<Vec<f64>> {
    let (t, f) = (spec.num_frames(), spec.n_mels());
    if t < grid_t || f < grid_f || grid_t == 0 || grid_f == 0 {
        return Err(Error::shape(format!(
            "spectrogram {t}x{f} cannot pool onto {grid_t}x{grid_f}"
        )));
    }
    let mut grid = vec![0.0; grid_t * grid_f];
    for i in 0..grid_t {
        let (t0, t1) = (i * t / grid_t, (i + 1) * t / grid_t);
        for j in 0..grid_f {
            let (f0, f1) = (j * f / grid_f, (j + 1) * f / grid_f);
            let block = spec.frames.slice(ndarray::s![t0..t1, f0..f1]);
            grid[i * grid_f + j] = block.sum() / block.len() as f64;
        }
    }
    Ok(grid)
}

fn row(v: &[f64]) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((1, v.len()), v).expect("row vector")
}

fn add_into<'a>(acc: &mut [f64], src: impl Iterator<Item = &'a f64>) {
    acc.iter_mut().zip(src).for_each(|(a, b)| *a += b);
}

/// `[cout][cin][3][3]` weights as a `(cin*9) x cout` matrix matching
/// [`im2col`] columns.
fn kernel_matrix(weight: &[f64], cout: usize, cin: usize) -> Array2<f64> {
    Array2::from_shape_fn((cin * 9, cout), |(r, o)| weight[o * cin * 9 + r])
}

fn add_kernel_grad(acc: &mut [f64], g: &Array2<f64>, cout: usize, cin: usize) {
    for o in 0..cout {
        for r in 0..cin * 9 {
            acc[o * cin * 9 + r] += g[[r, o]];
        }
    }
}

/// Channel-last activations `(n*h*w) x cin` to same-padded 3x3 patches
/// `(n*h*w) x (cin*9)`, column `ci*9 + di*3 + dj`.
fn im2col(x: &Array2<f64>, n: usize, h: usize, w: usize) -> Array2<f64> {
    let cin = x.ncols();
    let mut cols = Array2::zeros((n * h * w, cin * 9));
    for b in 0..n {
        for i in 0..h {
            for j in 0..w {
                let mut dst = cols.row_mut((b * h + i) * w + j);
                for di in 0..3 {
                    let Some(ii) = (i + di).checked_sub(1).filter(|v| *v < h) else {
                        continue;
                    };
                    for dj in 0..3 {
                        let Some(jj) = (j + dj).checked_sub(1).filter(|v| *v < w) else {
                            continue;
                        };
                        let src = x.row((b * h + ii) * w + jj);
                        for ci in 0..cin {
                            dst[ci * 9 + di * 3 + dj] = src[ci];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`].
fn col2im(d_cols: &Array2<f64>, n: usize, h: usize, w: usize, cin: usize) -> Array2<f64> {
    let mut dx = Array2::zeros((n * h * w, cin));
    for b in 0..n {
        for i in 0..h {
            for j in 0..w {
                let src = d_cols.row((b * h + i) * w + j);
                for di in 0..3 {
                    let Some(ii) = (i + di).checked_sub(1).filter(|v| *v < h) else {
                        continue;
                    };
                    for dj in 0..3 {
                        let Some(jj) = (j + dj).checked_sub(1).filter(|v| *v < w) else {
                            continue;
                        };
                        let mut dst = dx.row_mut((b * h + ii) * w + jj);
                        for ci in 0..cin {
                            dst[ci] += src[ci * 9 + di * 3 + dj];
                        }
                    }
                }
            }
        }
    }
    dx
}

/// ReLU then 2x2 stride-2 max-pool over channel-last maps. Returns the pooled
/// maps and, per output cell, the flat index of the winning input cell.
fn relu_maxpool2(x: &Array2<f64>, n: usize, h: usize, w: usize) -> (Array2<f64>, Vec<usize>) {
    let ch = x.ncols();
    let (oh, ow) = (h / 2, w / 2);
    let flat = x.as_slice().expect("contiguous activations");
    let mut out = Array2::zeros((n * oh * ow, ch));
    let mut arg = vec![0; n * oh * ow * ch];
    for b in 0..n {
        for i in 0..oh {
            for j in 0..ow {
                let o = (b * oh + i) * ow + j;
                for c in 0..ch {
                    let at =
                        |di: usize, dj: usize| ((b * h + 2 * i + di) * w + 2 * j + dj) * ch + c;
                    let mut best = at(0, 0);
                    for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                        if flat[at(di, dj)] > flat[best] {
                            best = at(di, dj);
                        }
                    }
                    out[[o, c]] = flat[best].max(0.0);
                    arg[o * ch + c] = best;
                }
            }
        }
    }
    (out, arg)
}

/// Routes pooled gradients back to the winning cells, through the ReLU.
fn unpool_relu(d_pooled: &Array2<f64>, arg: &[usize], pre: &Array2<f64>) -> Array2<f64> {
    let pre_flat = pre.as_slice().expect("contiguous activations");
    let mut d = vec![0.0; pre_flat.len()];
    for (g, &idx) in d_pooled.iter().zip(arg) {
        if pre_flat[idx] > 0.0 {
            d[idx] += g;
        }
    }
    Array2::from_shape_vec(pre.raw_dim(), d).expect("gradient shape")
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn tiny() -> CnnConfig {
        CnnConfig {
            grid_t: 4,
            grid_f: 8,
            c1: 2,
            c2: 3,
            out_dim: 5,
        }
    }

    #[test]
    fn deterministic_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let enc = CnnEncoder::init(CnnConfig::default(), &mut store, "enc.", &mut rng).unwrap();
        let grid: Vec<f64> = (0..128).map(|i| (i as f64 * 0.37).sin()).collect();
        let (a, _) = enc.forward(&store, &grid);
        let (b, _) = enc.forward(&store, &grid);
        assert_eq!(a, b);
        assert_eq!(a.len(), 128);
    }

    #[test]
    fn weight_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let enc = CnnEncoder::init(tiny(), &mut store, "", &mut rng).unwrap();
        let grid: Vec<f64> = (0..32).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let probe: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let loss = |s: &ParamStore| -> f64 {
            let (out, _) = enc.forward(s, &grid);
            out.iter().zip(&probe).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = enc.forward(&store, &grid);
        let mut grads = store.zero_grads();
        enc.backward(
            &store,
            &cache,
            ArrayView2::from_shape((1, 5), &probe).unwrap(),
            &mut grads,
        );
        let h = 1e-5;
        for pid in 0..store.len() {
            let id = ParamId(pid);
            for k in 0..store.get(id).len() {
                let orig = store.get(id)[k];
                store.get_mut(id)[k] = orig + h;
                let up = loss(&store);
                store.get_mut(id)[k] = orig - h;
                let down = loss(&store);
                store.get_mut(id)[k] = orig;
                let numeric = (up - down) / (2.0 * h);
                let analytic = grads.get(id)[k];
                let denom = analytic.abs().max(numeric.abs()).max(1e-6);
                assert!(
                    (analytic - numeric).abs() / denom < 1e-5,
                    "{} [{k}]",
                    store.param(id).name
                );
            }
        }
    }

    #[test]
    fn batch_matches_single_and_backward_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut store = ParamStore::new();
        let enc = CnnEncoder::init(tiny(), &mut store, "", &mut rng).unwrap();
        let grids: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..32).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let d: Array2<f64> = Array2::from_shape_fn((3, 5), |_| rng.gen_range(-1.0..1.0));
        let (batch, cache) = enc.forward_batch(&store, &grids);
        let mut g_batch = store.zero_grads();
        enc.backward(&store, &cache, d.view(), &mut g_batch);
        let mut g_single = store.zero_grads();
        for (i, g) in grids.iter().enumerate() {
            let (one, c1) = enc.forward(&store, g);
            for (a, b) in one.iter().zip(batch.row(i)) {
                assert!((a - b).abs() < 1e-12);
            }
            enc.backward(
                &store,
                &c1,
                d.slice(ndarray::s![i..i + 1, ..]),
                &mut g_single,
            );
        }
        for (a, b) in g_batch
            .tensors()
            .iter()
            .flatten()
            .zip(g_single.tensors().iter().flatten())
        {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn attach_finds_initialized_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let enc = CnnEncoder::init(tiny(), &mut store, "enc.", &mut rng).unwrap();
        let again = CnnEncoder::attach(tiny(), &store, "enc.", 0.0, 1.0).unwrap();
        assert_eq!(enc, again);
        assert!(
            CnnEncoder::attach(CnnConfig { c1: 3, ..tiny() }, &store, "enc.", 0.0, 1.0).is_err()
        );
        assert!(CnnConfig {
            grid_t: 6,
            ..tiny()
        }
        .validate()
        .is_err());
    }
}
