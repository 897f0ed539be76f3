//! Layer vocabulary: conv2d, batchnorm, maxpool, flatten, dense, relu, softmax.
//!
//! Image data is NHWC `[batch, height, width, channels]` and convolution
//! kernels are HWIO `[kh, kw, in_ch, out_ch]`. Convolutions use stride 1
//! with same padding (output spatial size equals input size; when the
//! kernel side is even the extra padding row/column goes on the
//! bottom/right). Max pooling uses non-overlapping windows and keeps a
//! clamped partial window at each edge, so the output side is
//! `ceil(input / window)`.
//!
//! Each layer implements an exact backward pass; the pairing is verified
//! against central finite differences in the crate tests.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};
use serde::{Deserialize, Serialize};

use crate::error::NnError;
use crate::tensor::Tensor;

// ── specification ───────────────────────────────────────────────────────────

/// Architecture-level description of one layer. Hyperparameters live here;
/// learned values live in [`Layer::params`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LayerSpec {
    /// Stride-1 same-padding 2-D convolution.
    Conv2d {
        kh: usize,
        kw: usize,
        in_ch: usize,
        out_ch: usize,
    },
    /// Per-channel batch normalization over `batch * height * width`.
    BatchNorm {
        channels: usize,
        eps: f64,
        momentum: f64,
    },
    /// Non-overlapping max pooling with clamped partial edge windows.
    MaxPool { ph: usize, pw: usize },
    /// NHWC image to `[batch, features]` matrix.
    Flatten,
    /// Fully connected layer on `[batch, features]`.
    Dense { inputs: usize, outputs: usize },
    Relu,
    /// Row-wise softmax on `[batch, classes]`.
    Softmax,
}

impl LayerSpec {
    pub fn batch_norm(channels: usize) -> Self {
        LayerSpec::BatchNorm {
            channels,
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    /// Output shape for one sample (no batch axis): images are `[h, w, c]`,
    /// vectors `[features]`.
    pub fn infer(&self, input: &[usize]) -> Result<Vec<usize>, NnError> {
        match self {
            LayerSpec::Conv2d { kh, kw, in_ch, out_ch } => {
                if *kh == 0 || *kw == 0 || *in_ch == 0 || *out_ch == 0 {
                    return Err(NnError::InvalidConfig(
                        "conv2d dimensions must be positive".into(),
                    ));
                }
                match input {
                    [h, w, c] if *c == *in_ch => Ok(vec![*h, *w, *out_ch]),
                    other => Err(NnError::shape("conv2d input", &[0, 0, *in_ch], other)),
                }
            }
            LayerSpec::BatchNorm { channels, .. } => match input {
                [h, w, c] if *c == *channels => Ok(vec![*h, *w, *c]),
                other => Err(NnError::shape("batchnorm input", &[0, 0, *channels], other)),
            },
            LayerSpec::MaxPool { ph, pw } => {
                if *ph == 0 || *pw == 0 {
                    return Err(NnError::InvalidConfig("pool window must be positive".into()));
                }
                match input {
                    [h, w, c] if *h > 0 && *w > 0 => {
                        Ok(vec![h.div_ceil(*ph), w.div_ceil(*pw), *c])
                    }
                    other => Err(NnError::shape("maxpool input", &[1, 1, 0], other)),
                }
            }
            LayerSpec::Flatten => match input {
                [h, w, c] => Ok(vec![h * w * c]),
                other => Err(NnError::shape("flatten input", &[0, 0, 0], other)),
            },
            LayerSpec::Dense { inputs, outputs } => match input {
                [f] if *f == *inputs => Ok(vec![*outputs]),
                other => Err(NnError::shape("dense input", &[*inputs], other)),
            },
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Softmax => match input {
                [k] if *k > 0 => Ok(vec![*k]),
                other => Err(NnError::shape("softmax input", &[1], other)),
            },
        }
    }
}

// ── layer with owned parameters ─────────────────────────────────────────────

/// A layer instance: spec plus learned parameters and running state.
///
/// Parameter order is fixed per variant and relied on by the optimizers:
/// conv2d `[kernel, bias]`, batchnorm `[gamma, beta]`, dense
/// `[weight, bias]`, everything else has none. Batchnorm additionally
/// keeps `[running_mean, running_var]` as non-learned state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub spec: LayerSpec,
    pub params: Vec<Tensor>,
    pub state: Vec<Tensor>,
}

/// Per-layer values saved by the training forward pass for the backward pass.
#[derive(Debug, Clone)]
pub enum LayerCache {
    Conv2d { input: Tensor },
    BatchNorm { x_hat: Tensor, inv_std: Vec<f64> },
    MaxPool { in_shape: [usize; 4], argmax: Vec<u32> },
    Flatten { in_shape: Vec<usize> },
    Dense { input: Tensor },
    Relu { positive: Vec<bool> },
    Softmax { output: Tensor },
    None,
}

impl Layer {
    /// Allocates parameters (zeroed weights, unit gamma / running variance)
    /// for the spec. Call [`Layer::init_params`] to randomize weights.
    pub fn new(spec: LayerSpec) -> Self {
        let (params, state) = match &spec {
            LayerSpec::Conv2d { kh, kw, in_ch, out_ch } => (
                vec![
                    Tensor::zeros(&[*kh, *kw, *in_ch, *out_ch]),
                    Tensor::zeros(&[*out_ch]),
                ],
                vec![],
            ),
            LayerSpec::BatchNorm { channels, .. } => (
                vec![Tensor::filled(&[*channels], 1.0), Tensor::zeros(&[*channels])],
                vec![Tensor::zeros(&[*channels]), Tensor::filled(&[*channels], 1.0)],
            ),
            LayerSpec::Dense { inputs, outputs } => (
                vec![Tensor::zeros(&[*inputs, *outputs]), Tensor::zeros(&[*outputs])],
                vec![],
            ),
            _ => (vec![], vec![]),
        };
        Layer { spec, params, state }
    }

    /// He-uniform initialization for conv and dense weights
    /// (`U(-sqrt(6/fan_in), sqrt(6/fan_in))`); biases stay zero.
    pub fn init_params<R: rand::Rng>(&mut self, rng: &mut R) {
        let fan_in = match &self.spec {
            LayerSpec::Conv2d { kh, kw, in_ch, .. } => kh * kw * in_ch,
            LayerSpec::Dense { inputs, .. } => *inputs,
            _ => return,
        };
        let limit = (6.0 / fan_in as f64).sqrt();
        for v in self.params[0].data_mut() {
            *v = rng.gen_range(-limit..limit);
        }
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    // ── forward ─────────────────────────────────────────────────────────

    /// Inference forward pass; batchnorm uses running statistics.
    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor, NnError> {
        match &self.spec {
            LayerSpec::Conv2d { .. } => self.conv_forward(x).map(|(y, _)| y),
            LayerSpec::BatchNorm { eps, .. } => self.bn_eval(x, *eps),
            LayerSpec::MaxPool { ph, pw } => pool_forward(x, *ph, *pw).map(|(y, _)| y),
            LayerSpec::Flatten => flatten_forward(x).map(|(y, _)| y),
            LayerSpec::Dense { .. } => self.dense_forward(x),
            LayerSpec::Relu => Ok(relu_forward(x).0),
            LayerSpec::Softmax => softmax_forward(x),
        }
    }

    /// Training forward pass; returns the activation plus the cache needed
    /// by [`Layer::backward`]. Batchnorm uses batch statistics and updates
    /// its running mean/variance.
    pub fn forward_train(&mut self, x: &Tensor) -> Result<(Tensor, LayerCache), NnError> {
        match self.spec.clone() {
            LayerSpec::Conv2d { .. } => {
                let (y, input) = self.conv_forward(x)?;
                Ok((y, LayerCache::Conv2d { input }))
            }
            LayerSpec::BatchNorm { eps, momentum, .. } => self.bn_train(x, eps, momentum),
            LayerSpec::MaxPool { ph, pw } => {
                let (y, argmax) = pool_forward(x, ph, pw)?;
                let s = x.shape();
                Ok((
                    y,
                    LayerCache::MaxPool {
                        in_shape: [s[0], s[1], s[2], s[3]],
                        argmax,
                    },
                ))
            }
            LayerSpec::Flatten => {
                let (y, in_shape) = flatten_forward(x)?;
                Ok((y, LayerCache::Flatten { in_shape }))
            }
            LayerSpec::Dense { .. } => {
                let y = self.dense_forward(x)?;
                Ok((y, LayerCache::Dense { input: x.clone() }))
            }
            LayerSpec::Relu => {
                let (y, positive) = relu_forward(x);
                Ok((y, LayerCache::Relu { positive }))
            }
            LayerSpec::Softmax => {
                let y = softmax_forward(x)?;
                Ok((y.clone(), LayerCache::Softmax { output: y }))
            }
        }
    }

    /// Exact gradient of the loss with respect to the layer input and
    /// parameters, given the gradient `dy` with respect to the output.
    pub fn backward(&self, cache: &LayerCache, dy: &Tensor) -> Result<(Tensor, Vec<Tensor>), NnError> {
        match (&self.spec, cache) {
            (LayerSpec::Conv2d { .. }, LayerCache::Conv2d { input }) => {
                self.conv_backward(input, dy)
            }
            (LayerSpec::BatchNorm { eps, .. }, LayerCache::BatchNorm { x_hat, inv_std }) => {
                self.bn_backward(x_hat, inv_std, *eps, dy)
            }
            (LayerSpec::MaxPool { .. }, LayerCache::MaxPool { in_shape, argmax }) => {
                pool_backward(in_shape, argmax, dy)
            }
            (LayerSpec::Flatten, LayerCache::Flatten { in_shape }) => {
                Ok((dy.reshape(in_shape)?, vec![]))
            }
            (LayerSpec::Dense { .. }, LayerCache::Dense { input }) => self.dense_backward(input, dy),
            (LayerSpec::Relu, LayerCache::Relu { positive }) => {
                let mut dx = dy.clone();
                for (g, keep) in dx.data_mut().iter_mut().zip(positive) {
                    if !keep {
                        *g = 0.0;
                    }
                }
                Ok((dx, vec![]))
            }
            (LayerSpec::Softmax, LayerCache::Softmax { output }) => {
                Ok((softmax_backward(output, dy), vec![]))
            }
            _ => Err(NnError::State(
                "layer backward called with a cache from a different layer".into(),
            )),
        }
    }

    // ── conv2d ──────────────────────────────────────────────────────────

    fn conv_dims(&self) -> (usize, usize, usize, usize) {
        match self.spec {
            LayerSpec::Conv2d { kh, kw, in_ch, out_ch } => (kh, kw, in_ch, out_ch),
            _ => unreachable!(),
        }
    }

    fn conv_forward(&self, x: &Tensor) -> Result<(Tensor, Tensor), NnError> {
        let (kh, kw, ic, oc) = self.conv_dims();
        let s = check_nhwc(x, "conv2d")?;
        if s[3] != ic {
            return Err(NnError::shape("conv2d channels", &[ic], &[s[3]]));
        }
        let (n, h, w) = (s[0], s[1], s[2]);
        let hw = h * w;
        let k = kh * kw * ic;
        let mut col = vec![0.0; hw * k];
        let mut y = Tensor::zeros(&[n, h, w, oc]);
        let kernel = ArrayView2::from_shape((k, oc), self.params[0].data()).unwrap();
        let bias = self.params[1].data();
        for ni in 0..n {
            im2col(x, ni, kh, kw, &mut col);
            let col_m = ArrayView2::from_shape((hw, k), &col[..]).unwrap();
            let out = &mut y.data_mut()[ni * hw * oc..(ni + 1) * hw * oc];
            let mut out_m = ArrayViewMut2::from_shape((hw, oc), out).unwrap();
            general_mat_mul(1.0, &col_m, &kernel, 0.0, &mut out_m);
            for row in out.chunks_exact_mut(oc) {
                for (v, b) in row.iter_mut().zip(bias) {
                    *v += b;
                }
            }
        }
        Ok((y, x.clone()))
    }

    fn conv_backward(&self, x: &Tensor, dy: &Tensor) -> Result<(Tensor, Vec<Tensor>), NnError> {
        let (kh, kw, ic, oc) = self.conv_dims();
        let s = x.shape();
        let (n, h, w) = (s[0], s[1], s[2]);
        if dy.shape() != [n, h, w, oc] {
            return Err(NnError::shape("conv2d backward", &[n, h, w, oc], dy.shape()));
        }
        let hw = h * w;
        let k = kh * kw * ic;
        let mut col = vec![0.0; hw * k];
        let mut dcol = vec![0.0; hw * k];
        let mut dx = Tensor::zeros(s);
        let mut dkernel = Tensor::zeros(self.params[0].shape());
        let mut dbias = Tensor::zeros(&[oc]);
        let kernel = ArrayView2::from_shape((k, oc), self.params[0].data()).unwrap();
        for ni in 0..n {
            im2col(x, ni, kh, kw, &mut col);
            let col_m = ArrayView2::from_shape((hw, k), &col[..]).unwrap();
            let dy_s = &dy.data()[ni * hw * oc..(ni + 1) * hw * oc];
            let dy_m = ArrayView2::from_shape((hw, oc), dy_s).unwrap();

            // dW accumulates colᵀ · dy over the batch; db accumulates row sums.
            let mut dk_m = ArrayViewMut2::from_shape((k, oc), dkernel.data_mut()).unwrap();
            general_mat_mul(1.0, &col_m.t(), &dy_m, 1.0, &mut dk_m);
            for row in dy_s.chunks_exact(oc) {
                for (g, v) in dbias.data_mut().iter_mut().zip(row) {
                    *g += v;
                }
            }

            // dx scatters dcol = dy · Wᵀ back through the im2col gather.
            let mut dcol_m = ArrayViewMut2::from_shape((hw, k), &mut dcol[..]).unwrap();
            general_mat_mul(1.0, &dy_m, &kernel.t(), 0.0, &mut dcol_m);
            col2im(&mut dx, ni, kh, kw, &dcol);
        }
        Ok((dx, vec![dkernel, dbias]))
    }

    // ── batchnorm ───────────────────────────────────────────────────────

    fn bn_eval(&self, x: &Tensor, eps: f64) -> Result<Tensor, NnError> {
        let s = check_nhwc(x, "batchnorm")?;
        let c = self.params[0].len();
        if s[3] != c {
            return Err(NnError::shape("batchnorm channels", &[c], &[s[3]]));
        }
        let gamma = self.params[0].data();
        let beta = self.params[1].data();
        let rm = self.state[0].data();
        let rv = self.state[1].data();
        let mut y = x.clone();
        for chunk in y.data_mut().chunks_exact_mut(c) {
            for (ci, v) in chunk.iter_mut().enumerate() {
                *v = gamma[ci] * (*v - rm[ci]) / (rv[ci] + eps).sqrt() + beta[ci];
            }
        }
        Ok(y)
    }

    fn bn_train(&mut self, x: &Tensor, eps: f64, momentum: f64) -> Result<(Tensor, LayerCache), NnError> {
        let s = check_nhwc(x, "batchnorm")?;
        let c = self.params[0].len();
        if s[3] != c {
            return Err(NnError::shape("batchnorm channels", &[c], &[s[3]]));
        }
        if s[0] < 2 {
            return Err(NnError::State(
                "batchnorm in training mode needs a batch of at least 2 samples".into(),
            ));
        }
        let m = (s[0] * s[1] * s[2]) as f64;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for chunk in x.data().chunks_exact(c) {
            for (ci, v) in chunk.iter().enumerate() {
                mean[ci] += v;
            }
        }
        for v in mean.iter_mut() {
            *v /= m;
        }
        for chunk in x.data().chunks_exact(c) {
            for (ci, v) in chunk.iter().enumerate() {
                let d = v - mean[ci];
                var[ci] += d * d;
            }
        }
        // Biased variance, both for normalization and for the running copy.
        for v in var.iter_mut() {
            *v /= m;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();

        for (r, b) in self.state[0].data_mut().iter_mut().zip(&mean) {
            *r = (1.0 - momentum) * *r + momentum * b;
        }
        for (r, b) in self.state[1].data_mut().iter_mut().zip(&var) {
            *r = (1.0 - momentum) * *r + momentum * b;
        }

        let gamma = self.params[0].data().to_vec();
        let beta = self.params[1].data().to_vec();
        let mut x_hat = x.clone();
        for chunk in x_hat.data_mut().chunks_exact_mut(c) {
            for (ci, v) in chunk.iter_mut().enumerate() {
                *v = (*v - mean[ci]) * inv_std[ci];
            }
        }
        let mut y = x_hat.clone();
        for chunk in y.data_mut().chunks_exact_mut(c) {
            for (ci, v) in chunk.iter_mut().enumerate() {
                *v = gamma[ci] * *v + beta[ci];
            }
        }
        Ok((y, LayerCache::BatchNorm { x_hat, inv_std }))
    }

    fn bn_backward(
        &self,
        x_hat: &Tensor,
        inv_std: &[f64],
        _eps: f64,
        dy: &Tensor,
    ) -> Result<(Tensor, Vec<Tensor>), NnError> {
        let s = x_hat.shape();
        let c = self.params[0].len();
        if dy.shape() != s {
            return Err(NnError::shape("batchnorm backward", s, dy.shape()));
        }
        let m = (s[0] * s[1] * s[2]) as f64;
        let gamma = self.params[0].data();
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        for (dchunk, xchunk) in dy.data().chunks_exact(c).zip(x_hat.data().chunks_exact(c)) {
            for ci in 0..c {
                dgamma[ci] += dchunk[ci] * xchunk[ci];
                dbeta[ci] += dchunk[ci];
            }
        }
        let mut dx = Tensor::zeros(s);
        for ((dxc, dchunk), xchunk) in dx
            .data_mut()
            .chunks_exact_mut(c)
            .zip(dy.data().chunks_exact(c))
            .zip(x_hat.data().chunks_exact(c))
        {
            for ci in 0..c {
                let term = m * dchunk[ci] - dbeta[ci] - xchunk[ci] * dgamma[ci];
                dxc[ci] = gamma[ci] * inv_std[ci] / m * term;
            }
        }
        Ok((
            dx,
            vec![
                Tensor::from_vec(&[c], dgamma)?,
                Tensor::from_vec(&[c], dbeta)?,
            ],
        ))
    }

    // ── dense ───────────────────────────────────────────────────────────

    fn dense_dims(&self) -> (usize, usize) {
        match self.spec {
            LayerSpec::Dense { inputs, outputs } => (inputs, outputs),
            _ => unreachable!(),
        }
    }

    fn dense_forward(&self, x: &Tensor) -> Result<Tensor, NnError> {
        let (inputs, outputs) = self.dense_dims();
        if x.rank() != 2 || x.shape()[1] != inputs {
            return Err(NnError::shape("dense input", &[0, inputs], x.shape()));
        }
        let n = x.shape()[0];
        let mut y = Tensor::zeros(&[n, outputs]);
        {
            let x_m = ArrayView2::from_shape((n, inputs), x.data()).unwrap();
            let w_m = ArrayView2::from_shape((inputs, outputs), self.params[0].data()).unwrap();
            let mut y_m = ArrayViewMut2::from_shape((n, outputs), y.data_mut()).unwrap();
            general_mat_mul(1.0, &x_m, &w_m, 0.0, &mut y_m);
        }
        let bias = self.params[1].data();
        for row in y.data_mut().chunks_exact_mut(outputs) {
            for (v, b) in row.iter_mut().zip(bias) {
                *v += b;
            }
        }
        Ok(y)
    }

    fn dense_backward(&self, x: &Tensor, dy: &Tensor) -> Result<(Tensor, Vec<Tensor>), NnError> {
        let (inputs, outputs) = self.dense_dims();
        let n = x.shape()[0];
        if dy.shape() != [n, outputs] {
            return Err(NnError::shape("dense backward", &[n, outputs], dy.shape()));
        }
        let mut dx = Tensor::zeros(&[n, inputs]);
        let mut dw = Tensor::zeros(&[inputs, outputs]);
        let mut db = Tensor::zeros(&[outputs]);
        {
            let x_m = ArrayView2::from_shape((n, inputs), x.data()).unwrap();
            let dy_m = ArrayView2::from_shape((n, outputs), dy.data()).unwrap();
            let w_m = ArrayView2::from_shape((inputs, outputs), self.params[0].data()).unwrap();
            let mut dw_m = ArrayViewMut2::from_shape((inputs, outputs), dw.data_mut()).unwrap();
            general_mat_mul(1.0, &x_m.t(), &dy_m, 0.0, &mut dw_m);
            let mut dx_m = ArrayViewMut2::from_shape((n, inputs), dx.data_mut()).unwrap();
            general_mat_mul(1.0, &dy_m, &w_m.t(), 0.0, &mut dx_m);
        }
        for row in dy.data().chunks_exact(outputs) {
            for (g, v) in db.data_mut().iter_mut().zip(row) {
                *g += v;
            }
        }
        Ok((dx, vec![dw, db]))
    }
}

// ── free helpers ────────────────────────────────────────────────────────────

fn check_nhwc<'a>(x: &'a Tensor, context: &str) -> Result<&'a [usize], NnError> {
    if x.rank() != 4 {
        return Err(NnError::shape(context, &[0, 0, 0, 0], x.shape()));
    }
    Ok(x.shape())
}

/// Gathers one sample into a `[h*w, kh*kw*in_ch]` patch matrix for
/// stride-1 same-padding convolution. Out-of-bounds taps read zero.
fn im2col(x: &Tensor, sample: usize, kh: usize, kw: usize, col: &mut [f64]) {
    let s = x.shape();
    let (h, w, ic) = (s[1], s[2], s[3]);
    let pad_top = (kh - 1) / 2;
    let pad_left = (kw - 1) / 2;
    let base = sample * h * w * ic;
    let data = x.data();
    col.fill(0.0);
    let k = kh * kw * ic;
    for oy in 0..h {
        for ox in 0..w {
            let row = (oy * w + ox) * k;
            for ky in 0..kh {
                let iy = oy as isize + ky as isize - pad_top as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..kw {
                    let ix = ox as isize + kx as isize - pad_left as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let src = base + (iy as usize * w + ix as usize) * ic;
                    let dst = row + (ky * kw + kx) * ic;
                    col[dst..dst + ic].copy_from_slice(&data[src..src + ic]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds a patch-matrix gradient back onto
/// the input gradient for one sample.
fn col2im(dx: &mut Tensor, sample: usize, kh: usize, kw: usize, dcol: &[f64]) {
    let s = dx.shape().to_vec();
    let (h, w, ic) = (s[1], s[2], s[3]);
    let pad_top = (kh - 1) / 2;
    let pad_left = (kw - 1) / 2;
    let base = sample * h * w * ic;
    let data = dx.data_mut();
    let k = kh * kw * ic;
    for oy in 0..h {
        for ox in 0..w {
            let row = (oy * w + ox) * k;
            for ky in 0..kh {
                let iy = oy as isize + ky as isize - pad_top as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..kw {
                    let ix = ox as isize + kx as isize - pad_left as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let dst = base + (iy as usize * w + ix as usize) * ic;
                    let src = row + (ky * kw + kx) * ic;
                    for ci in 0..ic {
                        data[dst + ci] += dcol[src + ci];
                    }
                }
            }
        }
    }
}

fn pool_forward(x: &Tensor, ph: usize, pw: usize) -> Result<(Tensor, Vec<u32>), NnError> {
    let s = check_nhwc(x, "maxpool")?;
    let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
    let oh = h.div_ceil(ph);
    let ow = w.div_ceil(pw);
    let mut y = Tensor::zeros(&[n, oh, ow, c]);
    let mut argmax = vec![0u32; n * oh * ow * c];
    let data = x.data();
    let out = y.data_mut();
    for ni in 0..n {
        for oy in 0..oh {
            let y0 = oy * ph;
            let y1 = (y0 + ph).min(h);
            for ox in 0..ow {
                let x0 = ox * pw;
                let x1 = (x0 + pw).min(w);
                for ci in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_at = 0usize;
                    for iy in y0..y1 {
                        for ix in x0..x1 {
                            let at = ((ni * h + iy) * w + ix) * c + ci;
                            if data[at] > best {
                                best = data[at];
                                best_at = at;
                            }
                        }
                    }
                    let o = ((ni * oh + oy) * ow + ox) * c + ci;
                    out[o] = best;
                    argmax[o] = best_at as u32;
                }
            }
        }
    }
    Ok((y, argmax))
}

fn pool_backward(in_shape: &[usize; 4], argmax: &[u32], dy: &Tensor) -> Result<(Tensor, Vec<Tensor>), NnError> {
    if dy.len() != argmax.len() {
        return Err(NnError::shape("maxpool backward", &[argmax.len()], &[dy.len()]));
    }
    let mut dx = Tensor::zeros(in_shape);
    let data = dx.data_mut();
    for (g, at) in dy.data().iter().zip(argmax) {
        data[*at as usize] += g;
    }
    Ok((dx, vec![]))
}

fn flatten_forward(x: &Tensor) -> Result<(Tensor, Vec<usize>), NnError> {
    let s = check_nhwc(x, "flatten")?;
    let per_sample = s[1] * s[2] * s[3];
    Ok((x.reshape(&[s[0], per_sample])?, s.to_vec()))
}

fn relu_forward(x: &Tensor) -> (Tensor, Vec<bool>) {
    let mut y = x.clone();
    let positive: Vec<bool> = x.data().iter().map(|v| *v > 0.0).collect();
    for v in y.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    (y, positive)
}

fn softmax_forward(x: &Tensor) -> Result<Tensor, NnError> {
    if x.rank() != 2 {
        return Err(NnError::shape("softmax input", &[0, 0], x.shape()));
    }
    let k = x.shape()[1];
    let mut y = x.clone();
    for row in y.data_mut().chunks_exact_mut(k) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Ok(y)
}

fn softmax_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let k = y.shape()[1];
    let mut dx = dy.clone();
    for (drow, yrow) in dx.data_mut().chunks_exact_mut(k).zip(y.data().chunks_exact(k)) {
        let dot: f64 = drow.iter().zip(yrow).map(|(d, y)| d * y).sum();
        for (d, yv) in drow.iter_mut().zip(yrow) {
            *d = yv * (*d - dot);
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn tensor4(n: usize, h: usize, w: usize, c: usize, f: impl Fn(usize) -> f64) -> Tensor {
        Tensor::from_vec(&[n, h, w, c], (0..n * h * w * c).map(f).collect()).unwrap()
    }

    #[test]
    fn conv_identity_kernel_reproduces_input() {
        // A 3x3 kernel whose only nonzero tap is the center acts as the
        // identity under same padding.
        let mut layer = Layer::new(LayerSpec::Conv2d { kh: 3, kw: 3, in_ch: 1, out_ch: 1 });
        let center = (1 * 3 + 1) * 1; // ky=1, kx=1, ci=0, oc=0
        layer.params[0].data_mut()[center] = 1.0;
        let x = tensor4(1, 4, 5, 1, |i| (i as f64).sin());
        let y = layer.forward_eval(&x).unwrap();
        assert_eq!(y.shape(), x.shape(), "same padding keeps the spatial size");
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_matches_direct_six_loop_sum() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let (kh, kw, ic, oc) = (3, 2, 2, 3);
        let mut layer = Layer::new(LayerSpec::Conv2d { kh, kw, in_ch: ic, out_ch: oc });
        for v in layer.params[0].data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        for v in layer.params[1].data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let (n, h, w) = (2, 5, 4);
        let mut x = Tensor::zeros(&[n, h, w, ic]);
        for v in x.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let y = layer.forward_eval(&x).unwrap();

        let kernel = &layer.params[0];
        let bias = layer.params[1].data();
        let pad_top = (kh - 1) / 2;
        let pad_left = (kw - 1) / 2;
        for ni in 0..n {
            for oy in 0..h {
                for ox in 0..w {
                    for co in 0..oc {
                        let mut acc = bias[co];
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = oy as isize + ky as isize - pad_top as isize;
                                let ix = ox as isize + kx as isize - pad_left as isize;
                                if iy < 0 || iy >= h as isize || ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                for ci in 0..ic {
                                    let kat = ((ky * kw + kx) * ic + ci) * oc + co;
                                    acc += kernel.data()[kat]
                                        * x.at4(ni, iy as usize, ix as usize, ci);
                                }
                            }
                        }
                        let got = y.at4(ni, oy, ox, co);
                        assert!(
                            (got - acc).abs() < 1e-12,
                            "mismatch at ({ni},{oy},{ox},{co}): {got} vs {acc}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn maxpool_keeps_partial_edge_windows() {
        // 5x5 input with a 4x4 window: output is 2x2, where the last row and
        // column come from clamped 1-wide windows.
        let x = tensor4(1, 5, 5, 1, |i| i as f64);
        let (y, _) = pool_forward(&x, 4, 4).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2, 1]);
        assert_eq!(y.at4(0, 0, 0, 0), 18.0, "max over rows 0..4, cols 0..4");
        assert_eq!(y.at4(0, 0, 1, 0), 19.0, "max over rows 0..4, col 4");
        assert_eq!(y.at4(0, 1, 0, 0), 23.0, "max over row 4, cols 0..4");
        assert_eq!(y.at4(0, 1, 1, 0), 24.0, "corner window is a single cell");
    }

    #[test]
    fn maxpool_backward_routes_to_argmax() {
        let x = tensor4(1, 4, 4, 1, |i| i as f64);
        let (_, argmax) = pool_forward(&x, 2, 2).unwrap();
        let dy = Tensor::filled(&[1, 2, 2, 1], 1.0);
        let (dx, _) = pool_backward(&[1, 4, 4, 1], &argmax, &dy).unwrap();
        let nonzero: Vec<usize> = dx
            .data()
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(nonzero, vec![5, 7, 13, 15], "each window's max gets the gradient");
    }

    #[test]
    fn softmax_rows_are_probabilities() {
        let x = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, -5.0, 0.0, 5.0]).unwrap();
        let y = softmax_forward(&x).unwrap();
        for row in y.data().chunks_exact(3) {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12, "rows sum to one, got {sum}");
            assert!(row.iter().all(|v| *v > 0.0 && *v < 1.0));
        }
        // Larger logits produce larger probabilities.
        assert!(y.at2(0, 2) > y.at2(0, 1) && y.at2(0, 1) > y.at2(0, 0));
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let x = Tensor::from_vec(&[1, 3], vec![700.0, 701.0, 702.0]).unwrap();
        let y = softmax_forward(&x).unwrap();
        assert!(y.all_finite(), "max subtraction keeps huge logits finite");
        let z = Tensor::from_vec(&[1, 3], vec![0.0, 1.0, 2.0]).unwrap();
        let yz = softmax_forward(&z).unwrap();
        for (a, b) in y.data().iter().zip(yz.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn batchnorm_train_standardizes_each_channel() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut layer = Layer::new(LayerSpec::batch_norm(2));
        let mut x = Tensor::zeros(&[4, 3, 3, 2]);
        for v in x.data_mut() {
            *v = rng.gen_range(-2.0..5.0);
        }
        let (y, _) = layer.forward_train(&x).unwrap();
        for ci in 0..2 {
            let vals: Vec<f64> = y.data().iter().skip(ci).step_by(2).cloned().collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-10, "channel mean after BN should be 0, got {m}");
            assert!((var - 1.0).abs() < 1e-3, "channel var after BN should be ~1, got {var}");
        }
    }

    #[test]
    fn batchnorm_rejects_single_sample_training_batch() {
        let mut layer = Layer::new(LayerSpec::batch_norm(1));
        let x = Tensor::zeros(&[1, 2, 2, 1]);
        assert!(matches!(layer.forward_train(&x), Err(NnError::State(_))));
        assert!(layer.forward_eval(&x).is_ok(), "eval mode works on any batch size");
    }

    #[test]
    fn batchnorm_running_stats_follow_momentum() {
        let mut layer = Layer::new(LayerSpec::batch_norm(1));
        let x = Tensor::filled(&[2, 1, 1, 1], 10.0);
        // Constant input: batch mean 10, batch var 0.
        layer.forward_train(&x).unwrap();
        assert!((layer.state[0].data()[0] - 1.0).abs() < 1e-12, "mean: 0.9*0 + 0.1*10");
        assert!((layer.state[1].data()[0] - 0.9).abs() < 1e-12, "var: 0.9*1 + 0.1*0");
    }

    #[test]
    fn dense_matches_manual_product() {
        let mut layer = Layer::new(LayerSpec::Dense { inputs: 2, outputs: 2 });
        layer.params[0] = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        layer.params[1] = Tensor::from_vec(&[2], vec![0.5, -0.5]).unwrap();
        let x = Tensor::from_vec(&[1, 2], vec![1.0, 1.0]).unwrap();
        let y = layer.forward_eval(&x).unwrap();
        assert_eq!(y.data(), &[4.5, 5.5]);
    }

    #[test]
    fn shape_inference_follows_layer_contracts() {
        let conv = LayerSpec::Conv2d { kh: 5, kw: 5, in_ch: 2, out_ch: 8 };
        assert_eq!(conv.infer(&[500, 56, 2]).unwrap(), vec![500, 56, 8]);
        assert!(conv.infer(&[500, 56, 3]).is_err(), "channel mismatch is an error");

        let pool = LayerSpec::MaxPool { ph: 4, pw: 4 };
        assert_eq!(pool.infer(&[5, 5, 1]).unwrap(), vec![2, 2, 1]);
        assert_eq!(pool.infer(&[500, 56, 8]).unwrap(), vec![125, 14, 8]);

        assert_eq!(LayerSpec::Flatten.infer(&[21, 3, 32]).unwrap(), vec![2016]);
        assert!(LayerSpec::Dense { inputs: 10, outputs: 4 }.infer(&[9]).is_err());
    }
}
