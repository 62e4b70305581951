//! 1D layers with hand-written backward passes.
//!
//! Tensors are `(batch, channels, length)` arrays of `f64`. Each layer keeps
//! whatever it needs from the last training-mode forward call and consumes it
//! in `backward`, which accumulates parameter gradients and returns the
//! gradient with respect to the layer input.
//!
//! Work is split into fixed chunks (per sample, per channel or per block of
//! output rows) and only the scheduling of those chunks depends on
//! [`exec::mode`], so sequential and parallel runs produce identical bits.

use ndarray::{s, Array1, Array2, Array3, ArrayView2, ArrayView3, Axis};
use rand::Rng;

use crate::exec;

/// Mutable view of one parameter tensor and its gradient accumulator.
pub struct ParamRef<'a> {
    pub value: &'a mut [f64],
    pub grad: &'a mut [f64],
}

/// Row-block size used when splitting weight-gradient products.
const ROW_CHUNK: usize = 32;

fn stack(batch: Vec<Array2<f64>>) -> Array3<f64> {
    let (c, l) = batch[0].dim();
    let mut flat = Vec::with_capacity(batch.len() * c * l);
    for a in &batch {
        flat.extend(a.iter().copied());
    }
    Array3::from_shape_vec((batch.len(), c, l), flat).expect("uniform batch shapes")
}

/// Concatenates `(rows, len_b)` blocks along columns.
fn hcat(blocks: &[Array2<f64>]) -> Array2<f64> {
    let views: Vec<ArrayView2<f64>> = blocks.iter().map(|b| b.view()).collect();
    ndarray::concatenate(Axis(1), &views).expect("uniform row counts")
}

/// `a · bᵀ`, split into row blocks of `a`.
fn matmul_abt_chunked(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Array2<f64> {
    let rows = a.nrows();
    let chunks = rows.div_ceil(ROW_CHUNK);
    let parts = exec::map_range(chunks, |i| {
        let lo = i * ROW_CHUNK;
        let hi = (lo + ROW_CHUNK).min(rows);
        a.slice(s![lo..hi, ..]).dot(&b.t())
    });
    let views: Vec<ArrayView2<f64>> = parts.iter().map(|p| p.view()).collect();
    ndarray::concatenate(Axis(0), &views).expect("uniform column counts")
}

/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)), the usual default for conv weights
/// and biases.
fn fan_in_uniform(rng: &mut impl Rng, fan_in: usize, n: usize) -> Vec<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
}

/// Stride-1 convolution with symmetric zero padding.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub padding: usize,
    /// `(out, in * kernel)`, column index `i * kernel + j`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub grad_weight: Array2<f64>,
    pub grad_bias: Array1<f64>,
    cache: Option<Array3<f64>>,
}

impl Conv1d {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, padding: usize, rng: &mut impl Rng) -> Self {
        let fan_in = in_channels * kernel;
        let weight = Array2::from_shape_vec(
            (out_channels, fan_in),
            fan_in_uniform(rng, fan_in, out_channels * fan_in),
        )
        .unwrap();
        let bias = Array1::from(fan_in_uniform(rng, fan_in, out_channels));
        Self {
            in_channels,
            out_channels,
            kernel,
            padding,
            grad_weight: Array2::zeros(weight.dim()),
            weight,
            bias,
            grad_bias: Array1::zeros(out_channels),
            cache: None,
        }
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn out_len(&self, len: usize) -> usize {
        len + 2 * self.padding + 1 - self.kernel
    }

    /// Unfolds one sample `(in, len)` into `(in * kernel, out_len)`.
    fn im2col(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let len = x.ncols();
        let out_len = self.out_len(len);
        let mut cols = Array2::<f64>::zeros((self.in_channels * self.kernel, out_len));
        for i in 0..self.in_channels {
            let row = x.row(i);
            for j in 0..self.kernel {
                let mut dst = cols.row_mut(i * self.kernel + j);
                // dst[t] = x[t + j - padding]
                let shift = j as isize - self.padding as isize;
                let t_lo = (-shift).max(0) as usize;
                let t_hi = ((len as isize - shift).min(out_len as isize)).max(0) as usize;
                for t in t_lo..t_hi {
                    dst[t] = row[(t as isize + shift) as usize];
                }
            }
        }
        cols
    }

    fn col2im(&self, dcols: &Array2<f64>, len: usize) -> Array2<f64> {
        let out_len = dcols.ncols();
        let mut dx = Array2::<f64>::zeros((self.in_channels, len));
        for i in 0..self.in_channels {
            let mut row = dx.row_mut(i);
            for j in 0..self.kernel {
                let src = dcols.row(i * self.kernel + j);
                let shift = j as isize - self.padding as isize;
                let t_lo = (-shift).max(0) as usize;
                let t_hi = ((len as isize - shift).min(out_len as isize)).max(0) as usize;
                for t in t_lo..t_hi {
                    row[(t as isize + shift) as usize] += src[t];
                }
            }
        }
        dx
    }

    pub fn forward(&self, x: ArrayView3<'_, f64>) -> Array3<f64> {
        let out = exec::map_range(x.len_of(Axis(0)), |b| {
            let cols = self.im2col(x.index_axis(Axis(0), b));
            let mut y = self.weight.dot(&cols);
            for (mut row, bias) in y.rows_mut().into_iter().zip(self.bias.iter()) {
                row += *bias;
            }
            y
        });
        stack(out)
    }

    pub fn forward_train(&mut self, x: Array3<f64>) -> Array3<f64> {
        let y = self.forward(x.view());
        self.cache = Some(x);
        y
    }

    pub fn backward(&mut self, dy: &Array3<f64>) -> Array3<f64> {
        let x = self.cache.take().expect("Conv1d::backward without forward_train");
        let batch = x.len_of(Axis(0));
        let len = x.len_of(Axis(2));
        let cols: Vec<Array2<f64>> = exec::map_range(batch, |b| self.im2col(x.index_axis(Axis(0), b)));
        let dy_blocks: Vec<Array2<f64>> = (0..batch).map(|b| dy.index_axis(Axis(0), b).to_owned()).collect();
        let cols_all = hcat(&cols);
        let dy_all = hcat(&dy_blocks);
        self.grad_weight += &matmul_abt_chunked(dy_all.view(), cols_all.view());
        self.grad_bias += &dy_all.sum_axis(Axis(1));
        let dx = exec::map_range(batch, |b| {
            let dcols = self.weight.t().dot(&dy_blocks[b]);
            self.col2im(&dcols, len)
        });
        stack(dx)
    }

    pub fn params_mut<'a>(&'a mut self, out: &mut Vec<ParamRef<'a>>) {
        out.push(ParamRef {
            value: self.weight.as_slice_mut().unwrap(),
            grad: self.grad_weight.as_slice_mut().unwrap(),
        });
        out.push(ParamRef {
            value: self.bias.as_slice_mut().unwrap(),
            grad: self.grad_bias.as_slice_mut().unwrap(),
        });
    }

    pub fn params<'a>(&'a self, out: &mut Vec<&'a [f64]>) {
        out.push(self.weight.as_slice().unwrap());
        out.push(self.bias.as_slice().unwrap());
    }
}

/// Transposed convolution with `stride == kernel` (non-overlapping taps),
/// used for upsampling by `kernel`.
#[derive(Debug, Clone)]
pub struct ConvTranspose1d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    /// `(kernel, out, in)`: tap `j` maps an input column onto output
    /// position `kernel * t + j`.
    pub weight: Array3<f64>,
    pub bias: Array1<f64>,
    pub grad_weight: Array3<f64>,
    pub grad_bias: Array1<f64>,
    cache: Option<Array3<f64>>,
}

impl ConvTranspose1d {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, rng: &mut impl Rng) -> Self {
        // fan_in follows the (in, out, k) weight layout: out * k
        let fan_in = out_channels * kernel;
        let weight = Array3::from_shape_vec(
            (kernel, out_channels, in_channels),
            fan_in_uniform(rng, fan_in, kernel * out_channels * in_channels),
        )
        .unwrap();
        let bias = Array1::from(fan_in_uniform(rng, fan_in, out_channels));
        Self {
            in_channels,
            out_channels,
            kernel,
            grad_weight: Array3::zeros(weight.dim()),
            weight,
            bias,
            grad_bias: Array1::zeros(out_channels),
            cache: None,
        }
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn forward(&self, x: ArrayView3<'_, f64>) -> Array3<f64> {
        let len = x.len_of(Axis(2));
        let k = self.kernel;
        let out = exec::map_range(x.len_of(Axis(0)), |b| {
            let xb = x.index_axis(Axis(0), b);
            let mut y = Array2::<f64>::zeros((self.out_channels, len * k));
            for j in 0..k {
                let yj = self.weight.index_axis(Axis(0), j).dot(&xb);
                y.slice_mut(s![.., j..;k]).assign(&yj);
            }
            for (mut row, bias) in y.rows_mut().into_iter().zip(self.bias.iter()) {
                row += *bias;
            }
            y
        });
        stack(out)
    }

    pub fn forward_train(&mut self, x: Array3<f64>) -> Array3<f64> {
        let y = self.forward(x.view());
        self.cache = Some(x);
        y
    }

    pub fn backward(&mut self, dy: &Array3<f64>) -> Array3<f64> {
        let x = self.cache.take().expect("ConvTranspose1d::backward without forward_train");
        let batch = x.len_of(Axis(0));
        let k = self.kernel;
        let x_blocks: Vec<Array2<f64>> = (0..batch).map(|b| x.index_axis(Axis(0), b).to_owned()).collect();
        let x_all = hcat(&x_blocks);
        for j in 0..k {
            let dyj: Vec<Array2<f64>> = (0..batch)
                .map(|b| dy.index_axis(Axis(0), b).slice(s![.., j..;k]).to_owned())
                .collect();
            let dyj_all = hcat(&dyj);
            let gw = matmul_abt_chunked(dyj_all.view(), x_all.view());
            let mut slot = self.grad_weight.index_axis_mut(Axis(0), j);
            slot += &gw;
        }
        self.grad_bias += &dy.sum_axis(Axis(2)).sum_axis(Axis(0));
        let dx = exec::map_range(batch, |b| {
            let dyb = dy.index_axis(Axis(0), b);
            let mut dx = Array2::<f64>::zeros((self.in_channels, x.len_of(Axis(2))));
            for j in 0..k {
                let dyj = dyb.slice(s![.., j..;k]);
                dx += &self.weight.index_axis(Axis(0), j).t().dot(&dyj);
            }
            dx
        });
        stack(dx)
    }

    pub fn params_mut<'a>(&'a mut self, out: &mut Vec<ParamRef<'a>>) {
        out.push(ParamRef {
            value: self.weight.as_slice_mut().unwrap(),
            grad: self.grad_weight.as_slice_mut().unwrap(),
        });
        out.push(ParamRef {
            value: self.bias.as_slice_mut().unwrap(),
            grad: self.grad_bias.as_slice_mut().unwrap(),
        });
    }

    pub fn params<'a>(&'a self, out: &mut Vec<&'a [f64]>) {
        out.push(self.weight.as_slice().unwrap());
        out.push(self.bias.as_slice().unwrap());
    }
}

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone)]
struct BnCache {
    xhat: Array3<f64>,
    inv_std: Array1<f64>,
}

/// Batch normalisation over the batch and length axes, per channel.
#[derive(Debug, Clone)]
pub struct BatchNorm1d {
    pub channels: usize,
    pub momentum: f64,
    pub epsilon: f64,
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub grad_gamma: Array1<f64>,
    pub grad_beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    cache: Option<BnCache>,
}

impl BatchNorm1d {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            momentum: BN_MOMENTUM,
            epsilon: BN_EPSILON,
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            grad_gamma: Array1::zeros(channels),
            grad_beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            cache: None,
        }
    }

    pub fn num_params(&self) -> usize {
        2 * self.channels
    }

    /// Inference: normalise with the running statistics.
    pub fn forward(&self, x: ArrayView3<'_, f64>) -> Array3<f64> {
        let mut y = x.to_owned();
        for (c, mut lane) in y.axis_iter_mut(Axis(1)).enumerate() {
            let scale = self.gamma[c] / (self.running_var[c] + self.epsilon).sqrt();
            let shift = self.beta[c] - self.running_mean[c] * scale;
            lane.mapv_inplace(|v| v * scale + shift);
        }
        y
    }

    /// Training: normalise with batch statistics and update running ones.
    pub fn forward_train(&mut self, x: Array3<f64>) -> Array3<f64> {
        let (batch, channels, len) = x.dim();
        let n = (batch * len) as f64;
        let stats = exec::map_range(channels, |c| {
            let lane = x.index_axis(Axis(1), c);
            let mean = lane.sum() / n;
            let var = lane.fold(0.0, |a, v| a + (v - mean) * (v - mean)) / n;
            (mean, var)
        });
        let mut xhat = x;
        let mut inv_std = Array1::<f64>::zeros(channels);
        for (c, mut lane) in xhat.axis_iter_mut(Axis(1)).enumerate() {
            let (mean, var) = stats[c];
            let is = 1.0 / (var + self.epsilon).sqrt();
            inv_std[c] = is;
            lane.mapv_inplace(|v| (v - mean) * is);
            let unbiased = if n > 1.0 { var * n / (n - 1.0) } else { var };
            self.running_mean[c] = (1.0 - self.momentum) * self.running_mean[c] + self.momentum * mean;
            self.running_var[c] = (1.0 - self.momentum) * self.running_var[c] + self.momentum * unbiased;
        }
        let mut y = xhat.clone();
        for (c, mut lane) in y.axis_iter_mut(Axis(1)).enumerate() {
            let (g, b) = (self.gamma[c], self.beta[c]);
            lane.mapv_inplace(|v| v * g + b);
        }
        self.cache = Some(BnCache { xhat, inv_std });
        y
    }

    pub fn backward(&mut self, dy: &Array3<f64>) -> Array3<f64> {
        let BnCache { xhat, inv_std } = self.cache.take().expect("BatchNorm1d::backward without forward_train");
        let (batch, channels, len) = dy.dim();
        let n = (batch * len) as f64;
        let sums = exec::map_range(channels, |c| {
            let d = dy.index_axis(Axis(1), c);
            let h = xhat.index_axis(Axis(1), c);
            let sum_dy = d.sum();
            let sum_dy_xhat = d.iter().zip(h.iter()).map(|(a, b)| a * b).sum::<f64>();
            (sum_dy, sum_dy_xhat)
        });
        let mut dx = Array3::<f64>::zeros(dy.dim());
        for c in 0..channels {
            let (sum_dy, sum_dy_xhat) = sums[c];
            self.grad_beta[c] += sum_dy;
            self.grad_gamma[c] += sum_dy_xhat;
            let k = self.gamma[c] * inv_std[c] / n;
            let mut out = dx.index_axis_mut(Axis(1), c);
            let d = dy.index_axis(Axis(1), c);
            let h = xhat.index_axis(Axis(1), c);
            ndarray::Zip::from(&mut out)
                .and(&d)
                .and(&h)
                .for_each(|o, &dv, &hv| *o = k * (n * dv - sum_dy - hv * sum_dy_xhat));
        }
        dx
    }

    pub fn params_mut<'a>(&'a mut self, out: &mut Vec<ParamRef<'a>>) {
        out.push(ParamRef {
            value: self.gamma.as_slice_mut().unwrap(),
            grad: self.grad_gamma.as_slice_mut().unwrap(),
        });
        out.push(ParamRef {
            value: self.beta.as_slice_mut().unwrap(),
            grad: self.grad_beta.as_slice_mut().unwrap(),
        });
    }

    pub fn params<'a>(&'a self, out: &mut Vec<&'a [f64]>) {
        out.push(self.gamma.as_slice().unwrap());
        out.push(self.beta.as_slice().unwrap());
    }

    pub fn buffers_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        out.push(self.running_mean.as_slice_mut().unwrap());
        out.push(self.running_var.as_slice_mut().unwrap());
    }

    pub fn buffers<'a>(&'a self, out: &mut Vec<&'a [f64]>) {
        out.push(self.running_mean.as_slice().unwrap());
        out.push(self.running_var.as_slice().unwrap());
    }
}

/// Max-pooling with `kernel == stride`.
#[derive(Debug, Clone)]
pub struct MaxPool1d {
    pub size: usize,
    argmax: Option<(Array3<u8>, usize)>,
}

impl MaxPool1d {
    pub fn new(size: usize) -> Self {
        Self { size, argmax: None }
    }

    fn pool(&self, x: ArrayView3<'_, f64>) -> (Array3<f64>, Array3<u8>) {
        let (b, c, l) = x.dim();
        let out_len = l / self.size;
        let mut y = Array3::<f64>::zeros((b, c, out_len));
        let mut arg = Array3::<u8>::zeros((b, c, out_len));
        for ((bi, ci, t), v) in y.indexed_iter_mut() {
            let mut best = x[[bi, ci, t * self.size]];
            let mut best_j = 0u8;
            for j in 1..self.size {
                let cand = x[[bi, ci, t * self.size + j]];
                // first maximum wins ties
                if cand > best {
                    best = cand;
                    best_j = j as u8;
                }
            }
            *v = best;
            arg[[bi, ci, t]] = best_j;
        }
        (y, arg)
    }

    pub fn forward(&self, x: ArrayView3<'_, f64>) -> Array3<f64> {
        self.pool(x).0
    }

    pub fn forward_train(&mut self, x: &Array3<f64>) -> Array3<f64> {
        let (y, arg) = self.pool(x.view());
        self.argmax = Some((arg, x.len_of(Axis(2))));
        y
    }

    pub fn backward(&mut self, dy: &Array3<f64>) -> Array3<f64> {
        let (arg, len) = self.argmax.take().expect("MaxPool1d::backward without forward_train");
        let (b, c, _) = dy.dim();
        let mut dx = Array3::<f64>::zeros((b, c, len));
        for ((bi, ci, t), g) in dy.indexed_iter() {
            dx[[bi, ci, t * self.size + arg[[bi, ci, t]] as usize]] += g;
        }
        dx
    }
}

/// ReLU that remembers its output for the backward mask.
#[derive(Debug, Clone, Default)]
pub struct Relu {
    output: Option<Array3<f64>>,
}

impl Relu {
    pub fn forward(x: Array3<f64>) -> Array3<f64> {
        x.mapv_into(|v| v.max(0.0))
    }

    pub fn forward_train(&mut self, x: Array3<f64>) -> Array3<f64> {
        let y = Self::forward(x);
        self.output = Some(y.clone());
        y
    }

    pub fn backward(&mut self, dy: &Array3<f64>) -> Array3<f64> {
        let y = self.output.take().expect("Relu::backward without forward_train");
        let mut dx = dy.clone();
        ndarray::Zip::from(&mut dx).and(&y).for_each(|d, &o| {
            if o <= 0.0 {
                *d = 0.0;
            }
        });
        dx
    }
}
