//! Feed-forward layers with explicit forward and backward passes.
//!
//! Convolution uses the cross-correlation convention with no padding, so the
//! output length is floor((T - K)/stride) + 1. Each train-mode forward
//! returns a context consumed exactly once by the matching backward; eval
//! paths skip context creation entirely.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

// ---------------------------------------------------------------------------
// 1-D convolution
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Conv1d {
    /// [filters, in_channels, kernel]
    pub weight: Tensor,
    /// [filters]
    pub bias: Tensor,
    pub stride: usize,
}

pub struct Conv1dCtx {
    x: Tensor,
}

impl Conv1d {
    pub fn output_len(&self, t: usize) -> Result<usize> {
        let k = self.weight.shape()[2];
        if t < k {
            return Err(Error::ShapeMismatch {
                op: "conv1d",
                lhs: vec![t],
                rhs: self.weight.shape().to_vec(),
            });
        }
        Ok((t - k) / self.stride + 1)
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Conv1dCtx)> {
        let y = self.infer(x)?;
        Ok((y, Conv1dCtx { x: x.clone() }))
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        if x.rank() != 3 || x.shape()[1] != self.weight.shape()[1] {
            return Err(Error::ShapeMismatch {
                op: "conv1d",
                lhs: x.shape().to_vec(),
                rhs: self.weight.shape().to_vec(),
            });
        }
        let (b, c, t) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (f, k, s) = (self.weight.shape()[0], self.weight.shape()[2], self.stride);
        let l = self.output_len(t)?;
        let mut out = vec![0.0; b * f * l];
        let xd = x.data();
        let wd = self.weight.data();
        let bd = self.bias.data();
        out.par_chunks_mut(f * l).enumerate().for_each(|(bi, dst)| {
            let xb = &xd[bi * c * t..(bi + 1) * c * t];
            for fi in 0..f {
                let row = &mut dst[fi * l..(fi + 1) * l];
                row.fill(bd[fi]);
                for ci in 0..c {
                    let xc = &xb[ci * t..(ci + 1) * t];
                    let wrow = &wd[(fi * c + ci) * k..(fi * c + ci + 1) * k];
                    for (ki, &wv) in wrow.iter().enumerate() {
                        if wv == 0.0 {
                            continue;
                        }
                        for (li, o) in row.iter_mut().enumerate() {
                            *o += wv * xc[li * s + ki];
                        }
                    }
                }
            }
        });
        Tensor::from_vec(&[b, f, l], out)
    }

    /// Exact gradients of the forward map: (grad_x, grad_weight, grad_bias).
    pub fn backward(&self, ctx: &Conv1dCtx, grad_out: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        let x = &ctx.x;
        let (b, c, t) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (f, k, s) = (self.weight.shape()[0], self.weight.shape()[2], self.stride);
        let l = (t - k) / s + 1;
        if grad_out.shape() != [b, f, l] {
            return Err(Error::ShapeMismatch {
                op: "conv1d_backward",
                lhs: grad_out.shape().to_vec(),
                rhs: vec![b, f, l],
            });
        }
        let xd = x.data();
        let gd = grad_out.data();
        let wd = self.weight.data();

        let mut grad_x = vec![0.0; b * c * t];
        grad_x
            .par_chunks_mut(c * t)
            .enumerate()
            .for_each(|(bi, dst)| {
                let gb = &gd[bi * f * l..(bi + 1) * f * l];
                for fi in 0..f {
                    let grow = &gb[fi * l..(fi + 1) * l];
                    for ci in 0..c {
                        let wrow = &wd[(fi * c + ci) * k..(fi * c + ci + 1) * k];
                        let drow = &mut dst[ci * t..(ci + 1) * t];
                        for (li, &g) in grow.iter().enumerate() {
                            if g == 0.0 {
                                continue;
                            }
                            for (ki, &wv) in wrow.iter().enumerate() {
                                drow[li * s + ki] += g * wv;
                            }
                        }
                    }
                }
            });

        let mut grad_w = vec![0.0; f * c * k];
        grad_w
            .par_chunks_mut(c * k)
            .enumerate()
            .for_each(|(fi, dst)| {
                for bi in 0..b {
                    let grow = &gd[(bi * f + fi) * l..(bi * f + fi + 1) * l];
                    let xb = &xd[bi * c * t..(bi + 1) * c * t];
                    for ci in 0..c {
                        let xc = &xb[ci * t..(ci + 1) * t];
                        let drow = &mut dst[ci * k..(ci + 1) * k];
                        for (li, &g) in grow.iter().enumerate() {
                            if g == 0.0 {
                                continue;
                            }
                            for (ki, d) in drow.iter_mut().enumerate() {
                                *d += g * xc[li * s + ki];
                            }
                        }
                    }
                }
            });

        let mut grad_b = vec![0.0; f];
        for bi in 0..b {
            for (fi, gb) in grad_b.iter_mut().enumerate() {
                *gb += gd[(bi * f + fi) * l..(bi * f + fi + 1) * l]
                    .iter()
                    .sum::<f64>();
            }
        }

        Ok((
            Tensor::from_vec(&[b, c, t], grad_x)?,
            Tensor::from_vec(&[f, c, k], grad_w)?,
            Tensor::from_vec(&[f], grad_b)?,
        ))
    }
}

// ---------------------------------------------------------------------------
// 1-D max pooling
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct MaxPool1d {
    pub pool: usize,
    pub stride: usize,
}

pub struct MaxPoolCtx {
    input_shape: Vec<usize>,
    /// Flat input index of each window maximum (ties take the lowest index).
    argmax: Vec<usize>,
}

impl MaxPool1d {
    pub fn output_len(&self, l: usize) -> Result<usize> {
        if l < self.pool {
            return Err(Error::ShapeMismatch {
                op: "maxpool1d",
                lhs: vec![l],
                rhs: vec![self.pool],
            });
        }
        Ok((l - self.pool) / self.stride + 1)
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, MaxPoolCtx)> {
        let (b, f, l) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let lp = self.output_len(l)?;
        let mut out = vec![0.0; b * f * lp];
        let mut argmax = vec![0usize; b * f * lp];
        let xd = x.data();
        for bf in 0..b * f {
            let row = &xd[bf * l..(bf + 1) * l];
            for li in 0..lp {
                let start = li * self.stride;
                let mut best = row[start];
                let mut best_at = start;
                for p in 1..self.pool {
                    let v = row[start + p];
                    if v > best {
                        best = v;
                        best_at = start + p;
                    }
                }
                out[bf * lp + li] = best;
                argmax[bf * lp + li] = bf * l + best_at;
            }
        }
        Ok((
            Tensor::from_vec(&[b, f, lp], out)?,
            MaxPoolCtx {
                input_shape: x.shape().to_vec(),
                argmax,
            },
        ))
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(x)?.0)
    }

    pub fn backward(&self, ctx: &MaxPoolCtx, grad_out: &Tensor) -> Result<Tensor> {
        let mut grad_x = Tensor::zeros(&ctx.input_shape);
        let gd = grad_out.data();
        if gd.len() != ctx.argmax.len() {
            return Err(Error::ShapeMismatch {
                op: "maxpool1d_backward",
                lhs: grad_out.shape().to_vec(),
                rhs: ctx.input_shape.clone(),
            });
        }
        let dst = grad_x.data_mut();
        for (i, &g) in gd.iter().enumerate() {
            dst[ctx.argmax[i]] += g;
        }
        Ok(grad_x)
    }
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

/// Where the feature axis lives in the input layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum FeatureLayout {
    /// Rank-3 [B, F, L]: statistics pool over B and L per feature channel.
    ChannelsFirst,
    /// Rank-2 [B, F] or rank-3 [B, T, F]: features on the last axis,
    /// statistics pool over everything else.
    LastAxis,
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub epsilon: f64,
    pub layout: FeatureLayout,
}

pub struct BatchNormCtx {
    x_hat: Tensor,
    inv_std: Vec<f64>,
    reduce_count: usize,
}

impl BatchNorm {
    pub fn new(features: usize, layout: FeatureLayout) -> BatchNorm {
        BatchNorm {
            gamma: Tensor::full(&[features], 1.0),
            beta: Tensor::zeros(&[features]),
            running_mean: Tensor::zeros(&[features]),
            running_var: Tensor::full(&[features], 1.0),
            momentum: 0.1,
            epsilon: 1e-5,
            layout,
        }
    }

    fn features(&self) -> usize {
        self.gamma.len()
    }

    /// (index stride plan) -> for feature f, iterate data indices.
    fn for_each_index(&self, shape: &[usize], f: usize, mut visit: impl FnMut(usize)) {
        match self.layout {
            FeatureLayout::ChannelsFirst => {
                let (b, nf, l) = (shape[0], shape[1], shape[2]);
                debug_assert_eq!(nf, self.features());
                for bi in 0..b {
                    let base = (bi * nf + f) * l;
                    for i in base..base + l {
                        visit(i);
                    }
                }
            }
            FeatureLayout::LastAxis => {
                let nf = *shape.last().unwrap();
                debug_assert_eq!(nf, self.features());
                let rows: usize = shape[..shape.len() - 1].iter().product();
                for r in 0..rows {
                    visit(r * nf + f);
                }
            }
        }
    }

    fn reduce_count(&self, shape: &[usize]) -> usize {
        match self.layout {
            FeatureLayout::ChannelsFirst => shape[0] * shape[2],
            FeatureLayout::LastAxis => shape[..shape.len() - 1].iter().product(),
        }
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<(Tensor, BatchNormCtx)> {
        if x.shape()[0] < 2 {
            return Err(Error::config(
                "batch normalization requires batch size >= 2 in train mode",
            ));
        }
        let nf = self.features();
        let r = self.reduce_count(x.shape());
        let mut y = Tensor::zeros(x.shape());
        let mut x_hat = Tensor::zeros(x.shape());
        let mut inv_std = vec![0.0; nf];
        #[allow(clippy::needless_range_loop)]
        for f in 0..nf {
            let mut sum = 0.0;
            self.for_each_index(x.shape(), f, |i| sum += x.data()[i]);
            let mean = sum / r as f64;
            let mut ss = 0.0;
            self.for_each_index(x.shape(), f, |i| {
                let d = x.data()[i] - mean;
                ss += d * d;
            });
            let var = ss / r as f64; // biased
            let istd = 1.0 / (var + self.epsilon).sqrt();
            inv_std[f] = istd;
            let (g, b) = (self.gamma.data()[f], self.beta.data()[f]);
            let xd = x.data();
            let xh = x_hat.data_mut();
            self.for_each_index(x.shape(), f, |i| {
                xh[i] = (xd[i] - mean) * istd;
            });
            let xh = x_hat.data();
            let yd = y.data_mut();
            self.for_each_index(x.shape(), f, |i| {
                yd[i] = g * xh[i] + b;
            });
            self.running_mean.data_mut()[f] =
                (1.0 - self.momentum) * self.running_mean.data()[f] + self.momentum * mean;
            self.running_var.data_mut()[f] =
                (1.0 - self.momentum) * self.running_var.data()[f] + self.momentum * var;
        }
        Ok((
            y,
            BatchNormCtx {
                x_hat,
                inv_std,
                reduce_count: r,
            },
        ))
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let nf = self.features();
        let mut y = Tensor::zeros(x.shape());
        for f in 0..nf {
            let mean = self.running_mean.data()[f];
            let istd = 1.0 / (self.running_var.data()[f] + self.epsilon).sqrt();
            let (g, b) = (self.gamma.data()[f], self.beta.data()[f]);
            let xd = x.data();
            let yd = y.data_mut();
            self.for_each_index(x.shape(), f, |i| {
                yd[i] = g * (xd[i] - mean) * istd + b;
            });
        }
        Ok(y)
    }

    /// (grad_x, grad_gamma, grad_beta)
    pub fn backward(
        &self,
        ctx: &BatchNormCtx,
        grad_out: &Tensor,
    ) -> Result<(Tensor, Tensor, Tensor)> {
        let nf = self.features();
        let r = ctx.reduce_count as f64;
        let mut grad_x = Tensor::zeros(grad_out.shape());
        let mut grad_gamma = Tensor::zeros(&[nf]);
        let mut grad_beta = Tensor::zeros(&[nf]);
        for f in 0..nf {
            let mut sum_dy = 0.0;
            let mut sum_dy_xhat = 0.0;
            let gd = grad_out.data();
            let xh = ctx.x_hat.data();
            self.for_each_index(grad_out.shape(), f, |i| {
                sum_dy += gd[i];
                sum_dy_xhat += gd[i] * xh[i];
            });
            grad_beta.data_mut()[f] = sum_dy;
            grad_gamma.data_mut()[f] = sum_dy_xhat;
            let g = self.gamma.data()[f];
            let istd = ctx.inv_std[f];
            let gx = grad_x.data_mut();
            self.for_each_index(grad_out.shape(), f, |i| {
                gx[i] = g * istd * (gd[i] - sum_dy / r - xh[i] * sum_dy_xhat / r);
            });
        }
        Ok((grad_x, grad_gamma, grad_beta))
    }
}

// ---------------------------------------------------------------------------
// Dropout
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct Dropout {
    pub p: f64,
}

pub struct DropoutCtx {
    mask: Option<Tensor>,
}

impl Dropout {
    pub fn new(p: f64) -> Result<Dropout> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::config(format!(
                "dropout probability {p} outside [0, 1)"
            )));
        }
        Ok(Dropout { p })
    }

    /// Inverted dropout: survivors are scaled by 1/(1-p) so eval is identity.
    pub fn forward(&self, x: &Tensor, rng: &mut Rng, mode: Mode) -> (Tensor, DropoutCtx) {
        if mode == Mode::Eval || self.p == 0.0 {
            return (x.clone(), DropoutCtx { mask: None });
        }
        let keep_scale = 1.0 / (1.0 - self.p);
        let mask = Tensor::from_vec(
            x.shape(),
            (0..x.len())
                .map(|_| {
                    if rng.next_f64() < self.p {
                        0.0
                    } else {
                        keep_scale
                    }
                })
                .collect(),
        )
        .expect("mask shape");
        let y = x.mul(&mask).expect("same shape");
        (y, DropoutCtx { mask: Some(mask) })
    }

    pub fn backward(&self, ctx: &DropoutCtx, grad_out: &Tensor) -> Tensor {
        match &ctx.mask {
            None => grad_out.clone(),
            Some(mask) => grad_out.mul(mask).expect("same shape"),
        }
    }
}

// ---------------------------------------------------------------------------
// Dense (affine) layer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Dense {
    /// [in, out]
    pub weight: Tensor,
    /// [out]
    pub bias: Tensor,
}

pub struct DenseCtx {
    x: Tensor,
}

impl Dense {
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, DenseCtx)> {
        let y = self.infer(x)?;
        Ok((y, DenseCtx { x: x.clone() }))
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = x.matmul(&self.weight)?;
        let u = self.bias.len();
        for row in y.data_mut().chunks_mut(u) {
            for (v, b) in row.iter_mut().zip(self.bias.data()) {
                *v += b;
            }
        }
        Ok(y)
    }

    /// (grad_x, grad_weight, grad_bias)
    pub fn backward(&self, ctx: &DenseCtx, grad_out: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        let grad_x = grad_out.matmul_bt(&self.weight)?;
        let grad_w = ctx.x.matmul_at(grad_out)?;
        let u = self.bias.len();
        let mut grad_b = vec![0.0; u];
        for row in grad_out.data().chunks(u) {
            for (g, r) in grad_b.iter_mut().zip(row) {
                *g += r;
            }
        }
        Ok((grad_x, grad_w, Tensor::from_vec(&[u], grad_b)?))
    }
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

pub struct ActivationCtx {
    y: Tensor,
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Activation {
    pub fn apply(&self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the output value.
    pub fn derivative_from_output(&self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }

    pub fn forward(&self, x: &Tensor) -> (Tensor, ActivationCtx) {
        let y = self.infer(x);
        (y.clone(), ActivationCtx { y })
    }

    pub fn infer(&self, x: &Tensor) -> Tensor {
        x.map(|v| self.apply(v))
    }

    pub fn backward(&self, ctx: &ActivationCtx, grad_out: &Tensor) -> Tensor {
        let mut g = grad_out.clone();
        for (gv, yv) in g.data_mut().iter_mut().zip(ctx.y.data()) {
            *gv *= self.derivative_from_output(*yv);
        }
        g
    }
}
