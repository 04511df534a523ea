//! Independent oracles shared by the integration suites. Everything here is
//! deliberately naive (quadratic transforms, sliding-window loops, central
//! differences) and never touches the production code paths it checks.

#![allow(dead_code)]

use eegdl::tensor::Tensor;
use std::f64::consts::TAU;

/// O(n^2) discrete Fourier transform, the reference for the fast transform.
pub fn naive_dft(x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let mut re = vec![0.0; n];
    let mut im = vec![0.0; n];
    for k in 0..n {
        for (j, &v) in x.iter().enumerate() {
            let angle = -TAU * (k * j) as f64 / n as f64;
            re[k] += v * angle.cos();
            im[k] += v * angle.sin();
        }
    }
    (re, im)
}

/// Sliding-window cross-correlation oracle for 1-D convolution.
/// x: [B, C, T], w: [F, C, K], bias: [F] -> [B, F, L].
pub fn naive_conv1d(x: &Tensor, w: &Tensor, bias: &[f64], stride: usize) -> Tensor {
    let (b, c, t) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (f, _, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    let l = (t - k) / stride + 1;
    let mut out = Tensor::zeros(&[b, f, l]);
    #[allow(clippy::needless_range_loop)]
    for bi in 0..b {
        for fi in 0..f {
            for li in 0..l {
                let mut acc = bias[fi];
                for ci in 0..c {
                    for ki in 0..k {
                        acc += w.at3(fi, ci, ki) * x.at3(bi, ci, li * stride + ki);
                    }
                }
                let idx = (bi * f + fi) * l + li;
                out.data_mut()[idx] = acc;
            }
        }
    }
    out
}

/// Window-maximum oracle for 1-D max pooling. x: [B, F, L] -> [B, F, L'].
pub fn naive_maxpool1d(x: &Tensor, pool: usize, stride: usize) -> Tensor {
    let (b, f, l) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let lp = (l - pool) / stride + 1;
    let mut out = Tensor::zeros(&[b, f, lp]);
    for bi in 0..b {
        for fi in 0..f {
            for li in 0..lp {
                let mut best = f64::NEG_INFINITY;
                for p in 0..pool {
                    best = best.max(x.at3(bi, fi, li * stride + p));
                }
                let idx = (bi * f + fi) * lp + li;
                out.data_mut()[idx] = best;
            }
        }
    }
    out
}

/// Central finite difference of a scalar function at one coordinate of a
/// parameter vector owned by the closure's environment.
pub fn central_diff(mut f: impl FnMut(f64) -> f64, x0: f64, h: f64) -> f64 {
    (f(x0 + h) - f(x0 - h)) / (2.0 * h)
}

/// Relative error used by every gradient comparison.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// allclose-style agreement: the absolute floor absorbs central-difference
/// roundoff (eps * |loss| / 2h ~ 1e-10) on coordinates whose true gradient
/// is zero, such as a conv bias feeding straight into batchnorm.
pub fn grad_close(analytic: f64, numeric: f64, rel_tol: f64) -> bool {
    (analytic - numeric).abs() <= 1e-8 + rel_tol * analytic.abs().max(numeric.abs())
}

/// Largest relative error between an analytic gradient tensor and central
/// differences of `loss` under perturbation of `param`'s coordinates.
///
/// `loss` must re-evaluate the full forward pass from the perturbed
/// parameter buffer each time it is called.
pub fn max_grad_rel_err(
    param: &mut [f64],
    analytic: &[f64],
    h: f64,
    mut loss: impl FnMut(&[f64]) -> f64,
) -> f64 {
    assert_eq!(param.len(), analytic.len());
    let mut worst = 0.0f64;
    for i in 0..param.len() {
        let orig = param[i];
        param[i] = orig + h;
        let up = loss(param);
        param[i] = orig - h;
        let down = loss(param);
        param[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        worst = worst.max(rel_err(analytic[i], numeric));
    }
    worst
}
