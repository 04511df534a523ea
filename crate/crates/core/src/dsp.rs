//! Fourier machinery: arbitrary-length FFT, spectral high-pass filtering,
//! alias-free downsampling by spectrum truncation, and the two
//! mean-subtraction conventions used ahead of training.
//!
//! Power-of-two lengths run an iterative radix-2 transform; every other
//! length goes through Bluestein's chirp-z reformulation on a padded
//! power-of-two convolution, so any n (1000 included) is O(n log n). Twiddle
//! and chirp tables live in a per-size [`FftPlan`] that can be built once
//! and shared read-only across threads.

use crate::data::TrialSet;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rayon::prelude::*;
use std::f64::consts::PI;

/// Frequency-domain representation of a length-n real signal.
///
/// Bin k holds X[k] = sum_j x[j] e^(-2 pi i jk/n); for k <= n/2 it
/// represents the frequency k * sample_rate / n.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    /// Largest deviation from conjugate symmetry, |X[n-k] - conj(X[k])|.
    pub fn asymmetry(&self) -> f64 {
        let n = self.len();
        let mut worst = self.im[0].abs(); // DC must be real
        if n.is_multiple_of(2) {
            worst = worst.max(self.im[n / 2].abs());
        }
        for k in 1..n / 2 + 1 {
            let dr = (self.re[k] - self.re[n - k]).abs();
            let di = (self.im[k] + self.im[n - k]).abs();
            worst = worst.max(dr).max(di);
        }
        worst
    }

    fn magnitude_max(&self) -> f64 {
        self.re
            .iter()
            .zip(&self.im)
            .map(|(r, i)| r.hypot(*i))
            .fold(0.0, f64::max)
    }
}

/// Downsampling parameters: target length, high-pass cutoff, sample rate.
#[derive(Debug, Clone, Copy)]
pub struct DownsampleSpec {
    pub m: usize,
    pub cutoff_hz: f64,
    pub sample_rate_hz: f64,
}

impl DownsampleSpec {
    pub fn new(m: usize) -> Self {
        DownsampleSpec {
            m,
            cutoff_hz: 5.0,
            sample_rate_hz: 250.0,
        }
    }
}

/// Precomputed transform for one length.
pub struct FftPlan {
    n: usize,
    kind: PlanKind,
}

enum PlanKind {
    /// n == 1.
    Unit,
    /// Iterative radix-2, power-of-two n: per-stage twiddles.
    Radix2(Radix2Tables),
    /// Bluestein chirp-z: convolution at a padded power-of-two size.
    Bluestein {
        /// e^(-i pi j^2 / n) for j in 0..n.
        chirp_re: Vec<f64>,
        chirp_im: Vec<f64>,
        /// FFT of the zero-padded conjugate chirp.
        kernel_re: Vec<f64>,
        kernel_im: Vec<f64>,
        pad: Radix2Tables,
    },
}

struct Radix2Tables {
    n: usize,
    /// Twiddles for each butterfly stage, concatenated: stage with half-size
    /// h contributes h factors e^(-2 pi i j / (2h)).
    tw_re: Vec<f64>,
    tw_im: Vec<f64>,
}

impl Radix2Tables {
    fn new(n: usize) -> Radix2Tables {
        debug_assert!(n.is_power_of_two());
        let mut tw_re = Vec::new();
        let mut tw_im = Vec::new();
        let mut half = 1;
        while half < n {
            for j in 0..half {
                let angle = -PI * j as f64 / half as f64;
                tw_re.push(angle.cos());
                tw_im.push(angle.sin());
            }
            half *= 2;
        }
        Radix2Tables { n, tw_re, tw_im }
    }

    /// In-place transform; `inverse` conjugates the twiddles but does not
    /// apply the 1/n factor.
    fn run(&self, re: &mut [f64], im: &mut [f64], inverse: bool) {
        let n = self.n;
        debug_assert_eq!(re.len(), n);
        // Bit-reversal permutation.
        let mut j = 0usize;
        for i in 1..n {
            let mut bit = n >> 1;
            while j & bit != 0 {
                j ^= bit;
                bit >>= 1;
            }
            j |= bit;
            if i < j {
                re.swap(i, j);
                im.swap(i, j);
            }
        }
        let mut half = 1;
        let mut tw_base = 0;
        while half < n {
            let step = half * 2;
            for start in (0..n).step_by(step) {
                for k in 0..half {
                    let wr = self.tw_re[tw_base + k];
                    let wi = if inverse {
                        -self.tw_im[tw_base + k]
                    } else {
                        self.tw_im[tw_base + k]
                    };
                    let a = start + k;
                    let b = a + half;
                    let tr = re[b] * wr - im[b] * wi;
                    let ti = re[b] * wi + im[b] * wr;
                    re[b] = re[a] - tr;
                    im[b] = im[a] - ti;
                    re[a] += tr;
                    im[a] += ti;
                }
            }
            tw_base += half;
            half = step;
        }
    }
}

impl FftPlan {
    pub fn new(n: usize) -> FftPlan {
        assert!(n >= 1, "transform length must be at least 1");
        let kind = if n == 1 {
            PlanKind::Unit
        } else if n.is_power_of_two() {
            PlanKind::Radix2(Radix2Tables::new(n))
        } else {
            let pad_n = (2 * n - 1).next_power_of_two();
            let mut chirp_re = Vec::with_capacity(n);
            let mut chirp_im = Vec::with_capacity(n);
            for j in 0..n as u64 {
                // j^2 mod 2n keeps the argument small for accuracy.
                let q = (j * j) % (2 * n as u64);
                let angle = -PI * q as f64 / n as f64;
                chirp_re.push(angle.cos());
                chirp_im.push(angle.sin());
            }
            let pad = Radix2Tables::new(pad_n);
            // Kernel: conj(chirp) at offsets 0 and pad_n - j, transformed.
            let mut kr = vec![0.0; pad_n];
            let mut ki = vec![0.0; pad_n];
            for j in 0..n {
                kr[j] = chirp_re[j];
                ki[j] = -chirp_im[j];
                if j != 0 {
                    kr[pad_n - j] = chirp_re[j];
                    ki[pad_n - j] = -chirp_im[j];
                }
            }
            pad.run(&mut kr, &mut ki, false);
            PlanKind::Bluestein {
                chirp_re,
                chirp_im,
                kernel_re: kr,
                kernel_im: ki,
                pad,
            }
        };
        FftPlan { n, kind }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false // a plan always has n >= 1
    }

    /// Forward complex transform, in place.
    pub fn forward(&self, re: &mut [f64], im: &mut [f64]) {
        self.transform(re, im, false);
    }

    /// Inverse complex transform, in place, including the 1/n factor.
    pub fn inverse(&self, re: &mut [f64], im: &mut [f64]) {
        self.transform(re, im, true);
        let inv = 1.0 / self.n as f64;
        for (r, i) in re.iter_mut().zip(im.iter_mut()) {
            *r *= inv;
            *i *= inv;
        }
    }

    fn transform(&self, re: &mut [f64], im: &mut [f64], inverse: bool) {
        assert_eq!(re.len(), self.n);
        assert_eq!(im.len(), self.n);
        match &self.kind {
            PlanKind::Unit => {}
            PlanKind::Radix2(t) => t.run(re, im, inverse),
            PlanKind::Bluestein {
                chirp_re,
                chirp_im,
                kernel_re,
                kernel_im,
                pad,
            } => {
                // Inverse via conjugation: IDFT(x) = conj(DFT(conj(x))).
                if inverse {
                    for v in im.iter_mut() {
                        *v = -*v;
                    }
                }
                let n = self.n;
                let pad_n = pad.n;
                let mut ar = vec![0.0; pad_n];
                let mut ai = vec![0.0; pad_n];
                for j in 0..n {
                    let (cr, ci) = (chirp_re[j], chirp_im[j]);
                    ar[j] = re[j] * cr - im[j] * ci;
                    ai[j] = re[j] * ci + im[j] * cr;
                }
                pad.run(&mut ar, &mut ai, false);
                for j in 0..pad_n {
                    let (r, i) = (ar[j], ai[j]);
                    ar[j] = r * kernel_re[j] - i * kernel_im[j];
                    ai[j] = r * kernel_im[j] + i * kernel_re[j];
                }
                pad.run(&mut ar, &mut ai, true);
                let inv = 1.0 / pad_n as f64;
                for k in 0..n {
                    let (cr, ci) = (chirp_re[k], chirp_im[k]);
                    let (r, i) = (ar[k] * inv, ai[k] * inv);
                    re[k] = r * cr - i * ci;
                    im[k] = r * ci + i * cr;
                }
                if inverse {
                    for v in im.iter_mut() {
                        *v = -*v;
                    }
                }
            }
        }
    }
}

/// Forward transform of a real signal.
pub fn fft(x: &[f64]) -> Spectrum {
    let plan = FftPlan::new(x.len());
    fft_with(&plan, x)
}

pub fn fft_with(plan: &FftPlan, x: &[f64]) -> Spectrum {
    let mut re = x.to_vec();
    let mut im = vec![0.0; x.len()];
    plan.forward(&mut re, &mut im);
    Spectrum { re, im }
}

/// Inverse transform back to a real signal.
///
/// The spectrum must be conjugate-symmetric; the imaginary residue of the
/// reconstruction is asserted below tolerance and discarded. Both tolerances
/// scale with the spectrum magnitude so large-n transforms are not penalized
/// for roundoff.
pub fn ifft(s: &Spectrum) -> Result<Vec<f64>> {
    let plan = FftPlan::new(s.len());
    ifft_with(&plan, s)
}

pub fn ifft_with(plan: &FftPlan, s: &Spectrum) -> Result<Vec<f64>> {
    let tol = 1e-9 * s.magnitude_max().max(1.0);
    let dev = s.asymmetry();
    if dev > tol {
        return Err(Error::AsymmetricSpectrum { max_dev: dev, tol });
    }
    let mut re = s.re.clone();
    let mut im = s.im.clone();
    plan.inverse(&mut re, &mut im);
    let residue = im.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    debug_assert!(
        residue <= tol,
        "imaginary residue {residue} above tolerance {tol}"
    );
    Ok(re)
}

/// Zero every bin strictly below the cutoff (DC included) and transform
/// back. Bins at exactly the cutoff frequency are kept.
pub fn highpass(x: &[f64], spec: &DownsampleSpec) -> Vec<f64> {
    let plan = FftPlan::new(x.len());
    highpass_with(&plan, x, spec)
}

pub fn highpass_with(plan: &FftPlan, x: &[f64], spec: &DownsampleSpec) -> Vec<f64> {
    let n = x.len();
    let mut s = fft_with(plan, x);
    let bin_hz = spec.sample_rate_hz / n as f64;
    for k in 0..=n / 2 {
        if (k as f64) * bin_hz < spec.cutoff_hz {
            s.re[k] = 0.0;
            s.im[k] = 0.0;
            if k > 0 && k < n - k {
                s.re[n - k] = 0.0;
                s.im[n - k] = 0.0;
            }
        }
    }
    let mut re = s.re;
    let mut im = s.im;
    plan.inverse(&mut re, &mut im);
    re
}

/// Shorten a signal to length m by truncating its spectrum and inverse-
/// transforming at the new length; scaling by m/n preserves amplitudes.
///
/// For even m the output Nyquist bin folds the source bins straddling the
/// new band edge, which for real input equals twice the real part of source
/// bin m/2.
pub fn fourier_downsample(x: &[f64], m: usize) -> Result<Vec<f64>> {
    let plan_n = FftPlan::new(x.len());
    let plan_m = FftPlan::new(m.max(1));
    fourier_downsample_with(&plan_n, &plan_m, x, m)
}

pub fn fourier_downsample_with(
    plan_n: &FftPlan,
    plan_m: &FftPlan,
    x: &[f64],
    m: usize,
) -> Result<Vec<f64>> {
    let n = x.len();
    if m < 2 || m > n {
        return Err(Error::config(format!(
            "downsample target {m} outside 2..={n}"
        )));
    }
    let s = fft_with(plan_n, x);
    let mut re = vec![0.0; m];
    let mut im = vec![0.0; m];
    let keep = m.div_ceil(2); // bins |k| < ceil(m/2)
    re[0] = s.re[0];
    im[0] = s.im[0];
    for k in 1..keep {
        re[k] = s.re[k];
        im[k] = s.im[k];
        re[m - k] = s.re[n - k];
        im[m - k] = s.im[n - k];
    }
    if m.is_multiple_of(2) {
        if m < n {
            // Fold the straddling pair X[m/2] and X[n - m/2].
            re[m / 2] = s.re[m / 2] + s.re[n - m / 2];
            im[m / 2] = s.im[m / 2] + s.im[n - m / 2];
        } else {
            re[m / 2] = s.re[m / 2];
            im[m / 2] = s.im[m / 2];
        }
    }
    plan_m.inverse(&mut re, &mut im);
    let scale = m as f64 / n as f64;
    for v in &mut re {
        *v *= scale;
    }
    Ok(re)
}

/// Per-trial, per-channel high-pass then Fourier downsample; labels and
/// subjects pass through. The sample rate is rescaled to match the new
/// length.
pub fn preprocess_rnn(ts: &TrialSet, spec: &DownsampleSpec) -> Result<TrialSet> {
    let (n_trials, c, t) = (ts.len(), ts.channels(), ts.samples());
    if spec.m < 2 || spec.m > t {
        return Err(Error::config(format!(
            "downsample target {} outside 2..={}",
            spec.m, t
        )));
    }
    let plan_t = FftPlan::new(t);
    let plan_m = FftPlan::new(spec.m);
    let stride_in = c * t;
    let stride_out = c * spec.m;
    let mut out = vec![0.0; n_trials * stride_out];
    out.par_chunks_mut(stride_out)
        .enumerate()
        .try_for_each(|(i, dst)| -> Result<()> {
            let src = &ts.x.data()[i * stride_in..(i + 1) * stride_in];
            for ch in 0..c {
                let filtered = highpass_with(&plan_t, &src[ch * t..(ch + 1) * t], spec);
                let short = fourier_downsample_with(&plan_t, &plan_m, &filtered, spec.m)?;
                dst[ch * spec.m..(ch + 1) * spec.m].copy_from_slice(&short);
            }
            Ok(())
        })?;
    Ok(TrialSet {
        x: Tensor::from_vec(&[n_trials, c, spec.m], out).expect("preprocess shape"),
        y: ts.y.clone(),
        subject: ts.subject.clone(),
        sample_rate_hz: ts.sample_rate_hz * spec.m as f64 / t as f64,
    })
}

/// Which mean to subtract from a rank-3 (N, C, T) tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeanAxis {
    /// Subtract the per-(channel, timestep) mean taken across trials.
    Examples,
    /// Subtract each trial-channel's own temporal mean.
    Time,
}

pub fn mean_subtract(x: &Tensor, axis: MeanAxis) -> Result<Tensor> {
    if x.rank() != 3 {
        return Err(Error::config(format!(
            "mean_subtract expects rank 3, got {:?}",
            x.shape()
        )));
    }
    let (n, c, t) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut out = x.data().to_vec();
    match axis {
        MeanAxis::Examples => {
            let mean = x.reduce_mean(0)?;
            for i in 0..n {
                let base = i * c * t;
                for (o, m) in out[base..base + c * t].iter_mut().zip(mean.data()) {
                    *o -= m;
                }
            }
        }
        MeanAxis::Time => {
            for row in out.chunks_mut(t) {
                let mean = row.iter().sum::<f64>() / t as f64;
                for v in row {
                    *v -= mean;
                }
            }
        }
    }
    Tensor::from_vec(x.shape(), out)
}
