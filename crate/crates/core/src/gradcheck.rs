//! Finite-difference verification harness for whole models.
//!
//! The loss is evaluated through the train-mode forward with the dropout
//! stream re-seeded identically on every call, so stochastic masks are held
//! fixed while parameters are perturbed and central differences stay
//! consistent with the analytic backward pass.

use crate::error::Result;
use crate::loss::softmax_xent;
use crate::model::Model;
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// (parameter tensor name, max relative error over sampled coordinates)
    pub per_tensor: Vec<(String, f64)>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.per_tensor.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.worst() < self.tolerance
    }

    /// Tensors whose sampled error exceeds the tolerance.
    pub fn failures(&self) -> Vec<&(String, f64)> {
        self.per_tensor
            .iter()
            .filter(|(_, e)| *e >= self.tolerance)
            .collect()
    }
}

pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Random coordinates sampled per tensor; full scan if the tensor is
    /// smaller.
    pub samples_per_tensor: usize,
    pub seed: u64,
    /// Coordinates where both the analytic and numeric values sit below
    /// this magnitude count as agreeing exactly. Central differences cannot
    /// resolve gradients under their own roundoff (eps * |loss| / 2h, about
    /// 1e-11 here), and some directions are identically dead -- a conv bias
    /// feeding straight into batchnorm has true gradient zero.
    pub zero_tol: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            tolerance: 1e-4,
            samples_per_tensor: 200,
            seed: 0x5eed,
            zero_tol: 1e-7,
        }
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compare analytic parameter gradients against central differences on a
/// fixed batch; reports the max relative error per parameter tensor.
pub fn grad_check(
    model: &mut Model,
    x: &Tensor,
    labels: &[usize],
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let dropout_seed = cfg.seed ^ 0x9e3779b97f4a7c15;
    let analytic = {
        let mut rng = Rng::new(dropout_seed);
        let (logits, ctxs) = model.forward_train(x, &mut rng)?;
        let (_, grad_logits) = softmax_xent(&logits, labels)?;
        model.backward(&ctxs, &grad_logits)?.0
    };
    let names = model.param_names();

    let mut sampler = Rng::new(cfg.seed);
    let mut per_tensor = Vec::with_capacity(names.len());
    for (ti, name) in names.iter().enumerate() {
        let len = model.trainable_params()[ti].len();
        let coords: Vec<usize> = if len <= cfg.samples_per_tensor {
            (0..len).collect()
        } else {
            (0..cfg.samples_per_tensor)
                .map(|_| sampler.below(len))
                .collect()
        };
        let mut worst = 0.0f64;
        for ci in coords {
            let orig = model.trainable_params()[ti].data()[ci];
            let eval_at = |v: f64, model: &mut Model| -> Result<f64> {
                model.trainable_params_mut()[ti].data_mut()[ci] = v;
                let mut rng = Rng::new(dropout_seed);
                let (logits, _) = model.forward_train(x, &mut rng)?;
                Ok(softmax_xent(&logits, labels)?.0)
            };
            let up = eval_at(orig + cfg.step, model)?;
            let down = eval_at(orig - cfg.step, model)?;
            model.trainable_params_mut()[ti].data_mut()[ci] = orig;
            let numeric = (up - down) / (2.0 * cfg.step);
            let a = analytic[ti].data()[ci];
            if a.abs() < cfg.zero_tol && numeric.abs() < cfg.zero_tol {
                continue;
            }
            worst = worst.max(rel_err(a, numeric));
        }
        per_tensor.push((name.clone(), worst));
    }
    Ok(GradCheckReport {
        per_tensor,
        tolerance: cfg.tolerance,
    })
}
