//! Adam and RMSProp with per-parameter state over a flat tensor list.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Rmsprop,
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(lr: f64) -> AdamState {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Bias-corrected update: theta -= lr * m_hat / (sqrt(v_hat) + eps).
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        check_step_shapes(params, grads)?;
        ensure_state(params, &mut self.m);
        ensure_state(params, &mut self.v);
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((param, grad), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let md = m.data_mut();
            let vd = v.data_mut();
            let pd = param.data_mut();
            for i in 0..pd.len() {
                let g = grad.data()[i];
                md[i] = self.beta1 * md[i] + (1.0 - self.beta1) * g;
                vd[i] = self.beta2 * vd[i] + (1.0 - self.beta2) * g * g;
                let m_hat = md[i] / bc1;
                let v_hat = vd[i] / bc2;
                pd[i] -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RmsPropState {
    pub lr: f64,
    pub rho: f64,
    pub epsilon: f64,
    v: Vec<Tensor>,
}

impl RmsPropState {
    pub fn new(lr: f64) -> RmsPropState {
        RmsPropState {
            lr,
            rho: 0.9,
            epsilon: 1e-7,
            v: Vec::new(),
        }
    }

    /// v <- rho v + (1 - rho) g^2; theta -= lr * g / (sqrt(v) + eps).
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        check_step_shapes(params, grads)?;
        ensure_state(params, &mut self.v);
        for ((param, grad), v) in params.iter_mut().zip(grads).zip(self.v.iter_mut()) {
            let vd = v.data_mut();
            let pd = param.data_mut();
            for i in 0..pd.len() {
                let g = grad.data()[i];
                vd[i] = self.rho * vd[i] + (1.0 - self.rho) * g * g;
                pd[i] -= self.lr * g / (vd[i].sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

/// Either optimizer behind one dispatch point for the training loop.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Adam(AdamState),
    Rmsprop(RmsPropState),
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Optimizer {
        match kind {
            OptimizerKind::Adam => Optimizer::Adam(AdamState::new(lr)),
            OptimizerKind::Rmsprop => Optimizer::Rmsprop(RmsPropState::new(lr)),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        match self {
            Optimizer::Adam(s) => s.step(params, grads),
            Optimizer::Rmsprop(s) => s.step(params, grads),
        }
    }
}

fn ensure_state(params: &[&mut Tensor], state: &mut Vec<Tensor>) {
    if state.is_empty() {
        *state = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
    }
    // One optimizer serves one model; reuse across models is out of contract.
    debug_assert_eq!(state.len(), params.len());
}

fn check_step_shapes(params: &[&mut Tensor], grads: &[Tensor]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::config(format!(
            "optimizer got {} parameter tensors but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::ShapeMismatch {
                op: "optimizer_step",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor {
        Tensor::from_vec(&[1], vec![v]).unwrap()
    }

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let mut p = scalar(3.0);
        let mut adam = AdamState::new(1e-3);
        adam.step(&mut [&mut p], &[scalar(0.0)]).unwrap();
        assert_eq!(p.data()[0], 3.0);
        assert_eq!(adam.t, 1);
    }

    #[test]
    fn adam_first_step_closed_form() {
        // Bias corrections cancel at t=1: delta = -lr * g / (|g| + eps).
        let mut p = scalar(0.0);
        let mut adam = AdamState::new(1e-3);
        adam.step(&mut [&mut p], &[scalar(0.5)]).unwrap();
        let expect = -1e-3 * 0.5 / (0.5 + 1e-8);
        assert!((p.data()[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn adam_constant_gradient_step_approaches_lr() {
        let mut p = scalar(0.0);
        let mut adam = AdamState::new(1e-3);
        let mut prev = 0.0;
        for _ in 0..100 {
            adam.step(&mut [&mut p], &[scalar(2.0)]).unwrap();
            let step = prev - p.data()[0];
            assert!(step > 0.0, "motion must stay monotone");
            assert!(step <= 1e-3 * 1.0001);
            prev = p.data()[0];
        }
        let last_step = {
            let before = p.data()[0];
            adam.step(&mut [&mut p], &[scalar(2.0)]).unwrap();
            before - p.data()[0]
        };
        assert!((last_step - 1e-3).abs() < 1e-6, "step {last_step}");
    }

    #[test]
    fn adam_lr_zero_is_identity_but_advances_state() {
        let mut p = scalar(1.5);
        let mut adam = AdamState::new(0.0);
        adam.step(&mut [&mut p], &[scalar(0.7)]).unwrap();
        adam.step(&mut [&mut p], &[scalar(-0.7)]).unwrap();
        assert_eq!(p.data()[0], 1.5);
        assert_eq!(adam.t, 2);
        assert!(adam.m[0].data()[0] != 0.0 || adam.v[0].data()[0] != 0.0);
    }

    #[test]
    fn rmsprop_zero_gradient_keeps_parameters() {
        let mut p = scalar(-2.0);
        let mut r = RmsPropState::new(1e-3);
        r.step(&mut [&mut p], &[scalar(0.0)]).unwrap();
        assert_eq!(p.data()[0], -2.0);
    }

    #[test]
    fn rmsprop_first_step_closed_form() {
        let mut p = scalar(0.0);
        let mut r = RmsPropState::new(1e-3);
        r.step(&mut [&mut p], &[scalar(1.0)]).unwrap();
        let expect = -1e-3 / (0.1f64.sqrt() + 1e-7);
        assert!((p.data()[0] - expect).abs() < 1e-12);
        assert!((p.data()[0] + 3.1623e-3).abs() < 1e-6);
    }

    #[test]
    fn rmsprop_steady_state_step_is_scale_invariant() {
        // With v preloaded at g^2 the step is lr * g / (|g| + eps), the same
        // for g and 10 g up to epsilon.
        let run = |g: f64| -> f64 {
            let mut p = scalar(0.0);
            let mut r = RmsPropState::new(1e-3);
            r.v = vec![scalar(g * g)];
            r.rho = 1.0; // freeze the accumulator at the steady state
            r.step(&mut [&mut p], &[scalar(g)]).unwrap();
            p.data()[0]
        };
        let small = run(0.3);
        let large = run(3.0);
        assert!((small - large).abs() < 1e-9, "{small} vs {large}");
    }

    #[test]
    fn extreme_gradients_never_produce_nan() {
        for kind in [OptimizerKind::Adam, OptimizerKind::Rmsprop] {
            let mut p = scalar(1.0);
            let mut opt = Optimizer::new(kind, 1e-3);
            for g in [1e10, -1e10, 1e-30, 0.0] {
                opt.step(&mut [&mut p], &[scalar(g)]).unwrap();
                assert!(p.data()[0].is_finite(), "{kind:?} g={g}");
            }
        }
    }

    #[test]
    fn mismatched_gradient_shape_rejected() {
        let mut p = scalar(0.0);
        let mut adam = AdamState::new(1e-3);
        let bad = Tensor::zeros(&[2]);
        assert!(adam.step(&mut [&mut p], &[bad]).is_err());
    }
}
