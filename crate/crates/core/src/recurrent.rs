//! LSTM and GRU cells plus stacked sequence processing with
//! backpropagation-through-time.
//!
//! Gate conventions: sigmoid on the input/forget/output (LSTM) and
//! update/reset (GRU) gates, tanh on cell candidates and the cell output.
//! The GRU combines as h' = (1-z) * h + z * h_cand, with the reset gate
//! applied to the hidden state before the candidate's recurrent projection.
//!
//! Dropout is variational: one input mask (probability `dropout_p`) and one
//! recurrent-state mask (probability `recurrent_p`) are drawn per sequence
//! and reused at every timestep. The recurrent mask applies to the hidden
//! state entering the gates; state carried between steps and emitted outputs
//! stay unmasked.

use crate::error::{Error, Result};
use crate::layers::{sigmoid, Mode};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum CellKind {
    Lstm,
    Gru,
}

/// Glorot-uniform bound for one gate block.
fn glorot(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

// ---------------------------------------------------------------------------
// LSTM
// ---------------------------------------------------------------------------

/// Gate blocks are packed along the output axis in the order
/// input | forget | candidate | output.
#[derive(Debug, Clone)]
pub struct LstmParams {
    /// [D, 4U]
    pub w_x: Tensor,
    /// [U, 4U]
    pub w_h: Tensor,
    /// [4U]
    pub b: Tensor,
}

impl LstmParams {
    pub fn glorot_init(input_dim: usize, units: usize, rng: &mut Rng) -> LstmParams {
        let bx = glorot(input_dim, units);
        let bh = glorot(units, units);
        LstmParams {
            w_x: Tensor::with_uniform(&[input_dim, 4 * units], -bx, bx, rng),
            w_h: Tensor::with_uniform(&[units, 4 * units], -bh, bh, rng),
            b: Tensor::zeros(&[4 * units]),
        }
    }

    pub fn zeros(input_dim: usize, units: usize) -> LstmParams {
        LstmParams {
            w_x: Tensor::zeros(&[input_dim, 4 * units]),
            w_h: Tensor::zeros(&[units, 4 * units]),
            b: Tensor::zeros(&[4 * units]),
        }
    }

    pub fn units(&self) -> usize {
        self.b.len() / 4
    }

    pub fn input_dim(&self) -> usize {
        self.w_x.shape()[0]
    }

    /// One timestep. Returns activated gates [B, 4U] plus the new state.
    pub fn step(&self, x: &Tensor, h: &Tensor, c: &Tensor) -> Result<LstmStep> {
        let u = self.units();
        let mut z = x.matmul(&self.w_x)?;
        z.add_assign(&h.matmul(&self.w_h)?)?;
        let b = self.b.data();
        let zd = z.data_mut();
        for row in zd.chunks_mut(4 * u) {
            for (v, bv) in row.iter_mut().zip(b) {
                *v += bv;
            }
        }
        // Activate in place: sigmoid on i, f, o; tanh on the candidate.
        for row in zd.chunks_mut(4 * u) {
            for (j, v) in row.iter_mut().enumerate() {
                let gate = j / u;
                *v = if gate == 2 { v.tanh() } else { sigmoid(*v) };
            }
        }
        let batch = x.shape()[0];
        let mut c_new = Tensor::zeros(&[batch, u]);
        let mut h_new = Tensor::zeros(&[batch, u]);
        let gates = z;
        for bi in 0..batch {
            let g = &gates.data()[bi * 4 * u..(bi + 1) * 4 * u];
            for j in 0..u {
                let (i_g, f_g, cand, o_g) = (g[j], g[u + j], g[2 * u + j], g[3 * u + j]);
                let cn = f_g * c.data()[bi * u + j] + i_g * cand;
                c_new.data_mut()[bi * u + j] = cn;
                h_new.data_mut()[bi * u + j] = o_g * cn.tanh();
            }
        }
        Ok(LstmStep {
            gates,
            c_new,
            h_new,
        })
    }
}

pub struct LstmStep {
    /// Post-activation gates [B, 4U], packed i | f | cand | o.
    pub gates: Tensor,
    pub c_new: Tensor,
    pub h_new: Tensor,
}

/// Single LSTM cell update: (h', c').
pub fn lstm_cell(x: &Tensor, h: &Tensor, c: &Tensor, p: &LstmParams) -> Result<(Tensor, Tensor)> {
    let step = p.step(x, h, c)?;
    Ok((step.h_new, step.c_new))
}

// ---------------------------------------------------------------------------
// GRU
// ---------------------------------------------------------------------------

/// `w_x`/`b` pack update | reset | candidate; `w_h` packs update | reset.
/// The candidate's recurrent projection `w_hc` is separate because the reset
/// gate multiplies the hidden state before it.
#[derive(Debug, Clone)]
pub struct GruParams {
    /// [D, 3U]
    pub w_x: Tensor,
    /// [U, 2U]
    pub w_h: Tensor,
    /// [U, U]
    pub w_hc: Tensor,
    /// [3U]
    pub b: Tensor,
}

impl GruParams {
    pub fn glorot_init(input_dim: usize, units: usize, rng: &mut Rng) -> GruParams {
        let bx = glorot(input_dim, units);
        let bh = glorot(units, units);
        GruParams {
            w_x: Tensor::with_uniform(&[input_dim, 3 * units], -bx, bx, rng),
            w_h: Tensor::with_uniform(&[units, 2 * units], -bh, bh, rng),
            w_hc: Tensor::with_uniform(&[units, units], -bh, bh, rng),
            b: Tensor::zeros(&[3 * units]),
        }
    }

    pub fn zeros(input_dim: usize, units: usize) -> GruParams {
        GruParams {
            w_x: Tensor::zeros(&[input_dim, 3 * units]),
            w_h: Tensor::zeros(&[units, 2 * units]),
            w_hc: Tensor::zeros(&[units, units]),
            b: Tensor::zeros(&[3 * units]),
        }
    }

    pub fn units(&self) -> usize {
        self.b.len() / 3
    }

    pub fn input_dim(&self) -> usize {
        self.w_x.shape()[0]
    }

    /// One timestep from (x_t, masked h, carried h).
    ///
    /// `h_gate` is the hidden state as seen by the gates (mask applied in
    /// train mode); `h_carry` is the unmasked state blended into the output.
    pub fn step(&self, x: &Tensor, h_gate: &Tensor, h_carry: &Tensor) -> Result<GruStep> {
        let u = self.units();
        let batch = x.shape()[0];
        let mut zr = h_gate.matmul(&self.w_h)?; // [B, 2U]
        let xg = x.matmul(&self.w_x)?; // [B, 3U]
        let b = self.b.data();
        for bi in 0..batch {
            let xrow = &xg.data()[bi * 3 * u..(bi + 1) * 3 * u];
            let zrow = &mut zr.data_mut()[bi * 2 * u..(bi + 1) * 2 * u];
            for j in 0..2 * u {
                zrow[j] = sigmoid(zrow[j] + xrow[j] + b[j]);
            }
        }
        // Candidate from the reset-gated hidden state.
        let mut rh = Tensor::zeros(&[batch, u]);
        for bi in 0..batch {
            for j in 0..u {
                rh.data_mut()[bi * u + j] =
                    zr.data()[bi * 2 * u + u + j] * h_gate.data()[bi * u + j];
            }
        }
        let hc = rh.matmul(&self.w_hc)?;
        let mut cand = Tensor::zeros(&[batch, u]);
        let mut h_new = Tensor::zeros(&[batch, u]);
        for bi in 0..batch {
            for j in 0..u {
                let c = (xg.data()[bi * 3 * u + 2 * u + j] + b[2 * u + j] + hc.data()[bi * u + j])
                    .tanh();
                cand.data_mut()[bi * u + j] = c;
                let z = zr.data()[bi * 2 * u + j];
                h_new.data_mut()[bi * u + j] = (1.0 - z) * h_carry.data()[bi * u + j] + z * c;
            }
        }
        Ok(GruStep {
            zr,
            cand,
            rh,
            h_new,
        })
    }
}

pub struct GruStep {
    /// Post-activation update and reset gates [B, 2U].
    pub zr: Tensor,
    /// Candidate state [B, U].
    pub cand: Tensor,
    /// Reset-gated hidden state fed to `w_hc`, [B, U].
    pub rh: Tensor,
    pub h_new: Tensor,
}

/// Single GRU cell update (no dropout): h'.
pub fn gru_cell(x: &Tensor, h: &Tensor, p: &GruParams) -> Result<Tensor> {
    Ok(p.step(x, h, h)?.h_new)
}

// ---------------------------------------------------------------------------
// Recurrent layer over a sequence
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub enum Cell {
    Lstm(LstmParams),
    Gru(GruParams),
}

impl Cell {
    pub fn kind(&self) -> CellKind {
        match self {
            Cell::Lstm(_) => CellKind::Lstm,
            Cell::Gru(_) => CellKind::Gru,
        }
    }

    pub fn units(&self) -> usize {
        match self {
            Cell::Lstm(p) => p.units(),
            Cell::Gru(p) => p.units(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Cell::Lstm(p) => p.input_dim(),
            Cell::Gru(p) => p.input_dim(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RecurrentLayer {
    pub cell: Cell,
    pub dropout_p: f64,
    pub recurrent_p: f64,
    pub return_sequences: bool,
}

/// Everything the backward pass needs, recorded per timestep.
pub struct RecurrentCtx {
    /// Masked input sequence [B, T, D].
    x_masked: Tensor,
    input_mask: Option<Tensor>,
    recurrent_mask: Option<Tensor>,
    /// Hidden states h_0..h_T, each [B, U].
    h_states: Vec<Tensor>,
    /// LSTM cell states c_0..c_T.
    c_states: Vec<Tensor>,
    /// Per-step cell internals.
    steps: Vec<StepCache>,
}

enum StepCache {
    Lstm {
        gates: Tensor,
    },
    Gru {
        zr: Tensor,
        cand: Tensor,
        rh: Tensor,
    },
}

/// Gradients for one recurrent layer's parameters, shaped like the params.
#[derive(Debug, Clone)]
pub enum CellGrads {
    Lstm {
        w_x: Tensor,
        w_h: Tensor,
        b: Tensor,
    },
    Gru {
        w_x: Tensor,
        w_h: Tensor,
        w_hc: Tensor,
        b: Tensor,
    },
}

fn inverted_mask(shape: &[usize], p: f64, rng: &mut Rng) -> Tensor {
    let scale = 1.0 / (1.0 - p);
    Tensor::from_vec(
        shape,
        (0..shape.iter().product())
            .map(|_| if rng.next_f64() < p { 0.0 } else { scale })
            .collect(),
    )
    .expect("mask shape")
}

impl RecurrentLayer {
    pub fn output_shape(&self, batch: usize, t: usize) -> Vec<usize> {
        if self.return_sequences {
            vec![batch, t, self.cell.units()]
        } else {
            vec![batch, self.cell.units()]
        }
    }

    /// Unroll over time from zero initial state.
    pub fn forward(&self, x: &Tensor, rng: &mut Rng, mode: Mode) -> Result<(Tensor, RecurrentCtx)> {
        if x.rank() != 3 {
            return Err(Error::ShapeMismatch {
                op: "recurrent",
                lhs: x.shape().to_vec(),
                rhs: vec![0, 0, self.cell.input_dim()],
            });
        }
        let (batch, t, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        if d != self.cell.input_dim() {
            return Err(Error::ShapeMismatch {
                op: "recurrent",
                lhs: x.shape().to_vec(),
                rhs: vec![batch, t, self.cell.input_dim()],
            });
        }
        let u = self.cell.units();

        let train = mode == Mode::Train;
        let input_mask = (train && self.dropout_p > 0.0)
            .then(|| inverted_mask(&[batch, d], self.dropout_p, rng));
        let recurrent_mask = (train && self.recurrent_p > 0.0)
            .then(|| inverted_mask(&[batch, u], self.recurrent_p, rng));

        // Apply the per-sequence input mask to every timestep.
        let mut x_masked = x.clone();
        if let Some(mask) = &input_mask {
            let xd = x_masked.data_mut();
            for bi in 0..batch {
                let mrow = &mask.data()[bi * d..(bi + 1) * d];
                for ti in 0..t {
                    let base = (bi * t + ti) * d;
                    for j in 0..d {
                        xd[base + j] *= mrow[j];
                    }
                }
            }
        }

        let mut h_states = Vec::with_capacity(t + 1);
        let mut c_states = Vec::with_capacity(t + 1);
        let mut steps = Vec::with_capacity(t);
        h_states.push(Tensor::zeros(&[batch, u]));
        c_states.push(Tensor::zeros(&[batch, u]));

        for ti in 0..t {
            let x_t = slice_step(&x_masked, ti);
            let h_prev = h_states.last().unwrap();
            let h_gate = match &recurrent_mask {
                Some(m) => h_prev.mul(m)?,
                None => h_prev.clone(),
            };
            match &self.cell {
                Cell::Lstm(p) => {
                    let c_prev = c_states.last().unwrap();
                    let s = p.step(&x_t, &h_gate, c_prev)?;
                    h_states.push(s.h_new);
                    c_states.push(s.c_new);
                    steps.push(StepCache::Lstm { gates: s.gates });
                }
                Cell::Gru(p) => {
                    let s = p.step(&x_t, &h_gate, h_prev)?;
                    h_states.push(s.h_new);
                    c_states.push(Tensor::zeros(&[0]));
                    steps.push(StepCache::Gru {
                        zr: s.zr,
                        cand: s.cand,
                        rh: s.rh,
                    });
                }
            }
        }

        let out = if self.return_sequences {
            let mut out = Tensor::zeros(&[batch, t, u]);
            for ti in 0..t {
                let h = &h_states[ti + 1];
                for bi in 0..batch {
                    let dst = (bi * t + ti) * u;
                    out.data_mut()[dst..dst + u].copy_from_slice(&h.data()[bi * u..(bi + 1) * u]);
                }
            }
            out
        } else {
            h_states.last().unwrap().clone()
        };

        Ok((
            out,
            RecurrentCtx {
                x_masked,
                input_mask,
                recurrent_mask,
                h_states,
                c_states,
                steps,
            },
        ))
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        // Mode::Eval never touches the rng.
        let mut rng = Rng::new(0);
        Ok(self.forward(x, &mut rng, Mode::Eval)?.0)
    }

    /// Backpropagation through time: (grad_x, parameter grads).
    pub fn backward(&self, ctx: &RecurrentCtx, grad_out: &Tensor) -> Result<(Tensor, CellGrads)> {
        let (batch, t, d) = (
            ctx.x_masked.shape()[0],
            ctx.x_masked.shape()[1],
            ctx.x_masked.shape()[2],
        );
        let u = self.cell.units();
        let expected: Vec<usize> = self.output_shape(batch, t);
        if grad_out.shape() != expected.as_slice() {
            return Err(Error::ShapeMismatch {
                op: "recurrent_backward",
                lhs: grad_out.shape().to_vec(),
                rhs: expected,
            });
        }

        let mut grad_x = Tensor::zeros(&[batch, t, d]);
        let mut dh_next = Tensor::zeros(&[batch, u]);
        let mut dc_next = Tensor::zeros(&[batch, u]);

        let mut grads = match &self.cell {
            Cell::Lstm(p) => CellGrads::Lstm {
                w_x: Tensor::zeros(p.w_x.shape()),
                w_h: Tensor::zeros(p.w_h.shape()),
                b: Tensor::zeros(p.b.shape()),
            },
            Cell::Gru(p) => CellGrads::Gru {
                w_x: Tensor::zeros(p.w_x.shape()),
                w_h: Tensor::zeros(p.w_h.shape()),
                w_hc: Tensor::zeros(p.w_hc.shape()),
                b: Tensor::zeros(p.b.shape()),
            },
        };

        for ti in (0..t).rev() {
            // Incoming gradient at this step's output.
            let mut dh = dh_next;
            if self.return_sequences {
                for bi in 0..batch {
                    let src = (bi * t + ti) * u;
                    for j in 0..u {
                        dh.data_mut()[bi * u + j] += grad_out.data()[src + j];
                    }
                }
            } else if ti == t - 1 {
                dh.add_assign(grad_out)?;
            }

            let x_t = slice_step(&ctx.x_masked, ti);
            let h_prev = &ctx.h_states[ti];
            let h_gate = match &ctx.recurrent_mask {
                Some(m) => h_prev.mul(m)?,
                None => h_prev.clone(),
            };

            match (&self.cell, &ctx.steps[ti], &mut grads) {
                (Cell::Lstm(p), StepCache::Lstm { gates }, CellGrads::Lstm { w_x, w_h, b }) => {
                    let c_prev = &ctx.c_states[ti];
                    let c_new = &ctx.c_states[ti + 1];
                    let mut dz = Tensor::zeros(&[batch, 4 * u]);
                    let mut dc_prev = Tensor::zeros(&[batch, u]);
                    for bi in 0..batch {
                        let g = &gates.data()[bi * 4 * u..(bi + 1) * 4 * u];
                        for j in 0..u {
                            let (i_g, f_g, cand, o_g) =
                                (g[j], g[u + j], g[2 * u + j], g[3 * u + j]);
                            let tanh_c = c_new.data()[bi * u + j].tanh();
                            let dhv = dh.data()[bi * u + j];
                            let d_o = dhv * tanh_c;
                            let dct =
                                dc_next.data()[bi * u + j] + dhv * o_g * (1.0 - tanh_c * tanh_c);
                            let d_i = dct * cand;
                            let d_cand = dct * i_g;
                            let d_f = dct * c_prev.data()[bi * u + j];
                            dc_prev.data_mut()[bi * u + j] = dct * f_g;
                            let row = &mut dz.data_mut()[bi * 4 * u..(bi + 1) * 4 * u];
                            row[j] = d_i * i_g * (1.0 - i_g);
                            row[u + j] = d_f * f_g * (1.0 - f_g);
                            row[2 * u + j] = d_cand * (1.0 - cand * cand);
                            row[3 * u + j] = d_o * o_g * (1.0 - o_g);
                        }
                    }
                    w_x.add_assign(&x_t.matmul_at(&dz)?)?;
                    w_h.add_assign(&h_gate.matmul_at(&dz)?)?;
                    add_column_sums(b, &dz);
                    store_step_grad(&mut grad_x, &dz.matmul_bt(&p.w_x)?, ti, &ctx.input_mask);
                    dh_next = masked(&dz.matmul_bt(&p.w_h)?, &ctx.recurrent_mask)?;
                    dc_next = dc_prev;
                }
                (
                    Cell::Gru(p),
                    StepCache::Gru { zr, cand, rh },
                    CellGrads::Gru { w_x, w_h, w_hc, b },
                ) => {
                    let mut dzr = Tensor::zeros(&[batch, 2 * u]); // pre-activation z | r
                    let mut dzc = Tensor::zeros(&[batch, u]); // pre-activation candidate
                    let mut dh_prev = Tensor::zeros(&[batch, u]);
                    for bi in 0..batch {
                        for j in 0..u {
                            let z = zr.data()[bi * 2 * u + j];
                            let r = zr.data()[bi * 2 * u + u + j];
                            let c = cand.data()[bi * u + j];
                            let hp = ctx.h_states[ti].data()[bi * u + j];
                            let dhv = dh.data()[bi * u + j];
                            let d_z = dhv * (c - hp);
                            let d_c = dhv * z;
                            dh_prev.data_mut()[bi * u + j] = dhv * (1.0 - z);
                            dzc.data_mut()[bi * u + j] = d_c * (1.0 - c * c);
                            dzr.data_mut()[bi * 2 * u + j] = d_z * z * (1.0 - z);
                            let _ = r; // reset-gate grad needs the w_hc pullback below
                        }
                    }
                    // Pull the candidate's recurrent projection back.
                    let d_rh = dzc.matmul_bt(&p.w_hc)?; // [B, U]
                    w_hc.add_assign(&rh.matmul_at(&dzc)?)?;
                    let mut dh_gate = Tensor::zeros(&[batch, u]);
                    for bi in 0..batch {
                        for j in 0..u {
                            let r = zr.data()[bi * 2 * u + u + j];
                            let hg = h_gate.data()[bi * u + j];
                            let d_rh_v = d_rh.data()[bi * u + j];
                            let d_r = d_rh_v * hg;
                            dzr.data_mut()[bi * 2 * u + u + j] = d_r * r * (1.0 - r);
                            dh_gate.data_mut()[bi * u + j] = d_rh_v * r;
                        }
                    }
                    // dz_x packs update | reset | candidate pre-activations.
                    let mut dz_x = Tensor::zeros(&[batch, 3 * u]);
                    for bi in 0..batch {
                        for j in 0..2 * u {
                            dz_x.data_mut()[bi * 3 * u + j] = dzr.data()[bi * 2 * u + j];
                        }
                        for j in 0..u {
                            dz_x.data_mut()[bi * 3 * u + 2 * u + j] = dzc.data()[bi * u + j];
                        }
                    }
                    w_x.add_assign(&x_t.matmul_at(&dz_x)?)?;
                    w_h.add_assign(&h_gate.matmul_at(&dzr)?)?;
                    add_column_sums(b, &dz_x);
                    store_step_grad(&mut grad_x, &dz_x.matmul_bt(&p.w_x)?, ti, &ctx.input_mask);
                    dh_gate.add_assign(&dzr.matmul_bt(&p.w_h)?)?;
                    dh_next = masked(&dh_gate, &ctx.recurrent_mask)?;
                    dh_next.add_assign(&dh_prev)?;
                }
                _ => unreachable!("cell kind and step cache always agree"),
            }
        }
        Ok((grad_x, grads))
    }
}

/// Copy timestep `t` out of a [B, T, D] tensor as [B, D].
fn slice_step(x: &Tensor, t: usize) -> Tensor {
    let (batch, steps, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut out = Tensor::zeros(&[batch, d]);
    for bi in 0..batch {
        let src = (bi * steps + t) * d;
        out.data_mut()[bi * d..(bi + 1) * d].copy_from_slice(&x.data()[src..src + d]);
    }
    out
}

/// Accumulate a [B, D] step gradient into [B, T, D] at timestep `t`,
/// pulling back through the per-sequence input mask.
fn store_step_grad(grad_x: &mut Tensor, dx_t: &Tensor, t: usize, mask: &Option<Tensor>) {
    let (batch, steps, d) = (grad_x.shape()[0], grad_x.shape()[1], grad_x.shape()[2]);
    for bi in 0..batch {
        let dst = (bi * steps + t) * d;
        for j in 0..d {
            let m = mask.as_ref().map_or(1.0, |m| m.data()[bi * d + j]);
            grad_x.data_mut()[dst + j] += dx_t.data()[bi * d + j] * m;
        }
    }
}

fn masked(x: &Tensor, mask: &Option<Tensor>) -> Result<Tensor> {
    match mask {
        Some(m) => x.mul(m),
        None => Ok(x.clone()),
    }
}

fn add_column_sums(acc: &mut Tensor, x: &Tensor) {
    let cols = acc.len();
    for row in x.data().chunks(cols) {
        for (a, v) in acc.data_mut().iter_mut().zip(row) {
            *a += v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lstm_zero_everything_stays_zero() {
        let p = LstmParams::zeros(3, 2);
        let x = Tensor::zeros(&[1, 3]);
        let h = Tensor::zeros(&[1, 2]);
        let c = Tensor::zeros(&[1, 2]);
        let (h2, c2) = lstm_cell(&x, &h, &c, &p).unwrap();
        assert!(h2.data().iter().all(|&v| v == 0.0));
        assert!(c2.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lstm_zero_weights_unit_cell_state() {
        // Gates sit at sigmoid(0) = 0.5, candidate at 0, so c' = 0.5 and
        // h' = 0.5 * tanh(0.5).
        let p = LstmParams::zeros(3, 2);
        let x = Tensor::zeros(&[1, 3]);
        let h = Tensor::zeros(&[1, 2]);
        let c = Tensor::full(&[1, 2], 1.0);
        let (h2, c2) = lstm_cell(&x, &h, &c, &p).unwrap();
        for &v in c2.data() {
            assert!((v - 0.5).abs() < 1e-12);
        }
        let expect = 0.5 * 0.5f64.tanh();
        for &v in h2.data() {
            assert!((v - expect).abs() < 1e-7);
            assert!((v - 0.2310586).abs() < 1e-7);
        }
    }

    #[test]
    fn gru_zero_everything_stays_zero() {
        let p = GruParams::zeros(3, 2);
        let x = Tensor::zeros(&[1, 3]);
        let h = Tensor::zeros(&[1, 2]);
        let h2 = gru_cell(&x, &h, &p).unwrap();
        assert!(h2.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gru_zero_weights_blends_half_state() {
        // z = 0.5, candidate = 0: h' = (1 - z) h + z * 0 = 0.5.
        let p = GruParams::zeros(3, 2);
        let x = Tensor::zeros(&[1, 3]);
        let h = Tensor::full(&[1, 2], 1.0);
        let h2 = gru_cell(&x, &h, &p).unwrap();
        for &v in h2.data() {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn lstm_outputs_bounded_by_one() {
        let mut rng = Rng::new(10);
        let p = LstmParams::glorot_init(4, 3, &mut rng);
        let layer = RecurrentLayer {
            cell: Cell::Lstm(p),
            dropout_p: 0.0,
            recurrent_p: 0.0,
            return_sequences: true,
        };
        let x = Tensor::with_uniform(&[2, 9, 4], -5.0, 5.0, &mut rng);
        let y = layer.infer(&x).unwrap();
        assert!(y.data().iter().all(|&v| v.abs() <= 1.0));
    }

    #[test]
    fn single_step_layer_equals_cell() {
        let mut rng = Rng::new(20);
        let p = LstmParams::glorot_init(3, 2, &mut rng);
        let layer = RecurrentLayer {
            cell: Cell::Lstm(p.clone()),
            dropout_p: 0.0,
            recurrent_p: 0.0,
            return_sequences: false,
        };
        let x = Tensor::with_uniform(&[2, 1, 3], -1.0, 1.0, &mut rng);
        let y = layer.infer(&x).unwrap();
        let x0 = Tensor::from_vec(&[2, 3], x.data().to_vec()).unwrap();
        let (h, _) = lstm_cell(&x0, &Tensor::zeros(&[2, 2]), &Tensor::zeros(&[2, 2]), &p).unwrap();
        assert_eq!(y, h);
    }

    #[test]
    fn eval_mode_ignores_dropout_probabilities() {
        let mut rng = Rng::new(30);
        let p = GruParams::glorot_init(3, 4, &mut rng);
        let with_drop = RecurrentLayer {
            cell: Cell::Gru(p.clone()),
            dropout_p: 0.6,
            recurrent_p: 0.6,
            return_sequences: true,
        };
        let without = RecurrentLayer {
            cell: Cell::Gru(p),
            dropout_p: 0.0,
            recurrent_p: 0.0,
            return_sequences: true,
        };
        let x = Tensor::with_uniform(&[2, 5, 3], -1.0, 1.0, &mut rng);
        assert_eq!(with_drop.infer(&x).unwrap(), without.infer(&x).unwrap());
    }

    #[test]
    fn causality_prefix_invariance() {
        let mut rng = Rng::new(40);
        let p = LstmParams::glorot_init(3, 4, &mut rng);
        let layer = RecurrentLayer {
            cell: Cell::Lstm(p),
            dropout_p: 0.0,
            recurrent_p: 0.0,
            return_sequences: true,
        };
        let x = Tensor::with_uniform(&[2, 7, 3], -1.0, 1.0, &mut rng);
        let full = layer.infer(&x).unwrap();
        // Truncate input to the first 4 steps and compare the overlap.
        let mut short = Tensor::zeros(&[2, 4, 3]);
        for b in 0..2 {
            for t in 0..4 {
                for d in 0..3 {
                    let idx = (b * 4 + t) * 3 + d;
                    short.data_mut()[idx] = x.at3(b, t, d);
                }
            }
        }
        let short_out = layer.infer(&short).unwrap();
        for b in 0..2 {
            for t in 0..4 {
                for u in 0..4 {
                    assert_eq!(full.at3(b, t, u), short_out.at3(b, t, u));
                }
            }
        }
    }

    #[test]
    fn dropout_masks_fixed_across_timesteps() {
        // With a constant input sequence, a varying mask would make the
        // masked input differ across steps; assert it does not.
        let mut rng = Rng::new(50);
        let p = LstmParams::glorot_init(3, 2, &mut rng);
        let layer = RecurrentLayer {
            cell: Cell::Lstm(p),
            dropout_p: 0.5,
            recurrent_p: 0.5,
            return_sequences: true,
        };
        let x = Tensor::full(&[2, 6, 3], 1.0);
        let (_, ctx) = layer.forward(&x, &mut rng, Mode::Train).unwrap();
        for b in 0..2 {
            for t in 1..6 {
                for d in 0..3 {
                    assert_eq!(ctx.x_masked.at3(b, t, d), ctx.x_masked.at3(b, 0, d));
                }
            }
        }
    }
}
