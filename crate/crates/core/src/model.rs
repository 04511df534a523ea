//! Declarative model specs, the four reference architectures, parameter
//! initialization, and forward/backward orchestration across layers.
//!
//! A [`ModelSpec`] is a validated layer list; [`Model::init`] turns it into
//! parameter tensors (Glorot-uniform weights, zero biases) and the layer
//! objects that execute it. Checkpoints are a directory of NPY tensors plus
//! a JSON manifest naming each tensor and embedding the spec, so a reload is
//! bit-exact.

use crate::error::{Error, Result};
use crate::layers::{
    Activation, BatchNorm, Conv1d, Dense, Dropout, FeatureLayout, MaxPool1d, Mode,
};
use crate::npy;
use crate::recurrent::{Cell, CellKind, GruParams, LstmParams, RecurrentLayer};
use crate::rng::Rng;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const NUM_CLASSES: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LayerSpec {
    Conv1d {
        filters: usize,
        kernel: usize,
        stride: usize,
    },
    BatchNorm,
    Activation(Activation),
    Dropout {
        p: f64,
    },
    MaxPool {
        pool: usize,
        stride: usize,
    },
    Flatten,
    /// Re-lay a [B, C, T] value as [B, T, C] so recurrent layers read
    /// channels as per-timestep features.
    TimeMajor,
    /// Keep only the final timestep of a [B, T, U] sequence.
    LastStep,
    Dense {
        units: usize,
    },
    Recurrent {
        cell: CellKind,
        units: usize,
        return_sequences: bool,
        dropout: f64,
        recurrent_dropout: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_channels: usize,
    pub input_len: usize,
    pub classes: usize,
    pub layers: Vec<LayerSpec>,
}

/// Value shape as it flows through the layer chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueShape {
    /// [B, C, T]
    ChannelsTime(usize, usize),
    /// [B, T, F]
    TimeFeatures(usize, usize),
    /// [B, D]
    Flat(usize),
}

impl ModelSpec {
    /// Walk the chain verifying adjacent layers compose; returns each
    /// layer's output shape.
    pub fn infer_shapes(&self) -> Result<Vec<ValueShape>> {
        let mut shape = ValueShape::ChannelsTime(self.input_channels, self.input_len);
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let fail = |what: String| Error::config(format!("layer {i}: {what}"));
            shape = match (layer, shape) {
                (
                    LayerSpec::Conv1d {
                        filters,
                        kernel,
                        stride,
                    },
                    ValueShape::ChannelsTime(_, t),
                ) => {
                    if t < *kernel {
                        return Err(fail(format!("kernel {kernel} exceeds input length {t}")));
                    }
                    ValueShape::ChannelsTime(*filters, (t - kernel) / stride + 1)
                }
                (LayerSpec::MaxPool { pool, stride }, ValueShape::ChannelsTime(c, t)) => {
                    if t < *pool {
                        return Err(fail(format!("pool {pool} exceeds input length {t}")));
                    }
                    ValueShape::ChannelsTime(c, (t - pool) / stride + 1)
                }
                (
                    LayerSpec::BatchNorm | LayerSpec::Activation(_) | LayerSpec::Dropout { .. },
                    s,
                ) => s,
                (LayerSpec::Flatten, ValueShape::ChannelsTime(c, t)) => ValueShape::Flat(c * t),
                (LayerSpec::Flatten, ValueShape::TimeFeatures(t, f)) => ValueShape::Flat(t * f),
                (LayerSpec::Flatten, ValueShape::Flat(d)) => ValueShape::Flat(d),
                (LayerSpec::TimeMajor, ValueShape::ChannelsTime(c, t)) => {
                    ValueShape::TimeFeatures(t, c)
                }
                (LayerSpec::LastStep, ValueShape::TimeFeatures(_, f)) => ValueShape::Flat(f),
                (LayerSpec::Dense { units }, ValueShape::Flat(_)) => ValueShape::Flat(*units),
                (
                    LayerSpec::Recurrent {
                        units,
                        return_sequences,
                        ..
                    },
                    ValueShape::TimeFeatures(t, _),
                ) => {
                    if *return_sequences {
                        ValueShape::TimeFeatures(t, *units)
                    } else {
                        ValueShape::Flat(*units)
                    }
                }
                (layer, shape) => {
                    return Err(fail(format!("{layer:?} cannot consume {shape:?}")));
                }
            };
            out.push(shape);
        }
        match out.last() {
            Some(ValueShape::Flat(d)) if *d == self.classes => Ok(out),
            other => Err(Error::config(format!(
                "model must end in {} logits, got {other:?}",
                self.classes
            ))),
        }
    }
}

// ---------------------------------------------------------------------------
// Architecture builders
// ---------------------------------------------------------------------------

/// Convolutional hyperparameters explored by the grid search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CnnHyper {
    pub filter_num: usize,
    pub filter_size: usize,
    pub pool_size: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl CnnHyper {
    /// The reference single-column configuration.
    pub fn reference() -> CnnHyper {
        CnnHyper {
            filter_num: 22,
            filter_size: 28,
            pool_size: 4,
            batch_size: 50,
            lr: 1e-3,
        }
    }
}

/// Grid axes for the convolutional search. Defaults hold the full ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CnnGrid {
    pub filter_num: Vec<usize>,
    pub filter_size: Vec<usize>,
    pub pool_size: Vec<usize>,
    pub batch_size: Vec<usize>,
    pub lr: Vec<f64>,
}

impl Default for CnnGrid {
    fn default() -> Self {
        CnnGrid {
            filter_num: vec![30, 20, 10],
            filter_size: vec![28, 20, 12, 4],
            pool_size: vec![4, 2],
            batch_size: vec![200, 100, 50],
            lr: vec![1e-3, 5e-4, 1e-4],
        }
    }
}

impl CnnGrid {
    pub fn cardinality(&self) -> usize {
        self.filter_num.len()
            * self.filter_size.len()
            * self.pool_size.len()
            * self.batch_size.len()
            * self.lr.len()
    }

    /// Cartesian product in a fixed nesting order.
    pub fn combos(&self) -> Vec<CnnHyper> {
        let mut out = Vec::with_capacity(self.cardinality());
        for &filter_num in &self.filter_num {
            for &filter_size in &self.filter_size {
                for &pool_size in &self.pool_size {
                    for &batch_size in &self.batch_size {
                        for &lr in &self.lr {
                            out.push(CnnHyper {
                                filter_num,
                                filter_size,
                                pool_size,
                                batch_size,
                                lr,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

/// Convolution -> batchnorm -> relu -> dropout -> pool -> two dense layers.
pub fn build_cnn(h: &CnnHyper, input_channels: usize, input_len: usize) -> ModelSpec {
    ModelSpec {
        input_channels,
        input_len,
        classes: NUM_CLASSES,
        layers: vec![
            LayerSpec::Conv1d {
                filters: h.filter_num,
                kernel: h.filter_size,
                stride: 4,
            },
            LayerSpec::BatchNorm,
            LayerSpec::Activation(Activation::Relu),
            LayerSpec::Dropout { p: 0.5 },
            LayerSpec::MaxPool {
                pool: h.pool_size,
                stride: h.pool_size,
            },
            LayerSpec::Flatten,
            LayerSpec::Dense { units: 20 },
            LayerSpec::Activation(Activation::Relu),
            LayerSpec::Dense { units: NUM_CLASSES },
        ],
    }
}

/// Three stacked recurrent layers (200/100/50 units, dropout 0.6/0.5/0.4)
/// and a dense(100) + batchnorm + relu + dropout(0.5) + dense(4) head fed by
/// the last timestep.
pub fn build_stacked(kind: CellKind, input_channels: usize, input_len: usize) -> ModelSpec {
    let rnn = |units: usize, p: f64| LayerSpec::Recurrent {
        cell: kind,
        units,
        return_sequences: true,
        dropout: p,
        recurrent_dropout: p,
    };
    ModelSpec {
        input_channels,
        input_len,
        classes: NUM_CLASSES,
        layers: vec![
            LayerSpec::TimeMajor,
            rnn(200, 0.6),
            rnn(100, 0.5),
            rnn(50, 0.4),
            LayerSpec::LastStep,
            LayerSpec::Dense { units: 100 },
            LayerSpec::BatchNorm,
            LayerSpec::Activation(Activation::Relu),
            LayerSpec::Dropout { p: 0.5 },
            LayerSpec::Dense { units: NUM_CLASSES },
        ],
    }
}

/// Configuration of the convolutional-decoder LSTM hybrid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedSpec {
    pub lstm_layers: usize,
    pub units: Vec<usize>,
}

impl MixedSpec {
    /// Defaults per depth; total hidden units stay at 50.
    pub fn with_layers(lstm_layers: usize) -> Result<MixedSpec> {
        let units = match lstm_layers {
            1 => vec![50],
            2 => vec![30, 20],
            3 => vec![20, 20, 10],
            other => {
                return Err(Error::config(format!(
                    "mixed model supports 1..=3 recurrent layers, got {other}"
                )))
            }
        };
        Ok(MixedSpec { lstm_layers, units })
    }
}

impl Default for MixedSpec {
    fn default() -> Self {
        MixedSpec::with_layers(2).expect("2 layers is valid")
    }
}

/// Conv decoder (40 filters, kernel 20, stride 4, pool 4/4) feeding an LSTM
/// stack that returns sequences, flattened into a dense(4) head.
pub fn build_mixed(s: &MixedSpec, input_channels: usize, input_len: usize) -> Result<ModelSpec> {
    if s.units.len() != s.lstm_layers || !(1..=3).contains(&s.lstm_layers) {
        return Err(Error::config(format!(
            "mixed spec wants {} recurrent layers but lists {} unit sizes",
            s.lstm_layers,
            s.units.len()
        )));
    }
    let mut layers = vec![
        LayerSpec::Conv1d {
            filters: 40,
            kernel: 20,
            stride: 4,
        },
        LayerSpec::BatchNorm,
        LayerSpec::Activation(Activation::Relu),
        LayerSpec::Dropout { p: 0.5 },
        LayerSpec::MaxPool { pool: 4, stride: 4 },
        LayerSpec::TimeMajor,
    ];
    for (i, &units) in s.units.iter().enumerate() {
        layers.push(LayerSpec::Recurrent {
            cell: CellKind::Lstm,
            units,
            return_sequences: true,
            dropout: 0.5,
            recurrent_dropout: if i == 0 { 0.0 } else { 0.5 },
        });
        layers.push(LayerSpec::BatchNorm);
    }
    layers.push(LayerSpec::Flatten);
    layers.push(LayerSpec::Dense { units: NUM_CLASSES });
    Ok(ModelSpec {
        input_channels,
        input_len,
        classes: NUM_CLASSES,
        layers,
    })
}

// ---------------------------------------------------------------------------
// Model instance
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
enum Node {
    Conv(Conv1d),
    Bn(BatchNorm),
    Act(Activation),
    Drop(Dropout),
    Pool(MaxPool1d),
    Flatten,
    TimeMajor,
    LastStep,
    Dense(Dense),
    Rnn(RecurrentLayer),
}

#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ModelSpec,
    nodes: Vec<Node>,
}

/// Per-layer backward context, threaded in reverse by [`Model::backward`].
pub enum NodeCtx {
    Conv(crate::layers::Conv1dCtx),
    Bn(crate::layers::BatchNormCtx),
    Act(crate::layers::ActivationCtx),
    Drop(crate::layers::DropoutCtx),
    Pool(crate::layers::MaxPoolCtx),
    Reshape { from: Vec<usize> },
    TimeMajor { channels: usize, t: usize },
    LastStep { t: usize },
    Dense(crate::layers::DenseCtx),
    Rnn(crate::recurrent::RecurrentCtx),
}

fn glorot_pair(fan_in: usize, fan_out: usize, shape: &[usize], rng: &mut Rng) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::with_uniform(shape, -bound, bound, rng)
}

impl Model {
    /// Instantiate parameters for a validated spec.
    pub fn init(spec: &ModelSpec, rng: &mut Rng) -> Result<Model> {
        let shapes = spec.infer_shapes()?;
        let mut nodes = Vec::with_capacity(spec.layers.len());
        let mut current = ValueShape::ChannelsTime(spec.input_channels, spec.input_len);
        for (layer, out_shape) in spec.layers.iter().zip(&shapes) {
            let node = match layer {
                LayerSpec::Conv1d {
                    filters,
                    kernel,
                    stride,
                } => {
                    let in_ch = match current {
                        ValueShape::ChannelsTime(c, _) => c,
                        _ => unreachable!("validated by infer_shapes"),
                    };
                    Node::Conv(Conv1d {
                        weight: glorot_pair(
                            in_ch * kernel,
                            filters * kernel,
                            &[*filters, in_ch, *kernel],
                            rng,
                        ),
                        bias: Tensor::zeros(&[*filters]),
                        stride: *stride,
                    })
                }
                LayerSpec::BatchNorm => {
                    let (features, layout) = match current {
                        ValueShape::ChannelsTime(c, _) => (c, FeatureLayout::ChannelsFirst),
                        ValueShape::TimeFeatures(_, f) => (f, FeatureLayout::LastAxis),
                        ValueShape::Flat(d) => (d, FeatureLayout::LastAxis),
                    };
                    Node::Bn(BatchNorm::new(features, layout))
                }
                LayerSpec::Activation(a) => Node::Act(*a),
                LayerSpec::Dropout { p } => Node::Drop(Dropout::new(*p)?),
                LayerSpec::MaxPool { pool, stride } => Node::Pool(MaxPool1d {
                    pool: *pool,
                    stride: *stride,
                }),
                LayerSpec::Flatten => Node::Flatten,
                LayerSpec::TimeMajor => Node::TimeMajor,
                LayerSpec::LastStep => Node::LastStep,
                LayerSpec::Dense { units } => {
                    let d = match current {
                        ValueShape::Flat(d) => d,
                        _ => unreachable!("validated by infer_shapes"),
                    };
                    Node::Dense(Dense {
                        weight: glorot_pair(d, *units, &[d, *units], rng),
                        bias: Tensor::zeros(&[*units]),
                    })
                }
                LayerSpec::Recurrent {
                    cell,
                    units,
                    return_sequences,
                    dropout,
                    recurrent_dropout,
                } => {
                    let d = match current {
                        ValueShape::TimeFeatures(_, f) => f,
                        _ => unreachable!("validated by infer_shapes"),
                    };
                    let cell = match cell {
                        CellKind::Lstm => Cell::Lstm(LstmParams::glorot_init(d, *units, rng)),
                        CellKind::Gru => Cell::Gru(GruParams::glorot_init(d, *units, rng)),
                    };
                    Node::Rnn(RecurrentLayer {
                        cell,
                        dropout_p: *dropout,
                        recurrent_p: *recurrent_dropout,
                        return_sequences: *return_sequences,
                    })
                }
            };
            nodes.push(node);
            current = *out_shape;
        }
        Ok(Model {
            spec: spec.clone(),
            nodes,
        })
    }

    /// Train-mode forward: batch statistics, live dropout, contexts for
    /// backward. Mutates batchnorm running statistics.
    pub fn forward_train(&mut self, x: &Tensor, rng: &mut Rng) -> Result<(Tensor, Vec<NodeCtx>)> {
        let mut value = x.clone();
        let mut ctxs = Vec::with_capacity(self.nodes.len());
        for node in &mut self.nodes {
            let (next, ctx) = match node {
                Node::Conv(c) => {
                    let (y, ctx) = c.forward(&value)?;
                    (y, NodeCtx::Conv(ctx))
                }
                Node::Bn(bn) => {
                    let (y, ctx) = bn.forward_train(&value)?;
                    (y, NodeCtx::Bn(ctx))
                }
                Node::Act(a) => {
                    let (y, ctx) = a.forward(&value);
                    (y, NodeCtx::Act(ctx))
                }
                Node::Drop(d) => {
                    let (y, ctx) = d.forward(&value, rng, Mode::Train);
                    (y, NodeCtx::Drop(ctx))
                }
                Node::Pool(p) => {
                    let (y, ctx) = p.forward(&value)?;
                    (y, NodeCtx::Pool(ctx))
                }
                Node::Flatten => {
                    let from = value.shape().to_vec();
                    let b = from[0];
                    let rest: usize = from[1..].iter().product();
                    (value.reshape(&[b, rest])?, NodeCtx::Reshape { from })
                }
                Node::TimeMajor => {
                    let (c, t) = (value.shape()[1], value.shape()[2]);
                    (
                        swap_channels_time(&value),
                        NodeCtx::TimeMajor { channels: c, t },
                    )
                }
                Node::LastStep => {
                    let t = value.shape()[1];
                    (take_last_step(&value), NodeCtx::LastStep { t })
                }
                Node::Dense(d) => {
                    let (y, ctx) = d.forward(&value)?;
                    (y, NodeCtx::Dense(ctx))
                }
                Node::Rnn(r) => {
                    let (y, ctx) = r.forward(&value, rng, Mode::Train)?;
                    (y, NodeCtx::Rnn(ctx))
                }
            };
            value = next;
            ctxs.push(ctx);
        }
        Ok((value, ctxs))
    }

    /// Eval-mode forward: running statistics, no dropout, no contexts.
    /// A pure function of (parameters, input).
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let mut value = x.clone();
        for node in &self.nodes {
            value = match node {
                Node::Conv(c) => c.infer(&value)?,
                Node::Bn(bn) => bn.infer(&value)?,
                Node::Act(a) => a.infer(&value),
                Node::Drop(_) => value,
                Node::Pool(p) => p.infer(&value)?,
                Node::Flatten => {
                    let b = value.shape()[0];
                    let rest: usize = value.shape()[1..].iter().product();
                    value.reshape(&[b, rest])?
                }
                Node::TimeMajor => swap_channels_time(&value),
                Node::LastStep => take_last_step(&value),
                Node::Dense(d) => d.infer(&value)?,
                Node::Rnn(r) => r.infer(&value)?,
            };
        }
        Ok(value)
    }

    /// Backward through the whole chain. Returns gradients aligned with
    /// [`Model::trainable_params`] plus the gradient at the input.
    pub fn backward(
        &self,
        ctxs: &[NodeCtx],
        grad_logits: &Tensor,
    ) -> Result<(Vec<Tensor>, Tensor)> {
        let mut grad = grad_logits.clone();
        let mut per_node: Vec<Vec<Tensor>> = Vec::with_capacity(self.nodes.len());
        for (node, ctx) in self.nodes.iter().zip(ctxs).rev() {
            let mut own = Vec::new();
            grad = match (node, ctx) {
                (Node::Conv(c), NodeCtx::Conv(cc)) => {
                    let (gx, gw, gb) = c.backward(cc, &grad)?;
                    own.push(gw);
                    own.push(gb);
                    gx
                }
                (Node::Bn(bn), NodeCtx::Bn(bc)) => {
                    let (gx, gg, gb) = bn.backward(bc, &grad)?;
                    own.push(gg);
                    own.push(gb);
                    gx
                }
                (Node::Act(a), NodeCtx::Act(ac)) => a.backward(ac, &grad),
                (Node::Drop(d), NodeCtx::Drop(dc)) => d.backward(dc, &grad),
                (Node::Pool(p), NodeCtx::Pool(pc)) => p.backward(pc, &grad)?,
                (Node::Flatten, NodeCtx::Reshape { from }) => grad.reshape(from)?,
                (Node::TimeMajor, NodeCtx::TimeMajor { .. }) => swap_time_channels(&grad),
                (Node::LastStep, NodeCtx::LastStep { t }) => expand_last_step(&grad, *t),
                (Node::Dense(d), NodeCtx::Dense(dc)) => {
                    let (gx, gw, gb) = d.backward(dc, &grad)?;
                    own.push(gw);
                    own.push(gb);
                    gx
                }
                (Node::Rnn(r), NodeCtx::Rnn(rc)) => {
                    let (gx, cell_grads) = r.backward(rc, &grad)?;
                    match cell_grads {
                        crate::recurrent::CellGrads::Lstm { w_x, w_h, b } => {
                            own.extend([w_x, w_h, b]);
                        }
                        crate::recurrent::CellGrads::Gru { w_x, w_h, w_hc, b } => {
                            own.extend([w_x, w_h, w_hc, b]);
                        }
                    }
                    gx
                }
                _ => {
                    return Err(Error::config(
                        "backward context does not match the layer chain",
                    ))
                }
            };
            per_node.push(own);
        }
        per_node.reverse();
        Ok((per_node.into_iter().flatten().collect(), grad))
    }

    /// Trainable tensors in a fixed chain order.
    pub fn trainable_params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match node {
                Node::Conv(c) => out.extend([&c.weight, &c.bias]),
                Node::Bn(bn) => out.extend([&bn.gamma, &bn.beta]),
                Node::Dense(d) => out.extend([&d.weight, &d.bias]),
                Node::Rnn(r) => match &r.cell {
                    Cell::Lstm(p) => out.extend([&p.w_x, &p.w_h, &p.b]),
                    Cell::Gru(p) => out.extend([&p.w_x, &p.w_h, &p.w_hc, &p.b]),
                },
                _ => {}
            }
        }
        out
    }

    pub fn trainable_params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for node in &mut self.nodes {
            match node {
                Node::Conv(c) => out.extend([&mut c.weight, &mut c.bias]),
                Node::Bn(bn) => out.extend([&mut bn.gamma, &mut bn.beta]),
                Node::Dense(d) => out.extend([&mut d.weight, &mut d.bias]),
                Node::Rnn(r) => match &mut r.cell {
                    Cell::Lstm(p) => out.extend([&mut p.w_x, &mut p.w_h, &mut p.b]),
                    Cell::Gru(p) => out.extend([&mut p.w_x, &mut p.w_h, &mut p.w_hc, &mut p.b]),
                },
                _ => {}
            }
        }
        out
    }

    /// Names aligned with [`Model::trainable_params`].
    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            match node {
                Node::Conv(_) => {
                    out.push(format!("layer{i}.conv.weight"));
                    out.push(format!("layer{i}.conv.bias"));
                }
                Node::Bn(_) => {
                    out.push(format!("layer{i}.bn.gamma"));
                    out.push(format!("layer{i}.bn.beta"));
                }
                Node::Dense(_) => {
                    out.push(format!("layer{i}.dense.weight"));
                    out.push(format!("layer{i}.dense.bias"));
                }
                Node::Rnn(r) => {
                    let names: &[&str] = match r.cell {
                        Cell::Lstm(_) => &["w_x", "w_h", "b"],
                        Cell::Gru(_) => &["w_x", "w_h", "w_hc", "b"],
                    };
                    for n in names {
                        out.push(format!("layer{i}.rnn.{n}"));
                    }
                }
                _ => {}
            }
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.trainable_params().iter().map(|t| t.len()).sum()
    }

    /// All persistent tensors: trainable parameters plus batchnorm running
    /// statistics, named for the checkpoint manifest.
    fn state_entries(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = self
            .param_names()
            .into_iter()
            .zip(self.trainable_params())
            .collect();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Node::Bn(bn) = node {
                out.push((format!("layer{i}.bn.running_mean"), &bn.running_mean));
                out.push((format!("layer{i}.bn.running_var"), &bn.running_var));
            }
        }
        out
    }

    fn state_entries_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut names = self.param_names();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Node::Bn(_) = node {
                names.push(format!("layer{i}.bn.running_mean"));
                names.push(format!("layer{i}.bn.running_var"));
            }
        }
        let mut tensors: Vec<&mut Tensor> = Vec::new();
        let mut bn_tail: Vec<&mut Tensor> = Vec::new();
        for node in &mut self.nodes {
            match node {
                Node::Conv(c) => tensors.extend([&mut c.weight, &mut c.bias]),
                Node::Bn(bn) => {
                    tensors.extend([&mut bn.gamma, &mut bn.beta]);
                    bn_tail.extend([&mut bn.running_mean, &mut bn.running_var]);
                }
                Node::Dense(d) => tensors.extend([&mut d.weight, &mut d.bias]),
                Node::Rnn(r) => match &mut r.cell {
                    Cell::Lstm(p) => tensors.extend([&mut p.w_x, &mut p.w_h, &mut p.b]),
                    Cell::Gru(p) => tensors.extend([&mut p.w_x, &mut p.w_h, &mut p.w_hc, &mut p.b]),
                },
                _ => {}
            }
        }
        tensors.extend(bn_tail);
        names.into_iter().zip(tensors).collect()
    }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct CheckpointManifest {
    spec: ModelSpec,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    file: String,
    shape: Vec<usize>,
}

/// Write the model as a directory of NPY tensors plus `manifest.json`.
pub fn save_checkpoint(model: &Model, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    for (idx, (name, tensor)) in model.state_entries().into_iter().enumerate() {
        let file = format!("t{idx:03}.npy");
        npy::write_npy(tensor, dir.join(&file))?;
        entries.push(TensorEntry {
            name,
            file,
            shape: tensor.shape().to_vec(),
        });
    }
    let manifest = CheckpointManifest {
        spec: model.spec.clone(),
        tensors: entries,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(dir.join("manifest.json"), json)?;
    Ok(())
}

/// Rebuild a model bit-exactly from [`save_checkpoint`] output.
pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Model> {
    let dir = dir.as_ref();
    let manifest: CheckpointManifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
    let mut model = Model::init(&manifest.spec, &mut Rng::new(0))?;
    let mut by_name: std::collections::HashMap<String, Tensor> = manifest
        .tensors
        .iter()
        .map(|e| Ok((e.name.clone(), npy::read_npy(dir.join(&e.file))?)))
        .collect::<Result<_>>()?;
    for (name, slot) in model.state_entries_mut() {
        let loaded = by_name
            .remove(&name)
            .ok_or_else(|| Error::config(format!("checkpoint missing tensor '{name}'")))?;
        if loaded.shape() != slot.shape() {
            return Err(Error::config(format!(
                "checkpoint tensor '{name}' has shape {:?}, expected {:?}",
                loaded.shape(),
                slot.shape()
            )));
        }
        *slot = loaded;
    }
    if !by_name.is_empty() {
        let extra: Vec<String> = by_name.into_keys().collect();
        return Err(Error::config(format!(
            "checkpoint lists unknown tensors: {extra:?}"
        )));
    }
    Ok(model)
}

// ---------------------------------------------------------------------------
// Layout helpers
// ---------------------------------------------------------------------------

/// [B, C, T] -> [B, T, C]
fn swap_channels_time(x: &Tensor) -> Tensor {
    let (b, c, t) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut out = Tensor::zeros(&[b, t, c]);
    for bi in 0..b {
        for ci in 0..c {
            for ti in 0..t {
                out.data_mut()[(bi * t + ti) * c + ci] = x.data()[(bi * c + ci) * t + ti];
            }
        }
    }
    out
}

/// [B, T, C] -> [B, C, T]
fn swap_time_channels(x: &Tensor) -> Tensor {
    let (b, t, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut out = Tensor::zeros(&[b, c, t]);
    for bi in 0..b {
        for ti in 0..t {
            for ci in 0..c {
                out.data_mut()[(bi * c + ci) * t + ti] = x.data()[(bi * t + ti) * c + ci];
            }
        }
    }
    out
}

/// [B, T, U] -> [B, U] (final step only)
fn take_last_step(x: &Tensor) -> Tensor {
    let (b, t, u) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut out = Tensor::zeros(&[b, u]);
    for bi in 0..b {
        let src = (bi * t + t - 1) * u;
        out.data_mut()[bi * u..(bi + 1) * u].copy_from_slice(&x.data()[src..src + u]);
    }
    out
}

/// [B, U] -> [B, T, U] with the gradient parked at the final step.
fn expand_last_step(g: &Tensor, t: usize) -> Tensor {
    let (b, u) = (g.shape()[0], g.shape()[1]);
    let mut out = Tensor::zeros(&[b, t, u]);
    for bi in 0..b {
        let dst = (bi * t + t - 1) * u;
        out.data_mut()[dst..dst + u].copy_from_slice(&g.data()[bi * u..(bi + 1) * u]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cnn_shape_chain_follows_length_formulas() {
        let h = CnnHyper {
            filter_num: 30,
            filter_size: 28,
            pool_size: 4,
            batch_size: 200,
            lr: 1e-3,
        };
        let spec = build_cnn(&h, 22, 1000);
        let shapes = spec.infer_shapes().unwrap();
        // conv length (1000 - 28) / 4 + 1 = 244, pooled 61, flatten 1830.
        assert_eq!(shapes[0], ValueShape::ChannelsTime(30, 244));
        assert_eq!(shapes[4], ValueShape::ChannelsTime(30, 61));
        assert_eq!(shapes[5], ValueShape::Flat(1830));
        assert_eq!(*shapes.last().unwrap(), ValueShape::Flat(4));
    }

    #[test]
    fn smallest_grid_point_still_composes() {
        let h = CnnHyper {
            filter_num: 10,
            filter_size: 4,
            pool_size: 2,
            batch_size: 50,
            lr: 1e-4,
        };
        let spec = build_cnn(&h, 22, 1000);
        assert!(spec.infer_shapes().is_ok());
    }

    #[test]
    fn stacked_spec_materializes_units_and_dropout() {
        let spec = build_stacked(CellKind::Lstm, 22, 50);
        let mut sizes = Vec::new();
        let mut drops = Vec::new();
        for l in &spec.layers {
            if let LayerSpec::Recurrent {
                units,
                dropout,
                recurrent_dropout,
                return_sequences,
                ..
            } = l
            {
                sizes.push(*units);
                drops.push((*dropout, *recurrent_dropout));
                assert!(return_sequences);
            }
        }
        assert_eq!(sizes, vec![200, 100, 50]);
        assert_eq!(drops, vec![(0.6, 0.6), (0.5, 0.5), (0.4, 0.4)]);
        assert!(spec.infer_shapes().is_ok());
    }

    #[test]
    fn gru_stack_differs_only_in_cell_kind() {
        let lstm = build_stacked(CellKind::Lstm, 22, 50);
        let gru = build_stacked(CellKind::Gru, 22, 50);
        assert_eq!(lstm.layers.len(), gru.layers.len());
        // Parameter count ratio per layer is 3 gate blocks vs 4.
        let ml = Model::init(&lstm, &mut Rng::new(1)).unwrap();
        let mg = Model::init(&gru, &mut Rng::new(1)).unwrap();
        let lstm_rnn: usize = 4 * (22 * 200 + 200 * 200 + 200)
            + 4 * (200 * 100 + 100 * 100 + 100)
            + 4 * (100 * 50 + 50 * 50 + 50);
        let gru_rnn: usize = 3 * (22 * 200 + 200 * 200 + 200)
            + 3 * (200 * 100 + 100 * 100 + 100)
            + 3 * (100 * 50 + 50 * 50 + 50);
        assert_eq!(ml.num_params() - lstm_rnn, mg.num_params() - gru_rnn);
    }

    #[test]
    fn mixed_conv_decoder_lengths() {
        let spec = build_mixed(&MixedSpec::default(), 22, 1000).unwrap();
        let shapes = spec.infer_shapes().unwrap();
        // conv (1000 - 20)/4 + 1 = 246, pool (246 - 4)/4 + 1 = 61.
        assert_eq!(shapes[0], ValueShape::ChannelsTime(40, 246));
        assert_eq!(shapes[4], ValueShape::ChannelsTime(40, 61));
        assert_eq!(shapes[5], ValueShape::TimeFeatures(61, 40));
        // Flatten sees 61 steps x 20 units from the second LSTM.
        let flat = shapes[shapes.len() - 2];
        assert_eq!(flat, ValueShape::Flat(61 * 20));
    }

    #[test]
    fn mixed_variants_one_and_three_layers() {
        for n in [1usize, 3] {
            let spec = build_mixed(&MixedSpec::with_layers(n).unwrap(), 22, 1000).unwrap();
            assert!(spec.infer_shapes().is_ok());
        }
        assert!(MixedSpec::with_layers(4).is_err());
        let bad = MixedSpec {
            lstm_layers: 2,
            units: vec![30],
        };
        assert!(build_mixed(&bad, 22, 1000).is_err());
    }

    #[test]
    fn parameter_counts_match_closed_forms() {
        let h = CnnHyper {
            filter_num: 10,
            filter_size: 20,
            pool_size: 4,
            batch_size: 50,
            lr: 1e-3,
        };
        let spec = build_cnn(&h, 22, 1000);
        let model = Model::init(&spec, &mut Rng::new(0)).unwrap();
        let conv_len = (1000 - 20) / 4 + 1; // 246
        let pooled = (conv_len - 4) / 4 + 1; // 61
        let expect = 10 * 22 * 20 + 10          // conv
            + 2 * 10                            // batchnorm gamma/beta
            + (10 * pooled) * 20 + 20           // dense 20
            + 20 * 4 + 4; // head
        assert_eq!(model.num_params(), expect);

        let mixed = build_mixed(&MixedSpec::default(), 22, 1000).unwrap();
        let model = Model::init(&mixed, &mut Rng::new(0)).unwrap();
        let expect = 40 * 22 * 20 + 40            // conv decoder
            + 2 * 40                              // conv batchnorm
            + 4 * (40 * 30 + 30 * 30 + 30)        // lstm 30
            + 2 * 30
            + 4 * (30 * 20 + 20 * 20 + 20)        // lstm 20
            + 2 * 20
            + (61 * 20) * 4 + 4; // head
        assert_eq!(model.num_params(), expect);
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let spec = build_cnn(&CnnHyper::reference(), 22, 64);
        let model = Model::init(&spec, &mut Rng::new(7)).unwrap();
        let mut rng = Rng::new(1);
        let x = Tensor::with_normal(&[2, 22, 64], 0.0, 1.0, &mut rng);
        let a = model.infer(&x).unwrap();
        let b = model.infer(&x).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shape(), &[2, 4]);
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let spec = build_mixed(&MixedSpec::default(), 3, 40).unwrap();
        let mut model = Model::init(&spec, &mut Rng::new(3)).unwrap();
        // Touch running stats so they differ from init.
        let mut rng = Rng::new(4);
        let x = Tensor::with_normal(&[2, 3, 40], 0.0, 1.0, &mut rng);
        model.forward_train(&x, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&model, dir.path()).unwrap();
        let loaded = load_checkpoint(dir.path()).unwrap();
        assert_eq!(loaded.spec, model.spec);
        let before = model.infer(&x).unwrap();
        let after = loaded.infer(&x).unwrap();
        assert_eq!(before, after);
        for (a, b) in model
            .trainable_params()
            .iter()
            .zip(loaded.trainable_params())
        {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn layout_swaps_are_inverse() {
        let mut rng = Rng::new(9);
        let x = Tensor::with_uniform(&[2, 3, 5], -1.0, 1.0, &mut rng);
        let y = swap_channels_time(&x);
        assert_eq!(y.shape(), &[2, 5, 3]);
        assert_eq!(swap_time_channels(&y), x);
    }
}
