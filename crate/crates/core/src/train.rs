//! Mini-batch training with snapshot-best early stopping, fixed or implicit
//! validation, the convolutional grid search, and the per-subject study.
//!
//! Determinism contract: identical (data, config, seed) produce an
//! identical RunRecord bit for bit. All randomness — epoch shuffles,
//! implicit-validation draws, dropout masks — flows from generators derived
//! from the config seed, and grid runs are seeded per combination so
//! parallel and serial execution merge to the same table.

use crate::data::TrialSet;
use crate::error::{Error, Result};
use crate::loss::{argmax_rows, softmax_xent};
use crate::model::{build_cnn, CnnGrid, CnnHyper, Model, ModelSpec};
use crate::optim::{Optimizer, OptimizerKind};
use crate::rng::Rng;
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Validation {
    /// Score the provided validation set every epoch.
    Fixed,
    /// Draw a fresh validation subset from the training pool each epoch;
    /// that epoch trains on the remainder.
    Implicit {
        #[serde(default = "default_val_fraction")]
        fraction: f64,
    },
}

fn default_val_fraction() -> f64 {
    0.1
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub validation: Validation,
    pub early_stop: bool,
    pub seed: u64,
    /// Record each epoch's (train, val) index sets; test instrumentation.
    #[serde(default, skip_serializing)]
    pub trace_partitions: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 50,
            lr: 1e-3,
            optimizer: OptimizerKind::Adam,
            validation: Validation::Fixed,
            early_stop: true,
            seed: 0,
            trace_partitions: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub train_loss: Vec<f64>,
    pub train_acc: Vec<f64>,
    pub val_acc: Vec<f64>,
    /// 1-based epoch of the highest validation accuracy (earliest on ties).
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    /// Parameters as of `best_epoch`.
    pub best_model: Model,
    /// Scored on the best snapshot when early stopping is on, otherwise on
    /// the final-epoch model.
    pub test_accuracy: f64,
    /// Per-epoch (train indices, val indices) when tracing is on.
    pub epoch_partitions: Option<Vec<(Vec<usize>, Vec<usize>)>>,
}

/// Argmax accuracy over a trial set, in [0, 1]. Ties resolve to the lowest
/// class index.
pub fn evaluate(model: &Model, ts: &TrialSet) -> Result<f64> {
    if ts.is_empty() {
        return Err(Error::config("cannot evaluate on an empty trial set"));
    }
    let mut correct = 0usize;
    let chunk = 128usize;
    let indices: Vec<usize> = (0..ts.len()).collect();
    for batch in indices.chunks(chunk) {
        let (x, y) = ts.batch(batch);
        let logits = model.infer(&x)?;
        for (pred, label) in argmax_rows(&logits).into_iter().zip(&y) {
            if pred == *label {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / ts.len() as f64)
}

/// One training run. The caller supplies preprocessed trial sets matching
/// the model family's convention.
pub fn train(
    model: &mut Model,
    train_set: &TrialSet,
    val_set: &TrialSet,
    test_set: &TrialSet,
    cfg: &TrainConfig,
) -> Result<RunRecord> {
    if train_set.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    if let Validation::Implicit { fraction } = cfg.validation {
        if !(0.0..1.0).contains(&fraction) || fraction == 0.0 {
            return Err(Error::config(format!(
                "implicit validation fraction {fraction} outside (0, 1)"
            )));
        }
    }
    if matches!(cfg.validation, Validation::Fixed) && val_set.is_empty() {
        return Err(Error::config(
            "fixed validation requires a non-empty validation set",
        ));
    }

    let mut master = Rng::new(cfg.seed);
    let mut shuffle_rng = master.split();
    let mut dropout_rng = master.split();

    let n = train_set.len();
    let mut record = RunRecord {
        train_loss: Vec::with_capacity(cfg.epochs),
        train_acc: Vec::with_capacity(cfg.epochs),
        val_acc: Vec::with_capacity(cfg.epochs),
        best_epoch: 0,
        best_val_accuracy: f64::NEG_INFINITY,
        best_model: model.clone(),
        test_accuracy: 0.0,
        epoch_partitions: cfg.trace_partitions.then(Vec::new),
    };
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.lr);

    for epoch in 1..=cfg.epochs {
        let perm = shuffle_rng.permutation(n);
        let (epoch_train, epoch_val): (Vec<usize>, Vec<usize>) = match cfg.validation {
            Validation::Fixed => (perm, Vec::new()),
            Validation::Implicit { fraction } => {
                let n_val = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
                (perm[n_val..].to_vec(), perm[..n_val].to_vec())
            }
        };
        if cfg.batch_size == 0 || cfg.batch_size > epoch_train.len() {
            return Err(Error::config(format!(
                "batch size {} exceeds epoch training size {}",
                cfg.batch_size,
                epoch_train.len()
            )));
        }
        if let Some(trace) = record.epoch_partitions.as_mut() {
            trace.push((epoch_train.clone(), epoch_val.clone()));
        }

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (batch_idx, batch) in epoch_train.chunks(cfg.batch_size).enumerate() {
            let (x, y) = train_set.batch(batch);
            let (logits, ctxs) = model.forward_train(&x, &mut dropout_rng)?;
            let (loss, grad_logits) = softmax_xent(&logits, &y)?;
            if !loss.is_finite() {
                return Err(Error::TrainingAborted {
                    epoch,
                    batch: batch_idx,
                    reason: format!("non-finite loss {loss}"),
                });
            }
            for (pred, label) in argmax_rows(&logits).into_iter().zip(&y) {
                if pred == *label {
                    correct += 1;
                }
            }
            loss_sum += loss * batch.len() as f64;
            let (grads, _) = model.backward(&ctxs, &grad_logits)?;
            optimizer.step(&mut model.trainable_params_mut(), &grads)?;
        }
        record.train_loss.push(loss_sum / epoch_train.len() as f64);
        record
            .train_acc
            .push(correct as f64 / epoch_train.len() as f64);

        let val_acc = match cfg.validation {
            Validation::Fixed => evaluate(model, val_set)?,
            Validation::Implicit { .. } => evaluate(model, &train_set.gather(&epoch_val))?,
        };
        record.val_acc.push(val_acc);
        // Strict improvement keeps the earlier epoch on ties.
        if val_acc > record.best_val_accuracy {
            record.best_val_accuracy = val_acc;
            record.best_epoch = epoch;
            record.best_model = model.clone();
        }
    }

    let scored: &Model = if cfg.early_stop {
        &record.best_model
    } else {
        model
    };
    record.test_accuracy = evaluate(scored, test_set)?;
    Ok(record)
}

// ---------------------------------------------------------------------------
// Grid search
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct GridRow {
    pub hyper: CnnHyper,
    /// Train accuracy at the best-validation epoch.
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
    pub best_epoch: usize,
}

/// Deterministic sub-seed per grid combination, independent of execution
/// order.
fn combo_seed(base: u64, index: usize) -> u64 {
    (base ^ (index as u64).wrapping_mul(0x9e3779b97f4a7c15)).wrapping_add(0x243f6a8885a308d3)
}

fn run_combo(
    hyper: &CnnHyper,
    index: usize,
    train_set: &TrialSet,
    val_set: &TrialSet,
    test_set: &TrialSet,
    base: &TrainConfig,
) -> Result<GridRow> {
    let seed = combo_seed(base.seed, index);
    let spec = build_cnn(hyper, train_set.channels(), train_set.samples());
    let mut model = Model::init(&spec, &mut Rng::new(seed))?;
    let cfg = TrainConfig {
        batch_size: hyper.batch_size.min(train_set.len()),
        lr: hyper.lr,
        seed,
        ..*base
    };
    let record = train(&mut model, train_set, val_set, test_set, &cfg)?;
    Ok(GridRow {
        hyper: *hyper,
        train_accuracy: record.train_acc[record.best_epoch - 1],
        val_accuracy: record.best_val_accuracy,
        test_accuracy: record.test_accuracy,
        best_epoch: record.best_epoch,
    })
}

/// One run per grid combination, ranked by validation accuracy (descending,
/// ties in combination order). `jobs` > 1 runs combinations on that many
/// threads; each run owns its model, optimizer, and rng, and rows merge by
/// combination index, so the table is identical either way.
pub fn grid_search(
    grid: &CnnGrid,
    train_set: &TrialSet,
    val_set: &TrialSet,
    test_set: &TrialSet,
    base: &TrainConfig,
    jobs: usize,
) -> Result<Vec<GridRow>> {
    let combos = grid.combos();
    let mut indexed: Vec<(usize, GridRow)> = if jobs <= 1 {
        let mut out = Vec::with_capacity(combos.len());
        for (i, h) in combos.iter().enumerate() {
            out.push((i, run_combo(h, i, train_set, val_set, test_set, base)?));
        }
        out
    } else {
        let results: std::sync::Mutex<Vec<(usize, Result<GridRow>)>> =
            std::sync::Mutex::new(Vec::with_capacity(combos.len()));
        let next: std::sync::atomic::AtomicUsize = std::sync::atomic::AtomicUsize::new(0);
        std::thread::scope(|scope| {
            for _ in 0..jobs {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                    if i >= combos.len() {
                        break;
                    }
                    let row = run_combo(&combos[i], i, train_set, val_set, test_set, base);
                    results.lock().unwrap().push((i, row));
                });
            }
        });
        let mut rows = results.into_inner().unwrap();
        rows.sort_by_key(|(i, _)| *i);
        rows.into_iter()
            .map(|(i, r)| r.map(|row| (i, row)))
            .collect::<Result<Vec<_>>>()?
    };
    indexed.sort_by(|(ia, a), (ib, b)| {
        b.val_accuracy
            .partial_cmp(&a.val_accuracy)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(ia.cmp(ib))
    });
    Ok(indexed.into_iter().map(|(_, r)| r).collect())
}

// ---------------------------------------------------------------------------
// Per-subject study
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct SubjectSplit {
    pub val_fraction: f64,
    pub test_fraction: f64,
}

impl Default for SubjectSplit {
    fn default() -> Self {
        SubjectSplit {
            val_fraction: 0.15,
            test_fraction: 0.15,
        }
    }
}

#[derive(Debug)]
pub struct SubjectStudy {
    /// (subject id, record) for every subject present in the data.
    pub per_subject: Vec<(usize, RunRecord)>,
    /// One run over all subjects pooled.
    pub pooled: RunRecord,
}

/// Train/validate/test each subject on its own slice, then once pooled.
pub fn subject_study(
    ts: &TrialSet,
    spec: &ModelSpec,
    cfg: &TrainConfig,
    split: &SubjectSplit,
) -> Result<SubjectStudy> {
    let mut subjects: Vec<usize> = ts.subject.clone();
    subjects.sort_unstable();
    subjects.dedup();

    let run_slice = |slice: &TrialSet, seed: u64| -> Result<RunRecord> {
        let n = slice.len();
        let val = ((n as f64 * split.val_fraction) as usize).max(1);
        let test = ((n as f64 * split.test_fraction) as usize).max(1);
        let (train_set, val_set, test_set) = crate::data::split(
            slice,
            &crate::data::SplitSpec {
                val_size: val,
                test_size: test,
                seed,
            },
        )?;
        let mut model = Model::init(spec, &mut Rng::new(seed))?;
        let cfg = TrainConfig {
            seed,
            batch_size: cfg.batch_size.min(train_set.len()),
            ..*cfg
        };
        train(&mut model, &train_set, &val_set, &test_set, &cfg)
    };

    let mut per_subject = Vec::with_capacity(subjects.len());
    for &s in &subjects {
        let slice = ts.filter_subject(s);
        per_subject.push((s, run_slice(&slice, combo_seed(cfg.seed, s))?));
    }
    let pooled = run_slice(ts, combo_seed(cfg.seed, 1_000_003))?;
    Ok(SubjectStudy {
        per_subject,
        pooled,
    })
}

// ---------------------------------------------------------------------------
// CSV reports
// ---------------------------------------------------------------------------

pub fn write_history_csv(record: &RunRecord, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::fs::File::create(path.as_ref())?;
    writeln!(f, "epoch,train_loss,train_acc,val_acc")?;
    for i in 0..record.train_loss.len() {
        writeln!(
            f,
            "{},{},{},{}",
            i + 1,
            record.train_loss[i],
            record.train_acc[i],
            record.val_acc[i]
        )?;
    }
    Ok(())
}

pub fn write_summary_csv(record: &RunRecord, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::fs::File::create(path.as_ref())?;
    writeln!(f, "best_epoch,best_val_accuracy,test_accuracy")?;
    writeln!(
        f,
        "{},{},{}",
        record.best_epoch, record.best_val_accuracy, record.test_accuracy
    )?;
    Ok(())
}

pub fn write_grid_csv(rows: &[GridRow], path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::fs::File::create(path.as_ref())?;
    writeln!(
        f,
        "rank,filter_num,filter_size,pool_size,batch_size,lr,train_accuracy,val_accuracy,test_accuracy"
    )?;
    for (rank, r) in rows.iter().enumerate() {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{},{}",
            rank + 1,
            r.hyper.filter_num,
            r.hyper.filter_size,
            r.hyper.pool_size,
            r.hyper.batch_size,
            r.hyper.lr,
            r.train_accuracy,
            r.val_accuracy,
            r.test_accuracy
        )?;
    }
    Ok(())
}

pub fn write_subject_csv(study: &SubjectStudy, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::fs::File::create(path.as_ref())?;
    writeln!(f, "subject,val_accuracy,test_accuracy")?;
    for (s, r) in &study.per_subject {
        writeln!(f, "{},{},{}", s, r.best_val_accuracy, r.test_accuracy)?;
    }
    writeln!(
        f,
        "pooled,{},{}",
        study.pooled.best_val_accuracy, study.pooled.test_accuracy
    )?;
    Ok(())
}
