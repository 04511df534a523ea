//! Harness invariants: snapshot-best rule, per-seed determinism,
//! implicit-validation disjointness, abort diagnostics, and the grid and
//! subject-study operations.

use eegdl::data::{synth_trialset_with, SplitSpec, TrialSet};
use eegdl::error::Error;
use eegdl::loss::argmax_rows;
use eegdl::model::{build_cnn, CnnGrid, CnnHyper, LayerSpec, Model, ModelSpec};
use eegdl::optim::OptimizerKind;
use eegdl::rng::Rng;
use eegdl::tensor::Tensor;
use eegdl::train::{
    evaluate, grid_search, subject_study, train, write_grid_csv, write_history_csv,
    write_summary_csv, SubjectSplit, TrainConfig, Validation,
};

/// Tiny model over (C=22, T=16) trials; cheap enough for many runs.
fn tiny_spec() -> ModelSpec {
    flat_spec(22)
}

fn flat_spec(channels: usize) -> ModelSpec {
    ModelSpec {
        input_channels: channels,
        input_len: 16,
        classes: 4,
        layers: vec![LayerSpec::Flatten, LayerSpec::Dense { units: 4 }],
    }
}

fn tiny_data(n_per_class: usize, seed: u64) -> TrialSet {
    synth_trialset_with(n_per_class, seed, 250.0, 16, 0.3)
}

fn base_cfg() -> TrainConfig {
    TrainConfig {
        epochs: 5,
        batch_size: 8,
        lr: 1e-2,
        optimizer: OptimizerKind::Adam,
        validation: Validation::Fixed,
        early_stop: true,
        seed: 42,
        trace_partitions: false,
    }
}

fn split3(ts: &TrialSet, seed: u64) -> (TrialSet, TrialSet, TrialSet) {
    let n = ts.len();
    eegdl::data::split(
        ts,
        &SplitSpec {
            val_size: n / 5,
            test_size: n / 5,
            seed,
        },
    )
    .unwrap()
}

#[test]
fn identical_seed_identical_record() {
    let ts = tiny_data(10, 1);
    let (tr, va, te) = split3(&ts, 7);
    let cfg = base_cfg();
    let run = || {
        let mut model = Model::init(&tiny_spec(), &mut Rng::new(5)).unwrap();
        train(&mut model, &tr, &va, &te, &cfg).unwrap()
    };
    let a = run();
    let b = run();
    assert_eq!(a.train_loss, b.train_loss);
    assert_eq!(a.train_acc, b.train_acc);
    assert_eq!(a.val_acc, b.val_acc);
    assert_eq!(a.best_epoch, b.best_epoch);
    assert_eq!(a.test_accuracy, b.test_accuracy);
}

#[test]
fn best_fields_follow_argmax_of_val_series() {
    let ts = tiny_data(12, 3);
    let (tr, va, te) = split3(&ts, 9);
    let mut model = Model::init(&tiny_spec(), &mut Rng::new(6)).unwrap();
    let record = train(&mut model, &tr, &va, &te, &base_cfg()).unwrap();
    let max = record
        .val_acc
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(record.best_val_accuracy, max);
    let first = record.val_acc.iter().position(|&v| v == max).unwrap() + 1;
    assert_eq!(record.best_epoch, first, "earliest epoch wins ties");
}

#[test]
fn zero_lr_keeps_parameters_and_val_constant() {
    let ts = tiny_data(8, 4);
    let (tr, va, te) = split3(&ts, 2);
    let mut model = Model::init(&tiny_spec(), &mut Rng::new(8)).unwrap();
    let before: Vec<Tensor> = model.trainable_params().into_iter().cloned().collect();
    let cfg = TrainConfig {
        lr: 0.0,
        ..base_cfg()
    };
    let record = train(&mut model, &tr, &va, &te, &cfg).unwrap();
    for (a, b) in before.iter().zip(model.trainable_params()) {
        assert_eq!(a.data(), b.data());
    }
    assert!(record.val_acc.windows(2).all(|w| w[0] == w[1]));
    // Constant series ties every epoch; the first must win.
    assert_eq!(record.best_epoch, 1);
}

#[test]
fn test_accuracy_comes_from_snapshot_not_final_model() {
    // Heavy noise plus a hot learning rate makes validation peak mid-run;
    // seek a run where the final model disagrees with the snapshot.
    let ts = synth_trialset_with(10, 5, 250.0, 16, 4.0);
    let (tr, va, te) = split3(&ts, 11);
    let mut found = false;
    for seed in 0..20u64 {
        let cfg = TrainConfig {
            epochs: 12,
            lr: 2e-1,
            seed,
            ..base_cfg()
        };
        let mut model = Model::init(&tiny_spec(), &mut Rng::new(seed)).unwrap();
        let record = train(&mut model, &tr, &va, &te, &cfg).unwrap();
        let snapshot_acc = evaluate(&record.best_model, &te).unwrap();
        let final_acc = evaluate(&model, &te).unwrap();
        assert_eq!(record.test_accuracy, snapshot_acc);
        if record.best_epoch < cfg.epochs && snapshot_acc != final_acc {
            found = true;
            break;
        }
    }
    assert!(
        found,
        "no run trained past its best epoch with divergent accuracy"
    );
}

#[test]
fn early_stop_off_scores_final_model() {
    let ts = tiny_data(10, 6);
    let (tr, va, te) = split3(&ts, 13);
    let cfg = TrainConfig {
        early_stop: false,
        epochs: 8,
        ..base_cfg()
    };
    let mut model = Model::init(&tiny_spec(), &mut Rng::new(3)).unwrap();
    let record = train(&mut model, &tr, &va, &te, &cfg).unwrap();
    assert_eq!(record.test_accuracy, evaluate(&model, &te).unwrap());
}

#[test]
fn implicit_validation_is_disjoint_every_epoch() {
    let ts = tiny_data(15, 7);
    let cfg = TrainConfig {
        validation: Validation::Implicit { fraction: 0.1 },
        trace_partitions: true,
        epochs: 4,
        batch_size: 10,
        ..base_cfg()
    };
    let mut model = Model::init(&tiny_spec(), &mut Rng::new(1)).unwrap();
    let empty = ts.gather(&[]);
    let record = train(&mut model, &ts, &empty, &ts, &cfg).unwrap();
    let partitions = record.epoch_partitions.as_ref().unwrap();
    assert_eq!(partitions.len(), 4);
    let n = ts.len();
    for (train_idx, val_idx) in partitions {
        assert_eq!(val_idx.len(), (n as f64 * 0.1).round() as usize);
        assert_eq!(train_idx.len() + val_idx.len(), n);
        for v in val_idx {
            assert!(!train_idx.contains(v), "index {v} in both partitions");
        }
    }
    // Different epochs draw different subsets.
    assert_ne!(partitions[0].1, partitions[1].1);
}

#[test]
fn nan_parameters_abort_with_location() {
    let ts = tiny_data(8, 8);
    let (tr, va, te) = split3(&ts, 3);
    let mut model = Model::init(&tiny_spec(), &mut Rng::new(1)).unwrap();
    model.trainable_params_mut()[0].data_mut()[0] = f64::NAN;
    let err = train(&mut model, &tr, &va, &te, &base_cfg()).unwrap_err();
    match err {
        Error::TrainingAborted { epoch, batch, .. } => {
            assert_eq!((epoch, batch), (1, 0));
        }
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn config_errors_are_rejected_before_training() {
    let ts = tiny_data(4, 9);
    let (tr, va, te) = split3(&ts, 1);
    let mut model = Model::init(&tiny_spec(), &mut Rng::new(1)).unwrap();
    let empty = ts.gather(&[]);

    let err = train(&mut model, &empty, &va, &te, &base_cfg()).unwrap_err();
    assert!(err.to_string().contains("empty"));

    let cfg = TrainConfig {
        batch_size: 1000,
        ..base_cfg()
    };
    assert!(train(&mut model, &tr, &va, &te, &cfg).is_err());

    let err = train(&mut model, &tr, &empty, &te, &base_cfg()).unwrap_err();
    assert!(err.to_string().contains("validation"));
}

#[test]
fn evaluate_constant_logits_on_balanced_data() {
    // Zero weights give identical logits; ties resolve to class 0, and the
    // balanced set leaves exactly a quarter correct.
    let spec = tiny_spec();
    let model = Model::init(
        &ModelSpec {
            layers: spec.layers.clone(),
            ..spec
        },
        &mut Rng::new(0),
    )
    .map(|mut m| {
        for p in m.trainable_params_mut() {
            for v in p.data_mut() {
                *v = 0.0;
            }
        }
        m
    })
    .unwrap();
    let ts = tiny_data(6, 10);
    assert_eq!(evaluate(&model, &ts).unwrap(), 0.25);
}

#[test]
fn evaluate_is_one_when_labels_match_predictions() {
    let model = Model::init(&tiny_spec(), &mut Rng::new(17)).unwrap();
    let mut ts = tiny_data(5, 11);
    // Relabel every trial with the model's own prediction.
    let indices: Vec<usize> = (0..ts.len()).collect();
    let (x, _) = ts.batch(&indices);
    ts.y = argmax_rows(&model.infer(&x).unwrap());
    assert_eq!(evaluate(&model, &ts).unwrap(), 1.0);
}

#[test]
fn evaluate_matches_per_trial_loop_oracle() {
    let model = Model::init(&tiny_spec(), &mut Rng::new(23)).unwrap();
    let ts = tiny_data(7, 12);
    let fast = evaluate(&model, &ts).unwrap();
    let mut correct = 0usize;
    for i in 0..ts.len() {
        let (x, y) = ts.batch(&[i]);
        let logits = model.infer(&x).unwrap();
        if argmax_rows(&logits)[0] == y[0] {
            correct += 1;
        }
    }
    assert_eq!(fast, correct as f64 / ts.len() as f64);
}

// ---------------------------------------------------------------------------
// Grid search
// ---------------------------------------------------------------------------

fn small_grid() -> CnnGrid {
    CnnGrid {
        filter_num: vec![3, 2],
        filter_size: vec![4],
        pool_size: vec![2],
        batch_size: vec![8],
        lr: vec![1e-2],
    }
}

fn grid_cfg() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        ..base_cfg()
    }
}

#[test]
fn full_grid_cardinality_is_216() {
    assert_eq!(CnnGrid::default().cardinality(), 216);
    assert_eq!(CnnGrid::default().combos().len(), 216);
}

#[test]
fn restricted_grid_runs_once_per_combo_and_ranks_by_val() {
    let ts = tiny_data(10, 13);
    let (tr, va, te) = split3(&ts, 21);
    let grid = CnnGrid {
        filter_num: vec![4, 3, 2],
        ..small_grid()
    };
    let rows = grid_search(&grid, &tr, &va, &te, &grid_cfg(), 1).unwrap();
    assert_eq!(rows.len(), 3);
    let top = rows[0].val_accuracy;
    assert!(rows.iter().all(|r| r.val_accuracy <= top));
    assert!(rows
        .windows(2)
        .all(|w| w[0].val_accuracy >= w[1].val_accuracy));
}

#[test]
fn parallel_grid_matches_serial_bit_exactly() {
    let ts = tiny_data(10, 14);
    let (tr, va, te) = split3(&ts, 22);
    let grid = CnnGrid {
        filter_num: vec![3, 2],
        filter_size: vec![4, 3],
        ..small_grid()
    };
    let serial = grid_search(&grid, &tr, &va, &te, &grid_cfg(), 1).unwrap();
    let parallel = grid_search(&grid, &tr, &va, &te, &grid_cfg(), 2).unwrap();
    assert_eq!(serial.len(), parallel.len());
    for (a, b) in serial.iter().zip(&parallel) {
        assert_eq!(a.hyper, b.hyper);
        assert_eq!(a.train_accuracy, b.train_accuracy);
        assert_eq!(a.val_accuracy, b.val_accuracy);
        assert_eq!(a.test_accuracy, b.test_accuracy);
    }
}

// ---------------------------------------------------------------------------
// Subject study
// ---------------------------------------------------------------------------

/// Synthetic set where each subject's trials carry a different noise level;
/// pooling adds data, so the pooled run should not trail the median subject.
fn per_subject_noise_set(per_subject: usize, seed: u64) -> TrialSet {
    let mut rng = Rng::new(seed);
    let (c, t) = (2usize, 16usize);
    let n = 9 * per_subject;
    let mut data = Vec::with_capacity(n * c * t);
    let mut y = Vec::with_capacity(n);
    let mut subject = Vec::with_capacity(n);
    for i in 0..n {
        let s = i % 9;
        let class = (i / 9) % 4;
        let noise = 0.2 + 0.1 * s as f64;
        y.push(class);
        subject.push(s);
        let freq = 1.0 + class as f64;
        for _ch in 0..c {
            let phase = rng.uniform(0.0, std::f64::consts::TAU);
            for ti in 0..t {
                let v = (std::f64::consts::TAU * freq * ti as f64 / t as f64 + phase).sin();
                data.push(v + noise * rng.normal());
            }
        }
    }
    TrialSet::new(
        Tensor::from_vec(&[n, c, t], data).unwrap(),
        y,
        subject,
        250.0,
    )
    .unwrap()
}

#[test]
fn subject_study_runs_each_slice_and_pooled() {
    let ts = per_subject_noise_set(36, 30);
    let cfg = TrainConfig {
        epochs: 6,
        batch_size: 8,
        lr: 1e-2,
        ..base_cfg()
    };
    let study = subject_study(&ts, &flat_spec(2), &cfg, &SubjectSplit::default()).unwrap();
    assert_eq!(study.per_subject.len(), 9);
    for (s, record) in &study.per_subject {
        assert!(*s < 9);
        // A slice drawn from one subject can never exceed its trial count.
        assert!(ts.filter_subject(*s).len() <= ts.len());
        assert!(record.test_accuracy >= 0.0 && record.test_accuracy <= 1.0);
    }
    let mut accs: Vec<f64> = study
        .per_subject
        .iter()
        .map(|(_, r)| r.test_accuracy)
        .collect();
    accs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = accs[accs.len() / 2];
    assert!(
        study.pooled.test_accuracy >= median,
        "pooled {} behind median {median}",
        study.pooled.test_accuracy
    );
}

// ---------------------------------------------------------------------------
// CSV emission
// ---------------------------------------------------------------------------

#[test]
fn csv_reports_have_documented_columns() {
    let ts = tiny_data(8, 15);
    let (tr, va, te) = split3(&ts, 5);
    let mut model = Model::init(&tiny_spec(), &mut Rng::new(2)).unwrap();
    let record = train(&mut model, &tr, &va, &te, &base_cfg()).unwrap();
    let dir = tempfile::tempdir().unwrap();

    let hist = dir.path().join("history.csv");
    write_history_csv(&record, &hist).unwrap();
    let text = std::fs::read_to_string(&hist).unwrap();
    assert!(text.starts_with("epoch,train_loss,train_acc,val_acc\n"));
    assert_eq!(text.lines().count(), 1 + record.train_loss.len());

    let summary = dir.path().join("summary.csv");
    write_summary_csv(&record, &summary).unwrap();
    let text = std::fs::read_to_string(&summary).unwrap();
    assert!(text.starts_with("best_epoch,best_val_accuracy,test_accuracy\n"));

    let rows = grid_search(&small_grid(), &tr, &va, &te, &grid_cfg(), 1).unwrap();
    let gridp = dir.path().join("grid.csv");
    write_grid_csv(&rows, &gridp).unwrap();
    let text = std::fs::read_to_string(&gridp).unwrap();
    assert!(text.contains("train_accuracy,val_accuracy,test_accuracy"));
    assert_eq!(text.lines().count(), 1 + rows.len());
}

#[test]
fn build_cnn_batch_defaults_compose_with_harness() {
    // Keep a real conv model in the loop to catch layout regressions.
    let ts = synth_trialset_with(6, 16, 250.0, 64, 0.3);
    let (tr, va, te) = split3(&ts, 8);
    let h = CnnHyper {
        filter_num: 3,
        filter_size: 8,
        pool_size: 2,
        batch_size: 6,
        lr: 1e-3,
    };
    let spec = build_cnn(&h, tr.channels(), tr.samples());
    let mut model = Model::init(&spec, &mut Rng::new(4)).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 6,
        ..base_cfg()
    };
    let record = train(&mut model, &tr, &va, &te, &cfg).unwrap();
    assert_eq!(record.train_loss.len(), 2);
}
