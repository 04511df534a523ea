//! Labeled trial collections: ingestion from NPY pairs, NaN-trial removal,
//! seeded splits, and a synthetic separable dataset for end-to-end tests.

use crate::error::{Error, Result};
use crate::npy;
use crate::rng::Rng;
use crate::tensor::Tensor;
use std::f64::consts::TAU;
use std::path::Path;

pub const NUM_CLASSES: usize = 4;
pub const NUM_SUBJECTS: usize = 9;
pub const NUM_CHANNELS: usize = 22;
pub const DEFAULT_SAMPLE_RATE_HZ: f64 = 250.0;

/// A labeled collection of trials shaped (N, C, T).
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSet {
    pub x: Tensor,
    pub y: Vec<usize>,
    pub subject: Vec<usize>,
    pub sample_rate_hz: f64,
}

impl TrialSet {
    pub fn new(x: Tensor, y: Vec<usize>, subject: Vec<usize>, sample_rate_hz: f64) -> Result<Self> {
        if x.rank() != 3 {
            return Err(Error::config(format!(
                "trials must be rank 3 (N, C, T), got shape {:?}",
                x.shape()
            )));
        }
        let n = x.shape()[0];
        if y.len() != n || subject.len() != n {
            return Err(Error::config(format!(
                "labels ({}) and subjects ({}) must both match trial count {}",
                y.len(),
                subject.len(),
                n
            )));
        }
        if let Some(bad) = y.iter().find(|&&l| l >= NUM_CLASSES) {
            return Err(Error::config(format!(
                "label {bad} outside 0..{NUM_CLASSES}"
            )));
        }
        if let Some(bad) = subject.iter().find(|&&s| s >= NUM_SUBJECTS) {
            return Err(Error::config(format!(
                "subject {bad} outside 0..{NUM_SUBJECTS}"
            )));
        }
        Ok(TrialSet {
            x,
            y,
            subject,
            sample_rate_hz,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.x.shape()[1]
    }

    pub fn samples(&self) -> usize {
        self.x.shape()[2]
    }

    /// New TrialSet holding the trials at `indices`, in that order.
    pub fn gather(&self, indices: &[usize]) -> TrialSet {
        let (c, t) = (self.channels(), self.samples());
        let stride = c * t;
        let mut data = Vec::with_capacity(indices.len() * stride);
        let mut y = Vec::with_capacity(indices.len());
        let mut subject = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(&self.x.data()[i * stride..(i + 1) * stride]);
            y.push(self.y[i]);
            subject.push(self.subject[i]);
        }
        TrialSet {
            x: Tensor::from_vec(&[indices.len(), c, t], data).expect("gather shape"),
            y,
            subject,
            sample_rate_hz: self.sample_rate_hz,
        }
    }

    /// Trials belonging to one subject, order preserved.
    pub fn filter_subject(&self, subject: usize) -> TrialSet {
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| self.subject[i] == subject)
            .collect();
        self.gather(&idx)
    }

    /// Batch tensor [B, C, T] plus labels for the trials at `indices`.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let set = self.gather(indices);
        (set.x, set.y)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SplitSpec {
    pub val_size: usize,
    pub test_size: usize,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            val_size: 100,
            test_size: 100,
            seed: 0,
        }
    }
}

/// Load a trial set from a trials file plus a labels file (and optionally a
/// subjects file).
///
/// Labels and subjects travel as rank-1 float arrays paired with the trials
/// by order; values must be exact small integers in range. A leading-
/// dimension mismatch between the files is a hard error.
pub fn load_trialset(
    trials_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    subjects_path: Option<&Path>,
    sample_rate_hz: f64,
) -> Result<TrialSet> {
    let x = npy::read_npy(trials_path)?;
    if x.rank() != 3 {
        return Err(Error::config(format!(
            "trials file must be rank 3, got shape {:?}",
            x.shape()
        )));
    }
    let n = x.shape()[0];
    let y = read_index_file(labels_path.as_ref(), n, "labels", NUM_CLASSES)?;
    let subject = match subjects_path {
        Some(p) => read_index_file(p, n, "subjects", NUM_SUBJECTS)?,
        None => vec![0; n],
    };
    TrialSet::new(x, y, subject, sample_rate_hz)
}

fn read_index_file(path: &Path, n: usize, what: &str, bound: usize) -> Result<Vec<usize>> {
    let t = npy::read_npy(path)?;
    if t.rank() != 1 {
        return Err(Error::config(format!(
            "{what} file must be rank 1, got shape {:?}",
            t.shape()
        )));
    }
    if t.len() != n {
        return Err(Error::config(format!(
            "{what} file has {} entries but trials file has leading dimension {}",
            t.len(),
            n
        )));
    }
    t.data()
        .iter()
        .map(|&v| {
            if v.fract() != 0.0 || v < 0.0 || v >= bound as f64 {
                Err(Error::config(format!(
                    "{what} value {v} is not an integer in 0..{bound}"
                )))
            } else {
                Ok(v as usize)
            }
        })
        .collect()
}

/// Drop every trial containing at least one NaN; survivors keep their order.
pub fn remove_nan_trials(ts: &TrialSet) -> TrialSet {
    let stride = ts.channels() * ts.samples();
    let keep: Vec<usize> = (0..ts.len())
        .filter(|&i| {
            ts.x.data()[i * stride..(i + 1) * stride]
                .iter()
                .all(|v| !v.is_nan())
        })
        .collect();
    ts.gather(&keep)
}

/// Seeded shuffle followed by a train/val/test partition.
///
/// The shuffled order is consumed as [train | val | test]; the three parts
/// are disjoint and cover the input.
pub fn split(ts: &TrialSet, spec: &SplitSpec) -> Result<(TrialSet, TrialSet, TrialSet)> {
    let n = ts.len();
    if spec.val_size + spec.test_size > n {
        return Err(Error::config(format!(
            "val_size {} + test_size {} exceeds trial count {}",
            spec.val_size, spec.test_size, n
        )));
    }
    let perm = Rng::new(spec.seed).permutation(n);
    let train_n = n - spec.val_size - spec.test_size;
    let train = ts.gather(&perm[..train_n]);
    let val = ts.gather(&perm[train_n..train_n + spec.val_size]);
    let test = ts.gather(&perm[train_n + spec.val_size..]);
    Ok((train, val, test))
}

/// Synthetic separable dataset shaped like the production recordings.
///
/// Class k carries a unit-amplitude sinusoid at (6 + 3k) Hz whose phase is
/// drawn once per (class, channel) — a fixed spatial phase template, the way
/// a phase-locked response would look — plus Gaussian noise with sigma 0.5
/// drawn fresh per trial. Classes and subjects are both assigned round-robin
/// so every subject slice stays balanced. 4 * n_per_class trials of shape
/// (22, 1000) at 250 Hz.
pub fn synth_trialset(n_per_class: usize, seed: u64) -> TrialSet {
    synth_trialset_with(n_per_class, seed, DEFAULT_SAMPLE_RATE_HZ, 1000, 0.5)
}

/// Generator behind [`synth_trialset`] with the trial length and noise level
/// exposed for scaled-down tests.
pub fn synth_trialset_with(
    n_per_class: usize,
    seed: u64,
    sample_rate_hz: f64,
    samples: usize,
    noise_sd: f64,
) -> TrialSet {
    let n = NUM_CLASSES * n_per_class;
    let mut rng = Rng::new(seed);
    let phases: Vec<f64> = (0..NUM_CLASSES * NUM_CHANNELS)
        .map(|_| rng.uniform(0.0, TAU))
        .collect();
    let mut data = Vec::with_capacity(n * NUM_CHANNELS * samples);
    let mut y = Vec::with_capacity(n);
    let mut subject = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % NUM_CLASSES;
        let freq = 6.0 + 3.0 * class as f64;
        y.push(class);
        subject.push(i % NUM_SUBJECTS);
        for c in 0..NUM_CHANNELS {
            let phase = phases[class * NUM_CHANNELS + c];
            for t in 0..samples {
                let time = t as f64 / sample_rate_hz;
                data.push((TAU * freq * time + phase).sin() + noise_sd * rng.normal());
            }
        }
    }
    TrialSet {
        x: Tensor::from_vec(&[n, NUM_CHANNELS, samples], data).expect("synth shape"),
        y,
        subject,
        sample_rate_hz,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_set(n: usize) -> TrialSet {
        let mut rng = Rng::new(8);
        let x = Tensor::with_normal(&[n, 2, 5], 0.0, 1.0, &mut rng);
        let y = (0..n).map(|i| i % NUM_CLASSES).collect();
        let subject = (0..n).map(|i| i % NUM_SUBJECTS).collect();
        TrialSet::new(x, y, subject, 250.0).unwrap()
    }

    #[test]
    fn remove_nan_keeps_clean_set_intact() {
        let ts = tiny_set(5);
        assert_eq!(remove_nan_trials(&ts), ts);
    }

    #[test]
    fn remove_nan_drops_tainted_trials_in_lockstep() {
        let mut ts = tiny_set(6);
        let stride = ts.channels() * ts.samples();
        ts.x.data_mut()[stride + 3] = f64::NAN; // trial 1
        ts.x.data_mut()[4 * stride] = f64::NAN; // trial 4
        let clean = remove_nan_trials(&ts);
        assert_eq!(clean.len(), 4);
        let expect: Vec<usize> = [0usize, 2, 3, 5].iter().map(|&i| ts.y[i]).collect();
        assert_eq!(clean.y, expect);
        let expect: Vec<usize> = [0usize, 2, 3, 5].iter().map(|&i| ts.subject[i]).collect();
        assert_eq!(clean.subject, expect);
        assert!(!clean.x.has_nan());
    }

    #[test]
    fn remove_nan_can_empty_the_set() {
        let mut ts = tiny_set(3);
        let stride = ts.channels() * ts.samples();
        for i in 0..3 {
            ts.x.data_mut()[i * stride] = f64::NAN;
        }
        assert!(remove_nan_trials(&ts).is_empty());
    }

    #[test]
    fn split_produces_requested_sizes() {
        let ts = tiny_set(2558);
        let (train, val, test) = split(&ts, &SplitSpec::default()).unwrap();
        assert_eq!((train.len(), val.len(), test.len()), (2358, 100, 100));
    }

    #[test]
    fn split_zero_sizes_returns_shuffled_whole() {
        let ts = tiny_set(12);
        let spec = SplitSpec {
            val_size: 0,
            test_size: 0,
            seed: 3,
        };
        let (train, val, test) = split(&ts, &spec).unwrap();
        assert_eq!(train.len(), 12);
        assert!(val.is_empty() && test.is_empty());
        let perm = Rng::new(3).permutation(12);
        assert_eq!(train, ts.gather(&perm));
    }

    #[test]
    fn split_is_deterministic_per_seed() {
        let ts = tiny_set(40);
        let spec = SplitSpec {
            val_size: 8,
            test_size: 8,
            seed: 99,
        };
        let a = split(&ts, &spec).unwrap();
        let b = split(&ts, &spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn split_rejects_oversized_request() {
        let ts = tiny_set(10);
        let spec = SplitSpec {
            val_size: 6,
            test_size: 6,
            seed: 0,
        };
        assert!(split(&ts, &spec).is_err());
    }

    #[test]
    fn split_parts_reassemble_to_input() {
        let ts = tiny_set(25);
        let spec = SplitSpec {
            val_size: 5,
            test_size: 7,
            seed: 17,
        };
        let (train, val, test) = split(&ts, &spec).unwrap();
        // Multiset equality over (trial bytes, label, subject).
        let mut seen: Vec<(Vec<u64>, usize, usize)> = Vec::new();
        for part in [&train, &val, &test] {
            let stride = part.channels() * part.samples();
            for i in 0..part.len() {
                let bits = part.x.data()[i * stride..(i + 1) * stride]
                    .iter()
                    .map(|v| v.to_bits())
                    .collect();
                seen.push((bits, part.y[i], part.subject[i]));
            }
        }
        let mut expect: Vec<(Vec<u64>, usize, usize)> = (0..ts.len())
            .map(|i| {
                let stride = ts.channels() * ts.samples();
                (
                    ts.x.data()[i * stride..(i + 1) * stride]
                        .iter()
                        .map(|v| v.to_bits())
                        .collect(),
                    ts.y[i],
                    ts.subject[i],
                )
            })
            .collect();
        seen.sort();
        expect.sort();
        assert_eq!(seen, expect);
    }

    #[test]
    fn synth_basic_layout() {
        let ts = synth_trialset(1, 42);
        assert_eq!(ts.len(), 4);
        assert_eq!(ts.y, vec![0, 1, 2, 3]);
        assert_eq!(ts.x.shape(), &[4, NUM_CHANNELS, 1000]);
        assert_eq!(ts.sample_rate_hz, 250.0);
    }

    #[test]
    fn synth_class_frequencies_exactly_balanced() {
        let ts = synth_trialset(7, 1);
        let mut counts = [0usize; NUM_CLASSES];
        for &l in &ts.y {
            counts[l] += 1;
        }
        assert_eq!(counts, [7; NUM_CLASSES]);
    }

    #[test]
    fn synth_same_seed_bit_identical() {
        assert_eq!(synth_trialset(2, 5), synth_trialset(2, 5));
    }

    #[test]
    fn labels_file_must_match_leading_dim() {
        let dir = tempfile::tempdir().unwrap();
        let xp = dir.path().join("x.npy");
        let yp = dir.path().join("y.npy");
        npy::write_npy(&Tensor::zeros(&[3, 2, 4]), &xp).unwrap();
        npy::write_npy(&Tensor::zeros(&[2]), &yp).unwrap();
        let err = load_trialset(&xp, &yp, None, 250.0).unwrap_err();
        assert!(err.to_string().contains("leading dimension"), "{err}");
    }

    #[test]
    fn labels_must_be_exact_integers_in_range() {
        let dir = tempfile::tempdir().unwrap();
        let xp = dir.path().join("x.npy");
        let yp = dir.path().join("y.npy");
        npy::write_npy(&Tensor::zeros(&[2, 2, 4]), &xp).unwrap();
        npy::write_npy(&Tensor::from_vec(&[2], vec![1.5, 0.0]).unwrap(), &yp).unwrap();
        assert!(load_trialset(&xp, &yp, None, 250.0).is_err());

        npy::write_npy(&Tensor::from_vec(&[2], vec![4.0, 0.0]).unwrap(), &yp).unwrap();
        assert!(load_trialset(&xp, &yp, None, 250.0).is_err());

        npy::write_npy(&Tensor::from_vec(&[2], vec![3.0, 0.0]).unwrap(), &yp).unwrap();
        let ts = load_trialset(&xp, &yp, None, 250.0).unwrap();
        assert_eq!(ts.y, vec![3, 0]);
    }
}
