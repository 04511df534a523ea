//! JSON run configuration: paths, model family, preprocessing, training,
//! and optional grid/synth blocks. Flags override config keys after parsing.

use eegdl::dsp::MeanAxis;
use eegdl::error::{Error, Result};
use eegdl::model::{CnnGrid, CnnHyper, MixedSpec};
use eegdl::optim::OptimizerKind;
use eegdl::train::{TrainConfig, Validation};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Cnn,
    Lstm,
    Gru,
    Mixed,
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Family::Cnn => "cnn",
            Family::Lstm => "lstm",
            Family::Gru => "gru",
            Family::Mixed => "mixed",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct DataPaths {
    pub trials: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub subjects: Option<PathBuf>,
    pub sample_rate_hz: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeanMode {
    Examples,
    Time,
    None,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessBlock {
    /// Target length for the spectral downsampler (recurrent families).
    pub downsample: Option<usize>,
    pub cutoff_hz: f64,
    /// Defaults to the family convention when absent.
    pub mean_subtract: Option<MeanMode>,
}

impl Default for PreprocessBlock {
    fn default() -> Self {
        PreprocessBlock {
            downsample: None,
            cutoff_hz: 5.0,
            mean_subtract: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitBlock {
    pub val_size: usize,
    pub test_size: usize,
}

impl Default for SplitBlock {
    fn default() -> Self {
        SplitBlock {
            val_size: 100,
            test_size: 100,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainBlock {
    pub epochs: Option<usize>,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: Option<OptimizerKind>,
    pub validation: Validation,
    pub early_stop: bool,
    pub seed: u64,
}

impl Default for TrainBlock {
    fn default() -> Self {
        TrainBlock {
            epochs: None,
            batch_size: 50,
            lr: 1e-3,
            optimizer: None,
            validation: Validation::Fixed,
            early_stop: true,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthBlock {
    pub n_per_class: usize,
}

impl Default for SynthBlock {
    fn default() -> Self {
        SynthBlock { n_per_class: 100 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Svg,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CliConfig {
    pub family: Family,
    pub data: DataPaths,
    pub out_dir: PathBuf,
    pub preprocess: PreprocessBlock,
    pub split: SplitBlock,
    pub train: TrainBlock,
    pub cnn: Option<CnnHyper>,
    pub mixed: Option<MixedSpec>,
    pub grid: Option<CnnGrid>,
    pub synth: SynthBlock,
    pub report: Vec<ReportFormat>,
}

impl Default for CliConfig {
    fn default() -> Self {
        CliConfig {
            family: Family::Cnn,
            data: DataPaths::default(),
            out_dir: PathBuf::from("out"),
            preprocess: PreprocessBlock::default(),
            split: SplitBlock::default(),
            train: TrainBlock::default(),
            cnn: None,
            mixed: None,
            grid: None,
            synth: SynthBlock::default(),
            report: vec![ReportFormat::Csv],
        }
    }
}

impl CliConfig {
    pub fn load(path: &Path) -> Result<CliConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: CliConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Family/preprocessing consistency; rejected before any compute.
    pub fn validate(&self) -> Result<()> {
        match self.family {
            Family::Cnn | Family::Mixed => {
                if let Some(m) = self.preprocess.downsample {
                    return Err(Error::config(format!(
                        "family '{}' forbids preprocess.downsample, but it is set to {m}",
                        self.family
                    )));
                }
            }
            Family::Lstm | Family::Gru => match self.preprocess.downsample {
                None => {
                    return Err(Error::config(format!(
                        "family '{}' requires preprocess.downsample in 25..=800, but it is unset",
                        self.family
                    )))
                }
                Some(m) if !(25..=800).contains(&m) => {
                    return Err(Error::config(format!(
                        "family '{}' requires preprocess.downsample in 25..=800, got {m}",
                        self.family
                    )))
                }
                Some(_) => {}
            },
        }
        if let Some(mixed) = &self.mixed {
            if mixed.units.len() != mixed.lstm_layers {
                return Err(Error::config(format!(
                    "mixed.lstm_layers is {} but mixed.units lists {} sizes",
                    mixed.lstm_layers,
                    mixed.units.len()
                )));
            }
        }
        Ok(())
    }

    /// Effective mean-subtraction convention for the family.
    pub fn mean_mode(&self) -> Option<MeanAxis> {
        let mode = self.preprocess.mean_subtract.unwrap_or(match self.family {
            Family::Cnn => MeanMode::Examples,
            Family::Mixed => MeanMode::Time,
            Family::Lstm | Family::Gru => MeanMode::None,
        });
        match mode {
            MeanMode::Examples => Some(MeanAxis::Examples),
            MeanMode::Time => Some(MeanAxis::Time),
            MeanMode::None => None,
        }
    }

    /// Epoch budget, defaulting per family.
    pub fn epochs(&self) -> usize {
        self.train.epochs.unwrap_or(match self.family {
            Family::Cnn | Family::Mixed => 100,
            Family::Lstm | Family::Gru => 150,
        })
    }

    /// Optimizer, defaulting per family convention.
    pub fn optimizer(&self) -> OptimizerKind {
        self.train.optimizer.unwrap_or(match self.family {
            Family::Lstm | Family::Gru => OptimizerKind::Rmsprop,
            _ => OptimizerKind::Adam,
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs(),
            batch_size: self.train.batch_size,
            lr: self.train.lr,
            optimizer: self.optimizer(),
            validation: self.train.validation,
            early_stop: self.train.early_stop,
            seed: self.train.seed,
            trace_partitions: false,
        }
    }
}
