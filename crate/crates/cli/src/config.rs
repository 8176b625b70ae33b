//! Run configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use terminator_core::data::{self, Dataset, Limits, SyntheticKind, PMNIST_SEED};
use terminator_core::model::{Mode, ModelConfig};
use terminator_core::train::TrainConfig;

use crate::error::CliError;

pub const DATA_DIR_ENV: &str = "TERMINATOR_DATA_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Mnist,
    /// MNIST as 784-step sequences.
    Smnist,
    /// sMNIST with a fixed pixel permutation.
    Pmnist,
    Stripes,
    Blobs,
}

impl DataSource {
    pub fn parse(name: &str) -> Option<Self> {
        serde_json::from_value(serde_json::Value::String(name.to_string())).ok()
    }

    pub fn num_classes(self) -> usize {
        match self {
            DataSource::Stripes => SyntheticKind::Stripes.num_classes(),
            DataSource::Blobs => SyntheticKind::Blobs.num_classes(),
            _ => 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSource,
    /// Keep the first `n` training samples (real data) or generate `n` (synthetic).
    pub train_size: Option<usize>,
    pub test_size: Option<usize>,
    /// Dataset root; falls back to `$TERMINATOR_DATA_DIR`, then `./data`.
    /// MNIST files are read from `<root>/mnist`.
    pub dir: Option<PathBuf>,
    pub permutation_seed: u64,
    /// Seed for synthetic data; the test split uses `seed + 1`.
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Stripes,
            train_size: None,
            test_size: None,
            dir: None,
            permutation_seed: PMNIST_SEED,
            seed: 0,
        }
    }
}

impl DataConfig {
    pub fn root(&self) -> PathBuf {
        self.dir
            .clone()
            .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("data"))
    }

    /// Train and test splits, both standardized with train statistics.
    pub fn load(&self) -> Result<(Dataset, Dataset), CliError> {
        let (train, test) = match self.source {
            DataSource::Mnist | DataSource::Smnist | DataSource::Pmnist => {
                let limits = Limits { train: self.train_size, test: self.test_size };
                let (tr, te) = data::load_mnist(self.root().join("mnist"), limits).map_err(CliError::data)?;
                match self.source {
                    DataSource::Mnist => (tr, te),
                    src => {
                        let seed = (src == DataSource::Pmnist).then_some(self.permutation_seed);
                        (
                            data::to_sequential(&tr, seed).map_err(CliError::data)?,
                            data::to_sequential(&te, seed).map_err(CliError::data)?,
                        )
                    }
                }
            }
            DataSource::Stripes | DataSource::Blobs => {
                let kind = if self.source == DataSource::Stripes { SyntheticKind::Stripes } else { SyntheticKind::Blobs };
                let mut tr = data::synthetic(kind, self.train_size.unwrap_or(200), self.seed).map_err(CliError::data)?;
                let mut te =
                    data::synthetic(kind, self.test_size.unwrap_or(100), self.seed.wrapping_add(1)).map_err(CliError::data)?;
                te.split = data::Split::Test;
                data::standardize_pair(&mut tr, &mut te);
                (tr, te)
            }
        };
        Ok((train, test))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Named model preset; ignored when `model` is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub data: DataConfig,
    /// Seeds parameter initialization.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| {
            CliError::Usage(format!("{origin}:{}:{}: {e}", e.line(), e.column()))
        })?;
        cfg.resolve().map_err(|e| CliError::Usage(format!("{origin}: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Expands the preset into an explicit model and checks everything.
    pub fn resolve(mut self) -> Result<Self, String> {
        if self.model.is_none() {
            let name = self.preset.clone().ok_or("either `preset` or `model` is required")?;
            let m = ModelConfig::preset(&name)
                .ok_or_else(|| format!("unknown preset `{name}` (known: {})", ModelConfig::PRESETS.join(", ")))?;
            self.model = Some(m);
        }
        self.preset = None;
        let model = self.model.as_ref().expect("set above");
        model.validate().map_err(|e| e.to_string())?;
        self.train.validate().map_err(|e| e.to_string())?;
        Ok(self)
    }

    /// Checks that the configured dataset fits the model.
    pub fn check_data(&self) -> Result<(), String> {
        let model = self.model();
        let classes = self.data.source.num_classes();
        if model.num_classes != classes {
            return Err(format!("model has {} classes but {:?} data has {classes}", model.num_classes, self.data.source));
        }
        let sequential = matches!(self.data.source, DataSource::Smnist | DataSource::Pmnist);
        if sequential != (model.mode == Mode::OneD) {
            return Err(format!("{:?} data does not fit a {:?} model", self.data.source, model.mode));
        }
        Ok(())
    }

    pub fn model(&self) -> &ModelConfig {
        self.model.as_ref().expect("resolved config has a model")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
