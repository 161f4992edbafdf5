//! Run configuration: a single TOML document with CLI flag overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{Dims, ModelConfig};
use crate::sampler::Strategy;
use crate::training::{EvalMode, SyntheticConfig, Task, TrainSettings};

fn default_strategy() -> Strategy {
    Strategy::Tns
}
fn default_budget() -> usize {
    10
}
fn default_layers() -> usize {
    1
}
fn default_d_v() -> usize {
    8
}
fn default_d_t() -> usize {
    16
}
fn default_d_h() -> usize {
    100
}
fn default_sigma_init() -> f64 {
    1e-5
}
fn default_task() -> Task {
    Task::EdgePrediction
}
fn default_mode() -> EvalMode {
    EvalMode::Transductive
}
fn default_epochs() -> usize {
    5
}
fn default_batch_size() -> usize {
    200
}
fn default_lr() -> f64 {
    1e-4
}
fn default_alpha() -> f64 {
    0.1
}

/// One experiment's full configuration. Defaults follow the hyper-
/// parameters used throughout: S = 10, alpha = 0.1, sigma = 1e-5.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunConfig {
    /// CSV dataset path; mutually exclusive with `synthetic`.
    pub dataset: Option<PathBuf>,
    /// Generate the dataset in-process instead of loading one.
    pub synthetic: Option<SyntheticConfig>,

    #[serde(default = "default_strategy")]
    pub strategy: Strategy,
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default = "default_layers")]
    pub layers: usize,
    #[serde(default = "default_d_v")]
    pub d_v: usize,
    #[serde(default = "default_d_t")]
    pub d_t: usize,
    #[serde(default = "default_d_h")]
    pub d_h: usize,
    #[serde(default = "default_d_h")]
    pub d_hr: usize,
    #[serde(default = "default_d_h")]
    pub d_o: usize,
    #[serde(default = "default_sigma_init")]
    pub sigma_init: f64,

    #[serde(default = "default_task")]
    pub task: Task,
    #[serde(default = "default_mode")]
    pub mode: EvalMode,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub seed: u64,

    /// Explicit output directory; otherwise runs land under the output
    /// root in a `<confighash>-<timestamp>` directory.
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: None,
            synthetic: None,
            strategy: default_strategy(),
            budget: default_budget(),
            layers: default_layers(),
            d_v: default_d_v(),
            d_t: default_d_t(),
            d_h: default_d_h(),
            d_hr: default_d_h(),
            d_o: default_d_h(),
            sigma_init: default_sigma_init(),
            task: default_task(),
            mode: default_mode(),
            epochs: default_epochs(),
            batch_size: default_batch_size(),
            lr: default_lr(),
            alpha: default_alpha(),
            seed: 0,
            out_dir: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(&path)?;
        let cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{e}")))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("{e}")))
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.dataset, &self.synthetic) {
            (Some(_), Some(_)) => {
                return Err(Error::Config("set either `dataset` or `synthetic`, not both".into()))
            }
            (None, None) => {
                return Err(Error::Config("a `dataset` path or a `synthetic` block is required".into()))
            }
            _ => {}
        }
        if let Some(s) = &self.synthetic {
            s.validate()?;
        }
        self.strategy.validate()?;
        self.model_config(0).validate()?;
        self.train_settings().validate()
    }

    /// Model view of this config; `d_e` comes from the dataset.
    pub fn model_config(&self, d_e: usize) -> ModelConfig {
        ModelConfig {
            layers: self.layers,
            budget: self.budget,
            strategy: self.strategy,
            dims: Dims {
                d_v: self.d_v,
                d_e,
                d_t: self.d_t,
                d_h: self.d_h,
                d_hr: self.d_hr,
                d_o: self.d_o,
            },
            sigma_init: self.sigma_init,
        }
    }

    pub fn train_settings(&self) -> TrainSettings {
        TrainSettings {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            alpha: self.alpha,
            seed: self.seed,
            task: self.task,
            mode: self.mode,
        }
    }

    /// Stable short hash of the resolved configuration, used for run
    /// directory provenance.
    pub fn hash(&self) -> Result<String> {
        let canonical = self.to_toml()?;
        let digest = Sha256::digest(canonical.as_bytes());
        Ok(digest.iter().take(6).map(|b| format!("{b:02x}")).collect())
    }
}

/// Output root for run directories: `TNS_OUT_ROOT` env var or `./runs`.
pub fn output_root() -> PathBuf {
    std::env::var_os("TNS_OUT_ROOT").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
}
