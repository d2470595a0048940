//! Experiment configuration files.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use groupcast::evaluation::ZMode;
use groupcast::exec::Execution;
use groupcast::model::{Model, ModelConfig, Variant};
use groupcast::synthdata::{ContextMode, Dynamics, SpeakingConfig};
use groupcast::training::TrainConfig;
use serde::{Deserialize, Serialize};

pub const RESOLVED_CONFIG: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub dataset: DatasetSpec,
    pub train: TrainSpec,
    #[serde(default)]
    pub eval: EvalSpec,
}

fn default_seed() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Glancing {
        mode: ContextMode,
    },
    Speaking {
        dynamics: Dynamics,
        #[serde(default = "default_groups")]
        groups: usize,
        #[serde(default = "default_eval_dynamics")]
        eval_dynamics: Dynamics,
        #[serde(default = "default_eval_groups")]
        eval_groups: usize,
        #[serde(default)]
        windows: SpeakingConfig,
    },
}

fn default_groups() -> usize {
    200
}
fn default_eval_groups() -> usize {
    40
}
fn default_eval_dynamics() -> Dynamics {
    Dynamics::Dominating
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    pub variant: String,
    pub steps: u64,
    #[serde(default = "default_meta_batch")]
    pub meta_batch: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default)]
    pub kl_anneal: bool,
    pub clip_norm: Option<f64>,
    #[serde(default = "default_log_every")]
    pub log_every: u64,
    #[serde(default)]
    pub execution: Execution,
}

fn default_meta_batch() -> usize {
    4
}
fn default_lr() -> f64 {
    1e-3
}
fn default_log_every() -> u64 {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSpec {
    pub z_mode: ZMode,
    /// Sweep grid for 1-dim latent models.
    pub sweep_lo: f64,
    pub sweep_hi: f64,
    pub sweep_points: usize,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self { z_mode: ZMode::Mean, sweep_lo: 0.25, sweep_hi: 1.75, sweep_points: 11 }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Self = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.variant()?;
        self.model_config()?;
        if self.train.meta_batch == 0 {
            bail!("train.meta_batch must be positive");
        }
        if let DatasetSpec::Speaking { groups, eval_groups, .. } = &self.dataset {
            if *groups == 0 || *eval_groups == 0 {
                bail!("speaking datasets need at least one group");
            }
        }
        Ok(())
    }

    pub fn variant(&self) -> Result<Variant> {
        Ok(self.train.variant.parse::<Variant>()?)
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let v = self.variant()?;
        let mc = match &self.dataset {
            DatasetSpec::Glancing { .. } => ModelConfig::glancing(v),
            DatasetSpec::Speaking { windows, .. } => {
                ModelConfig::speaking(v, windows.n_people, windows.obs_len, windows.fut_len)
            }
        };
        Model::new(mc.clone(), 0)?;
        Ok(mc)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let mut tc = TrainConfig::new(self.model_config()?, self.seed, self.train.steps);
        tc.meta_batch = self.train.meta_batch;
        tc.lr = self.train.lr;
        tc.kl_anneal = self.train.kl_anneal;
        tc.clip_norm = self.train.clip_norm;
        tc.log_every = self.train.log_every;
        tc.execution = self.train.execution;
        Ok(tc)
    }

    /// Seed of the evaluation split; kept apart from the training seed.
    pub fn eval_seed(&self) -> u64 {
        self.seed.wrapping_add(1_000_003)
    }
}
