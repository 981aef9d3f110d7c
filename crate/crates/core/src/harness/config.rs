use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::monarch::{apply_flops, lora_param_count, param_count, MonarchConfig};

/// Planted target structure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskSpec {
    /// `W̄ = W + M*`, `M*` a random Monarch matrix.
    PlantedMonarch { blocks: usize, block_rank: usize },
    /// `W̄ = W + U Vᵀ` of the given rank.
    PlantedLowrank { rank: usize },
    /// Classification through a frozen `tanh` front layer; labels come from
    /// the shifted head `W̄ = W + M*`.
    MlpShift { blocks: usize, block_rank: usize },
}

impl TaskSpec {
    pub fn name(&self) -> &'static str {
        match self {
            TaskSpec::PlantedMonarch { .. } => "planted_monarch",
            TaskSpec::PlantedLowrank { .. } => "planted_lowrank",
            TaskSpec::MlpShift { .. } => "mlp_shift",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AdapterSpec {
    More { blocks: usize, block_rank: usize },
    Lora { rank: usize },
}

impl AdapterSpec {
    pub fn name(&self) -> &'static str {
        match self {
            AdapterSpec::More { .. } => "more",
            AdapterSpec::Lora { .. } => "lora",
        }
    }

    /// `(blocks, block_rank)`; a LoRA adapter reports as one block.
    pub fn shape(&self) -> (usize, usize) {
        match *self {
            AdapterSpec::More { blocks, block_rank } => (blocks, block_rank),
            AdapterSpec::Lora { rank } => (1, rank),
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        match *self {
            AdapterSpec::More { blocks, block_rank } => MonarchConfig::new(n, blocks, block_rank).map(|_| ()),
            AdapterSpec::Lora { rank } if rank == 0 || rank > n => {
                Err(Error::Config(format!("LoRA rank {rank} invalid for n = {n}")))
            }
            AdapterSpec::Lora { .. } => Ok(()),
        }
    }

    pub fn param_count(&self, n: usize) -> usize {
        match *self {
            AdapterSpec::More { blocks, block_rank } => param_count(&MonarchConfig { n, blocks, block_rank }),
            AdapterSpec::Lora { rank } => lora_param_count(n, rank),
        }
    }

    /// Forward plus the two backward products for one minibatch.
    pub fn flops_per_step(&self, n: usize, batch: usize) -> usize {
        let (blocks, block_rank) = self.shape();
        3 * apply_flops(&MonarchConfig { n, blocks, block_rank }, batch)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default = "adam_kind")]
    pub kind: String,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub cosine_decay: bool,
}

fn adam_kind() -> String {
    "adam".into()
}
fn default_lr() -> f64 {
    1e-2
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: adam_kind(),
            lr: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            cosine_decay: false,
        }
    }
}

fn format_version() -> u32 {
    1
}
fn default_seed() -> u64 {
    crate::DEFAULT_SEED
}

/// One training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "format_version")]
    pub format_version: u32,
    pub task: TaskSpec,
    pub n: usize,
    pub adapter: AdapterSpec,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    pub steps: usize,
    pub batch: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub samples: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.format_version != 1 {
            return Err(Error::Config(format!(
                "unsupported format_version {}",
                self.format_version
            )));
        }
        for (name, v) in [
            ("n", self.n),
            ("steps", self.steps),
            ("batch", self.batch),
            ("samples", self.samples),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.optimizer.kind != "adam" {
            return Err(Error::Config(format!("unknown optimizer {:?}", self.optimizer.kind)));
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0 && (0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2) && o.eps > 0.0) {
            return Err(Error::Config("optimizer hyperparameters out of range".into()));
        }
        self.adapter.validate(self.n)?;
        match self.task {
            TaskSpec::PlantedMonarch { blocks, block_rank } | TaskSpec::MlpShift { blocks, block_rank } => {
                MonarchConfig::new(self.n, blocks, block_rank)?;
            }
            TaskSpec::PlantedLowrank { rank } if rank > self.n => {
                return Err(Error::Config(format!("planted rank {rank} exceeds n = {}", self.n)));
            }
            TaskSpec::PlantedLowrank { .. } => {}
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
