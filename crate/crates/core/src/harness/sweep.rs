use serde::{Deserialize, Serialize};

use super::{train, AdapterSpec, RunRecord, TrainConfig};
use crate::error::{Error, Result};
use crate::par::{self, Exec};

/// Grid over Monarch `(blocks, block_rank)` pairs plus LoRA ranks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    #[serde(default)]
    pub blocks: Vec<usize>,
    #[serde(default)]
    pub block_ranks: Vec<usize>,
    #[serde(default)]
    pub lora_ranks: Vec<usize>,
    /// Extra Monarch points with square blocks: `block_rank = n / blocks`.
    #[serde(default)]
    pub square_blocks: Vec<usize>,
}

impl SweepGrid {
    /// Monarch points in `(blocks, block_rank)` order, then square-block
    /// points, then LoRA points.
    pub fn points(&self, n: usize) -> Vec<AdapterSpec> {
        let mut out = Vec::new();
        for &blocks in &self.blocks {
            for &block_rank in &self.block_ranks {
                out.push(AdapterSpec::More { blocks, block_rank });
            }
        }
        for &blocks in &self.square_blocks {
            let block_rank = n.checked_div(blocks).unwrap_or(0);
            out.push(AdapterSpec::More { blocks, block_rank });
        }
        out.extend(self.lora_ranks.iter().map(|&rank| AdapterSpec::Lora { rank }));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "one")]
    pub format_version: u32,
    /// Shared task, optimizer and schedule; its `adapter` is replaced per point.
    pub base: TrainConfig,
    pub grid: SweepGrid,
}

fn one() -> u32 {
    1
}

impl SweepConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        if cfg.format_version != 1 {
            return Err(Error::Config(format!(
                "unsupported format_version {}",
                cfg.format_version
            )));
        }
        cfg.base.validate()?;
        Ok(cfg)
    }
}

/// Outcome for one grid point, in grid order.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepEntry {
    pub index: usize,
    pub adapter: AdapterSpec,
    pub outcome: std::result::Result<RunRecord, String>,
}

/// Runs every grid point; invalid points are skipped with the reason.
pub fn sweep(config: &SweepConfig) -> Vec<SweepEntry> {
    sweep_with(Exec::available(), config)
}

pub fn sweep_with(exec: Exec, config: &SweepConfig) -> Vec<SweepEntry> {
    let points = config.grid.points(config.base.n);
    par::map_indexed(exec, points.len(), |index| {
        let adapter = points[index];
        let run = TrainConfig {
            adapter,
            ..config.base.clone()
        };
        let outcome = match run.validate() {
            Err(e) => Err(format!("skipped: {e}")),
            Ok(()) => train(&run).map_err(|e| e.to_string()),
        };
        SweepEntry {
            index,
            adapter,
            outcome,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{OptimizerConfig, TaskSpec};

    fn base() -> TrainConfig {
        TrainConfig {
            format_version: 1,
            task: TaskSpec::PlantedMonarch {
                blocks: 2,
                block_rank: 2,
            },
            n: 16,
            adapter: AdapterSpec::Lora { rank: 1 },
            optimizer: OptimizerConfig::default(),
            steps: 40,
            batch: 16,
            seed: 3,
            samples: 64,
        }
    }

    #[test]
    fn grid_order_and_skips() {
        let cfg = SweepConfig {
            format_version: 1,
            base: base(),
            grid: SweepGrid {
                blocks: vec![1, 3, 4],
                block_ranks: vec![2],
                lora_ranks: vec![2],
                square_blocks: vec![2],
            },
        };
        let out = sweep(&cfg);
        assert_eq!(out.len(), 5);
        assert!(out.iter().enumerate().all(|(i, e)| e.index == i));
        assert!(out[1].outcome.as_ref().unwrap_err().contains("does not divide"));
        assert!(out[0].outcome.is_ok() && out[2].outcome.is_ok());
        assert_eq!(
            out[3].adapter,
            AdapterSpec::More {
                blocks: 2,
                block_rank: 8
            }
        );
        assert_eq!(out[4].outcome.as_ref().unwrap().adapter, "lora");
    }

    #[test]
    fn single_point() {
        let cfg = SweepConfig {
            format_version: 1,
            base: base(),
            grid: SweepGrid {
                lora_ranks: vec![3],
                ..Default::default()
            },
        };
        assert_eq!(sweep(&cfg).len(), 1);
    }

    #[test]
    fn parallel_matches_sequential() {
        let cfg = SweepConfig {
            format_version: 1,
            base: base(),
            grid: SweepGrid {
                blocks: vec![1, 2, 4],
                block_ranks: vec![1, 2],
                ..Default::default()
            },
        };
        let strip = |v: Vec<SweepEntry>| {
            v.into_iter()
                .map(|e| e.outcome.map(|r| RunRecord { wall_ms: 0, ..r }))
                .collect::<Vec<_>>()
        };
        assert_eq!(
            strip(sweep_with(Exec::Parallel, &cfg)),
            strip(sweep_with(Exec::Sequential, &cfg))
        );
    }
}
