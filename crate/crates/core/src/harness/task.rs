use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::TaskSpec;
use crate::error::{Error, Result};
use crate::gradients::Targets;
use crate::monarch::{MonarchAdapter, MonarchConfig};
use crate::numerics::{DenseMatrix, Vector};
use crate::projection::ChannelSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Regression,
    Classification,
}

/// A frozen layer, its target, and a fixed dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedTask {
    pub kind: TaskKind,
    pub base_weight: DenseMatrix,
    pub bias: Vector,
    pub target_weight: DenseMatrix,
    /// `W̄ − W`.
    pub planted_delta: DenseMatrix,
    /// Inputs seen by the adapted layer (after the frozen front layer for
    /// classification tasks).
    pub features: DenseMatrix,
    pub targets: Targets,
}

/// Frozen base layers are `N(0, 1/n)`; planted factors are scaled so that
/// the delta's entries have variance about `1/n` as well.
pub fn make_planted_task(spec: &TaskSpec, n: usize, samples: usize, seed: u64) -> Result<PlantedTask> {
    if n == 0 || samples == 0 {
        return Err(Error::Config("n and samples must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (n as f64).sqrt();
    let base_weight = DenseMatrix::random_normal(n, n, scale, &mut rng);
    let bias = Vector::random_normal(n, 0.1, &mut rng);

    let planted_delta = match *spec {
        TaskSpec::PlantedMonarch { blocks, block_rank } | TaskSpec::MlpShift { blocks, block_rank } => {
            let cfg = MonarchConfig::new(n, blocks, block_rank)?;
            let per_pair = ChannelSet::new(&cfg)
                .iter()
                .map(|(_, c)| c.len())
                .max()
                .unwrap_or(1)
                .max(1);
            let factor_scale = ((per_pair * n) as f64).powf(-0.25);
            MonarchAdapter::random_normal(cfg, factor_scale, &mut rng)?.to_dense()
        }
        TaskSpec::PlantedLowrank { rank } => {
            if rank > n {
                return Err(Error::Config(format!("planted rank {rank} exceeds n = {n}")));
            }
            let factor_scale = ((rank.max(1) * n) as f64).powf(-0.25);
            let u = DenseMatrix::random_normal(n, rank, factor_scale, &mut rng);
            let v = DenseMatrix::random_normal(rank, n, factor_scale, &mut rng);
            u.matmul(&v)?
        }
    };
    let target_weight = base_weight.add(&planted_delta)?;

    let inputs = DenseMatrix::random_normal(samples, n, 1.0, &mut rng);
    let (kind, features, targets) = match spec {
        TaskSpec::MlpShift { .. } => {
            let front = DenseMatrix::random_normal(n, n, scale, &mut rng);
            let mut hidden = inputs.matmul_transposed(&front)?;
            hidden.data_mut().iter_mut().for_each(|v| *v = v.tanh());
            let logits = affine(&hidden, &target_weight, &bias)?;
            let labels = (0..samples).map(|i| argmax(logits.row(i))).collect();
            (TaskKind::Classification, hidden, Targets::Labels(labels))
        }
        _ => {
            let y = affine(&inputs, &target_weight, &bias)?;
            (TaskKind::Regression, inputs, Targets::Dense(y))
        }
    };
    Ok(PlantedTask {
        kind,
        base_weight,
        bias,
        target_weight,
        planted_delta,
        features,
        targets,
    })
}

/// `x Wᵀ + b` row by row.
pub(crate) fn affine(x: &DenseMatrix, w: &DenseMatrix, b: &Vector) -> Result<DenseMatrix> {
    let mut out = x.matmul_transposed(w)?;
    let n = b.len();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        *v += b.as_slice()[i % n];
    }
    Ok(out)
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) },
        )
        .0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planted_delta_is_the_monarch_matrix() {
        let spec = TaskSpec::PlantedMonarch {
            blocks: 4,
            block_rank: 4,
        };
        let t = make_planted_task(&spec, 64, 32, 1).unwrap();
        let diff = t.target_weight.sub(&t.base_weight).unwrap();
        assert!((diff.fro_norm() - t.planted_delta.fro_norm()).abs() < 1e-12);
        let cfg = MonarchConfig::new(64, 4, 4).unwrap();
        let rep = crate::projection::project(&t.planted_delta, &cfg).unwrap();
        assert!(rep.error_sq < 1e-18 * t.planted_delta.fro_norm_sq());
    }

    #[test]
    fn zero_rank_delta() {
        let t = make_planted_task(&TaskSpec::PlantedLowrank { rank: 0 }, 16, 8, 1).unwrap();
        assert_eq!(t.target_weight, t.base_weight);
    }

    #[test]
    fn deterministic() {
        let spec = TaskSpec::MlpShift {
            blocks: 2,
            block_rank: 2,
        };
        let a = make_planted_task(&spec, 8, 20, 3).unwrap();
        assert_eq!(a, make_planted_task(&spec, 8, 20, 3).unwrap());
        assert_eq!(a.kind, TaskKind::Classification);
        assert_ne!(a, make_planted_task(&spec, 8, 20, 4).unwrap());
    }

    #[test]
    fn lowrank_has_stated_rank() {
        let t = make_planted_task(&TaskSpec::PlantedLowrank { rank: 5 }, 32, 8, 2).unwrap();
        assert_eq!(t.planted_delta.numerical_rank(1e-10).unwrap(), 5);
        assert!(make_planted_task(&TaskSpec::PlantedLowrank { rank: 40 }, 32, 8, 2).is_err());
    }
}
