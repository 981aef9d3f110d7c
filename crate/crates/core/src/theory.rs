//! Randomized checks of the approximation bounds for Monarch adapters:
//! the submatrix triangle inequality, its spectral-norm corollary, and the
//! last-layer estimation-error bound in both divisibility regimes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::monarch::MonarchConfig;
use crate::numerics::{inverse, norm2, svd, DenseMatrix};
use crate::projection::{permuted_block, project, ChannelSet};

/// Slack allowed before a bound counts as violated: `1e-9 · max(1, |rhs|)`.
pub const VIOLATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundReport {
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub seed: u64,
    pub violated: bool,
}

impl BoundReport {
    pub fn new(lhs: f64, rhs: f64, seed: u64) -> Self {
        Self {
            lhs,
            rhs,
            slack: rhs - lhs,
            seed,
            violated: lhs > rhs + VIOLATION_TOL * rhs.abs().max(1.0),
        }
    }
}

fn block_of(w: &DenseMatrix, m: usize, j: usize, k: usize) -> DenseMatrix {
    w.submatrix(j * m, k * m, m, m).expect("grid block in range")
}

fn check_grid(w: &DenseMatrix, m: usize) -> Result<()> {
    if m == 0 || w.shape() != (m * m, m * m) {
        return Err(Error::Shape(format!(
            "expected {0}x{0} matrix for grid size {m}, got {1}x{2}",
            m * m,
            w.rows(),
            w.cols()
        )));
    }
    Ok(())
}

/// `‖W x‖₂ ≤ Σ_{jk} ‖W_{jk} x_k‖₂` for an `m × m` grid of `m × m` blocks.
pub fn submatrix_bound(w: &DenseMatrix, x: &[f64], m: usize, seed: u64) -> Result<BoundReport> {
    check_grid(w, m)?;
    let lhs = norm2(&w.matvec(x)?);
    let mut rhs = 0.0;
    for j in 0..m {
        for k in 0..m {
            rhs += norm2(&block_of(w, m, j, k).matvec(&x[k * m..(k + 1) * m])?);
        }
    }
    Ok(BoundReport::new(lhs, rhs, seed))
}

/// `σ₁(W) ≤ Σ_{jk} σ₁(W_{jk})`.
pub fn spectral_bound(w: &DenseMatrix, m: usize, seed: u64) -> Result<BoundReport> {
    check_grid(w, m)?;
    let lhs = w.spectral_norm()?;
    let mut rhs = 0.0;
    for j in 0..m {
        for k in 0..m {
            rhs += block_of(w, m, j, k).spectral_norm()?;
        }
    }
    Ok(BoundReport::new(lhs, rhs, seed))
}

pub fn check_lemma_submatrix(seed: u64, m: usize) -> Result<BoundReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = m * m;
    let w = DenseMatrix::random_normal(n, n, 1.0, &mut rng);
    let x = DenseMatrix::random_normal(1, n, 1.0, &mut rng).into_data();
    submatrix_bound(&w, &x, m, seed)
}

pub fn check_corollary_spectral(seed: u64, m: usize) -> Result<BoundReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = m * m;
    let w = DenseMatrix::random_normal(n, n, 1.0, &mut rng);
    spectral_bound(&w, m, seed)
}

/// Which estimation-error statement is being instantiated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `r_blk = N`: one channel per block pair, rank-1 blocks.
    SquareQ1,
    /// `N < r_blk`, `N | r_blk`: `r_blk / N` channels per pair.
    Rectangular,
}

impl Regime {
    /// 1-based index of the first discarded singular value per block.
    pub fn truncation_start(&self, config: &MonarchConfig) -> Result<usize> {
        let (blocks, r) = (config.blocks, config.block_rank);
        match self {
            Regime::SquareQ1 if r == blocks => Ok(2),
            Regime::Rectangular if blocks < r && r % blocks == 0 => Ok(r / blocks + 1),
            _ => Err(Error::Config(format!(
                "config (N={blocks}, r_blk={r}) does not fit regime {self:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimationReport {
    /// `‖W̄ − Ŵ‖²_F` against `‖Π_{l<L} W_l‖²_F · ‖Ẽ − Δ‖²_F`.
    pub bound: BoundReport,
    /// `‖Ẽ − Δ‖²_F`, computed densely.
    pub residual: f64,
    /// `Σ_{pairs} Σ_{i ≥ start} σ_i²` of the permuted blocks of `Ẽ`.
    pub sigma_sum: f64,
    pub identity_rel_err: f64,
    pub truncation_start: usize,
    /// Draws discarded because the prefix product was singular.
    pub regenerations: usize,
}

impl EstimationReport {
    pub fn holds(&self) -> bool {
        !self.bound.violated && self.identity_rel_err <= VIOLATION_TOL
    }
}

/// Evaluates the bound for frozen factors `layers` (product `W_1 ⋯ W_L`)
/// and target `target`, adapting only the last factor.
pub fn estimation_bound(
    layers: &[DenseMatrix],
    target: &DenseMatrix,
    config: &MonarchConfig,
    regime: Regime,
    seed: u64,
) -> Result<EstimationReport> {
    let start = regime.truncation_start(config)?;
    let n = config.n;
    let (last, prefix_layers) = layers
        .split_last()
        .ok_or_else(|| Error::Config("need at least one layer".into()))?;
    let prefix = prefix_layers
        .iter()
        .try_fold(DenseMatrix::identity(n), |acc, w| acc.matmul(w))?;
    let frozen = prefix.matmul(last)?;

    let error = target.sub(&frozen)?;
    let regularized = inverse(&prefix)?.matmul(&error)?;
    let delta = project(&regularized, config)?.adapter.to_dense();
    let adapted = prefix.matmul(&last.add(&delta)?)?;

    let lhs = target.sub(&adapted)?.fro_norm_sq();
    let residual = regularized.sub(&delta)?.fro_norm_sq();
    let rhs = prefix.fro_norm_sq() * residual;

    let mut sigma_sum = 0.0;
    for ((k_out, k_in), _) in ChannelSet::new(config).iter() {
        let s = svd(&permuted_block(&regularized, config, k_out, k_in)?)?.singular_values;
        sigma_sum += s.iter().skip(start - 1).map(|v| v * v).sum::<f64>();
    }
    let scale = residual.abs().max(sigma_sum.abs());
    let identity_rel_err = if scale == 0.0 {
        0.0
    } else {
        (residual - sigma_sum).abs() / scale
    };
    Ok(EstimationReport {
        bound: BoundReport::new(lhs, rhs, seed),
        residual,
        sigma_sum,
        identity_rel_err,
        truncation_start: start,
        regenerations: 0,
    })
}

/// Random invertible matrix with singular values floored at `1e-2 · σ₁`,
/// so its condition number is at most 100.
pub fn well_conditioned(n: usize, rng: &mut ChaCha8Rng) -> Result<DenseMatrix> {
    let g = DenseMatrix::random_normal(n, n, 1.0 / (n as f64).sqrt(), rng);
    let mut f = svd(&g)?;
    let floor = 1e-2 * f.singular_values[0];
    f.singular_values.iter_mut().for_each(|s| *s = s.max(floor));
    Ok(f.reconstruct())
}

/// Upper bound on the condition number of generated layers.
pub const MAX_CONDITION: f64 = 1e3;

pub fn check_estimation_error(
    seed: u64,
    layers: usize,
    config: &MonarchConfig,
    regime: Regime,
) -> Result<EstimationReport> {
    if layers == 0 {
        return Err(Error::Config("need at least one layer".into()));
    }
    regime.truncation_start(config)?;
    const MAX_ATTEMPTS: usize = 16;
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add((attempt as u64) << 32));
        let ws = (0..layers)
            .map(|_| well_conditioned(config.n, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let target = well_conditioned(config.n, &mut rng)?;
        let conditioned = ws.iter().all(|w| {
            svd(w)
                .map(|s| s.singular_values[0] <= MAX_CONDITION * s.singular_values[config.n - 1])
                .unwrap_or(false)
        });
        if !conditioned {
            continue;
        }
        match estimation_bound(&ws, &target, config, regime, seed) {
            Err(Error::Singular(_)) => continue,
            Err(e) => return Err(e),
            Ok(mut report) => {
                report.regenerations = attempt;
                return Ok(report);
            }
        }
    }
    Err(Error::Singular(format!(
        "no invertible draw after {MAX_ATTEMPTS} attempts"
    )))
}
