//! Seeded invariant suites behind the `verify` command.
//!
//! Each suite returns per-check summaries with the number of runs, the
//! number of violations, the worst observed metric and the first failure.
//! Reports contain no timings, so identical seeds give identical reports.

// Checks are written as `!(value < tol)` so that NaN counts as a failure.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::gradients::{backward, backward_dense, grad_check, CheckData, Loss, Targets, DEFAULT_STEP};
use crate::monarch::{lora_param_count, param_count, Adapter, AdapterLayer, MonarchAdapter, MonarchConfig};
use crate::numerics::{svd, truncated_svd, DenseMatrix, Vector};
use crate::par::{self, Exec};
use crate::projection::{project, worst_case_instance};
use crate::theory::{check_corollary_spectral, check_estimation_error, check_lemma_submatrix, Regime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Core,
    Theory,
    Grad,
    Projection,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Core, Suite::Theory, Suite::Grad, Suite::Projection];

    pub fn name(&self) -> &'static str {
        match self {
            Suite::Core => "core",
            Suite::Theory => "theory",
            Suite::Grad => "grad",
            Suite::Projection => "projection",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckSummary {
    pub name: String,
    pub runs: usize,
    pub violations: usize,
    /// What `worst` measures, e.g. `max_abs_diff`.
    pub metric: String,
    pub worst: f64,
    pub threshold: f64,
    /// Trial ids in run order: seeds, or grid indices for grid checks.
    pub seeds: Vec<u64>,
    pub first_failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub seed: u64,
    pub checks: Vec<CheckSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub suites: Vec<SuiteReport>,
}

impl VerifyReport {
    pub fn violations(&self) -> usize {
        self.suites.iter().flat_map(|s| &s.checks).map(|c| c.violations).sum()
    }

    pub fn first_failure(&self) -> Option<String> {
        self.suites
            .iter()
            .flat_map(|s| &s.checks)
            .find_map(|c| c.first_failure.as_ref().map(|f| format!("{}: {f}", c.name)))
    }
}

pub fn run(suites: &[Suite], seed: u64) -> VerifyReport {
    VerifyReport {
        seed,
        suites: suites.iter().map(|&s| run_suite(s, seed)).collect(),
    }
}

pub fn run_suite(suite: Suite, seed: u64) -> SuiteReport {
    let checks = match suite {
        Suite::Core => core_suite(seed),
        Suite::Theory => theory_suite(seed),
        Suite::Grad => grad_suite(seed),
        Suite::Projection => projection_suite(seed),
    };
    SuiteReport { suite, seed, checks }
}

/// Per-run outcome: the metric value and a failure description if any.
type Outcome = (f64, Option<String>);

/// Runs `count` seeded trials (seed `base + i`) and folds them.
fn summarize<F>(name: &str, metric: &str, threshold: f64, base: u64, count: usize, trial: F) -> CheckSummary
where
    F: Fn(u64) -> Outcome + Sync + Send,
{
    let outcomes = par::map_indexed(Exec::available(), count, |i| trial(base.wrapping_add(i as u64)));
    let mut summary = CheckSummary {
        name: name.to_string(),
        runs: count,
        violations: 0,
        metric: metric.to_string(),
        worst: 0.0,
        threshold,
        seeds: (0..count as u64).map(|i| base.wrapping_add(i)).collect(),
        first_failure: None,
    };
    for (value, failure) in outcomes {
        if value.is_nan() || value > summary.worst {
            summary.worst = value;
        }
        if let Some(f) = failure {
            summary.violations += 1;
            summary.first_failure.get_or_insert(f);
        }
    }
    summary
}

fn fail_if(cond: bool, msg: impl FnOnce() -> String) -> Option<String> {
    cond.then(msg)
}

/// Seeded configurations with `n ∈ {16,…,256}`, `N ∈ {1,2,4,8,16}` and
/// `r_blk ∈ 1..=m`.
pub fn config_grid(seed: u64, count: usize) -> Vec<MonarchConfig> {
    const NS: [usize; 5] = [16, 32, 64, 128, 256];
    const BLOCKS: [usize; 5] = [1, 2, 4, 8, 16];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let n = NS[rng.random_range(0..NS.len())];
            let blocks = BLOCKS[rng.random_range(0..BLOCKS.len())];
            let block_rank = rng.random_range(1..=n / blocks);
            MonarchConfig::new(n, blocks, block_rank).expect("grid values are valid")
        })
        .collect()
}

fn random_adapter(config: MonarchConfig, seed: u64) -> MonarchAdapter {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    MonarchAdapter::random_normal(config, 1.0, &mut rng).expect("valid config")
}

/// `max |apply(x) − to_dense · x|` over a batch of 8 random inputs.
pub fn dense_equivalence_gap(adapter: &MonarchAdapter, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DenseMatrix::random_normal(8, adapter.config().n, 1.0, &mut rng);
    let via_dense = x.matmul_transposed(&adapter.to_dense()).expect("square");
    adapter
        .apply(&x)
        .expect("shape")
        .max_abs_diff(&via_dense)
        .expect("shape")
}

fn core_suite(seed: u64) -> Vec<CheckSummary> {
    let grid = config_grid(seed, 50);
    let mut checks = Vec::new();

    checks.push(summarize(
        "dense_equivalence",
        "max_abs_diff",
        1e-10,
        0,
        grid.len(),
        |i| {
            let cfg = grid[i as usize];
            let gap = dense_equivalence_gap(&random_adapter(cfg, seed ^ i), seed.wrapping_add(i));
            (gap, fail_if(!(gap < 1e-10), || format!("{cfg:?}: gap {gap:e}")))
        },
    ));

    checks.push(summarize(
        "permutation_bijectivity",
        "unvisited",
        0.0,
        0,
        grid.len(),
        |i| {
            let cfg = grid[i as usize];
            let mut hits_p2 = vec![0usize; cfg.inter_dim()];
            let mut hits_p1 = vec![0usize; cfg.n];
            (0..cfg.inter_dim()).for_each(|p| hits_p2[cfg.shuffle_p2(p).expect("in range")] += 1);
            (0..cfg.n).for_each(|p| hits_p1[cfg.shuffle_p1(p).expect("in range")] += 1);
            let bad = hits_p1.iter().chain(&hits_p2).filter(|&&h| h != 1).count();
            (
                bad as f64,
                fail_if(bad > 0, || format!("{cfg:?}: {bad} targets not hit once")),
            )
        },
    ));

    checks.push(summarize("lora_subsumption", "max_abs_diff", 1e-12, seed, 10, |s| {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let n = [8, 16, 32][rng.random_range(0..3)];
        let r = rng.random_range(1..=n / 2);
        let a = random_adapter(MonarchConfig::new(n, 1, r).expect("valid"), s);
        let fout = DenseMatrix::new(n, r, a.factor_out().to_vec()).expect("shape");
        let fin = DenseMatrix::new(r, n, a.factor_in().to_vec()).expect("shape");
        let gap = a
            .to_dense()
            .max_abs_diff(&fout.matmul(&fin).expect("shape"))
            .expect("shape");
        let rank = a.rank().unwrap_or(usize::MAX);
        (
            gap,
            fail_if(gap >= 1e-12 || rank > r, || {
                format!("n={n} r={r}: gap {gap:e}, rank {rank}")
            }),
        )
    }));

    checks.push(summarize("rank_capacity", "rank_deficit", 0.0, seed, 20, |s| {
        let a = random_adapter(MonarchConfig::new(64, 4, 8).expect("valid"), s);
        let sv = svd(&a.to_dense()).map(|f| f.singular_values).unwrap_or_default();
        let ok = sv.len() == 64 && sv[31] > 1e-8 * sv[0] && sv[32] < 1e-10 * sv[0];
        let rank = a.rank().unwrap_or(0);
        (
            (32usize.abs_diff(rank)) as f64,
            fail_if(!ok || rank != 32, || format!("seed {s}: rank {rank}")),
        )
    }));

    checks.push(summarize("param_identity", "mismatches", 0.0, 0, grid.len(), |i| {
        let cfg = grid[i as usize];
        let more = param_count(&cfg);
        let lora = lora_param_count(cfg.n, cfg.inter_dim());
        let bad = more * cfg.blocks != lora || more != 2 * cfg.n * cfg.block_rank;
        (bad as u8 as f64, fail_if(bad, || format!("{cfg:?}: {more} vs {lora}")))
    }));

    checks.push(summarize("merge_consistency", "max_abs_diff", 1e-10, seed, 10, |s| {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let cfg = MonarchConfig::new(32, 4, 3).expect("valid");
        let a = MonarchAdapter::random_normal(cfg, 1.0, &mut rng).expect("valid");
        let layer = AdapterLayer::new(
            DenseMatrix::random_normal(32, 32, 1.0, &mut rng),
            Vector::random_normal(32, 1.0, &mut rng),
            Adapter::Monarch(a),
        )
        .expect("shapes");
        let x = DenseMatrix::random_normal(100, 32, 1.0, &mut rng);
        let gap = layer
            .forward(&x)
            .and_then(|f| f.max_abs_diff(&layer.forward_merged(&x)?))
            .unwrap_or(f64::INFINITY);
        (gap, fail_if(!(gap < 1e-10), || format!("seed {s}: gap {gap:e}")))
    }));
    checks
}

/// Seeded gradient-check problem: small config, batch, targets and
/// (for cross-entropy) a frozen base layer.
pub fn grad_check_case(seed: u64) -> (MonarchAdapter, Loss, CheckData) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, blocks) = [(8, 2), (12, 3), (16, 4), (16, 2), (10, 2), (24, 4)][rng.random_range(0..6)];
    let block_rank = rng.random_range(1..=n / blocks);
    let cfg = MonarchConfig::new(n, blocks, block_rank).expect("valid");
    let adapter = MonarchAdapter::random_normal(cfg, 0.5, &mut rng).expect("valid");
    let batch = 6;
    let inputs = DenseMatrix::random_normal(batch, n, 1.0, &mut rng);
    if seed.is_multiple_of(2) {
        let targets = Targets::Dense(DenseMatrix::random_normal(batch, n, 1.0, &mut rng));
        (
            adapter,
            Loss::Mse,
            CheckData {
                base: None,
                inputs,
                targets,
            },
        )
    } else {
        let base = (
            DenseMatrix::random_normal(n, n, 0.3, &mut rng),
            Vector::random_normal(n, 0.1, &mut rng),
        );
        let labels = (0..batch).map(|_| rng.random_range(0..n)).collect();
        (
            adapter,
            Loss::SoftmaxXent,
            CheckData {
                base: Some(base),
                inputs,
                targets: Targets::Labels(labels),
            },
        )
    }
}

fn grad_suite(seed: u64) -> Vec<CheckSummary> {
    vec![
        summarize("grad_check", "max_rel_err", 1e-5, seed, 10, |s| {
            let (adapter, loss, data) = grad_check_case(s);
            match grad_check(&adapter, loss, &data, DEFAULT_STEP, s) {
                Ok(r) => (
                    r.max_rel_err,
                    fail_if(!(r.max_rel_err < 1e-5), || {
                        format!("seed {s}: rel err {:e} at {:?}", r.max_rel_err, r.worst_coordinate)
                    }),
                ),
                Err(e) => (f64::INFINITY, Some(format!("seed {s}: {e}"))),
            }
        }),
        summarize("merged_vs_additive_gradient", "max_abs_diff", 1e-9, seed, 10, |s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let a = random_adapter(MonarchConfig::new(16, 4, 3).expect("valid"), s);
            let x = DenseMatrix::random_normal(9, 16, 1.0, &mut rng);
            let g = DenseMatrix::random_normal(9, 16, 1.0, &mut rng);
            let act = backward(&a, &x, &g).expect("shapes");
            let (d_in, d_out) = backward_dense(&a, &g.transpose().matmul(&x).expect("shape")).expect("shape");
            let gap = act
                .d_factor_in
                .iter()
                .zip(&d_in)
                .chain(act.d_factor_out.iter().zip(&d_out))
                .fold(0.0_f64, |m, (p, q)| m.max((p - q).abs()));
            (gap, fail_if(!(gap < 1e-9), || format!("seed {s}: gap {gap:e}")))
        }),
    ]
}

fn projection_suite(seed: u64) -> Vec<CheckSummary> {
    let cfg = MonarchConfig::new(16, 4, 4).expect("valid");
    vec![
        summarize(
            "projection_optimality",
            "error_minus_best_candidate",
            0.0,
            seed,
            20,
            |s| {
                let mut rng = ChaCha8Rng::seed_from_u64(s);
                let a = DenseMatrix::random_normal(16, 16, 1.0, &mut rng);
                let rep = match project(&a, &cfg) {
                    Ok(r) => r,
                    Err(e) => return (f64::INFINITY, Some(e.to_string())),
                };
                let best = (0..1000)
                    .map(|_| {
                        let c = MonarchAdapter::random_normal(cfg, 0.5, &mut rng).expect("valid");
                        a.sub(&c.to_dense()).expect("shape").fro_norm_sq()
                    })
                    .fold(f64::INFINITY, f64::min);
                let dense = a.sub(&rep.adapter.to_dense()).expect("shape").fro_norm_sq();
                let rel = (dense - rep.error_sq).abs() / dense;
                let excess = rep.error_sq - best;
                (
                    excess,
                    fail_if(excess > 0.0 || rel > 1e-9, || {
                        format!(
                            "seed {s}: error {} vs best candidate {best}, identity rel err {rel:e}",
                            rep.error_sq
                        )
                    }),
                )
            },
        ),
        summarize("worst_case_ratio", "abs_ratio_error", 1e-9, 0, 2, |i| {
            let (n, blocks, expected) = [(16, 4, 0.75), (4, 2, 0.5)][i as usize];
            let c = MonarchConfig::new(n, blocks, blocks).expect("valid");
            let a = worst_case_instance(&c, seed).expect("one channel per pair");
            let ratio = project(&a, &c).expect("valid").ratio(&a);
            let err = (ratio - expected).abs();
            (
                err,
                fail_if(!(err < 1e-9), || format!("m={}: ratio {ratio}", c.block_size())),
            )
        }),
        summarize("expressivity_gap", "projection_error_ratio", 1e-18, seed, 10, |s| {
            let c = MonarchConfig::new(64, 4, 8).expect("valid");
            let target = random_adapter(c, s).to_dense();
            let energy = target.fro_norm_sq();
            let monarch = project(&target, &c).expect("valid").error_sq / energy;
            let lowrank = truncated_svd(&target, 8).expect("q in range").1 / energy;
            (
                monarch,
                fail_if(!(monarch < 1e-18 && lowrank > 1e-3), || {
                    format!("seed {s}: monarch {monarch:e}, rank-8 {lowrank:e}")
                }),
            )
        }),
    ]
}

fn theory_suite(seed: u64) -> Vec<CheckSummary> {
    let bound = |r: crate::theory::BoundReport| {
        let ratio = if r.rhs == 0.0 { 0.0 } else { r.lhs / r.rhs };
        (
            ratio,
            fail_if(r.violated, || format!("seed {}: lhs {} > rhs {}", r.seed, r.lhs, r.rhs)),
        )
    };
    let estimation = |s: u64, cfg: MonarchConfig, regime: Regime| match check_estimation_error(s, 3, &cfg, regime) {
        Ok(r) => {
            let ratio = if r.bound.rhs == 0.0 {
                0.0
            } else {
                r.bound.lhs / r.bound.rhs
            };
            (
                ratio,
                fail_if(!r.holds(), || {
                    format!(
                        "seed {s}: lhs {} rhs {} identity rel err {:e}",
                        r.bound.lhs, r.bound.rhs, r.identity_rel_err
                    )
                }),
            )
        }
        Err(e) => (f64::INFINITY, Some(format!("seed {s}: {e}"))),
    };
    let square = MonarchConfig::new(16, 4, 4).expect("valid");
    let rect = MonarchConfig::new(16, 2, 4).expect("valid");
    vec![
        summarize("lemma_submatrix", "max_lhs_over_rhs", 1.0, seed, 100, |s| {
            check_lemma_submatrix(s, 4)
                .map(bound)
                .unwrap_or_else(|e| (f64::INFINITY, Some(e.to_string())))
        }),
        summarize("corollary_spectral", "max_lhs_over_rhs", 1.0, seed, 100, |s| {
            check_corollary_spectral(s, 4)
                .map(bound)
                .unwrap_or_else(|e| (f64::INFINITY, Some(e.to_string())))
        }),
        summarize("estimation_error_square", "max_lhs_over_rhs", 1.0, seed, 50, |s| {
            estimation(s, square, Regime::SquareQ1)
        }),
        summarize("estimation_error_rectangular", "max_lhs_over_rhs", 1.0, seed, 50, |s| {
            estimation(s, rect, Regime::Rectangular)
        }),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_deterministic_and_valid() {
        let g = config_grid(42, 50);
        assert_eq!(g, config_grid(42, 50));
        assert!(g.iter().all(|c| c.validate().is_ok() && (16..=256).contains(&c.n)));
    }

    #[test]
    fn grad_suite_passes() {
        let r = run_suite(Suite::Grad, 42);
        assert!(r.checks.iter().all(|c| c.violations == 0), "{r:?}");
    }
}
