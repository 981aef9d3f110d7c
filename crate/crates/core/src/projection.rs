//! Frobenius-optimal projection of a dense matrix onto the Monarch class.
//!
//! Every intermediate channel links exactly one input block to one output
//! block, so the dense matrix splits into `N²` permuted `m × m` blocks that
//! share no parameters. Projecting is a truncated SVD per block, truncated
//! at the number of channels that block owns.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::monarch::{MonarchAdapter, MonarchConfig};
use crate::numerics::{svd, truncated_svd, DenseMatrix};
use crate::par::{self, Exec};

/// One intermediate coordinate: slot `j` of the input-side block and slot
/// `j_dest` of the output-side block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Channel {
    pub j: usize,
    pub j_dest: usize,
}

/// Channels owned by each `(k_out, k_in)` block pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    blocks: usize,
    /// Indexed by `k_out · N + k_in`, each list sorted by `(j, j_dest)`.
    pairs: Vec<Vec<Channel>>,
}

impl ChannelSet {
    pub fn new(config: &MonarchConfig) -> Self {
        let (blocks, r) = (config.blocks, config.block_rank);
        let mut pairs = vec![Vec::new(); blocks * blocks];
        for k_in in 0..blocks {
            for j in 0..r {
                let p = k_in * r + j;
                let k_out = p % blocks;
                pairs[k_out * blocks + k_in].push(Channel { j, j_dest: p / blocks });
            }
        }
        for list in &mut pairs {
            list.sort_unstable();
        }
        Self { blocks, pairs }
    }

    pub fn channels(&self, k_out: usize, k_in: usize) -> &[Channel] {
        &self.pairs[k_out * self.blocks + k_in]
    }

    pub fn total(&self) -> usize {
        self.pairs.iter().map(Vec::len).sum()
    }

    /// `((k_out, k_in), channels)` in row-major pair order.
    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), &[Channel])> {
        self.pairs
            .iter()
            .enumerate()
            .map(move |(i, c)| ((i / self.blocks, i % self.blocks), c.as_slice()))
    }
}

/// `B[s, t] = a[s·N + k_out, k_in·m + t]`.
pub fn permuted_block(a: &DenseMatrix, config: &MonarchConfig, k_out: usize, k_in: usize) -> Result<DenseMatrix> {
    check_square(a, config)?;
    if k_out >= config.blocks || k_in >= config.blocks {
        return Err(Error::OutOfRange {
            index: k_out.max(k_in),
            bound: config.blocks,
        });
    }
    let (blocks, m) = (config.blocks, config.block_size());
    Ok(DenseMatrix::from_fn(m, m, |s, t| a[(s * blocks + k_out, k_in * m + t)]))
}

fn check_square(a: &DenseMatrix, config: &MonarchConfig) -> Result<()> {
    config.validate()?;
    if a.shape() != (config.n, config.n) {
        return Err(Error::Shape(format!(
            "matrix is {}x{}, config needs {n}x{n}",
            a.rows(),
            a.cols(),
            n = config.n
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionReport {
    pub adapter: MonarchAdapter,
    /// `Σ_pairs Σ_{i>q} σ_i²`.
    pub error_sq: f64,
    pub per_block_residuals: BTreeMap<(usize, usize), f64>,
}

impl ProjectionReport {
    /// `error_sq / ‖a‖²_F`, or 0 for the zero matrix.
    pub fn ratio(&self, a: &DenseMatrix) -> f64 {
        let total = a.fro_norm_sq();
        if total == 0.0 {
            0.0
        } else {
            self.error_sq / total
        }
    }
}

pub fn project(a: &DenseMatrix, config: &MonarchConfig) -> Result<ProjectionReport> {
    project_with(Exec::available(), a, config)
}

pub fn project_with(exec: Exec, a: &DenseMatrix, config: &MonarchConfig) -> Result<ProjectionReport> {
    check_square(a, config)?;
    let channels = ChannelSet::new(config);
    let blocks = config.blocks;
    let solved = par::map_indexed(exec, blocks * blocks, |i| {
        let (k_out, k_in) = (i / blocks, i % blocks);
        let block = permuted_block(a, config, k_out, k_in)?;
        truncated_svd(&block, channels.channels(k_out, k_in).len())
    });

    let (r, m) = (config.block_rank, config.block_size());
    let mut adapter = MonarchAdapter::zeros(*config)?;
    let mut per_block_residuals = BTreeMap::new();
    let mut error_sq = 0.0;
    for (((k_out, k_in), chans), result) in channels.iter().zip(solved) {
        let (top, residual) = result?;
        let (fin, fout) = adapter.factors_mut();
        for (t, ch) in chans.iter().enumerate() {
            let scale = top.singular_values[t].sqrt();
            for s in 0..m {
                fout[k_out * m * r + s * r + ch.j_dest] = scale * top.u[(s, t)];
            }
            for c in 0..m {
                fin[k_in * r * m + ch.j * m + c] = scale * top.vt[(t, c)];
            }
        }
        error_sq += residual;
        per_block_residuals.insert((k_out, k_in), residual);
    }
    Ok(ProjectionReport {
        adapter,
        error_sq,
        per_block_residuals,
    })
}

/// Builds a matrix whose permuted blocks are all random `m × m` orthogonal
/// matrices. Requires exactly one channel per block pair, so projection
/// keeps one of `m` equal singular values per block.
pub fn worst_case_instance(config: &MonarchConfig, seed: u64) -> Result<DenseMatrix> {
    config.validate()?;
    let channels = ChannelSet::new(config);
    if let Some(((k_out, k_in), c)) = channels.iter().find(|(_, c)| c.len() != 1) {
        return Err(Error::Config(format!(
            "block pair ({k_out},{k_in}) has {} channels; worst-case instance needs exactly one per pair",
            c.len()
        )));
    }
    let (n, blocks, m) = (config.n, config.blocks, config.block_size());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = DenseMatrix::zeros(n, n);
    for k_out in 0..blocks {
        for k_in in 0..blocks {
            let q = svd(&DenseMatrix::random_normal(m, m, 1.0, &mut rng))?.u;
            for s in 0..m {
                for t in 0..m {
                    a[(s * blocks + k_out, k_in * m + t)] = q[(s, t)];
                }
            }
        }
    }
    Ok(a)
}
