//! The Monarch matrix class `M = P1 · L · P2 · R`.
//!
//! Factors are named by application order. `factor_in` (`R`, shape
//! `(N, r_blk, m)`) acts first on the `N` input slices of width `m`;
//! `factor_out` (`L`, shape `(N, m, r_blk)`) acts second on the routed
//! intermediate. The permutations are index maps and never materialized
//! outside [`MonarchAdapter::to_dense`].

mod checkpoint;
mod layer;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, DenseMatrix};
use crate::par::{self, Exec};

pub use checkpoint::{Checkpoint, FORMAT_VERSION};
pub use layer::{Adapter, AdapterLayer, LinearDelta};

/// Structural parameters of a square `n × n` Monarch matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MonarchConfig {
    pub n: usize,
    /// Number of diagonal blocks `N`.
    pub blocks: usize,
    /// Inner dimension `r_blk` of each block.
    pub block_rank: usize,
}

impl MonarchConfig {
    pub fn new(n: usize, blocks: usize, block_rank: usize) -> Result<Self> {
        let cfg = Self { n, blocks, block_rank };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("n must be positive".into()));
        }
        if self.blocks == 0 || self.block_rank == 0 {
            return Err(Error::Config(format!(
                "blocks ({}) and block_rank ({}) must be positive",
                self.blocks, self.block_rank
            )));
        }
        if !self.n.is_multiple_of(self.blocks) {
            return Err(Error::Config(format!(
                "blocks {} does not divide n {}",
                self.blocks, self.n
            )));
        }
        if self.block_rank > self.n / self.blocks {
            return Err(Error::Config(format!(
                "block_rank {} exceeds block size {}",
                self.block_rank,
                self.n / self.blocks
            )));
        }
        Ok(())
    }

    /// `m = n / N`.
    pub fn block_size(&self) -> usize {
        self.n / self.blocks
    }

    /// `d = N · r_blk`, the length of the intermediate vector.
    pub fn inter_dim(&self) -> usize {
        self.blocks * self.block_rank
    }

    /// Largest rank the product can reach.
    pub fn max_rank(&self) -> usize {
        self.inter_dim().min(self.n)
    }

    /// Intermediate routing: slot `p = k·r_blk + j` of source block `k`
    /// goes to block `p mod N`, slot `p div N`.
    pub fn shuffle_p2(&self, p: usize) -> Result<usize> {
        let d = self.inter_dim();
        if p >= d {
            return Err(Error::OutOfRange { index: p, bound: d });
        }
        Ok(self.route_p2(p))
    }

    /// Output routing: slot `s` of output block `k′` (flat `k′·m + s`) goes
    /// to coordinate `s·N + k′`.
    pub fn shuffle_p1(&self, p: usize) -> Result<usize> {
        if p >= self.n {
            return Err(Error::OutOfRange {
                index: p,
                bound: self.n,
            });
        }
        Ok(self.route_p1(p))
    }

    #[inline]
    pub(crate) fn route_p2(&self, p: usize) -> usize {
        (p % self.blocks) * self.block_rank + p / self.blocks
    }

    #[inline]
    pub(crate) fn route_p1(&self, p: usize) -> usize {
        let m = self.block_size();
        (p % m) * self.blocks + p / m
    }
}

/// Trainable block-diagonal factors of a Monarch adapter.
#[derive(Debug, Clone, PartialEq)]
pub struct MonarchAdapter {
    config: MonarchConfig,
    /// `(N, r_blk, m)` row-major.
    factor_in: Vec<f64>,
    /// `(N, m, r_blk)` row-major.
    factor_out: Vec<f64>,
}

/// How to initialize a fresh adapter.
#[derive(Debug, Clone, PartialEq)]
pub enum InitMode {
    /// `factor_in` uniform in `±1/√m`, `factor_out` zero; the adapter
    /// starts as the zero map.
    ZeroOut,
    /// Frobenius-optimal projection of the given dense delta.
    Projection(DenseMatrix),
}

impl MonarchAdapter {
    pub fn zeros(config: MonarchConfig) -> Result<Self> {
        config.validate()?;
        let len = config.n * config.block_rank;
        Ok(Self {
            config,
            factor_in: vec![0.0; len],
            factor_out: vec![0.0; len],
        })
    }

    pub fn from_factors(config: MonarchConfig, factor_in: Vec<f64>, factor_out: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let len = config.n * config.block_rank;
        for (name, f) in [("factor_in", &factor_in), ("factor_out", &factor_out)] {
            if f.len() != len {
                return Err(Error::Shape(format!("{name} has {} entries, expected {len}", f.len())));
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(name.into()));
            }
        }
        Ok(Self {
            config,
            factor_in,
            factor_out,
        })
    }

    /// Seeded initialization.
    pub fn init(config: MonarchConfig, mode: &InitMode, seed: u64) -> Result<Self> {
        config.validate()?;
        match mode {
            InitMode::ZeroOut => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let bound = 1.0 / (config.block_size() as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                let mut adapter = Self::zeros(config)?;
                adapter.factor_in.iter_mut().for_each(|v| *v = dist.sample(&mut rng));
                Ok(adapter)
            }
            InitMode::Projection(delta) => Ok(crate::projection::project(delta, &config)?.adapter),
        }
    }

    /// Both factors filled with `scale · N(0,1)` draws.
    pub fn random_normal<R: Rng + ?Sized>(config: MonarchConfig, scale: f64, rng: &mut R) -> Result<Self> {
        let mut adapter = Self::zeros(config)?;
        for v in adapter.factor_in.iter_mut().chain(adapter.factor_out.iter_mut()) {
            let z: f64 = StandardNormal.sample(rng);
            *v = scale * z;
        }
        Ok(adapter)
    }

    pub fn config(&self) -> &MonarchConfig {
        &self.config
    }

    pub fn factor_in(&self) -> &[f64] {
        &self.factor_in
    }

    pub fn factor_out(&self) -> &[f64] {
        &self.factor_out
    }

    pub fn factors_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.factor_in, &mut self.factor_out)
    }

    /// Block `k` of `factor_in` as an `r_blk × m` row-major slice.
    pub fn in_block(&self, k: usize) -> &[f64] {
        let len = self.config.block_rank * self.config.block_size();
        &self.factor_in[k * len..(k + 1) * len]
    }

    /// Block `k` of `factor_out` as an `m × r_blk` row-major slice.
    pub fn out_block(&self, k: usize) -> &[f64] {
        let len = self.config.block_rank * self.config.block_size();
        &self.factor_out[k * len..(k + 1) * len]
    }

    pub fn param_count(&self) -> usize {
        param_count(&self.config)
    }

    /// Applies the adapter to every row of `x` (`batch × n`).
    pub fn apply(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        self.apply_with(Exec::available(), x)
    }

    pub fn apply_with(&self, exec: Exec, x: &DenseMatrix) -> Result<DenseMatrix> {
        if x.cols() != self.config.n {
            return Err(Error::Shape(format!(
                "input rows have length {}, adapter expects {}",
                x.cols(),
                self.config.n
            )));
        }
        let mut out = DenseMatrix::zeros(x.rows(), x.cols());
        par::for_each_row(exec, x.data(), out.data_mut(), self.config.n, |xr, yr| {
            self.apply_row(xr, yr)
        });
        Ok(out)
    }

    pub fn apply_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.config.n {
            return Err(Error::Shape(format!(
                "vector length {}, adapter expects {}",
                x.len(),
                self.config.n
            )));
        }
        let mut out = vec![0.0; x.len()];
        self.apply_row(x, &mut out);
        Ok(out)
    }

    /// Forward pass for one vector. Returns nothing; `out` is overwritten.
    fn apply_row(&self, x: &[f64], out: &mut [f64]) {
        let mut routed = vec![0.0; self.config.inter_dim()];
        self.first_stage(x, &mut routed);
        self.second_stage(&routed, out);
    }

    /// `factor_in` blocks followed by the P2 routing.
    pub(crate) fn first_stage(&self, x: &[f64], routed: &mut [f64]) {
        let MonarchConfig { blocks, block_rank, .. } = self.config;
        let m = self.config.block_size();
        for k in 0..blocks {
            let xk = &x[k * m..(k + 1) * m];
            let block = self.in_block(k);
            for j in 0..block_rank {
                let p = k * block_rank + j;
                routed[self.config.route_p2(p)] = dot(&block[j * m..(j + 1) * m], xk);
            }
        }
    }

    /// `factor_out` blocks followed by the P1 routing.
    pub(crate) fn second_stage(&self, routed: &[f64], out: &mut [f64]) {
        let MonarchConfig { blocks, block_rank, .. } = self.config;
        let m = self.config.block_size();
        for k in 0..blocks {
            let zk = &routed[k * block_rank..(k + 1) * block_rank];
            let block = self.out_block(k);
            for s in 0..m {
                out[s * blocks + k] = dot(&block[s * block_rank..(s + 1) * block_rank], zk);
            }
        }
    }

    /// Materializes `P1 · L · P2 · R` as explicit matrices and multiplies
    /// them out.
    pub fn to_dense(&self) -> DenseMatrix {
        let cfg = &self.config;
        let (n, d, m, r) = (cfg.n, cfg.inter_dim(), cfg.block_size(), cfg.block_rank);

        let p1 = permutation_matrix(n, |p| cfg.route_p1(p));
        let p2 = permutation_matrix(d, |p| cfg.route_p2(p));

        let mut left = DenseMatrix::zeros(n, d);
        let mut right = DenseMatrix::zeros(d, n);
        for k in 0..cfg.blocks {
            let (lb, rb) = (self.out_block(k), self.in_block(k));
            for s in 0..m {
                for j in 0..r {
                    left[(k * m + s, k * r + j)] = lb[s * r + j];
                    right[(k * r + j, k * m + s)] = rb[j * m + s];
                }
            }
        }
        [left, p2, right]
            .iter()
            .try_fold(p1, |acc, f| acc.matmul(f))
            .expect("conformable factors")
    }

    /// Numerical rank of the materialized matrix at relative tolerance 1e-10.
    pub fn rank(&self) -> Result<usize> {
        self.to_dense().numerical_rank(1e-10)
    }
}

/// `P[σ(p), p] = 1`, so `(P x)[σ(p)] = x[p]`.
fn permutation_matrix(size: usize, sigma: impl Fn(usize) -> usize) -> DenseMatrix {
    let mut p = DenseMatrix::zeros(size, size);
    for i in 0..size {
        p[(sigma(i), i)] = 1.0;
    }
    p
}

/// Trainable parameters of a Monarch adapter: `2 · n · r_blk`.
pub fn param_count(config: &MonarchConfig) -> usize {
    2 * config.n * config.block_rank
}

/// Trainable parameters of a rank-`r` LoRA adapter on an `n × n` weight.
pub fn lora_param_count(n: usize, r: usize) -> usize {
    2 * n * r
}

/// Multiply-add FLOPs for applying the adapter to `batch` vectors:
/// two block-diagonal stages of `2 · n · r_blk` each; routing is free.
pub fn apply_flops(config: &MonarchConfig, batch: usize) -> usize {
    4 * config.n * config.block_rank * batch
}

pub fn dense_flops(n: usize, batch: usize) -> usize {
    2 * n * n * batch
}

/// Monarch over dense FLOPs as a reduced fraction `(num, den)`; equals
/// `2 · r_blk / n`.
pub fn flop_ratio(config: &MonarchConfig) -> (usize, usize) {
    let (num, den) = (apply_flops(config, 1), dense_flops(config.n, 1));
    let g = gcd(num, den);
    (num / g, den / g)
}

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(n: usize, blocks: usize, r: usize) -> MonarchConfig {
        MonarchConfig::new(n, blocks, r).unwrap()
    }

    fn random(config: MonarchConfig, seed: u64) -> MonarchAdapter {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MonarchAdapter::random_normal(config, 1.0, &mut rng).unwrap()
    }

    #[test]
    fn flop_ratio_is_reduced() {
        assert_eq!(flop_ratio(&cfg(4096, 4, 8)), (1, 256));
        assert_eq!(flop_ratio(&cfg(64, 8, 8)), (1, 4));
        assert_eq!(flop_ratio(&cfg(12, 3, 3)), (1, 2));
    }

    #[test]
    fn config_validation() {
        assert!(MonarchConfig::new(15, 4, 1).is_err());
        assert!(MonarchConfig::new(16, 0, 1).is_err());
        assert!(MonarchConfig::new(16, 4, 0).is_err());
        assert!(MonarchConfig::new(16, 4, 5).is_err());
        let c = cfg(16, 4, 4);
        assert_eq!((c.block_size(), c.inter_dim()), (4, 16));
    }

    #[test]
    fn p2_examples() {
        let single = cfg(8, 1, 3);
        for p in 0..3 {
            assert_eq!(single.shuffle_p2(p).unwrap(), p);
        }
        let c = cfg(16, 4, 2);
        assert_eq!(c.shuffle_p2(1).unwrap(), 2);
        assert_eq!(
            (0..8).map(|p| c.shuffle_p2(p).unwrap()).collect::<Vec<_>>(),
            vec![0, 2, 4, 6, 1, 3, 5, 7]
        );
        assert!(matches!(c.shuffle_p2(8), Err(Error::OutOfRange { index: 8, bound: 8 })));
    }

    #[test]
    fn p1_examples() {
        let single = cfg(6, 1, 2);
        for p in 0..6 {
            assert_eq!(single.shuffle_p1(p).unwrap(), p);
        }
        let c = cfg(16, 4, 2);
        assert_eq!(c.shuffle_p1(5).unwrap(), 5);
        assert_eq!(c.shuffle_p1(1).unwrap(), 4);
        assert!(c.shuffle_p1(16).is_err());
    }

    #[test]
    fn permutations_are_bijections() {
        for n in [1, 4, 6, 12, 16, 30, 64] {
            for blocks in (1..=n).filter(|b| n % b == 0) {
                for r in 1..=n / blocks {
                    let c = cfg(n, blocks, r);
                    let mut seen = vec![false; c.inter_dim()];
                    for p in 0..c.inter_dim() {
                        seen[c.shuffle_p2(p).unwrap()] = true;
                    }
                    assert!(seen.iter().all(|&s| s));
                    let mut seen = vec![false; n];
                    for p in 0..n {
                        seen[c.shuffle_p1(p).unwrap()] = true;
                    }
                    assert!(seen.iter().all(|&s| s));
                }
            }
        }
    }

    #[test]
    fn zero_out_init() {
        let c = cfg(16, 4, 2);
        let a = MonarchAdapter::init(c, &InitMode::ZeroOut, 42).unwrap();
        assert!(a.factor_out().iter().all(|&v| v == 0.0));
        assert!(a.factor_in().iter().all(|&v| v.abs() <= 0.5));
        assert!(a.factor_in().iter().any(|&v| v != 0.0));
        let x: Vec<f64> = (0..16).map(|i| i as f64 - 3.5).collect();
        assert!(a.apply_vec(&x).unwrap().iter().all(|&v| v == 0.0));
        assert_eq!(a, MonarchAdapter::init(c, &InitMode::ZeroOut, 42).unwrap());
        assert_ne!(a, MonarchAdapter::init(c, &InitMode::ZeroOut, 43).unwrap());
    }

    #[test]
    fn projection_init_recovers_planted() {
        let c = cfg(16, 4, 2);
        let planted = random(c, 8);
        let delta = planted.to_dense();
        let a = MonarchAdapter::init(c, &InitMode::Projection(delta.clone()), 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = DenseMatrix::random_normal(5, 16, 1.0, &mut rng);
        let expected = x.matmul_transposed(&delta).unwrap();
        assert!(a.apply(&x).unwrap().max_abs_diff(&expected).unwrap() < 1e-9);
    }

    #[test]
    fn single_block_is_two_matrix_product() {
        let c = cfg(6, 1, 2);
        let a = random(c, 3);
        let r = DenseMatrix::new(2, 6, a.factor_in().to_vec()).unwrap();
        let l = DenseMatrix::new(6, 2, a.factor_out().to_vec()).unwrap();
        let x = [0.3, -1.0, 2.0, 0.5, 0.0, 1.5];
        let expected = l.matvec(&r.matvec(&x).unwrap()).unwrap();
        let got = a.apply_vec(&x).unwrap();
        for (g, e) in got.iter().zip(&expected) {
            assert!((g - e).abs() < 1e-12);
        }
        assert!(a.to_dense().max_abs_diff(&l.matmul(&r).unwrap()).unwrap() < 1e-12);
    }

    #[test]
    fn dense_matches_apply_on_fig1_config() {
        let a = random(cfg(16, 4, 2), 11);
        let dense = a.to_dense();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = DenseMatrix::random_normal(7, 16, 1.0, &mut rng);
        let diff = a
            .apply(&x)
            .unwrap()
            .max_abs_diff(&x.matmul_transposed(&dense).unwrap())
            .unwrap();
        assert!(diff < 1e-10, "{diff}");
    }

    #[test]
    fn dense_columns_are_basis_probes() {
        let a = random(cfg(12, 3, 2), 5);
        let dense = a.to_dense();
        for j in 0..12 {
            let mut e = vec![0.0; 12];
            e[j] = 1.0;
            let col = a.apply_vec(&e).unwrap();
            for i in 0..12 {
                assert!((dense[(i, j)] - col[i]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn identity_blocks_give_identity() {
        let c = cfg(5, 1, 5);
        let eye = DenseMatrix::identity(5).into_data();
        let a = MonarchAdapter::from_factors(c, eye.clone(), eye).unwrap();
        assert_eq!(a.to_dense(), DenseMatrix::identity(5));
        assert_eq!(MonarchAdapter::zeros(c).unwrap().to_dense(), DenseMatrix::zeros(5, 5));
    }

    #[test]
    fn apply_shape_errors() {
        let a = MonarchAdapter::zeros(cfg(8, 2, 1)).unwrap();
        assert!(matches!(a.apply(&DenseMatrix::zeros(2, 7)), Err(Error::Shape(_))));
        assert!(a.apply_vec(&[0.0; 9]).is_err());
        assert!(MonarchAdapter::from_factors(cfg(8, 2, 1), vec![0.0; 3], vec![0.0; 8]).is_err());
    }

    #[test]
    fn sequential_and_parallel_agree_bitwise() {
        let a = random(cfg(32, 4, 3), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = DenseMatrix::random_normal(100, 32, 1.0, &mut rng);
        assert_eq!(
            a.apply_with(Exec::Sequential, &x).unwrap(),
            a.apply_with(Exec::Parallel, &x).unwrap()
        );
    }

    #[test]
    fn accounting() {
        assert_eq!(param_count(&cfg(1024, 4, 8)), 16384);
        assert_eq!(param_count(&cfg(1024, 4, 8)), lora_param_count(1024, 8));
        assert_eq!(param_count(&cfg(16, 4, 2)), 64);
        assert_eq!(lora_param_count(1024, 32), 65536);
        assert_eq!(4 * param_count(&cfg(1024, 4, 8)), lora_param_count(1024, 32));

        let c = cfg(4096, 4, 8);
        assert_eq!(apply_flops(&c, 1), 131072);
        assert_eq!(dense_flops(4096, 1), 33554432);
        assert_eq!(dense_flops(4096, 1) / apply_flops(&c, 1), 256);
        assert_eq!(apply_flops(&c, 16), 16 * apply_flops(&c, 1));
        assert_eq!(dense_flops(4096, 16), 16 * dense_flops(4096, 1));
        // classic square configuration: N = m = r_blk = √n
        let sq = cfg(64, 8, 8);
        assert_eq!(apply_flops(&sq, 1), 4 * 64 * 8);
    }

    #[test]
    fn rank_examples() {
        assert_eq!(MonarchAdapter::zeros(cfg(16, 4, 2)).unwrap().rank().unwrap(), 0);
        assert_eq!(random(cfg(16, 1, 4), 2).rank().unwrap(), 4);
        let a = random(cfg(64, 4, 8), 3);
        let s = crate::numerics::svd(&a.to_dense()).unwrap().singular_values;
        assert!(s[31] > 1e-8 * s[0]);
        assert!(s[32] < 1e-10 * s[0]);
        assert_eq!(a.rank().unwrap(), 32);
    }

    proptest! {
        #[test]
        fn apply_is_linear(seed in any::<u64>(), alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
            let a = random(cfg(24, 4, 3), seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
            let x = DenseMatrix::random_normal(1, 24, 1.0, &mut rng).into_data();
            let y = DenseMatrix::random_normal(1, 24, 1.0, &mut rng).into_data();
            let mix: Vec<f64> = x.iter().zip(&y).map(|(a, b)| alpha * a + beta * b).collect();
            let (ax, ay, am) = (a.apply_vec(&x).unwrap(), a.apply_vec(&y).unwrap(), a.apply_vec(&mix).unwrap());
            for i in 0..24 {
                prop_assert!((am[i] - alpha * ax[i] - beta * ay[i]).abs() < 1e-10);
            }
        }

        #[test]
        fn rank_never_exceeds_cap(seed in any::<u64>(), pick in 0usize..6) {
            let (n, blocks, r) = [(16, 4, 1), (16, 2, 3), (18, 3, 2), (20, 5, 4), (12, 6, 2), (16, 8, 2)][pick];
            let c = cfg(n, blocks, r);
            let a = random(c, seed);
            prop_assert!(a.rank().unwrap() <= c.max_rank());
        }
    }
}
