//! Low-rank baseline adapter `Δ = up · down`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::monarch::{lora_param_count, LinearDelta};
use crate::numerics::DenseMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    /// `r × n`
    down: DenseMatrix,
    /// `n × r`
    up: DenseMatrix,
}

/// Gradients of `Σ ⟨upstream, Δ x⟩` for a LoRA adapter.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraGrads {
    pub d_down: DenseMatrix,
    pub d_up: DenseMatrix,
    pub d_input: DenseMatrix,
}

impl LoraAdapter {
    fn check(n: usize, r: usize) -> Result<()> {
        if n == 0 || r == 0 || r > n {
            return Err(Error::Config(format!("LoRA rank {r} invalid for n = {n}")));
        }
        Ok(())
    }

    pub fn zeros(n: usize, r: usize) -> Result<Self> {
        Self::check(n, r)?;
        Ok(Self {
            down: DenseMatrix::zeros(r, n),
            up: DenseMatrix::zeros(n, r),
        })
    }

    pub fn from_factors(down: DenseMatrix, up: DenseMatrix) -> Result<Self> {
        let (r, n) = down.shape();
        Self::check(n, r)?;
        if up.shape() != (n, r) {
            return Err(Error::Shape(format!(
                "up is {}x{}, expected {n}x{r}",
                up.rows(),
                up.cols()
            )));
        }
        Ok(Self { down, up })
    }

    /// `down` uniform in `±1/√n`, `up` zero. Draws the same stream as a
    /// single-block Monarch adapter initialized with the same seed.
    pub fn init(n: usize, r: usize, seed: u64) -> Result<Self> {
        let mut a = Self::zeros(n, r)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (n as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        a.down.data_mut().iter_mut().for_each(|v| *v = dist.sample(&mut rng));
        Ok(a)
    }

    pub fn random_normal<R: Rng + ?Sized>(n: usize, r: usize, scale: f64, rng: &mut R) -> Result<Self> {
        Self::check(n, r)?;
        let down = DenseMatrix::random_normal(r, n, scale, rng);
        let up = DenseMatrix::random_normal(n, r, scale, rng);
        Ok(Self { down, up })
    }

    pub fn n(&self) -> usize {
        self.down.cols()
    }

    pub fn rank(&self) -> usize {
        self.down.rows()
    }

    pub fn down(&self) -> &DenseMatrix {
        &self.down
    }

    pub fn up(&self) -> &DenseMatrix {
        &self.up
    }

    pub fn factors_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (self.down.data_mut(), self.up.data_mut())
    }

    pub fn backward(&self, x: &DenseMatrix, upstream: &DenseMatrix) -> Result<LoraGrads> {
        if x.cols() != self.n() || upstream.shape() != x.shape() {
            return Err(Error::Shape(format!(
                "input {}x{} / upstream {}x{} for LoRA of dim {}",
                x.rows(),
                x.cols(),
                upstream.rows(),
                upstream.cols(),
                self.n()
            )));
        }
        let hidden = x.matmul_transposed(&self.down)?;
        let g_hidden = upstream.matmul(&self.up)?;
        Ok(LoraGrads {
            d_up: upstream.transpose().matmul(&hidden)?,
            d_down: g_hidden.transpose().matmul(x)?,
            d_input: g_hidden.matmul(&self.down)?,
        })
    }
}

impl LinearDelta for LoraAdapter {
    fn dim(&self) -> usize {
        self.n()
    }

    fn apply(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        if x.cols() != self.n() {
            return Err(Error::Shape(format!(
                "input rows have length {}, adapter expects {}",
                x.cols(),
                self.n()
            )));
        }
        x.matmul_transposed(&self.down)?.matmul_transposed(&self.up)
    }

    fn to_dense(&self) -> DenseMatrix {
        self.up.matmul(&self.down).expect("conformable")
    }

    fn param_count(&self) -> usize {
        lora_param_count(self.n(), self.rank())
    }
}
