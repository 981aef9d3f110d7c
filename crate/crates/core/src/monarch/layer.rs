use super::MonarchAdapter;
use crate::error::{Error, Result};
use crate::lora::LoraAdapter;
use crate::numerics::{DenseMatrix, Vector};

/// A trainable additive update to an `n × n` weight.
pub trait LinearDelta {
    fn dim(&self) -> usize;
    /// Applies the update to every row of `x`.
    fn apply(&self, x: &DenseMatrix) -> Result<DenseMatrix>;
    fn to_dense(&self) -> DenseMatrix;
    fn param_count(&self) -> usize;
}

impl LinearDelta for MonarchAdapter {
    fn dim(&self) -> usize {
        self.config().n
    }

    fn apply(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        MonarchAdapter::apply(self, x)
    }

    fn to_dense(&self) -> DenseMatrix {
        MonarchAdapter::to_dense(self)
    }

    fn param_count(&self) -> usize {
        MonarchAdapter::param_count(self)
    }
}

/// Either adapter family attached to a layer.
#[derive(Debug, Clone, PartialEq)]
pub enum Adapter {
    Monarch(MonarchAdapter),
    Lora(LoraAdapter),
}

impl Adapter {
    fn inner(&self) -> &dyn LinearDelta {
        match self {
            Adapter::Monarch(a) => a,
            Adapter::Lora(a) => a,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Adapter::Monarch(_) => "more",
            Adapter::Lora(_) => "lora",
        }
    }
}

impl LinearDelta for Adapter {
    fn dim(&self) -> usize {
        self.inner().dim()
    }

    fn apply(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        self.inner().apply(x)
    }

    fn to_dense(&self) -> DenseMatrix {
        self.inner().to_dense()
    }

    fn param_count(&self) -> usize {
        self.inner().param_count()
    }
}

/// `Φ(x) = W x + Δ x + b` with `W` and `b` frozen.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterLayer {
    base_weight: DenseMatrix,
    bias: Vector,
    adapter: Adapter,
}

impl AdapterLayer {
    pub fn new(base_weight: DenseMatrix, bias: Vector, adapter: Adapter) -> Result<Self> {
        let n = adapter.dim();
        if base_weight.shape() != (n, n) {
            return Err(Error::Shape(format!(
                "base weight is {}x{}, adapter needs {n}x{n}",
                base_weight.rows(),
                base_weight.cols()
            )));
        }
        if bias.len() != n {
            return Err(Error::Shape(format!("bias length {} != {n}", bias.len())));
        }
        Ok(Self {
            base_weight,
            bias,
            adapter,
        })
    }

    pub fn base_weight(&self) -> &DenseMatrix {
        &self.base_weight
    }

    pub fn bias(&self) -> &Vector {
        &self.bias
    }

    pub fn adapter(&self) -> &Adapter {
        &self.adapter
    }

    pub fn adapter_mut(&mut self) -> &mut Adapter {
        &mut self.adapter
    }

    /// Additive path: `x Wᵀ + b + Δ(x)` for each row `x`.
    pub fn forward(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        let mut out = x.matmul_transposed(&self.base_weight)?;
        let delta = self.adapter.apply(x)?;
        for (o, d) in out.data_mut().iter_mut().zip(delta.data()) {
            *o += d;
        }
        self.add_bias(&mut out);
        Ok(out)
    }

    /// Merged path: one dense product with `W + Δ`.
    pub fn forward_merged(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        let mut out = x.matmul_transposed(&self.merge())?;
        self.add_bias(&mut out);
        Ok(out)
    }

    /// Absorbs the adapter into the frozen weight.
    pub fn merge(&self) -> DenseMatrix {
        self.base_weight
            .add(&self.adapter.to_dense())
            .expect("shapes checked at construction")
    }

    fn add_bias(&self, out: &mut DenseMatrix) {
        let n = self.bias.len();
        for row in out.data_mut().chunks_mut(n) {
            for (o, b) in row.iter_mut().zip(self.bias.as_slice()) {
                *o += b;
            }
        }
    }
}
