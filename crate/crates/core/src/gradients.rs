//! Reverse-mode gradients through the Monarch pipeline, the two training
//! losses, and a central-difference gradient checker.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::monarch::MonarchAdapter;
use crate::numerics::{DenseMatrix, Vector};
use crate::par::{self, Exec, CHUNK_ROWS};

/// Gradients with the same layout as the adapter's factors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterGrads {
    /// `(N, r_blk, m)`
    pub d_factor_in: Vec<f64>,
    /// `(N, m, r_blk)`
    pub d_factor_out: Vec<f64>,
    /// `batch × n`
    pub d_input: DenseMatrix,
}

/// Moves `input[p]` to `output[map[p]]`.
pub fn route_forward(map: &[usize], input: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; input.len()];
    for (p, &q) in map.iter().enumerate() {
        out[q] = input[p];
    }
    out
}

/// Adjoint of [`route_forward`]: `grad_in[p] = grad_out[map[p]]`.
pub fn route_backward(map: &[usize], grad_out: &[f64]) -> Vec<f64> {
    map.iter().map(|&q| grad_out[q]).collect()
}

/// Gradients of `Σ_rows ⟨upstream_row, apply(x_row)⟩`.
pub fn backward(adapter: &MonarchAdapter, x: &DenseMatrix, upstream: &DenseMatrix) -> Result<AdapterGrads> {
    backward_with(Exec::available(), adapter, x, upstream)
}

/// Rows are split into fixed chunks whose partial sums are added in chunk
/// order, so the result does not depend on the thread count.
pub fn backward_with(
    exec: Exec,
    adapter: &MonarchAdapter,
    x: &DenseMatrix,
    upstream: &DenseMatrix,
) -> Result<AdapterGrads> {
    let cfg = *adapter.config();
    let n = cfg.n;
    if x.cols() != n || upstream.shape() != x.shape() {
        return Err(Error::Shape(format!(
            "input {}x{} and upstream {}x{} for adapter of dim {n}",
            x.rows(),
            x.cols(),
            upstream.rows(),
            upstream.cols()
        )));
    }
    let batch = x.rows();
    let chunks = batch.div_ceil(CHUNK_ROWS);
    let partials = par::map_indexed(exec, chunks, |c| {
        let rows = c * CHUNK_ROWS..((c + 1) * CHUNK_ROWS).min(batch);
        let mut d_in = vec![0.0; adapter.factor_in().len()];
        let mut d_out = vec![0.0; adapter.factor_out().len()];
        let mut d_x = Vec::with_capacity(rows.len() * n);
        for i in rows {
            d_x.extend(backward_row(adapter, x.row(i), upstream.row(i), &mut d_in, &mut d_out));
        }
        (d_in, d_out, d_x)
    });

    let mut d_factor_in = vec![0.0; adapter.factor_in().len()];
    let mut d_factor_out = vec![0.0; adapter.factor_out().len()];
    let mut d_input = Vec::with_capacity(batch * n);
    for (d_in, d_out, d_x) in partials {
        d_factor_in.iter_mut().zip(&d_in).for_each(|(a, b)| *a += b);
        d_factor_out.iter_mut().zip(&d_out).for_each(|(a, b)| *a += b);
        d_input.extend(d_x);
    }
    Ok(AdapterGrads {
        d_factor_in,
        d_factor_out,
        d_input: DenseMatrix::new(batch, n, d_input)?,
    })
}

/// Accumulates factor gradients for one row and returns its input gradient.
fn backward_row(
    adapter: &MonarchAdapter,
    x: &[f64],
    upstream: &[f64],
    d_in: &mut [f64],
    d_out: &mut [f64],
) -> Vec<f64> {
    let cfg = adapter.config();
    let (blocks, r, m) = (cfg.blocks, cfg.block_rank, cfg.block_size());
    let block_len = r * m;

    let mut routed = vec![0.0; cfg.inter_dim()];
    adapter.first_stage(x, &mut routed);

    // second stage: out[s·N + k] = Σ_j L[k][s][j] · routed[k·r + j]
    let mut g_routed = vec![0.0; cfg.inter_dim()];
    for k in 0..blocks {
        let lb = adapter.out_block(k);
        let zk = &routed[k * r..(k + 1) * r];
        let dl = &mut d_out[k * block_len..(k + 1) * block_len];
        let gz = &mut g_routed[k * r..(k + 1) * r];
        for s in 0..m {
            let g = upstream[s * blocks + k];
            if g == 0.0 {
                continue;
            }
            for j in 0..r {
                dl[s * r + j] += g * zk[j];
                gz[j] += g * lb[s * r + j];
            }
        }
    }

    // first stage: routed[P2(k·r + j)] = Σ_t R[k][j][t] · x[k·m + t]
    let mut d_x = vec![0.0; cfg.n];
    for k in 0..blocks {
        let rb = adapter.in_block(k);
        let xk = &x[k * m..(k + 1) * m];
        let dr = &mut d_in[k * block_len..(k + 1) * block_len];
        let dxk = &mut d_x[k * m..(k + 1) * m];
        for j in 0..r {
            let g = g_routed[cfg.route_p2(k * r + j)];
            if g == 0.0 {
                continue;
            }
            for t in 0..m {
                dr[j * m + t] += g * xk[t];
                dxk[t] += g * rb[j * m + t];
            }
        }
    }
    d_x
}

/// Factor gradients given `∂ℓ/∂M` for the materialized matrix `M`, summed
/// channel by channel. This is the merged-weight formulation of the same
/// derivative that [`backward`] computes from activations.
pub fn backward_dense(adapter: &MonarchAdapter, d_matrix: &DenseMatrix) -> Result<(Vec<f64>, Vec<f64>)> {
    let cfg = adapter.config();
    let (n, blocks, r, m) = (cfg.n, cfg.blocks, cfg.block_rank, cfg.block_size());
    if d_matrix.shape() != (n, n) {
        return Err(Error::Shape(format!(
            "matrix gradient is {}x{}, expected {n}x{n}",
            d_matrix.rows(),
            d_matrix.cols()
        )));
    }
    let mut d_in = vec![0.0; adapter.factor_in().len()];
    let mut d_out = vec![0.0; adapter.factor_out().len()];
    for k in 0..blocks {
        for j in 0..r {
            let q = cfg.route_p2(k * r + j);
            let (k_out, j_out) = (q / r, q % r);
            for s in 0..m {
                let out_idx = k_out * m * r + s * r + j_out;
                for t in 0..m {
                    let g = d_matrix[(s * blocks + k_out, k * m + t)];
                    let in_idx = k * m * r + j * m + t;
                    d_out[out_idx] += g * adapter.factor_in()[in_idx];
                    d_in[in_idx] += g * adapter.factor_out()[out_idx];
                }
            }
        }
    }
    Ok((d_in, d_out))
}

/// Training objectives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// `Σ (out − y)² / (batch · n)`
    Mse,
    /// Mean cross-entropy of softmax over each output row.
    SoftmaxXent,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Dense(DenseMatrix),
    Labels(Vec<usize>),
}

/// Loss value and `∂ℓ/∂outputs`.
pub fn loss_and_grad(loss: Loss, outputs: &DenseMatrix, targets: &Targets) -> Result<(f64, DenseMatrix)> {
    let (batch, width) = outputs.shape();
    match (loss, targets) {
        (Loss::Mse, Targets::Dense(y)) => {
            if y.shape() != outputs.shape() {
                return Err(Error::Shape("mse targets do not match outputs".into()));
            }
            let scale = 1.0 / (batch * width) as f64;
            let diff = outputs.sub(y)?;
            let value = diff.fro_norm_sq() * scale;
            Ok((value, diff.scale(2.0 * scale)))
        }
        (Loss::SoftmaxXent, Targets::Labels(labels)) => {
            if labels.len() != batch || labels.iter().any(|&l| l >= width) {
                return Err(Error::Shape("labels do not match outputs".into()));
            }
            let mut grad = DenseMatrix::zeros(batch, width);
            let mut total = 0.0;
            for (i, &label) in labels.iter().enumerate() {
                let row = outputs.row(i);
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let denom: f64 = row.iter().map(|v| (v - max).exp()).sum();
                total += denom.ln() + max - row[label];
                for (g, v) in grad.row_mut(i).iter_mut().zip(row) {
                    *g = (v - max).exp() / denom / batch as f64;
                }
                grad[(i, label)] -= 1.0 / batch as f64;
            }
            Ok((total / batch as f64, grad))
        }
        _ => Err(Error::Config(format!("loss {loss:?} does not match target kind"))),
    }
}

/// Inputs for a gradient check: optional frozen base layer, a batch and
/// its targets.
#[derive(Debug, Clone)]
pub struct CheckData {
    pub base: Option<(DenseMatrix, Vector)>,
    pub inputs: DenseMatrix,
    pub targets: Targets,
}

impl CheckData {
    fn outputs(&self, adapter: &MonarchAdapter) -> Result<DenseMatrix> {
        let mut out = adapter.apply(&self.inputs)?;
        if let Some((w, b)) = &self.base {
            let base = self.inputs.matmul_transposed(w)?;
            let n = b.len();
            for (i, o) in out.data_mut().iter_mut().enumerate() {
                *o += base.data()[i] + b.as_slice()[i % n];
            }
        }
        Ok(out)
    }

    pub fn loss(&self, adapter: &MonarchAdapter, loss: Loss) -> Result<f64> {
        let (value, _) = loss_and_grad(loss, &self.outputs(adapter)?, &self.targets)?;
        if !value.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        Ok(value)
    }

    pub fn gradients(&self, adapter: &MonarchAdapter, loss: Loss) -> Result<AdapterGrads> {
        let (_, upstream) = loss_and_grad(loss, &self.outputs(adapter)?, &self.targets)?;
        backward(adapter, &self.inputs, &upstream)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Factor {
    In,
    Out,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Coordinate {
    pub factor: Factor,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_coordinate: Option<Coordinate>,
    pub checked: usize,
}

/// Exhaustive below this many parameters, sampled above.
pub const EXHAUSTIVE_LIMIT: usize = 10_000;
pub const SAMPLED_COORDINATES: usize = 512;
pub const DEFAULT_STEP: f64 = 1e-6;

/// Compares analytic gradients against central differences
/// `(ℓ(θ+h) − ℓ(θ−h)) / 2h`, with relative error denominator
/// `max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check(
    adapter: &MonarchAdapter,
    loss: Loss,
    data: &CheckData,
    h: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    if !(1e-8..=1e-4).contains(&h) {
        return Err(Error::Config(format!("step {h} outside [1e-8, 1e-4]")));
    }
    let analytic = data.gradients(adapter, loss)?;
    let half = adapter.factor_in().len();
    let total = 2 * half;
    let coords: Vec<usize> = if total > EXHAUSTIVE_LIMIT {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = sample(&mut rng, total, SAMPLED_COORDINATES).into_vec();
        picked.sort_unstable();
        picked
    } else {
        (0..total).collect()
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_coordinate: None,
        checked: coords.len(),
    };
    let mut probe = adapter.clone();
    for idx in coords {
        let coord = if idx < half {
            Coordinate {
                factor: Factor::In,
                index: idx,
            }
        } else {
            Coordinate {
                factor: Factor::Out,
                index: idx - half,
            }
        };
        let analytic = match coord.factor {
            Factor::In => analytic.d_factor_in[coord.index],
            Factor::Out => analytic.d_factor_out[coord.index],
        };
        let original = slot(&mut probe, coord);
        *slot_mut(&mut probe, coord) = original + h;
        let plus = data.loss(&probe, loss)?;
        *slot_mut(&mut probe, coord) = original - h;
        let minus = data.loss(&probe, loss)?;
        *slot_mut(&mut probe, coord) = original;

        let numeric = (plus - minus) / (2.0 * h);
        let denom = analytic.abs().max(numeric.abs()).max(1e-8);
        let rel = (analytic - numeric).abs() / denom;
        if report.worst_coordinate.is_none() || rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst_coordinate = Some(coord);
        }
    }
    Ok(report)
}

fn slot(a: &mut MonarchAdapter, c: Coordinate) -> f64 {
    *slot_mut(a, c)
}

fn slot_mut(a: &mut MonarchAdapter, c: Coordinate) -> &mut f64 {
    let (fin, fout) = a.factors_mut();
    match c.factor {
        Factor::In => &mut fin[c.index],
        Factor::Out => &mut fout[c.index],
    }
}
