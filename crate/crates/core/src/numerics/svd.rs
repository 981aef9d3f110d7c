use super::{dot, DenseMatrix};
use crate::error::{Error, Result};

/// Sweep cap for the Jacobi iteration.
pub const MAX_SWEEPS: usize = 100;

/// A column pair is treated as orthogonal once `|⟨a,b⟩| ≤ tol · ‖a‖‖b‖`.
pub const ROTATION_TOL: f64 = 1e-12;

/// Thin singular value decomposition `a = u · diag(s) · vt`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdResult {
    /// `rows × k`, orthonormal columns.
    pub u: DenseMatrix,
    /// Non-increasing, non-negative, length `k`.
    pub singular_values: Vec<f64>,
    /// `k × cols`, orthonormal rows.
    pub vt: DenseMatrix,
}

impl SvdResult {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    /// `u · diag(s) · vt`.
    pub fn reconstruct(&self) -> DenseMatrix {
        let k = self.rank();
        let us = DenseMatrix::from_fn(self.u.rows(), k, |i, j| self.u[(i, j)] * self.singular_values[j]);
        us.matmul(&self.vt).expect("factor shapes agree")
    }

    /// Keeps the leading `q` triplets.
    fn leading(&self, q: usize) -> SvdResult {
        let u = DenseMatrix::from_fn(self.u.rows(), q, |i, j| self.u[(i, j)]);
        let vt = DenseMatrix::from_fn(q, self.vt.cols(), |i, j| self.vt[(i, j)]);
        SvdResult {
            u,
            singular_values: self.singular_values[..q].to_vec(),
            vt,
        }
    }
}

/// Full thin SVD by one-sided (Hestenes) Jacobi rotations.
///
/// The largest-magnitude entry of every left singular vector is made
/// positive, so the factors are deterministic for simple spectra.
pub fn svd(a: &DenseMatrix) -> Result<SvdResult> {
    let (rows, cols) = a.shape();
    if rows < cols {
        let t = svd_tall(&a.transpose())?;
        // aᵀ = U S Vᵀ  ⇒  a = V S Uᵀ
        let mut out = SvdResult {
            u: t.vt.transpose(),
            singular_values: t.singular_values,
            vt: t.u.transpose(),
        };
        fix_signs(&mut out);
        return Ok(out);
    }
    let mut out = svd_tall(a)?;
    fix_signs(&mut out);
    Ok(out)
}

/// Top-`q` SVD plus the discarded energy `Σ_{i>q} σ_i²`.
pub fn truncated_svd(a: &DenseMatrix, q: usize) -> Result<(SvdResult, f64)> {
    let k = a.rows().min(a.cols());
    if q > k {
        return Err(Error::Config(format!("truncation rank {q} exceeds min dimension {k}")));
    }
    if q == 0 {
        let empty = SvdResult {
            u: DenseMatrix::zeros(a.rows(), 0),
            singular_values: Vec::new(),
            vt: DenseMatrix::zeros(0, a.cols()),
        };
        return Ok((empty, a.fro_norm_sq()));
    }
    let full = svd(a)?;
    let residual = full.singular_values[q..].iter().map(|s| s * s).sum();
    Ok((full.leading(q), residual))
}

/// SVD for `rows ≥ cols`.
fn svd_tall(a: &DenseMatrix) -> Result<SvdResult> {
    let (rows, cols) = a.shape();
    debug_assert!(rows >= cols);

    let mut w: Vec<Vec<f64>> = (0..cols).map(|j| a.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..cols)
        .map(|j| {
            let mut e = vec![0.0; cols];
            e[j] = 1.0;
            e
        })
        .collect();

    // Columns whose squared norm falls below this are rounding noise.
    let negligible = (f64::EPSILON * a.fro_norm()).powi(2);

    let mut converged = cols < 2;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha = dot(&w[p], &w[p]);
                let beta = dot(&w[q], &w[q]);
                if alpha <= negligible || beta <= negligible {
                    continue;
                }
                let gamma = dot(&w[p], &w[q]);
                if gamma.abs() <= ROTATION_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut w, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        converged = !rotated;
    }
    if !converged {
        return Err(Error::NoConvergence { sweeps: MAX_SWEEPS });
    }

    let sigma: Vec<f64> = w.iter().map(|c| dot(c, c).sqrt()).collect();
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]).then(i.cmp(&j)));

    let mut u_cols: Vec<Option<Vec<f64>>> = order
        .iter()
        .map(|&j| {
            (sigma[j] * sigma[j] > negligible && sigma[j] > 0.0).then(|| w[j].iter().map(|x| x / sigma[j]).collect())
        })
        .collect();
    complete_basis(&mut u_cols, rows);

    let u = DenseMatrix::from_fn(rows, cols, |i, j| u_cols[j].as_ref().expect("completed")[i]);
    let vt = DenseMatrix::from_fn(cols, cols, |i, j| v[order[i]][j]);
    Ok(SvdResult {
        u,
        singular_values: order.iter().map(|&j| sigma[j]).collect(),
        vt,
    })
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (head, tail) = cols.split_at_mut(q);
    let (cp, cq) = (&mut head[p], &mut tail[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = *x;
        *x = c * xp - s * *y;
        *y = s * xp + c * *y;
    }
}

/// Fills missing columns with unit vectors orthogonal to the ones present,
/// drawn from the standard basis by modified Gram–Schmidt.
fn complete_basis(cols: &mut [Option<Vec<f64>>], dim: usize) {
    for slot in 0..cols.len() {
        if cols[slot].is_some() {
            continue;
        }
        let mut best: Option<(f64, Vec<f64>)> = None;
        for e in 0..dim {
            let mut cand = vec![0.0; dim];
            cand[e] = 1.0;
            for _ in 0..2 {
                for other in cols.iter().flatten() {
                    let proj = dot(&cand, other);
                    for (c, o) in cand.iter_mut().zip(other) {
                        *c -= proj * o;
                    }
                }
            }
            let norm = dot(&cand, &cand).sqrt();
            if best.as_ref().is_none_or(|(n, _)| norm > *n) {
                best = Some((norm, cand));
            }
        }
        let (norm, cand) = best.expect("dim > 0 when columns are missing");
        cols[slot] = Some(cand.into_iter().map(|x| x / norm).collect());
    }
}

fn fix_signs(svd: &mut SvdResult) {
    let (rows, k) = svd.u.shape();
    for j in 0..k {
        let mut pivot = 0.0_f64;
        for i in 0..rows {
            let x = svd.u[(i, j)];
            if x.abs() > pivot.abs() {
                pivot = x;
            }
        }
        if pivot < 0.0 {
            for i in 0..rows {
                svd.u[(i, j)] = -svd.u[(i, j)];
            }
            for c in 0..svd.vt.cols() {
                svd.vt[(j, c)] = -svd.vt[(j, c)];
            }
        }
    }
}
