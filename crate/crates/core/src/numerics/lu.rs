use super::DenseMatrix;
use crate::error::{Error, Result};

/// LU factorization with partial pivoting, stored packed in one matrix.
struct Lu {
    packed: DenseMatrix,
    perm: Vec<usize>,
}

fn factor(a: &DenseMatrix) -> Result<Lu> {
    if !a.is_square() {
        return Err(Error::Shape(format!(
            "LU needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    let n = a.rows();
    let mut lu = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let scale = a.data().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    for k in 0..n {
        let pivot_row = (k..n)
            .max_by(|&i, &j| lu[(i, k)].abs().total_cmp(&lu[(j, k)].abs()))
            .expect("non-empty range");
        if lu[(pivot_row, k)].abs() <= f64::EPSILON * scale * n as f64 {
            return Err(Error::Singular(format!("zero pivot in column {k}")));
        }
        if pivot_row != k {
            for j in 0..n {
                let tmp = lu[(k, j)];
                lu[(k, j)] = lu[(pivot_row, j)];
                lu[(pivot_row, j)] = tmp;
            }
            perm.swap(k, pivot_row);
        }
        let pivot = lu[(k, k)];
        for i in k + 1..n {
            let factor = lu[(i, k)] / pivot;
            lu[(i, k)] = factor;
            for j in k + 1..n {
                lu[(i, j)] -= factor * lu[(k, j)];
            }
        }
    }
    Ok(Lu { packed: lu, perm })
}

impl Lu {
    fn solve_column(&self, b: &[f64]) -> Vec<f64> {
        let n = self.perm.len();
        let mut y: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            for j in 0..i {
                y[i] -= self.packed[(i, j)] * y[j];
            }
        }
        for i in (0..n).rev() {
            for j in i + 1..n {
                y[i] -= self.packed[(i, j)] * y[j];
            }
            y[i] /= self.packed[(i, i)];
        }
        y
    }
}

/// Solves `a · x = b` for every column of `b`.
pub fn solve(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if b.rows() != a.rows() {
        return Err(Error::Shape(format!(
            "rhs has {} rows, expected {}",
            b.rows(),
            a.rows()
        )));
    }
    let lu = factor(a)?;
    let mut out = DenseMatrix::zeros(a.cols(), b.cols());
    for j in 0..b.cols() {
        let x = lu.solve_column(&b.column(j));
        for (i, v) in x.into_iter().enumerate() {
            out[(i, j)] = v;
        }
    }
    if out.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("solution is not finite".into()));
    }
    Ok(out)
}

pub fn inverse(a: &DenseMatrix) -> Result<DenseMatrix> {
    solve(a, &DenseMatrix::identity(a.rows()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn inverse_of_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = DenseMatrix::random_normal(7, 7, 1.0, &mut rng);
        let prod = a.matmul(&inverse(&a).unwrap()).unwrap();
        assert!(prod.max_abs_diff(&DenseMatrix::identity(7)).unwrap() < 1e-10);
    }

    #[test]
    fn singular_rejected() {
        let a = DenseMatrix::from_rows(&[&[1.0, 2.0], &[2.0, 4.0]]);
        assert!(matches!(inverse(&a), Err(Error::Singular(_))));
        assert!(matches!(inverse(&DenseMatrix::zeros(2, 3)), Err(Error::Shape(_))));
    }
}
