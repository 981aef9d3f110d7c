//! Plain-text matrix format: a `rows,cols` header line followed by one
//! comma-separated line per row, every value printed with 17 significant
//! digits so that it round-trips exactly.

use std::fmt::Write as _;
use std::path::Path;

use super::DenseMatrix;
use crate::error::{Error, Result};

pub fn format_matrix(m: &DenseMatrix) -> String {
    let mut out = format!("{},{}\n", m.rows(), m.cols());
    for i in 0..m.rows() {
        let line = m
            .row(i)
            .iter()
            .map(|v| format!("{v:.16e}"))
            .collect::<Vec<_>>()
            .join(",");
        let _ = writeln!(out, "{line}");
    }
    out
}

pub fn parse_matrix(text: &str) -> Result<DenseMatrix> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::Parse("empty matrix file".into()))?;
    let dims: Vec<&str> = header.split(',').map(str::trim).collect();
    let [rows, cols] = dims[..] else {
        return Err(Error::Parse(format!("bad header {header:?}, expected rows,cols")));
    };
    let parse_dim = |s: &str| {
        s.parse::<usize>()
            .map_err(|e| Error::Parse(format!("bad dimension {s:?}: {e}")))
    };
    let (rows, cols) = (parse_dim(rows)?, parse_dim(cols)?);

    let mut data = Vec::with_capacity(rows * cols);
    for (i, line) in lines.enumerate() {
        if i >= rows {
            return Err(Error::Parse(format!("more than {rows} data rows")));
        }
        let before = data.len();
        for field in line.split(',') {
            let v = field
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("row {i}: bad value {field:?}: {e}")))?;
            data.push(v);
        }
        if data.len() - before != cols {
            return Err(Error::Parse(format!(
                "row {i} has {} values, expected {cols}",
                data.len() - before
            )));
        }
    }
    if data.len() != rows * cols {
        return Err(Error::Parse(format!(
            "expected {rows} rows, found {}",
            data.len() / cols.max(1)
        )));
    }
    DenseMatrix::new(rows, cols, data).map_err(|e| Error::Parse(e.to_string()))
}

pub fn read_matrix(path: &Path) -> Result<DenseMatrix> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    parse_matrix(&text)
}

pub fn write_matrix(path: &Path, m: &DenseMatrix) -> std::io::Result<()> {
    std::fs::write(path, format_matrix(m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout() {
        let m = DenseMatrix::from_rows(&[&[1.0, -0.5], &[0.1, 3.0]]);
        let text = format_matrix(&m);
        assert!(text.starts_with("2,2\n1.0000000000000000e0,-5.0000000000000000e-1\n"));
    }

    #[test]
    fn malformed_inputs() {
        assert!(parse_matrix("").is_err());
        assert!(parse_matrix("2\n1,2").is_err());
        assert!(parse_matrix("1,2\n1").is_err());
        assert!(parse_matrix("1,2\n1,x").is_err());
        assert!(parse_matrix("2,1\n1").is_err());
        assert!(parse_matrix("1,1\nNaN").is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_exact(rows in 1usize..5, cols in 1usize..5, seed in any::<u64>()) {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let m = DenseMatrix::random_normal(rows, cols, 1e3, &mut rng);
            prop_assert_eq!(parse_matrix(&format_matrix(&m)).unwrap(), m);
        }
    }
}
