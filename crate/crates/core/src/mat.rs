//! Dense row-major `f64` matrix plus the log-domain helpers shared by the
//! loss, decoding and model code.

use std::fmt::Write as _;
use std::io::{self, BufRead, Write};

use thiserror::Error;

/// Row-major matrix of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Debug, Error)]
pub enum GridParseError {
    #[error("grid header must be two integers, got {0:?}")]
    BadHeader(String),
    #[error("grid row {row} has {got} values, expected {expected}")]
    BadRowLength { row: usize, got: usize, expected: usize },
    #[error("grid value at ({row}, {col}) is not a number: {token:?}")]
    BadValue { row: usize, col: usize, token: String },
    #[error("grid declares {rows} rows but input ended after {got}")]
    TooFewRows { rows: usize, got: usize },
    #[error("grid dimensions must be positive")]
    EmptyGrid,
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Mat { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Mat { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Mat {
            rows: rows.len(),
            cols,
            data: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length mismatch");
        Mat { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `self += scale * other`, elementwise.
    pub fn add_scaled(&mut self, other: &Mat, scale: f64) {
        assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        for v in &mut self.data {
            *v *= k;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Reads the text grid format: a header line with two integers (rows,
    /// cols) followed by one whitespace-separated line per row.
    pub fn read_grid(reader: impl BufRead) -> Result<Mat, GridParseError> {
        let mut lines = reader.lines();
        let header = loop {
            match lines.next() {
                Some(line) => {
                    let line = line?;
                    if !line.trim().is_empty() {
                        break line;
                    }
                }
                None => return Err(GridParseError::BadHeader(String::new())),
            }
        };
        let dims: Vec<&str> = header.split_whitespace().collect();
        let (rows, cols) = match dims.as_slice() {
            [r, c] => match (r.parse::<usize>(), c.parse::<usize>()) {
                (Ok(r), Ok(c)) => (r, c),
                _ => return Err(GridParseError::BadHeader(header)),
            },
            _ => return Err(GridParseError::BadHeader(header)),
        };
        if rows == 0 || cols == 0 {
            return Err(GridParseError::EmptyGrid);
        }
        let mut data = Vec::with_capacity(rows * cols);
        let mut got = 0;
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let tokens: Vec<&str> = line.split_whitespace().collect();
            if tokens.len() != cols {
                return Err(GridParseError::BadRowLength { row: got, got: tokens.len(), expected: cols });
            }
            for (col, tok) in tokens.iter().enumerate() {
                let v: f64 = tok.parse().map_err(|_| GridParseError::BadValue {
                    row: got,
                    col,
                    token: tok.to_string(),
                })?;
                data.push(v);
            }
            got += 1;
            if got == rows {
                break;
            }
        }
        if got < rows {
            return Err(GridParseError::TooFewRows { rows, got });
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn write_grid(&self, mut writer: impl Write) -> io::Result<()> {
        writeln!(writer, "{} {}", self.rows, self.cols)?;
        let mut line = String::new();
        for r in 0..self.rows {
            line.clear();
            for (c, v) in self.row(r).iter().enumerate() {
                if c > 0 {
                    line.push(' ');
                }
                let _ = write!(line, "{v}");
            }
            writeln!(writer, "{line}")?;
        }
        Ok(())
    }
}

/// Sum of probabilities in log space. Returns `-inf` for the empty/all-`-inf`
/// case instead of NaN.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

#[inline]
pub fn lse2(a: f64, b: f64) -> f64 {
    let max = a.max(b);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + ((a - max).exp() + (b - max).exp()).ln()
}

#[inline]
pub fn lse3(a: f64, b: f64, c: f64) -> f64 {
    let max = a.max(b).max(c);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + ((a - max).exp() + (b - max).exp() + (c - max).exp()).ln()
}

/// Writes `softmax(scores)` into `out`.
pub fn softmax_into(scores: &[f64], out: &mut [f64]) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &s) in out.iter_mut().zip(scores) {
        let e = (s - max).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Row-wise softmax of a matrix of scores.
pub fn softmax_rows(scores: &Mat) -> Mat {
    let mut out = Mat::zeros(scores.rows(), scores.cols());
    for r in 0..scores.rows() {
        softmax_into(scores.row(r), out.row_mut(r));
    }
    out
}

/// Row-wise log-softmax, computed directly in log space for stability.
pub fn log_softmax_rows(scores: &Mat) -> Mat {
    let mut out = scores.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for v in row.iter_mut() {
            *v -= log_sum;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_matches_direct_sum() {
        let vals = [-1.0, -2.0, -0.5];
        let direct: f64 = vals.iter().map(|v: &f64| v.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&vals) - direct).abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_handles_neg_infinity() {
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
        assert_eq!(lse2(f64::NEG_INFINITY, f64::NEG_INFINITY), f64::NEG_INFINITY);
        let v = lse2(-1.0, f64::NEG_INFINITY);
        assert!((v - -1.0).abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_survives_large_magnitudes() {
        let v = log_sum_exp(&[-1000.0, -1000.0]);
        assert!((v - (-1000.0 + 2f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let m = Mat::from_rows(&[vec![1.0, 2.0, 3.0], vec![-5.0, 0.0, 5.0]]);
        let s = softmax_rows(&m);
        for r in 0..2 {
            let sum: f64 = s.row(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn log_softmax_consistent_with_softmax() {
        let m = Mat::from_rows(&[vec![0.3, -1.2, 4.0]]);
        let s = softmax_rows(&m);
        let ls = log_softmax_rows(&m);
        for c in 0..3 {
            assert!((s.get(0, c).ln() - ls.get(0, c)).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_round_trip() {
        let m = Mat::from_rows(&[vec![0.25, 0.75], vec![0.5, 0.5], vec![1.0, 0.0]]);
        let mut buf = Vec::new();
        m.write_grid(&mut buf).unwrap();
        let back = Mat::read_grid(buf.as_slice()).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn grid_rejects_bad_input() {
        assert!(matches!(
            Mat::read_grid("2 2\n0.5 0.5\n".as_bytes()),
            Err(GridParseError::TooFewRows { .. })
        ));
        assert!(matches!(
            Mat::read_grid("x y\n".as_bytes()),
            Err(GridParseError::BadHeader(_))
        ));
        assert!(matches!(
            Mat::read_grid("1 2\n0.5\n".as_bytes()),
            Err(GridParseError::BadRowLength { .. })
        ));
    }
}
