//! Minimal dense matrix support for the hand-rolled numeric core.
//!
//! Row-major `f64` storage with just the operations the encoder, trainer, and
//! GDA baseline need: vector-matrix products, outer-product accumulation, and
//! a Cholesky factorization for symmetric positive-definite matrices.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        debug_assert!(rows.iter().all(|row| row.len() == c));
        Mat {
            rows: r,
            cols: c,
            data: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `out = x · M + b`, treating `x` as a row vector of length `rows`.
    ///
    /// This is the forward-pass orientation: layer weights are stored as
    /// `input_dim × output_dim`.
    pub fn vecmat(&self, x: &[f64], bias: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(bias.len(), self.cols);
        debug_assert_eq!(out.len(), self.cols);
        out.copy_from_slice(bias);
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue; // dropout zeros make this branch common
            }
            let row = self.row(i);
            for (o, &w) in out.iter_mut().zip(row) {
                *o += xi * w;
            }
        }
    }

    /// `out = M · y`, treating `y` as a column vector of length `cols`.
    ///
    /// Backward-pass orientation: propagates a gradient of the layer output
    /// back to the layer input.
    pub fn matvec(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (i, o) in out.iter_mut().enumerate() {
            let row = self.row(i);
            *o = row.iter().zip(y).map(|(&w, &v)| w * v).sum();
        }
    }

    /// Accumulate the outer product `x ⊗ y` scaled by `alpha`.
    pub fn add_outer(&mut self, x: &[f64], y: &[f64], alpha: f64) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(y.len(), self.cols);
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let s = alpha * xi;
            let row = self.row_mut(i);
            for (w, &yj) in row.iter_mut().zip(y) {
                *w += s * yj;
            }
        }
    }

    /// Cholesky factorization `A = L·Lᵀ` of a symmetric positive-definite
    /// matrix. Returns the lower-triangular factor, or an error when a pivot
    /// is not strictly positive.
    pub fn cholesky(&self) -> Result<Mat> {
        if self.rows != self.cols {
            return Err(Error::DimMismatch(format!(
                "cholesky needs a square matrix, got {}x{}",
                self.rows, self.cols
            )));
        }
        let n = self.rows;
        let mut l = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let mut sum = self.get(i, j);
                for k in 0..j {
                    sum -= l.get(i, k) * l.get(j, k);
                }
                if i == j {
                    if sum <= 0.0 || !sum.is_finite() {
                        return Err(Error::SingularCovariance);
                    }
                    l.set(i, j, sum.sqrt());
                } else {
                    l.set(i, j, sum / l.get(j, j));
                }
            }
        }
        Ok(l)
    }

    /// Solve `L·y = b` by forward substitution, `L` lower-triangular.
    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        debug_assert_eq!(self.rows, self.cols);
        debug_assert_eq!(b.len(), self.rows);
        let n = self.rows;
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut sum = b[i];
            for k in 0..i {
                sum -= self.get(i, k) * y[k];
            }
            y[i] = sum / self.get(i, i);
        }
        y
    }
}

/// Squared Euclidean distance between two equal-length vectors.
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}
