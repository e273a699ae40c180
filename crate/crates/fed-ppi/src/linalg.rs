//! Small dense linear algebra for the regression estimators.
//!
//! Parameter dimensions here are tiny (a handful of coefficients), so a
//! hand-rolled Gaussian elimination keeps the core generic over the
//! scalar type without pulling in a matrix crate.

use serde::{Deserialize, Serialize};

use crate::scalar::Real;
use crate::{Error, Result};

/// Row-major square matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix<R> {
    pub dim: usize,
    pub data: Vec<R>,
}

impl<R: Real> Matrix<R> {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![R::zero(); dim * dim],
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> R {
        self.data[i * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: R) {
        self.data[i * self.dim + j] = v;
    }

    #[inline]
    pub fn add_assign_at(&mut self, i: usize, j: usize, v: R) {
        self.data[i * self.dim + j] = self.data[i * self.dim + j] + v;
    }

    pub fn scale(&self, s: R) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|&x| x * s).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        debug_assert_eq!(self.dim, other.dim);
        Self {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a + b)
                .collect(),
        }
    }

    /// Rank-one update `self += s * v v^T`.
    pub fn add_outer(&mut self, v: &[R], s: R) {
        debug_assert_eq!(v.len(), self.dim);
        for i in 0..self.dim {
            for j in 0..self.dim {
                self.add_assign_at(i, j, s * v[i] * v[j]);
            }
        }
    }

    pub fn matmul(&self, other: &Self) -> Self {
        debug_assert_eq!(self.dim, other.dim);
        let d = self.dim;
        let mut out = Self::zeros(d);
        for i in 0..d {
            for k in 0..d {
                let a = self.get(i, k);
                for j in 0..d {
                    out.add_assign_at(i, j, a * other.get(k, j));
                }
            }
        }
        out
    }

    /// Inverse via Gauss-Jordan with partial pivoting.
    pub fn inverse(&self, block: &str) -> Result<Self> {
        let d = self.dim;
        let mut a = self.data.clone();
        let mut inv = Matrix::zeros(d);
        for i in 0..d {
            inv.set(i, i, R::one());
        }
        for col in 0..d {
            let mut pivot = col;
            for row in (col + 1)..d {
                if a[row * d + col].abs() > a[pivot * d + col].abs() {
                    pivot = row;
                }
            }
            let pv = a[pivot * d + col];
            if pv.abs() < R::epsilon() * c_scale(self) {
                return Err(Error::SingularDesign {
                    block: block.to_string(),
                });
            }
            if pivot != col {
                for j in 0..d {
                    a.swap(col * d + j, pivot * d + j);
                    inv.data.swap(col * d + j, pivot * d + j);
                }
            }
            let pv = a[col * d + col];
            for j in 0..d {
                a[col * d + j] = a[col * d + j] / pv;
                inv.data[col * d + j] = inv.data[col * d + j] / pv;
            }
            for row in 0..d {
                if row == col {
                    continue;
                }
                let factor = a[row * d + col];
                if factor == R::zero() {
                    continue;
                }
                for j in 0..d {
                    let delta = factor * a[col * d + j];
                    a[row * d + j] = a[row * d + j] - delta;
                    let delta = factor * inv.data[col * d + j];
                    inv.data[row * d + j] = inv.data[row * d + j] - delta;
                }
            }
        }
        Ok(inv)
    }

    /// Solves `self * x = b`.
    pub fn solve(&self, b: &[R], block: &str) -> Result<Vec<R>> {
        let inv = self.inverse(block)?;
        Ok(inv.matvec(b))
    }

    pub fn matvec(&self, v: &[R]) -> Vec<R> {
        debug_assert_eq!(v.len(), self.dim);
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self.get(i, j) * v[j]).sum())
            .collect()
    }
}

fn c_scale<R: Real>(m: &Matrix<R>) -> R {
    m.data
        .iter()
        .fold(R::one(), |acc, &x| acc.max(x.abs()))
}

/// Ordinary least squares: solves `(X^T X) theta = X^T y` for row-major
/// design `x` (one row per sample).
pub fn ols_fit<R: Real>(x: &[Vec<R>], y: &[R], block: &str) -> Result<Vec<R>> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::Validation(format!(
            "ols_fit({block}): {} design rows vs {} responses",
            x.len(),
            y.len()
        )));
    }
    let d = x[0].len();
    let mut xtx = Matrix::zeros(d);
    let mut xty = vec![R::zero(); d];
    for (row, &yi) in x.iter().zip(y) {
        xtx.add_outer(row, R::one());
        for j in 0..d {
            xty[j] = xty[j] + row[j] * yi;
        }
    }
    xtx.solve(&xty, block)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_roundtrip() {
        let m = Matrix::<f64> {
            dim: 3,
            data: vec![4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0],
        };
        let inv = m.inverse("test").unwrap();
        let id = m.matmul(&inv);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((id.get(i, j) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn singular_matrix_is_reported() {
        let m = Matrix {
            dim: 2,
            data: vec![1.0, 2.0, 2.0, 4.0],
        };
        match m.inverse("labeled design") {
            Err(Error::SingularDesign { block }) => assert_eq!(block, "labeled design"),
            other => panic!("expected singular-design error, got {other:?}"),
        }
    }

    #[test]
    fn ols_exact_line() {
        let x: Vec<Vec<f64>> = vec![vec![1.0], vec![2.0], vec![3.0]];
        let y = vec![2.0, 4.0, 6.0];
        let theta = ols_fit(&x, &y, "test").unwrap();
        assert!((theta[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn ols_with_intercept() {
        let x: Vec<Vec<f64>> = (0..50)
            .map(|i| vec![1.0, i as f64 / 10.0])
            .collect();
        let y: Vec<f64> = x.iter().map(|r| 0.5 + 2.0 * r[1]).collect();
        let theta = ols_fit(&x, &y, "test").unwrap();
        assert!((theta[0] - 0.5).abs() < 1e-10);
        assert!((theta[1] - 2.0).abs() < 1e-10);
    }
}
