use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense square matrix, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(dim: usize) -> Self {
        Matrix {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let dim = rows.len();
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect::<Vec<_>>();
        assert_eq!(data.len(), dim * dim, "matrix must be square");
        Matrix { dim, data }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m.set(i, i, d);
        }
        m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] = v;
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.dim.max(1)).map(<[f64]>::to_vec).collect()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn symmetrized(&self) -> Matrix {
        let mut out = self.clone();
        for i in 0..self.dim {
            for j in 0..self.dim {
                out.set(i, j, 0.5 * (self.get(i, j) + self.get(j, i)));
            }
        }
        out
    }

    pub(crate) fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.data)
    }
}

/// Central-difference Hessian of `f` at `x` with one Richardson refinement:
/// `(4 H(h) - H(2h)) / 3`.
pub fn finite_difference_hessian<F>(f: F, x: &[f64], step: f64) -> Matrix
where
    F: Fn(&[f64]) -> f64,
{
    let fine = central_hessian(&f, x, step);
    let coarse = central_hessian(&f, x, 2.0 * step);
    let mut out = Matrix::zeros(x.len());
    for (o, (a, b)) in out.data.iter_mut().zip(fine.data.iter().zip(&coarse.data)) {
        *o = (4.0 * a - b) / 3.0;
    }
    out
}

fn central_hessian<F>(f: &F, x: &[f64], h: f64) -> Matrix
where
    F: Fn(&[f64]) -> f64,
{
    let n = x.len();
    let f0 = f(x);
    let mut out = Matrix::zeros(n);
    let mut probe = x.to_vec();
    let at = |probe: &mut Vec<f64>, moves: &[(usize, f64)]| {
        for &(k, d) in moves {
            probe[k] = x[k] + d;
        }
        let v = f(probe);
        for &(k, _) in moves {
            probe[k] = x[k];
        }
        v
    };
    for i in 0..n {
        let fp = at(&mut probe, &[(i, h)]);
        let fm = at(&mut probe, &[(i, -h)]);
        out.set(i, i, (fp - 2.0 * f0 + fm) / (h * h));
        for j in 0..i {
            let fpp = at(&mut probe, &[(i, h), (j, h)]);
            let fpm = at(&mut probe, &[(i, h), (j, -h)]);
            let fmp = at(&mut probe, &[(i, -h), (j, h)]);
            let fmm = at(&mut probe, &[(i, -h), (j, -h)]);
            let v = (fpp - fpm - fmp + fmm) / (4.0 * h * h);
            out.set(i, j, v);
            out.set(j, i, v);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HessianEigen {
    /// Descending.
    pub values: Vec<f64>,
    /// Column `k` of this matrix is the eigenvector of `values[k]`.
    pub vectors: Matrix,
    pub condition_number: f64,
}

/// Eigen-decomposition of the symmetrized Hessian. Fails when the matrix is
/// not positive definite, which at a claimed optimum means the curvature does
/// not identify every direction.
pub fn hessian_eigen(hessian: &Matrix) -> Result<HessianEigen> {
    let (values, vectors) = sorted_eigen(hessian);
    let smallest = *values.last().unwrap_or(&0.0);
    if !(smallest > 0.0) {
        return Err(Error::NotPositiveDefinite {
            min_eigenvalue: smallest,
        });
    }
    Ok(HessianEigen {
        condition_number: values[0] / smallest,
        values,
        vectors,
    })
}

pub(crate) fn sorted_eigen(hessian: &Matrix) -> (Vec<f64>, Matrix) {
    let sym = hessian.symmetrized();
    let eig = SymmetricEigen::new(sym.to_nalgebra());
    let mut order: Vec<usize> = (0..sym.dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vectors = Matrix::zeros(sym.dim);
    for (col, &k) in order.iter().enumerate() {
        for row in 0..sym.dim {
            vectors.set(row, col, eig.eigenvectors[(row, k)]);
        }
    }
    (values, vectors)
}

/// Inverse of a symmetric positive-definite matrix via its eigenbasis.
pub fn invert_spd(m: &Matrix) -> Result<Matrix> {
    let (values, vectors) = sorted_eigen(m);
    let smallest = *values.last().unwrap_or(&0.0);
    let largest = values.first().copied().unwrap_or(0.0);
    if !(smallest > 0.0) || largest / smallest > 1e15 {
        return Err(Error::SingularHessian {
            condition_number: if smallest > 0.0 {
                largest / smallest
            } else {
                f64::INFINITY
            },
        });
    }
    let n = m.dim;
    let mut inv = Matrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            let v = (0..n)
                .map(|k| vectors.get(i, k) * vectors.get(j, k) / values[k])
                .sum();
            inv.set(i, j, v);
        }
    }
    Ok(inv.symmetrized())
}

/// `Corr_ij = (H^-1)_ij / sqrt((H^-1)_ii (H^-1)_jj)`.
pub fn correlation_from_hessian(hessian: &Matrix) -> Result<Matrix> {
    let inv = invert_spd(hessian)?;
    Ok(covariance_to_correlation(&inv))
}

pub(crate) fn covariance_to_correlation(cov: &Matrix) -> Matrix {
    let n = cov.dim;
    let sd: Vec<f64> = cov.diagonal().iter().map(|v| v.sqrt()).collect();
    let mut out = Matrix::identity(n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                out.set(i, j, (cov.get(i, j) / (sd[i] * sd[j])).clamp(-1.0, 1.0));
            }
        }
    }
    out
}
