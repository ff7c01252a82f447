//! Small dense linear algebra: row-major matrices, LU and Householder QR.
//!
//! Sized for desk-scale grids (a few hundred rows); no blocking, no SIMD.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from a flat row-major buffer. Panics if the length is wrong.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "buffer length does not match shape");
        Self { rows, cols, data }
    }

    /// Builds a matrix from row slices of equal length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    /// `self * x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "dimension mismatch in mul_vec");
        self.row_iter().map(|r| dot(r, x)).collect()
    }

    /// `selfᵀ * y`.
    pub fn tr_mul_vec(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.rows, "dimension mismatch in tr_mul_vec");
        let mut out = vec![0.0; self.cols];
        for (r, &yi) in self.row_iter().zip(y) {
            axpy(yi, r, &mut out);
        }
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "dimension mismatch in matmul");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a != 0.0 {
                    axpy(a, other.row(k), orow);
                }
            }
        }
        out
    }

    /// Keeps the listed rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn norm2(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// LU factorization with partial pivoting of a square matrix.
#[derive(Clone, Debug)]
pub struct Lu {
    lu: Matrix,
    perm: Vec<usize>,
}

impl Lu {
    /// Returns `None` when a pivot falls below `tol` relative to the largest entry.
    pub fn factor(a: &Matrix, tol: f64) -> Option<Lu> {
        assert_eq!(a.rows(), a.cols(), "LU needs a square matrix");
        let n = a.rows();
        let scale = a.max_abs().max(f64::MIN_POSITIVE);
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, pmax) = (k..n)
                .map(|i| (i, lu[(i, k)].abs()))
                .fold((k, -1.0), |best, c| if c.1 > best.1 { c } else { best });
            if pmax <= tol * scale {
                return None;
            }
            if p != k {
                for j in 0..n {
                    lu.data.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let piv = lu[(k, k)];
            for i in k + 1..n {
                let f = lu[(i, k)] / piv;
                lu[(i, k)] = f;
                if f != 0.0 {
                    for j in k + 1..n {
                        lu.data[i * n + j] -= f * lu.data[k * n + j];
                    }
                }
            }
        }
        Some(Lu { lu, perm })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.lu.rows();
        assert_eq!(b.len(), n);
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let s = dot(&self.lu.row(i)[..i], &x[..i]);
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let s = dot(&self.lu.row(i)[i + 1..], &x[i + 1..]);
            x[i] = (x[i] - s) / self.lu[(i, i)];
        }
        x
    }

    pub fn inverse(&self) -> Matrix {
        let n = self.lu.rows();
        let mut inv = Matrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = self.solve(&e);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        inv
    }
}

/// Householder QR with column pivoting, `A P = Q R`.
///
/// Q is kept implicitly as the sequence of Householder vectors.
#[derive(Clone, Debug)]
pub struct Qr {
    /// Upper triangle holds R; below the diagonal, the Householder vectors (v₀ = 1 implied).
    qr: Matrix,
    tau: Vec<f64>,
    perm: Vec<usize>,
    rank: usize,
}

impl Qr {
    /// Factors `a` (m ≥ n not required). `rel_tol` decides numerical rank against |R₀₀|.
    pub fn factor(a: &Matrix, rel_tol: f64) -> Qr {
        let (m, n) = (a.rows(), a.cols());
        let mut qr = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut colnorm: Vec<f64> = (0..n).map(|j| (0..m).map(|i| qr[(i, j)] * qr[(i, j)]).sum()).collect();
        let steps = m.min(n);
        let mut tau = vec![0.0; steps];
        let mut rank = steps;
        let mut r00 = 0.0;
        for k in 0..steps {
            // pivot on the largest remaining column norm, recomputed exactly to avoid drift
            for j in k..n {
                colnorm[j] = (k..m).map(|i| qr[(i, j)] * qr[(i, j)]).sum();
            }
            let (p, _) = (k..n)
                .map(|j| (j, colnorm[j]))
                .fold((k, -1.0), |best, c| if c.1 > best.1 { c } else { best });
            if p != k {
                for i in 0..m {
                    qr.data.swap(i * n + k, i * n + p);
                }
                perm.swap(k, p);
                colnorm.swap(k, p);
            }
            let alpha_norm = libm::sqrt((k..m).map(|i| qr[(i, k)] * qr[(i, k)]).sum::<f64>());
            if k == 0 {
                r00 = alpha_norm;
            }
            if alpha_norm <= rel_tol * r00.max(f64::MIN_POSITIVE) {
                rank = k;
                // zero the remaining block's reflectors so apply_qt stays consistent
                for t in tau.iter_mut().skip(k) {
                    *t = 0.0;
                }
                break;
            }
            let x0 = qr[(k, k)];
            let beta = if x0 >= 0.0 { -alpha_norm } else { alpha_norm };
            let v0 = x0 - beta;
            for i in k + 1..m {
                qr[(i, k)] /= v0;
            }
            tau[k] = (beta - x0) / beta;
            qr[(k, k)] = beta;
            for j in k + 1..n {
                let mut s = qr[(k, j)];
                for i in k + 1..m {
                    s += qr[(i, k)] * qr[(i, j)];
                }
                s *= tau[k];
                qr[(k, j)] -= s;
                for i in k + 1..m {
                    let v = qr[(i, k)];
                    qr[(i, j)] -= s * v;
                }
            }
        }
        Qr { qr, tau, perm, rank }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Applies Qᵀ to `b` in place.
    pub fn apply_qt(&self, b: &mut [f64]) {
        let m = self.qr.rows();
        assert_eq!(b.len(), m);
        for k in 0..self.rank {
            let mut s = b[k];
            for i in k + 1..m {
                s += self.qr[(i, k)] * b[i];
            }
            s *= self.tau[k];
            b[k] -= s;
            for i in k + 1..m {
                b[i] -= s * self.qr[(i, k)];
            }
        }
    }

    /// Basic least-squares solution of `min ‖A x − b‖₂` (free variables beyond the rank set to zero).
    pub fn solve_least_squares(&self, b: &[f64]) -> Vec<f64> {
        let n = self.qr.cols();
        let mut qtb = b.to_vec();
        self.apply_qt(&mut qtb);
        let r = self.rank;
        let mut y = vec![0.0; r];
        for i in (0..r).rev() {
            let mut s = qtb[i];
            for j in i + 1..r {
                s -= self.qr[(i, j)] * y[j];
            }
            y[i] = s / self.qr[(i, i)];
        }
        let mut x = vec![0.0; n];
        for (k, &yk) in y.iter().enumerate() {
            x[self.perm[k]] = yk;
        }
        x
    }
}

/// Numerical rank with the default tolerance used across the crate.
pub fn rank(a: &Matrix) -> usize {
    let tol = 1e-10 * (a.rows().max(a.cols()) as f64).max(1.0);
    Qr::factor(a, tol).rank()
}
