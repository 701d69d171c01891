use std::fmt;

use super::matrix::Matrix;
use crate::error::{PnError, Result};

/// Dense real symmetric `d×d` matrix.
///
/// Every constructor symmetrizes its input as `½(X + Xᵀ)`, so
/// `get(i, j) == get(j, i)` holds bit-for-bit.
#[derive(Clone, PartialEq)]
pub struct SymMatrix {
    inner: Matrix,
}

impl SymMatrix {
    /// Builds from `d·d` row-major values, symmetrizing them.
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(PnError::Dimension("matrix side must be at least 1".into()));
        }
        let m = Matrix::from_vec(dim, dim, data)?;
        Ok(Self::symmetrize(&m))
    }

    pub fn from_matrix(m: &Matrix) -> Result<Self> {
        if !m.is_square() || m.rows() == 0 {
            return Err(PnError::Dimension(format!(
                "expected a non-empty square matrix, got {}x{}",
                m.rows(),
                m.cols()
            )));
        }
        Ok(Self::symmetrize(m))
    }

    /// `½(X + Xᵀ)` of a square matrix. Panics on non-square input.
    pub fn symmetrize(m: &Matrix) -> Self {
        assert!(m.is_square(), "symmetrize needs a square matrix");
        SymMatrix {
            inner: m.symmetric_part(),
        }
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let m = Matrix::from_fn(dim, dim, &mut f);
        Self::symmetrize(&m)
    }

    pub fn zeros(dim: usize) -> Self {
        SymMatrix {
            inner: Matrix::zeros(dim, dim),
        }
    }

    pub fn identity(dim: usize) -> Self {
        SymMatrix {
            inner: Matrix::identity(dim),
        }
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Matrix::zeros(n, n);
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = *v;
        }
        SymMatrix { inner: m }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.inner.rows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.inner[(i, j)]
    }

    #[inline]
    pub fn as_matrix(&self) -> &Matrix {
        &self.inner
    }

    pub fn into_matrix(self) -> Matrix {
        self.inner
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        self.inner.as_slice()
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.get(i, i)).collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.inner.frobenius_norm()
    }

    /// Frobenius inner product `⟨A, B⟩ = Σ A_ij B_ij`.
    pub fn inner(&self, other: &SymMatrix) -> f64 {
        self.as_slice()
            .iter()
            .zip(other.as_slice())
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn scale(&self, s: f64) -> SymMatrix {
        SymMatrix {
            inner: self.inner.scale(s),
        }
    }

    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix {
            inner: self.inner.add(&other.inner),
        }
    }

    pub fn sub(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix {
            inner: self.inner.sub(&other.inner),
        }
    }

    pub fn add_diagonal(&self, values: &[f64]) -> SymMatrix {
        let mut m = self.inner.clone();
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] += v;
        }
        SymMatrix { inner: m }
    }

    /// `s·I + self`.
    pub fn shift(&self, s: f64) -> SymMatrix {
        let mut m = self.inner.clone();
        for i in 0..self.dim() {
            m[(i, i)] += s;
        }
        SymMatrix { inner: m }
    }

    /// Applies `f` to every element. The result stays symmetric because the
    /// same scalar function sees identical inputs at `(i, j)` and `(j, i)`.
    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> SymMatrix {
        let data: Vec<f64> = self.as_slice().iter().map(|v| f(*v)).collect();
        SymMatrix {
            inner: Matrix::from_vec(self.dim(), self.dim(), data).expect("same shape"),
        }
    }

    /// Element-wise combination of two matrices of the same side.
    pub fn zip_map(&self, other: &SymMatrix, mut f: impl FnMut(f64, f64) -> f64) -> SymMatrix {
        assert_eq!(self.dim(), other.dim());
        let data: Vec<f64> = self
            .as_slice()
            .iter()
            .zip(other.as_slice())
            .map(|(a, b)| f(*a, *b))
            .collect();
        SymMatrix {
            inner: Matrix::from_vec(self.dim(), self.dim(), data).expect("same shape"),
        }
    }

    pub fn matmul(&self, other: &SymMatrix) -> Matrix {
        self.inner.matmul(&other.inner)
    }

    /// `Sym(self · other)`.
    pub fn sym_product(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix::symmetrize(&self.matmul(other))
    }

    pub fn max_abs(&self) -> f64 {
        self.as_slice().iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.inner.all_finite()
    }

    /// Relative Frobenius distance `‖self − other‖ / max(‖other‖, tiny)`.
    pub fn rel_distance(&self, other: &SymMatrix) -> f64 {
        self.sub(other).frobenius_norm() / other.frobenius_norm().max(1e-300)
    }
}

impl fmt::Debug for SymMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Sym")?;
        self.inner.fmt(f)
    }
}
