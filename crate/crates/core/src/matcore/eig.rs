//! Symmetric eigensolver: Householder reduction to tridiagonal form followed by
//! the implicit-shift QL algorithm (after the EISPACK routines tred2/tql2).

use super::matrix::Matrix;
use super::sym::SymMatrix;
use crate::error::{PnError, Result};

/// Eigenvectors `U` (columns) and eigenvalues `λ` of a symmetric matrix,
/// with `λ` in non-increasing order.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralDecomp {
    pub vectors: Matrix,
    pub values: Vec<f64>,
}

impl SpectralDecomp {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// `U · diag(f(λ)) · Uᵀ`.
    pub fn reconstruct_with(&self, mut f: impl FnMut(f64) -> f64) -> SymMatrix {
        let mapped: Vec<f64> = self.values.iter().map(|v| f(*v)).collect();
        self.reconstruct_values(&mapped)
    }

    /// `U · diag(values) · Uᵀ` for an arbitrary diagonal.
    pub fn reconstruct_values(&self, values: &[f64]) -> SymMatrix {
        let n = self.dim();
        assert_eq!(values.len(), n);
        let u = &self.vectors;
        let scaled = Matrix::from_fn(n, n, |i, j| u[(i, j)] * values[j]);
        SymMatrix::symmetrize(&scaled.matmul_transposed(u))
    }

    pub fn reconstruct(&self) -> SymMatrix {
        self.reconstruct_values(&self.values)
    }

    /// Smallest distance between consecutive eigenvalues (infinite for d = 1).
    pub fn min_gap(&self) -> f64 {
        self.values
            .windows(2)
            .map(|w| (w[0] - w[1]).abs())
            .fold(f64::INFINITY, f64::min)
    }

    /// `Uᵀ X U`.
    pub fn to_eigenbasis(&self, x: &Matrix) -> Matrix {
        self.vectors.transposed_matmul(&x.matmul(&self.vectors))
    }

    /// `U X Uᵀ`.
    pub fn from_eigenbasis(&self, x: &Matrix) -> Matrix {
        self.vectors.matmul(x).matmul_transposed(&self.vectors)
    }
}

/// Eigendecomposition of a symmetric matrix.
///
/// Fails with [`PnError::NonFinite`] on non-finite input and with
/// [`PnError::NoConvergence`] if the QL sweeps exceed `30·d`.
pub fn sym_eig(m: &SymMatrix) -> Result<SpectralDecomp> {
    if !m.all_finite() {
        return Err(PnError::NonFinite("sym_eig input contains NaN or infinity".into()));
    }
    let n = m.dim();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| m.get(i, j)).collect())
        .collect();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tred2(&mut v, &mut d, &mut e);
    tql2(&mut v, &mut d, &mut e).map_err(|iterations| PnError::NoConvergence {
        iterations,
        detail: format!(
            "d={n}, frobenius norm {:.3e}, max |entry| {:.3e}",
            m.frobenius_norm(),
            m.max_abs()
        ),
    })?;

    // stable sort keeps ties in the solver's order
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[b].partial_cmp(&d[a]).expect("finite eigenvalues"));
    let values: Vec<f64> = order.iter().map(|&k| d[k]).collect();
    let vectors = Matrix::from_fn(n, n, |i, j| v[i][order[j]]);
    Ok(SpectralDecomp { vectors, values })
}

fn tred2(v: &mut [Vec<f64>], d: &mut [f64], e: &mut [f64]) {
    let n = d.len();
    for j in 0..n {
        d[j] = v[n - 1][j];
    }

    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for k in 0..i {
            scale += d[k].abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[i - 1][j];
                v[i][j] = 0.0;
                v[j][i] = 0.0;
            }
        } else {
            for k in 0..i {
                d[k] /= scale;
                h += d[k] * d[k];
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in e.iter_mut().take(i) {
                *ej = 0.0;
            }

            for j in 0..i {
                f = d[j];
                v[j][i] = f;
                g = e[j] + v[j][j] * f;
                for k in (j + 1)..i {
                    g += v[k][j] * d[k];
                    e[k] += v[k][j] * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    v[k][j] -= f * e[k] + g * d[k];
                }
                d[j] = v[i - 1][j];
                v[i][j] = 0.0;
            }
        }
        d[i] = h;
    }

    // accumulate transformations
    for i in 0..n.saturating_sub(1) {
        v[n - 1][i] = v[i][i];
        v[i][i] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[k][i + 1] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[k][i + 1] * v[k][j];
                }
                for k in 0..=i {
                    v[k][j] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[k][i + 1] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[n - 1][j];
        v[n - 1][j] = 0.0;
    }
    v[n - 1][n - 1] = 1.0;
    e[0] = 0.0;
}

/// Returns the sweep count on failure.
fn tql2(v: &mut [Vec<f64>], d: &mut [f64], e: &mut [f64]) -> std::result::Result<(), usize> {
    let n = d.len();
    let cap = 30 * n.max(1);
    let mut sweeps = 0usize;
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    let eps = f64::EPSILON;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        let m = m.min(n - 1);

        if m > l {
            loop {
                sweeps += 1;
                if sweeps > cap {
                    return Err(sweeps - 1);
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().take(n).skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for row in v.iter_mut() {
                        h = row[i + 1];
                        row[i + 1] = s * row[i] + c * h;
                        row[i] = c * row[i] - s * h;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}
