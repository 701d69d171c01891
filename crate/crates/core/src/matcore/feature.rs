use super::matrix::Matrix;
use crate::error::{PnError, Result};

/// `K×N` block of feature vectors; column `n` is `φ_n`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBlock {
    data: Matrix,
}

impl FeatureBlock {
    /// Builds from `K·N` row-major values (row `k` holds channel `k`).
    pub fn new(channels: usize, count: usize, data: Vec<f64>) -> Result<Self> {
        Self::from_matrix(Matrix::from_vec(channels, count, data)?)
    }

    pub fn from_matrix(data: Matrix) -> Result<Self> {
        if data.rows() == 0 || data.cols() == 0 {
            return Err(PnError::Dimension(format!(
                "feature block must be at least 1x1, got {}x{}",
                data.rows(),
                data.cols()
            )));
        }
        if !data.all_finite() {
            return Err(PnError::NonFinite("feature block contains NaN or infinity".into()));
        }
        Ok(FeatureBlock { data })
    }

    /// Builds from columns `φ_1 … φ_N`, all of the same length.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let n = columns.len();
        let k = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != k) {
            return Err(PnError::Dimension("feature columns differ in length".into()));
        }
        Self::from_matrix(Matrix::from_fn(k, n, |i, j| columns[j][i]))
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.data.rows()
    }

    #[inline]
    pub fn count(&self) -> usize {
        self.data.cols()
    }

    #[inline]
    pub fn get(&self, k: usize, n: usize) -> f64 {
        self.data[(k, n)]
    }

    pub fn column(&self, n: usize) -> Vec<f64> {
        self.data.column(n)
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.data
    }

    /// Mean feature vector `μ = (1/N) Σ φ_n`.
    pub fn mean_column(&self) -> Vec<f64> {
        let n = self.count() as f64;
        (0..self.channels())
            .map(|k| self.data.row(k).iter().sum::<f64>() / n)
            .collect()
    }

    /// Stacks `self` over `other` along the channel mode.
    pub fn stack(&self, other: &FeatureBlock) -> Result<FeatureBlock> {
        if self.count() != other.count() {
            return Err(PnError::Dimension(format!(
                "cannot stack blocks with {} and {} columns",
                self.count(),
                other.count()
            )));
        }
        let k1 = self.channels();
        let m = Matrix::from_fn(k1 + other.channels(), self.count(), |i, j| {
            if i < k1 {
                self.get(i, j)
            } else {
                other.get(i - k1, j)
            }
        });
        FeatureBlock::from_matrix(m)
    }
}
