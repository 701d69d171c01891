//! Second-order pooling: β-centering, spatial coordinate encoding,
//! autocorrelation matrices and few-shot relation descriptors.

use std::f64::consts::PI;

use crate::error::{PnError, Result};
use crate::matcore::{FeatureBlock, Matrix, SymMatrix};

pub const MIN_PIVOTS: usize = 2;
pub const MAX_PIVOTS: usize = 64;

/// RBF encoding of a normalized coordinate against `Z` pivots.
#[derive(Clone, Debug, PartialEq)]
pub struct CoordEncoderConfig {
    pub sigma: f64,
    pub alpha: f64,
    pub pivots: Vec<f64>,
}

impl CoordEncoderConfig {
    /// `Z` pivots evenly spaced over `[−0.2, 1.2]`.
    pub fn new(pivot_count: usize, sigma: f64, alpha: f64) -> Result<Self> {
        if !(MIN_PIVOTS..=MAX_PIVOTS).contains(&pivot_count) {
            return Err(PnError::InvalidParam(format!(
                "pivot count must be in {MIN_PIVOTS}..={MAX_PIVOTS}, got {pivot_count}"
            )));
        }
        let span = (pivot_count - 1) as f64;
        // endpoint-exact form of -0.2 + 1.4·i/(Z-1)
        let pivots = (0..pivot_count)
            .map(|i| (-0.2 * (span - i as f64) + 1.2 * i as f64) / span)
            .collect();
        Self::with_pivots(pivots, sigma, alpha)
    }

    pub fn with_pivots(pivots: Vec<f64>, sigma: f64, alpha: f64) -> Result<Self> {
        if !(MIN_PIVOTS..=MAX_PIVOTS).contains(&pivots.len()) {
            return Err(PnError::InvalidParam(format!(
                "pivot count must be in {MIN_PIVOTS}..={MAX_PIVOTS}, got {}",
                pivots.len()
            )));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(PnError::InvalidParam(format!("bandwidth must be > 0, got {sigma}")));
        }
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(PnError::InvalidParam(format!("weight must be >= 0, got {alpha}")));
        }
        Ok(CoordEncoderConfig {
            sigma,
            alpha,
            pivots,
        })
    }

    pub fn pivot_count(&self) -> usize {
        self.pivots.len()
    }

    /// Average pivot spacing `Δ`.
    pub fn spacing(&self) -> f64 {
        let z = self.pivots.len();
        (self.pivots[z - 1] - self.pivots[0]) / (z - 1) as f64
    }

    /// Constant `c` with `c·⟨φ(x), φ(x*)⟩ ≈ exp(−(x−x*)²/(2σ²))`, from the
    /// Riemann sum `Σ_i e^{−(x−ζ_i)²/σ²} e^{−(x*−ζ_i)²/σ²} ≈ (σ/Δ)√(π/2) e^{−(x−x*)²/(2σ²)}`.
    pub fn riemann_constant(&self) -> f64 {
        self.spacing() * (2.0 / PI).sqrt() / self.sigma
    }
}

/// Encoded coordinate plus a flag raised for `x ∉ [0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoordEncoding {
    pub values: Vec<f64>,
    pub out_of_range: bool,
}

/// `φ_i(x) = exp(−(x − ζ_i)² / σ²)`.
pub fn encode_coordinate(x: f64, cfg: &CoordEncoderConfig) -> CoordEncoding {
    let s2 = cfg.sigma * cfg.sigma;
    CoordEncoding {
        values: cfg
            .pivots
            .iter()
            .map(|z| (-(x - z) * (x - z) / s2).exp())
            .collect(),
        out_of_range: !(0.0..=1.0).contains(&x),
    }
}

/// Normalized coordinates of a `W×H` map in row-major raster order:
/// `(x'/(W−1), y'/(H−1))`, with `y'` the slow index.
pub fn coordinate_grid(width: usize, height: usize) -> Vec<(f64, f64)> {
    let norm = |v: usize, n: usize| if n > 1 { v as f64 / (n - 1) as f64 } else { 0.0 };
    let mut out = Vec::with_capacity(width * height);
    for yp in 0..height {
        for xp in 0..width {
            out.push((norm(xp, width), norm(yp, height)));
        }
    }
    out
}

/// `φ_n − β·μ` with `μ` the mean column.
pub fn beta_center(block: &FeatureBlock, beta: f64) -> Result<FeatureBlock> {
    check_beta(beta)?;
    if beta == 0.0 {
        return Ok(block.clone());
    }
    let mu = block.mean_column();
    let m = Matrix::from_fn(block.channels(), block.count(), |k, n| {
        block.get(k, n) - beta * mu[k]
    });
    FeatureBlock::from_matrix(m)
}

fn check_beta(beta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(PnError::InvalidParam(format!("beta must lie in [0, 1], got {beta}")));
    }
    Ok(())
}

/// Pooling options.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolSpec {
    pub beta: f64,
    pub coord: Option<CoordEncoderConfig>,
}

impl PoolSpec {
    /// No centering, no coordinates.
    pub fn plain() -> Self {
        PoolSpec {
            beta: 0.0,
            coord: None,
        }
    }
}

/// Centered features stacked over `α·φ(x_n)` and `α·φ(y_n)` when coordinates
/// are configured. Returns the block and whether any coordinate fell outside
/// `[0, 1]`.
pub fn augment(
    block: &FeatureBlock,
    spec: &PoolSpec,
    coords: Option<&[(f64, f64)]>,
) -> Result<(FeatureBlock, bool)> {
    let centered = beta_center(block, spec.beta)?;
    let Some(cfg) = &spec.coord else {
        if coords.is_some() {
            return Err(PnError::InvalidParam(
                "coordinates given but no coordinate encoder configured".into(),
            ));
        }
        return Ok((centered, false));
    };
    let coords = coords.ok_or_else(|| {
        PnError::Dimension("coordinate encoder configured but no coordinates given".into())
    })?;
    if coords.len() != block.count() {
        return Err(PnError::Dimension(format!(
            "{} coordinates for {} feature columns",
            coords.len(),
            block.count()
        )));
    }
    let z = cfg.pivot_count();
    let mut warn = false;
    let mut enc = Matrix::zeros(2 * z, block.count());
    for (n, &(x, y)) in coords.iter().enumerate() {
        let ex = encode_coordinate(x, cfg);
        let ey = encode_coordinate(y, cfg);
        warn |= ex.out_of_range || ey.out_of_range;
        for i in 0..z {
            enc[(i, n)] = cfg.alpha * ex.values[i];
            enc[(z + i, n)] = cfg.alpha * ey.values[i];
        }
    }
    let stacked = centered.stack(&FeatureBlock::from_matrix(enc)?)?;
    Ok((stacked, warn))
}

/// `M = (1/N) Σ φ_n φ_nᵀ` over the (centered, augmented) columns.
pub fn autocorrelation(
    block: &FeatureBlock,
    spec: &PoolSpec,
    coords: Option<&[(f64, f64)]>,
) -> Result<SymMatrix> {
    let (aug, _) = augment(block, spec, coords)?;
    Ok(outer_mean(&aug))
}

/// `(1/N) Φ Φᵀ`.
pub fn outer_mean(block: &FeatureBlock) -> SymMatrix {
    let phi = block.as_matrix();
    let g = phi.matmul_transposed(phi).scale(1.0 / block.count() as f64);
    SymMatrix::symmetrize(&g)
}

/// Relation descriptor variant for few-shot comparison.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RelationVariant {
    /// Normalize the autocorrelation of the mean support block.
    Outer,
    /// Average the normalized autocorrelations of the support blocks.
    OuterL,
}

/// Builds the (support, query) pair of normalized second-order matrices.
///
/// `pn` is the normalizer applied to each autocorrelation matrix.
pub fn relation_descriptor<F>(
    variant: RelationVariant,
    supports: &[FeatureBlock],
    query: &FeatureBlock,
    pn: F,
) -> Result<(SymMatrix, SymMatrix)>
where
    F: Fn(&SymMatrix) -> Result<SymMatrix>,
{
    let first = supports
        .first()
        .ok_or_else(|| PnError::InvalidParam("relation descriptor needs J >= 1 supports".into()))?;
    let k = query.channels();
    if let Some(b) = supports.iter().find(|b| b.channels() != k) {
        return Err(PnError::Dimension(format!(
            "support block has {} channels, query has {k}",
            b.channels()
        )));
    }
    let j = supports.len() as f64;
    let support = match variant {
        RelationVariant::Outer => {
            let n = first.count();
            if supports.iter().any(|b| b.count() != n) {
                return Err(PnError::Dimension(
                    "averaging supports needs equal column counts".into(),
                ));
            }
            let mut sum = Matrix::zeros(k, n);
            for b in supports {
                sum.add_assign(b.as_matrix());
            }
            let mean = FeatureBlock::from_matrix(sum.scale(1.0 / j))?;
            pn(&outer_mean(&mean))?
        }
        RelationVariant::OuterL => {
            let mut acc = SymMatrix::zeros(k);
            for b in supports {
                acc = acc.add(&pn(&outer_mean(b))?);
            }
            acc.scale(1.0 / j)
        }
    };
    Ok((support, pn(&outer_mean(query))?))
}
