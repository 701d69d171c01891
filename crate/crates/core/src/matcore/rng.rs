use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};

use super::matrix::Matrix;
use super::sym::SymMatrix;
use crate::error::{PnError, Result};

/// Seeded random stream backed by ChaCha8 (`rand_chacha`), which produces
/// the same sequence on every platform for a given seed.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub const ALGORITHM: &'static str = "ChaCha8";

    pub fn new(seed: u64) -> Self {
        RngStream {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream with the same key and a different ChaCha stream id.
    pub fn substream(&self, id: u64) -> RngStream {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(id.wrapping_add(1));
        RngStream {
            seed: self.seed,
            rng,
        }
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn beta(&mut self, a: f64, b: f64) -> Result<f64> {
        let dist = Beta::new(a, b)
            .map_err(|e| PnError::InvalidParam(format!("beta({a}, {b}): {e}")))?;
        Ok(dist.sample(&mut self.rng))
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }
}

/// Eigenvalue distribution for [`random_spd`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SpectrumLaw {
    /// Eigenvalues drawn from `(0, 1]`.
    Uniform,
    /// Eigenvalues drawn from `Beta(a, b)`, floored at `1e-12`.
    Beta { a: f64, b: f64 },
}

impl SpectrumLaw {
    pub fn sample(&self, d: usize, rng: &mut RngStream) -> Result<Vec<f64>> {
        match *self {
            SpectrumLaw::Uniform => Ok((0..d).map(|_| 1.0 - rng.uniform()).collect()),
            SpectrumLaw::Beta { a, b } => (0..d)
                .map(|_| rng.beta(a, b).map(|v| v.max(1e-12)))
                .collect(),
        }
    }
}

/// Random orthogonal matrix: Gram-Schmidt (applied twice) on Gaussian columns.
pub fn random_orthogonal(d: usize, rng: &mut RngStream) -> Matrix {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(d);
    while cols.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        for _ in 0..2 {
            for q in &cols {
                let p: f64 = q.iter().zip(&v).map(|(a, b)| a * b).sum();
                for (vi, qi) in v.iter_mut().zip(q) {
                    *vi -= p * qi;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        cols.push(v);
    }
    Matrix::from_fn(d, d, |i, j| cols[j][i])
}

/// `U · diag(spectrum) · Uᵀ` with a random orthogonal `U`.
pub fn spd_from_spectrum(spectrum: &[f64], rng: &mut RngStream) -> SymMatrix {
    let d = spectrum.len();
    let u = random_orthogonal(d, rng);
    let scaled = Matrix::from_fn(d, d, |i, j| u[(i, j)] * spectrum[j]);
    SymMatrix::symmetrize(&scaled.matmul_transposed(&u))
}

/// Random symmetric positive definite matrix with eigenvalues drawn from `law`.
pub fn random_spd(d: usize, law: SpectrumLaw, rng: &mut RngStream) -> Result<SymMatrix> {
    if d == 0 {
        return Err(PnError::Dimension("random_spd needs d >= 1".into()));
    }
    let spectrum = law.sample(d, rng)?;
    Ok(spd_from_spectrum(&spectrum, rng))
}

/// `M / trace(M)`.
pub fn trace_normalized(m: &SymMatrix) -> SymMatrix {
    m.scale(1.0 / m.trace())
}
