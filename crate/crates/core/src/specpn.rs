//! Spectral power normalization: `Ψ = U·diag(g(p(λ)))·Uᵀ` with an
//! eigendecomposition backward pass and optional spectral-gap regularization.

use crate::elempn::{apply_residual, check_same_dim, residual_backward, PnConfig, PnKind};
use crate::error::{PnError, Result};
use crate::matcore::{sym_eig, Matrix, RngStream, SpectralDecomp, SymMatrix};

pub const DEFAULT_GAP: f64 = 1e-5;
pub const DEFAULT_MAX_RETRIES: usize = 10;

/// Spectral-gap regularization: while two eigenvalues are closer than `gap`,
/// retry with `M + k·diag(ξ)`, `ξ_i ~ U(gap, gap + d·gap)`, `k = 1, 2, …`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralGapConfig {
    pub gap: f64,
    pub max_retries: usize,
    /// Seed of the stream the `ξ` draws come from.
    pub seed: u64,
}

impl Default for SpectralGapConfig {
    fn default() -> Self {
        SpectralGapConfig {
            gap: DEFAULT_GAP,
            max_retries: DEFAULT_MAX_RETRIES,
            seed: 0,
        }
    }
}

impl SpectralGapConfig {
    fn validate(&self) -> Result<()> {
        if !(self.gap > 0.0 && self.gap.is_finite()) {
            return Err(PnError::InvalidParam(format!("spectral gap must be > 0, got {}", self.gap)));
        }
        if self.max_retries == 0 {
            return Err(PnError::InvalidParam("max_retries must be >= 1".into()));
        }
        Ok(())
    }
}

/// Status of a spectral forward pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SpnFlags {
    /// Some slightly negative eigenvalues were clamped to 0.
    pub clamped_negative: bool,
    /// Number of gap-regularization retries used (0 when none were needed).
    pub retries: usize,
}

/// Result of [`spn_forward`], consumed by [`spn_backward`].
#[derive(Clone, Debug)]
pub struct SpnForward {
    pub output: SymMatrix,
    /// Decomposition of the (possibly regularized) input, with clamped values.
    pub decomp: SpectralDecomp,
    pub flags: SpnFlags,
    input: SymMatrix,
    psi0: SymMatrix,
    gap_required: Option<f64>,
}

fn decompose_regularized(
    m: &SymMatrix,
    gap: Option<&SpectralGapConfig>,
) -> Result<(SpectralDecomp, usize)> {
    let dec = sym_eig(m)?;
    let Some(cfg) = gap else {
        return Ok((dec, 0));
    };
    cfg.validate()?;
    if dec.min_gap() >= cfg.gap {
        return Ok((dec, 0));
    }
    let d = m.dim();
    let mut rng = RngStream::new(cfg.seed);
    let mut found = dec.min_gap();
    for k in 1..=cfg.max_retries {
        let xi: Vec<f64> = (0..d)
            .map(|_| k as f64 * rng.uniform_in(cfg.gap, cfg.gap + d as f64 * cfg.gap))
            .collect();
        let dec = sym_eig(&m.add_diagonal(&xi))?;
        found = dec.min_gap();
        if found >= cfg.gap {
            return Ok((dec, k));
        }
    }
    Err(PnError::SpectralGap {
        found,
        required: cfg.gap,
        attempts: cfg.max_retries,
    })
}

/// Spectral forward pass. `gap = None` disables gap regularization.
pub fn spn_forward(
    m: &SymMatrix,
    cfg: &PnConfig,
    gap: Option<&SpectralGapConfig>,
) -> Result<SpnForward> {
    cfg.validate()?;
    let (mut dec, retries) = decompose_regularized(m, gap)?;
    let tol = gap.map_or(DEFAULT_GAP, |g| g.gap);
    let mut clamped = false;
    if matches!(cfg.op, PnKind::Gamma | PnKind::MaxExp | PnKind::Hdp) && !cfg.signed_gamma {
        for v in dec.values.iter_mut() {
            if *v < 0.0 {
                if *v < -tol {
                    return Err(PnError::Domain(format!(
                        "{} needs a positive semi-definite input, found eigenvalue {v:.3e}",
                        cfg.op
                    )));
                }
                *v = 0.0;
                clamped = true;
            }
        }
    }
    let s = spectral_normalizer(&dec, cfg)?;
    let mut f = Vec::with_capacity(dec.dim());
    for &l in &dec.values {
        f.push(cfg.g(l / s)?);
    }
    let psi0 = dec.reconstruct_values(&f);
    let output = apply_residual(m, psi0.clone(), cfg);
    Ok(SpnForward {
        output,
        decomp: dec,
        flags: SpnFlags {
            clamped_negative: clamped,
            retries,
        },
        input: m.clone(),
        psi0,
        gap_required: gap.map(|g| g.gap),
    })
}

fn spectral_normalizer(dec: &SpectralDecomp, cfg: &PnConfig) -> Result<f64> {
    if !cfg.normalizes() {
        return Ok(1.0);
    }
    let s = dec.values.iter().sum::<f64>() + cfg.eps;
    if s <= 0.0 {
        return Err(PnError::Domain(format!(
            "trace normalization needs trace + eps > 0, got {s}"
        )));
    }
    Ok(s)
}

/// Eigenvalue pairs closer than `ε'/2` use the mean derivative, the
/// second-order accurate limit of the divided difference.
fn degenerate_threshold(fwd: &SpnForward) -> f64 {
    0.5 * fwd.gap_required.unwrap_or(DEFAULT_GAP)
}

/// Spectral backward pass: `∂ℓ/∂M` given `upstream = ∂ℓ/∂Ψ`.
///
/// Uses `U (K ∘ Uᵀ S U) Uᵀ` with the divided differences
/// `K_ij = (f_i − f_j)/(λ_i − λ_j)` off the diagonal and the eigenvalue
/// derivative (including the trace-normalizer term) on it.
pub fn spn_backward(upstream: &SymMatrix, cfg: &PnConfig, fwd: &SpnForward) -> Result<SymMatrix> {
    cfg.validate()?;
    check_same_dim(&fwd.input, upstream)?;
    if let Some(required) = fwd.gap_required {
        let found = fwd.decomp.min_gap();
        if found < required {
            return Err(PnError::SpectralGap {
                found,
                required,
                attempts: fwd.flags.retries,
            });
        }
    }
    let (u, direct) = residual_backward(&fwd.input, upstream, &fwd.psi0, cfg);
    let dec = &fwd.decomp;
    let n = dec.dim();
    let s = spectral_normalizer(dec, cfg)?;
    let lam = &dec.values;
    let mut f = Vec::with_capacity(n);
    let mut fp = Vec::with_capacity(n);
    for &l in lam {
        f.push(cfg.g(l / s)?);
        fp.push(cfg.dg(l / s)? / s);
    }
    let st = dec.to_eigenbasis(u.as_matrix());
    let coupling = if cfg.normalizes() {
        -(0..n).map(|i| st[(i, i)] * fp[i] * lam[i]).sum::<f64>() / s
    } else {
        0.0
    };
    let thresh = degenerate_threshold(fwd);
    let inner = Matrix::from_fn(n, n, |i, j| {
        if i == j {
            st[(i, i)] * fp[i] + coupling
        } else {
            let dl = lam[i] - lam[j];
            let k = if dl.abs() < thresh {
                0.5 * (fp[i] + fp[j])
            } else {
                (f[i] - f[j]) / dl
            };
            k * 0.5 * (st[(i, j)] + st[(j, i)])
        }
    });
    let grad = SymMatrix::symmetrize(&dec.from_eigenbasis(&inner));
    Ok(grad.add(&direct))
}

/// Applies a scalar map to the spectrum: `U·diag(f(λ))·Uᵀ`.
pub fn spectral_map(m: &SymMatrix, f: impl FnMut(f64) -> f64) -> Result<SymMatrix> {
    Ok(sym_eig(m)?.reconstruct_with(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elempn::pn_backward;
    use crate::matcore::{random_orthogonal, spd_from_spectrum, RngStream};

    #[test]
    fn diagonal_maxexp() {
        let m = SymMatrix::diagonal(&[0.6, 0.4]);
        let out = spn_forward(&m, &PnConfig::maxexp(2.0), None).unwrap().output;
        assert!((out.get(0, 0) - 0.84).abs() < 1e-15);
        assert!((out.get(1, 1) - 0.64).abs() < 1e-15);
        assert_eq!(out.get(0, 1), 0.0);
    }

    #[test]
    fn isotropic_hdp() {
        let d = 4;
        let t = 0.3;
        let m = SymMatrix::identity(d).scale(1.0 / d as f64);
        let out = spn_forward(&m, &PnConfig::hdp(t), None).unwrap().output;
        let expected = SymMatrix::identity(d).scale((-t * d as f64).exp());
        assert!(out.rel_distance(&expected) < 1e-14);
    }

    #[test]
    fn hdp_maps_zero_eigenvalue_to_zero() {
        let m = SymMatrix::diagonal(&[0.5, 0.0]);
        let out = spn_forward(&m, &PnConfig::hdp(0.2), None).unwrap().output;
        assert_eq!(out.get(1, 1), 0.0);
    }

    #[test]
    fn gamma_half_squares_back() {
        let mut rng = RngStream::new(16);
        let m = crate::matcore::random_spd(16, crate::matcore::SpectrumLaw::Uniform, &mut rng)
            .unwrap();
        let r = spn_forward(&m, &PnConfig::gamma(0.5).with_eps(0.0), None)
            .unwrap()
            .output;
        let sq = SymMatrix::symmetrize(&r.matmul(&r));
        assert!(sq.rel_distance(&m) < 1e-8);
    }

    #[test]
    fn linear_backward_is_sym_upstream() {
        let mut rng = RngStream::new(2);
        let m = spd_from_spectrum(&[0.5, 0.3, 0.15, 0.05], &mut rng);
        let u = SymMatrix::from_fn(4, |i, j| (i as f64 + 1.0) * 0.1 - j as f64 * 0.03);
        let cfg = PnConfig::gamma(1.0).with_eps(0.0);
        let fwd = spn_forward(&m, &cfg, None).unwrap();
        let g = spn_backward(&u, &cfg, &fwd).unwrap();
        assert!(g.rel_distance(&u) < 1e-12);
    }

    #[test]
    fn diagonal_case_matches_elementwise() {
        let m = SymMatrix::diagonal(&[0.5, 0.3, 0.2]);
        let u = SymMatrix::diagonal(&[0.7, -1.1, 0.4]);
        for cfg in [
            PnConfig::maxexp(4.0).with_trace_normalize(true),
            PnConfig::gamma(0.4),
            PnConfig::sigme(3.0).with_trace_normalize(true),
            PnConfig::asinhe(2.0),
            PnConfig::hdp(0.2),
        ] {
            let fwd = spn_forward(&m, &cfg, None).unwrap();
            let gs = spn_backward(&u, &cfg, &fwd).unwrap();
            let ge = pn_backward(&m, &u, &cfg).unwrap();
            for i in 0..3 {
                assert!((gs.get(i, i) - ge.get(i, i)).abs() < 1e-12, "{:?}", cfg.op);
            }
        }
    }

    #[test]
    fn conjugation_covariance() {
        let mut rng = RngStream::new(21);
        let m = spd_from_spectrum(&[0.4, 0.3, 0.2, 0.07, 0.03], &mut rng);
        let q = random_orthogonal(5, &mut rng);
        let qm = SymMatrix::symmetrize(&q.matmul(m.as_matrix()).matmul_transposed(&q));
        let cfg = PnConfig::maxexp(5.0).with_trace_normalize(true);
        let a = spn_forward(&qm, &cfg, None).unwrap().output;
        let b = spn_forward(&m, &cfg, None).unwrap().output;
        let qb = SymMatrix::symmetrize(&q.matmul(b.as_matrix()).matmul_transposed(&q));
        assert!(a.sub(&qb).frobenius_norm() < 1e-8);
    }

    #[test]
    fn gap_regularization_separates_identity() {
        let m = SymMatrix::identity(6);
        let gap = SpectralGapConfig::default();
        let fwd = spn_forward(&m, &PnConfig::gamma(0.5), Some(&gap)).unwrap();
        assert!(fwd.flags.retries >= 1);
        assert!(fwd.decomp.min_gap() >= gap.gap);
        let again = spn_forward(&m, &PnConfig::gamma(0.5), Some(&gap)).unwrap();
        assert_eq!(fwd.output, again.output);
        let u = SymMatrix::identity(6);
        assert!(spn_backward(&u, &PnConfig::gamma(0.5), &fwd).is_ok());
    }

    #[test]
    fn gap_exhaustion_errors() {
        let gap = SpectralGapConfig {
            gap: 10.0,
            max_retries: 2,
            seed: 1,
        };
        let err = spn_forward(&SymMatrix::identity(3), &PnConfig::gamma(0.5), Some(&gap));
        assert!(matches!(err, Err(PnError::SpectralGap { attempts: 2, .. })));
    }

    #[test]
    fn negative_eigenvalues() {
        let m = SymMatrix::diagonal(&[0.5, -1e-7]);
        let fwd = spn_forward(&m, &PnConfig::gamma(0.5), None).unwrap();
        assert!(fwd.flags.clamped_negative);
        let bad = SymMatrix::diagonal(&[0.5, -0.1]);
        assert!(matches!(
            spn_forward(&bad, &PnConfig::maxexp(2.0), None),
            Err(PnError::Domain(_))
        ));
        assert!(spn_forward(&bad, &PnConfig::sigme(2.0), None).is_ok());
    }

    #[test]
    fn whitening_pushes_mass_up() {
        let mut rng = RngStream::new(30);
        let law = crate::matcore::SpectrumLaw::Beta { a: 2.0, b: 5.0 };
        let spec = law.sample(32, &mut rng).unwrap();
        let m = spd_from_spectrum(&spec, &mut rng);
        let frac = |v: &[f64]| v.iter().filter(|&&x| x > 0.5).count() as f64 / v.len() as f64;
        let before = frac(&sym_eig(&m).unwrap().values);
        for cfg in [PnConfig::maxexp(10.0), PnConfig::gamma(0.3), PnConfig::hdp(0.1)] {
            let out = spn_forward(&m, &cfg, None).unwrap().output;
            let after = frac(&sym_eig(&out).unwrap().values);
            assert!(after >= before, "{:?}", cfg.op);
        }
    }
}
