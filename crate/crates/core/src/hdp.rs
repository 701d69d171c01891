//! Heat diffusion operator `λ ↦ e^{−t/λ}`, its MaxExp/Gamma parametrizations
//! and upper bounds, the fast approximation (FAHDP) and the few-shot support
//! ratio.

use std::f64::consts::E;

use crate::elempn::PnConfig;
use crate::error::{PnError, Result};
use crate::fastpn::{fast_gamma_int, fast_maxexp_forward, TRACE_TOL};
use crate::matcore::{lambert_w, Branch, SymMatrix};
use crate::specpn::spn_forward;

/// Tolerance below which a bound gap counts as a violation.
pub const BOUND_TOL: f64 = 1e-12;

fn check_positive(x: f64, what: &str) -> Result<()> {
    if !(x > 0.0 && x.is_finite()) {
        return Err(PnError::Domain(format!("{what} must be > 0, got {x}")));
    }
    Ok(())
}

/// Spectral heat diffusion: `λ ↦ e^{−t/λ}` for `λ > 0`, `0 ↦ 0`.
pub fn hdp_apply(m: &SymMatrix, t: f64) -> Result<SymMatrix> {
    check_positive(t, "diffusion time t")?;
    Ok(spn_forward(m, &PnConfig::hdp(t), None)?.output)
}

/// `t(η) = (e/(e−1))·η^η/(η+1)^{η+1}`, evaluated in log space.
pub fn t_of_eta(eta: f64) -> Result<f64> {
    if !(eta >= 1.0 && eta.is_finite()) {
        return Err(PnError::Domain(format!("t_of_eta needs eta >= 1, got {eta}")));
    }
    let log = (E / (E - 1.0)).ln() + eta * eta.ln() - (eta + 1.0) * (eta + 1.0).ln();
    Ok(log.exp())
}

/// `η(t) = ½√(1 + 4/(t²(e−1)²)) − ½`, an approximate inverse of [`t_of_eta`].
pub fn eta_of_t(t: f64) -> Result<f64> {
    if !(t > 0.0 && t < 1.0) {
        return Err(PnError::Domain(format!("eta_of_t needs 0 < t < 1, got {t}")));
    }
    let k = t * (E - 1.0);
    Ok(0.5 * (1.0 + 4.0 / (k * k)).sqrt() - 0.5)
}

/// `γ(t) = e·t`.
pub fn gamma_of_t(t: f64) -> Result<f64> {
    check_positive(t, "t")?;
    Ok(E * t)
}

/// `t(γ) = γ/e`.
pub fn t_of_gamma(gamma: f64) -> Result<f64> {
    check_positive(gamma, "gamma")?;
    Ok(gamma / E)
}

/// `η̃(t) = ½ + √(¼ + (1/(t(e−1)) − 1/e)²)`: the MaxExp exponent for which
/// `e^{−t}(1 − (1−λ)^η̃)` bounds `e^{−t/λ}` from above.
pub fn eta_tilde(t: f64) -> Result<f64> {
    check_positive(t, "t")?;
    let a = 1.0 / (t * (E - 1.0)) - 1.0 / E;
    Ok(0.5 + (0.25 + a * a).sqrt())
}

/// Time matched by the scaled MaxExp with exponent `η̄`:
/// `(e/(e−1))·r/(r + η̄ − 1)` with `r = ((η̄−1)/η̄)^η̄`.
pub fn t_scaled(eta_bar: f64) -> Result<f64> {
    if !(eta_bar >= 1.0 && eta_bar.is_finite()) {
        return Err(PnError::Domain(format!("t_scaled needs eta >= 1, got {eta_bar}")));
    }
    let r = ((eta_bar - 1.0) / eta_bar).powf(eta_bar);
    Ok(E / (E - 1.0) * r / (r + eta_bar - 1.0))
}

/// `η̄(t) = η̃(2t − t_scaled(η̃(t)))`.
pub fn eta_bar(t: f64) -> Result<f64> {
    let arg = 2.0 * t - t_scaled(eta_tilde(t)?)?;
    if arg <= 0.0 {
        return Err(PnError::Domain(format!("eta_bar undefined at t = {t}")));
    }
    eta_tilde(arg)
}

/// `ε₁(η) = (e−1)/e − (1 − t(η))^η`.
pub fn eps1(eta: f64) -> Result<f64> {
    let t = t_of_eta(eta)?;
    Ok((E - 1.0) / E - (1.0 - t).powf(eta))
}

/// `ε₂(η) = 1 − (η/(η+1))^η − exp(−(e/(e−1))(η/(η+1))^η)`.
pub fn eps2(eta: f64) -> Result<f64> {
    if !(eta >= 1.0 && eta.is_finite()) {
        return Err(PnError::Domain(format!("eps2 needs eta >= 1, got {eta}")));
    }
    let q = (eta / (eta + 1.0)).powf(eta);
    Ok(1.0 - q - (-(E / (E - 1.0)) * q).exp())
}

/// Gaps of the scaled MaxExp bound and the probe points `y₀…y₃`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaledGaps {
    pub eps3: f64,
    pub eps4: f64,
    /// `[y₀, y₁, y₂, y₃]`.
    pub y: [f64; 4],
}

/// `ε₃`, `ε₄` and the probe points for `0 < t < 1`; `y₂` and `y₃` come from
/// the two real branches of Lambert W.
pub fn scaled_gaps(t: f64) -> Result<ScaledGaps> {
    if !(t > 0.0 && t < 1.0) {
        return Err(PnError::Domain(format!("scaled gaps need 0 < t < 1, got {t}")));
    }
    let et = eta_tilde(t)?;
    let eb = eta_bar(t)?;
    let r = ((eb - 1.0) / eb).powf(et);
    let emt = (-t).exp();
    let a = emt / t * r / (1.0 - eb);
    let b = emt * (1.0 - r / (1.0 - eb));
    let z = (b / a).exp() / a;
    let y2 = lambert_w(Branch::Lower, z)? - b / a;
    let y3 = lambert_w(Branch::Principal, z)? - b / a;
    let y1 = t * eb;
    let eps3 = emt - emt * r - (-t * eb).exp();
    let eps4 = emt - emt * ((y3 - t) / y3).powf(et) - (-y3).exp();
    Ok(ScaledGaps {
        eps3,
        eps4,
        y: [t, y1, y2, y3],
    })
}

/// Exponent rounding for [`fahdp_apply`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rounding {
    /// Keep the real exponent (spectral path).
    None,
    /// Ceiling for `t < 1`, floor for `t ≥ 1`; keeps the upper bound.
    CeilFloor,
    Round,
}

fn round_exponent(x: f64, t: f64, rounding: Rounding) -> f64 {
    match rounding {
        Rounding::None => x,
        Rounding::CeilFloor if t < 1.0 => x.ceil(),
        Rounding::CeilFloor => x.floor(),
        Rounding::Round => x.round(),
    }
}

/// Exponent FAHDP uses at time `t`.
pub fn fahdp_exponent(t: f64, rounding: Rounding) -> Result<f64> {
    check_positive(t, "t")?;
    let raw = if t < 1.0 { eta_tilde(t)? } else { t };
    Ok(round_exponent(raw, t, rounding).max(1.0))
}

/// Scalar FAHDP profile at eigenvalue `λ`.
pub fn fahdp_scalar(lambda: f64, t: f64, rounding: Rounding) -> Result<f64> {
    let e = fahdp_exponent(t, rounding)?;
    let v = if t < 1.0 {
        1.0 - (1.0 - lambda).max(0.0).powf(e)
    } else {
        lambda.max(0.0).powf(e)
    };
    Ok((-t).exp() * v)
}

/// Fast approximate heat diffusion on a trace-normalized PSD `M`:
/// `e^{−t}(𝕀 − (𝕀−M)^{ĥ(η̃(t))})` for `t < 1`, `e^{−t}·M^{ĥ(t)}` otherwise.
/// Integer exponents run on the squaring path, others on the spectral path.
pub fn fahdp_apply(m: &SymMatrix, t: f64, rounding: Rounding) -> Result<SymMatrix> {
    let tr = m.trace();
    if (tr - 1.0).abs() > TRACE_TOL {
        return Err(PnError::TraceNotNormalized(tr));
    }
    let e = fahdp_exponent(t, rounding)?;
    let integral = e.fract() == 0.0 && e <= u64::MAX as f64;
    let out = if t < 1.0 {
        if integral {
            fast_maxexp_forward(m, e as u64)?.0
        } else {
            spn_forward(m, &PnConfig::maxexp(e), None)?.output
        }
    } else if integral {
        fast_gamma_int(m, e as u64)?.0
    } else {
        spn_forward(m, &PnConfig::gamma(e).with_eps(0.0), None)?.output
    };
    Ok(out.scale((-t).exp()))
}

/// One row of [`verify_bounds`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundReport {
    pub eta: f64,
    pub t: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub eps3: f64,
    pub eps4: f64,
    /// `[y₀, y₁, y₂, y₃]`.
    pub y: [f64; 4],
    /// Smallest bound gap over the λ grid (MaxExp, Gamma and FAHDP).
    pub min_gap: f64,
    /// `max(0, −min_gap)`, also covering violated gap orderings.
    pub max_violation: f64,
    /// Grid points and orderings that failed by more than [`BOUND_TOL`].
    pub violations: usize,
}

impl BoundReport {
    pub const CSV_HEADER: &'static str = "eta,t,eps1,eps2,eps3,eps4,max_violation";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.eta, self.t, self.eps1, self.eps2, self.eps3, self.eps4, self.max_violation
        )
    }
}

/// Options for [`verify_bounds`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundOptions {
    /// Multiplies the time used to parametrize the bounding operators while
    /// heat diffusion keeps the true `t`. Anything but 1 is a deliberately
    /// wrong parametrization, used to exercise violation reporting.
    pub t_scale: f64,
}

impl Default for BoundOptions {
    fn default() -> Self {
        BoundOptions { t_scale: 1.0 }
    }
}

/// `n` evenly spaced points in `(0, 1]`: `k/n` for `k = 1..=n`.
pub fn lambda_grid(n: usize) -> Vec<f64> {
    (1..=n).map(|k| k as f64 / n as f64).collect()
}

fn row(eta: f64, t: f64, eta_maxexp: f64, lambdas: &[f64], opts: &BoundOptions) -> Result<BoundReport> {
    let tp = t * opts.t_scale;
    let gamma = E * tp;
    let fahdp_eta = if tp < 1.0 {
        eta_tilde(tp)?.ceil()
    } else {
        f64::NAN
    };
    let mut min_gap = f64::INFINITY;
    let mut violations = 0;
    for &l in lambdas {
        let hdp = (-t / l).exp();
        let mut gaps = vec![
            1.0 - (1.0 - l).max(0.0).powf(eta_maxexp) - hdp,
            l.powf(gamma) - hdp,
        ];
        if tp < 1.0 {
            gaps.push((-tp).exp() * (1.0 - (1.0 - l).max(0.0).powf(fahdp_eta)) - hdp);
        }
        for g in gaps {
            min_gap = min_gap.min(g);
            if g < -BOUND_TOL {
                violations += 1;
            }
        }
    }
    let e1 = eps1(eta)?;
    let e2 = eps2(eta)?;
    let sg = scaled_gaps(t)?;
    let mut max_violation = (-min_gap).max(0.0);
    let y = sg.y;
    for excess in [
        e1 - e2,
        sg.eps3 - sg.eps4,
        y[2] - y[1],
        y[1] - y[3],
    ] {
        if excess > BOUND_TOL {
            violations += 1;
            max_violation = max_violation.max(excess);
        }
    }
    Ok(BoundReport {
        eta,
        t,
        eps1: e1,
        eps2: e2,
        eps3: sg.eps3,
        eps4: sg.eps4,
        y,
        min_gap,
        max_violation,
        violations,
    })
}

/// Checks the MaxExp, Gamma and FAHDP upper bounds of heat diffusion on a
/// λ grid, and the gap orderings `ε₁ ≤ ε₂`, `ε₃ ≤ ε₄`, `y₂ ≤ y₁ ≤ y₃`.
///
/// Each `η` row uses `t = t(η)`; each `t` row uses `η = η̃(t)` for MaxExp and
/// reports `ε₁, ε₂` at `η(t)`.
pub fn verify_bounds(
    etas: &[f64],
    ts: &[f64],
    lambdas: &[f64],
    opts: &BoundOptions,
) -> Result<Vec<BoundReport>> {
    if lambdas.iter().any(|&l| !(l > 0.0 && l <= 1.0)) {
        return Err(PnError::Domain("lambda grid must lie in (0, 1]".into()));
    }
    let mut out = Vec::with_capacity(etas.len() + ts.len());
    for &eta in etas {
        let t = t_of_eta(eta)?;
        out.push(row(eta, t, eta, lambdas, opts)?);
    }
    for &t in ts {
        if !(t > 0.0 && t < 1.0) {
            return Err(PnError::Domain(format!("t grid must lie in (0, 1), got {t}")));
        }
        let eta = eta_of_t(t)?.max(1.0);
        let eta_m = eta_tilde(t * opts.t_scale)?;
        out.push(row(eta, t, eta_m, lambdas, opts)?);
    }
    Ok(out)
}

/// `κ = ((J+1)N + 1)/(J + 2)`.
pub fn support_ratio(j: u64, n: u64) -> Result<f64> {
    if n == 0 {
        return Err(PnError::InvalidParam("support ratio needs N >= 1".into()));
    }
    Ok(((j + 1) * n + 1) as f64 / (j + 2) as f64)
}

/// `κ' = 1/N`.
pub fn variance_ratio(n: u64) -> Result<f64> {
    if n == 0 {
        return Err(PnError::InvalidParam("variance ratio needs N >= 1".into()));
    }
    Ok(1.0 / n as f64)
}
