//! SVD-free spectral operators built from matrix products.
//!
//! `𝕀 − (𝕀 − M)^η` (MaxExp on a trace-normalized `M`) and `M^γ` (integer
//! Gamma) are computed by exponentiation by squaring over the bits of the
//! exponent. The forward pass records its intermediate powers on a
//! [`FastTape`]; the backward pass replays the tape in reverse and contracts
//! the upstream gradient through each product, so it never forms a Jacobian.

use crate::elempn::check_same_dim;
use crate::error::{PnError, Result};
use crate::matcore::{Matrix, SymMatrix};

/// Largest accepted `|trace(M) − 1|` for the MaxExp fast path.
pub const TRACE_TOL: f64 = 1e-8;

/// Matrix-matrix product counts of one forward/backward pair.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MMCounter {
    pub forward: usize,
    pub backward: usize,
}

/// Which power the tape computes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FastKind {
    /// Output `𝕀 − (𝕀 − M)^η`.
    MaxExp,
    /// Output `M^γ`.
    GammaInt,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Step {
    /// `G_{t+1} = G_t · B_q`.
    Product { t: usize, q: usize },
    /// `B_{q+1} = B_q · B_q`.
    Square { q: usize },
}

/// Intermediate powers recorded by a forward pass.
#[derive(Clone, Debug)]
pub struct FastTape {
    pub kind: FastKind,
    pub exponent: u64,
    pub mm_count_forward: usize,
    /// Running products `G_0 = 𝕀, G_1, …`.
    g: Vec<SymMatrix>,
    /// Repeated squares `B_0, B_0², B_0⁴, …`.
    b: Vec<SymMatrix>,
    steps: Vec<Step>,
    /// Trace divided out when the input was renormalized automatically.
    renormalized_by: Option<f64>,
    input: SymMatrix,
}

impl FastTape {
    pub fn dim(&self) -> usize {
        self.input.dim()
    }

    /// Number of stored matrices.
    pub fn stored_matrices(&self) -> usize {
        self.g.len() + self.b.len()
    }
}

fn product(a: &SymMatrix, b: &SymMatrix, count: &mut usize) -> SymMatrix {
    *count += 1;
    SymMatrix::symmetrize(&a.matmul(b))
}

fn sym_of(a: &Matrix) -> SymMatrix {
    SymMatrix::symmetrize(a)
}

fn run_forward(base: SymMatrix, exponent: u64) -> (SymMatrix, Vec<SymMatrix>, Vec<SymMatrix>, Vec<Step>, usize) {
    let d = base.dim();
    let mut count = 0;
    let mut g = vec![SymMatrix::identity(d)];
    let mut b = vec![base];
    let mut steps = Vec::new();
    let mut n = exponent;
    let mut q = 0;
    loop {
        if n & 1 == 1 {
            let t = g.len() - 1;
            let next = product(&g[t], &b[q], &mut count);
            g.push(next);
            steps.push(Step::Product { t, q });
        }
        n >>= 1;
        if n == 0 {
            break;
        }
        let next = product(&b[q], &b[q], &mut count);
        b.push(next);
        steps.push(Step::Square { q });
        q += 1;
    }
    let last = g.last().expect("at least one product").clone();
    (last, g, b, steps, count)
}

fn check_exponent(e: u64, what: &str) -> Result<()> {
    if e < 1 {
        return Err(PnError::InvalidParam(format!("{what} must be an integer >= 1, got {e}")));
    }
    Ok(())
}

/// Fast spectral MaxExp on a trace-normalized `M`: `𝕀 − (𝕀 − M)^η`.
pub fn fast_maxexp_forward(m: &SymMatrix, eta: u64) -> Result<(SymMatrix, FastTape)> {
    fast_maxexp_forward_with(m, eta, false)
}

/// As [`fast_maxexp_forward`]; with `auto_renormalize` an input whose trace
/// is off by more than [`TRACE_TOL`] is divided by its trace instead of
/// rejected, and the backward pass differentiates through that division.
pub fn fast_maxexp_forward_with(
    m: &SymMatrix,
    eta: u64,
    auto_renormalize: bool,
) -> Result<(SymMatrix, FastTape)> {
    check_exponent(eta, "eta")?;
    let tr = m.trace();
    let mut renormalized_by = None;
    let mn = if (tr - 1.0).abs() <= TRACE_TOL {
        m.clone()
    } else if auto_renormalize && tr > 0.0 {
        renormalized_by = Some(tr);
        m.scale(1.0 / tr)
    } else {
        return Err(PnError::TraceNotNormalized(tr));
    };
    let base = mn.scale(-1.0).shift(1.0);
    let (pow, g, b, steps, count) = run_forward(base, eta);
    let out = pow.scale(-1.0).shift(1.0);
    Ok((
        out,
        FastTape {
            kind: FastKind::MaxExp,
            exponent: eta,
            mm_count_forward: count,
            g,
            b,
            steps,
            renormalized_by,
            input: m.clone(),
        },
    ))
}

/// `M^γ` for an integer `γ ≥ 1`.
pub fn fast_gamma_int(m: &SymMatrix, gamma: u64) -> Result<(SymMatrix, FastTape)> {
    check_exponent(gamma, "gamma")?;
    let (pow, g, b, steps, count) = run_forward(m.clone(), gamma);
    Ok((
        pow,
        FastTape {
            kind: FastKind::GammaInt,
            exponent: gamma,
            mm_count_forward: count,
            g,
            b,
            steps,
            renormalized_by: None,
            input: m.clone(),
        },
    ))
}

/// Backward pass for either tape kind, returning the gradient and the
/// product counts of both passes.
pub fn fast_backward_counted(tape: &FastTape, upstream: &SymMatrix) -> Result<(SymMatrix, MMCounter)> {
    check_same_dim(&tape.input, upstream)?;
    let d = tape.dim();
    let mut count = 0;
    let sym_up = upstream.clone();
    let mut g_bar = match tape.kind {
        FastKind::MaxExp => sym_up.scale(-1.0),
        FastKind::GammaInt => sym_up,
    };
    let mut b_bar: Vec<SymMatrix> = vec![SymMatrix::zeros(d); tape.b.len()];

    for step in tape.steps.iter().rev() {
        match *step {
            Step::Product { t, q } => {
                let bq = &tape.b[q];
                b_bar[q] = b_bar[q].add(&product(&tape.g[t], &g_bar, &mut count));
                g_bar = product(&g_bar, bq, &mut count);
            }
            Step::Square { q } => {
                let contrib = product(&b_bar[q + 1], &tape.b[q], &mut count).scale(2.0);
                b_bar[q] = b_bar[q].add(&contrib);
            }
        }
    }
    let mut grad = match tape.kind {
        FastKind::MaxExp => b_bar[0].scale(-1.0),
        FastKind::GammaInt => b_bar.swap_remove(0),
    };
    if let Some(tr) = tape.renormalized_by {
        let coupling = grad.inner(&tape.input) / (tr * tr);
        grad = grad.scale(1.0 / tr).shift(-coupling);
    }
    Ok((
        grad,
        MMCounter {
            forward: tape.mm_count_forward,
            backward: count,
        },
    ))
}

/// `∂ℓ/∂M` for a fast MaxExp tape.
pub fn fast_maxexp_backward(tape: &FastTape, upstream: &SymMatrix) -> Result<SymMatrix> {
    if tape.kind != FastKind::MaxExp {
        return Err(PnError::InvalidParam("tape was not recorded by fast MaxExp".into()));
    }
    Ok(fast_backward_counted(tape, upstream)?.0)
}

/// `∂ℓ/∂M` for an integer Gamma tape.
pub fn fast_gamma_int_backward(tape: &FastTape, upstream: &SymMatrix) -> Result<SymMatrix> {
    if tape.kind != FastKind::GammaInt {
        return Err(PnError::InvalidParam("tape was not recorded by integer Gamma".into()));
    }
    Ok(fast_backward_counted(tape, upstream)?.0)
}

/// `Σ_{n=0}^{η−1} Bⁿ S B^{η−1−n}` in folded form:
/// `2·Sym(Σ_{n<⌊η/2⌋} Bⁿ S B^{η−1−n}) + [η odd]·B^{⌊η/2⌋} S B^{⌊η/2⌋}`.
fn power_sum_vjp(base: &SymMatrix, s: &SymMatrix, eta: u64) -> SymMatrix {
    let d = base.dim();
    let e = eta as usize;
    let mut pows = vec![SymMatrix::identity(d)];
    for k in 1..e {
        let next = sym_of(&pows[k - 1].matmul(base));
        pows.push(next);
    }
    let mut acc = Matrix::zeros(d, d);
    for n in 0..e / 2 {
        acc.add_assign(&pows[n].matmul(s).matmul(pows[e - 1 - n].as_matrix()));
    }
    let mut out = sym_of(&acc).scale(2.0);
    if e % 2 == 1 {
        let h = &pows[e / 2];
        out = out.add(&sym_of(&h.matmul(s).matmul(h.as_matrix())));
    }
    out
}

/// Closed-form MaxExp derivative with `B = 𝕀 − M`; cost linear in `η`.
pub fn maxexp_closed_derivative(m: &SymMatrix, upstream: &SymMatrix, eta: u64) -> Result<SymMatrix> {
    check_exponent(eta, "eta")?;
    check_same_dim(m, upstream)?;
    let tr = m.trace();
    if (tr - 1.0).abs() > TRACE_TOL {
        return Err(PnError::TraceNotNormalized(tr));
    }
    Ok(power_sum_vjp(&m.scale(-1.0).shift(1.0), upstream, eta))
}

/// Closed-form integer Gamma derivative with `B = M`.
pub fn gamma_int_closed_derivative(m: &SymMatrix, upstream: &SymMatrix, gamma: u64) -> Result<SymMatrix> {
    check_exponent(gamma, "gamma")?;
    check_same_dim(m, upstream)?;
    Ok(power_sum_vjp(m, upstream, gamma))
}

pub const DEFAULT_NS_ITERS: usize = 20;

/// Newton-Schulz square root.
///
/// Scales `M` by `1/trace(M)`, runs the coupled iteration
/// `T = ½(3𝕀 − Z Y)`, `Y ← Y T`, `Z ← T Z` from `Y = M/trace`, `Z = 𝕀`, and
/// returns `√trace · Y`. Each iteration costs three products.
pub fn newton_schulz_sqrt(m: &SymMatrix, iters: usize) -> Result<(SymMatrix, MMCounter)> {
    if iters == 0 {
        return Err(PnError::InvalidParam("newton-schulz needs iters >= 1".into()));
    }
    let tr = m.trace();
    if !(tr > 0.0) || !tr.is_finite() {
        return Err(PnError::Domain(format!(
            "newton-schulz needs a positive definite input, trace is {tr}"
        )));
    }
    let d = m.dim();
    let mut y = m.as_matrix().scale(1.0 / tr);
    let mut z = Matrix::identity(d);
    let three = Matrix::identity(d).scale(3.0);
    let mut count = 0;
    let limit = 1e6 * (d as f64).sqrt();
    for k in 0..iters {
        let zy = z.matmul(&y);
        let t = three.sub(&zy).scale(0.5);
        y = y.matmul(&t);
        z = t.matmul(&z);
        count += 3;
        let norm = y.frobenius_norm();
        if !norm.is_finite() || norm > limit {
            return Err(PnError::Divergence(format!(
                "newton-schulz blew up at iteration {} (|Y| = {norm:.3e}); input is likely indefinite or too ill-conditioned",
                k + 1
            )));
        }
    }
    Ok((
        SymMatrix::symmetrize(&y).scale(tr.sqrt()),
        MMCounter {
            forward: count,
            backward: 0,
        },
    ))
}

/// `⌊log₂ e⌋ + popcount(e)`: products used by the squaring forward pass.
pub fn expected_forward_count(e: u64) -> usize {
    (63 - e.leading_zeros()) as usize + e.count_ones() as usize
}

/// `2·popcount(e) + ⌊log₂ e⌋`: products used by the replayed backward pass.
pub fn expected_backward_count(e: u64) -> usize {
    (63 - e.leading_zeros()) as usize + 2 * e.count_ones() as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elempn::PnConfig;
    use crate::matcore::{random_spd, trace_normalized, RngStream, SpectrumLaw};
    use crate::specpn::spn_forward;

    fn rand_norm(d: usize, seed: u64) -> SymMatrix {
        trace_normalized(&random_spd(d, SpectrumLaw::Uniform, &mut RngStream::new(seed)).unwrap())
    }

    #[test]
    fn eta_one_is_identity() {
        let m = rand_norm(5, 1);
        let (out, tape) = fast_maxexp_forward(&m, 1).unwrap();
        assert_eq!(out, m.scale(-1.0).shift(1.0).scale(-1.0).shift(1.0));
        assert!(out.rel_distance(&m) < 1e-15);
        let u = SymMatrix::from_fn(5, |i, j| (i * 7 + j) as f64 * 0.01);
        assert_eq!(fast_maxexp_backward(&tape, &u).unwrap(), u);
    }

    #[test]
    fn isotropic_closed_form() {
        let m = SymMatrix::identity(4).scale(0.25);
        let (out, _) = fast_maxexp_forward(&m, 3).unwrap();
        assert!(out.rel_distance(&SymMatrix::identity(4).scale(0.578125)) < 1e-15);
    }

    #[test]
    fn counts() {
        let m = rand_norm(6, 2);
        let u = SymMatrix::identity(6);
        for (eta, f, b) in [(50, 8, 11), (8, 4, 5), (512, 10, 11), (1, 1, 2), (7, 5, 8)] {
            let (_, tape) = fast_maxexp_forward(&m, eta).unwrap();
            let (_, c) = fast_backward_counted(&tape, &u).unwrap();
            assert_eq!((c.forward, c.backward), (f, b), "eta {eta}");
            assert_eq!(expected_forward_count(eta), f);
            assert_eq!(expected_backward_count(eta), b);
        }
    }

    #[test]
    fn rejects_unnormalized() {
        let m = SymMatrix::identity(3);
        assert!(matches!(fast_maxexp_forward(&m, 4), Err(PnError::TraceNotNormalized(_))));
        assert!(fast_maxexp_forward(&rand_norm(3, 0), 0).is_err());
        assert!(fast_gamma_int(&m, 0).is_err());
    }

    #[test]
    fn matches_spectral_path() {
        let m = rand_norm(32, 17);
        let (fast, _) = fast_maxexp_forward(&m, 17).unwrap();
        let svd = spn_forward(&m, &PnConfig::maxexp(17.0), None).unwrap().output;
        assert!(fast.rel_distance(&svd) < 1e-9);
    }

    #[test]
    fn gamma_int_examples() {
        let m = SymMatrix::diagonal(&[2.0, 3.0]);
        let (out, tape) = fast_gamma_int(&m, 2).unwrap();
        assert_eq!(out, SymMatrix::diagonal(&[4.0, 9.0]));
        let (one, t1) = fast_gamma_int(&m, 1).unwrap();
        assert_eq!(one, m);
        let u = SymMatrix::new(2, vec![1.0, 0.5, 0.5, -2.0]).unwrap();
        assert_eq!(fast_gamma_int_backward(&t1, &u).unwrap(), u);
        assert!(fast_maxexp_backward(&tape, &u).is_err());
    }

    #[test]
    fn closed_forms_agree_with_tape() {
        let m = rand_norm(8, 3);
        let u = SymMatrix::from_fn(8, |i, j| ((i + 2 * j) % 5) as f64 - 2.0);
        for eta in [1, 2, 3, 7, 16, 50] {
            let (_, tape) = fast_maxexp_forward(&m, eta).unwrap();
            let a = fast_maxexp_backward(&tape, &u).unwrap();
            let b = maxexp_closed_derivative(&m, &u, eta).unwrap();
            assert!(a.rel_distance(&b) < 1e-10, "eta {eta}");
            let (_, tape) = fast_gamma_int(&m, eta).unwrap();
            let a = fast_gamma_int_backward(&tape, &u).unwrap();
            let b = gamma_int_closed_derivative(&m, &u, eta).unwrap();
            assert!(a.rel_distance(&b) < 1e-10, "gamma {eta}");
        }
    }

    #[test]
    fn eta_two_two_term_sum() {
        let m = rand_norm(5, 9);
        let u = SymMatrix::from_fn(5, |i, j| (i as f64 - j as f64).cos());
        let b = m.scale(-1.0).shift(1.0);
        let direct = SymMatrix::symmetrize(&b.matmul(&u).add(&u.matmul(&b)));
        let (_, tape) = fast_maxexp_forward(&m, 2).unwrap();
        let fast = fast_maxexp_backward(&tape, &u).unwrap();
        assert!(fast.rel_distance(&direct) < 1e-14);
        assert!(maxexp_closed_derivative(&m, &u, 2).unwrap().rel_distance(&direct) < 1e-14);
    }

    #[test]
    fn newton_schulz_examples() {
        let (r, c) = newton_schulz_sqrt(&SymMatrix::identity(3), 20).unwrap();
        assert!(r.rel_distance(&SymMatrix::identity(3)) < 1e-15);
        assert_eq!(c.forward, 60);
        let (r, _) = newton_schulz_sqrt(&SymMatrix::diagonal(&[4.0, 1.0]), 20).unwrap();
        assert!((r.get(0, 0) - 2.0).abs() < 1e-6);
        assert!((r.get(1, 1) - 1.0).abs() < 1e-6);
        assert!(newton_schulz_sqrt(&SymMatrix::diagonal(&[-1.0, -2.0]), 5).is_err());
        assert!(newton_schulz_sqrt(&SymMatrix::identity(2), 0).is_err());
    }

    #[test]
    fn renormalized_input() {
        let m = rand_norm(4, 5).scale(3.0);
        let (a, tape) = fast_maxexp_forward_with(&m, 5, true).unwrap();
        let (b, _) = fast_maxexp_forward(&m.scale(1.0 / 3.0), 5).unwrap();
        assert!(a.rel_distance(&b) < 1e-14);
        assert!(fast_maxexp_backward(&tape, &SymMatrix::identity(4)).is_ok());
    }
}
