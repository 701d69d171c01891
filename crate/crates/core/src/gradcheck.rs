//! Central finite-difference oracle for symmetric-matrix functions.

use std::fmt;

use crate::elempn::{pn_backward, pn_forward, PnConfig, PnKind};
use crate::error::{PnError, Result};
use crate::fastpn::{
    fast_gamma_int, fast_gamma_int_backward, fast_maxexp_backward, fast_maxexp_forward,
};
use crate::matcore::{spd_from_spectrum, RngStream, SymMatrix};
use crate::par;
use crate::specpn::{spn_backward, spn_forward};

/// `1e-6·(1 + ‖M‖_F)`.
pub fn default_step(m: &SymMatrix) -> f64 {
    1e-6 * (1.0 + m.frobenius_norm())
}

/// `‖analytic − numeric‖_F / max(‖numeric‖_F, 1e-12)`.
pub fn rel_error(analytic: &SymMatrix, numeric: &SymMatrix) -> f64 {
    analytic.sub(numeric).frobenius_norm() / numeric.frobenius_norm().max(1e-12)
}

fn upper_pairs(d: usize) -> Vec<(usize, usize)> {
    (0..d).flat_map(|k| (k..d).map(move |l| (k, l))).collect()
}

fn probe<F>(forward: &F, m: &SymMatrix, upstream: &SymMatrix, h: f64, k: usize, l: usize) -> Result<f64>
where
    F: Fn(&SymMatrix) -> Result<SymMatrix>,
{
    let d = m.dim();
    // E_kl = ½(J_kl + J_lk)
    let e = SymMatrix::from_fn(d, |i, j| {
        if (i, j) == (k, l) || (i, j) == (l, k) {
            if k == l {
                1.0
            } else {
                0.5
            }
        } else {
            0.0
        }
    });
    let plus = forward(&m.add(&e.scale(h)))?;
    let minus = forward(&m.add(&e.scale(-h)))?;
    let v = (upstream.inner(&plus) - upstream.inner(&minus)) / (2.0 * h);
    if !v.is_finite() {
        return Err(PnError::NonFinite(format!("finite-difference probe ({k}, {l}) is not finite")));
    }
    Ok(v)
}

fn assemble(d: usize, pairs: &[(usize, usize)], vals: Vec<Result<f64>>) -> Result<SymMatrix> {
    let mut data = vec![0.0; d * d];
    for (&(k, l), v) in pairs.iter().zip(vals) {
        let v = v?;
        data[k * d + l] = v;
        data[l * d + k] = v;
    }
    SymMatrix::new(d, data)
}

fn check_step(step: f64) -> Result<()> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(PnError::InvalidParam(format!("step must be > 0, got {step}")));
    }
    Ok(())
}

/// Numeric gradient of `M ↦ ⟨upstream, forward(M)⟩` over symmetric
/// perturbations. Probes run in parallel when the `parallel` feature is on.
pub fn fd_vjp<F>(forward: F, m: &SymMatrix, upstream: &SymMatrix, step: f64) -> Result<SymMatrix>
where
    F: Fn(&SymMatrix) -> Result<SymMatrix> + Sync + Send,
{
    check_step(step)?;
    let pairs = upper_pairs(m.dim());
    let vals = par::map_indices(pairs.len(), |i| {
        let (k, l) = pairs[i];
        probe(&forward, m, upstream, step, k, l)
    });
    assemble(m.dim(), &pairs, vals)
}

/// [`fd_vjp`] on the calling thread.
pub fn fd_vjp_sequential<F>(forward: F, m: &SymMatrix, upstream: &SymMatrix, step: f64) -> Result<SymMatrix>
where
    F: Fn(&SymMatrix) -> Result<SymMatrix>,
{
    check_step(step)?;
    let pairs = upper_pairs(m.dim());
    let vals = pairs
        .iter()
        .map(|&(k, l)| probe(&forward, m, upstream, step, k, l))
        .collect();
    assemble(m.dim(), &pairs, vals)
}

/// How an operator is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Engine {
    Elementwise,
    Spectral,
    /// Squaring MaxExp; the parameter is the integer `η`.
    FastMaxExp,
    /// Squaring integer Gamma; the parameter is the integer `γ`.
    FastGammaInt,
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Engine::Elementwise => "elem",
            Engine::Spectral => "spec",
            Engine::FastMaxExp => "fast-maxexp",
            Engine::FastGammaInt => "fast-gamma",
        })
    }
}

/// One differentiable operator under test.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OpCase {
    pub engine: Engine,
    pub cfg: PnConfig,
}

impl OpCase {
    pub fn new(engine: Engine, cfg: PnConfig) -> Self {
        OpCase { engine, cfg }
    }

    pub fn name(&self) -> String {
        let mut s = match self.engine {
            Engine::Elementwise | Engine::Spectral => format!("{}-{}", self.engine, self.cfg.op),
            _ => self.engine.to_string(),
        };
        if self.cfg.normalizes() {
            s.push_str("-tn");
        }
        if self.cfg.residual_kappa.is_some() || self.cfg.residual_gamma.is_some() {
            s.push_str("-res");
        }
        s
    }

    fn int_param(&self) -> Result<u64> {
        let p = self.cfg.param;
        if p.fract() != 0.0 || p < 1.0 {
            return Err(PnError::InvalidParam(format!(
                "{} needs an integer parameter >= 1, got {p}",
                self.engine
            )));
        }
        Ok(p as u64)
    }

    pub fn forward(&self, m: &SymMatrix) -> Result<SymMatrix> {
        match self.engine {
            Engine::Elementwise => pn_forward(m, &self.cfg),
            Engine::Spectral => Ok(spn_forward(m, &self.cfg, None)?.output),
            Engine::FastMaxExp => Ok(fast_maxexp_forward(m, self.int_param()?)?.0),
            Engine::FastGammaInt => Ok(fast_gamma_int(m, self.int_param()?)?.0),
        }
    }

    pub fn backward(&self, m: &SymMatrix, upstream: &SymMatrix) -> Result<SymMatrix> {
        match self.engine {
            Engine::Elementwise => pn_backward(m, upstream, &self.cfg),
            Engine::Spectral => spn_backward(upstream, &self.cfg, &spn_forward(m, &self.cfg, None)?),
            Engine::FastMaxExp => {
                fast_maxexp_backward(&fast_maxexp_forward(m, self.int_param()?)?.1, upstream)
            }
            Engine::FastGammaInt => {
                fast_gamma_int_backward(&fast_gamma_int(m, self.int_param()?)?.1, upstream)
            }
        }
    }

    /// The fast MaxExp path only accepts trace-normalized inputs, so its
    /// finite differences stay on the `trace = 1` slice: diagonal probes are
    /// paired with a compensating shift that keeps the trace fixed.
    fn needs_trace_slice(&self) -> bool {
        self.engine == Engine::FastMaxExp
    }
}

/// One gradient check result.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub op: String,
    pub d: usize,
    pub param: f64,
    pub seed: u64,
    pub max_rel_error: f64,
    pub probe_count: usize,
    pub step: f64,
}

impl GradCheckReport {
    pub const CSV_HEADER: &'static str = "op,d,param,seed,max_rel_error,step";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:e},{:e}",
            self.op, self.d, self.param, self.seed, self.max_rel_error, self.step
        )
    }
}

/// Operators × dimensions × seeds to check.
#[derive(Clone, Debug, Default)]
pub struct SuiteConfig {
    pub cases: Vec<OpCase>,
    pub dims: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Negates every analytic gradient; the checker must then report ≈ 2.
    pub broken_sign: bool,
}

impl SuiteConfig {
    /// Every operator on `d ∈ {4, 8}` with five seeds.
    pub fn standard() -> Self {
        let tn = |c: PnConfig| c.with_trace_normalize(true);
        let families = [
            PnConfig::gamma(0.5),
            tn(PnConfig::maxexp(5.0)),
            tn(PnConfig::sigme(10.0)),
            PnConfig::asinhe(3.0),
            PnConfig::hdp(0.3),
        ];
        let mut cases = Vec::new();
        for engine in [Engine::Elementwise, Engine::Spectral] {
            for cfg in families {
                cases.push(OpCase::new(engine, cfg));
            }
            cases.push(OpCase::new(
                engine,
                PnConfig::gamma(0.5).with_residual_kappa(0.1).with_residual_gamma(0.5),
            ));
            cases.push(OpCase::new(engine, tn(PnConfig::maxexp(20.0)).with_residual_kappa(0.05)));
        }
        for eta in [2.0, 3.0, 7.0, 16.0, 50.0] {
            cases.push(OpCase::new(Engine::FastMaxExp, PnConfig::maxexp(eta)));
        }
        for g in [2.0, 3.0, 5.0] {
            cases.push(OpCase::new(Engine::FastGammaInt, PnConfig::gamma(g)));
        }
        SuiteConfig {
            cases,
            dims: vec![4, 8],
            seeds: (1..=5).collect(),
            broken_sign: false,
        }
    }
}

/// Trace-one SPD matrix whose eigenvalues are at least `0.5/Σ` apart.
pub fn separated_spd(d: usize, rng: &mut RngStream) -> SymMatrix {
    let spec: Vec<f64> = (0..d)
        .map(|i| (d - i) as f64 + 0.4 * (rng.uniform() - 0.5))
        .collect();
    let total: f64 = spec.iter().sum();
    let spec: Vec<f64> = spec.iter().map(|v| v / total).collect();
    let m = spd_from_spectrum(&spec, rng);
    // remove the rounding left in the trace
    m.shift((1.0 - m.trace()) / d as f64)
}

/// Input for a case: element-wise PSD-domain operators get `|M| + 0.02`.
pub fn case_input(case: &OpCase, d: usize, rng: &mut RngStream) -> SymMatrix {
    let m = separated_spd(d, rng);
    let positive = case.engine == Engine::Elementwise
        && matches!(case.cfg.op, PnKind::Gamma | PnKind::MaxExp | PnKind::Hdp);
    if positive {
        m.map(|v| v.abs() + 0.02)
    } else {
        m
    }
}

/// Symmetric upstream gradient with entries in `[−1, 1)`.
pub fn random_upstream(d: usize, rng: &mut RngStream) -> SymMatrix {
    let data: Vec<f64> = (0..d * d).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
    SymMatrix::new(d, data).expect("square")
}

/// Projects a gradient onto the `trace = 0` directions.
fn project_traceless(g: &SymMatrix) -> SymMatrix {
    g.shift(-g.trace() / g.dim() as f64)
}

/// Checks one case at one `(d, seed)`.
pub fn check_case(case: &OpCase, d: usize, seed: u64, broken_sign: bool) -> Result<GradCheckReport> {
    let mut rng = RngStream::new(seed ^ (d as u64) << 32);
    let m = case_input(case, d, &mut rng);
    let up = random_upstream(d, &mut rng);
    let step = default_step(&m);
    let mut analytic = case.backward(&m, &up)?;
    if broken_sign {
        analytic = analytic.scale(-1.0);
    }
    let (analytic, numeric) = if case.needs_trace_slice() {
        let fwd = |x: &SymMatrix| case.forward(&x.shift((1.0 - x.trace()) / d as f64));
        let numeric = fd_vjp(fwd, &m, &up, step)?;
        (project_traceless(&analytic), project_traceless(&numeric))
    } else {
        (analytic, fd_vjp(|x: &SymMatrix| case.forward(x), &m, &up, step)?)
    };
    Ok(GradCheckReport {
        op: case.name(),
        d,
        param: case.cfg.param,
        seed,
        max_rel_error: rel_error(&analytic, &numeric),
        probe_count: d * (d + 1) / 2,
        step,
    })
}

/// Runs every case; failures are reported with an infinite error instead of
/// aborting the suite. Reports are sorted worst first.
pub fn run_suite(cfg: &SuiteConfig) -> Vec<GradCheckReport> {
    let mut out = Vec::new();
    for case in &cfg.cases {
        for &d in &cfg.dims {
            for &seed in &cfg.seeds {
                out.push(check_case(case, d, seed, cfg.broken_sign).unwrap_or_else(|_| {
                    GradCheckReport {
                        op: case.name(),
                        d,
                        param: case.cfg.param,
                        seed,
                        max_rel_error: f64::INFINITY,
                        probe_count: 0,
                        step: f64::NAN,
                    }
                }));
            }
        }
    }
    out.sort_by(|a, b| b.max_rel_error.total_cmp(&a.max_rel_error));
    out
}
