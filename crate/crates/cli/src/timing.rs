//! Forward/backward wall-clock timing of the operators.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use powernorm::elempn::{pn_backward, pn_forward, PnConfig, PnKind};
use powernorm::fastpn::{fast_backward_counted, fast_gamma_int, fast_maxexp_forward, newton_schulz_sqrt};
use powernorm::gradcheck::random_upstream;
use powernorm::matcore::{random_spd, trace_normalized, RngStream, SpectrumLaw, SymMatrix};
use powernorm::specpn::{spn_backward, spn_forward};
use powernorm::{PnError, Result};

use crate::fmt_f64;

/// Operator and evaluation path selected by `--op`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TimedOp {
    Elementwise(PnKind),
    Spectral(PnKind),
    FastMaxExp,
    FastGamma,
    NewtonSchulz,
}

impl TimedOp {
    pub fn default_params(self) -> Vec<f64> {
        match self {
            TimedOp::FastMaxExp => vec![8.0, 64.0, 512.0],
            TimedOp::FastGamma => vec![2.0, 3.0, 5.0],
            TimedOp::NewtonSchulz => vec![20.0],
            TimedOp::Elementwise(k) | TimedOp::Spectral(k) => vec![match k {
                PnKind::Gamma => 0.5,
                PnKind::MaxExp => 50.0,
                PnKind::AsinhE => 3.0,
                PnKind::SigmE => 10.0,
                PnKind::Hdp => 0.3,
                PnKind::Identity => 1.0,
            }],
        }
    }

    /// Rejects parameters the path cannot run with.
    pub fn check_param(self, p: f64) -> Result<()> {
        match self {
            TimedOp::FastMaxExp | TimedOp::FastGamma | TimedOp::NewtonSchulz => {
                if p < 1.0 || p.fract() != 0.0 || !p.is_finite() {
                    return Err(PnError::InvalidParam(format!(
                        "{self} needs an integer parameter >= 1, got {p}"
                    )));
                }
                Ok(())
            }
            TimedOp::Elementwise(k) | TimedOp::Spectral(k) => self.config(k, p).validate(),
        }
    }

    fn config(self, k: PnKind, p: f64) -> PnConfig {
        PnConfig::new(k, p).with_trace_normalize(matches!(k, PnKind::MaxExp | PnKind::SigmE))
    }
}

impl fmt::Display for TimedOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimedOp::Elementwise(k) => write!(f, "{k}-elementwise"),
            TimedOp::Spectral(k) => write!(f, "{k}-spectral"),
            TimedOp::FastMaxExp => f.write_str("maxexp-fast"),
            TimedOp::FastGamma => f.write_str("gamma-fast"),
            TimedOp::NewtonSchulz => f.write_str("newton-schulz"),
        }
    }
}

impl FromStr for TimedOp {
    type Err = PnError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "maxexp-fast" => return Ok(TimedOp::FastMaxExp),
            "gamma-fast" => return Ok(TimedOp::FastGamma),
            "newton-schulz" | "ns" => return Ok(TimedOp::NewtonSchulz),
            _ => {}
        }
        let bad = || {
            PnError::InvalidParam(format!(
                "unknown op '{s}'; expected <op>-elementwise, <op>-spectral, maxexp-fast, gamma-fast or newton-schulz"
            ))
        };
        let (name, path) = s.rsplit_once('-').ok_or_else(bad)?;
        let kind: PnKind = name.parse().map_err(|_| bad())?;
        match path {
            "elementwise" | "elem" => Ok(TimedOp::Elementwise(kind)),
            "spectral" | "spec" => Ok(TimedOp::Spectral(kind)),
            _ => Err(bad()),
        }
    }
}

/// One CSV row of `time`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimingRow {
    pub op: String,
    pub d: usize,
    pub param: f64,
    pub reps: usize,
    pub fwd_mean_s: f64,
    pub fwd_std_s: f64,
    pub bwd_mean_s: Option<f64>,
    pub bwd_std_s: Option<f64>,
    pub mm_forward: Option<usize>,
    pub mm_backward: Option<usize>,
}

impl TimingRow {
    pub const HEADER: [&'static str; 10] = [
        "op", "d", "param", "reps", "fwd_mean_s", "fwd_std_s", "bwd_mean_s", "bwd_std_s",
        "mm_forward", "mm_backward",
    ];

    pub fn record(&self) -> Vec<String> {
        let opt = |v: Option<String>| v.unwrap_or_default();
        vec![
            self.op.clone(),
            self.d.to_string(),
            fmt_f64(self.param),
            self.reps.to_string(),
            fmt_f64(self.fwd_mean_s),
            fmt_f64(self.fwd_std_s),
            opt(self.bwd_mean_s.map(fmt_f64)),
            opt(self.bwd_std_s.map(fmt_f64)),
            opt(self.mm_forward.map(|v| v.to_string())),
            opt(self.mm_backward.map(|v| v.to_string())),
        ]
    }
}

/// Sample mean and standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn seconds<T>(f: impl FnOnce() -> Result<T>) -> Result<(f64, T)> {
    let t0 = Instant::now();
    let v = f()?;
    Ok((t0.elapsed().as_secs_f64(), v))
}

/// Trace-one SPD input and symmetric upstream for a `(d, seed)` cell.
pub fn timing_inputs(d: usize, seed: u64) -> Result<(SymMatrix, SymMatrix)> {
    let mut rng = RngStream::new(seed).substream(d as u64);
    let m = trace_normalized(&random_spd(d, SpectrumLaw::Uniform, &mut rng)?);
    Ok((m, random_upstream(d, &mut rng)))
}

enum Pass {
    Fwd(Option<usize>),
    FwdBwd(Option<usize>, Option<usize>),
}

/// Runs one forward (and backward, if the path has one) pass; returns the
/// two durations and product counts.
fn run_once(op: TimedOp, p: f64, m: &SymMatrix, up: &SymMatrix) -> Result<(f64, Option<f64>, Pass)> {
    match op {
        TimedOp::FastMaxExp | TimedOp::FastGamma => {
            let e = p as u64;
            let (tf, (_, tape)) = seconds(|| {
                if op == TimedOp::FastMaxExp {
                    fast_maxexp_forward(m, e)
                } else {
                    fast_gamma_int(m, e)
                }
            })?;
            let (tb, (_, c)) = seconds(|| fast_backward_counted(&tape, up))?;
            Ok((tf, Some(tb), Pass::FwdBwd(Some(c.forward), Some(c.backward))))
        }
        TimedOp::NewtonSchulz => {
            let (tf, (_, c)) = seconds(|| newton_schulz_sqrt(m, p as usize))?;
            Ok((tf, None, Pass::Fwd(Some(c.forward))))
        }
        TimedOp::Spectral(k) => {
            let cfg = op.config(k, p);
            let (tf, fwd) = seconds(|| spn_forward(m, &cfg, None))?;
            let (tb, _) = seconds(|| spn_backward(up, &cfg, &fwd))?;
            Ok((tf, Some(tb), Pass::FwdBwd(None, None)))
        }
        TimedOp::Elementwise(k) => {
            let cfg = op.config(k, p);
            let (tf, _) = seconds(|| pn_forward(m, &cfg))?;
            let (tb, _) = seconds(|| pn_backward(m, up, &cfg))?;
            Ok((tf, Some(tb), Pass::FwdBwd(None, None)))
        }
    }
}

/// Times `reps` passes after `warmup` discarded ones.
pub fn time_cell(op: TimedOp, d: usize, p: f64, reps: usize, warmup: usize, seed: u64) -> Result<TimingRow> {
    if reps == 0 {
        return Err(PnError::InvalidParam("reps must be >= 1".into()));
    }
    op.check_param(p)?;
    let (m, up) = timing_inputs(d, seed)?;
    for _ in 0..warmup {
        run_once(op, p, &m, &up)?;
    }
    let mut fwd = Vec::with_capacity(reps);
    let mut bwd = Vec::with_capacity(reps);
    let mut counts = (None, None);
    for _ in 0..reps {
        let (tf, tb, pass) = run_once(op, p, &m, &up)?;
        fwd.push(tf);
        bwd.extend(tb);
        counts = match pass {
            Pass::Fwd(f) => (f, None),
            Pass::FwdBwd(f, b) => (f, b),
        };
    }
    let (fm, fs) = mean_std(&fwd);
    let b = (!bwd.is_empty()).then(|| mean_std(&bwd));
    Ok(TimingRow {
        op: op.to_string(),
        d,
        param: p,
        reps,
        fwd_mean_s: fm,
        fwd_std_s: fs,
        bwd_mean_s: b.map(|x| x.0),
        bwd_std_s: b.map(|x| x.1),
        mm_forward: counts.0,
        mm_backward: counts.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn op_names_round_trip() {
        for s in ["maxexp-fast", "gamma-fast", "newton-schulz", "hdp-spectral", "sigme-elementwise"] {
            let op: TimedOp = s.parse().unwrap();
            assert_eq!(op.to_string(), s);
        }
        assert!("maxexp".parse::<TimedOp>().is_err());
        assert!("foo-spectral".parse::<TimedOp>().is_err());
    }

    #[test]
    fn fast_params_must_be_integers() {
        assert!(TimedOp::FastMaxExp.check_param(2.5).is_err());
        assert!(TimedOp::NewtonSchulz.check_param(0.0).is_err());
        assert!(TimedOp::FastGamma.check_param(3.0).is_ok());
    }

    #[test]
    fn mean_std_sample() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert_eq!(s, 1.0);
    }

    #[test]
    fn counts_reported() {
        let r = time_cell(TimedOp::FastMaxExp, 8, 50.0, 1, 0, 1).unwrap();
        assert_eq!((r.mm_forward, r.mm_backward), (Some(8), Some(11)));
        let r = time_cell(TimedOp::NewtonSchulz, 8, 20.0, 1, 0, 1).unwrap();
        assert_eq!((r.mm_forward, r.mm_backward), (Some(60), None));
        assert!(r.bwd_mean_s.is_none());
        assert!(time_cell(TimedOp::FastMaxExp, 8, 50.0, 0, 0, 1).is_err());
    }
}
