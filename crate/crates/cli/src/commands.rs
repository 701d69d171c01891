use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use anyhow::Context;
use powernorm::elempn::{pn_forward, PnConfig, PnKind};
use powernorm::fastpn::{fast_gamma_int, fast_maxexp_forward_with};
use powernorm::gradcheck::{run_suite, GradCheckReport, SuiteConfig};
use powernorm::hdp::{lambda_grid, support_ratio, variance_ratio, verify_bounds, BoundOptions, BoundReport};
use powernorm::matcore::io::{format_sym, read_feat};
use powernorm::matcore::{RngStream, SpectrumLaw};
use powernorm::sop::{autocorrelation, coordinate_grid, augment, CoordEncoderConfig, PoolSpec};
use powernorm::specpn::{spn_forward, SpectralGapConfig};

use crate::args::{BoundsArgs, Cli, Command, EngineArg, GradArgs, KappaArgs, PoolArgs, PushArgs, TimeArgs};
use crate::pushforward::pushforward;
use crate::timing::{time_cell, TimedOp, TimingRow};
use crate::{fmt_f64, usage, CliError, Outcome};

type CmdResult = Result<Outcome, CliError>;

fn open_out(out: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn csv_out(out: Option<&Path>) -> Result<csv::Writer<Box<dyn Write>>, CliError> {
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(open_out(out)?))
}

/// Runs one parsed command line.
pub fn run(cli: &Cli) -> CmdResult {
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Time(a) => cmd_time(a, cli.seed, out),
        Command::Pushforward(a) => cmd_pushforward(a, cli.seed, out),
        Command::Bounds(a) => cmd_bounds(a, out),
        Command::Pool(a) => cmd_pool(a, cli.seed, out),
        Command::Kappa(a) => cmd_kappa(a, out),
        Command::Gradcheck(a) => cmd_gradcheck(a, cli.seed, out),
    }
}

fn cmd_time(a: &TimeArgs, seed: u64, out: Option<&Path>) -> CmdResult {
    let op: TimedOp = a.op.parse().map_err(|e| usage(format!("{e}")))?;
    let params: Vec<f64> = match (op, a.param.is_empty(), a.iters.is_empty()) {
        (TimedOp::NewtonSchulz, _, false) => a.iters.iter().map(|&k| k as f64).collect(),
        (_, _, false) => return Err(usage("--iters only applies to newton-schulz")),
        (_, false, true) => a.param.clone(),
        (_, true, true) => op.default_params(),
    };
    if a.d.contains(&0) {
        return Err(usage("--d must be >= 1"));
    }
    for &p in &params {
        op.check_param(p).map_err(|e| usage(format!("{e}")))?;
    }
    let mut w = csv_out(out)?;
    w.write_record(TimingRow::HEADER)?;
    for &d in &a.d {
        for &p in &params {
            let row = time_cell(op, d, p, a.reps as usize, a.warmup as usize, seed)?;
            w.write_record(row.record())?;
        }
    }
    w.flush()?;
    Ok(Outcome::Success)
}

fn parse_law(s: &str) -> Result<Option<SpectrumLaw>, CliError> {
    match s {
        "uniform" => return Ok(Some(SpectrumLaw::Uniform)),
        "identity" => return Ok(None),
        _ => {}
    }
    let bad = || usage(format!("unknown spectrum law '{s}'; expected uniform, identity or beta:A,B"));
    let rest = s.strip_prefix("beta:").ok_or_else(bad)?;
    let (x, y) = rest.split_once(',').ok_or_else(bad)?;
    let a: f64 = x.trim().parse().map_err(|_| bad())?;
    let b: f64 = y.trim().parse().map_err(|_| bad())?;
    if !(a > 0.0 && b > 0.0) {
        return Err(bad());
    }
    Ok(Some(SpectrumLaw::Beta { a, b }))
}

fn cmd_pushforward(a: &PushArgs, seed: u64, out: Option<&Path>) -> CmdResult {
    let law = parse_law(&a.law)?;
    let kind: PnKind = a.op.parse().map_err(|e| usage(format!("{e}")))?;
    if a.d == 0 || a.bins == 0 || a.top == 0 {
        return Err(usage("--d, --bins and --top must be >= 1"));
    }
    let mut rng = RngStream::new(seed);
    let mut spectrum = match law {
        Some(l) => l.sample(a.d, &mut rng)?,
        None => vec![1.0; a.d],
    };
    if a.trace_normalize {
        let tr: f64 = spectrum.iter().sum();
        spectrum.iter_mut().for_each(|v| *v /= tr);
    }
    let cfgs: Vec<PnConfig> = a.param.iter().map(|&p| PnConfig::new(kind, p).with_eps(0.0)).collect();
    for c in &cfgs {
        c.validate().map_err(|e| usage(format!("{e}")))?;
    }
    let rows = pushforward(&spectrum, &cfgs, a.bins, a.top, seed.wrapping_add(1))?;
    let mut w = csv_out(out)?;
    w.write_record([
        "op", "param", "bin", "lo", "hi", "pre", "post", "top_j", "pre_top_var", "post_top_var",
    ])?;
    let width = 1.0 / a.bins as f64;
    for r in &rows {
        for b in 0..a.bins {
            w.write_record([
                kind.name().to_string(),
                fmt_f64(r.param),
                b.to_string(),
                fmt_f64(b as f64 * width),
                fmt_f64((b + 1) as f64 * width),
                fmt_f64(r.pre[b]),
                fmt_f64(r.post[b]),
                a.top.to_string(),
                fmt_f64(r.pre_top_var),
                fmt_f64(r.post_top_var),
            ])?;
        }
    }
    w.flush()?;
    Ok(Outcome::Success)
}

/// Default bound grid: 50 log-spaced `η ∈ [1.5, 100]` and `t = k/51`.
pub fn default_bound_grid() -> (Vec<f64>, Vec<f64>) {
    let etas = (0..50)
        .map(|i| (1.5f64.ln() + (100f64 / 1.5).ln() * i as f64 / 49.0).exp())
        .collect();
    let ts = (1..=50).map(|k| k as f64 / 51.0).collect();
    (etas, ts)
}

fn cmd_bounds(a: &BoundsArgs, out: Option<&Path>) -> CmdResult {
    if a.lambdas == 0 {
        return Err(usage("--lambdas must be >= 1"));
    }
    if !(a.t_scale > 0.0) {
        return Err(usage("--t-scale must be > 0"));
    }
    let (etas, ts) = if a.eta.is_empty() && a.t.is_empty() {
        default_bound_grid()
    } else {
        (a.eta.clone(), a.t.clone())
    };
    let reports = verify_bounds(&etas, &ts, &lambda_grid(a.lambdas), &BoundOptions { t_scale: a.t_scale })
        .map_err(|e| usage(format!("{e}")))?;
    let mut o = open_out(out)?;
    writeln!(o, "{}", BoundReport::CSV_HEADER)?;
    for r in &reports {
        writeln!(o, "{}", r.csv_row())?;
    }
    o.flush()?;
    let bad: usize = reports.iter().map(|r| r.violations).sum();
    if bad > 0 {
        let worst = reports.iter().map(|r| r.max_violation).fold(0.0, f64::max);
        return Ok(Outcome::Violation(format!("{bad} bound violations, worst {worst:e}")));
    }
    Ok(Outcome::Success)
}

fn pool_config(a: &PoolArgs) -> Result<PnConfig, CliError> {
    let kind: PnKind = a.op.parse().map_err(|e| usage(format!("{e}")))?;
    let cfg = PnConfig::new(kind, a.param)
        .with_eps(a.eps)
        .with_trace_normalize(!a.no_trace_normalize && matches!(kind, PnKind::MaxExp | PnKind::SigmE));
    cfg.validate().map_err(|e| usage(format!("{e}")))?;
    if a.engine == EngineArg::Fast {
        match kind {
            PnKind::MaxExp | PnKind::Gamma => {
                integer_param(a.param)?;
            }
            PnKind::Identity => {}
            k => return Err(usage(format!("engine fast supports maxexp and gamma, not {k}"))),
        }
    }
    Ok(cfg)
}

fn integer_param(p: f64) -> Result<u64, CliError> {
    if p >= 1.0 && p.fract() == 0.0 && p.is_finite() {
        Ok(p as u64)
    } else {
        Err(usage(format!("engine fast needs an integer parameter >= 1, got {p}")))
    }
}

fn cmd_pool(a: &PoolArgs, seed: u64, out: Option<&Path>) -> CmdResult {
    let cfg = pool_config(a)?;
    let block = read_feat(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let coord = match a.pivots {
        Some(z) => Some(CoordEncoderConfig::new(z, a.sigma, a.alpha).map_err(|e| usage(format!("{e}")))?),
        None => None,
    };
    let coords = match (a.width, a.height) {
        (Some(w), Some(h)) if coord.is_some() => Some(coordinate_grid(w, h)),
        _ => None,
    };
    let spec = PoolSpec { beta: a.beta, coord };
    if !(0.0..=1.0).contains(&a.beta) {
        return Err(usage(format!("--beta must lie in [0, 1], got {}", a.beta)));
    }
    let (_, warn) = augment(&block, &spec, coords.as_deref())?;
    if warn {
        eprintln!("warning: coordinates outside [0, 1]");
    }
    let m = autocorrelation(&block, &spec, coords.as_deref())?;
    let pooled = match a.engine {
        EngineArg::Elementwise => pn_forward(&m, &cfg)?,
        EngineArg::Spectral => {
            let gap = a.gap.map(|gap| SpectralGapConfig {
                gap,
                seed,
                ..SpectralGapConfig::default()
            });
            let f = spn_forward(&m, &cfg, gap.as_ref())?;
            if f.flags.retries > 0 {
                eprintln!("note: spectral gap enforced after {} retries", f.flags.retries);
            }
            f.output
        }
        EngineArg::Fast => match cfg.op {
            PnKind::MaxExp => fast_maxexp_forward_with(&m, integer_param(cfg.param)?, true)?.0,
            PnKind::Gamma => fast_gamma_int(&m, integer_param(cfg.param)?)?.0,
            _ => m,
        },
    };
    let mut o = open_out(out)?;
    o.write_all(format_sym(&pooled).as_bytes())?;
    o.flush()?;
    Ok(Outcome::Success)
}

fn cmd_kappa(a: &KappaArgs, out: Option<&Path>) -> CmdResult {
    if a.n.contains(&0) {
        return Err(usage("--n values must be >= 1"));
    }
    let mut w = csv_out(out)?;
    w.write_record(["j", "n", "kappa", "variance_ratio"])?;
    for &j in &a.j {
        for &n in &a.n {
            w.write_record([
                j.to_string(),
                n.to_string(),
                fmt_f64(support_ratio(j, n)?),
                fmt_f64(variance_ratio(n)?),
            ])?;
        }
    }
    w.flush()?;
    Ok(Outcome::Success)
}

fn cmd_gradcheck(a: &GradArgs, seed: u64, out: Option<&Path>) -> CmdResult {
    if a.dims.is_empty() || a.dims.contains(&0) || a.seeds == 0 {
        return Err(usage("--dims must be non-empty positive sizes and --seeds >= 1"));
    }
    let mut suite = SuiteConfig::standard();
    suite.dims = a.dims.clone();
    suite.seeds = (1..=a.seeds).map(|s| seed.wrapping_add(s)).collect();
    suite.broken_sign = a.broken_sign;
    let reports = run_suite(&suite);
    let mut o = open_out(out)?;
    writeln!(o, "{}", GradCheckReport::CSV_HEADER)?;
    for r in &reports {
        writeln!(o, "{}", r.csv_row())?;
    }
    o.flush()?;
    let failing = reports.iter().filter(|r| !(r.max_rel_error <= a.tol)).count();
    if failing > 0 {
        return Ok(Outcome::Violation(format!(
            "{failing} of {} checks above {}",
            reports.len(),
            a.tol
        )));
    }
    Ok(Outcome::Success)
}
