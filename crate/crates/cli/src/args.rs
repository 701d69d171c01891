use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "powernorm", version, about = "Power-normalization kernels: timing, spectra, bounds, pooling")]
pub struct Cli {
    /// Seed for every generated input.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output file (stdout when absent).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for the data-parallel kernels.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    pub threads: u16,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Forward/backward wall time and product counts.
    Time(TimeArgs),
    /// Eigenvalue histograms before and after a spectral operator.
    Pushforward(PushArgs),
    /// Numerical check of the heat-diffusion upper bounds.
    Bounds(BoundsArgs),
    /// Pool a FEAT file into a normalized SYMMAT file.
    Pool(PoolArgs),
    /// Support-ratio and variance-ratio table.
    Kappa(KappaArgs),
    /// Finite-difference check of every backward pass.
    Gradcheck(GradArgs),
}

#[derive(Args, Debug)]
pub struct TimeArgs {
    /// maxexp-fast, gamma-fast, newton-schulz, <op>-spectral or <op>-elementwise.
    #[arg(long, default_value = "maxexp-fast")]
    pub op: String,
    #[arg(long, value_delimiter = ',', default_values_t = [200usize])]
    pub d: Vec<usize>,
    /// Operator parameter (η, γ, t, ...).
    #[arg(long, alias = "eta", alias = "gamma", alias = "t", value_delimiter = ',')]
    pub param: Vec<f64>,
    /// Newton-Schulz iteration counts.
    #[arg(long, value_delimiter = ',')]
    pub iters: Vec<u32>,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u32).range(1..))]
    pub reps: u32,
    #[arg(long, default_value_t = 3)]
    pub warmup: u32,
}

#[derive(Args, Debug)]
pub struct PushArgs {
    /// uniform, identity or beta:A,B.
    #[arg(long, default_value = "beta:2,5")]
    pub law: String,
    #[arg(long, default_value_t = 256)]
    pub d: usize,
    #[arg(long, default_value = "maxexp")]
    pub op: String,
    #[arg(long, alias = "eta", alias = "t", value_delimiter = ',', default_values_t = [5.0, 20.0, 80.0])]
    pub param: Vec<f64>,
    /// Number of leading eigenvalues in the variance column.
    #[arg(long, default_value_t = 5)]
    pub top: usize,
    #[arg(long, default_value_t = 50)]
    pub bins: usize,
    /// Divide the spectrum by its trace before the operator.
    #[arg(long)]
    pub trace_normalize: bool,
}

#[derive(Args, Debug)]
pub struct BoundsArgs {
    #[arg(long, value_delimiter = ',')]
    pub eta: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub t: Vec<f64>,
    /// Number of λ grid points in (0, 1].
    #[arg(long, default_value_t = 1000)]
    pub lambdas: usize,
    /// Test mode: scale the bounding operators' time by this factor.
    #[arg(long, default_value_t = 1.0, hide = true)]
    pub t_scale: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EngineArg {
    Elementwise,
    Spectral,
    Fast,
}

#[derive(Args, Debug)]
pub struct PoolArgs {
    /// FEAT input file.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "none")]
    pub op: String,
    #[arg(long, default_value_t = 1.0)]
    pub param: f64,
    #[arg(long, value_enum, default_value_t = EngineArg::Elementwise)]
    pub engine: EngineArg,
    #[arg(long, default_value_t = powernorm::elempn::DEFAULT_EPS)]
    pub eps: f64,
    /// Skip the trace normalization MaxExp and SigmE use by default.
    #[arg(long)]
    pub no_trace_normalize: bool,
    /// Centering strength β in [0, 1].
    #[arg(long, default_value_t = 0.0)]
    pub beta: f64,
    /// Coordinate pivots per axis; enables coordinate encoding.
    #[arg(long, requires_all = ["width", "height"])]
    pub pivots: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    pub sigma: f64,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    /// Spectral engine: required eigenvalue gap (off when absent).
    #[arg(long)]
    pub gap: Option<f64>,
}

#[derive(Args, Debug)]
pub struct KappaArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2, 3, 4, 5, 10, 20])]
    pub j: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_values_t = [1u64, 2, 4, 8, 16, 32, 64])]
    pub n: Vec<u64>,
}

#[derive(Args, Debug)]
pub struct GradArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [4usize, 8])]
    pub dims: Vec<usize>,
    /// Seeds per case, counted up from `--seed` + 1.
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Test mode: negate every analytic gradient.
    #[arg(long, hide = true)]
    pub broken_sign: bool,
}
