//! Eigenvalue push-forward statistics.

use powernorm::elempn::PnConfig;
use powernorm::matcore::{spd_from_spectrum, sym_eig, RngStream};
use powernorm::specpn::spn_forward;
use powernorm::Result;

pub const DEFAULT_BINS: usize = 50;
pub const DEFAULT_TOP: usize = 5;

/// Fraction of `values` in each of `bins` uniform bins on `[0, 1]`. Values
/// outside are clamped into the end bins; `1.0` lands in the last bin.
pub fn histogram(values: &[f64], bins: usize) -> Vec<f64> {
    let mut h = vec![0.0; bins];
    if values.is_empty() || bins == 0 {
        return h;
    }
    for &v in values {
        let i = ((v.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
        h[i] += 1.0;
    }
    let n = values.len() as f64;
    h.iter_mut().for_each(|c| *c /= n);
    h
}

/// `Σ |a_i − b_i|` over two histograms.
pub fn histogram_l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// `Σ |A_i − B_i| / bins` over the cumulative histograms: the 1-Wasserstein
/// distance on `[0, 1]` at bin resolution.
pub fn cdf_distance(a: &[f64], b: &[f64]) -> f64 {
    let (mut ca, mut cb, mut s) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ca += x;
        cb += y;
        s += (ca - cb).abs();
    }
    s / a.len().max(1) as f64
}

/// Population variance of the `j` largest values.
pub fn top_variance(values: &[f64], j: usize) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    v.truncate(j);
    if v.is_empty() {
        return 0.0;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

/// Eigenvalues (descending) of the spectral operator applied to a random
/// matrix `U·diag(spectrum)·Uᵀ`.
pub fn push_spectrum(spectrum: &[f64], cfg: &PnConfig, rng: &mut RngStream) -> Result<Vec<f64>> {
    let m = spd_from_spectrum(spectrum, rng);
    let out = spn_forward(&m, cfg, None)?.output;
    Ok(sym_eig(&out)?.values)
}

/// Statistics for one parameter value.
#[derive(Clone, Debug, PartialEq)]
pub struct PushRow {
    pub param: f64,
    pub pre: Vec<f64>,
    pub post: Vec<f64>,
    pub pre_top_var: f64,
    pub post_top_var: f64,
}

/// Runs [`push_spectrum`] once per config on the same spectrum and basis.
pub fn pushforward(
    spectrum: &[f64],
    cfgs: &[PnConfig],
    bins: usize,
    top: usize,
    seed: u64,
) -> Result<Vec<PushRow>> {
    let pre = histogram(spectrum, bins);
    let pre_top_var = top_variance(spectrum, top);
    cfgs.iter()
        .map(|cfg| {
            let post = push_spectrum(spectrum, cfg, &mut RngStream::new(seed))?;
            Ok(PushRow {
                param: cfg.param,
                pre: pre.clone(),
                post: histogram(&post, bins),
                pre_top_var,
                post_top_var: top_variance(&post, top),
            })
        })
        .collect()
}
