//! Posterior summaries and inefficiency factors.

use crate::draws::DrawStore;
use crate::error::{MrsvError, Result};
use crate::model::Leverage;

/// Minimum chain length for an inefficiency factor.
pub const MIN_IF_LEN: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    /// 2.5% and 97.5% quantiles.
    pub ci_low: f64,
    pub ci_high: f64,
    /// `None` for constant or short chains.
    pub inefficiency: Option<f64>,
}

/// Quantile by linear interpolation between order statistics at position
/// q·(n − 1) of the sorted sample.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = if x.len() > 1 { x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, v.sqrt())
}

/// Summary of one chain.
pub fn summarize_chain(name: &str, chain: &[f64]) -> Result<ParamSummary> {
    if chain.is_empty() {
        return Err(MrsvError::Data(format!("no draws for {name}")));
    }
    let (mean, sd) = mean_sd(chain);
    let mut sorted = chain.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(ParamSummary {
        name: name.to_string(),
        mean,
        sd,
        ci_low: quantile_sorted(&sorted, 0.025),
        ci_high: quantile_sorted(&sorted, 0.975),
        inefficiency: inefficiency_factor(chain),
    })
}

/// Summaries of every θ column of a draw store, in column order.
pub fn summarize(store: &DrawStore) -> Result<Vec<ParamSummary>> {
    if store.is_empty() {
        return Err(MrsvError::Data("empty draw store".into()));
    }
    let layout = &store.layout;
    (0..layout.n_theta()).map(|c| summarize_chain(&layout.names()[c], &store.column(c))).collect()
}

/// Sample autocorrelation at lag `lag` with the usual 1/n normalization.
pub fn autocorrelation(x: &[f64], lag: usize) -> f64 {
    let n = x.len();
    let m = x.iter().sum::<f64>() / n as f64;
    let c0: f64 = x.iter().map(|v| (v - m) * (v - m)).sum();
    if lag >= n || c0 == 0.0 {
        return 0.0;
    }
    let c: f64 = (0..n - lag).map(|t| (x[t] - m) * (x[t + lag] - m)).sum();
    c / c0
}

/// 1 + 2 Σ_{g=1}^{G} ρ̂(g), summing until the first ρ̂(g) < 2/√n and at most
/// n/10 lags. `None` for constant chains or fewer than `MIN_IF_LEN` draws.
pub fn inefficiency_factor(x: &[f64]) -> Option<f64> {
    let n = x.len();
    if n < MIN_IF_LEN {
        return None;
    }
    let m = x.iter().sum::<f64>() / n as f64;
    let dev: Vec<f64> = x.iter().map(|v| v - m).collect();
    let c0: f64 = dev.iter().map(|d| d * d).sum();
    if !(c0 > 0.0) {
        return None;
    }
    let cutoff = 2.0 / (n as f64).sqrt();
    let mut sum = 0.0;
    for g in 1..=n / 10 {
        let rho = (0..n - g).map(|t| dev[t] * dev[t + g]).sum::<f64>() / c0;
        if rho < cutoff {
            break;
        }
        sum += rho;
    }
    Some(1.0 + 2.0 * sum)
}

/// ρ* = λ_ic / √(Σ_c λ²_ic + ψ_ii) for each loaded factor c: the correlation
/// between factor c of the standardized return and h_{i,t+1}.
pub fn leverage_correlation(lambda_row: &[f64], psi_ii: f64, c: usize) -> f64 {
    let ss: f64 = lambda_row.iter().map(|l| l * l).sum();
    lambda_row[c] / (ss + psi_ii).sqrt()
}

/// Summaries of ρ*_{ci} for asset `i` (zero-based), one per leverage factor.
pub fn derived_leverage_correlation(store: &DrawStore, i: usize) -> Result<Vec<ParamSummary>> {
    let p = store.layout.dim();
    let lev = store.layout.leverage();
    if lev == Leverage::None {
        return Err(MrsvError::Config("leverage correlations need leverage draws".into()));
    }
    if i >= p || store.is_empty() {
        return Err(MrsvError::Data(format!("asset {i} out of range or no draws")));
    }
    let q = lev.n_factors(p);
    let mut series = vec![Vec::with_capacity(store.len()); q];
    for k in 0..store.len() {
        let th = store.params(k);
        let lambda = th.lambda().expect("leverage draws");
        let row: Vec<f64> = (0..p).map(|c| lambda[(i, c)]).collect();
        let psi = th.state_cov()[(i, i)];
        for (c, s) in series.iter_mut().enumerate() {
            s.push(leverage_correlation(&row, psi, c));
        }
    }
    series
        .iter()
        .enumerate()
        .map(|(c, s)| summarize_chain(&format!("rho*[{},{}]", c + 1, i + 1), s))
        .collect()
}
