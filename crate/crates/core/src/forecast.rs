//! One-step-ahead predictive moments, minimum-variance weights and the
//! rolling re-estimation backtest.

use nalgebra::{DMatrix, DVector};

use crate::corrmat::{CorrMatrix, PairMask};
use crate::draws::{DrawStore, Snapshot};
use crate::error::{MrsvError, Result};
use crate::linalg;
use crate::model::{Dataset, ModelParams, ModelVariant};
use crate::samplers::{run_mcmc_from, shift_warm_start, McmcConfig, WarmStart};

/// Below this excess-return signal κ_t the step holds only cash.
pub const KAPPA_MIN: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Forecast of one draw: m_{T+1|T} = m_T and V^{1/2} R V^{1/2} + Σ_m with
/// h_{T+1|T} = μ + Φ(h_T − μ) (+ Λ z_T) and g_{T+1|T} = g_T.
pub fn draw_forecast(params: &ModelParams, snap: &Snapshot, mask: &PairMask) -> PredictiveMoments {
    let mut h = &params.mu + params.phi.component_mul(&(&snap.h - &params.mu));
    if let (Some(l), Some(z)) = (params.lambda(), &snap.z) {
        h += l * z;
    }
    let g: Vec<f64> = snap.g.iter().copied().collect();
    let r = CorrMatrix::from_fisher_slice(&g, mask);
    let d = h.map(|v| (0.5 * v).exp());
    let p = d.len();
    let mut cov = DMatrix::from_fn(p, p, |i, j| d[i] * r.get(i, j) * d[j]);
    for (i, s) in params.sigma2_m.iter().enumerate() {
        cov[(i, i)] += s;
    }
    PredictiveMoments { mean: snap.m.clone(), cov }
}

/// Draw averages of the per-draw forecasts.
pub fn predictive_moments(store: &DrawStore) -> Result<PredictiveMoments> {
    if store.is_empty() {
        return Err(MrsvError::Data("empty draw store".into()));
    }
    let p = store.layout.dim();
    let mut mean = DVector::zeros(p);
    let mut cov = DMatrix::zeros(p, p);
    for k in 0..store.len() {
        let f = draw_forecast(&store.params(k), &store.snapshot(k), &store.variant.mask);
        mean += f.mean;
        cov += f.cov;
    }
    let n = store.len() as f64;
    mean /= n;
    cov /= n;
    linalg::symmetrize(&mut cov);
    Ok(PredictiveMoments { mean, cov })
}

/// ŵ = Σ⁻¹(m − r_f 1)(μ* − r_f)/κ with κ = (m − r_f 1)'Σ⁻¹(m − r_f 1).
pub fn min_variance_weights(pm: &PredictiveMoments, risk_free: f64, target_mu: f64) -> Result<(DVector<f64>, f64)> {
    let excess = pm.mean.map(|m| m - risk_free);
    let chol = linalg::cholesky(&pm.cov, "predictive covariance")?;
    let s = chol.solve(&excess);
    let kappa = excess.dot(&s);
    if !(kappa >= KAPPA_MIN) {
        return Err(MrsvError::Numerical(format!("no excess-return signal (kappa = {kappa:e})")));
    }
    Ok((s * ((target_mu - risk_free) / kappa), kappa))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioPlan {
    pub dates: Vec<String>,
    pub weights: Vec<DVector<f64>>,
    /// 1 − ŵ'1 per day.
    pub cash_weight: Vec<f64>,
    pub target_mu: f64,
    pub risk_free: Vec<f64>,
    /// ŵ_t'Σ_{t+1}ŵ_t per day.
    pub realized_objective: Vec<f64>,
}

impl PortfolioPlan {
    pub fn new(target_mu: f64) -> Self {
        Self {
            dates: Vec::new(),
            weights: Vec::new(),
            cash_weight: Vec::new(),
            target_mu,
            risk_free: Vec::new(),
            realized_objective: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn push(&mut self, date: String, weights: DVector<f64>, risk_free: f64, realized_cov: &DMatrix<f64>) {
        self.realized_objective.push(weights.dot(&(realized_cov * &weights)));
        self.cash_weight.push(1.0 - weights.sum());
        self.weights.push(weights);
        self.dates.push(date);
        self.risk_free.push(risk_free);
    }

    pub fn total(&self) -> f64 {
        self.realized_objective.iter().sum()
    }

    /// Days `..k` and `k..`.
    pub fn split(&self, k: usize) -> (Self, Self) {
        let part = |r: std::ops::Range<usize>| Self {
            dates: self.dates[r.clone()].to_vec(),
            weights: self.weights[r.clone()].to_vec(),
            cash_weight: self.cash_weight[r.clone()].to_vec(),
            target_mu: self.target_mu,
            risk_free: self.risk_free[r.clone()].to_vec(),
            realized_objective: self.realized_objective[r].to_vec(),
        };
        (part(0..k), part(k..self.len()))
    }
}

/// Σ_t ŵ_t'Σ_{t+1}ŵ_t over the plan's days.
pub fn cumulative_objective(plan: &PortfolioPlan, realized_cov: &[DMatrix<f64>]) -> Result<f64> {
    if realized_cov.len() != plan.len() {
        return Err(MrsvError::Dimension(format!(
            "{} realized covariances for {} plan days",
            realized_cov.len(),
            plan.len()
        )));
    }
    let mut total = 0.0;
    for (w, c) in plan.weights.iter().zip(realized_cov) {
        if c.nrows() != w.len() || c.ncols() != w.len() {
            return Err(MrsvError::Dimension("realized covariance does not match the weights".into()));
        }
        total += w.dot(&(c * w));
    }
    Ok(total)
}

/// Fixed 1/p weights on every day.
pub fn equal_weight_plan(dates: &[String], realized_cov: &[DMatrix<f64>], risk_free: f64) -> Result<PortfolioPlan> {
    if dates.len() != realized_cov.len() || realized_cov.is_empty() {
        return Err(MrsvError::Dimension("dates and realized covariances must match and be nonempty".into()));
    }
    let p = realized_cov[0].nrows();
    let mut plan = PortfolioPlan::new(f64::NAN);
    for (d, c) in dates.iter().zip(realized_cov) {
        plan.push(d.clone(), DVector::from_element(p, 1.0 / p as f64), risk_free, c);
    }
    Ok(plan)
}

/// Anything that turns an estimation window into one-step-ahead moments.
pub trait Estimator {
    fn forecast(&mut self, window: &Dataset, step: usize) -> Result<PredictiveMoments>;
}

/// Re-runs the sampler on each window. The first window uses `cfg`; later
/// windows start from the previous posterior means (shifted by one day) and
/// use the shorter `refit_burnin` / `refit_keep`.
pub struct McmcEstimator {
    pub cfg: McmcConfig,
    pub refit_burnin: usize,
    pub refit_keep: usize,
    warm: Option<WarmStart>,
}

impl McmcEstimator {
    pub fn new(cfg: McmcConfig, refit_burnin: usize, refit_keep: usize) -> Self {
        Self { cfg, refit_burnin, refit_keep, warm: None }
    }
}

impl Estimator for McmcEstimator {
    fn forecast(&mut self, window: &Dataset, step: usize) -> Result<PredictiveMoments> {
        let mut cfg = self.cfg.clone();
        cfg.seed = self.cfg.seed.wrapping_add(step as u64);
        let warm = self.warm.as_ref().map(|w| shift_warm_start(w, 1, window.len()));
        if warm.is_some() {
            cfg.n_burnin = self.refit_burnin;
            cfg.n_keep = self.refit_keep;
        }
        let store = run_mcmc_from(window, &cfg, warm.as_ref())?;
        let latents = store.latent_means.clone().expect("run_mcmc_from fills latent means");
        self.warm = Some(WarmStart { params: store.mean_params()?, latents });
        predictive_moments(&store)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RollingProtocol {
    pub window_len: usize,
    pub n_steps: usize,
    /// r_f per step.
    pub risk_free: Vec<f64>,
    pub target_mu: Vec<f64>,
}

/// Step s estimates on days s..s+window_len and holds ŵ over day
/// s + window_len, whose realized covariance is `realized_cov[s]`. Returns
/// one plan per target. A step without excess-return signal holds cash.
pub fn rolling_forecast(
    data: &Dataset,
    protocol: &RollingProtocol,
    estimator: &mut dyn Estimator,
    realized_cov: &[DMatrix<f64>],
) -> Result<Vec<PortfolioPlan>> {
    let (w, n) = (protocol.window_len, protocol.n_steps);
    if w == 0 || n == 0 || w + n > data.len() {
        return Err(MrsvError::Config(format!("window {w} + steps {n} must fit in {} days", data.len())));
    }
    if realized_cov.len() != n || protocol.risk_free.len() != n {
        return Err(MrsvError::Dimension("need one realized covariance and one r_f per step".into()));
    }
    let mut plans: Vec<PortfolioPlan> = protocol.target_mu.iter().map(|&t| PortfolioPlan::new(t)).collect();
    for s in 0..n {
        let at = |e: MrsvError| MrsvError::AtStep { step: s, source: Box::new(e) };
        let pm = estimator.forecast(&data.window(s, w), s).map_err(at)?;
        let rf = protocol.risk_free[s];
        for plan in plans.iter_mut() {
            let weights = match min_variance_weights(&pm, rf, plan.target_mu) {
                Ok((wt, _)) => wt,
                Err(MrsvError::Numerical(msg)) => {
                    log::warn!("step {s}: {msg}; holding cash");
                    DVector::zeros(data.dim())
                }
                Err(e) => return Err(at(e)),
            };
            plan.push(data.dates[s + w].clone(), weights, rf, &realized_cov[s]);
        }
    }
    Ok(plans)
}

/// Convenience: forecast from a fixed parameter value and snapshot.
pub fn frozen_forecast(params: &ModelParams, snap: &Snapshot, variant: &ModelVariant) -> PredictiveMoments {
    draw_forecast(params, snap, &variant.mask)
}
