//! Metropolis-within-Gibbs sampler for the MRSV model.
//!
//! One sweep updates, in order: the Fisher correlations g (single-move MH
//! inside the PD interval), the log-volatilities h (single-move MH), the mean
//! path m (simulation smoother), φ (MH), the location parameters μ, ξ, δ
//! (Gibbs), the variances (Gibbs), and finally Ω (MH), or Ψ (MH) followed by
//! Λ (Gibbs) when leverage is present.

mod conjugate;
mod corr;
pub mod dists;
mod init;
mod mean;
mod vol;

use nalgebra::DMatrix;

pub use conjugate::{
    delta_conditional, lambda_full_conditional, lambda_pars_conditional, mu_conditional, sample_lambda_full,
    sample_lambda_parsimonious, sample_location_params, sample_variances, variance_conditionals, xi_conditional,
    LambdaFullConditional, NormalConditional, VarianceConditionals,
};
pub use corr::{g_conditional_moments, g_interval, g_log_ratio, sample_g_block};
pub use init::{initialize, shift_warm_start};
pub use mean::{m_smoother_plan, sample_m_block, SmootherPlan};
pub use vol::{
    cov_log_ratio, h_log_l, h_proposal, omega_proposal, phi_log_k, phi_proposal, psi_proposal, sample_h_block,
    sample_omega, sample_phi, sample_psi, GaussianProposal, IwProposal,
};

use crate::corrmat::{self, DEFAULT_PD_TOL};
use crate::draws::{DrawStore, ParamLayout, Snapshot};
use crate::error::{MrsvError, Result};
use crate::model::{self, Dataset, LatentPaths, Leverage, ModelParams, ModelVariant, Priors};
use crate::{rng_from_seed, ChainRng};

/// Proposal and acceptance counts of one MH block.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counter {
    pub proposed: u64,
    pub accepted: u64,
}

impl Counter {
    pub fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        self.accepted += accepted as u64;
    }

    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            f64::NAN
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BlockStats {
    pub g: Counter,
    pub h: Counter,
    pub phi: Counter,
    /// Ω, or Ψ under leverage.
    pub cov: Counter,
    /// Correlation updates skipped because the admissible interval was
    /// narrower than the degeneracy threshold.
    pub g_degenerate: u64,
    /// φ proposals that needed the coordinate-Gibbs fallback.
    pub phi_fallback: u64,
}

pub struct ChainState {
    pub params: ModelParams,
    pub latents: LatentPaths,
    pub sweep: usize,
    pub rng: ChainRng,
    pub stats: BlockStats,
    /// Floor on the Schur complement of a proposed correlation.
    pub pd_tol: f64,
}

impl ChainState {
    pub fn new(params: ModelParams, latents: LatentPaths, seed: u64) -> Self {
        Self { params, latents, sweep: 0, rng: rng_from_seed(seed), stats: BlockStats::default(), pd_tol: DEFAULT_PD_TOL }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McmcConfig {
    pub n_burnin: usize,
    pub n_keep: usize,
    pub thin: usize,
    pub variant: ModelVariant,
    pub priors: Priors,
    pub pd_tol: f64,
    pub seed: u64,
    /// Keep full latent paths every this many stored draws; 0 disables.
    pub store_paths_every: usize,
}

impl McmcConfig {
    pub fn new(variant: ModelVariant, n_burnin: usize, n_keep: usize, seed: u64) -> Self {
        let priors = Priors::vague(variant.dim(), variant.leverage);
        Self { n_burnin, n_keep, thin: 1, variant, priors, pd_tol: DEFAULT_PD_TOL, seed, store_paths_every: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_keep == 0 || self.thin == 0 {
            return Err(MrsvError::Config("n_keep and thin must be at least 1".into()));
        }
        if !(self.pd_tol >= 0.0) {
            return Err(MrsvError::Config("pd_tol must be nonnegative".into()));
        }
        self.variant.validate()?;
        self.priors.validate(&self.variant)
    }
}

/// Posterior means of θ and the latent paths from a previous run, used to
/// initialize the next one.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub params: ModelParams,
    pub latents: LatentPaths,
}

/// Standardized returns z_t for every t (rows), or `None` without leverage.
pub(crate) fn z_matrix(latents: &LatentPaths, data: &Dataset, variant: &ModelVariant) -> Result<Option<DMatrix<f64>>> {
    if !variant.has_leverage() {
        return Ok(None);
    }
    let (t_len, p) = (data.len(), data.dim());
    let mut z = DMatrix::zeros(t_len, p);
    for t in 0..t_len {
        let r = latents.corr(t, &variant.mask);
        let zt = model::standardized_return(&data.y_row(t), &latents.m_row(t), &latents.h_row(t), &r, variant.sqrt_kind)
            .map_err(|_| MrsvError::NonPdAt { t })?;
        z.set_row(t, &zt.transpose());
    }
    Ok(Some(z))
}

/// One full sweep over all blocks.
pub fn sweep(state: &mut ChainState, data: &Dataset, priors: &Priors, variant: &ModelVariant) -> Result<()> {
    corr::sample_g_block(state, data, priors, variant)?;
    vol::sample_h_block(state, data, priors, variant)?;
    mean::sample_m_block(state, data, priors, variant)?;
    let z = z_matrix(&state.latents, data, variant)?;
    vol::sample_phi_with(state, data, priors, z.as_ref())?;
    conjugate::sample_location_with(state, data, priors, variant, z.as_ref())?;
    conjugate::sample_variances(state, data, priors, variant)?;
    match variant.leverage {
        Leverage::None => vol::sample_omega(state, data, priors)?,
        Leverage::Full => {
            vol::sample_psi_with(state, data, priors, variant, z.as_ref())?;
            conjugate::sample_lambda_full_with(state, data, priors, z.as_ref())?;
        }
        Leverage::Parsimonious(q) => {
            vol::sample_psi_with(state, data, priors, variant, z.as_ref())?;
            conjugate::sample_lambda_pars_with(state, data, priors, q, z.as_ref())?;
        }
    }
    state.sweep += 1;
    Ok(())
}

fn check_finite(state: &ChainState) -> Result<()> {
    let p = &state.params;
    let finite = p
        .phi
        .iter()
        .chain(p.mu.iter())
        .chain(p.xi.iter())
        .chain(p.delta.iter())
        .chain(p.sigma2_u.iter())
        .chain(p.sigma2_v.iter())
        .chain(p.sigma2_zeta.iter())
        .chain(p.sigma2_m.iter())
        .chain(p.state_cov().iter())
        .chain(p.lambda().into_iter().flat_map(|l| l.iter()))
        .chain(state.latents.h.iter())
        .chain(state.latents.g.iter())
        .chain(state.latents.m.iter())
        .all(|v| v.is_finite());
    if finite {
        Ok(())
    } else {
        log::error!("non-finite chain state at sweep {}: {:?}", state.sweep, state.params);
        Err(MrsvError::Numerical(format!("non-finite state, parameters: {:?}", state.params)))
    }
}

/// A chain bound to one dataset and configuration.
pub struct Chain<'a> {
    data: &'a Dataset,
    cfg: &'a McmcConfig,
    state: ChainState,
}

impl<'a> Chain<'a> {
    /// Starts from the default initialization.
    pub fn new(data: &'a Dataset, cfg: &'a McmcConfig) -> Result<Self> {
        let (params, latents) = init::initialize(data, &cfg.variant, &cfg.priors)?;
        Self::from_state(data, cfg, params, latents)
    }

    pub fn from_state(data: &'a Dataset, cfg: &'a McmcConfig, params: ModelParams, latents: LatentPaths) -> Result<Self> {
        cfg.validate()?;
        check_data(data, &cfg.variant)?;
        params.validate(&cfg.variant)?;
        if latents.len() != data.len() {
            return Err(MrsvError::Dimension("initial latent paths do not match the data length".into()));
        }
        for t in 0..data.len() {
            if !latents.corr(t, &cfg.variant.mask).is_pd(0.0) {
                return Err(MrsvError::NonPdAt { t });
            }
        }
        let mut state = ChainState::new(params, latents, cfg.seed);
        state.pd_tol = cfg.pd_tol;
        Ok(Self { data, cfg, state })
    }

    pub fn sweep(&mut self) -> Result<()> {
        let s = self.state.sweep;
        sweep(&mut self.state, self.data, &self.cfg.priors, &self.cfg.variant)
            .map_err(|e| MrsvError::AtSweep { sweep: s, source: Box::new(e) })?;
        check_finite(&self.state).map_err(|e| MrsvError::AtSweep { sweep: s, source: Box::new(e) })
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut ChainState {
        &mut self.state
    }

    pub fn into_state(self) -> ChainState {
        self.state
    }

    /// Time-T snapshot of the current state.
    pub fn snapshot(&self) -> Result<Snapshot> {
        Snapshot::from_state(&self.state.latents, self.data, &self.cfg.variant)
    }
}

fn check_data(data: &Dataset, variant: &ModelVariant) -> Result<()> {
    if data.dim() != variant.dim() {
        return Err(MrsvError::Dimension(format!(
            "data has {} assets, variant expects {}",
            data.dim(),
            variant.dim()
        )));
    }
    if data.is_empty() {
        return Err(MrsvError::Data("empty dataset".into()));
    }
    Ok(())
}

/// Runs the sampler from its default initialization.
pub fn run_mcmc(data: &Dataset, cfg: &McmcConfig) -> Result<DrawStore> {
    run_mcmc_from(data, cfg, None)
}

/// Runs the sampler, optionally warm-started.
pub fn run_mcmc_from(data: &Dataset, cfg: &McmcConfig, warm: Option<&WarmStart>) -> Result<DrawStore> {
    let mut chain = match warm {
        Some(w) => {
            let mut latents = w.latents.clone();
            init::make_pd(&mut latents, &cfg.variant.mask);
            Chain::from_state(data, cfg, w.params.clone(), latents)?
        }
        None => Chain::new(data, cfg)?,
    };
    let layout = ParamLayout::new(&cfg.variant);
    let mut store = DrawStore::new(layout, cfg, data);
    for _ in 0..cfg.n_burnin {
        chain.sweep()?;
    }
    let (t_len, p, np) = (data.len(), data.dim(), corrmat::n_pairs(data.dim()));
    let mut sums = LatentPaths { h: DMatrix::zeros(t_len, p), g: DMatrix::zeros(t_len, np), m: DMatrix::zeros(t_len, p) };
    for k in 0..cfg.n_keep {
        for _ in 0..cfg.thin {
            chain.sweep()?;
        }
        let st = chain.state();
        store.push(&st.params, &chain.snapshot()?);
        sums.h += &st.latents.h;
        sums.g += &st.latents.g;
        sums.m += &st.latents.m;
        if cfg.store_paths_every > 0 && k % cfg.store_paths_every == 0 {
            store.paths.push(st.latents.clone());
        }
    }
    let n = cfg.n_keep as f64;
    sums.h /= n;
    sums.g /= n;
    sums.m /= n;
    store.latent_means = Some(sums);
    store.stats = chain.state().stats;
    Ok(store)
}
