//! Log-volatility blocks: the single-move h sampler, φ, and the transition
//! covariance (Ω, or Ψ under leverage).

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::dists::{sample_box_truncated_mvn, sample_inverse_wishart};
use super::{z_matrix, ChainState};
use crate::corrmat::CorrSqrt;
use crate::error::{MrsvError, Result};
use crate::linalg;
use crate::model::{self, Dataset, LatentPaths, Leverage, ModelParams, ModelVariant, Priors, VolNoise};

/// N(mean, prec⁻¹) proposal.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianProposal {
    pub mean: DVector<f64>,
    pub prec: DMatrix<f64>,
}

impl GaussianProposal {
    pub fn logpdf(&self, x: &DVector<f64>) -> Result<f64> {
        linalg::mvn_logpdf_prec(x, &self.mean, &self.prec)
    }
}

/// Inverse-Wishart proposal IW(ν, S).
#[derive(Debug, Clone, PartialEq)]
pub struct IwProposal {
    pub nu: f64,
    pub scale: DMatrix<f64>,
}

impl IwProposal {
    pub fn logpdf(&self, x: &DMatrix<f64>) -> Result<f64> {
        model::inv_wishart_logpdf(x, self.nu, &self.scale)
    }
}

/// Quantities fixed for a whole h sweep.
struct VolCache {
    q_inv: DMatrix<f64>,
    omega0_inv: DMatrix<f64>,
    phi_qinv_phi: DMatrix<f64>,
    /// Q⁻¹Λ and Λ'Q⁻¹Λ under leverage.
    lev: Option<(DMatrix<f64>, DMatrix<f64>)>,
}

impl VolCache {
    fn new(params: &ModelParams) -> Result<Self> {
        let q_inv = linalg::spd_inverse(params.state_cov(), "transition covariance")?;
        let omega0_inv = linalg::spd_inverse(&params.omega0()?, "initial covariance")?;
        let f = DMatrix::from_diagonal(&params.phi);
        let phi_qinv_phi = &f * &q_inv * &f;
        let lev = params.lambda().map(|l| {
            let ql = &q_inv * l;
            let lql = l.transpose() * &ql;
            (ql, lql)
        });
        Ok(Self { q_inv, omega0_inv, phi_qinv_phi, lev })
    }
}

fn build_h_proposal(
    cache: &VolCache,
    params: &ModelParams,
    latents: &LatentPaths,
    data: &Dataset,
    t: usize,
    z_prev: Option<&DVector<f64>>,
) -> GaussianProposal {
    let p = params.dim();
    let t_len = data.len();
    let mu = &params.mu;
    let phi = &params.phi;
    let (mut prec, mut lin) = if t == 0 {
        (cache.omega0_inv.clone(), &cache.omega0_inv * mu)
    } else {
        let mut prior_mean = mu + phi.component_mul(&(latents.h_row(t - 1) - mu));
        if let (Some(l), Some(z)) = (params.lambda(), z_prev) {
            prior_mean += l * z;
        }
        (cache.q_inv.clone(), &cache.q_inv * prior_mean)
    };
    if t + 1 < t_len {
        prec += &cache.phi_qinv_phi;
        // η_t = c − Φ h_t with c = h_{t+1} − (I − Φ) μ
        let c = latents.h_row(t + 1) - mu + phi.component_mul(mu);
        lin += (&cache.q_inv * c).component_mul(phi);
    }
    for i in 0..p {
        lin[i] -= 0.5;
        if let Some(x) = data.x.get(t, i) {
            let s2 = params.sigma2_u[i];
            prec[(i, i)] += 1.0 / s2;
            lin[i] += (x - params.xi[i]) / s2;
        }
    }
    let chol = nalgebra::Cholesky::new(prec.clone());
    let mean = match chol {
        Some(c) => c.solve(&lin),
        None => DVector::from_element(p, f64::NAN),
    };
    GaussianProposal { mean, prec }
}

/// The non-Gaussian part l(h_t) of the h_t conditional: −½ e'R⁻¹e and, under
/// leverage before the last day, z'Λ'Q⁻¹η − ½ z'Λ'Q⁻¹Λz with
/// η = h_{t+1} − μ − Φ(h_t − μ).
#[allow(clippy::too_many_arguments)]
fn l_value(
    cache: &VolCache,
    params: &ModelParams,
    h: &DVector<f64>,
    y: &DVector<f64>,
    m: &DVector<f64>,
    r_chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>,
    s_inv: Option<&DMatrix<f64>>,
    h_next: Option<&DVector<f64>>,
) -> f64 {
    let e = model::scaled_residual(y, m, h);
    let mut val = -0.5 * linalg::chol_quad(r_chol, &e);
    if let (Some((ql, lql)), Some(s_inv), Some(h_next)) = (&cache.lev, s_inv, h_next) {
        let z = s_inv * &e;
        let eta = h_next - &params.mu - params.phi.component_mul(&(h - &params.mu));
        val += z.dot(&(ql.transpose() * eta)) - 0.5 * z.dot(&(lql * &z));
    }
    val
}

fn z_at(latents: &LatentPaths, data: &Dataset, variant: &ModelVariant, t: usize) -> Result<DVector<f64>> {
    model::standardized_return(
        &data.y_row(t),
        &latents.m_row(t),
        &latents.h_row(t),
        &latents.corr(t, &variant.mask),
        variant.sqrt_kind,
    )
    .map_err(|_| MrsvError::NonPdAt { t })
}

/// Gaussian proposal N(m*, P⁻¹) for h_t from the current state.
pub fn h_proposal(
    params: &ModelParams,
    latents: &LatentPaths,
    data: &Dataset,
    variant: &ModelVariant,
    t: usize,
) -> Result<GaussianProposal> {
    let cache = VolCache::new(params)?;
    let z_prev = if variant.has_leverage() && t > 0 { Some(z_at(latents, data, variant, t - 1)?) } else { None };
    Ok(build_h_proposal(&cache, params, latents, data, t, z_prev.as_ref()))
}

/// l(h) at day t with h_t replaced by `h`.
pub fn h_log_l(
    params: &ModelParams,
    latents: &LatentPaths,
    data: &Dataset,
    variant: &ModelVariant,
    t: usize,
    h: &DVector<f64>,
) -> Result<f64> {
    let cache = VolCache::new(params)?;
    let r = latents.corr(t, &variant.mask);
    let chol = linalg::cholesky(r.as_matrix(), "R_t").map_err(|_| MrsvError::NonPdAt { t })?;
    let s_inv = if variant.has_leverage() { Some(CorrSqrt::new(&r, variant.sqrt_kind)?.s_inv) } else { None };
    let h_next = (t + 1 < data.len()).then(|| latents.h_row(t + 1));
    Ok(l_value(&cache, params, h, &data.y_row(t), &latents.m_row(t), &chol, s_inv.as_ref(), h_next.as_ref()))
}

/// Single-move MH over t = 0, …, T−1.
pub fn sample_h_block(state: &mut ChainState, data: &Dataset, _priors: &Priors, variant: &ModelVariant) -> Result<()> {
    let t_len = data.len();
    let p = data.dim();
    let cache = VolCache::new(&state.params)?;
    let lev = variant.has_leverage();
    let mut z_prev: Option<DVector<f64>> = None;
    for t in 0..t_len {
        let r = state.latents.corr(t, &variant.mask);
        let r_chol = linalg::cholesky(r.as_matrix(), "R_t").map_err(|_| MrsvError::NonPdAt { t })?;
        let s_inv = if lev { Some(CorrSqrt::new(&r, variant.sqrt_kind).map_err(|_| MrsvError::NonPdAt { t })?.s_inv) } else { None };
        let prop = build_h_proposal(&cache, &state.params, &state.latents, data, t, z_prev.as_ref());
        let chol = linalg::cholesky(&prop.prec, "h proposal precision")?;
        let mut eps = linalg::std_normal_vec(p, &mut state.rng);
        chol.l_dirty().tr_solve_lower_triangular_mut(&mut eps);
        let cand = &prop.mean + eps;

        let y = data.y_row(t);
        let m = state.latents.m_row(t);
        let h_cur = state.latents.h_row(t);
        let h_next = (t + 1 < t_len).then(|| state.latents.h_row(t + 1));
        let l_new = l_value(&cache, &state.params, &cand, &y, &m, &r_chol, s_inv.as_ref(), h_next.as_ref());
        let l_cur = l_value(&cache, &state.params, &h_cur, &y, &m, &r_chol, s_inv.as_ref(), h_next.as_ref());
        let log_alpha = l_new - l_cur;
        let accepted = log_alpha.is_finite() && (log_alpha >= 0.0 || state.rng.random::<f64>().ln() < log_alpha);
        if accepted {
            state.latents.h.set_row(t, &cand.transpose());
        }
        state.stats.h.record(accepted);
        if let Some(s_inv) = &s_inv {
            let e = model::scaled_residual(&y, &m, &state.latents.h_row(t));
            z_prev = Some(s_inv * e);
        }
    }
    Ok(())
}

/// Residual targets r_t = h_{t+1} − μ − Λz_t and deviations d_t = h_t − μ,
/// t = 0, …, T−2.
fn ar_terms(params: &ModelParams, latents: &LatentPaths, z: Option<&DMatrix<f64>>) -> Vec<(DVector<f64>, DVector<f64>)> {
    let t_len = latents.len();
    (0..t_len.saturating_sub(1))
        .map(|t| {
            let d = latents.h_row(t) - &params.mu;
            let mut r = latents.h_row(t + 1) - &params.mu;
            if let (Some(l), Some(z)) = (params.lambda(), z) {
                r -= l * z.row(t).transpose();
            }
            (d, r)
        })
        .collect()
}

/// Σ_φ⁻¹ = Q⁻¹ ⊙ Σ d_t d_t' and b = Σ (Q⁻¹ r_t) ⊙ d_t, so the transitions
/// contribute exp(b'φ − φ'Σ_φ⁻¹φ/2) to the φ conditional.
fn phi_transition_terms(
    params: &ModelParams,
    latents: &LatentPaths,
    z: Option<&DMatrix<f64>>,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let p = params.dim();
    let q_inv = linalg::spd_inverse(params.state_cov(), "transition covariance")?;
    let mut a = DMatrix::zeros(p, p);
    let mut b = DVector::zeros(p);
    for (d, r) in ar_terms(params, latents, z) {
        a += &d * d.transpose();
        b += (&q_inv * r).component_mul(&d);
    }
    Ok((q_inv.component_mul(&a), b))
}

/// TN_R(μ_φ, Σ_φ) proposal moments. `None` when T < 2, where the transitions
/// carry no information and the proposal is uniform on the box.
pub fn phi_proposal(
    params: &ModelParams,
    latents: &LatentPaths,
    z: Option<&DMatrix<f64>>,
) -> Result<Option<GaussianProposal>> {
    if latents.len() < 2 {
        return Ok(None);
    }
    let (prec, b) = phi_transition_terms(params, latents, z)?;
    let mean = linalg::cholesky(&prec, "phi proposal precision")?.solve(&b);
    Ok(Some(GaussianProposal { mean, prec }))
}

/// log k(φ): the beta priors plus the stationary initial density of h_1.
pub fn phi_log_k(phi: &DVector<f64>, params: &ModelParams, latents: &LatentPaths, priors: &Priors) -> Result<f64> {
    if phi.iter().any(|f| !(f.abs() < 1.0)) {
        return Ok(f64::NEG_INFINITY);
    }
    let omega0 = model::stationary_init_cov(phi, params.state_cov())?;
    let prior: f64 = phi.iter().map(|f| model::phi_prior_logpdf(*f, &priors.phi)).sum();
    Ok(prior + linalg::mvn_logpdf(&latents.h_row(0), &params.mu, &omega0)?)
}

pub fn sample_phi(state: &mut ChainState, data: &Dataset, priors: &Priors, variant: &ModelVariant) -> Result<()> {
    let z = z_matrix(&state.latents, data, variant)?;
    sample_phi_with(state, data, priors, z.as_ref())
}

pub(crate) fn sample_phi_with(
    state: &mut ChainState,
    _data: &Dataset,
    priors: &Priors,
    z: Option<&DMatrix<f64>>,
) -> Result<()> {
    let p = state.params.dim();
    let uniform = |rng: &mut crate::ChainRng| DVector::from_fn(p, |_, _| rng.random_range(-1.0..1.0));
    // A flat h path leaves the transition precision singular; the box-uniform
    // proposal then carries the transition term in the acceptance ratio.
    let mut extra = 0.0;
    let cand = match phi_proposal(&state.params, &state.latents, z) {
        Ok(Some(prop)) => {
            let d = sample_box_truncated_mvn(&prop.mean, &prop.prec, -1.0, 1.0, &state.params.phi, 1000, &mut state.rng)?;
            if d.used_fallback {
                state.stats.phi_fallback += 1;
            }
            d.value
        }
        Ok(None) => uniform(&mut state.rng),
        Err(MrsvError::NotPositiveDefinite(_)) => {
            let (prec, b) = phi_transition_terms(&state.params, &state.latents, z)?;
            let log_lik = |f: &DVector<f64>| b.dot(f) - 0.5 * f.dot(&(&prec * f));
            let c = uniform(&mut state.rng);
            extra = log_lik(&c) - log_lik(&state.params.phi);
            state.stats.phi_fallback += 1;
            c
        }
        Err(e) => return Err(e),
    };
    let log_alpha = extra + phi_log_k(&cand, &state.params, &state.latents, priors)?
        - phi_log_k(&state.params.phi, &state.params, &state.latents, priors)?;
    let accepted = log_alpha.is_finite() && (log_alpha >= 0.0 || state.rng.random::<f64>().ln() < log_alpha);
    if accepted {
        state.params.phi = cand;
    }
    state.stats.phi.record(accepted);
    Ok(())
}

/// IW(ν + T − 1, S + Σ η_t η_t') proposal for Ω.
pub fn omega_proposal(params: &ModelParams, latents: &LatentPaths, priors: &Priors) -> IwProposal {
    let mut scale = priors.omega.scale.clone();
    let terms = ar_terms(params, latents, None);
    for (d, r) in &terms {
        let eta = r - params.phi.component_mul(d);
        scale += &eta * eta.transpose();
    }
    linalg::symmetrize(&mut scale);
    IwProposal { nu: priors.omega.nu + terms.len() as f64, scale }
}

/// IW proposal for Ψ from the leverage-corrected residuals η_t − Λz_t. Under
/// full leverage the matrix-normal prior of Λ adds (Λ − M₀)Γ₀⁻¹(Λ − M₀)' to
/// the scale and p to the degrees of freedom.
pub fn psi_proposal(
    params: &ModelParams,
    latents: &LatentPaths,
    priors: &Priors,
    leverage: Leverage,
    z: Option<&DMatrix<f64>>,
) -> Result<IwProposal> {
    let p = params.dim();
    let mut scale = priors.psi.scale.clone();
    let terms = ar_terms(params, latents, z);
    for (d, r) in &terms {
        let eps = r - params.phi.component_mul(d);
        scale += &eps * eps.transpose();
    }
    let mut nu = priors.psi.nu + terms.len() as f64;
    if leverage == Leverage::Full {
        let lambda = params.lambda().ok_or_else(|| MrsvError::Config("Psi update without Lambda".into()))?;
        let dev = lambda - &priors.lambda.mean;
        let g_inv = linalg::spd_inverse(&priors.lambda.gamma0, "Gamma0")?;
        scale += &dev * g_inv * dev.transpose();
        nu += p as f64;
    }
    linalg::symmetrize(&mut scale);
    Ok(IwProposal { nu, scale })
}

/// log m(Q†) − log m(Q) with m(Q) = N(h_1; μ, Ω₀(φ, Q)).
pub fn cov_log_ratio(new_cov: &DMatrix<f64>, params: &ModelParams, latents: &LatentPaths) -> Result<f64> {
    let h0 = latents.h_row(0);
    let new0 = model::stationary_init_cov(&params.phi, new_cov)?;
    Ok(linalg::mvn_logpdf(&h0, &params.mu, &new0)? - linalg::mvn_logpdf(&h0, &params.mu, &params.omega0()?)?)
}

fn mh_cov(state: &mut ChainState, prop: IwProposal) -> Result<Option<DMatrix<f64>>> {
    let cand = sample_inverse_wishart(prop.nu, &prop.scale, &mut state.rng)?;
    if linalg::cholesky(&cand, "proposal").is_err() {
        state.stats.cov.record(false);
        return Ok(None);
    }
    let log_alpha = cov_log_ratio(&cand, &state.params, &state.latents)?;
    let accepted = log_alpha.is_finite() && (log_alpha >= 0.0 || state.rng.random::<f64>().ln() < log_alpha);
    state.stats.cov.record(accepted);
    Ok(accepted.then_some(cand))
}

pub fn sample_omega(state: &mut ChainState, _data: &Dataset, priors: &Priors) -> Result<()> {
    if !matches!(state.params.noise, VolNoise::Omega(_)) {
        return Err(MrsvError::Config("Omega update requires the no-leverage variant".into()));
    }
    let prop = omega_proposal(&state.params, &state.latents, priors);
    if let Some(new) = mh_cov(state, prop)? {
        state.params.noise = VolNoise::Omega(new);
    }
    Ok(())
}

pub fn sample_psi(state: &mut ChainState, data: &Dataset, priors: &Priors, variant: &ModelVariant) -> Result<()> {
    let z = z_matrix(&state.latents, data, variant)?;
    sample_psi_with(state, data, priors, variant, z.as_ref())
}

pub(crate) fn sample_psi_with(
    state: &mut ChainState,
    _data: &Dataset,
    priors: &Priors,
    variant: &ModelVariant,
    z: Option<&DMatrix<f64>>,
) -> Result<()> {
    let prop = psi_proposal(&state.params, &state.latents, priors, variant.leverage, z)?;
    if let Some(new) = mh_cov(state, prop)? {
        if let VolNoise::Leverage { psi, .. } = &mut state.params.noise {
            *psi = new;
        }
    }
    Ok(())
}
