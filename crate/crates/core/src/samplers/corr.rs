//! Single-move sampler for the Fisher-transformed correlations g_{ij,t}.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;

use super::dists::sample_truncated_normal;
use super::ChainState;
use crate::corrmat::{self, EntryBounds, SqrtKind};
use crate::error::{MrsvError, Result};
use crate::linalg;
use crate::model::{self, Dataset, LatentPaths, ModelParams, ModelVariant, Priors};

/// Mean and variance of the Gaussian part of the conditional of g_{k,t}: the
/// random-walk neighbours (κ-scaled at t = 0) and the measurement w_{k,t} if
/// observed.
pub fn g_conditional_moments(
    params: &ModelParams,
    latents: &LatentPaths,
    data: &Dataset,
    priors: &Priors,
    t: usize,
    k: usize,
) -> (f64, f64) {
    let s2 = params.sigma2_zeta[k];
    let (mut prec, mut lin) = if t == 0 {
        (1.0 / (priors.kappa * s2), 0.0)
    } else {
        (1.0 / s2, latents.g[(t - 1, k)] / s2)
    };
    if t + 1 < data.len() {
        prec += 1.0 / s2;
        lin += latents.g[(t + 1, k)] / s2;
    }
    if let Some(w) = data.w.get(t, k) {
        let v = params.sigma2_v[k];
        prec += 1.0 / v;
        lin += (w - params.delta[k]) / v;
    }
    (lin / prec, 1.0 / prec)
}

/// Admissible interval for ρ_{k,t} given the other correlations at t.
pub fn g_interval(latents: &LatentPaths, variant: &ModelVariant, t: usize, k: usize) -> Result<EntryBounds> {
    let (i, j) = corrmat::pair_at(k);
    corrmat::entry_bounds(&latents.corr(t, &variant.mask), i, j).map_err(|_| MrsvError::NonPdAt { t })
}

struct LevContext<'a> {
    lambda: &'a DMatrix<f64>,
    psi: Cholesky<f64, Dyn>,
    kind: SqrtKind,
}

impl<'a> LevContext<'a> {
    fn new(params: &'a ModelParams, variant: &ModelVariant) -> Result<Option<Self>> {
        match (&params.noise, params.lambda()) {
            (model::VolNoise::Leverage { psi, .. }, Some(lambda)) => Ok(Some(Self {
                lambda,
                psi: linalg::cholesky(psi, "Psi")?,
                kind: variant.sqrt_kind,
            })),
            _ => Ok(None),
        }
    }
}

/// Part of log π(g_t | ·) that is not Gaussian in g: the return density
/// −½ log|R| − ½ e'R⁻¹e and, under leverage before the last day, the
/// transition density of h_{t+1} through z_t. `None` if R is not PD.
fn r_value(r: &DMatrix<f64>, e: &DVector<f64>, eta: Option<&DVector<f64>>, lev: Option<&LevContext>) -> Option<f64> {
    let chol = Cholesky::new(r.clone())?;
    let mut val = -0.5 * (linalg::chol_logdet(&chol) + linalg::chol_quad(&chol, e));
    if let (Some(eta), Some(lev)) = (eta, lev) {
        let z = match lev.kind {
            SqrtKind::Cholesky => chol.l_dirty().solve_lower_triangular(e)?,
            SqrtKind::Spectral => {
                let (vecs, q) = corrmat::sorted_eigen(r).ok()?;
                let pz = vecs.transpose() * e;
                DVector::from_fn(e.len(), |a, _| pz[a] / q[a].sqrt())
            }
        };
        let d = eta - lev.lambda * z;
        val -= 0.5 * linalg::chol_quad(&lev.psi, &d);
    }
    Some(val)
}

fn eta_at(params: &ModelParams, latents: &LatentPaths, t: usize) -> DVector<f64> {
    let h = latents.h_row(t);
    let mean = &params.mu + params.phi.component_mul(&(&h - &params.mu));
    latents.h_row(t + 1) - mean
}

/// r(g†) − r(g) for replacing g_{k,t} by `g_new`, the MH log acceptance
/// ratio of the truncated-normal proposal.
pub fn g_log_ratio(
    params: &ModelParams,
    latents: &LatentPaths,
    data: &Dataset,
    variant: &ModelVariant,
    t: usize,
    k: usize,
    g_new: f64,
) -> Result<f64> {
    let lev = LevContext::new(params, variant)?;
    let e = model::scaled_residual(&data.y_row(t), &latents.m_row(t), &latents.h_row(t));
    let eta = (lev.is_some() && t + 1 < data.len()).then(|| eta_at(params, latents, t));
    let mut r = latents.corr(t, &variant.mask);
    let cur = r_value(r.as_matrix(), &e, eta.as_ref(), lev.as_ref()).ok_or(MrsvError::NonPdAt { t })?;
    let (i, j) = corrmat::pair_at(k);
    r.set(i, j, corrmat::inverse_fisher(g_new));
    let new = r_value(r.as_matrix(), &e, eta.as_ref(), lev.as_ref())
        .ok_or_else(|| MrsvError::Domain(format!("proposed g at t = {t}, pair {k} leaves the PD region")))?;
    Ok(new - cur)
}

/// One pass over all days (ascending) and free pairs (canonical order).
pub fn sample_g_block(state: &mut ChainState, data: &Dataset, priors: &Priors, variant: &ModelVariant) -> Result<()> {
    let t_len = data.len();
    let lev = LevContext::new(&state.params, variant)?;
    let free: Vec<usize> = variant.mask.free_indices().collect();
    for t in 0..t_len {
        let e = model::scaled_residual(&data.y_row(t), &state.latents.m_row(t), &state.latents.h_row(t));
        let eta = (lev.is_some() && t + 1 < t_len).then(|| eta_at(&state.params, &state.latents, t));
        let mut r = state.latents.corr(t, &variant.mask);
        let mut r_cur = r_value(r.as_matrix(), &e, eta.as_ref(), lev.as_ref()).ok_or(MrsvError::NonPdAt { t })?;
        for &k in &free {
            let (i, j) = corrmat::pair_at(k);
            let (b, a) = corrmat::entry_bounds_with_curvature(&r, i, j).map_err(|_| MrsvError::NonPdAt { t })?;
            if b.is_degenerate() {
                state.stats.g_degenerate += 1;
                continue;
            }
            let (lo, hi) = b.fisher_interval();
            let (m, v) = g_conditional_moments(&state.params, &state.latents, data, priors, t, k);
            let g_new = sample_truncated_normal(m, v, lo, hi, &mut state.rng)?;
            let rho = corrmat::inverse_fisher(g_new);
            if !b.contains(rho) || a * (rho - b.lower) * (b.upper - rho) <= state.pd_tol {
                state.stats.g.record(false);
                continue;
            }
            let old = r.get(i, j);
            r.set(i, j, rho);
            let accepted = match r_value(r.as_matrix(), &e, eta.as_ref(), lev.as_ref()) {
                Some(r_new) => {
                    let log_alpha = r_new - r_cur;
                    if log_alpha >= 0.0 || state.rng.random::<f64>().ln() < log_alpha {
                        r_cur = r_new;
                        true
                    } else {
                        false
                    }
                }
                None => false,
            };
            if accepted {
                state.latents.g[(t, k)] = g_new;
            } else {
                r.set(i, j, old);
            }
            state.stats.g.record(accepted);
        }
    }
    Ok(())
}
