//! Exact Gibbs blocks: μ, ξ, δ, the variances and the leverage loadings.

use nalgebra::{DMatrix, DVector};

use super::dists::sample_inverse_gamma;
use super::{z_matrix, ChainState};
use crate::error::{MrsvError, Result};
use crate::linalg;
use crate::model::{Dataset, LatentPaths, MeanKind, ModelParams, ModelVariant, Priors, VolNoise};

/// A Gaussian full conditional.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalConditional {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// μ | · ~ N. The initial state contributes Ω₀⁻¹ and each transition
/// h_{t+1} − Φh_t − Λz_t = (I − Φ)μ + noise contributes (I − Φ)Q⁻¹(I − Φ).
pub fn mu_conditional(
    params: &ModelParams,
    latents: &LatentPaths,
    priors: &Priors,
    z: Option<&DMatrix<f64>>,
) -> Result<NormalConditional> {
    let p = params.dim();
    let t_len = latents.len();
    let q_inv = linalg::spd_inverse(params.state_cov(), "transition covariance")?;
    let o0_inv = linalg::spd_inverse(&params.omega0()?, "initial covariance")?;
    let one_minus = DVector::from_fn(p, |i, _| 1.0 - params.phi[i]);
    let imf = DMatrix::from_diagonal(&one_minus);
    let n_trans = t_len.saturating_sub(1) as f64;

    let mut prec = DMatrix::identity(p, p) / priors.mu.var + &o0_inv + &imf * &q_inv * &imf * n_trans;
    let mut sum = DVector::zeros(p);
    for t in 0..t_len.saturating_sub(1) {
        let mut r = latents.h_row(t + 1) - params.phi.component_mul(&latents.h_row(t));
        if let (Some(l), Some(z)) = (params.lambda(), z) {
            r -= l * z.row(t).transpose();
        }
        sum += r;
    }
    let lin = DVector::from_element(p, priors.mu.mean / priors.mu.var) + &o0_inv * latents.h_row(0) + &imf * (&q_inv * sum);
    linalg::symmetrize(&mut prec);
    let cov = linalg::spd_inverse(&prec, "mu precision")?;
    Ok(NormalConditional { mean: &cov * lin, cov })
}

/// Independent normal conditionals for ξ_i from the observed x_it − h_it.
pub fn xi_conditional(params: &ModelParams, latents: &LatentPaths, data: &Dataset, priors: &Priors) -> NormalConditional {
    let p = params.dim();
    let mut mean = DVector::zeros(p);
    let mut var = DVector::zeros(p);
    for i in 0..p {
        let s2 = params.sigma2_u[i];
        let mut prec = 1.0 / priors.xi.var;
        let mut lin = priors.xi.mean / priors.xi.var;
        for t in 0..data.len() {
            if let Some(x) = data.x.get(t, i) {
                prec += 1.0 / s2;
                lin += (x - latents.h[(t, i)]) / s2;
            }
        }
        mean[i] = lin / prec;
        var[i] = 1.0 / prec;
    }
    NormalConditional { mean, cov: DMatrix::from_diagonal(&var) }
}

/// Independent normal conditionals for δ_ij from the observed w_ijt − g_ijt.
/// Fixed-zero pairs get mean 0 and variance 0.
pub fn delta_conditional(
    params: &ModelParams,
    latents: &LatentPaths,
    data: &Dataset,
    priors: &Priors,
    variant: &ModelVariant,
) -> NormalConditional {
    let np = params.delta.len();
    let mut mean = DVector::zeros(np);
    let mut var = DVector::zeros(np);
    for k in variant.mask.free_indices() {
        let s2 = params.sigma2_v[k];
        let mut prec = 1.0 / priors.delta.var;
        let mut lin = priors.delta.mean / priors.delta.var;
        for t in 0..data.len() {
            if let Some(w) = data.w.get(t, k) {
                prec += 1.0 / s2;
                lin += (w - latents.g[(t, k)]) / s2;
            }
        }
        mean[k] = lin / prec;
        var[k] = 1.0 / prec;
    }
    NormalConditional { mean, cov: DMatrix::from_diagonal(&var) }
}

pub fn sample_location_params(state: &mut ChainState, data: &Dataset, priors: &Priors, variant: &ModelVariant) -> Result<()> {
    let z = z_matrix(&state.latents, data, variant)?;
    sample_location_with(state, data, priors, variant, z.as_ref())
}

pub(crate) fn sample_location_with(
    state: &mut ChainState,
    data: &Dataset,
    priors: &Priors,
    variant: &ModelVariant,
    z: Option<&DMatrix<f64>>,
) -> Result<()> {
    let mu = mu_conditional(&state.params, &state.latents, priors, z)?;
    state.params.mu = linalg::sample_mvn(&mu.mean, &mu.cov, &mut state.rng)?;
    let xi = xi_conditional(&state.params, &state.latents, data, priors);
    for i in 0..xi.mean.len() {
        state.params.xi[i] = xi.mean[i] + xi.cov[(i, i)].sqrt() * linalg::std_normal_vec(1, &mut state.rng)[0];
    }
    let delta = delta_conditional(&state.params, &state.latents, data, priors, variant);
    for k in variant.mask.free_indices() {
        state.params.delta[k] =
            delta.mean[k] + delta.cov[(k, k)].sqrt() * linalg::std_normal_vec(1, &mut state.rng)[0];
    }
    Ok(())
}

/// Inverse-gamma conditionals as (shape, scale) pairs. Fixed-zero pairs are
/// `None`; `m` is empty for the constant-mean variant.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceConditionals {
    pub u: Vec<(f64, f64)>,
    pub v: Vec<Option<(f64, f64)>>,
    pub zeta: Vec<Option<(f64, f64)>>,
    pub m: Vec<(f64, f64)>,
}

fn rw_sum_squares(col: impl Iterator<Item = f64>, kappa: f64) -> (f64, usize) {
    let mut prev: Option<f64> = None;
    let mut ss = 0.0;
    let mut n = 0;
    for v in col {
        ss += match prev {
            None => v * v / kappa,
            Some(p) => (v - p) * (v - p),
        };
        prev = Some(v);
        n += 1;
    }
    (ss, n)
}

pub fn variance_conditionals(
    params: &ModelParams,
    latents: &LatentPaths,
    data: &Dataset,
    priors: &Priors,
    variant: &ModelVariant,
) -> VarianceConditionals {
    let p = params.dim();
    let t_len = data.len();
    let u = (0..p)
        .map(|i| {
            let (mut ss, mut n) = (0.0, 0usize);
            for t in 0..t_len {
                if let Some(x) = data.x.get(t, i) {
                    let r = x - params.xi[i] - latents.h[(t, i)];
                    ss += r * r;
                    n += 1;
                }
            }
            (0.5 * (priors.sigma2_u.n + n as f64), 0.5 * (priors.sigma2_u.d + ss))
        })
        .collect();
    let np = params.delta.len();
    let mut v = vec![None; np];
    let mut zeta = vec![None; np];
    for k in variant.mask.free_indices() {
        let (mut ss, mut n) = (0.0, 0usize);
        for t in 0..t_len {
            if let Some(w) = data.w.get(t, k) {
                let r = w - params.delta[k] - latents.g[(t, k)];
                ss += r * r;
                n += 1;
            }
        }
        v[k] = Some((0.5 * (priors.sigma2_v.n + n as f64), 0.5 * (priors.sigma2_v.d + ss)));
        let (ss, n) = rw_sum_squares(latents.g.column(k).iter().cloned(), priors.kappa);
        zeta[k] = Some((0.5 * (priors.sigma2_zeta.n + n as f64), 0.5 * (priors.sigma2_zeta.d + ss)));
    }
    let m = match variant.mean_kind {
        MeanKind::Constant => Vec::new(),
        MeanKind::RandomWalk => (0..p)
            .map(|i| {
                let (ss, n) = rw_sum_squares(latents.m.column(i).iter().cloned(), priors.kappa);
                (0.5 * (priors.sigma2_m.n + n as f64), 0.5 * (priors.sigma2_m.d + ss))
            })
            .collect(),
    };
    VarianceConditionals { u, v, zeta, m }
}

pub fn sample_variances(state: &mut ChainState, data: &Dataset, priors: &Priors, variant: &ModelVariant) -> Result<()> {
    let c = variance_conditionals(&state.params, &state.latents, data, priors, variant);
    for (i, (a, b)) in c.u.iter().enumerate() {
        state.params.sigma2_u[i] = sample_inverse_gamma(*a, *b, &mut state.rng)?;
    }
    for k in 0..c.v.len() {
        if let (Some((a, b)), Some((az, bz))) = (c.v[k], c.zeta[k]) {
            state.params.sigma2_v[k] = sample_inverse_gamma(a, b, &mut state.rng)?;
            state.params.sigma2_zeta[k] = sample_inverse_gamma(az, bz, &mut state.rng)?;
        }
    }
    for (i, (a, b)) in c.m.iter().enumerate() {
        state.params.sigma2_m[i] = sample_inverse_gamma(*a, *b, &mut state.rng)?;
    }
    Ok(())
}

/// η_t = h_{t+1} − μ − Φ(h_t − μ), t = 0, …, T−2, as rows.
fn eta_matrix(params: &ModelParams, latents: &LatentPaths) -> DMatrix<f64> {
    let p = params.dim();
    let n = latents.len().saturating_sub(1);
    DMatrix::from_fn(n, p, |t, i| {
        latents.h[(t + 1, i)] - params.mu[i] - params.phi[i] * (latents.h[(t, i)] - params.mu[i])
    })
}

/// Λ | · ~ MN(M*, Ψ ⊗ Γ₁) in the sense vec(Λ') ~ N(vec(M*'), Ψ ⊗ Γ₁), with
/// Γ₁ = (A + Γ₀⁻¹)⁻¹ and M* = (B' + M₀Γ₀⁻¹)Γ₁, A = Σ z_t z_t', B = Σ z_t η_t'.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaFullConditional {
    pub mean: DMatrix<f64>,
    pub gamma1: DMatrix<f64>,
    pub psi: DMatrix<f64>,
}

impl LambdaFullConditional {
    /// Covariance of vec(Λ) (column stacking): Γ₁ ⊗ Ψ.
    pub fn vec_cov(&self) -> DMatrix<f64> {
        linalg::kron(&self.gamma1, &self.psi)
    }
}

fn z_eta_moments(params: &ModelParams, latents: &LatentPaths, z: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let eta = eta_matrix(params, latents);
    let n = eta.nrows();
    let zr = z.rows(0, n);
    (zr.transpose() * zr, zr.transpose() * eta)
}

pub fn lambda_full_conditional(
    params: &ModelParams,
    latents: &LatentPaths,
    priors: &Priors,
    z: &DMatrix<f64>,
) -> Result<LambdaFullConditional> {
    let (a, b) = z_eta_moments(params, latents, z);
    let g0_inv = linalg::spd_inverse(&priors.lambda.gamma0, "Gamma0")?;
    let gamma1 = linalg::spd_inverse(&(a + &g0_inv), "A + Gamma0^-1")?;
    let mean = (b.transpose() + &priors.lambda.mean * &g0_inv) * &gamma1;
    Ok(LambdaFullConditional { mean, gamma1, psi: params.state_cov().clone() })
}

/// Stacked λ = (λ₁', …, λ_q')' | · ~ N with precision Γ₀⁻¹ + A_{1:q,1:q} ⊗ Ψ⁻¹
/// and linear term Γ₀⁻¹m₀ + vec(Ψ⁻¹ Σ η_t z_{1:q,t}').
pub fn lambda_pars_conditional(
    params: &ModelParams,
    latents: &LatentPaths,
    priors: &Priors,
    q: usize,
    z: &DMatrix<f64>,
) -> Result<NormalConditional> {
    let p = params.dim();
    let (a, b) = z_eta_moments(params, latents, z);
    let psi_inv = linalg::spd_inverse(params.state_cov(), "Psi")?;
    let g0_inv = linalg::spd_inverse(&priors.lambda.gamma0, "Gamma0")?;
    let aq = a.view((0, 0), (q, q)).into_owned();
    let mut prec = &g0_inv + linalg::kron(&aq, &psi_inv);
    linalg::symmetrize(&mut prec);
    // Σ η_t z_{c,t} for column c is row c of B, transposed.
    let cross = &psi_inv * b.rows(0, q).transpose();
    let mut lin = &g0_inv * priors.lambda.stacked_mean(q);
    for c in 0..q {
        for i in 0..p {
            lin[c * p + i] += cross[(i, c)];
        }
    }
    let cov = linalg::spd_inverse(&prec, "lambda precision")?;
    Ok(NormalConditional { mean: &cov * lin, cov })
}

fn require_z<'a>(z: Option<&'a DMatrix<f64>>) -> Result<&'a DMatrix<f64>> {
    z.ok_or_else(|| MrsvError::Config("Lambda update requires a leverage variant".into()))
}

fn set_lambda(state: &mut ChainState, new: DMatrix<f64>) -> Result<()> {
    match &mut state.params.noise {
        VolNoise::Leverage { lambda, .. } => {
            *lambda = new;
            Ok(())
        }
        VolNoise::Omega(_) => Err(MrsvError::Config("Lambda update requires a leverage variant".into())),
    }
}

pub fn sample_lambda_full(state: &mut ChainState, data: &Dataset, priors: &Priors, variant: &ModelVariant) -> Result<()> {
    let z = z_matrix(&state.latents, data, variant)?;
    sample_lambda_full_with(state, data, priors, z.as_ref())
}

pub(crate) fn sample_lambda_full_with(
    state: &mut ChainState,
    _data: &Dataset,
    priors: &Priors,
    z: Option<&DMatrix<f64>>,
) -> Result<()> {
    let c = lambda_full_conditional(&state.params, &state.latents, priors, require_z(z)?)?;
    let p = c.mean.nrows();
    let lp = linalg::cholesky(&c.psi, "Psi")?.l();
    let lg = linalg::cholesky(&c.gamma1, "Gamma1")?.l();
    let e = DMatrix::from_iterator(p, p, linalg::std_normal_vec(p * p, &mut state.rng).iter().cloned());
    let draw = &c.mean + lp * e * lg.transpose();
    set_lambda(state, draw)
}

pub fn sample_lambda_parsimonious(
    state: &mut ChainState,
    data: &Dataset,
    priors: &Priors,
    variant: &ModelVariant,
    q: usize,
) -> Result<()> {
    let z = z_matrix(&state.latents, data, variant)?;
    sample_lambda_pars_with(state, data, priors, q, z.as_ref())
}

pub(crate) fn sample_lambda_pars_with(
    state: &mut ChainState,
    _data: &Dataset,
    priors: &Priors,
    q: usize,
    z: Option<&DMatrix<f64>>,
) -> Result<()> {
    let c = lambda_pars_conditional(&state.params, &state.latents, priors, q, require_z(z)?)?;
    let p = state.params.dim();
    let v = linalg::sample_mvn(&c.mean, &c.cov, &mut state.rng)?;
    let draw = DMatrix::from_fn(p, p, |i, col| if col < q { v[col * p + i] } else { 0.0 });
    set_lambda(state, draw)
}
