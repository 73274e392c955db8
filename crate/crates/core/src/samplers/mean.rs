//! Mean-path block: forward filtering, backward sampling.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::ChainState;
use crate::corrmat;
use crate::error::{MrsvError, Result};
use crate::linalg;
use crate::model::{Dataset, LatentPaths, MeanKind, ModelParams, ModelVariant, Priors};

#[derive(Debug, Clone)]
enum PlanKind {
    /// Filtered moments (f_t, F_t) and backward gains J_t with the
    /// conditional covariance F_t − J_t F_t of m_t given m_{t+1}.
    RandomWalk {
        filt_mean: Vec<DVector<f64>>,
        filt_cov: Vec<DMatrix<f64>>,
        gain: Vec<DMatrix<f64>>,
        back_cov: Vec<DMatrix<f64>>,
    },
    Constant {
        mean: DVector<f64>,
        cov: DMatrix<f64>,
    },
}

/// The exact Gaussian conditional of the whole mean path given everything
/// else, in a form that can be sampled or turned into explicit moments.
#[derive(Debug, Clone)]
pub struct SmootherPlan {
    /// Observation ŷ_t = m_t + ε_t, ε_t ~ N(0, Γ_t).
    pub y_hat: Vec<DVector<f64>>,
    pub gamma: Vec<DMatrix<f64>>,
    kind: PlanKind,
}

/// Observation inputs (ŷ_t, Γ_t). Without leverage, or on the last day,
/// ŷ_t = y_t and Γ_t = V^{1/2} R V^{1/2}. With leverage the transition to
/// h_{t+1} is informative about z_t: z_t | η_t ~ N(Λ'(Ψ + ΛΛ')⁻¹η_t,
/// (I + Λ'Ψ⁻¹Λ)⁻¹), which maps back through y_t − m_t = V^{1/2} S z_t.
fn observations(
    params: &ModelParams,
    latents: &LatentPaths,
    data: &Dataset,
    variant: &ModelVariant,
) -> Result<(Vec<DVector<f64>>, Vec<DMatrix<f64>>)> {
    let t_len = data.len();
    let p = data.dim();
    let lev = match (params.lambda(), variant.has_leverage()) {
        (Some(l), true) => {
            let psi = params.state_cov();
            let b = linalg::spd_inverse(&(psi + l * l.transpose()), "Psi + Lambda Lambda'")?;
            let shrink = l.transpose() * b;
            let psi_inv = linalg::spd_inverse(psi, "Psi")?;
            let c = linalg::spd_inverse(&(DMatrix::identity(p, p) + l.transpose() * psi_inv * l), "I + Lambda' Psi^-1 Lambda")?;
            Some((shrink, c))
        }
        _ => None,
    };
    let mut y_hat = Vec::with_capacity(t_len);
    let mut gamma = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let h = latents.h_row(t);
        let d = DVector::from_fn(p, |i, _| (0.5 * h[i]).exp());
        let r = latents.corr(t, &variant.mask);
        let y = data.y_row(t);
        match &lev {
            Some((shrink, c)) if t + 1 < t_len => {
                let s = corrmat::sqrt_of(&r, variant.sqrt_kind).map_err(|_| MrsvError::NonPdAt { t })?;
                let eta = latents.h_row(t + 1) - &params.mu - params.phi.component_mul(&(&h - &params.mu));
                let ds = DMatrix::from_fn(p, p, |i, j| d[i] * s[(i, j)]);
                y_hat.push(&y - &ds * (shrink * eta));
                let mut g = &ds * c * ds.transpose();
                linalg::symmetrize(&mut g);
                gamma.push(g);
            }
            _ => {
                y_hat.push(y);
                let rm = r.as_matrix();
                gamma.push(DMatrix::from_fn(p, p, |i, j| d[i] * rm[(i, j)] * d[j]));
            }
        }
    }
    Ok((y_hat, gamma))
}

/// Builds the conditional of m_{1:T} for the current state.
pub fn m_smoother_plan(
    params: &ModelParams,
    latents: &LatentPaths,
    data: &Dataset,
    priors: &Priors,
    variant: &ModelVariant,
) -> Result<SmootherPlan> {
    let (y_hat, gamma) = observations(params, latents, data, variant)?;
    let p = data.dim();
    let kind = match variant.mean_kind {
        MeanKind::Constant => {
            let s2 = priors.const_mean.var;
            let mut prec = DMatrix::identity(p, p) / s2;
            let mut lin = DVector::from_element(p, priors.const_mean.mean / s2);
            for (yh, g) in y_hat.iter().zip(&gamma) {
                let c = linalg::cholesky(g, "Gamma_t")?;
                prec += c.inverse();
                lin += c.solve(yh);
            }
            linalg::symmetrize(&mut prec);
            let cov = linalg::spd_inverse(&prec, "constant-mean precision")?;
            PlanKind::Constant { mean: &cov * lin, cov }
        }
        MeanKind::RandomWalk => {
            let sm = DMatrix::from_diagonal(&params.sigma2_m);
            let mut a = DVector::zeros(p);
            let mut pc = &sm * priors.kappa;
            let mut filt_mean = Vec::with_capacity(y_hat.len());
            let mut filt_cov = Vec::with_capacity(y_hat.len());
            for (yh, g) in y_hat.iter().zip(&gamma) {
                let s = linalg::cholesky(&(&pc + g), "innovation covariance")?;
                // K = P S⁻¹, computed as (S⁻¹ P)' since both are symmetric
                let k = s.solve(&pc).transpose();
                let f = &a + &k * (yh - &a);
                let mut fc = &pc - &k * &pc;
                linalg::symmetrize(&mut fc);
                a = f.clone();
                pc = &fc + &sm;
                filt_mean.push(f);
                filt_cov.push(fc);
            }
            let mut gain = Vec::with_capacity(y_hat.len());
            let mut back_cov = Vec::with_capacity(y_hat.len());
            for fc in &filt_cov {
                let c = linalg::cholesky(&(fc + &sm), "smoother covariance")?;
                let j = c.solve(fc).transpose();
                let mut bc = fc - &j * fc;
                linalg::symmetrize(&mut bc);
                gain.push(j);
                back_cov.push(bc);
            }
            PlanKind::RandomWalk { filt_mean, filt_cov, gain, back_cov }
        }
    };
    Ok(SmootherPlan { y_hat, gamma, kind })
}

impl SmootherPlan {
    pub fn len(&self) -> usize {
        self.y_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_hat.is_empty()
    }

    /// Mean and covariance of vec(m_{1:T}') (day-major) implied by the
    /// backward recursion.
    pub fn joint_moments(&self) -> (DVector<f64>, DMatrix<f64>) {
        let t_len = self.len();
        let p = self.y_hat.first().map_or(0, |v| v.len());
        let n = t_len * p;
        let mut mean = DVector::zeros(n);
        let mut cov = DMatrix::zeros(n, n);
        match &self.kind {
            PlanKind::Constant { mean: m, cov: c } => {
                for t in 0..t_len {
                    mean.rows_mut(t * p, p).copy_from(m);
                    for s in 0..t_len {
                        cov.view_mut((t * p, s * p), (p, p)).copy_from(c);
                    }
                }
            }
            PlanKind::RandomWalk { filt_mean, filt_cov, gain, back_cov } => {
                let last = t_len - 1;
                mean.rows_mut(last * p, p).copy_from(&filt_mean[last]);
                cov.view_mut((last * p, last * p), (p, p)).copy_from(&filt_cov[last]);
                for t in (0..last).rev() {
                    let j = &gain[t];
                    let next_mean = mean.rows(t * p + p, p).into_owned();
                    let mt = &filt_mean[t] + j * (next_mean - &filt_mean[t]);
                    mean.rows_mut(t * p, p).copy_from(&mt);
                    for s in t + 1..t_len {
                        let c = j * cov.view(((t + 1) * p, s * p), (p, p));
                        cov.view_mut((t * p, s * p), (p, p)).copy_from(&c);
                        cov.view_mut((s * p, t * p), (p, p)).copy_from(&c.transpose());
                    }
                    let next = cov.view(((t + 1) * p, (t + 1) * p), (p, p)).into_owned();
                    let mut ctt = j * next * j.transpose() + &back_cov[t];
                    linalg::symmetrize(&mut ctt);
                    cov.view_mut((t * p, t * p), (p, p)).copy_from(&ctt);
                }
            }
        }
        (mean, cov)
    }

    /// One draw of the path as a T×p matrix.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DMatrix<f64>> {
        let t_len = self.len();
        let p = self.y_hat.first().map_or(0, |v| v.len());
        let mut out = DMatrix::zeros(t_len, p);
        match &self.kind {
            PlanKind::Constant { mean, cov } => {
                let m = linalg::sample_mvn(mean, cov, rng)?;
                for t in 0..t_len {
                    out.set_row(t, &m.transpose());
                }
            }
            PlanKind::RandomWalk { filt_mean, filt_cov, gain, back_cov } => {
                let last = t_len - 1;
                let mut next = linalg::sample_mvn(&filt_mean[last], &filt_cov[last], rng)?;
                out.set_row(last, &next.transpose());
                for t in (0..last).rev() {
                    let mean = &filt_mean[t] + &gain[t] * (&next - &filt_mean[t]);
                    next = sample_mvn_psd(&mean, &back_cov[t], rng)?;
                    out.set_row(t, &next.transpose());
                }
            }
        }
        Ok(out)
    }
}

/// Like `sample_mvn`, tolerating a covariance that is PD only up to
/// round-off, which happens when Σ_m is tiny relative to F_t.
fn sample_mvn_psd<R: Rng + ?Sized>(mean: &DVector<f64>, cov: &DMatrix<f64>, rng: &mut R) -> Result<DVector<f64>> {
    match nalgebra::Cholesky::new(cov.clone()) {
        Some(c) => Ok(mean + c.l() * linalg::std_normal_vec(mean.len(), rng)),
        None => {
            let eig = nalgebra::SymmetricEigen::new(cov.clone());
            let eps = linalg::std_normal_vec(mean.len(), rng);
            let scaled = DVector::from_fn(mean.len(), |i, _| eig.eigenvalues[i].max(0.0).sqrt() * eps[i]);
            Ok(mean + eig.eigenvectors * scaled)
        }
    }
}

pub fn sample_m_block(state: &mut ChainState, data: &Dataset, priors: &Priors, variant: &ModelVariant) -> Result<()> {
    let plan = m_smoother_plan(&state.params, &state.latents, data, priors, variant)?;
    state.latents.m = plan.draw(&mut state.rng)?;
    Ok(())
}
