//! Forward simulation of the generative model.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Beta, StandardNormal};

use crate::corrmat::{self, CorrMatrix, CorrSqrt, DEFAULT_PD_TOL};
use crate::error::{MrsvError, Result};
use crate::io::IntradayGrid;
use crate::linalg;
use crate::model::{
    Dataset, LatentPaths, Leverage, MaskedPanel, MeanKind, ModelParams, ModelVariant, Priors, VolNoise,
};
use crate::samplers::dists;
use crate::{rng_from_seed, ChainRng};

/// Draws per step size before the correlation step is halved.
const ZETA_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub t_len: usize,
    pub seed: u64,
    pub params: ModelParams,
    pub variant: ModelVariant,
    /// Scale of the initial variances of g and m.
    pub kappa: f64,
    /// Probability that a realized-measure cell is blanked.
    pub missing_rate: f64,
}

impl SimConfig {
    pub fn new(t_len: usize, seed: u64, params: ModelParams, variant: ModelVariant) -> Self {
        Self { t_len, seed, params, variant, kappa: 100.0, missing_rate: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_len == 0 {
            return Err(MrsvError::Config("T must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return Err(MrsvError::Config("missing_rate must lie in [0, 1)".into()));
        }
        if !(self.kappa > 0.0) {
            return Err(MrsvError::Config("kappa must be positive".into()));
        }
        self.variant.validate()?;
        self.params.validate(&self.variant)
    }
}

/// Ground truth on the scale of typical daily equity data: φ = 0.9,
/// σ_u = σ_v = 0.3, ξ = −0.5, δ = −0.3, σ_ζ = 0.05, transition covariance
/// 0.1 on the diagonal with correlation 0.5, and leverage loadings −0.06.
pub fn reference_params(variant: &ModelVariant) -> ModelParams {
    let p = variant.dim();
    let np = corrmat::n_pairs(p);
    let q_cov = DMatrix::from_fn(p, p, |i, j| if i == j { 0.1 } else { 0.05 });
    let noise = match variant.leverage {
        Leverage::None => VolNoise::Omega(q_cov),
        Leverage::Full => VolNoise::Leverage { psi: q_cov, lambda: DMatrix::from_diagonal_element(p, p, -0.06) },
        Leverage::Parsimonious(q) => VolNoise::Leverage {
            psi: q_cov,
            lambda: DMatrix::from_fn(p, p, |_, c| if c < q { -0.06 } else { 0.0 }),
        },
    };
    let free = |v: f64| DVector::from_fn(np, |k, _| if variant.mask.is_free(k) { v } else { 0.0 });
    ModelParams {
        phi: DVector::from_element(p, 0.9),
        mu: DVector::from_element(p, 0.5),
        xi: DVector::from_element(p, -0.5),
        delta: free(-0.3),
        sigma2_u: DVector::from_element(p, 0.09),
        sigma2_v: free(0.09),
        sigma2_zeta: free(0.0025),
        sigma2_m: match variant.mean_kind {
            MeanKind::RandomWalk => DVector::from_element(p, 1e-4),
            MeanKind::Constant => DVector::zeros(0),
        },
        noise,
    }
}

/// Simulates latent paths and data. Deterministic for a given seed.
pub fn simulate_dataset(cfg: &SimConfig) -> Result<(Dataset, LatentPaths)> {
    let mut rng = rng_from_seed(cfg.seed);
    simulate_with_rng(cfg, &mut rng)
}

pub fn simulate_with_rng(cfg: &SimConfig, rng: &mut ChainRng) -> Result<(Dataset, LatentPaths)> {
    cfg.validate()?;
    let (params, variant) = (&cfg.params, &cfg.variant);
    let (t_len, p) = (cfg.t_len, variant.dim());
    let np = corrmat::n_pairs(p);
    let q_cov = params.state_cov().clone();
    let lambda = params.lambda().cloned();

    let mut h = DMatrix::zeros(t_len, p);
    let mut g = DMatrix::zeros(t_len, np);
    let mut m = DMatrix::zeros(t_len, p);
    let mut y = DMatrix::zeros(t_len, p);

    let h0 = linalg::sample_mvn(&params.mu, &params.omega0()?, rng)?;
    h.set_row(0, &h0.transpose());
    let mut r = CorrMatrix::identity(p);
    let mut g_prev = vec![0.0; np];
    let mut m_prev = DVector::zeros(p);
    for t in 0..t_len {
        let scale = if t == 0 { cfg.kappa } else { 1.0 };
        let g_row = step_correlations(&mut r, &g_prev, &params.sigma2_zeta, scale, variant, rng)?;
        for (k, v) in g_row.iter().enumerate() {
            g[(t, k)] = *v;
        }
        g_prev = g_row;
        if variant.mean_kind == MeanKind::RandomWalk {
            for i in 0..p {
                let sd = (scale * params.sigma2_m[i]).sqrt();
                m_prev[i] += sd * rng.sample::<f64, _>(StandardNormal);
            }
        }
        m.set_row(t, &m_prev.transpose());

        let ht = h.row(t).transpose();
        let sq = CorrSqrt::new(&r, variant.sqrt_kind).map_err(|_| MrsvError::NonPdAt { t })?;
        let z = linalg::std_normal_vec(p, rng);
        let d = ht.map(|v| (0.5 * v).exp());
        let yt = &m_prev + (&sq.s * &z).component_mul(&d);
        y.set_row(t, &yt.transpose());

        if t + 1 < t_len {
            let mut mean = &params.mu + params.phi.component_mul(&(&ht - &params.mu));
            if let Some(l) = &lambda {
                mean += l * &z;
            }
            let next = linalg::sample_mvn(&mean, &q_cov, rng)?;
            h.set_row(t + 1, &next.transpose());
        }
    }

    let latents = LatentPaths { h, g, m };
    let (x, w) = draw_measurements(params, &latents, variant, cfg.missing_rate, rng);
    let names = (1..=p).map(|i| format!("asset{i}")).collect();
    Ok((Dataset::new(y, x, w, names)?, latents))
}

/// One day of the correlation random walk. Starting from yesterday's matrix
/// `r`, each free pair in canonical order takes a Gaussian step that keeps the
/// matrix PD given the entries already placed; rejected steps are redrawn and
/// the step size is halved after every `ZETA_ATTEMPTS` failures.
fn step_correlations(
    r: &mut CorrMatrix,
    g_prev: &[f64],
    sigma2_zeta: &DVector<f64>,
    scale: f64,
    variant: &ModelVariant,
    rng: &mut ChainRng,
) -> Result<Vec<f64>> {
    let p = variant.dim();
    let mut out = vec![0.0; g_prev.len()];
    for (k, (i, j)) in corrmat::pairs(p).enumerate() {
        if !variant.mask.is_free(k) {
            continue;
        }
        let (b, a) = corrmat::entry_bounds_with_curvature(r, i, j)?;
        let mut sd = (scale * sigma2_zeta[k]).sqrt();
        let g_new = 'found: loop {
            for _ in 0..ZETA_ATTEMPTS {
                let cand = g_prev[k] + sd * rng.sample::<f64, _>(StandardNormal);
                let rho = corrmat::inverse_fisher(cand);
                if rho > b.lower && rho < b.upper && a * (rho - b.lower) * (b.upper - rho) > DEFAULT_PD_TOL {
                    break 'found cand;
                }
            }
            sd *= 0.5;
            if sd < 1e-300 {
                return Err(MrsvError::Numerical(format!("correlation step for pair {k} cannot stay PD")));
            }
        };
        r.set(i, j, corrmat::inverse_fisher(g_new));
        out[k] = g_new;
    }
    Ok(out)
}

fn draw_measurements<R: Rng + ?Sized>(
    params: &ModelParams,
    latents: &LatentPaths,
    variant: &ModelVariant,
    missing_rate: f64,
    rng: &mut R,
) -> (MaskedPanel, MaskedPanel) {
    let t_len = latents.len();
    let p = variant.dim();
    let np = corrmat::n_pairs(p);
    let mut x = MaskedPanel::empty(t_len, p);
    let mut w = MaskedPanel::empty(t_len, np);
    for t in 0..t_len {
        for i in 0..p {
            let v = params.xi[i] + latents.h[(t, i)] + params.sigma2_u[i].sqrt() * rng.sample::<f64, _>(StandardNormal);
            let keep = missing_rate == 0.0 || rng.random::<f64>() >= missing_rate;
            x.set(t, i, keep.then_some(v));
        }
        for k in variant.mask.free_indices() {
            let v = params.delta[k] + latents.g[(t, k)] + params.sigma2_v[k].sqrt() * rng.sample::<f64, _>(StandardNormal);
            let keep = missing_rate == 0.0 || rng.random::<f64>() >= missing_rate;
            w.set(t, k, keep.then_some(v));
        }
    }
    (x, w)
}

/// Draws (y, x, w) given parameters and latent paths, with x and w fully
/// observed. Under leverage y_t is drawn given h_{t+1}:
/// z_t | η_t ~ N(Λ'(Ψ + ΛΛ')⁻¹η_t, (I + Λ'Ψ⁻¹Λ)⁻¹) for t < T, z_T ~ N(0, I).
pub fn draw_observations<R: Rng + ?Sized>(
    params: &ModelParams,
    latents: &LatentPaths,
    variant: &ModelVariant,
    rng: &mut R,
) -> Result<Dataset> {
    let t_len = latents.len();
    let p = variant.dim();
    let lev = match params.lambda() {
        Some(l) => {
            let psi = params.state_cov();
            let shrink = l.transpose() * linalg::spd_inverse(&(psi + l * l.transpose()), "Psi + Lambda Lambda'")?;
            let psi_inv = linalg::spd_inverse(psi, "Psi")?;
            let c = linalg::spd_inverse(&(DMatrix::identity(p, p) + l.transpose() * psi_inv * l), "z covariance")?;
            Some((shrink, c))
        }
        None => None,
    };
    let mut y = DMatrix::zeros(t_len, p);
    for t in 0..t_len {
        let h = latents.h_row(t);
        let r = latents.corr(t, &variant.mask);
        let sq = CorrSqrt::new(&r, variant.sqrt_kind).map_err(|_| MrsvError::NonPdAt { t })?;
        let z = match &lev {
            Some((shrink, c)) if t + 1 < t_len => {
                let eta = latents.h_row(t + 1) - &params.mu - params.phi.component_mul(&(&h - &params.mu));
                linalg::sample_mvn(&(shrink * eta), c, rng)?
            }
            _ => linalg::std_normal_vec(p, rng),
        };
        let d = h.map(|v| (0.5 * v).exp());
        let yt = latents.m_row(t) + (&sq.s * z).component_mul(&d);
        y.set_row(t, &yt.transpose());
    }
    let (x, w) = draw_measurements(params, latents, variant, 0.0, rng);
    Dataset::new(y, x, w, (1..=p).map(|i| format!("asset{i}")).collect())
}

/// Draws θ from the prior. Fixed-zero pairs get δ = 0 and unit variances.
pub fn draw_from_prior<R: Rng + ?Sized>(priors: &Priors, variant: &ModelVariant, rng: &mut R) -> Result<ModelParams> {
    let p = variant.dim();
    let np = corrmat::n_pairs(p);
    let normal = |mean: f64, var: f64, rng: &mut R| mean + var.sqrt() * rng.sample::<f64, _>(StandardNormal);
    let beta = Beta::new(priors.phi.a, priors.phi.b).map_err(|e| MrsvError::Config(e.to_string()))?;
    let phi = DVector::from_fn(p, |_, _| 2.0 * rng.sample(beta) - 1.0);
    let mu = DVector::from_fn(p, |_, _| normal(priors.mu.mean, priors.mu.var, rng));
    let xi = DVector::from_fn(p, |_, _| normal(priors.xi.mean, priors.xi.var, rng));
    let ig = |pr: crate::model::InvGammaPrior, rng: &mut R| dists::sample_inverse_gamma(0.5 * pr.n, 0.5 * pr.d, rng);
    let mut sigma2_u = DVector::zeros(p);
    for i in 0..p {
        sigma2_u[i] = ig(priors.sigma2_u, rng)?;
    }
    let mut delta = DVector::zeros(np);
    let mut sigma2_v = DVector::from_element(np, 1.0);
    let mut sigma2_zeta = DVector::from_element(np, 1.0);
    for k in variant.mask.free_indices() {
        delta[k] = normal(priors.delta.mean, priors.delta.var, rng);
        sigma2_v[k] = ig(priors.sigma2_v, rng)?;
        sigma2_zeta[k] = ig(priors.sigma2_zeta, rng)?;
    }
    let n_m = if variant.mean_kind == MeanKind::RandomWalk { p } else { 0 };
    let mut sigma2_m = DVector::zeros(n_m);
    for i in 0..n_m {
        sigma2_m[i] = ig(priors.sigma2_m, rng)?;
    }
    let noise = match variant.leverage {
        Leverage::None => VolNoise::Omega(dists::sample_inverse_wishart(priors.omega.nu, &priors.omega.scale, rng)?),
        lev => {
            let psi = dists::sample_inverse_wishart(priors.psi.nu, &priors.psi.scale, rng)?;
            let lambda = match lev {
                Leverage::Full => {
                    let lp = linalg::cholesky(&psi, "Psi")?.l();
                    let lg = linalg::cholesky(&priors.lambda.gamma0, "Gamma0")?.l();
                    let e = DMatrix::from_fn(p, p, |_, _| rng.sample::<f64, _>(StandardNormal));
                    &priors.lambda.mean + lp * e * lg.transpose()
                }
                Leverage::Parsimonious(q) => {
                    let v = linalg::sample_mvn(&priors.lambda.stacked_mean(q), &priors.lambda.gamma0, rng)?;
                    DMatrix::from_fn(p, p, |i, c| if c < q { v[c * p + i] } else { 0.0 })
                }
                Leverage::None => unreachable!(),
            };
            VolNoise::Leverage { psi, lambda }
        }
    };
    Ok(ModelParams { phi, mu, xi, delta, sigma2_u, sigma2_v, sigma2_zeta, sigma2_m, noise })
}

/// Draws latent paths given θ from their prior law (no data), keeping every
/// R_t PD. Under leverage the h transitions use freshly drawn z_t, so the
/// marginal law of h matches the model.
pub fn draw_latents_from_prior(
    params: &ModelParams,
    variant: &ModelVariant,
    t_len: usize,
    kappa: f64,
    const_mean: Option<(f64, f64)>,
    rng: &mut ChainRng,
) -> Result<LatentPaths> {
    let cfg = SimConfig { t_len, seed: 0, params: params.clone(), variant: variant.clone(), kappa, missing_rate: 0.0 };
    let (_, mut latents) = simulate_with_rng(&cfg, rng)?;
    if let (MeanKind::Constant, Some((mean, var))) = (variant.mean_kind, const_mean) {
        for i in 0..variant.dim() {
            let v = mean + var.sqrt() * rng.sample::<f64, _>(StandardNormal);
            latents.m.column_mut(i).fill(v);
        }
    }
    Ok(latents)
}

/// Intraday returns whose bins sum to a day with covariance V_t^{1/2} R_t
/// V_t^{1/2}: each bin is N(0, Σ_t / bins). With one bin the draw is the
/// daily return itself.
pub fn simulate_intraday(
    h: &DMatrix<f64>,
    g: &DMatrix<f64>,
    variant: &ModelVariant,
    bins: usize,
    seed: u64,
) -> Result<IntradayGrid> {
    if bins == 0 {
        return Err(MrsvError::Config("bins_per_day must be at least 1".into()));
    }
    let (t_len, p) = (h.nrows(), h.ncols());
    if g.nrows() != t_len || g.ncols() != corrmat::n_pairs(p) || variant.dim() != p {
        return Err(MrsvError::Dimension("volatility and correlation paths do not match".into()));
    }
    let mut rng = rng_from_seed(seed);
    let mut grid = IntradayGrid::new(t_len, bins, p);
    let scale = (1.0 / bins as f64).sqrt();
    for t in 0..t_len {
        let g_row: Vec<f64> = g.row(t).iter().copied().collect();
        let r = CorrMatrix::from_fisher_slice(&g_row, &variant.mask);
        let l = corrmat::sqrt_cholesky(&r).map_err(|_| MrsvError::NonPdAt { t })?;
        for b in 0..bins {
            let z = &l * linalg::std_normal_vec(p, &mut rng);
            for i in 0..p {
                grid.set(t, b, i, Some(scale * (0.5 * h[(t, i)]).exp() * z[i]));
            }
        }
    }
    Ok(grid)
}
