#![allow(dead_code)]

pub mod gibbs;
pub mod mh;

use mrsv::corrmat::{PairMask, SqrtKind};
use mrsv::model::{
    self, BetaPrior, Dataset, InvGammaPrior, InvWishartPrior, LatentPaths, Leverage, LambdaPrior, MeanKind,
    ModelParams, ModelVariant, NormalPrior, Priors, VolNoise,
};
use mrsv::simulate::{reference_params, simulate_with_rng, SimConfig};
use mrsv::{rng_from_seed, ChainRng};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub fn variant(p: usize, leverage: Leverage, sqrt_kind: SqrtKind, mean_kind: MeanKind) -> ModelVariant {
    ModelVariant { mean_kind, ..ModelVariant::with_leverage(p, leverage, sqrt_kind) }
}

/// Proper priors away from the defaults so every hyperparameter matters.
pub fn test_priors(variant: &ModelVariant, rng: &mut ChainRng) -> Priors {
    let p = variant.dim();
    let mut pr = Priors::vague(p, variant.leverage);
    pr.mu = NormalPrior { mean: 0.3, var: 2.0 };
    pr.xi = NormalPrior { mean: -0.2, var: 3.0 };
    pr.delta = NormalPrior { mean: 0.1, var: 5.0 };
    pr.sigma2_u = InvGammaPrior { n: 3.0, d: 0.4 };
    pr.sigma2_v = InvGammaPrior { n: 4.0, d: 0.5 };
    pr.sigma2_zeta = InvGammaPrior { n: 5.0, d: 0.02 };
    pr.sigma2_m = InvGammaPrior { n: 6.0, d: 0.01 };
    pr.phi = BetaPrior { a: 20.0, b: 1.5 };
    pr.omega = InvWishartPrior { nu: p as f64 + 4.0, scale: random_spd(p, 0.2, rng) };
    pr.psi = InvWishartPrior { nu: p as f64 + 5.0, scale: random_spd(p, 0.3, rng) };
    pr.const_mean = NormalPrior { mean: 0.05, var: 0.5 };
    pr.kappa = 7.0;
    let q = variant.leverage.n_factors(p);
    let gdim = if variant.leverage == Leverage::Full { p } else { p * q };
    pr.lambda = LambdaPrior {
        mean: DMatrix::from_fn(p, p, |_, c| if c < q { -0.05 + 0.01 * c as f64 } else { 0.0 }),
        gamma0: if gdim == 0 { DMatrix::zeros(0, 0) } else { random_spd(gdim, 0.5, rng) },
    };
    pr
}

pub fn random_spd(n: usize, scale: f64, rng: &mut ChainRng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    (&a * a.transpose() * 0.3 + DMatrix::identity(n, n)) * scale
}

/// Reference parameters jittered per seed.
pub fn random_params(variant: &ModelVariant, rng: &mut ChainRng) -> ModelParams {
    let mut th = reference_params(variant);
    let p = variant.dim();
    for i in 0..p {
        th.phi[i] = rng.random_range(0.6..0.97);
        th.mu[i] = rng.random_range(-0.5..0.8);
        th.xi[i] = rng.random_range(-0.7..-0.2);
        th.sigma2_u[i] *= rng.random_range(0.5..2.0);
    }
    for k in variant.mask.free_indices() {
        th.delta[k] = rng.random_range(-0.4..0.0);
        th.sigma2_v[k] *= rng.random_range(0.5..2.0);
        th.sigma2_zeta[k] *= rng.random_range(0.5..4.0);
    }
    for s in th.sigma2_m.iter_mut() {
        *s *= rng.random_range(0.5..2.0);
    }
    let q = variant.leverage.n_factors(p);
    th.noise = match th.noise {
        VolNoise::Omega(_) => VolNoise::Omega(random_spd(p, 0.1, rng)),
        VolNoise::Leverage { .. } => VolNoise::Leverage {
            psi: random_spd(p, 0.1, rng),
            lambda: DMatrix::from_fn(p, p, |_, c| if c < q { rng.random_range(-0.2..0.1) } else { 0.0 }),
        },
    };
    th
}

pub struct Fixture {
    pub params: ModelParams,
    pub latents: LatentPaths,
    pub data: Dataset,
    pub priors: Priors,
    pub variant: ModelVariant,
}

pub fn fixture(variant: &ModelVariant, t_len: usize, missing: f64, seed: u64) -> Fixture {
    let mut rng = rng_from_seed(seed);
    let params = random_params(variant, &mut rng);
    let priors = test_priors(variant, &mut rng);
    let cfg = SimConfig { t_len, seed, params: params.clone(), variant: variant.clone(), kappa: 7.0, missing_rate: missing };
    let (data, mut latents) = simulate_with_rng(&cfg, &mut rng).expect("simulate");
    if variant.mean_kind == MeanKind::Constant {
        let lvl: Vec<f64> = (0..variant.dim()).map(|_| rng.random_range(-0.05..0.05)).collect();
        for i in 0..variant.dim() {
            latents.m.column_mut(i).fill(lvl[i]);
        }
    } else {
        latents.m.iter_mut().for_each(|v| *v += rng.random_range(-0.05..0.05));
    }
    Fixture { params, latents, data, priors, variant: variant.clone() }
}

pub fn log_joint(params: &ModelParams, latents: &LatentPaths, f: &Fixture) -> f64 {
    model::log_joint_posterior(params, latents, &f.data, &f.priors, &f.variant).expect("log joint")
}

/// Standardized returns for every day as rows, under leverage.
pub fn z_rows(latents: &LatentPaths, data: &Dataset, variant: &ModelVariant) -> Option<DMatrix<f64>> {
    if !variant.has_leverage() {
        return None;
    }
    let (t_len, p) = (data.len(), data.dim());
    let mut z = DMatrix::zeros(t_len, p);
    for t in 0..t_len {
        let zt = model::standardized_return(
            &data.y_row(t),
            &latents.m_row(t),
            &latents.h_row(t),
            &latents.corr(t, &variant.mask),
            variant.sqrt_kind,
        )
        .unwrap();
        z.set_row(t, &zt.transpose());
    }
    Some(z)
}

/// Exact Gaussian moments of a log density that is quadratic in x, read off
/// by central differences (exact for quadratics up to rounding). `scale`
/// sets the step per coordinate.
pub fn quadratic_moments(f: impl Fn(&DVector<f64>) -> f64, x0: &DVector<f64>, scale: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = x0.len();
    let shifted = |pairs: &[(usize, f64)]| {
        let mut x = x0.clone();
        for &(i, d) in pairs {
            x[i] += d;
        }
        f(&x)
    };
    let mut grad = DVector::zeros(n);
    let mut hess = DMatrix::zeros(n, n);
    let f0 = f(x0);
    for i in 0..n {
        let h = scale[i];
        let fp = shifted(&[(i, h)]);
        let fm = shifted(&[(i, -h)]);
        grad[i] = (fp - fm) / (2.0 * h);
        hess[(i, i)] = (fp - 2.0 * f0 + fm) / (h * h);
        for j in 0..i {
            let k = scale[j];
            let v = (shifted(&[(i, h), (j, k)]) - shifted(&[(i, h), (j, -k)]) - shifted(&[(i, -h), (j, k)])
                + shifted(&[(i, -h), (j, -k)]))
                / (4.0 * h * k);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    let prec = -hess;
    let cov = prec.clone().try_inverse().expect("invertible precision");
    let cov = (&cov + cov.transpose()) * 0.5;
    let mean = x0 + &cov * grad;
    (mean, cov)
}

/// Two-pass version: a first pass with unit steps gives the curvature, the
/// second uses one posterior standard deviation per coordinate.
pub fn gaussian_oracle(f: impl Fn(&DVector<f64>) -> f64, x0: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let (m1, c1) = quadratic_moments(&f, x0, &DVector::from_element(x0.len(), 1e-2));
    let sd = DVector::from_fn(x0.len(), |i, _| c1[(i, i)].sqrt());
    quadratic_moments(&f, &m1, &sd)
}

/// (shape, scale) of an inverse-gamma log density c − (a+1) ln s − b/s, from
/// three evaluations.
pub fn inv_gamma_oracle(f: impl Fn(f64) -> f64, s0: f64) -> (f64, f64) {
    let s = [0.5 * s0, s0, 2.0 * s0];
    let a = DMatrix::from_fn(3, 3, |r, c| match c {
        0 => 1.0,
        1 => -s[r].ln(),
        _ => -1.0 / s[r],
    });
    let b = DVector::from_fn(3, |r, _| f(s[r]));
    let sol = a.lu().solve(&b).expect("solvable");
    (sol[1] - 1.0, sol[2])
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Elementwise agreement relative to the largest entry of `want` (at least 1).
pub fn assert_close(got: &DMatrix<f64>, want: &DMatrix<f64>, tol: f64, what: &str) {
    let scale = want.iter().map(|v| v.abs()).fold(1.0, f64::max);
    let d = max_abs_diff(got, want);
    assert!(d <= tol * scale, "{what}: max diff {d:e} (scale {scale})\n got {got}\n want {want}");
}

pub fn assert_close_vec(got: &DVector<f64>, want: &DVector<f64>, tol: f64, what: &str) {
    assert_close(&DMatrix::from_column_slice(got.len(), 1, got.as_slice()), &DMatrix::from_column_slice(want.len(), 1, want.as_slice()), tol, what);
}

pub fn masked(p: usize, fixed: &[(usize, usize)]) -> PairMask {
    PairMask::with_fixed_zero(p, fixed).unwrap()
}
