//! Distributional and algebraic checks of the individual sampler blocks.

mod common;

use common::*;
use mrsv::corrmat::{self, SqrtKind};
use mrsv::model::{self, Dataset, LatentPaths, Leverage, MeanKind, MaskedPanel, ModelParams, Priors, VolNoise};
use mrsv::samplers::{
    self, g_log_ratio, h_log_l, lambda_full_conditional, lambda_pars_conditional, m_smoother_plan, mu_conditional,
    omega_proposal, psi_proposal, run_mcmc, sample_g_block, sample_h_block, sample_lambda_full, sample_omega,
    sample_phi, sample_variances, variance_conditionals, xi_conditional, ChainState, McmcConfig,
};
use mrsv::{linalg, rng_from_seed};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

/// 1% critical value of the one-sample Kolmogorov-Smirnov statistic.
fn ks_critical(n: usize) -> f64 {
    1.628 / (n as f64).sqrt()
}

/// KS distance between a sample and the distribution with unnormalized log
/// density `logf` tabulated on a uniform grid.
fn ks_against_grid(sample: &mut [f64], grid: &[f64], logf: &[f64]) -> f64 {
    let top = logf.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let dens: Vec<f64> = logf.iter().map(|l| (l - top).exp()).collect();
    let mut cdf = vec![0.0; grid.len()];
    for k in 1..grid.len() {
        cdf[k] = cdf[k - 1] + 0.5 * (dens[k] + dens[k - 1]) * (grid[k] - grid[k - 1]);
    }
    let total = cdf[grid.len() - 1];
    let eval = |x: f64| {
        if x <= grid[0] {
            return 0.0;
        }
        let k = grid.partition_point(|g| *g < x).min(grid.len() - 1);
        let frac = (x - grid[k - 1]) / (grid[k] - grid[k - 1]);
        (cdf[k - 1] + frac * (cdf[k] - cdf[k - 1])) / total
    };
    sample.sort_by(f64::total_cmp);
    let n = sample.len() as f64;
    sample
        .iter()
        .enumerate()
        .map(|(k, &x)| {
            let f = eval(x);
            (f - k as f64 / n).abs().max(((k + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

#[test]
fn g_block_matches_grid_conditional_for_two_assets() {
    let v = variant(2, Leverage::None, SqrtKind::Spectral, MeanKind::RandomWalk);
    let mut f = fixture(&v, 1, 0.0, 11);
    f.params.sigma2_zeta[0] = 0.5;
    f.params.sigma2_v[0] = 0.3;
    f.data.y[(0, 0)] = 1.1;
    f.data.y[(0, 1)] = -0.8;
    let mut st = ChainState::new(f.params.clone(), f.latents.clone(), 3);
    let mut draws = Vec::new();
    for s in 0..40_000 {
        sample_g_block(&mut st, &f.data, &f.priors, &f.variant).unwrap();
        if s % 8 == 0 {
            draws.push(st.latents.g[(0, 0)]);
        }
    }
    let grid = linspace(-8.0, 8.0, 8001);
    let logf: Vec<f64> = grid
        .iter()
        .map(|&g| {
            let mut lat = f.latents.clone();
            lat.g[(0, 0)] = g;
            log_joint(&f.params, &lat, &f)
        })
        .collect();
    let d = ks_against_grid(&mut draws, &grid, &logf);
    assert!(d < ks_critical(draws.len()), "KS {d}");
}

#[test]
fn h_block_matches_grid_conditional_with_independent_assets() {
    // R = I and diagonal Ω make the coordinates independent, so asset 0's
    // pair (h_00, h_10) is a univariate-SV conditional at T = 2.
    let v = variant(2, Leverage::None, SqrtKind::Spectral, MeanKind::RandomWalk);
    let mut f = fixture(&v, 2, 0.0, 12);
    f.params.noise = VolNoise::Omega(DMatrix::from_diagonal(&DVector::from_vec(vec![0.3, 0.2])));
    f.latents.g.fill(0.0);
    f.data.y[(0, 0)] = 2.0;
    f.data.y[(1, 0)] = -0.3;
    f.data.x.set(1, 0, None);
    let mut st = ChainState::new(f.params.clone(), f.latents.clone(), 4);
    let mut draws = Vec::new();
    for s in 0..60_000 {
        sample_h_block(&mut st, &f.data, &f.priors, &f.variant).unwrap();
        if s % 6 == 0 {
            draws.push(st.latents.h[(0, 0)]);
        }
    }
    let (lo, hi) = (-6.0, 6.0);
    let g0 = linspace(lo, hi, 601);
    let g1 = linspace(lo, hi, 601);
    let step = g1[1] - g1[0];
    let marg: Vec<f64> = g0
        .iter()
        .map(|&a| {
            let vals: Vec<f64> = g1
                .iter()
                .map(|&b| {
                    let mut lat = f.latents.clone();
                    lat.h[(0, 0)] = a;
                    lat.h[(1, 0)] = b;
                    log_joint(&f.params, &lat, &f)
                })
                .collect();
            let top = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            top + (vals.iter().map(|v| (v - top).exp()).sum::<f64>() * step).ln()
        })
        .collect();
    let d = ks_against_grid(&mut draws, &g0, &marg);
    assert!(d < ks_critical(draws.len()), "KS {d}");
}

#[test]
fn smoother_draws_match_their_joint_moments() {
    for lev in [Leverage::None, Leverage::Full] {
        let v = variant(2, lev, SqrtKind::Spectral, MeanKind::RandomWalk);
        let mut f = fixture(&v, 3, 0.0, 13);
        f.params.sigma2_m.fill(0.05);
        let plan = m_smoother_plan(&f.params, &f.latents, &f.data, &f.priors, &f.variant).unwrap();
        let (mean, cov) = plan.joint_moments();
        let n = 100_000;
        let mut rng = rng_from_seed(5);
        let d = mean.len();
        let mut s1 = DVector::zeros(d);
        let mut s2 = DMatrix::zeros(d, d);
        for _ in 0..n {
            let m = plan.draw(&mut rng).unwrap();
            let x = DVector::from_fn(d, |k, _| m[(k / 2, k % 2)]);
            s1 += &x;
            s2 += &x * x.transpose();
        }
        let nf = n as f64;
        let em = s1 / nf;
        let ec = s2 / nf - &em * em.transpose();
        for a in 0..d {
            let se = (cov[(a, a)] / nf).sqrt();
            assert!((em[a] - mean[a]).abs() < 3.0 * se, "mean {a}: {} vs {}", em[a], mean[a]);
            for b in 0..=a {
                let se = ((cov[(a, a)] * cov[(b, b)] + cov[(a, b)].powi(2)) / nf).sqrt();
                assert!((ec[(a, b)] - cov[(a, b)]).abs() < 3.0 * se, "cov {a},{b}: {} vs {}", ec[(a, b)], cov[(a, b)]);
            }
        }
    }
}

fn ar_fixture(t_len: usize, phi: f64, seed: u64) -> (ModelParams, LatentPaths, Dataset, Priors) {
    let v = variant(2, Leverage::None, SqrtKind::Spectral, MeanKind::RandomWalk);
    let mut f = fixture(&v, 2, 0.0, seed);
    let mut rng = rng_from_seed(seed);
    f.params.phi = DVector::from_element(2, phi);
    f.params.noise = VolNoise::Omega(DMatrix::from_diagonal_element(2, 2, 0.1));
    let mut h = DMatrix::zeros(t_len, 2);
    for i in 0..2 {
        let mu = f.params.mu[i];
        h[(0, i)] = mu + (0.1 / (1.0 - phi * phi)).sqrt() * rng.sample::<f64, _>(StandardNormal);
        for t in 1..t_len {
            h[(t, i)] = mu + phi * (h[(t - 1, i)] - mu) + 0.1f64.sqrt() * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let lat = LatentPaths { h, g: DMatrix::zeros(t_len, 1), m: DMatrix::zeros(t_len, 2) };
    let data = Dataset::new(DMatrix::zeros(t_len, 2), MaskedPanel::empty(t_len, 2), MaskedPanel::empty(t_len, 1), vec!["a".into(), "b".into()]).unwrap();
    let mut pr = Priors::vague(2, Leverage::None);
    pr.phi = model::BetaPrior { a: 1.0, b: 1.0 };
    (f.params, lat, data, pr)
}

fn phi_posterior_mean(params: &ModelParams, lat: &LatentPaths, data: &Dataset, pr: &Priors, n: usize) -> DVector<f64> {
    let v = mrsv::model::ModelVariant::no_leverage(2);
    let mut st = ChainState::new(params.clone(), lat.clone(), 8);
    let mut sum = DVector::zeros(2);
    for _ in 0..n {
        sample_phi(&mut st, data, pr, &v).unwrap();
        sum += &st.params.phi;
    }
    sum / n as f64
}

#[test]
fn phi_posterior_mean_approaches_least_squares() {
    let (params, lat, data, pr) = ar_fixture(10_000, 0.9, 21);
    let post = phi_posterior_mean(&params, &lat, &data, &pr, 2000);
    for i in 0..2 {
        let mu = params.mu[i];
        let (mut num, mut den) = (0.0, 0.0);
        for t in 0..lat.h.nrows() - 1 {
            num += (lat.h[(t, i)] - mu) * (lat.h[(t + 1, i)] - mu);
            den += (lat.h[(t, i)] - mu).powi(2);
        }
        assert!((post[i] - num / den).abs() < 0.01, "{} vs {}", post[i], num / den);
    }
}

#[test]
fn informative_phi_prior_tilts_upward() {
    let (params, lat, data, flat) = ar_fixture(40, 0.7, 22);
    let mut tilted = flat.clone();
    tilted.phi = model::BetaPrior { a: 20.0, b: 1.5 };
    let a = phi_posterior_mean(&params, &lat, &data, &flat, 4000);
    let b = phi_posterior_mean(&params, &lat, &data, &tilted, 4000);
    assert!(b[0] > a[0] && b[1] > a[1], "{a} vs {b}");
}

#[test]
fn flat_volatility_falls_back_to_box_uniform_phi_proposals() {
    // Asset 2 sits at its mean every day, so the transition precision is
    // singular. Its φ conditional is then the initial density alone,
    // ∝ √(1 − φ²) on (−1, 1), with E[φ²] = 1/4; asset 1 still follows the
    // least-squares value.
    let (params, mut lat, data, pr) = ar_fixture(500, 0.9, 23);
    lat.h.column_mut(1).fill(params.mu[1]);
    let v = mrsv::model::ModelVariant::no_leverage(2);
    let mut st = ChainState::new(params.clone(), lat.clone(), 9);
    let n = 20_000;
    let (mut m1, mut sq) = (0.0, Vec::with_capacity(n));
    for _ in 0..n {
        sample_phi(&mut st, &data, &pr, &v).unwrap();
        m1 += st.params.phi[0];
        sq.push(st.params.phi[1] * st.params.phi[1]);
    }
    assert_eq!(st.stats.phi_fallback, n as u64);
    let mu = params.mu[0];
    let (mut num, mut den) = (0.0, 0.0);
    for t in 0..499 {
        num += (lat.h[(t, 0)] - mu) * (lat.h[(t + 1, 0)] - mu);
        den += (lat.h[(t, 0)] - mu).powi(2);
    }
    assert!((m1 / n as f64 - num / den).abs() < 0.02, "{} vs {}", m1 / n as f64, num / den);
    let mean_sq = sq.iter().sum::<f64>() / n as f64;
    let inef = mrsv::diagnostics::inefficiency_factor(&sq).unwrap().max(1.0);
    let var = sq.iter().map(|x| (x - mean_sq).powi(2)).sum::<f64>() / n as f64;
    let se = (var * inef / n as f64).sqrt();
    assert!((mean_sq - 0.25).abs() < 3.0 * se, "E[phi^2] {mean_sq} vs 0.25, se {se}");
}

#[test]
fn location_limits() {
    let v = variant(3, Leverage::None, SqrtKind::Spectral, MeanKind::RandomWalk);
    let mut f = fixture(&v, 6, 0.0, 31);
    f.priors.xi.var = 1e14;
    let c = xi_conditional(&f.params, &f.latents, &f.data, &f.priors);
    for i in 0..3 {
        let mean = (0..6).map(|t| f.data.x.get(t, i).unwrap() - f.latents.h[(t, i)]).sum::<f64>() / 6.0;
        assert!((c.mean[i] - mean).abs() < 1e-10);
    }
    for t in 0..6 {
        f.data.w.set(t, 1, None);
    }
    let d = samplers::delta_conditional(&f.params, &f.latents, &f.data, &f.priors, &f.variant);
    assert!((d.mean[1] - f.priors.delta.mean).abs() < 1e-12);
    assert!((d.cov[(1, 1)] - f.priors.delta.var).abs() < 1e-12);
}

#[test]
fn variance_shapes_and_moments() {
    let v = variant(2, Leverage::None, SqrtKind::Spectral, MeanKind::RandomWalk);
    let mut f = fixture(&v, 10, 0.0, 32);
    f.priors.sigma2_u = model::InvGammaPrior { n: 1.0, d: 1.0 };
    for t in 0..10 {
        f.data.x.set(t, 0, Some(f.params.xi[0] + f.latents.h[(t, 0)]));
    }
    let c = variance_conditionals(&f.params, &f.latents, &f.data, &f.priors, &f.variant);
    assert_eq!(c.u[0], (5.5, 0.5));
    for t in 0..5 {
        f.data.x.set(2 * t, 1, None);
    }
    let c = variance_conditionals(&f.params, &f.latents, &f.data, &f.priors, &f.variant);
    assert_eq!(c.u[1].0, 0.5 * (1.0 + 5.0));

    let (a, b) = c.zeta[0].unwrap();
    let mut st = ChainState::new(f.params.clone(), f.latents.clone(), 9);
    let n = 100_000;
    let mut sum = 0.0;
    for _ in 0..n {
        sample_variances(&mut st, &f.data, &f.priors, &f.variant).unwrap();
        sum += st.params.sigma2_zeta[0];
    }
    let mean = b / (a - 1.0);
    let sd = (b * b / ((a - 1.0).powi(2) * (a - 2.0))).sqrt();
    assert!((sum / n as f64 - mean).abs() < 3.0 * sd / (n as f64).sqrt(), "{} vs {mean}", sum / n as f64);
}

#[test]
fn omega_acceptance_is_high_for_long_samples() {
    let (params, lat, data, pr) = ar_fixture(5000, 0.9, 41);
    let v = mrsv::model::ModelVariant::no_leverage(2);
    let mut st = ChainState::new(params, lat, 10);
    for _ in 0..400 {
        sample_omega(&mut st, &data, &pr).unwrap();
    }
    assert!(st.stats.cov.rate() >= 0.95, "{}", st.stats.cov.rate());
    let _ = v;
}

#[test]
fn psi_scale_identities() {
    let v = variant(3, Leverage::Full, SqrtKind::Spectral, MeanKind::RandomWalk);
    let f = fixture(&v, 8, 0.0, 51);
    let z = z_rows(&f.latents, &f.data, &f.variant);
    let two = psi_proposal(&f.params, &f.latents, &f.priors, Leverage::Full, z.as_ref()).unwrap();
    let one = psi_proposal(&f.params, &f.latents, &f.priors, Leverage::Parsimonious(3), z.as_ref()).unwrap();
    let dev = f.params.lambda().unwrap() - &f.priors.lambda.mean;
    let term = &dev * f.priors.lambda.gamma0.clone().try_inverse().unwrap() * dev.transpose();
    assert_close(&(&two.scale - &one.scale), &term, 1e-12, "prior term");
    assert_eq!(two.nu - one.nu, 3.0);

    // Λ = 0: leverage residuals are the plain transition residuals.
    let mut th = f.params.clone();
    th.noise = VolNoise::Leverage { psi: f.params.state_cov().clone(), lambda: DMatrix::zeros(3, 3) };
    let mut pr = f.priors.clone();
    pr.omega = pr.psi.clone();
    let lev = psi_proposal(&th, &f.latents, &pr, Leverage::Parsimonious(1), z.as_ref()).unwrap();
    let plain = omega_proposal(&th, &f.latents, &pr);
    assert_close(&lev.scale, &plain.scale, 1e-14, "Lambda = 0");
    assert_eq!(lev.nu, plain.nu);
}

#[test]
fn lambda_flat_prior_limits_are_least_squares() {
    let v = variant(2, Leverage::Full, SqrtKind::Spectral, MeanKind::RandomWalk);
    let mut f = fixture(&v, 40, 0.0, 61);
    f.priors.lambda.gamma0 = DMatrix::identity(2, 2) * 1e14;
    f.priors.lambda.mean = DMatrix::zeros(2, 2);
    let z = z_rows(&f.latents, &f.data, &f.variant).unwrap();
    let n = f.data.len() - 1;
    let eta = DMatrix::from_fn(n, 2, |t, i| {
        f.latents.h[(t + 1, i)] - f.params.mu[i] - f.params.phi[i] * (f.latents.h[(t, i)] - f.params.mu[i])
    });
    let zr = z.rows(0, n).into_owned();
    let ls = (eta.transpose() * &zr) * (zr.transpose() * &zr).try_inverse().unwrap();
    let full = lambda_full_conditional(&f.params, &f.latents, &f.priors, &z).unwrap();
    assert_close(&full.mean, &ls, 1e-9, "full LS");

    let mut pr = f.priors.clone();
    pr.lambda.gamma0 = DMatrix::identity(2, 2) * 1e14;
    let pars = lambda_pars_conditional(&f.params, &f.latents, &pr, 1, &z).unwrap();
    let z1 = zr.column(0);
    for i in 0..2 {
        let want = eta.column(i).dot(&z1) / z1.dot(&z1);
        assert!((pars.mean[i] - want).abs() < 1e-9, "{} vs {want}", pars.mean[i]);
    }
}

#[test]
fn parsimonious_with_all_factors_matches_full() {
    let v = variant(2, Leverage::Full, SqrtKind::Spectral, MeanKind::RandomWalk);
    let f = fixture(&v, 4, 0.0, 62);
    let z = z_rows(&f.latents, &f.data, &f.variant).unwrap();
    let full = lambda_full_conditional(&f.params, &f.latents, &f.priors, &z).unwrap();
    let mut pr = f.priors.clone();
    pr.lambda.gamma0 = linalg::kron(&f.priors.lambda.gamma0, f.params.state_cov());
    let pars = lambda_pars_conditional(&f.params, &f.latents, &pr, 2, &z).unwrap();
    assert_close_vec(&pars.mean, &DVector::from_column_slice(full.mean.as_slice()), 1e-10, "mean");
    assert_close(&pars.cov, &full.vec_cov(), 1e-10, "cov");
}

#[test]
fn full_lambda_draws_have_kronecker_covariance() {
    let v = variant(2, Leverage::Full, SqrtKind::Spectral, MeanKind::RandomWalk);
    let f = fixture(&v, 6, 0.0, 63);
    let z = z_rows(&f.latents, &f.data, &f.variant).unwrap();
    let c = lambda_full_conditional(&f.params, &f.latents, &f.priors, &z).unwrap();
    let (mean, cov) = (DVector::from_column_slice(c.mean.as_slice()), c.vec_cov());
    let mut st = ChainState::new(f.params.clone(), f.latents.clone(), 12);
    let n = 100_000;
    let mut s1 = DVector::zeros(4);
    let mut s2 = DMatrix::zeros(4, 4);
    for _ in 0..n {
        sample_lambda_full(&mut st, &f.data, &f.priors, &f.variant).unwrap();
        let x = DVector::from_column_slice(st.params.lambda().unwrap().as_slice());
        s1 += &x;
        s2 += &x * x.transpose();
    }
    let nf = n as f64;
    let em = s1 / nf;
    let ec = s2 / nf - &em * em.transpose();
    for a in 0..4 {
        assert!((em[a] - mean[a]).abs() < 3.0 * (cov[(a, a)] / nf).sqrt());
        for b in 0..=a {
            let se = ((cov[(a, a)] * cov[(b, b)] + cov[(a, b)].powi(2)) / nf).sqrt();
            assert!((ec[(a, b)] - cov[(a, b)]).abs() < 3.0 * se, "{a},{b}");
        }
    }
}

#[test]
fn reverse_moves_cancel() {
    for (n, lev) in [Leverage::None, Leverage::Full, Leverage::Parsimonious(1)].into_iter().enumerate() {
        let v = variant(3, lev, SqrtKind::Spectral, MeanKind::RandomWalk);
        for seed in 0..20 {
            let f = fixture(&v, 5, 0.1, 300 + 20 * n as u64 + seed);
            let mut rng = rng_from_seed(seed);
            let t = rng.random_range(0..5);
            let k = rng.random_range(0..3);
            let b = samplers::g_interval(&f.latents, &f.variant, t, k).unwrap();
            let g_new = corrmat::fisher(b.lower + (b.upper - b.lower) * rng.random_range(0.1..0.9)).unwrap();
            let mut moved = f.latents.clone();
            moved.g[(t, k)] = g_new;
            let fwd = g_log_ratio(&f.params, &f.latents, &f.data, &f.variant, t, k, g_new).unwrap();
            let back = g_log_ratio(&f.params, &moved, &f.data, &f.variant, t, k, f.latents.g[(t, k)]).unwrap();
            assert!((fwd + back).abs() < 1e-10, "g {fwd} {back}");

            let h_new = f.latents.h_row(t).map(|x| x + rng.random_range(-0.4..0.4));
            let mut moved = f.latents.clone();
            moved.h.set_row(t, &h_new.transpose());
            let fwd = h_log_l(&f.params, &f.latents, &f.data, &f.variant, t, &h_new).unwrap()
                - h_log_l(&f.params, &f.latents, &f.data, &f.variant, t, &f.latents.h_row(t)).unwrap();
            let back = h_log_l(&f.params, &moved, &f.data, &f.variant, t, &f.latents.h_row(t)).unwrap()
                - h_log_l(&f.params, &moved, &f.data, &f.variant, t, &h_new).unwrap();
            assert!((fwd + back).abs() < 1e-10, "h {fwd} {back}");
        }
    }
}

fn permute_state(th: &ModelParams, lat: &LatentPaths, order: &[usize]) -> (ModelParams, LatentPaths) {
    let p = order.len();
    let pair_order: Vec<usize> = corrmat::pairs(p).map(|(i, j)| corrmat::pair_index(order[i], order[j])).collect();
    let pv = |v: &DVector<f64>| DVector::from_fn(v.len(), |a, _| v[order[a]]);
    let pp = |v: &DVector<f64>| DVector::from_fn(v.len(), |a, _| v[pair_order[a]]);
    let pm = |m: &DMatrix<f64>| DMatrix::from_fn(p, p, |a, b| m[(order[a], order[b])]);
    let noise = match &th.noise {
        VolNoise::Omega(o) => VolNoise::Omega(pm(o)),
        VolNoise::Leverage { psi, lambda } => VolNoise::Leverage { psi: pm(psi), lambda: pm(lambda) },
    };
    let th2 = ModelParams {
        phi: pv(&th.phi),
        mu: pv(&th.mu),
        xi: pv(&th.xi),
        delta: pp(&th.delta),
        sigma2_u: pv(&th.sigma2_u),
        sigma2_v: pp(&th.sigma2_v),
        sigma2_zeta: pp(&th.sigma2_zeta),
        sigma2_m: pv(&th.sigma2_m),
        noise,
    };
    let lat2 = LatentPaths { h: lat.h.select_columns(order), g: lat.g.select_columns(&pair_order), m: lat.m.select_columns(order) };
    (th2, lat2)
}

#[test]
fn exact_blocks_follow_asset_ordering() {
    let v = variant(3, Leverage::None, SqrtKind::Spectral, MeanKind::RandomWalk);
    let f = fixture(&v, 6, 0.2, 71);
    let order = [2, 0, 1];
    let pair_order: Vec<usize> = corrmat::pairs(3).map(|(i, j)| corrmat::pair_index(order[i], order[j])).collect();
    let data2 = f.data.permute_assets(&order);
    let (th2, lat2) = permute_state(&f.params, &f.latents, &order);
    let mut pr2 = f.priors.clone();
    pr2.omega.scale = DMatrix::from_fn(3, 3, |a, b| f.priors.omega.scale[(order[a], order[b])]);

    let a = mu_conditional(&f.params, &f.latents, &f.priors, None).unwrap();
    let b = mu_conditional(&th2, &lat2, &pr2, None).unwrap();
    for x in 0..3 {
        assert!((b.mean[x] - a.mean[order[x]]).abs() < 1e-12);
        for y in 0..3 {
            assert!((b.cov[(x, y)] - a.cov[(order[x], order[y])]).abs() < 1e-12);
        }
    }
    let a = variance_conditionals(&f.params, &f.latents, &f.data, &f.priors, &f.variant);
    let b = variance_conditionals(&th2, &lat2, &data2, &pr2, &f.variant);
    for x in 0..3 {
        assert_eq!(b.u[x], a.u[order[x]]);
        assert_eq!(b.m[x], a.m[order[x]]);
        assert_eq!(b.v[x], a.v[pair_order[x]]);
        assert_eq!(b.zeta[x], a.zeta[pair_order[x]]);
    }
    let a = samplers::delta_conditional(&f.params, &f.latents, &f.data, &f.priors, &f.variant);
    let b = samplers::delta_conditional(&th2, &lat2, &data2, &pr2, &f.variant);
    for x in 0..3 {
        assert_eq!(b.mean[x], a.mean[pair_order[x]]);
    }
    let (am, ac) = m_smoother_plan(&f.params, &f.latents, &f.data, &f.priors, &f.variant).unwrap().joint_moments();
    let (bm, bc) = m_smoother_plan(&th2, &lat2, &data2, &pr2, &f.variant).unwrap().joint_moments();
    let idx = |k: usize| (k / 3) * 3 + order[k % 3];
    for x in 0..18 {
        assert!((bm[x] - am[idx(x)]).abs() < 1e-10);
        for y in 0..18 {
            assert!((bc[(x, y)] - ac[(idx(x), idx(y))]).abs() < 1e-10);
        }
    }
}

#[test]
fn run_mcmc_contracts() {
    let v = variant(2, Leverage::Parsimonious(1), SqrtKind::Spectral, MeanKind::RandomWalk);
    let f = fixture(&v, 30, 0.1, 81);
    let mut cfg = McmcConfig::new(v.clone(), 0, 1, 5);
    let one = run_mcmc(&f.data, &cfg).unwrap();
    assert_eq!(one.len(), 1);
    cfg.n_burnin = 5;
    cfg.n_keep = 10;
    cfg.thin = 2;
    let a = run_mcmc(&f.data, &cfg).unwrap();
    let b = run_mcmc(&f.data, &cfg).unwrap();
    assert_eq!(a.rows, b.rows);
    assert_eq!(a.stats, b.stats);
    assert!(a.stats.g.proposed > 0 && a.stats.h.proposed > 0);
    assert_eq!(a.stats.cov.proposed, 5 + 10 * 2);
}
