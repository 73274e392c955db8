//! Metropolis-Hastings block ratios against the exact joint log posterior:
//! block ratio = Δ log joint + log q(current) − log q(proposed).

use super::*;
use mrsv::corrmat::{self, PairMask, SqrtKind};
use mrsv::model::{Leverage, MeanKind, ModelVariant, VolNoise};
use mrsv::samplers::{
    cov_log_ratio, dists, g_conditional_moments, g_interval, g_log_ratio, h_log_l, h_proposal, omega_proposal,
    phi_log_k, phi_proposal, psi_proposal,
};
use mrsv::{linalg, rng_from_seed};
use nalgebra::DVector;
use rand::Rng;

const N_STATES: u64 = 100;
const TOL: f64 = 1e-8;

fn variants() -> Vec<ModelVariant> {
    let mut masked_v = variant(3, Leverage::Full, SqrtKind::Cholesky, MeanKind::Constant);
    masked_v.mask = PairMask::with_fixed_zero(3, &[(2, 0)]).unwrap();
    let mut masked_n = variant(3, Leverage::None, SqrtKind::Spectral, MeanKind::RandomWalk);
    masked_n.mask = PairMask::with_fixed_zero(3, &[(1, 0)]).unwrap();
    vec![
        variant(3, Leverage::None, SqrtKind::Spectral, MeanKind::RandomWalk),
        variant(3, Leverage::Full, SqrtKind::Spectral, MeanKind::RandomWalk),
        variant(3, Leverage::Full, SqrtKind::Cholesky, MeanKind::RandomWalk),
        variant(3, Leverage::Parsimonious(1), SqrtKind::Spectral, MeanKind::RandomWalk),
        variant(2, Leverage::Parsimonious(2), SqrtKind::Cholesky, MeanKind::Constant),
        variant(2, Leverage::None, SqrtKind::Spectral, MeanKind::Constant),
        masked_v,
        masked_n,
    ]
}

fn state(seed: u64) -> Fixture {
    let vs = variants();
    let v = &vs[(seed as usize) % vs.len()];
    fixture(v, 6, 0.2, 1000 + seed)
}

fn check(block_ratio: f64, oracle: f64, what: &str, seed: u64) {
    assert!(
        (block_ratio - oracle).abs() <= TOL,
        "{what} seed {seed}: block {block_ratio} oracle {oracle} diff {:e}",
        (block_ratio - oracle).abs()
    );
}

pub fn g_block_ratio_matches_joint() {
    for seed in 0..N_STATES {
        let f = state(seed);
        let mut rng = rng_from_seed(seed);
        let t = rng.random_range(0..f.data.len());
        let free: Vec<usize> = f.variant.mask.free_indices().collect();
        let k = free[rng.random_range(0..free.len())];
        let b = g_interval(&f.latents, &f.variant, t, k).unwrap();
        let w = b.upper - b.lower;
        let rho = rng.random_range(b.lower + 0.05 * w..b.upper - 0.05 * w);
        let g_new = corrmat::fisher(rho).unwrap();
        let g_cur = f.latents.g[(t, k)];

        let mut prop = f.latents.clone();
        prop.g[(t, k)] = g_new;
        let (m, v) = g_conditional_moments(&f.params, &f.latents, &f.data, &f.priors, t, k);
        let oracle = log_joint(&f.params, &prop, &f) - log_joint(&f.params, &f.latents, &f)
            + linalg::normal_logpdf(g_cur, m, v)
            - linalg::normal_logpdf(g_new, m, v);
        let block = g_log_ratio(&f.params, &f.latents, &f.data, &f.variant, t, k, g_new).unwrap();
        check(block, oracle, "g", seed);
    }
}

pub fn h_block_ratio_matches_joint() {
    for seed in 0..N_STATES {
        let f = state(seed);
        let mut rng = rng_from_seed(seed);
        let t = rng.random_range(0..f.data.len());
        let p = f.data.dim();
        let h_cur = f.latents.h_row(t);
        let h_new = DVector::from_fn(p, |i, _| h_cur[i] + rng.random_range(-0.5..0.5));

        let mut prop = f.latents.clone();
        prop.h.set_row(t, &h_new.transpose());
        let q = h_proposal(&f.params, &f.latents, &f.data, &f.variant, t).unwrap();
        let oracle = log_joint(&f.params, &prop, &f) - log_joint(&f.params, &f.latents, &f) + q.logpdf(&h_cur).unwrap()
            - q.logpdf(&h_new).unwrap();
        let block = h_log_l(&f.params, &f.latents, &f.data, &f.variant, t, &h_new).unwrap()
            - h_log_l(&f.params, &f.latents, &f.data, &f.variant, t, &h_cur).unwrap();
        check(block, oracle, "h", seed);
    }
}

pub fn phi_block_ratio_matches_joint() {
    for seed in 0..N_STATES {
        let f = state(seed);
        let mut rng = rng_from_seed(seed);
        let p = f.data.dim();
        let phi_new = DVector::from_fn(p, |_, _| rng.random_range(0.3..0.99));
        let mut th = f.params.clone();
        th.phi = phi_new.clone();

        let z = z_rows(&f.latents, &f.data, &f.variant);
        let q = phi_proposal(&f.params, &f.latents, z.as_ref()).unwrap().expect("T >= 2");
        let oracle = log_joint(&th, &f.latents, &f) - log_joint(&f.params, &f.latents, &f)
            + q.logpdf(&f.params.phi).unwrap()
            - q.logpdf(&phi_new).unwrap();
        let block = phi_log_k(&phi_new, &f.params, &f.latents, &f.priors).unwrap()
            - phi_log_k(&f.params.phi, &f.params, &f.latents, &f.priors).unwrap();
        check(block, oracle, "phi", seed);
    }
}

pub fn phi_ratio_single_day_is_prior_and_initial_density() {
    let f = fixture(&variant(2, Leverage::None, SqrtKind::Spectral, MeanKind::RandomWalk), 1, 0.0, 5);
    assert!(phi_proposal(&f.params, &f.latents, None).unwrap().is_none());
    let mut th = f.params.clone();
    th.phi = DVector::from_vec(vec![0.2, -0.4]);
    let oracle = log_joint(&th, &f.latents, &f) - log_joint(&f.params, &f.latents, &f);
    let block = phi_log_k(&th.phi, &f.params, &f.latents, &f.priors).unwrap()
        - phi_log_k(&f.params.phi, &f.params, &f.latents, &f.priors).unwrap();
    check(block, oracle, "phi T=1", 0);
}

pub fn transition_covariance_ratio_matches_joint() {
    let mut n_omega = 0;
    let mut n_psi = 0;
    let mut seed = 0;
    while n_omega < N_STATES || n_psi < N_STATES {
        let f = state(seed);
        let mut rng = rng_from_seed(seed);
        seed += 1;
        let lev = f.variant.leverage;
        let q = if lev == Leverage::None {
            if n_omega >= N_STATES {
                continue;
            }
            n_omega += 1;
            omega_proposal(&f.params, &f.latents, &f.priors)
        } else {
            if n_psi >= N_STATES {
                continue;
            }
            n_psi += 1;
            let z = z_rows(&f.latents, &f.data, &f.variant);
            psi_proposal(&f.params, &f.latents, &f.priors, lev, z.as_ref()).unwrap()
        };
        let new = dists::sample_inverse_wishart(q.nu, &q.scale, &mut rng).unwrap();
        let mut th = f.params.clone();
        th.noise = match &th.noise {
            VolNoise::Omega(_) => VolNoise::Omega(new.clone()),
            VolNoise::Leverage { lambda, .. } => VolNoise::Leverage { psi: new.clone(), lambda: lambda.clone() },
        };
        let oracle = log_joint(&th, &f.latents, &f) - log_joint(&f.params, &f.latents, &f)
            + q.logpdf(f.params.state_cov()).unwrap()
            - q.logpdf(&new).unwrap();
        let block = cov_log_ratio(&new, &f.params, &f.latents).unwrap();
        check(block, oracle, if lev == Leverage::None { "Omega" } else { "Psi" }, seed);
    }
}
