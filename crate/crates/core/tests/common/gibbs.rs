//! Gaussian and inverse-gamma full conditionals against moments read off the
//! exact joint log posterior, which is quadratic (or inverse-gamma shaped) in
//! each of these blocks.

use super::*;
use mrsv::corrmat::SqrtKind;
use mrsv::model::{LatentPaths, Leverage, MeanKind, ModelParams, ModelVariant, VolNoise};
use mrsv::samplers::{
    delta_conditional, lambda_full_conditional, lambda_pars_conditional, m_smoother_plan, mu_conditional,
    variance_conditionals, xi_conditional,
};
use nalgebra::{DMatrix, DVector};

const TOL: f64 = 1e-10;
const T_LEN: usize = 5;

fn fixtures() -> Vec<Fixture> {
    let vs: Vec<ModelVariant> = vec![
        variant(2, Leverage::None, SqrtKind::Spectral, MeanKind::RandomWalk),
        variant(2, Leverage::Full, SqrtKind::Spectral, MeanKind::RandomWalk),
        variant(2, Leverage::Full, SqrtKind::Cholesky, MeanKind::RandomWalk),
        variant(2, Leverage::Parsimonious(1), SqrtKind::Spectral, MeanKind::RandomWalk),
        variant(2, Leverage::Parsimonious(2), SqrtKind::Cholesky, MeanKind::RandomWalk),
        variant(2, Leverage::None, SqrtKind::Spectral, MeanKind::Constant),
        variant(2, Leverage::Full, SqrtKind::Spectral, MeanKind::Constant),
    ];
    let mut out = Vec::new();
    for (n, v) in vs.iter().enumerate() {
        for (r, (t_len, missing)) in [(T_LEN, 0.0), (T_LEN, 0.3), (3, 0.0)].into_iter().enumerate() {
            out.push(fixture(v, t_len, missing, 200 + 10 * n as u64 + r as u64));
        }
    }
    out
}

fn theta_fn<'a>(f: &'a Fixture, set: impl Fn(&mut ModelParams, &DVector<f64>) + 'a) -> impl Fn(&DVector<f64>) -> f64 + 'a {
    move |x: &DVector<f64>| {
        let mut th = f.params.clone();
        set(&mut th, x);
        log_joint(&th, &f.latents, f)
    }
}

pub fn mu_conditional_matches_oracle() {
    for f in fixtures() {
        let z = z_rows(&f.latents, &f.data, &f.variant);
        let got = mu_conditional(&f.params, &f.latents, &f.priors, z.as_ref()).unwrap();
        let (mean, cov) = gaussian_oracle(theta_fn(&f, |th, x| th.mu = x.clone()), &f.params.mu);
        assert_close_vec(&got.mean, &mean, TOL, "mu mean");
        assert_close(&got.cov, &cov, TOL, "mu cov");
    }
}

pub fn xi_conditional_matches_oracle() {
    for f in fixtures() {
        let got = xi_conditional(&f.params, &f.latents, &f.data, &f.priors);
        let (mean, cov) = gaussian_oracle(theta_fn(&f, |th, x| th.xi = x.clone()), &f.params.xi);
        assert_close_vec(&got.mean, &mean, TOL, "xi mean");
        assert_close(&got.cov, &cov, TOL, "xi cov");
    }
}

pub fn delta_conditional_matches_oracle() {
    for f in fixtures() {
        let got = delta_conditional(&f.params, &f.latents, &f.data, &f.priors, &f.variant);
        let (mean, cov) = gaussian_oracle(theta_fn(&f, |th, x| th.delta = x.clone()), &f.params.delta);
        assert_close_vec(&got.mean, &mean, TOL, "delta mean");
        assert_close(&got.cov, &cov, TOL, "delta cov");
    }
}

fn assert_ig(got: (f64, f64), f: impl Fn(f64) -> f64, s0: f64, what: &str) {
    let (a, b) = inv_gamma_oracle(f, s0);
    assert!((got.0 - a).abs() <= TOL * a.abs().max(1.0), "{what} shape {} vs {a}", got.0);
    assert!((got.1 - b).abs() <= TOL * b.abs().max(1.0), "{what} scale {} vs {b}", got.1);
    let mean = |a: f64, b: f64| b / (a - 1.0);
    let var = |a: f64, b: f64| b * b / ((a - 1.0) * (a - 1.0) * (a - 2.0));
    // Shapes are multiples of 1/2; the margins keep rounding in the fitted
    // shape away from the poles of the moments.
    if a > 1.25 {
        assert!((mean(got.0, got.1) - mean(a, b)).abs() <= TOL * mean(a, b).abs().max(1.0), "{what} mean");
    }
    if a > 2.25 {
        assert!((var(got.0, got.1) - var(a, b)).abs() <= TOL * var(a, b).abs().max(1.0), "{what} var");
    }
}

pub fn variance_conditionals_match_oracle() {
    for f in fixtures() {
        let c = variance_conditionals(&f.params, &f.latents, &f.data, &f.priors, &f.variant);
        let p = f.data.dim();
        let lj = |edit: &dyn Fn(&mut ModelParams, f64), s: f64| {
            let mut th = f.params.clone();
            edit(&mut th, s);
            log_joint(&th, &f.latents, &f)
        };
        for i in 0..p {
            assert_ig(c.u[i], |s| lj(&|th, s| th.sigma2_u[i] = s, s), f.params.sigma2_u[i], "sigma2_u");
        }
        for k in f.variant.mask.free_indices() {
            assert_ig(c.v[k].unwrap(), |s| lj(&|th, s| th.sigma2_v[k] = s, s), f.params.sigma2_v[k], "sigma2_v");
            assert_ig(c.zeta[k].unwrap(), |s| lj(&|th, s| th.sigma2_zeta[k] = s, s), f.params.sigma2_zeta[k], "sigma2_zeta");
        }
        match f.variant.mean_kind {
            MeanKind::RandomWalk => {
                for i in 0..p {
                    assert_ig(c.m[i], |s| lj(&|th, s| th.sigma2_m[i] = s, s), f.params.sigma2_m[i], "sigma2_m");
                }
            }
            MeanKind::Constant => assert!(c.m.is_empty()),
        }
    }
}

fn set_lambda_cols(th: &mut ModelParams, x: &DVector<f64>, q: usize) {
    if let VolNoise::Leverage { lambda, .. } = &mut th.noise {
        let p = lambda.nrows();
        for c in 0..q {
            for i in 0..p {
                lambda[(i, c)] = x[c * p + i];
            }
        }
    }
}

fn lambda_vec(th: &ModelParams, q: usize) -> DVector<f64> {
    let l = th.lambda().unwrap();
    let p = l.nrows();
    DVector::from_fn(p * q, |k, _| l[(k % p, k / p)])
}

pub fn full_lambda_conditional_matches_oracle() {
    for f in fixtures().into_iter().filter(|f| f.variant.leverage == Leverage::Full) {
        let p = f.data.dim();
        let z = z_rows(&f.latents, &f.data, &f.variant).unwrap();
        let got = lambda_full_conditional(&f.params, &f.latents, &f.priors, &z).unwrap();
        let (mean, cov) = gaussian_oracle(theta_fn(&f, move |th, x| set_lambda_cols(th, x, p)), &lambda_vec(&f.params, p));
        let got_mean = DVector::from_column_slice(got.mean.as_slice());
        assert_close_vec(&got_mean, &mean, TOL, "Lambda mean");
        assert_close(&got.vec_cov(), &cov, TOL, "Lambda cov");
    }
}

pub fn parsimonious_lambda_conditional_matches_oracle() {
    let mut seen = 0;
    for f in fixtures() {
        let Leverage::Parsimonious(q) = f.variant.leverage else { continue };
        seen += 1;
        let z = z_rows(&f.latents, &f.data, &f.variant).unwrap();
        let got = lambda_pars_conditional(&f.params, &f.latents, &f.priors, q, &z).unwrap();
        let (mean, cov) = gaussian_oracle(theta_fn(&f, move |th, x| set_lambda_cols(th, x, q)), &lambda_vec(&f.params, q));
        assert_close_vec(&got.mean, &mean, TOL, "lambda mean");
        assert_close(&got.cov, &cov, TOL, "lambda cov");
    }
    assert!(seen >= 6);
}

fn set_m(latents: &mut LatentPaths, x: &DVector<f64>, constant: bool) {
    let (t_len, p) = (latents.m.nrows(), latents.m.ncols());
    for t in 0..t_len {
        for i in 0..p {
            latents.m[(t, i)] = if constant { x[i] } else { x[t * p + i] };
        }
    }
}

pub fn mean_path_smoother_matches_oracle() {
    for f in fixtures() {
        let (t_len, p) = (f.data.len(), f.data.dim());
        let constant = f.variant.mean_kind == MeanKind::Constant;
        let plan = m_smoother_plan(&f.params, &f.latents, &f.data, &f.priors, &f.variant).unwrap();
        let (got_mean, got_cov) = plan.joint_moments();
        let lj = |x: &DVector<f64>| {
            let mut lat = f.latents.clone();
            set_m(&mut lat, x, constant);
            log_joint(&f.params, &lat, &f)
        };
        if constant {
            let x0 = f.latents.m_row(0);
            let (mean, cov) = gaussian_oracle(lj, &x0);
            for t in 0..t_len {
                assert_close_vec(&got_mean.rows(t * p, p).into_owned(), &mean, TOL, "constant m mean");
                for s in 0..t_len {
                    assert_close(&got_cov.view((t * p, s * p), (p, p)).into_owned(), &cov, TOL, "constant m cov");
                }
            }
        } else {
            let x0 = DVector::from_fn(t_len * p, |k, _| f.latents.m[(k / p, k % p)]);
            let (mean, cov) = gaussian_oracle(lj, &x0);
            assert_close_vec(&got_mean, &mean, TOL, "m path mean");
            assert_close(&got_cov, &cov, TOL, "m path cov");
        }
    }
}

pub fn oracle_reads_known_gaussian() {
    let prec = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
    let m = DVector::from_vec(vec![0.5, -1.0]);
    let f = |x: &DVector<f64>| {
        let d = x - &m;
        -0.5 * (d.transpose() * &prec * &d)[(0, 0)] + 3.0
    };
    let (mean, cov) = gaussian_oracle(f, &DVector::zeros(2));
    assert_close_vec(&mean, &m, 1e-12, "mean");
    assert_close(&cov, &prec.try_inverse().unwrap(), 1e-12, "cov");
}
