//! Chain initialization and warm starts.

use nalgebra::{DMatrix, DVector};

use super::WarmStart;
use crate::corrmat::{self, PairMask};
use crate::error::{MrsvError, Result};
use crate::model::{Dataset, LatentPaths, Leverage, MeanKind, ModelParams, ModelVariant, Priors, VolNoise};

const SMOOTH_HALF_WIDTH: usize = 2;

/// Centered moving average over the available neighbours.
fn smooth(values: &[Option<f64>]) -> Vec<f64> {
    let n = values.len();
    (0..n)
        .map(|t| {
            let lo = t.saturating_sub(SMOOTH_HALF_WIDTH);
            let hi = (t + SMOOTH_HALF_WIDTH + 1).min(n);
            let (s, c) = values[lo..hi].iter().flatten().fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
            if c == 0 {
                0.0
            } else {
                s / c as f64
            }
        })
        .collect()
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n)
}

/// Pulls every row of g into the PD region, pair by pair in canonical order.
pub(crate) fn make_pd(latents: &mut LatentPaths, mask: &PairMask) {
    let p = mask.dim();
    for t in 0..latents.len() {
        if latents.corr(t, mask).is_pd(corrmat::DEFAULT_PD_TOL) {
            continue;
        }
        let rho: Vec<f64> = latents.g.row(t).iter().map(|g| corrmat::inverse_fisher(*g)).collect();
        let r = corrmat::project_into_pd(p, &rho, mask, 0.05);
        for (k, (i, j)) in corrmat::pairs(p).enumerate() {
            latents.g[(t, k)] = if mask.is_free(k) { 2.0 * r.get(i, j).atanh() } else { 0.0 };
        }
    }
}

/// Starting values: h from smoothed log realized variances (log squared
/// returns plus 1.27 where x is missing), g from smoothed realized Fisher
/// correlations projected into the PD region, m = 0, φ = 0.9, Λ = 0 and
/// moment-based variances.
pub fn initialize(data: &Dataset, variant: &ModelVariant, _priors: &Priors) -> Result<(ModelParams, LatentPaths)> {
    let (t_len, p) = (data.len(), data.dim());
    if t_len == 0 {
        return Err(MrsvError::Data("empty dataset".into()));
    }
    let np = corrmat::n_pairs(p);
    let mask = &variant.mask;

    let mut h = DMatrix::zeros(t_len, p);
    for i in 0..p {
        let mean_sq = data.y.column(i).iter().map(|v| v * v).sum::<f64>() / t_len as f64;
        let proxy: Vec<Option<f64>> = (0..t_len)
            .map(|t| {
                Some(data.x.get(t, i).unwrap_or_else(|| {
                    let y = data.y[(t, i)];
                    (y * y + 1e-3 * mean_sq + 1e-12).ln() + 1.27
                }))
            })
            .collect();
        for (t, v) in smooth(&proxy).into_iter().enumerate() {
            h[(t, i)] = v;
        }
    }

    let mut g = DMatrix::zeros(t_len, np);
    for k in mask.free_indices() {
        let obs: Vec<Option<f64>> = (0..t_len).map(|t| data.w.get(t, k)).collect();
        for (t, v) in smooth(&obs).into_iter().enumerate() {
            g[(t, k)] = v;
        }
    }
    let mut latents = LatentPaths { h, g, m: DMatrix::zeros(t_len, p) };
    make_pd(&mut latents, mask);

    let phi = DVector::from_element(p, 0.9);
    let mu = DVector::from_fn(p, |i, _| latents.h.column(i).mean());
    let mut q = DMatrix::identity(p, p) * 0.01;
    if t_len > 2 {
        let res: Vec<DVector<f64>> = (0..t_len - 1)
            .map(|t| DVector::from_fn(p, |i, _| latents.h[(t + 1, i)] - mu[i] - 0.9 * (latents.h[(t, i)] - mu[i])))
            .collect();
        for r in &res {
            q += r * r.transpose() / res.len() as f64;
        }
    } else {
        q += DMatrix::identity(p, p) * 0.09;
    }

    let mut xi = DVector::zeros(p);
    let mut sigma2_u = DVector::from_element(p, 0.1);
    for i in 0..p {
        let r: Vec<f64> = (0..t_len).filter_map(|t| data.x.get(t, i).map(|x| x - latents.h[(t, i)])).collect();
        let (m, v) = mean_var(&r);
        xi[i] = m;
        sigma2_u[i] = v.max(0.01);
    }
    let mut delta = DVector::zeros(np);
    let mut sigma2_v = DVector::from_element(np, 1.0);
    let mut sigma2_zeta = DVector::from_element(np, 1.0);
    for k in mask.free_indices() {
        let r: Vec<f64> = (0..t_len).filter_map(|t| data.w.get(t, k).map(|w| w - latents.g[(t, k)])).collect();
        let (m, v) = mean_var(&r);
        delta[k] = m;
        sigma2_v[k] = v.max(0.01);
        let d: Vec<f64> = (1..t_len).map(|t| latents.g[(t, k)] - latents.g[(t - 1, k)]).collect();
        sigma2_zeta[k] = (d.iter().map(|x| x * x).sum::<f64>() / d.len().max(1) as f64).max(1e-3);
    }
    let sigma2_m = match variant.mean_kind {
        MeanKind::RandomWalk => DVector::from_fn(p, |i, _| {
            let ms = data.y.column(i).iter().map(|v| v * v).sum::<f64>() / t_len as f64;
            (1e-3 * ms).max(1e-4)
        }),
        MeanKind::Constant => DVector::zeros(0),
    };
    let noise = match variant.leverage {
        Leverage::None => VolNoise::Omega(q),
        _ => VolNoise::Leverage { psi: q, lambda: DMatrix::zeros(p, p) },
    };
    let params = ModelParams { phi, mu, xi, delta, sigma2_u, sigma2_v, sigma2_zeta, sigma2_m, noise };
    params.validate(variant)?;
    Ok((params, latents))
}

/// Moves a warm start forward by `shift` days for a window of `new_len`:
/// rows are shifted up and the trailing rows repeat the last known state.
pub fn shift_warm_start(warm: &WarmStart, shift: usize, new_len: usize) -> WarmStart {
    let old = &warm.latents;
    let last = old.len() - 1;
    let take = |m: &DMatrix<f64>| DMatrix::from_fn(new_len, m.ncols(), |t, c| m[((t + shift).min(last), c)]);
    WarmStart {
        params: warm.params.clone(),
        latents: LatentPaths { h: take(&old.h), g: take(&old.g), m: take(&old.m) },
    }
}
