//! Random draws from the distributions the blocks need.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Beta, ChiSquared, Distribution, Exp1, Gamma, StandardNormal};
use statrs::function::erf::{erfc, erfc_inv};

use crate::error::{MrsvError, Result};
use crate::linalg;

/// Φ(x) = P(Z ≤ x), accurate in both tails.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// 1 − Φ(x), accurate in the upper tail.
fn upper_tail(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// x with 1 − Φ(x) = q.
fn upper_tail_inv(q: f64) -> f64 {
    std::f64::consts::SQRT_2 * erfc_inv(2.0 * q)
}

/// Draw from N(mean, var) restricted to the open interval (lo, hi).
///
/// Inverse-CDF on the tail side nearest the mass, uniform rejection for
/// narrow intervals and exponential rejection far in a tail. Endpoints are
/// never returned.
pub fn sample_truncated_normal<R: Rng + ?Sized>(mean: f64, var: f64, lo: f64, hi: f64, rng: &mut R) -> Result<f64> {
    if !(var > 0.0) || !var.is_finite() || !mean.is_finite() {
        return Err(MrsvError::Domain(format!("truncated normal with mean {mean}, variance {var}")));
    }
    if !(lo < hi) {
        return Err(MrsvError::Domain(format!("degenerate truncation interval ({lo}, {hi})")));
    }
    let sd = var.sqrt();
    let a = (lo - mean) / sd;
    let b = (hi - mean) / sd;
    for _ in 0..100 {
        let z = std_truncated(a, b, rng);
        let x = mean + sd * z;
        if x > lo && x < hi {
            return Ok(x);
        }
    }
    // Only reachable when the interval is a few ulps wide.
    let mid = 0.5 * (lo + hi);
    if mid > lo && mid < hi {
        Ok(mid)
    } else {
        Err(MrsvError::Numerical(format!("cannot draw strictly inside ({lo}, {hi})")))
    }
}

fn std_truncated<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    if a >= 0.0 {
        upper_truncated(a, b, rng)
    } else if b <= 0.0 {
        -upper_truncated(-b, -a, rng)
    } else if b - a < 0.5 {
        // Density varies by at most a factor e^{1/8} across the interval.
        loop {
            let x = a + (b - a) * rng.random::<f64>();
            if rng.random::<f64>() <= (-0.5 * x * x).exp() {
                return x;
            }
        }
    } else {
        let pa = std_normal_cdf(a);
        let pb = std_normal_cdf(b);
        let u = pa + (pb - pa) * rng.random::<f64>();
        if u < 0.5 {
            -upper_tail_inv(u)
        } else {
            upper_tail_inv(1.0 - u)
        }
    }
}

/// Standard normal on (a, b) with 0 ≤ a < b ≤ ∞.
fn upper_truncated<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    if b.is_finite() && (b - a) * (b + a) <= 2.0 {
        loop {
            let x = a + (b - a) * rng.random::<f64>();
            if rng.random::<f64>() <= (-0.5 * (x * x - a * a)).exp() {
                return x;
            }
        }
    }
    if a < 5.0 {
        let qa = upper_tail(a);
        let qb = upper_tail(b);
        let u = qb + (qa - qb) * rng.random::<f64>();
        return upper_tail_inv(u);
    }
    let rate = 0.5 * (a + (a * a + 4.0).sqrt());
    loop {
        let e: f64 = rng.sample(Exp1);
        let x = a + e / rate;
        if x < b && rng.random::<f64>() <= (-0.5 * (x - rate) * (x - rate)).exp() {
            return x;
        }
    }
}

/// IG(shape, scale) with density ∝ x^{−shape−1} exp(−scale / x).
pub fn sample_inverse_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> Result<f64> {
    if !(shape > 0.0 && scale > 0.0) || !shape.is_finite() || !scale.is_finite() {
        return Err(MrsvError::Domain(format!("inverse gamma with shape {shape}, scale {scale}")));
    }
    let g = Gamma::new(shape, 1.0 / scale).map_err(|e| MrsvError::Domain(e.to_string()))?;
    let x: f64 = g.sample(rng);
    Ok(1.0 / x)
}

/// IW(ν, S) with density ∝ |X|^{−(ν+p+1)/2} exp(−½ tr(S X⁻¹)), drawn as the
/// inverse of a Bartlett-decomposed Wishart(ν, S⁻¹).
///
/// With S = C C' and W(ν, I) = A A' (A lower triangular, A_ii² ~ χ²(ν − i),
/// A_ij ~ N(0, 1) below the diagonal), X = (C A'⁻¹)(C A'⁻¹)'. A scale that
/// fails Cholesky is retried once with 1e−10·I added.
pub fn sample_inverse_wishart<R: Rng + ?Sized>(nu: f64, scale: &DMatrix<f64>, rng: &mut R) -> Result<DMatrix<f64>> {
    let p = scale.nrows();
    if !(nu > p as f64 - 1.0) || scale.ncols() != p {
        return Err(MrsvError::Domain(format!("inverse Wishart with nu = {nu}, p = {p}")));
    }
    let chol = match nalgebra::Cholesky::new(scale.clone()) {
        Some(c) => c,
        None => {
            log::warn!("inverse-Wishart scale not positive definite, adding 1e-10 I");
            linalg::cholesky(&(scale + DMatrix::identity(p, p) * 1e-10), "inverse-Wishart scale")?
        }
    };
    let c = chol.l();
    let mut a = DMatrix::zeros(p, p);
    for i in 0..p {
        let chi = ChiSquared::new(nu - i as f64).map_err(|e| MrsvError::Domain(e.to_string()))?;
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample(StandardNormal);
        }
    }
    // M' = A⁻¹ C'
    let mt = a
        .solve_lower_triangular(&c.transpose())
        .ok_or_else(|| MrsvError::Numerical("singular Bartlett factor".into()))?;
    let mut x = mt.transpose() * mt;
    linalg::symmetrize(&mut x);
    Ok(x)
}

pub fn sample_beta<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> Result<f64> {
    let d = Beta::new(a, b).map_err(|e| MrsvError::Domain(e.to_string()))?;
    Ok(d.sample(rng))
}

/// Outcome of a box-truncated multivariate normal proposal.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxDraw {
    pub value: DVector<f64>,
    /// True when rejection failed and the coordinate Gibbs kernel was used.
    pub used_fallback: bool,
}

/// Draw targeting N(mean, P⁻¹) restricted to the box (lo, hi)^d.
///
/// Rejection from the unconstrained normal is tried `max_attempts` times.
/// After that, a forward then backward sweep of single-coordinate truncated
/// normal updates is applied starting from `current`; that kernel leaves the
/// truncated normal invariant and is reversible with respect to it.
pub fn sample_box_truncated_mvn<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    prec: &DMatrix<f64>,
    lo: f64,
    hi: f64,
    current: &DVector<f64>,
    max_attempts: usize,
    rng: &mut R,
) -> Result<BoxDraw> {
    let d = mean.len();
    let chol = linalg::cholesky(prec, "truncated normal precision")?;
    for _ in 0..max_attempts {
        let mut eps = linalg::std_normal_vec(d, rng);
        chol.l_dirty().tr_solve_lower_triangular_mut(&mut eps);
        let x = mean + eps;
        if x.iter().all(|v| *v > lo && *v < hi) {
            return Ok(BoxDraw { value: x, used_fallback: false });
        }
    }
    let mut x = current.clone();
    let order: Vec<usize> = (0..d).chain((0..d).rev()).collect();
    for &i in &order {
        let pii = prec[(i, i)];
        let mut shift = 0.0;
        for j in 0..d {
            if j != i {
                shift += prec[(i, j)] * (x[j] - mean[j]);
            }
        }
        let cm = mean[i] - shift / pii;
        x[i] = sample_truncated_normal(cm, 1.0 / pii, lo, hi, rng)?;
    }
    Ok(BoxDraw { value: x, used_fallback: true })
}

/// log density of N(mean, var) truncated to (lo, hi), at x inside.
pub fn truncated_normal_logpdf(x: f64, mean: f64, var: f64, lo: f64, hi: f64) -> f64 {
    let sd = var.sqrt();
    let a = (lo - mean) / sd;
    let b = (hi - mean) / sd;
    let mass = if a >= 0.0 {
        upper_tail(a) - upper_tail(b)
    } else if b <= 0.0 {
        upper_tail(-b) - upper_tail(-a)
    } else {
        std_normal_cdf(b) - std_normal_cdf(a)
    };
    linalg::normal_logpdf(x, mean, var) - mass.ln()
}
