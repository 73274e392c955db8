//! Dense helpers on top of nalgebra shared by the model and the samplers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{MrsvError, Result};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn cholesky(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone()).ok_or_else(|| MrsvError::NotPositiveDefinite(what.to_string()))
}

/// log |M| from a Cholesky factor.
pub fn chol_logdet(chol: &Cholesky<f64, Dyn>) -> f64 {
    let l = chol.l_dirty();
    2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
}

/// x' M^{-1} x using a Cholesky factor of M.
pub fn chol_quad(chol: &Cholesky<f64, Dyn>, x: &DVector<f64>) -> f64 {
    let mut v = x.clone();
    chol.l_dirty()
        .solve_lower_triangular_mut(&mut v);
    v.norm_squared()
}

pub fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let mut inv = cholesky(m, what)?.inverse();
    symmetrize(&mut inv);
    Ok(inv)
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Multivariate normal log density with full normalizing constant.
pub fn mvn_logpdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let chol = cholesky(cov, "normal covariance")?;
    let d = x - mean;
    Ok(-0.5 * (x.len() as f64 * LN_2PI + chol_logdet(&chol) + chol_quad(&chol, &d)))
}

/// Multivariate normal log density parameterized by its precision matrix.
pub fn mvn_logpdf_prec(x: &DVector<f64>, mean: &DVector<f64>, prec: &DMatrix<f64>) -> Result<f64> {
    let chol = cholesky(prec, "normal precision")?;
    let d = x - mean;
    let quad = (prec * &d).dot(&d);
    Ok(-0.5 * (x.len() as f64 * LN_2PI - chol_logdet(&chol) + quad))
}

pub fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + var.ln() + d * d / var)
}

pub fn std_normal_vec<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Draws from N(P^{-1} b, P^{-1}) given the precision P and the linear term b.
/// Returns the draw together with the mean.
pub fn sample_canonical<R: Rng + ?Sized>(
    prec: &DMatrix<f64>,
    lin: &DVector<f64>,
    rng: &mut R,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let chol = cholesky(prec, "conditional precision")?;
    let mean = chol.solve(lin);
    let mut eps = std_normal_vec(lin.len(), rng);
    chol.l_dirty().tr_solve_lower_triangular_mut(&mut eps);
    Ok((&mean + eps, mean))
}

/// Draws from N(mean, cov).
pub fn sample_mvn<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let chol = cholesky(cov, "normal covariance")?;
    let eps = std_normal_vec(mean.len(), rng);
    Ok(mean + chol.l() * eps)
}

pub fn smallest_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Kronecker product A ⊗ B.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

pub fn frobenius_rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}
