//! Correlation-matrix algebra.
//!
//! Pairs `(i, j)` with `i > j` are always ordered lower-triangle row-major:
//! `(1,0), (2,0), (2,1), (3,0), ...` (zero-based), so pair `k` of a
//! `p`-dimensional matrix is the `k`-th element of every per-pair vector in
//! the crate.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{MrsvError, Result};
use crate::linalg;

/// Default floor on the smallest eigenvalue for a matrix to count as PD.
pub const DEFAULT_PD_TOL: f64 = 1e-10;

/// Intervals narrower than this are treated as unmovable by the samplers.
pub const DEGENERATE_WIDTH: f64 = 1e-8;

pub fn n_pairs(p: usize) -> usize {
    p * p.saturating_sub(1) / 2
}

/// Canonical index of pair `(i, j)`; the order of the two indices is irrelevant.
pub fn pair_index(i: usize, j: usize) -> usize {
    let (hi, lo) = if i > j { (i, j) } else { (j, i) };
    debug_assert!(hi != lo, "diagonal has no pair index");
    hi * (hi - 1) / 2 + lo
}

/// Inverse of [`pair_index`]: returns `(i, j)` with `i > j`.
pub fn pair_at(k: usize) -> (usize, usize) {
    let mut i = 1;
    while (i + 1) * i / 2 <= k {
        i += 1;
    }
    (i, k - i * (i - 1) / 2)
}

/// All pairs of a `p`-dimensional matrix in canonical order.
pub fn pairs(p: usize) -> impl Iterator<Item = (usize, usize)> {
    (1..p).flat_map(|i| (0..i).map(move |j| (i, j)))
}

/// Which correlations are free and which are restricted to zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairMask {
    dim: usize,
    free: Vec<bool>,
}

impl PairMask {
    pub fn all_free(p: usize) -> Self {
        Self { dim: p, free: vec![true; n_pairs(p)] }
    }

    /// Every pair free except those listed, which are fixed at zero correlation.
    pub fn with_fixed_zero(p: usize, fixed: &[(usize, usize)]) -> Result<Self> {
        let mut mask = Self::all_free(p);
        for &(i, j) in fixed {
            if i == j || i >= p || j >= p {
                return Err(MrsvError::Domain(format!("invalid pair ({i}, {j}) for p = {p}")));
            }
            mask.free[pair_index(i, j)] = false;
        }
        Ok(mask)
    }

    pub fn from_flags(p: usize, free: Vec<bool>) -> Result<Self> {
        if free.len() != n_pairs(p) {
            return Err(MrsvError::Dimension(format!(
                "mask has {} flags, expected {}",
                free.len(),
                n_pairs(p)
            )));
        }
        Ok(Self { dim: p, free })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_pairs(&self) -> usize {
        self.free.len()
    }

    pub fn is_free(&self, k: usize) -> bool {
        self.free[k]
    }

    pub fn flags(&self) -> &[bool] {
        &self.free
    }

    pub fn free_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.free.iter().enumerate().filter(|(_, f)| **f).map(|(k, _)| k)
    }

    pub fn n_free(&self) -> usize {
        self.free.iter().filter(|f| **f).count()
    }
}

/// g = log((1 + ρ) / (1 − ρ)).
pub fn fisher(rho: f64) -> Result<f64> {
    if !(rho.abs() < 1.0) {
        return Err(MrsvError::Domain(format!("Fisher transform needs |rho| < 1, got {rho}")));
    }
    // The ratio form is correctly rounded at moderate |ρ|; ln_1p keeps
    // relative accuracy near zero.
    if rho.abs() >= 0.5 {
        Ok(((1.0 + rho) / (1.0 - rho)).ln())
    } else {
        Ok((2.0 * rho / (1.0 - rho)).ln_1p())
    }
}

/// ρ = (e^g − 1) / (e^g + 1), evaluated as tanh(g / 2) so large |g| saturates.
pub fn inverse_fisher(g: f64) -> f64 {
    (0.5 * g).tanh()
}

/// Fisher transform of an interval endpoint: ±1 map to ±∞.
fn fisher_endpoint(rho: f64) -> f64 {
    if rho >= 1.0 {
        f64::INFINITY
    } else if rho <= -1.0 {
        f64::NEG_INFINITY
    } else {
        2.0 * rho.atanh()
    }
}

/// Fisher-transformed correlations of one matrix together with the pair mask.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherVector {
    values: Vec<f64>,
    mask: PairMask,
}

impl FisherVector {
    /// Fixed-zero entries are forced to exactly 0.
    pub fn new(values: Vec<f64>, mask: PairMask) -> Result<Self> {
        if values.len() != mask.n_pairs() {
            return Err(MrsvError::Dimension(format!(
                "{} Fisher values for {} pairs",
                values.len(),
                mask.n_pairs()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(MrsvError::Domain("non-finite Fisher value".into()));
        }
        let values = values
            .into_iter()
            .enumerate()
            .map(|(k, v)| if mask.is_free(k) { v } else { 0.0 })
            .collect();
        Ok(Self { values, mask })
    }

    pub fn dim(&self) -> usize {
        self.mask.dim()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &PairMask {
        &self.mask
    }
}

/// A symmetric matrix with unit diagonal and off-diagonal entries in (−1, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct CorrMatrix {
    m: DMatrix<f64>,
}

impl CorrMatrix {
    pub fn identity(p: usize) -> Self {
        Self { m: DMatrix::identity(p, p) }
    }

    /// Validates shape, symmetry, unit diagonal and |ρ| < 1. Positive
    /// definiteness is not checked here.
    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        let p = m.nrows();
        if p < 2 || m.ncols() != p {
            return Err(MrsvError::Dimension(format!("{}x{} is not a correlation matrix", p, m.ncols())));
        }
        for i in 0..p {
            if m[(i, i)] != 1.0 {
                return Err(MrsvError::Domain(format!("diagonal entry {i} is {}", m[(i, i)])));
            }
            for j in 0..i {
                if m[(i, j)] != m[(j, i)] {
                    return Err(MrsvError::Domain(format!("asymmetric at ({i}, {j})")));
                }
                if !(m[(i, j)].abs() < 1.0) {
                    return Err(MrsvError::Domain(format!("|rho| >= 1 at ({i}, {j})")));
                }
            }
        }
        Ok(Self { m })
    }

    /// Builds a matrix from per-pair correlations in canonical order.
    pub fn from_pairs(p: usize, rho: &[f64]) -> Result<Self> {
        if rho.len() != n_pairs(p) {
            return Err(MrsvError::Dimension(format!("{} correlations for p = {p}", rho.len())));
        }
        let mut m = DMatrix::identity(p, p);
        for (k, (i, j)) in pairs(p).enumerate() {
            m[(i, j)] = rho[k];
            m[(j, i)] = rho[k];
        }
        Self::from_matrix(m)
    }

    /// Assembles a matrix from a row of Fisher values; fixed pairs are 0.
    pub fn from_fisher_slice(g: &[f64], mask: &PairMask) -> Self {
        let p = mask.dim();
        let mut m = DMatrix::identity(p, p);
        for (k, (i, j)) in pairs(p).enumerate() {
            let rho = if mask.is_free(k) { inverse_fisher(g[k]) } else { 0.0 };
            m[(i, j)] = rho;
            m[(j, i)] = rho;
        }
        Self { m }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[(i, j)]
    }

    /// Sets ρ_ij = ρ_ji.
    pub fn set(&mut self, i: usize, j: usize, rho: f64) {
        debug_assert!(i != j);
        self.m[(i, j)] = rho;
        self.m[(j, i)] = rho;
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.m
    }

    /// Per-pair correlations in canonical order.
    pub fn pair_values(&self) -> Vec<f64> {
        pairs(self.dim()).map(|(i, j)| self.m[(i, j)]).collect()
    }

    /// Reads the Fisher values back off the matrix.
    pub fn fisher_values(&self, mask: &PairMask) -> Result<FisherVector> {
        let vals = pairs(self.dim())
            .enumerate()
            .map(|(k, (i, j))| if mask.is_free(k) { fisher(self.m[(i, j)]) } else { Ok(0.0) })
            .collect::<Result<Vec<_>>>()?;
        FisherVector::new(vals, mask.clone())
    }

    pub fn is_pd(&self, tol: f64) -> bool {
        is_positive_definite(&self.m, tol)
    }
}

/// Off-diagonal entries are inverse-Fisher values; fixed-zero pairs are 0.
/// The result is not guaranteed to be positive definite.
pub fn assemble(g: &FisherVector) -> CorrMatrix {
    CorrMatrix::from_fisher_slice(&g.values, &g.mask)
}

/// Admissible open interval for one correlation given all the others.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntryBounds {
    pub lower: f64,
    pub upper: f64,
    pub pair: (usize, usize),
}

impl EntryBounds {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, rho: f64) -> bool {
        rho > self.lower && rho < self.upper
    }

    pub fn is_degenerate(&self) -> bool {
        self.width() < DEGENERATE_WIDTH
    }

    /// The interval on the Fisher scale.
    pub fn fisher_interval(&self) -> (f64, f64) {
        (fisher_endpoint(self.lower), fisher_endpoint(self.upper))
    }
}

/// Interval of values for ρ_ij keeping `r` positive definite, all other
/// entries held fixed.
///
/// With R_i the matrix without row/column i and ρ_i row i without its unit
/// entry, PD is equivalent to 1 − ρ_i' R_i⁻¹ ρ_i > 0, a concave quadratic in
/// ρ_ij whose roots are the bounds. The three coefficients come from two
/// Cholesky solves against R_i.
pub fn entry_bounds(r: &CorrMatrix, i: usize, j: usize) -> Result<EntryBounds> {
    entry_bounds_with_curvature(r, i, j).map(|(b, _)| b)
}

/// As [`entry_bounds`], also returning a = (R_i⁻¹)_jj. The Schur complement
/// 1 − ρ_i' R_i⁻¹ ρ_i at ρ_ij = x equals a (x − L)(U − x).
pub fn entry_bounds_with_curvature(r: &CorrMatrix, i: usize, j: usize) -> Result<(EntryBounds, f64)> {
    let p = r.dim();
    if i == j || i >= p || j >= p {
        return Err(MrsvError::Domain(format!("invalid pair ({i}, {j}) for p = {p}")));
    }
    let (i, j) = if i > j { (i, j) } else { (j, i) };
    if p == 2 {
        return Ok((EntryBounds { lower: -1.0, upper: 1.0, pair: (i, j) }, 1.0));
    }
    let m = r.as_matrix();
    // Submatrix without row/col i. Since j < i, j keeps its position.
    let keep: Vec<usize> = (0..p).filter(|&k| k != i).collect();
    let sub = DMatrix::from_fn(p - 1, p - 1, |a, b| m[(keep[a], keep[b])]);
    let chol = nalgebra::Cholesky::new(sub).ok_or_else(|| {
        MrsvError::NotPositiveDefinite(format!("submatrix without row {i} in bounds for ({i}, {j})"))
    })?;
    // ρ_i with its j-th entry zeroed: R_i⁻¹ applied to it yields b_j'ρ_{i,-j}
    // at position j and ρ_{i,-j}' C_j ρ_{i,-j} as the inner product.
    let rest = DVector::from_fn(p - 1, |a, _| if a == j { 0.0 } else { m[(i, keep[a])] });
    let s = chol.solve(&rest);
    let mut e = DVector::zeros(p - 1);
    e[j] = 1.0;
    let u = chol.solve(&e);
    let a = u[j];
    let b = s[j];
    let c = rest.dot(&s);
    let disc = (b * b - a * (c - 1.0)).max(0.0).sqrt();
    let lower = ((-b - disc) / a).clamp(-1.0, 1.0);
    let upper = ((-b + disc) / a).clamp(-1.0, 1.0);
    Ok((EntryBounds { lower, upper, pair: (i, j) }, a))
}

/// Symmetric square root choice for R_t^{1/2}.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SqrtKind {
    /// P Q^{1/2} from the eigen-decomposition, eigenvalues descending.
    Spectral,
    /// Lower Cholesky factor.
    Cholesky,
}

/// S = P Q^{1/2} with S S' = R. Eigenvalues are sorted in descending order
/// and each eigenvector is signed so that its first nonzero element is
/// positive.
pub fn sqrt_spectral(r: &CorrMatrix) -> Result<DMatrix<f64>> {
    let (p_mat, q) = sorted_eigen(r.as_matrix())?;
    let p = r.dim();
    Ok(DMatrix::from_fn(p, p, |a, b| p_mat[(a, b)] * q[b].sqrt()))
}

/// Eigenvectors (columns) and eigenvalues sorted descending with the sign
/// convention above. Rejects non-PD input.
pub fn sorted_eigen(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let p = m.nrows();
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let q: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    if q[p - 1] <= 0.0 {
        return Err(MrsvError::NotPositiveDefinite(format!("smallest eigenvalue {}", q[p - 1])));
    }
    let mut vecs = DMatrix::zeros(p, p);
    for (col, &k) in order.iter().enumerate() {
        let v = eig.eigenvectors.column(k);
        let lead = v.iter().find(|x| **x != 0.0).copied().unwrap_or(1.0);
        let sign = if lead < 0.0 { -1.0 } else { 1.0 };
        for a in 0..p {
            vecs[(a, col)] = sign * v[a];
        }
    }
    Ok((vecs, q))
}

/// Lower Cholesky factor L with positive diagonal, L L' = R.
pub fn sqrt_cholesky(r: &CorrMatrix) -> Result<DMatrix<f64>> {
    let chol = nalgebra::Cholesky::new(r.as_matrix().clone())
        .ok_or_else(|| MrsvError::NotPositiveDefinite("Cholesky of correlation matrix".into()))?;
    Ok(chol.l())
}

pub fn sqrt_of(r: &CorrMatrix, kind: SqrtKind) -> Result<DMatrix<f64>> {
    match kind {
        SqrtKind::Spectral => sqrt_spectral(r),
        SqrtKind::Cholesky => sqrt_cholesky(r),
    }
}

/// A square root S of R together with its inverse, so that
/// z = S⁻¹ V^{-1/2}(y − m) standardizes returns.
#[derive(Debug, Clone)]
pub struct CorrSqrt {
    pub s: DMatrix<f64>,
    pub s_inv: DMatrix<f64>,
}

impl CorrSqrt {
    pub fn new(r: &CorrMatrix, kind: SqrtKind) -> Result<Self> {
        let p = r.dim();
        match kind {
            SqrtKind::Spectral => {
                let (vecs, q) = sorted_eigen(r.as_matrix())?;
                let s = DMatrix::from_fn(p, p, |a, b| vecs[(a, b)] * q[b].sqrt());
                let s_inv = DMatrix::from_fn(p, p, |a, b| vecs[(b, a)] / q[a].sqrt());
                Ok(Self { s, s_inv })
            }
            SqrtKind::Cholesky => {
                let l = sqrt_cholesky(r)?;
                let s_inv = l
                    .solve_lower_triangular(&DMatrix::identity(p, p))
                    .ok_or_else(|| MrsvError::Numerical("singular Cholesky factor".into()))?;
                Ok(Self { s: l, s_inv })
            }
        }
    }
}

/// True iff the smallest eigenvalue of the symmetric matrix `m` exceeds `tol`.
pub fn is_positive_definite(m: &DMatrix<f64>, tol: f64) -> bool {
    m.nrows() == m.ncols() && linalg::smallest_eigenvalue(m) > tol
}

/// Builds a PD correlation matrix close to the target correlations by
/// inserting pairs one at a time in canonical order, starting from the
/// identity, each clamped into its current admissible interval shrunk by
/// `margin` (a fraction of the interval width).
pub fn project_into_pd(p: usize, target_rho: &[f64], mask: &PairMask, margin: f64) -> CorrMatrix {
    let mut r = CorrMatrix::identity(p);
    for (k, (i, j)) in pairs(p).enumerate() {
        if !mask.is_free(k) {
            continue;
        }
        let b = entry_bounds(&r, i, j).expect("identity-seeded matrix stays PD");
        let pad = margin * b.width();
        let lo = b.lower + pad;
        let hi = b.upper - pad;
        let v = if lo < hi { target_rho[k].clamp(lo, hi) } else { 0.5 * (b.lower + b.upper) };
        r.set(i, j, v);
    }
    r
}

/// A random PD correlation matrix: normalize A A' + εI with A standard normal.
pub fn random_correlation<R: Rng + ?Sized>(p: usize, rng: &mut R) -> CorrMatrix {
    let a = DMatrix::from_fn(p, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let c = &a * a.transpose() + DMatrix::identity(p, p) * 0.05;
    let d: Vec<f64> = (0..p).map(|i| c[(i, i)].sqrt()).collect();
    let mut m = DMatrix::from_fn(p, p, |i, j| c[(i, j)] / (d[i] * d[j]));
    for i in 0..p {
        m[(i, i)] = 1.0;
        for j in 0..i {
            m[(j, i)] = m[(i, j)];
        }
    }
    CorrMatrix { m }
}
