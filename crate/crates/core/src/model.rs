//! Model variants, parameter/prior/latent containers and the exact joint log
//! posterior density.
//!
//! Time indices are zero-based throughout: `t = 0` is the first day.

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::ln_gamma;

use crate::corrmat::{self, CorrMatrix, CorrSqrt, PairMask, SqrtKind};
use crate::error::{MrsvError, Result};
use crate::linalg::{self, LN_2PI};

/// Leverage structure linking standardized returns z_t to h_{t+1}.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Leverage {
    None,
    /// Unrestricted p×p Λ with matrix-normal prior Λ | Ψ ~ N(M₀, Ψ ⊗ Γ₀).
    Full,
    /// Λ = [λ₁, …, λ_q, 0, …, 0] with an independent normal prior on the
    /// stacked columns.
    Parsimonious(usize),
}

impl Leverage {
    /// Number of nonzero columns of Λ for dimension `p`.
    pub fn n_factors(&self, p: usize) -> usize {
        match *self {
            Leverage::None => 0,
            Leverage::Full => p,
            Leverage::Parsimonious(q) => q,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeanKind {
    RandomWalk,
    /// m_t ≡ m for all t, with a normal prior on m.
    Constant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelVariant {
    pub leverage: Leverage,
    /// Only used when leverage is present.
    pub sqrt_kind: SqrtKind,
    pub mean_kind: MeanKind,
    pub mask: PairMask,
}

impl ModelVariant {
    pub fn no_leverage(p: usize) -> Self {
        Self {
            leverage: Leverage::None,
            sqrt_kind: SqrtKind::Spectral,
            mean_kind: MeanKind::RandomWalk,
            mask: PairMask::all_free(p),
        }
    }

    pub fn with_leverage(p: usize, leverage: Leverage, sqrt_kind: SqrtKind) -> Self {
        Self { leverage, sqrt_kind, ..Self::no_leverage(p) }
    }

    pub fn dim(&self) -> usize {
        self.mask.dim()
    }

    pub fn has_leverage(&self) -> bool {
        self.leverage != Leverage::None
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.dim();
        if p < 2 {
            return Err(MrsvError::Config(format!("need at least two assets, got {p}")));
        }
        if let Leverage::Parsimonious(q) = self.leverage {
            if q == 0 || q > p {
                return Err(MrsvError::Config(format!("parsimonious q = {q} must lie in 1..={p}")));
            }
        }
        Ok(())
    }
}

/// Noise structure of the log-volatility transition.
#[derive(Debug, Clone, PartialEq)]
pub enum VolNoise {
    /// η_t ~ N(0, Ω), no leverage.
    Omega(DMatrix<f64>),
    /// h_{t+1} | y_t, h_t ~ N(μ + Φ(h_t − μ) + Λ z_t, Ψ).
    Leverage { psi: DMatrix<f64>, lambda: DMatrix<f64> },
}

/// θ for one model variant. Per-pair vectors have one slot per pair in
/// canonical order; slots of fixed-zero pairs are carried but unused.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub phi: DVector<f64>,
    pub mu: DVector<f64>,
    pub xi: DVector<f64>,
    pub delta: DVector<f64>,
    pub sigma2_u: DVector<f64>,
    pub sigma2_v: DVector<f64>,
    pub sigma2_zeta: DVector<f64>,
    /// Empty for the constant-mean variant.
    pub sigma2_m: DVector<f64>,
    pub noise: VolNoise,
}

impl ModelParams {
    pub fn dim(&self) -> usize {
        self.phi.len()
    }

    /// Ω without leverage, Ψ with leverage.
    pub fn state_cov(&self) -> &DMatrix<f64> {
        match &self.noise {
            VolNoise::Omega(o) => o,
            VolNoise::Leverage { psi, .. } => psi,
        }
    }

    pub fn lambda(&self) -> Option<&DMatrix<f64>> {
        match &self.noise {
            VolNoise::Omega(_) => None,
            VolNoise::Leverage { lambda, .. } => Some(lambda),
        }
    }

    /// Covariance of h_1: the stationary solution of Ω₀ = ΦΩ₀Φ + Q with Q the
    /// transition noise covariance (Ω, or Ψ under leverage).
    pub fn omega0(&self) -> Result<DMatrix<f64>> {
        stationary_init_cov(&self.phi, self.state_cov())
    }

    pub fn validate(&self, variant: &ModelVariant) -> Result<()> {
        let p = variant.dim();
        let np = corrmat::n_pairs(p);
        let lens = [
            ("phi", self.phi.len(), p),
            ("mu", self.mu.len(), p),
            ("xi", self.xi.len(), p),
            ("sigma2_u", self.sigma2_u.len(), p),
            ("delta", self.delta.len(), np),
            ("sigma2_v", self.sigma2_v.len(), np),
            ("sigma2_zeta", self.sigma2_zeta.len(), np),
        ];
        for (name, got, want) in lens {
            if got != want {
                return Err(MrsvError::Dimension(format!("{name} has length {got}, expected {want}")));
            }
        }
        let want_m = if variant.mean_kind == MeanKind::RandomWalk { p } else { 0 };
        if self.sigma2_m.len() != want_m {
            return Err(MrsvError::Dimension(format!(
                "sigma2_m has length {}, expected {want_m}",
                self.sigma2_m.len()
            )));
        }
        if self.phi.iter().any(|f| !(f.abs() < 1.0)) {
            return Err(MrsvError::Domain("|phi_i| must be < 1".into()));
        }
        let positive = self.sigma2_u.iter().chain(self.sigma2_m.iter()).all(|v| *v > 0.0)
            && variant
                .mask
                .free_indices()
                .all(|k| self.sigma2_v[k] > 0.0 && self.sigma2_zeta[k] >= 0.0);
        if !positive {
            return Err(MrsvError::Domain("variance parameters must be positive".into()));
        }
        match (&self.noise, variant.leverage) {
            (VolNoise::Omega(o), Leverage::None) => check_pd(o, "Omega"),
            (VolNoise::Leverage { psi, lambda }, lev) if lev != Leverage::None => {
                check_pd(psi, "Psi")?;
                if lambda.nrows() != p || lambda.ncols() != p {
                    return Err(MrsvError::Dimension("Lambda must be p x p".into()));
                }
                let q = lev.n_factors(p);
                if (q..p).any(|c| lambda.column(c).iter().any(|v| *v != 0.0)) {
                    return Err(MrsvError::Domain(format!("Lambda columns beyond {q} must be zero")));
                }
                Ok(())
            }
            _ => Err(MrsvError::Config("parameter noise structure does not match the variant".into())),
        }
    }
}

fn check_pd(m: &DMatrix<f64>, name: &str) -> Result<()> {
    if linalg::cholesky(m, name).is_err() {
        return Err(MrsvError::NotPositiveDefinite(name.to_string()));
    }
    Ok(())
}

/// vec(Ω₀) = (I − Φ ⊗ Φ)⁻¹ vec(Ω); with Φ diagonal this is entrywise
/// Ω₀[i,j] = Ω[i,j] / (1 − φ_i φ_j).
pub fn stationary_init_cov(phi: &DVector<f64>, omega: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if phi.iter().any(|f| !(f.abs() < 1.0)) {
        return Err(MrsvError::Domain("stationary covariance needs |phi_i| < 1".into()));
    }
    let p = phi.len();
    Ok(DMatrix::from_fn(p, p, |i, j| omega[(i, j)] / (1.0 - phi[i] * phi[j])))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalPrior {
    pub mean: f64,
    pub var: f64,
}

/// IG(n/2, d/2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvGammaPrior {
    pub n: f64,
    pub d: f64,
}

impl InvGammaPrior {
    pub fn logpdf(&self, x: f64) -> f64 {
        inv_gamma_logpdf(x, 0.5 * self.n, 0.5 * self.d)
    }
}

/// Beta(a, b) on (1 + φ)/2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaPrior {
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvWishartPrior {
    pub nu: f64,
    pub scale: DMatrix<f64>,
}

/// Prior on Λ. `mean` is always Λ-shaped (p×p). `gamma0` is the p×p column
/// covariance of the matrix-normal prior (full leverage) or the pq×pq
/// covariance of the stacked columns (λ₁', …, λ_q')' (parsimonious).
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaPrior {
    pub mean: DMatrix<f64>,
    pub gamma0: DMatrix<f64>,
}

impl LambdaPrior {
    /// Stacked prior mean (λ₁', …, λ_q')'.
    pub fn stacked_mean(&self, q: usize) -> DVector<f64> {
        let p = self.mean.nrows();
        DVector::from_fn(p * q, |k, _| self.mean[(k % p, k / p)])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Priors {
    pub mu: NormalPrior,
    pub xi: NormalPrior,
    pub delta: NormalPrior,
    pub sigma2_u: InvGammaPrior,
    pub sigma2_v: InvGammaPrior,
    pub sigma2_zeta: InvGammaPrior,
    pub sigma2_m: InvGammaPrior,
    pub phi: BetaPrior,
    pub omega: InvWishartPrior,
    pub psi: InvWishartPrior,
    pub lambda: LambdaPrior,
    /// Prior on the level of the constant-mean variant.
    pub const_mean: NormalPrior,
    /// Scale of the diffuse initial distributions of g_1 and m_1.
    pub kappa: f64,
}

impl Priors {
    /// Vague defaults: normals N(0, 10⁴), IG(10⁻⁵/2, 10⁻⁵/2) for the u, v and
    /// m variances, IG(10⁻⁶/2, 10⁻⁶/2) for ζ, Beta(1, 1), IW(10, I), κ = 100.
    pub fn vague(p: usize, leverage: Leverage) -> Self {
        let q = leverage.n_factors(p);
        let gdim = match leverage {
            Leverage::Full => p,
            _ => p * q,
        };
        Self {
            mu: NormalPrior { mean: 0.0, var: 1e4 },
            xi: NormalPrior { mean: 0.0, var: 1e4 },
            delta: NormalPrior { mean: 0.0, var: 1e4 },
            sigma2_u: InvGammaPrior { n: 1e-5, d: 1e-5 },
            sigma2_v: InvGammaPrior { n: 1e-5, d: 1e-5 },
            sigma2_zeta: InvGammaPrior { n: 1e-6, d: 1e-6 },
            sigma2_m: InvGammaPrior { n: 1e-5, d: 1e-5 },
            phi: BetaPrior { a: 1.0, b: 1.0 },
            omega: InvWishartPrior { nu: 10.0, scale: DMatrix::identity(p, p) },
            psi: InvWishartPrior { nu: 10.0, scale: DMatrix::identity(p, p) },
            lambda: LambdaPrior {
                mean: DMatrix::zeros(p, p),
                gamma0: DMatrix::identity(gdim, gdim) * 1e4,
            },
            const_mean: NormalPrior { mean: 0.0, var: 1e4 },
            kappa: 100.0,
        }
    }

    pub fn validate(&self, variant: &ModelVariant) -> Result<()> {
        let p = variant.dim();
        let scales = [self.mu.var, self.xi.var, self.delta.var, self.const_mean.var, self.kappa];
        let ig = [self.sigma2_u, self.sigma2_v, self.sigma2_zeta, self.sigma2_m];
        if scales.iter().any(|s| !(*s > 0.0))
            || ig.iter().any(|g| !(g.n > 0.0 && g.d > 0.0))
            || !(self.phi.a > 0.0 && self.phi.b > 0.0)
        {
            return Err(MrsvError::Config("prior scale hyperparameters must be positive".into()));
        }
        for (name, iw) in [("omega", &self.omega), ("psi", &self.psi)] {
            if !(iw.nu > (p as f64) - 1.0) || iw.scale.nrows() != p {
                return Err(MrsvError::Config(format!("{name} inverse-Wishart needs nu > p - 1 and a p x p scale")));
            }
            check_pd(&iw.scale, name)?;
        }
        if variant.has_leverage() {
            let q = variant.leverage.n_factors(p);
            let gdim = if variant.leverage == Leverage::Full { p } else { p * q };
            if self.lambda.gamma0.nrows() != gdim || self.lambda.mean.nrows() != p || self.lambda.mean.ncols() != p {
                return Err(MrsvError::Config(format!("Lambda prior covariance must be {gdim} x {gdim}")));
            }
            check_pd(&self.lambda.gamma0, "Gamma0")?;
        }
        Ok(())
    }
}

/// Latent trajectories, one row per day.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPaths {
    /// T×p log-volatilities.
    pub h: DMatrix<f64>,
    /// T×pairs Fisher correlations; fixed-zero columns are 0.
    pub g: DMatrix<f64>,
    /// T×p means.
    pub m: DMatrix<f64>,
}

impl LatentPaths {
    pub fn len(&self) -> usize {
        self.h.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.h.nrows() == 0
    }

    pub fn h_row(&self, t: usize) -> DVector<f64> {
        self.h.row(t).transpose()
    }

    pub fn m_row(&self, t: usize) -> DVector<f64> {
        self.m.row(t).transpose()
    }

    pub fn g_row(&self, t: usize) -> Vec<f64> {
        self.g.row(t).iter().cloned().collect()
    }

    pub fn corr(&self, t: usize, mask: &PairMask) -> CorrMatrix {
        let row: Vec<f64> = self.g.row(t).iter().cloned().collect();
        CorrMatrix::from_fisher_slice(&row, mask)
    }
}

/// A T×k panel where each cell may be missing.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedPanel {
    values: DMatrix<f64>,
    present: DMatrix<u8>,
}

impl MaskedPanel {
    pub fn full(values: DMatrix<f64>) -> Self {
        let present = DMatrix::from_element(values.nrows(), values.ncols(), 1u8);
        Self { values, present }
    }

    pub fn empty(rows: usize, cols: usize) -> Self {
        Self { values: DMatrix::zeros(rows, cols), present: DMatrix::zeros(rows, cols) }
    }

    pub fn from_options(rows: usize, cols: usize, cells: impl Fn(usize, usize) -> Option<f64>) -> Self {
        let mut out = Self::empty(rows, cols);
        for t in 0..rows {
            for k in 0..cols {
                if let Some(v) = cells(t, k) {
                    out.set(t, k, Some(v));
                }
            }
        }
        out
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn get(&self, t: usize, k: usize) -> Option<f64> {
        (self.present[(t, k)] != 0).then(|| self.values[(t, k)])
    }

    pub fn is_present(&self, t: usize, k: usize) -> bool {
        self.present[(t, k)] != 0
    }

    pub fn set(&mut self, t: usize, k: usize, v: Option<f64>) {
        match v {
            Some(v) => {
                self.values[(t, k)] = v;
                self.present[(t, k)] = 1;
            }
            None => {
                self.values[(t, k)] = 0.0;
                self.present[(t, k)] = 0;
            }
        }
    }

    pub fn count_present(&self, k: usize) -> usize {
        self.present.column(k).iter().filter(|v| **v != 0).count()
    }

    pub fn n_missing(&self) -> usize {
        self.present.iter().filter(|v| **v == 0).count()
    }

    /// Rows `start..start + len`.
    pub fn rows(&self, start: usize, len: usize) -> Self {
        Self {
            values: self.values.rows(start, len).into_owned(),
            present: self.present.rows(start, len).into_owned(),
        }
    }

    /// Columns reordered so that new column `c` is old column `order[c]`.
    pub fn select_columns(&self, order: &[usize]) -> Self {
        Self {
            values: self.values.select_columns(order),
            present: self.present.select_columns(order),
        }
    }
}

/// Observed data: returns y (complete), log realized variances x and Fisher
/// transformed realized correlations w (both possibly missing per cell).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub y: DMatrix<f64>,
    pub x: MaskedPanel,
    pub w: MaskedPanel,
    pub asset_names: Vec<String>,
    /// One label per day; defaults to "1", "2", ...
    pub dates: Vec<String>,
}

impl Dataset {
    pub fn new(y: DMatrix<f64>, x: MaskedPanel, w: MaskedPanel, asset_names: Vec<String>) -> Result<Self> {
        let (t, p) = y.shape();
        if x.nrows() != t || x.ncols() != p || w.nrows() != t || w.ncols() != corrmat::n_pairs(p) {
            return Err(MrsvError::Dimension(format!(
                "y is {t}x{p}, x is {}x{}, w is {}x{}",
                x.nrows(),
                x.ncols(),
                w.nrows(),
                w.ncols()
            )));
        }
        if asset_names.len() != p {
            return Err(MrsvError::Dimension(format!("{} asset names for {p} assets", asset_names.len())));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(MrsvError::Data("returns must be finite and fully observed".into()));
        }
        for (panel, name) in [(&x, "x"), (&w, "w")] {
            for r in 0..t {
                for c in 0..panel.ncols() {
                    if panel.get(r, c).is_some_and(|v| !v.is_finite()) {
                        return Err(MrsvError::Data(format!("non-finite {name} at ({r}, {c})")));
                    }
                }
            }
        }
        let dates = (1..=t).map(|d| d.to_string()).collect();
        Ok(Self { y, x, w, asset_names, dates })
    }

    pub fn with_dates(mut self, dates: Vec<String>) -> Result<Self> {
        if dates.len() != self.len() {
            return Err(MrsvError::Dimension(format!("{} dates for {} days", dates.len(), self.len())));
        }
        self.dates = dates;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.y.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.y.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.y.ncols()
    }

    pub fn y_row(&self, t: usize) -> DVector<f64> {
        self.y.row(t).transpose()
    }

    /// Days `start..start + len`.
    pub fn window(&self, start: usize, len: usize) -> Self {
        Self {
            y: self.y.rows(start, len).into_owned(),
            x: self.x.rows(start, len),
            w: self.w.rows(start, len),
            asset_names: self.asset_names.clone(),
            dates: self.dates[start..start + len].to_vec(),
        }
    }

    /// Reorders assets (`order[new] = old`) and the pair columns with them.
    pub fn permute_assets(&self, order: &[usize]) -> Self {
        let p = self.dim();
        let pair_order: Vec<usize> =
            corrmat::pairs(p).map(|(i, j)| corrmat::pair_index(order[i], order[j])).collect();
        Self {
            y: self.y.select_columns(order),
            x: self.x.select_columns(order),
            w: self.w.select_columns(&pair_order),
            asset_names: order.iter().map(|&k| self.asset_names[k].clone()).collect(),
            dates: self.dates.clone(),
        }
    }
}

/// e_t = V_t^{-1/2}(y_t − m_t): returns scaled by exp(−h/2).
pub fn scaled_residual(y: &DVector<f64>, m: &DVector<f64>, h: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(y.len(), |i, _| (y[i] - m[i]) * (-0.5 * h[i]).exp())
}

/// z_t = R_t^{-1/2} V_t^{-1/2} (y_t − m_t) for the chosen square root.
pub fn standardized_return(
    y: &DVector<f64>,
    m: &DVector<f64>,
    h: &DVector<f64>,
    r: &CorrMatrix,
    kind: SqrtKind,
) -> Result<DVector<f64>> {
    let sq = CorrSqrt::new(r, kind)?;
    Ok(&sq.s_inv * scaled_residual(y, m, h))
}

/// log N(y_t; m_t, V^{1/2} R V^{1/2}).
pub fn return_loglik(y: &DVector<f64>, m: &DVector<f64>, h: &DVector<f64>, r: &CorrMatrix) -> Result<f64> {
    let chol = nalgebra::Cholesky::new(r.as_matrix().clone())
        .ok_or_else(|| MrsvError::NotPositiveDefinite("R_t".into()))?;
    let e = scaled_residual(y, m, h);
    let p = y.len() as f64;
    Ok(-0.5 * (p * LN_2PI + h.sum() + linalg::chol_logdet(&chol) + linalg::chol_quad(&chol, &e)))
}

pub fn inv_gamma_logpdf(x: f64, shape: f64, scale: f64) -> f64 {
    shape * scale.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - scale / x
}

pub fn ln_multigamma(p: usize, a: f64) -> f64 {
    let pf = p as f64;
    0.25 * pf * (pf - 1.0) * std::f64::consts::PI.ln()
        + (0..p).map(|j| ln_gamma(a - 0.5 * j as f64)).sum::<f64>()
}

/// log IW(x; ν, S) with density ∝ |X|^{-(ν+p+1)/2} exp(−½ tr(S X⁻¹)).
pub fn inv_wishart_logpdf(x: &DMatrix<f64>, nu: f64, scale: &DMatrix<f64>) -> Result<f64> {
    let p = x.nrows();
    let cx = linalg::cholesky(x, "inverse-Wishart argument")?;
    let cs = linalg::cholesky(scale, "inverse-Wishart scale")?;
    let tr = (cx.solve(scale)).trace();
    Ok(0.5 * nu * linalg::chol_logdet(&cs)
        - 0.5 * nu * p as f64 * std::f64::consts::LN_2
        - ln_multigamma(p, 0.5 * nu)
        - 0.5 * (nu + p as f64 + 1.0) * linalg::chol_logdet(&cx)
        - 0.5 * tr)
}

/// log of the Beta(a, b) prior on (1 + φ)/2 expressed as a density in φ.
pub fn phi_prior_logpdf(phi: f64, prior: &BetaPrior) -> f64 {
    let u = 0.5 * (1.0 + phi);
    let ln_beta = ln_gamma(prior.a) + ln_gamma(prior.b) - ln_gamma(prior.a + prior.b);
    (prior.a - 1.0) * u.ln() + (prior.b - 1.0) * (1.0 - u).ln() - ln_beta - std::f64::consts::LN_2
}

/// Log prior density of Λ under the variant's prior.
pub fn lambda_prior_logpdf(
    lambda: &DMatrix<f64>,
    psi: &DMatrix<f64>,
    prior: &LambdaPrior,
    leverage: Leverage,
) -> Result<f64> {
    let p = lambda.nrows();
    match leverage {
        Leverage::None => Ok(0.0),
        Leverage::Full => {
            // vec(Λ') ~ N(vec(M₀'), Ψ ⊗ Γ₀)
            let d = lambda - &prior.mean;
            let cp = linalg::cholesky(psi, "Psi")?;
            let cg = linalg::cholesky(&prior.gamma0, "Gamma0")?;
            let inner = cp.solve(&d) * cg.solve(&d.transpose());
            let pf = p as f64;
            Ok(-0.5 * (pf * pf * LN_2PI + pf * linalg::chol_logdet(&cp) + pf * linalg::chol_logdet(&cg) + inner.trace()))
        }
        Leverage::Parsimonious(q) => {
            let stacked = DVector::from_fn(p * q, |k, _| lambda[(k % p, k / p)]);
            linalg::mvn_logpdf(&stacked, &prior.stacked_mean(q), &prior.gamma0)
        }
    }
}

/// Log prior π(θ) including all normalizing constants.
pub fn log_prior(params: &ModelParams, priors: &Priors, variant: &ModelVariant) -> Result<f64> {
    let p = params.dim();
    let mut lp = 0.0;
    for i in 0..p {
        lp += linalg::normal_logpdf(params.mu[i], priors.mu.mean, priors.mu.var);
        lp += linalg::normal_logpdf(params.xi[i], priors.xi.mean, priors.xi.var);
        lp += priors.sigma2_u.logpdf(params.sigma2_u[i]);
        lp += phi_prior_logpdf(params.phi[i], &priors.phi);
    }
    for k in variant.mask.free_indices() {
        lp += linalg::normal_logpdf(params.delta[k], priors.delta.mean, priors.delta.var);
        lp += priors.sigma2_v.logpdf(params.sigma2_v[k]);
        lp += priors.sigma2_zeta.logpdf(params.sigma2_zeta[k]);
    }
    lp += params.sigma2_m.iter().map(|s| priors.sigma2_m.logpdf(*s)).sum::<f64>();
    match &params.noise {
        VolNoise::Omega(o) => lp += inv_wishart_logpdf(o, priors.omega.nu, &priors.omega.scale)?,
        VolNoise::Leverage { psi, lambda } => {
            lp += inv_wishart_logpdf(psi, priors.psi.nu, &priors.psi.scale)?;
            lp += lambda_prior_logpdf(lambda, psi, &priors.lambda, variant.leverage)?;
        }
    }
    Ok(lp)
}

/// The factors of the joint posterior, kept separate for testing and for
/// isolating a block's contribution.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct JointTerms {
    pub returns: f64,
    pub h_init: f64,
    pub h_transitions: f64,
    pub x_measurement: f64,
    pub w_measurement: f64,
    pub g_paths: f64,
    pub m_paths: f64,
    pub prior: f64,
}

impl JointTerms {
    pub fn total(&self) -> f64 {
        self.returns
            + self.h_init
            + self.h_transitions
            + self.x_measurement
            + self.w_measurement
            + self.g_paths
            + self.m_paths
            + self.prior
    }
}

/// Evaluates every factor of log π(θ, g, h, m | w, x, y) up to no constant:
/// all densities carry their normalizing constants.
pub fn log_joint_terms(
    params: &ModelParams,
    latents: &LatentPaths,
    data: &Dataset,
    priors: &Priors,
    variant: &ModelVariant,
) -> Result<JointTerms> {
    let t_len = data.len();
    let p = data.dim();
    let mask = &variant.mask;
    let mut terms = JointTerms::default();

    let q_chol = linalg::cholesky(params.state_cov(), "transition covariance")?;
    let q_logdet = linalg::chol_logdet(&q_chol);
    let phi = &params.phi;
    let mu = &params.mu;

    for t in 0..t_len {
        let r = latents.corr(t, mask);
        let y = data.y_row(t);
        let h = latents.h_row(t);
        let m = latents.m_row(t);
        terms.returns += return_loglik(&y, &m, &h, &r).map_err(|_| MrsvError::NonPdAt { t })?;

        if t + 1 < t_len {
            let h_next = latents.h_row(t + 1);
            let mut mean = mu + phi.component_mul(&(&h - mu));
            if let Some(lambda) = params.lambda() {
                let z = standardized_return(&y, &m, &h, &r, variant.sqrt_kind)
                    .map_err(|_| MrsvError::NonPdAt { t })?;
                mean += lambda * z;
            }
            let d = h_next - mean;
            terms.h_transitions += -0.5 * (p as f64 * LN_2PI + q_logdet + linalg::chol_quad(&q_chol, &d));
        }
    }

    let omega0 = params.omega0()?;
    terms.h_init = linalg::mvn_logpdf(&latents.h_row(0), mu, &omega0)?;

    for i in 0..p {
        for t in 0..t_len {
            if let Some(x) = data.x.get(t, i) {
                terms.x_measurement +=
                    linalg::normal_logpdf(x, params.xi[i] + latents.h[(t, i)], params.sigma2_u[i]);
            }
        }
    }

    let kappa = priors.kappa;
    for k in mask.free_indices() {
        let s2z = params.sigma2_zeta[k];
        terms.g_paths += linalg::normal_logpdf(latents.g[(0, k)], 0.0, kappa * s2z);
        for t in 1..t_len {
            terms.g_paths += linalg::normal_logpdf(latents.g[(t, k)], latents.g[(t - 1, k)], s2z);
        }
        for t in 0..t_len {
            if let Some(w) = data.w.get(t, k) {
                terms.w_measurement +=
                    linalg::normal_logpdf(w, params.delta[k] + latents.g[(t, k)], params.sigma2_v[k]);
            }
        }
    }

    match variant.mean_kind {
        MeanKind::RandomWalk => {
            for i in 0..p {
                let s2m = params.sigma2_m[i];
                terms.m_paths += linalg::normal_logpdf(latents.m[(0, i)], 0.0, kappa * s2m);
                for t in 1..t_len {
                    terms.m_paths += linalg::normal_logpdf(latents.m[(t, i)], latents.m[(t - 1, i)], s2m);
                }
            }
        }
        MeanKind::Constant => {
            for i in 0..p {
                terms.m_paths +=
                    linalg::normal_logpdf(latents.m[(0, i)], priors.const_mean.mean, priors.const_mean.var);
            }
        }
    }

    terms.prior = log_prior(params, priors, variant)?;
    Ok(terms)
}

/// log π(θ, g, h, m | w, x, y) with all normalizing constants.
pub fn log_joint_posterior(
    params: &ModelParams,
    latents: &LatentPaths,
    data: &Dataset,
    priors: &Priors,
    variant: &ModelVariant,
) -> Result<f64> {
    Ok(log_joint_terms(params, latents, data, priors, variant)?.total())
}
