//! Stored MCMC output: one flat numeric row per kept draw, holding θ followed
//! by the time-T latent snapshot.

use nalgebra::{DMatrix, DVector};

use crate::corrmat::{self, CorrSqrt};
use crate::error::{MrsvError, Result};
use crate::model::{Dataset, LatentPaths, Leverage, MeanKind, ModelParams, ModelVariant, VolNoise};
use crate::samplers::{BlockStats, McmcConfig};

/// Column naming and offsets of a draw row for one variant. Names use
/// 1-based asset indices, pairs as `[i,j]` with i > j.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    p: usize,
    leverage: Leverage,
    mean_kind: MeanKind,
    names: Vec<String>,
}

impl ParamLayout {
    pub fn new(variant: &ModelVariant) -> Self {
        Self::from_parts(variant.dim(), variant.leverage, variant.mean_kind)
    }

    pub fn from_parts(p: usize, leverage: Leverage, mean_kind: MeanKind) -> Self {
        let mut names = Vec::new();
        let single = |prefix: &str, names: &mut Vec<String>| {
            for i in 0..p {
                names.push(format!("{prefix}[{}]", i + 1));
            }
        };
        let paired = |prefix: &str, names: &mut Vec<String>| {
            for (i, j) in corrmat::pairs(p) {
                names.push(format!("{prefix}[{},{}]", i + 1, j + 1));
            }
        };
        single("phi", &mut names);
        single("mu", &mut names);
        single("xi", &mut names);
        paired("delta", &mut names);
        single("sigma2_u", &mut names);
        paired("sigma2_v", &mut names);
        paired("sigma2_zeta", &mut names);
        if mean_kind == MeanKind::RandomWalk {
            single("sigma2_m", &mut names);
        }
        let cov = if leverage == Leverage::None { "Omega" } else { "Psi" };
        for i in 0..p {
            for j in 0..=i {
                names.push(format!("{cov}[{},{}]", i + 1, j + 1));
            }
        }
        for c in 0..leverage.n_factors(p) {
            for i in 0..p {
                names.push(format!("Lambda[{},{}]", i + 1, c + 1));
            }
        }
        single("h_T", &mut names);
        paired("g_T", &mut names);
        single("m_T", &mut names);
        if leverage != Leverage::None {
            single("z_T", &mut names);
        }
        Self { p, leverage, mean_kind, names }
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn leverage(&self) -> Leverage {
        self.leverage
    }

    pub fn mean_kind(&self) -> MeanKind {
        self.mean_kind
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn width(&self) -> usize {
        self.names.len()
    }

    pub fn n_sigma2_m(&self) -> usize {
        if self.mean_kind == MeanKind::RandomWalk {
            self.p
        } else {
            0
        }
    }

    /// Number of leading θ columns; the rest is the latent snapshot.
    pub fn n_theta(&self) -> usize {
        let p = self.p;
        let np = corrmat::n_pairs(p);
        3 * p + np + p + 2 * np + self.n_sigma2_m() + p * (p + 1) / 2 + p * self.leverage.n_factors(p)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn flatten(&self, params: &ModelParams, snap: &Snapshot) -> Vec<f64> {
        let p = self.p;
        let mut row = Vec::with_capacity(self.width());
        row.extend(params.phi.iter());
        row.extend(params.mu.iter());
        row.extend(params.xi.iter());
        row.extend(params.delta.iter());
        row.extend(params.sigma2_u.iter());
        row.extend(params.sigma2_v.iter());
        row.extend(params.sigma2_zeta.iter());
        row.extend(params.sigma2_m.iter());
        let cov = params.state_cov();
        for i in 0..p {
            for j in 0..=i {
                row.push(cov[(i, j)]);
            }
        }
        if let Some(l) = params.lambda() {
            for c in 0..self.leverage.n_factors(p) {
                row.extend(l.column(c).iter());
            }
        }
        row.extend(snap.h.iter());
        row.extend(snap.g.iter());
        row.extend(snap.m.iter());
        if let Some(z) = &snap.z {
            row.extend(z.iter());
        }
        debug_assert_eq!(row.len(), self.width());
        row
    }

    pub fn params_at(&self, row: &[f64]) -> ModelParams {
        let p = self.p;
        let np = corrmat::n_pairs(p);
        let mut pos = 0;
        let mut take = |n: usize| {
            let v = DVector::from_column_slice(&row[pos..pos + n]);
            pos += n;
            v
        };
        let phi = take(p);
        let mu = take(p);
        let xi = take(p);
        let delta = take(np);
        let sigma2_u = take(p);
        let sigma2_v = take(np);
        let sigma2_zeta = take(np);
        let sigma2_m = take(self.n_sigma2_m());
        let tri = take(p * (p + 1) / 2);
        let mut cov = DMatrix::zeros(p, p);
        let mut k = 0;
        for i in 0..p {
            for j in 0..=i {
                cov[(i, j)] = tri[k];
                cov[(j, i)] = tri[k];
                k += 1;
            }
        }
        let q = self.leverage.n_factors(p);
        let lam = take(p * q);
        let noise = if self.leverage == Leverage::None {
            VolNoise::Omega(cov)
        } else {
            let lambda = DMatrix::from_fn(p, p, |i, c| if c < q { lam[c * p + i] } else { 0.0 });
            VolNoise::Leverage { psi: cov, lambda }
        };
        ModelParams { phi, mu, xi, delta, sigma2_u, sigma2_v, sigma2_zeta, sigma2_m, noise }
    }

    pub fn snapshot_at(&self, row: &[f64]) -> Snapshot {
        let p = self.p;
        let np = corrmat::n_pairs(p);
        let mut pos = self.n_theta();
        let mut take = |n: usize| {
            let v = DVector::from_column_slice(&row[pos..pos + n]);
            pos += n;
            v
        };
        let h = take(p);
        let g = take(np);
        let m = take(p);
        let z = (self.leverage != Leverage::None).then(|| take(p));
        Snapshot { h, g, m, z }
    }
}

/// Latent state on the last day of the sample, with the standardized return
/// z_T under leverage.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub h: DVector<f64>,
    pub g: DVector<f64>,
    pub m: DVector<f64>,
    pub z: Option<DVector<f64>>,
}

impl Snapshot {
    pub fn from_state(latents: &LatentPaths, data: &Dataset, variant: &ModelVariant) -> Result<Self> {
        let t = latents.len() - 1;
        let h = latents.h_row(t);
        let m = latents.m_row(t);
        let z = if variant.has_leverage() {
            let r = latents.corr(t, &variant.mask);
            let sq = CorrSqrt::new(&r, variant.sqrt_kind).map_err(|_| MrsvError::NonPdAt { t })?;
            Some(sq.s_inv * crate::model::scaled_residual(&data.y_row(t), &m, &h))
        } else {
            None
        };
        Ok(Self { h, g: latents.g.row(t).transpose(), m, z })
    }
}

/// Kept draws plus the chain metadata needed to interpret them.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawStore {
    pub layout: ParamLayout,
    pub variant: ModelVariant,
    pub seed: u64,
    pub n_burnin: usize,
    pub thin: usize,
    /// Number of days in the estimation sample.
    pub t_len: usize,
    pub asset_names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub stats: BlockStats,
    /// Posterior means of the full latent paths; not persisted.
    pub latent_means: Option<LatentPaths>,
    /// Optional full latent paths at a stride of kept draws; not persisted.
    pub paths: Vec<LatentPaths>,
}

impl DrawStore {
    pub fn new(layout: ParamLayout, cfg: &McmcConfig, data: &Dataset) -> Self {
        Self {
            layout,
            variant: cfg.variant.clone(),
            seed: cfg.seed,
            n_burnin: cfg.n_burnin,
            thin: cfg.thin,
            t_len: data.len(),
            asset_names: data.asset_names.clone(),
            rows: Vec::with_capacity(cfg.n_keep),
            stats: BlockStats::default(),
            latent_means: None,
            paths: Vec::new(),
        }
    }

    pub fn push(&mut self, params: &ModelParams, snap: &Snapshot) {
        self.rows.push(self.layout.flatten(params, snap));
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column(&self, idx: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[idx]).collect()
    }

    pub fn column_by_name(&self, name: &str) -> Option<Vec<f64>> {
        self.layout.index_of(name).map(|i| self.column(i))
    }

    pub fn params(&self, k: usize) -> ModelParams {
        self.layout.params_at(&self.rows[k])
    }

    pub fn snapshot(&self, k: usize) -> Snapshot {
        self.layout.snapshot_at(&self.rows[k])
    }

    /// Componentwise posterior mean of θ. Means of PD matrices and of
    /// |φ| < 1 stay in their domains.
    pub fn mean_params(&self) -> Result<ModelParams> {
        if self.rows.is_empty() {
            return Err(MrsvError::Data("empty draw store".into()));
        }
        let w = self.layout.width();
        let mut mean = vec![0.0; w];
        for r in &self.rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        let n = self.rows.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        Ok(self.layout.params_at(&mean))
    }
}
