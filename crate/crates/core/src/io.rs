//! File formats, realized-measure computation and run configuration.
//!
//! Returns and realized-variance files are comma-separated date × asset
//! matrices with one header row (`date,<asset>,...`); empty cells are
//! missing. Realized correlations are long-form `date,asset_i,asset_j,value`
//! rows. Draw files are a text header terminated by `END\n` followed by
//! little-endian f64 rows.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::corrmat::{self, PairMask, SqrtKind};
use crate::draws::{DrawStore, ParamLayout};
use crate::error::{MrsvError, Result};
use crate::model::{
    BetaPrior, Dataset, InvGammaPrior, InvWishartPrior, LambdaPrior, LatentPaths, Leverage, MaskedPanel, MeanKind,
    ModelParams, ModelVariant, NormalPrior, Priors,
};
use crate::samplers::{BlockStats, Counter, McmcConfig};

/// Realized correlations at or beyond ±1 are pulled to ±(1 − this) in clamp mode.
pub const RCOR_CLAMP: f64 = 1e-8;

const DRAWS_MAGIC: &str = "MRSV-DRAWS";
const DRAWS_VERSION: u32 = 1;

fn fmt(v: f64) -> String {
    format!("{v:?}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

fn parse_cell(s: &str, what: &str) -> Result<Option<f64>> {
    let s = s.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("nan") {
        return Ok(None);
    }
    s.parse::<f64>()
        .map(Some)
        .map_err(|_| MrsvError::Data(format!("non-numeric cell {s:?} in {what}")))
}

/// What to do with realized correlations of magnitude ≥ 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RcorPolicy {
    #[default]
    Clamp,
    Strict,
}

/// A date × asset table of optional values.
struct Table {
    assets: Vec<String>,
    dates: Vec<String>,
    cells: Vec<Vec<Option<f64>>>,
}

fn read_table(path: &Path) -> Result<Table> {
    let what = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let header = rdr.headers()?.clone();
    if header.len() < 2 {
        return Err(MrsvError::Data(format!("{what}: need a date column and at least one asset")));
    }
    let assets: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut dates = Vec::new();
    let mut cells = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(MrsvError::Data(format!("{what}: row {} has {} fields", dates.len() + 1, rec.len())));
        }
        dates.push(rec[0].to_string());
        cells.push(rec.iter().skip(1).map(|c| parse_cell(c, &what)).collect::<Result<Vec<_>>>()?);
    }
    Ok(Table { assets, dates, cells })
}

fn write_table(path: &Path, assets: &[String], dates: &[String], cell: impl Fn(usize, usize) -> Option<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["date".to_string()];
    header.extend(assets.iter().cloned());
    w.write_record(&header)?;
    for (t, d) in dates.iter().enumerate() {
        let mut row = vec![d.clone()];
        row.extend((0..assets.len()).map(|i| fmt_opt(cell(t, i))));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Maps a realized correlation into (−1, 1) per the policy.
pub fn admit_rcor(rho: f64, policy: RcorPolicy) -> Result<f64> {
    if rho.abs() < 1.0 {
        return Ok(rho);
    }
    match policy {
        RcorPolicy::Strict => Err(MrsvError::Data(format!("realized correlation {rho} outside (-1, 1)"))),
        RcorPolicy::Clamp if rho.abs() <= 1.0 + 1e-6 => {
            log::warn!("realized correlation {rho} clamped");
            Ok(rho.signum() * (1.0 - RCOR_CLAMP))
        }
        RcorPolicy::Clamp => Err(MrsvError::Data(format!("realized correlation {rho} is not a correlation"))),
    }
}

/// Reads returns, and optionally realized variances and long-form realized
/// correlations. x = ln RV and w = fisher(RCOR) are applied here.
pub fn read_dataset(returns: &Path, rv: Option<&Path>, rcor: Option<&Path>, policy: RcorPolicy) -> Result<Dataset> {
    let ret = read_table(returns)?;
    let (t_len, p) = (ret.dates.len(), ret.assets.len());
    if t_len == 0 {
        return Err(MrsvError::Data(format!("{}: no rows", returns.display())));
    }
    let mut seen = HashSet::new();
    if let Some(d) = ret.dates.iter().find(|d| !seen.insert(d.as_str())) {
        return Err(MrsvError::Data(format!("duplicate date {d} in returns")));
    }
    let y = DMatrix::from_fn(t_len, p, |t, i| ret.cells[t][i].unwrap_or(f64::NAN));
    if y.iter().any(|v| v.is_nan()) {
        return Err(MrsvError::Data("returns must not have missing cells".into()));
    }
    let asset_pos: HashMap<&str, usize> = ret.assets.iter().enumerate().map(|(i, a)| (a.as_str(), i)).collect();
    let date_pos: HashMap<&str, usize> = ret.dates.iter().enumerate().map(|(t, d)| (d.as_str(), t)).collect();

    let mut x = MaskedPanel::empty(t_len, p);
    if let Some(path) = rv {
        let tab = read_table(path)?;
        if tab.dates != ret.dates {
            return Err(MrsvError::Data(format!("{}: dates do not match the returns file", path.display())));
        }
        for (c, a) in tab.assets.iter().enumerate() {
            let i = *asset_pos
                .get(a.as_str())
                .ok_or_else(|| MrsvError::Data(format!("{}: unknown asset {a}", path.display())))?;
            for t in 0..t_len {
                if let Some(v) = tab.cells[t][c] {
                    if !(v > 0.0) || !v.is_finite() {
                        return Err(MrsvError::Data(format!("realized variance {v} for {a} on {}", tab.dates[t])));
                    }
                    x.set(t, i, Some(v.ln()));
                }
            }
        }
    }

    let mut w = MaskedPanel::empty(t_len, corrmat::n_pairs(p));
    if let Some(path) = rcor {
        let what = path.display().to_string();
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
        let mut filled = HashSet::new();
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != 4 {
                return Err(MrsvError::Data(format!("{what}: expected date,asset_i,asset_j,value")));
            }
            let t = *date_pos
                .get(&rec[0])
                .ok_or_else(|| MrsvError::Data(format!("{what}: date {} not in returns", &rec[0])))?;
            let lookup = |a: &str| {
                asset_pos.get(a).copied().ok_or_else(|| MrsvError::Data(format!("{what}: unknown asset {a}")))
            };
            let (a, b) = (lookup(&rec[1])?, lookup(&rec[2])?);
            if a == b {
                return Err(MrsvError::Data(format!("{what}: correlation of {} with itself", &rec[1])));
            }
            let k = corrmat::pair_index(a.max(b), a.min(b));
            if !filled.insert((t, k)) {
                return Err(MrsvError::Data(format!("{what}: duplicate pair on {}", &rec[0])));
            }
            if let Some(v) = parse_cell(&rec[3], &what)? {
                w.set(t, k, Some(corrmat::fisher(admit_rcor(v, policy)?)?));
            }
        }
    }
    Dataset::new(y, x, w, ret.assets)?.with_dates(ret.dates)
}

/// Writes the three files read by [`read_dataset`]. Missing cells are left
/// empty; missing correlations are omitted from the long-form file.
pub fn write_dataset(data: &Dataset, returns: &Path, rv: &Path, rcor: &Path) -> Result<()> {
    write_table(returns, &data.asset_names, &data.dates, |t, i| Some(data.y[(t, i)]))?;
    write_table(rv, &data.asset_names, &data.dates, |t, i| data.x.get(t, i).map(f64::exp))?;
    let mut w = csv::Writer::from_path(rcor)?;
    w.write_record(["date", "asset_i", "asset_j", "value"])?;
    for t in 0..data.len() {
        for (k, (i, j)) in corrmat::pairs(data.dim()).enumerate() {
            if let Some(g) = data.w.get(t, k) {
                w.write_record([
                    data.dates[t].as_str(),
                    data.asset_names[i].as_str(),
                    data.asset_names[j].as_str(),
                    &fmt(corrmat::inverse_fisher(g)),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Intraday returns per (day, bin, asset), each bin possibly unobserved.
#[derive(Debug, Clone, PartialEq)]
pub struct IntradayGrid {
    n_days: usize,
    bins: usize,
    p: usize,
    values: Vec<Option<f64>>,
}

impl IntradayGrid {
    pub fn new(n_days: usize, bins: usize, p: usize) -> Self {
        Self { n_days, bins, p, values: vec![None; n_days * bins * p] }
    }

    pub fn n_days(&self) -> usize {
        self.n_days
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    fn idx(&self, day: usize, bin: usize, asset: usize) -> usize {
        assert!(day < self.n_days && bin < self.bins && asset < self.p, "intraday index out of range");
        (day * self.bins + bin) * self.p + asset
    }

    pub fn get(&self, day: usize, bin: usize, asset: usize) -> Option<f64> {
        self.values[self.idx(day, bin, asset)]
    }

    pub fn set(&mut self, day: usize, bin: usize, asset: usize, v: Option<f64>) {
        let k = self.idx(day, bin, asset);
        self.values[k] = v;
    }
}

/// Realized measures from an intraday grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RealizedMeasures {
    /// Σ r² over the asset's available bins (days × assets).
    pub rv: MaskedPanel,
    /// Pairwise-synchronized realized correlation (days × pairs), not clamped.
    pub rcor: MaskedPanel,
}

/// RV from each asset's own bins; RCOR per pair from bins where both assets
/// are observed, normalized by RVs over those same bins. Cells with fewer
/// than two usable bins, or a zero pair variance, are missing.
pub fn compute_realized_measures(grid: &IntradayGrid) -> RealizedMeasures {
    let (n, bins, p) = (grid.n_days, grid.bins, grid.p);
    let mut rv = MaskedPanel::empty(n, p);
    let mut rcor = MaskedPanel::empty(n, corrmat::n_pairs(p));
    for d in 0..n {
        for i in 0..p {
            let obs: Vec<f64> = (0..bins).filter_map(|b| grid.get(d, b, i)).collect();
            if obs.len() >= 2 {
                rv.set(d, i, Some(obs.iter().map(|r| r * r).sum()));
            }
        }
        for (k, (i, j)) in corrmat::pairs(p).enumerate() {
            let (mut sij, mut sii, mut sjj, mut cnt) = (0.0, 0.0, 0.0, 0usize);
            for b in 0..bins {
                if let (Some(ri), Some(rj)) = (grid.get(d, b, i), grid.get(d, b, j)) {
                    sij += ri * rj;
                    sii += ri * ri;
                    sjj += rj * rj;
                    cnt += 1;
                }
            }
            if cnt >= 2 && sii > 0.0 && sjj > 0.0 {
                rcor.set(d, k, Some(sij / (sii * sjj).sqrt()));
            }
        }
    }
    RealizedMeasures { rv, rcor }
}

/// Turns realized measures into measurement panels x = ln RV, w = fisher(RCOR).
pub fn measures_to_panels(m: &RealizedMeasures, policy: RcorPolicy) -> Result<(MaskedPanel, MaskedPanel)> {
    let mut x = MaskedPanel::empty(m.rv.nrows(), m.rv.ncols());
    for t in 0..m.rv.nrows() {
        for i in 0..m.rv.ncols() {
            x.set(t, i, m.rv.get(t, i).filter(|v| *v > 0.0).map(f64::ln));
        }
    }
    let mut w = MaskedPanel::empty(m.rcor.nrows(), m.rcor.ncols());
    for t in 0..m.rcor.nrows() {
        for k in 0..m.rcor.ncols() {
            if let Some(r) = m.rcor.get(t, k) {
                w.set(t, k, Some(corrmat::fisher(admit_rcor(r, policy)?)?));
            }
        }
    }
    Ok((x, w))
}

/// Realized covariance of day t, √(RV_i RV_j)·RCOR_ij, from the measurement
/// panels of a dataset; fixed-zero pairs contribute 0. `None` if any other
/// cell is missing.
pub fn realized_covariance(data: &Dataset, mask: &PairMask, t: usize) -> Option<DMatrix<f64>> {
    let p = data.dim();
    let sd: Vec<f64> = (0..p).map(|i| data.x.get(t, i).map(|x| (0.5 * x).exp())).collect::<Option<_>>()?;
    let mut c = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(p, |i, _| sd[i] * sd[i]));
    for (k, (i, j)) in corrmat::pairs(p).enumerate() {
        let rho = match data.w.get(t, k) {
            Some(g) => corrmat::inverse_fisher(g),
            None if !mask.is_free(k) => 0.0,
            None => return None,
        };
        c[(i, j)] = sd[i] * sd[j] * rho;
        c[(j, i)] = c[(i, j)];
    }
    Some(c)
}

/// Parses `none`, `full` or `pars:q`.
pub fn parse_leverage(s: &str) -> Result<Leverage> {
    let s = s.trim().to_ascii_lowercase();
    match s.as_str() {
        "none" => Ok(Leverage::None),
        "full" => Ok(Leverage::Full),
        _ => s
            .strip_prefix("pars:")
            .and_then(|q| q.parse::<usize>().ok())
            .filter(|q| *q > 0)
            .map(Leverage::Parsimonious)
            .ok_or_else(|| MrsvError::Config(format!("variant {s:?}: expected none, full or pars:q"))),
    }
}

pub fn leverage_label(l: Leverage) -> String {
    match l {
        Leverage::None => "none".into(),
        Leverage::Full => "full".into(),
        Leverage::Parsimonious(q) => format!("pars:{q}"),
    }
}

pub fn parse_sqrt(s: &str) -> Result<SqrtKind> {
    match s.trim().to_ascii_lowercase().as_str() {
        "spectral" => Ok(SqrtKind::Spectral),
        "cholesky" => Ok(SqrtKind::Cholesky),
        other => Err(MrsvError::Config(format!("sqrt {other:?}: expected spectral or cholesky"))),
    }
}

pub fn sqrt_label(k: SqrtKind) -> &'static str {
    match k {
        SqrtKind::Spectral => "spectral",
        SqrtKind::Cholesky => "cholesky",
    }
}

fn parse_mean_kind(s: &str) -> Result<MeanKind> {
    match s.trim().to_ascii_lowercase().as_str() {
        "random_walk" | "rw" => Ok(MeanKind::RandomWalk),
        "constant" => Ok(MeanKind::Constant),
        other => Err(MrsvError::Config(format!("mean {other:?}: expected random_walk or constant"))),
    }
}

fn mean_kind_label(m: MeanKind) -> &'static str {
    match m {
        MeanKind::RandomWalk => "random_walk",
        MeanKind::Constant => "constant",
    }
}

/// Scalar prior hyperparameters; matrix-valued ones are multiples of I.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec {
    pub mu: NormalPrior,
    pub xi: NormalPrior,
    pub delta: NormalPrior,
    pub sigma2_u: InvGammaPrior,
    pub sigma2_v: InvGammaPrior,
    pub sigma2_zeta: InvGammaPrior,
    pub sigma2_m: InvGammaPrior,
    pub phi: BetaPrior,
    pub omega_nu: f64,
    pub omega_scale: f64,
    pub psi_nu: f64,
    pub psi_scale: f64,
    pub lambda_mean: f64,
    pub lambda_var: f64,
    pub const_mean: NormalPrior,
    pub kappa: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        let v = Priors::vague(2, Leverage::None);
        Self {
            mu: v.mu,
            xi: v.xi,
            delta: v.delta,
            sigma2_u: v.sigma2_u,
            sigma2_v: v.sigma2_v,
            sigma2_zeta: v.sigma2_zeta,
            sigma2_m: v.sigma2_m,
            phi: v.phi,
            omega_nu: v.omega.nu,
            omega_scale: 1.0,
            psi_nu: v.psi.nu,
            psi_scale: 1.0,
            lambda_mean: 0.0,
            lambda_var: 1e4,
            const_mean: v.const_mean,
            kappa: v.kappa,
        }
    }
}

impl PriorSpec {
    pub fn build(&self, p: usize, leverage: Leverage) -> Priors {
        let gdim = match leverage {
            Leverage::Full => p,
            l => p * l.n_factors(p),
        };
        Priors {
            mu: self.mu,
            xi: self.xi,
            delta: self.delta,
            sigma2_u: self.sigma2_u,
            sigma2_v: self.sigma2_v,
            sigma2_zeta: self.sigma2_zeta,
            sigma2_m: self.sigma2_m,
            phi: self.phi,
            omega: InvWishartPrior { nu: self.omega_nu, scale: DMatrix::identity(p, p) * self.omega_scale },
            psi: InvWishartPrior { nu: self.psi_nu, scale: DMatrix::identity(p, p) * self.psi_scale },
            lambda: LambdaPrior {
                mean: DMatrix::from_element(p, p, self.lambda_mean),
                gamma0: DMatrix::identity(gdim, gdim) * self.lambda_var,
            },
            const_mean: self.const_mean,
            kappa: self.kappa,
        }
    }
}

/// Everything a CLI run can be configured with. Parsed from flat
/// `key = value` text with `#` comments.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub returns: Option<PathBuf>,
    pub rv: Option<PathBuf>,
    pub rcor: Option<PathBuf>,
    pub draws: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub leverage: Leverage,
    pub sqrt_kind: SqrtKind,
    pub mean_kind: MeanKind,
    /// Pairs fixed at zero correlation, zero-based with i > j.
    pub fixed_zero: Vec<(usize, usize)>,
    pub strict_rcor: bool,
    pub n_burnin: usize,
    pub n_keep: usize,
    pub thin: usize,
    pub pd_tol: f64,
    pub priors: PriorSpec,
    pub sim_t: usize,
    pub sim_p: usize,
    pub sim_missing_rate: f64,
    /// Leverage loading used by `simulate`; the reference value when unset.
    pub sim_lambda: Option<f64>,
    pub window: usize,
    pub steps: usize,
    pub refit_burnin: usize,
    pub refit_keep: usize,
    pub target_mu: Vec<f64>,
    pub risk_free: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            returns: None,
            rv: None,
            rcor: None,
            draws: None,
            out: PathBuf::from("out"),
            seed: 1,
            leverage: Leverage::None,
            sqrt_kind: SqrtKind::Spectral,
            mean_kind: MeanKind::RandomWalk,
            fixed_zero: Vec::new(),
            strict_rcor: false,
            n_burnin: 1000,
            n_keep: 1000,
            thin: 1,
            pd_tol: corrmat::DEFAULT_PD_TOL,
            priors: PriorSpec::default(),
            sim_t: 500,
            sim_p: 3,
            sim_missing_rate: 0.0,
            sim_lambda: None,
            window: 300,
            steps: 30,
            refit_burnin: 200,
            refit_keep: 400,
            target_mu: vec![0.05],
            risk_free: 0.0,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse::<T>().map_err(|_| MrsvError::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_pairs(key: &str, v: &str) -> Result<Vec<(usize, usize)>> {
    v.split(|c| c == ';' || c == ',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            let (a, b) = s.split_once('-').ok_or_else(|| MrsvError::Config(format!("{key}: pair {s:?} is not i-j")))?;
            let (a, b): (usize, usize) = (num(key, a.trim())?, num(key, b.trim())?);
            if a == 0 || b == 0 || a == b {
                return Err(MrsvError::Config(format!("{key}: pair {s:?} needs distinct 1-based assets")));
            }
            Ok((a.max(b) - 1, a.min(b) - 1))
        })
        .collect()
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut cfg = Self::default();
        cfg.apply_text(&text, path.parent())?;
        Ok(cfg)
    }

    /// Applies `key = value` lines. Relative paths resolve against `base`.
    pub fn apply_text(&mut self, text: &str, base: Option<&Path>) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| MrsvError::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v.trim(), base)?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, v: &str, base: Option<&Path>) -> Result<()> {
        let path = |v: &str| {
            let p = PathBuf::from(v);
            match base {
                Some(b) if p.is_relative() => b.join(p),
                _ => p,
            }
        };
        let pr = &mut self.priors;
        match key {
            "returns" => self.returns = Some(path(v)),
            "rv" => self.rv = Some(path(v)),
            "rcor" => self.rcor = Some(path(v)),
            "draws" => self.draws = Some(path(v)),
            "out" => self.out = path(v),
            "seed" => self.seed = num(key, v)?,
            "variant" => self.leverage = parse_leverage(v)?,
            "sqrt" => self.sqrt_kind = parse_sqrt(v)?,
            "mean" => self.mean_kind = parse_mean_kind(v)?,
            "fixed_zero" => self.fixed_zero = parse_pairs(key, v)?,
            "strict_rcor" => self.strict_rcor = num(key, v)?,
            "n_burnin" => self.n_burnin = num(key, v)?,
            "n_keep" => self.n_keep = num(key, v)?,
            "thin" => self.thin = num(key, v)?,
            "pd_tol" => self.pd_tol = num(key, v)?,
            "mu_mean" => pr.mu.mean = num(key, v)?,
            "mu_var" => pr.mu.var = num(key, v)?,
            "xi_mean" => pr.xi.mean = num(key, v)?,
            "xi_var" => pr.xi.var = num(key, v)?,
            "delta_mean" => pr.delta.mean = num(key, v)?,
            "delta_var" => pr.delta.var = num(key, v)?,
            "sigma2_u_n" => pr.sigma2_u.n = num(key, v)?,
            "sigma2_u_d" => pr.sigma2_u.d = num(key, v)?,
            "sigma2_v_n" => pr.sigma2_v.n = num(key, v)?,
            "sigma2_v_d" => pr.sigma2_v.d = num(key, v)?,
            "sigma2_zeta_n" => pr.sigma2_zeta.n = num(key, v)?,
            "sigma2_zeta_d" => pr.sigma2_zeta.d = num(key, v)?,
            "sigma2_m_n" => pr.sigma2_m.n = num(key, v)?,
            "sigma2_m_d" => pr.sigma2_m.d = num(key, v)?,
            "phi_a" => pr.phi.a = num(key, v)?,
            "phi_b" => pr.phi.b = num(key, v)?,
            "omega_nu" => pr.omega_nu = num(key, v)?,
            "omega_scale" => pr.omega_scale = num(key, v)?,
            "psi_nu" => pr.psi_nu = num(key, v)?,
            "psi_scale" => pr.psi_scale = num(key, v)?,
            "lambda_mean" => pr.lambda_mean = num(key, v)?,
            "lambda_var" => pr.lambda_var = num(key, v)?,
            "const_mean_mean" => pr.const_mean.mean = num(key, v)?,
            "const_mean_var" => pr.const_mean.var = num(key, v)?,
            "kappa" => pr.kappa = num(key, v)?,
            "sim_t" => self.sim_t = num(key, v)?,
            "sim_p" => self.sim_p = num(key, v)?,
            "sim_missing_rate" => self.sim_missing_rate = num(key, v)?,
            "sim_lambda" => self.sim_lambda = Some(num(key, v)?),
            "window" => self.window = num(key, v)?,
            "steps" => self.steps = num(key, v)?,
            "refit_burnin" => self.refit_burnin = num(key, v)?,
            "refit_keep" => self.refit_keep = num(key, v)?,
            "target_mu" => {
                self.target_mu = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| num(key, s))
                    .collect::<Result<_>>()?
            }
            "risk_free" => self.risk_free = num(key, v)?,
            _ => return Err(MrsvError::Config(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    pub fn rcor_policy(&self) -> RcorPolicy {
        if self.strict_rcor {
            RcorPolicy::Strict
        } else {
            RcorPolicy::Clamp
        }
    }

    pub fn variant(&self, p: usize) -> Result<ModelVariant> {
        let mut v = ModelVariant::with_leverage(p, self.leverage, self.sqrt_kind);
        v.mean_kind = self.mean_kind;
        if self.fixed_zero.iter().any(|&(i, _)| i >= p) {
            return Err(MrsvError::Config(format!("fixed_zero names an asset beyond {p}")));
        }
        v.mask = PairMask::with_fixed_zero(p, &self.fixed_zero)?;
        v.validate()?;
        Ok(v)
    }

    pub fn mcmc_config(&self, p: usize) -> Result<McmcConfig> {
        let variant = self.variant(p)?;
        let mut cfg = McmcConfig::new(variant, self.n_burnin, self.n_keep, self.seed);
        cfg.thin = self.thin;
        cfg.pd_tol = self.pd_tol;
        cfg.priors = self.priors.build(p, self.leverage);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        let returns = self.returns.as_deref().ok_or_else(|| MrsvError::Config("no returns file given".into()))?;
        read_dataset(returns, self.rv.as_deref(), self.rcor.as_deref(), self.rcor_policy())
    }
}

fn counter_text(c: Counter) -> String {
    format!("{}/{}", c.accepted, c.proposed)
}

fn parse_counter(s: &str) -> Result<Counter> {
    let (a, p) = s.split_once('/').ok_or_else(|| MrsvError::Data(format!("bad counter {s:?}")))?;
    Ok(Counter { accepted: num("counter", a)?, proposed: num("counter", p)? })
}

/// Writes draws: text header, `END`, then little-endian f64 rows.
pub fn write_draws(path: &Path, store: &DrawStore) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    let v = &store.variant;
    let s = &store.stats;
    let mask: Vec<&str> = v.mask.flags().iter().map(|f| if *f { "1" } else { "0" }).collect();
    writeln!(f, "{DRAWS_MAGIC} {DRAWS_VERSION}")?;
    writeln!(f, "p={}", v.dim())?;
    writeln!(f, "pairs=lower-row-major")?;
    writeln!(f, "variant={}", leverage_label(v.leverage))?;
    writeln!(f, "sqrt={}", sqrt_label(v.sqrt_kind))?;
    writeln!(f, "mean={}", mean_kind_label(v.mean_kind))?;
    writeln!(f, "mask={}", mask.join(","))?;
    writeln!(f, "seed={}", store.seed)?;
    writeln!(f, "n_burnin={}", store.n_burnin)?;
    writeln!(f, "n_keep={}", store.len())?;
    writeln!(f, "thin={}", store.thin)?;
    writeln!(f, "t_len={}", store.t_len)?;
    writeln!(f, "assets={}", store.asset_names.join(","))?;
    writeln!(
        f,
        "accept={},{},{},{}",
        counter_text(s.g),
        counter_text(s.h),
        counter_text(s.phi),
        counter_text(s.cov)
    )?;
    writeln!(f, "g_degenerate={}", s.g_degenerate)?;
    writeln!(f, "phi_fallback={}", s.phi_fallback)?;
    writeln!(f, "width={}", store.layout.width())?;
    writeln!(f, "columns={}", store.layout.names().join(" "))?;
    writeln!(f, "END")?;
    for row in &store.rows {
        for v in row {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    f.flush()?;
    Ok(())
}

pub fn read_draws(path: &Path) -> Result<DrawStore> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let bad = |m: &str| MrsvError::Data(format!("{}: {m}", path.display()));
    let mut header = HashMap::new();
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim_end() != format!("{DRAWS_MAGIC} {DRAWS_VERSION}") {
        return Err(bad("not a draw file of a supported version"));
    }
    loop {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(bad("header is not terminated"));
        }
        let l = line.trim_end_matches('\n');
        if l == "END" {
            break;
        }
        let (k, v) = l.split_once('=').ok_or_else(|| bad("malformed header line"))?;
        header.insert(k.to_string(), v.to_string());
    }
    let get = |k: &str| header.get(k).map(String::as_str).ok_or_else(|| bad(&format!("missing header key {k}")));
    let p: usize = num("p", get("p")?)?;
    let flags: Vec<bool> = get("mask")?.split(',').map(|f| f == "1").collect();
    let variant = ModelVariant {
        leverage: parse_leverage(get("variant")?)?,
        sqrt_kind: parse_sqrt(get("sqrt")?)?,
        mean_kind: parse_mean_kind(get("mean")?)?,
        mask: PairMask::from_flags(p, flags)?,
    };
    let layout = ParamLayout::new(&variant);
    let width: usize = num("width", get("width")?)?;
    if width != layout.width() || get("columns")? != layout.names().join(" ") {
        return Err(bad("column layout does not match the variant"));
    }
    let n_keep: usize = num("n_keep", get("n_keep")?)?;
    let acc: Vec<Counter> = get("accept")?.split(',').map(parse_counter).collect::<Result<_>>()?;
    if acc.len() != 4 {
        return Err(bad("accept needs four counters"));
    }
    let stats = BlockStats {
        g: acc[0],
        h: acc[1],
        phi: acc[2],
        cov: acc[3],
        g_degenerate: num("g_degenerate", get("g_degenerate")?)?,
        phi_fallback: num("phi_fallback", get("phi_fallback")?)?,
    };
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != n_keep * width * 8 {
        return Err(bad(&format!("expected {} bytes of draws, found {}", n_keep * width * 8, bytes.len())));
    }
    let rows = bytes
        .chunks_exact(width * 8)
        .map(|row| row.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect())
        .collect();
    let assets = get("assets")?;
    Ok(DrawStore {
        layout,
        variant,
        seed: num("seed", get("seed")?)?,
        n_burnin: num("n_burnin", get("n_burnin")?)?,
        thin: num("thin", get("thin")?)?,
        t_len: num("t_len", get("t_len")?)?,
        asset_names: if assets.is_empty() { Vec::new() } else { assets.split(',').map(str::to_string).collect() },
        rows,
        stats,
        latent_means: None,
        paths: Vec::new(),
    })
}

/// θ as `name,value` rows, in draw-file column order.
pub fn write_params(path: &Path, params: &ModelParams, variant: &ModelVariant) -> Result<()> {
    let layout = ParamLayout::new(variant);
    let p = variant.dim();
    let snap = crate::draws::Snapshot {
        h: nalgebra::DVector::zeros(p),
        g: nalgebra::DVector::zeros(corrmat::n_pairs(p)),
        m: nalgebra::DVector::zeros(p),
        z: variant.has_leverage().then(|| nalgebra::DVector::zeros(p)),
    };
    let row = layout.flatten(params, &snap);
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["name", "value"])?;
    for (name, v) in layout.names().iter().zip(&row).take(layout.n_theta()) {
        w.write_record([name.as_str(), &fmt(*v)])?;
    }
    w.flush()?;
    Ok(())
}

/// Latent paths as one CSV per day: h, then g, then m columns.
pub fn write_latents(path: &Path, latents: &LatentPaths, dates: &[String]) -> Result<()> {
    let p = latents.h.ncols();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["date".to_string()];
    header.extend((1..=p).map(|i| format!("h[{i}]")));
    header.extend(corrmat::pairs(p).map(|(i, j)| format!("g[{},{}]", i + 1, j + 1)));
    header.extend((1..=p).map(|i| format!("m[{i}]")));
    w.write_record(&header)?;
    for t in 0..latents.len() {
        let mut row = vec![dates.get(t).cloned().unwrap_or_else(|| (t + 1).to_string())];
        row.extend(latents.h.row(t).iter().map(|v| fmt(*v)));
        row.extend(latents.g.row(t).iter().map(|v| fmt(*v)));
        row.extend(latents.m.row(t).iter().map(|v| fmt(*v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
