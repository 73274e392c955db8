//! `mrsv` command-line front end.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numerical failure.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mrsv::corrmat::{self, CorrMatrix};
use mrsv::diagnostics::{self, ParamSummary};
use mrsv::forecast::{self, McmcEstimator, PortfolioPlan, PredictiveMoments, RollingProtocol};
use mrsv::io::{self, RunConfig};
use mrsv::model::{Leverage, VolNoise};
use mrsv::samplers::{run_mcmc, BlockStats};
use mrsv::simulate::{reference_params, simulate_dataset, SimConfig};
use mrsv::{MrsvError, Result};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

// Standard output that tolerates a closed pipe.
macro_rules! out {
    ($($t:tt)*) => {{
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

macro_rules! outp {
    ($($t:tt)*) => {{
        let _ = write!(std::io::stdout(), $($t)*);
    }};
}

#[derive(Parser, Debug)]
#[command(name = "mrsv", version, about = "Multivariate realized stochastic volatility: simulate, estimate, forecast, backtest")]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct CommonArgs {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// RNG seed; overrides the configuration.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Leverage specification: none, full or pars:q.
    #[arg(long, global = true, value_name = "none|full|pars:q")]
    variant: Option<String>,
    /// Correlation square root: spectral or cholesky.
    #[arg(long, global = true, value_name = "spectral|cholesky")]
    sqrt: Option<String>,
    /// Reject |RCOR| >= 1 instead of clamping it.
    #[arg(long, global = true)]
    strict_rcor: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a synthetic dataset with known ground truth.
    Simulate,
    /// Run the MCMC sampler on a dataset.
    Estimate,
    /// Posterior summary table of a draw file.
    Summarize {
        /// Draw file; defaults to the configured `draws` or OUT/draws.bin.
        #[arg(long, value_name = "PATH")]
        draws: Option<PathBuf>,
    },
    /// One-step-ahead predictive mean and covariance from a draw file.
    Forecast {
        #[arg(long, value_name = "PATH")]
        draws: Option<PathBuf>,
    },
    /// Rolling minimum-variance backtest.
    Backtest {
        /// Comma-separated leverage specifications to compare; defaults to
        /// the configured variant.
        #[arg(long, value_name = "LIST")]
        models: Option<String>,
    },
    /// Print reference values computed by the library next to independent
    /// closed forms.
    Oracle,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mrsv: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &MrsvError) -> u8 {
    match e {
        MrsvError::Config(_) => 1,
        MrsvError::AtSweep { source, .. } | MrsvError::AtStep { source, .. } => exit_code(source),
        e if e.is_data_error() => 2,
        _ => 3,
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.common)?;
    match cli.command {
        Command::Simulate => simulate(&cfg),
        Command::Estimate => estimate(&cfg),
        Command::Summarize { draws } => summarize(&cfg, draws),
        Command::Forecast { draws } => forecast_cmd(&cfg, draws),
        Command::Backtest { models } => backtest(&cfg, models.as_deref()),
        Command::Oracle => oracle(),
    }
}

fn load_config(a: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = match &a.config {
        Some(p) if !p.exists() => return Err(MrsvError::Config(format!("configuration file {} not found", p.display()))),
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(o) = &a.out {
        cfg.out = o.clone();
    }
    if let Some(v) = &a.variant {
        cfg.set("variant", v, None)?;
    }
    if let Some(s) = &a.sqrt {
        cfg.set("sqrt", s, None)?;
    }
    if a.strict_rcor {
        cfg.strict_rcor = true;
    }
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.out)?;
    Ok(&cfg.out)
}

fn simulate(cfg: &RunConfig) -> Result<()> {
    let variant = cfg.variant(cfg.sim_p)?;
    let mut params = reference_params(&variant);
    if let (Some(l), VolNoise::Leverage { lambda, .. }) = (cfg.sim_lambda, &mut params.noise) {
        // Full leverage loads each asset's own shock; the parsimonious form
        // loads every asset on its q factors.
        match variant.leverage {
            Leverage::Full => lambda.fill_diagonal(l),
            Leverage::Parsimonious(q) => lambda.columns_mut(0, q).fill(l),
            Leverage::None => {}
        }
    }
    let mut sim = SimConfig::new(cfg.sim_t, cfg.seed, params.clone(), variant.clone());
    sim.kappa = cfg.priors.kappa;
    sim.missing_rate = cfg.sim_missing_rate;
    let (data, latents) = simulate_dataset(&sim)?;
    let out = out_dir(cfg)?;
    io::write_dataset(&data, &out.join("returns.csv"), &out.join("rv.csv"), &out.join("rcor.csv"))?;
    io::write_params(&out.join("truth.csv"), &params, &variant)?;
    io::write_latents(&out.join("latents.csv"), &latents, &data.dates)?;
    out!(
        "simulated {} days of {} assets ({}, {}) into {}",
        data.len(),
        data.dim(),
        io::leverage_label(variant.leverage),
        io::sqrt_label(variant.sqrt_kind),
        out.display()
    );
    Ok(())
}

fn estimate(cfg: &RunConfig) -> Result<()> {
    let data = cfg.load_dataset()?;
    let mc = cfg.mcmc_config(data.dim())?;
    log::info!("estimating {} days x {} assets", data.len(), data.dim());
    let store = run_mcmc(&data, &mc)?;
    let out = out_dir(cfg)?;
    io::write_draws(&out.join("draws.bin"), &store)?;
    let rows = diagnostics::summarize(&store)?;
    write_summary(&out.join("summary.csv"), &rows)?;
    io::write_params(&out.join("posterior_mean.csv"), &store.mean_params()?, &store.variant)?;
    if let Some(lat) = &store.latent_means {
        io::write_latents(&out.join("latent_means.csv"), lat, &data.dates)?;
    }
    let report = acceptance_report(&store.stats);
    fs::write(out.join("acceptance.txt"), &report)?;
    print_summary(&rows);
    outp!("{report}");
    out!("outputs written to {}", out.display());
    Ok(())
}

fn acceptance_report(s: &BlockStats) -> String {
    let line = |name: &str, c: mrsv::samplers::Counter| {
        format!("{name:<10} {:>10} / {:<10} {:>7.3}\n", c.accepted, c.proposed, c.rate())
    };
    let mut r = String::from("block        accepted / proposed    rate\n");
    r += &line("g", s.g);
    r += &line("h", s.h);
    r += &line("phi", s.phi);
    r += &line("Omega/Psi", s.cov);
    r += &format!("degenerate g intervals: {}\nphi proposal fallbacks: {}\n", s.g_degenerate, s.phi_fallback);
    r
}

fn write_summary(path: &Path, rows: &[ParamSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["parameter", "mean", "sd", "ci_low", "ci_high", "inefficiency"])?;
    for r in rows {
        let inef = r.inefficiency.map(|v| v.to_string()).unwrap_or_default();
        w.write_record([r.name.clone(), r.mean.to_string(), r.sd.to_string(), r.ci_low.to_string(), r.ci_high.to_string(), inef])?;
    }
    w.flush()?;
    Ok(())
}

fn print_summary(rows: &[ParamSummary]) {
    out!("{:<16} {:>10} {:>10} {:>24} {:>8}", "parameter", "mean", "sd", "95% interval", "IF");
    for r in rows {
        let inef = r.inefficiency.map(|v| format!("{v:.1}")).unwrap_or_else(|| "-".into());
        let ci = format!("({:.4}, {:.4})", r.ci_low, r.ci_high);
        out!("{:<16} {:>10.4} {:>10.4} {:>24} {:>8}", r.name, r.mean, r.sd, ci, inef);
    }
}

fn draws_path(cfg: &RunConfig, flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| cfg.draws.clone()).unwrap_or_else(|| cfg.out.join("draws.bin"))
}

fn summarize(cfg: &RunConfig, draws: Option<PathBuf>) -> Result<()> {
    let store = io::read_draws(&draws_path(cfg, draws))?;
    let rows = diagnostics::summarize(&store)?;
    print_summary(&rows);
    if store.variant.has_leverage() {
        for i in 0..store.layout.dim() {
            for r in diagnostics::derived_leverage_correlation(&store, i)? {
                out!("{:<16} {:>10.4} {:>10.4} {:>24}", r.name, r.mean, r.sd, format!("({:.4}, {:.4})", r.ci_low, r.ci_high));
            }
        }
    }
    write_summary(&out_dir(cfg)?.join("summary.csv"), &rows)
}

fn forecast_cmd(cfg: &RunConfig, draws: Option<PathBuf>) -> Result<()> {
    let store = io::read_draws(&draws_path(cfg, draws))?;
    if cfg.returns.is_some() {
        let data = cfg.load_dataset()?;
        if data.dim() != store.layout.dim() || data.len() != store.t_len {
            return Err(MrsvError::Dimension(format!(
                "draws were fitted to {} days x {} assets, data has {} x {}",
                store.t_len,
                store.layout.dim(),
                data.len(),
                data.dim()
            )));
        }
    }
    let pm = forecast::predictive_moments(&store)?;
    let path = out_dir(cfg)?.join("forecast.csv");
    write_moments(&path, &store.asset_names, &pm)?;
    out!("one-step-ahead predictive moments over {} draws", store.len());
    out!("{:<12} {:>12} {}", "asset", "mean", "covariance row");
    for (i, name) in store.asset_names.iter().enumerate() {
        let row: Vec<String> = pm.cov.row(i).iter().map(|v| format!("{v:>12.6}")).collect();
        out!("{name:<12} {:>12.6} {}", pm.mean[i], row.join(" "));
    }
    out!("written to {}", path.display());
    Ok(())
}

fn write_moments(path: &Path, names: &[String], pm: &PredictiveMoments) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["asset".to_string(), "mean".to_string()];
    header.extend(names.iter().map(|n| format!("cov_{n}")));
    w.write_record(&header)?;
    for (i, n) in names.iter().enumerate() {
        let mut row = vec![n.clone(), pm.mean[i].to_string()];
        row.extend(pm.cov.row(i).iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn backtest(cfg: &RunConfig, models: Option<&str>) -> Result<()> {
    let data = cfg.load_dataset()?;
    let (window, steps) = (cfg.window, cfg.steps);
    if window == 0 || steps == 0 || window + steps > data.len() {
        return Err(MrsvError::Config(format!("window {window} + steps {steps} must fit in {} days", data.len())));
    }
    if cfg.target_mu.is_empty() {
        return Err(MrsvError::Config("target_mu is empty".into()));
    }
    let base = cfg.variant(data.dim())?;
    let realized: Vec<DMatrix<f64>> = (0..steps)
        .map(|s| {
            io::realized_covariance(&data, &base.mask, window + s)
                .ok_or_else(|| MrsvError::Data(format!("realized measures missing on day {}", data.dates[window + s])))
        })
        .collect::<Result<_>>()?;
    let labels: Vec<String> = match models {
        Some(list) => list.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
        None => vec![io::leverage_label(cfg.leverage)],
    };
    let protocol = RollingProtocol {
        window_len: window,
        n_steps: steps,
        risk_free: vec![cfg.risk_free; steps],
        target_mu: cfg.target_mu.clone(),
    };
    let mut results: Vec<(String, Vec<PortfolioPlan>)> = Vec::new();
    for label in &labels {
        let mut c = cfg.clone();
        c.set("variant", label, None)?;
        let mut mc = c.mcmc_config(data.dim())?;
        mc.store_paths_every = 0;
        let mut est = McmcEstimator::new(mc, cfg.refit_burnin, cfg.refit_keep);
        log::info!("backtesting {label}");
        results.push((label.clone(), forecast::rolling_forecast(&data, &protocol, &mut est, &realized)?));
    }
    let dates = &data.dates[window..window + steps];
    let ew = forecast::equal_weight_plan(dates, &realized, cfg.risk_free)?;

    let out = out_dir(cfg)?;
    let mut w = csv::Writer::from_path(out.join("plans.csv"))?;
    let mut header = vec!["model", "target_mu", "date"].into_iter().map(String::from).collect::<Vec<_>>();
    header.extend(data.asset_names.iter().map(|n| format!("w_{n}")));
    header.extend(["cash", "risk_free", "objective"].map(String::from));
    w.write_record(&header)?;
    let all = results.iter().flat_map(|(m, plans)| plans.iter().map(move |p| (m.as_str(), p)));
    for (model, plan) in all.chain(std::iter::once(("equal", &ew))) {
        for s in 0..plan.len() {
            let mut row = vec![model.to_string(), plan.target_mu.to_string(), plan.dates[s].clone()];
            row.extend(plan.weights[s].iter().map(|v| v.to_string()));
            row.extend([plan.cash_weight[s], plan.risk_free[s], plan.realized_objective[s]].map(|v| v.to_string()));
            w.write_record(&row)?;
        }
    }
    w.flush()?;

    let mut table = String::new();
    table += &format!("{:<12}", "model");
    for t in &cfg.target_mu {
        table += &format!(" {:>14}", format!("mu*={t}"));
    }
    table += "\n";
    for (model, plans) in &results {
        table += &format!("{model:<12}");
        for p in plans {
            table += &format!(" {:>14.6}", p.total());
        }
        table += "\n";
    }
    table += &format!("{:<12} {:>14.6}  (all targets)\n", "equal", ew.total());
    fs::write(out.join("objective.txt"), &table)?;
    out!("cumulative realized objective sum_t w_t' S_t+1 w_t over {steps} days");
    outp!("{table}");
    Ok(())
}

struct OracleRow {
    name: &'static str,
    library: f64,
    oracle: f64,
    tol: f64,
}

fn oracle() -> Result<()> {
    let mut rows = Vec::new();
    let mut push = |name, library, oracle, tol| rows.push(OracleRow { name, library, oracle, tol });

    push("fisher(0.5) = ln 3", corrmat::fisher(0.5)?, 3f64.ln(), 0.0);
    // The binary input −0.9 sits 2.2e-17 below −0.9, which moves the exact
    // value by half an ulp.
    push("fisher(-0.9) = -ln 19", corrmat::fisher(-0.9)?, -(19f64.ln()), 1e-15);
    push("inverse_fisher(ln 3)", corrmat::inverse_fisher(3f64.ln()), 0.5, 1e-15);

    let r = CorrMatrix::from_pairs(3, &[0.0, 0.5, 0.5])?;
    let b = corrmat::entry_bounds(&r, 1, 0)?;
    let (lo, hi) = bisect_bounds(r.as_matrix(), 1, 0);
    push("rho_12 lower bound, rho_13=rho_23=0.5", b.lower, lo, 1e-10);
    push("rho_12 upper bound, rho_13=rho_23=0.5", b.upper, hi, 1e-10);

    let eq = CorrMatrix::from_pairs(3, &[0.4; 3])?;
    let (_, eig) = corrmat::sorted_eigen(eq.as_matrix())?;
    push("equicorrelation 0.4, largest eigenvalue", eig[0], 1.8, 1e-12);
    push("equicorrelation 0.4, smallest eigenvalue", eig[2], 0.6, 1e-12);

    let ch = corrmat::sqrt_cholesky(&CorrMatrix::from_pairs(2, &[0.6])?)?;
    push("Cholesky of rho=0.6, (2,2) entry", ch[(1, 1)], (1.0f64 - 0.36).sqrt(), 1e-15);

    let om = mrsv::model::stationary_init_cov(&DVector::from_element(1, 0.9), &DMatrix::identity(1, 1))?;
    push("stationary variance, phi=0.9", om[(0, 0)], 1.0 / (1.0 - 0.81), 1e-12);

    let mut grid = io::IntradayGrid::new(1, 2, 2);
    for (bin, a, v) in [(0, 0, 1.0), (1, 0, 0.0), (0, 1, 1.0), (1, 1, 1.0)] {
        grid.set(0, bin, a, Some(v));
    }
    let m = io::compute_realized_measures(&grid);
    push("RV of r=(1,0)", m.rv.get(0, 0).unwrap_or(f64::NAN), 1.0, 0.0);
    push("RV of r=(1,1)", m.rv.get(0, 1).unwrap_or(f64::NAN), 2.0, 0.0);
    push("RCOR of (1,0) and (1,1)", m.rcor.get(0, 0).unwrap_or(f64::NAN), 0.5f64.sqrt(), 1e-15);

    let pm = PredictiveMoments {
        mean: DVector::from_vec(vec![0.01, 0.02]),
        cov: DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0])),
    };
    let (wt, kappa) = forecast::min_variance_weights(&pm, 0.0, 0.004)?;
    push("min-variance weight 1", wt[0], 0.2, 0.0);
    push("min-variance weight 2", wt[1], 0.1, 0.0);
    push("min-variance kappa", kappa, 0.01f64 * 0.01 + 0.02 * 0.02 / 4.0, 1e-18);

    let mut failed = 0;
    out!("{:<44} {:>22} {:>22} {:>10}", "quantity", "library", "closed form", "|diff|");
    for r in &rows {
        let diff = (r.library - r.oracle).abs();
        let ok = diff <= r.tol;
        failed += usize::from(!ok);
        out!(
            "{:<44} {:>22.17} {:>22.17} {:>10.1e} {}",
            r.name,
            r.library,
            r.oracle,
            diff,
            if ok { "ok" } else { "MISMATCH" }
        );
    }
    if failed > 0 {
        return Err(MrsvError::Numerical(format!("{failed} oracle values disagree")));
    }
    Ok(())
}

/// PD interval of entry (i, j) by bisection on the smallest eigenvalue.
fn bisect_bounds(m: &DMatrix<f64>, i: usize, j: usize) -> (f64, f64) {
    let pd = |v: f64| {
        let mut c = m.clone();
        c[(i, j)] = v;
        c[(j, i)] = v;
        SymmetricEigen::new(c).eigenvalues.min() > 0.0
    };
    let edge = |mut inside: f64, mut outside: f64| {
        if pd(outside) {
            return outside;
        }
        while (outside - inside).abs() > 1e-15 {
            let mid = 0.5 * (inside + outside);
            if pd(mid) {
                inside = mid;
            } else {
                outside = mid;
            }
        }
        0.5 * (inside + outside)
    };
    (edge(m[(i, j)], -1.0), edge(m[(i, j)], 1.0))
}
