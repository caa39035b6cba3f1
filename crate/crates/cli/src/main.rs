//! `oja`: batch driver for streaming-PCA experiments.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 config or input error,
//! 3 assumption violation (a step size above 1).

mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use oja_core::eigen::jacobi_eigen;
use oja_core::experiments::{
    approx_power_budget, init_bench, rate_experiment, Experiment, SweepRow, INIT_THRESHOLD_C,
};
use oja_core::init::{init_uniform_sphere, p_of};
use oja_core::metrics::lemma_sweep;
use oja_core::model::CovarianceModel;
use oja_core::nalgebra::DMatrix;
use oja_core::oja::{self, StepSchedule};
use oja_core::rng::{rng_for, Purpose};
use oja_core::streams::{bound_b, ingest_stream, scan_file};
use oja_core::{Error, RunConfig};

use output::{fmt_bool, fmt_f64, fmt_opt, CsvOut};

#[derive(Parser)]
#[command(name = "oja", version, about = "Streaming PCA (Oja's method) experiment harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one seeded trial and print its record as a JSON line.
    Run {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, default_value_t = 0)]
        trial: u64,
    },
    /// Repeat-and-select at each T of a grid.
    Sweep {
        #[command(flatten)]
        config: ConfigArg,
        /// Comma-separated ascending horizons.
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<u64>,
        /// Independent meta-repetitions of the whole sweep.
        #[arg(long, default_value_t = 1)]
        meta: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// R trials plus validation-based selection, one CSV row per trial.
    Select {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Distribution of p after the approximate power start.
    InitBench {
        #[command(flatten)]
        config: ConfigArg,
        /// Comma-separated T0 values; a T0 = 0 uniform row is always added.
        #[arg(long, value_delimiter = ',')]
        t0_grid: Vec<u64>,
        /// Alternatively, constants c giving T0 = ceil(c d b^2 ln d).
        #[arg(long, value_delimiter = ',')]
        c_t0: Vec<f64>,
        #[arg(long, default_value_t = 100)]
        trials: u64,
        /// c in the c ln(d) n_A threshold.
        #[arg(long, default_value_t = INIT_THRESHOLD_C)]
        threshold_c: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check max_s (1+ηs)^k (1−ε−s) against its closed-form bound on the
    /// full (η, ε, k) sweep.
    LemmaCheck {
        #[arg(long, default_value_t = 4096)]
        grid_n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// One pass of the iteration over a CSV data file.
    Ingest {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        dim: usize,
        /// Noise bound b; defaults to the one observed on the file.
        #[arg(long)]
        b: Option<f64>,
        /// p for the gap-free step rule; defaults to d.
        #[arg(long)]
        p: Option<f64>,
        /// Fixed step size, bypassing the gap-free rule.
        #[arg(long)]
        eta: Option<f64>,
        /// Number of rows to use; defaults to the whole file.
        #[arg(long)]
        horizon: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Writes the estimated direction as `index,component` rows.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ConfigArg {
    #[arg(long = "config")]
    path: PathBuf,
}

impl ConfigArg {
    fn load(&self) -> Result<RunConfig, Error> {
        RunConfig::from_path(&self.path)
    }
}

/// Raised after output is written when some grid point hit an assumption
/// violation.
#[derive(Debug)]
struct Flagged(usize);

impl std::fmt::Display for Flagged {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} grid point(s) flagged: step size exceeds 1", self.0)
    }
}

impl std::error::Error for Flagged {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Flagged>().is_some() {
        return 3;
    }
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_assumption_violation() => 3,
        Some(
            Error::Config(_)
            | Error::Parse { .. }
            | Error::Io { .. }
            | Error::MissingBound
            | Error::InvalidModel(_)
            | Error::InvalidMatrix(_)
            | Error::NotOrthonormal { .. }
            | Error::DimensionMismatch { .. }
            | Error::GapUndefined
            | Error::InvalidParameter(_),
        ) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run { config, trial } => cmd_run(&config, trial),
        Command::Sweep { config, grid, meta, out } => cmd_sweep(&config, &grid, meta, &out),
        Command::Select { config, out } => cmd_select(&config, &out),
        Command::InitBench { config, t0_grid, c_t0, trials, threshold_c, out } => {
            cmd_init_bench(&config, t0_grid, &c_t0, trials, threshold_c, &out)
        }
        Command::LemmaCheck { grid_n, out } => cmd_lemma(grid_n, &out),
        Command::Ingest { data, dim, b, p, eta, horizon, seed, out } => {
            cmd_ingest(&data, dim, b, p, eta, horizon, seed, out.as_deref())
        }
    }
}

fn cmd_run(config: &ConfigArg, trial: u64) -> Result<()> {
    let exp = Experiment::new(config.load()?)?;
    let record = exp.run_trial(trial)?.record;
    println!("{}", serde_json::to_string(&record)?);
    Ok(())
}

const SWEEP_HEADER: [&str; 5] = ["meta", "horizon", "statistic", "value", "note"];

fn sweep_rows(out: &mut CsvOut, meta: u64, row: &SweepRow) -> Result<()> {
    let m = meta.to_string();
    let t = row.horizon.to_string();
    let mut put = |stat: &str, value: String, note: &str| out.row([&m, &t, stat, &value, note]);
    if let Some(msg) = &row.schedule_error {
        return put("flagged", "1".into(), msg);
    }
    put("eta", fmt_opt(row.eta), "")?;
    put("epsilon", fmt_opt(row.epsilon), "")?;
    put("epsilon_valid", fmt_bool(row.epsilon_valid.unwrap_or(false)), "")?;
    if let Some(s) = &row.summary {
        put("count", s.count.to_string(), "")?;
        for (name, v) in [
            ("min", s.min),
            ("q10", s.q10),
            ("q25", s.q25),
            ("median", s.median),
            ("q75", s.q75),
            ("q90", s.q90),
            ("max", s.max),
        ] {
            put(name, fmt_f64(v), "")?;
        }
    }
    put("mean", fmt_opt(row.mean), "")?;
    if let Some(s) = &row.success {
        put("success_fraction", fmt_f64(s.fraction), "")?;
        put("success_lower", fmt_f64(s.lower), "")?;
        put("success_upper", fmt_f64(s.upper), "")?;
    }
    put("selected_index", row.selected_index.map(|i| i.to_string()).unwrap_or_default(), "")?;
    put("selected_suboptimality", fmt_opt(row.selected_suboptimality), "")
}

fn cmd_sweep(config: &ConfigArg, grid: &[u64], meta: u64, out: &Path) -> Result<()> {
    let mut cfg = config.load()?;
    // both step rules shrink with T, so the largest grid point is the one
    // most likely to be admissible; per-point schedules are rebuilt anyway
    if let Some(&t) = grid.iter().max() {
        cfg.horizon = t;
    }
    let exp = Experiment::new(cfg)?;
    let mut csv = CsvOut::create(out, &SWEEP_HEADER)?;
    let flagged;
    if meta == 1 {
        let rows = oja_core::experiments::sweep_t(&exp, grid)?;
        for row in &rows {
            sweep_rows(&mut csv, 0, row)?;
        }
        flagged = rows.iter().filter(|r| r.is_flagged()).count();
        let points: Vec<(u64, f64)> = rows
            .iter()
            .filter_map(|r| r.selected_suboptimality.map(|e| (r.horizon, e)))
            .collect();
        report_fit(&points);
    } else {
        let rate = rate_experiment(&exp, grid, meta)?;
        for (m, rows) in rate.sweeps.iter().enumerate() {
            for row in rows {
                sweep_rows(&mut csv, m as u64, row)?;
            }
        }
        flagged = rate.sweeps.iter().flatten().filter(|r| r.is_flagged()).count();
        println!("{}", serde_json::to_string(&rate.fit)?);
    }
    csv.finish()?;
    if flagged > 0 {
        return Err(Flagged(flagged).into());
    }
    Ok(())
}

fn report_fit(points: &[(u64, f64)]) {
    match oja_core::experiments::fit_rate(points) {
        Ok(fit) => println!("{}", serde_json::to_string(&fit).expect("fit serializes")),
        Err(e) => eprintln!("rate fit skipped: {e}"),
    }
}

fn cmd_select(config: &ConfigArg, out: &Path) -> Result<()> {
    let exp = Experiment::new(config.load()?)?;
    let sel = exp.repeat_and_select()?;
    let mut csv = CsvOut::create(
        out,
        &[
            "trial_index",
            "sub_seed",
            "init_p",
            "suboptimality",
            "v_nonpositive",
            "epsilon",
            "eta",
            "samples_consumed",
            "init_fell_back",
            "wall_clock_ns",
            "validation_score",
            "selected",
        ],
    )?;
    for (i, r) in sel.records.iter().enumerate() {
        csv.row([
            r.trial_index.to_string(),
            r.sub_seed.to_string(),
            fmt_f64(r.init_p),
            fmt_f64(r.suboptimality),
            fmt_bool(r.v_nonpositive),
            fmt_f64(r.epsilon),
            fmt_f64(r.eta),
            r.samples_consumed.to_string(),
            fmt_bool(r.init_fell_back),
            r.wall_clock_ns.to_string(),
            fmt_opt(sel.scores.get(i).copied()),
            fmt_bool(i == sel.chosen),
        ])?;
    }
    csv.finish()?;
    println!("{}", serde_json::to_string(sel.chosen_record())?);
    Ok(())
}

fn cmd_init_bench(
    config: &ConfigArg,
    mut t0_grid: Vec<u64>,
    c_t0: &[f64],
    trials: u64,
    threshold_c: f64,
    out: &Path,
) -> Result<()> {
    let cfg = config.load()?;
    let model = cfg.model.build()?;
    let b = bound_b(&cfg.stream, &model)?;
    t0_grid.extend(c_t0.iter().map(|&c| approx_power_budget(model.dim(), b, c)));
    if t0_grid.is_empty() {
        return Err(Error::Config("init-bench needs --t0-grid or --c-t0".into()).into());
    }
    let rows = init_bench(&model, &cfg.stream, &t0_grid, trials, cfg.seed, threshold_c)?;
    let mut csv = CsvOut::create(
        out,
        &[
            "t0", "method", "count", "min", "q10", "q25", "median", "q75", "q90", "max",
            "threshold", "fraction_below", "fell_back",
        ],
    )?;
    for r in &rows {
        let s = &r.summary;
        let method = serde_json::to_value(r.method)?;
        csv.row([
            r.t0.to_string(),
            method.as_str().unwrap_or_default().to_string(),
            s.count.to_string(),
            fmt_f64(s.min),
            fmt_f64(s.q10),
            fmt_f64(s.q25),
            fmt_f64(s.median),
            fmt_f64(s.q75),
            fmt_f64(s.q90),
            fmt_f64(s.max),
            fmt_f64(r.threshold),
            fmt_f64(r.fraction_below),
            r.fell_back.to_string(),
        ])?;
    }
    csv.finish()
}

fn cmd_lemma(grid_n: usize, out: &Path) -> Result<()> {
    let checks = lemma_sweep(grid_n)?;
    let mut csv = CsvOut::create(
        out,
        &["eta", "epsilon", "k", "argmax", "log_lhs", "log_rhs", "holds"],
    )?;
    for c in &checks {
        csv.row([
            fmt_f64(c.eta),
            fmt_f64(c.epsilon),
            c.k.to_string(),
            fmt_f64(c.argmax),
            fmt_f64(c.log_lhs),
            fmt_f64(c.log_rhs),
            fmt_bool(c.holds),
        ])?;
    }
    csv.finish()?;
    let violations = checks.iter().filter(|c| !c.holds).count();
    eprintln!("{} cases, {} violations", checks.len(), violations);
    if violations > 0 {
        bail!("{violations} lemma violations");
    }
    Ok(())
}

#[derive(Serialize)]
struct IngestReport {
    rows: u64,
    dim: usize,
    horizon: u64,
    b: f64,
    b_source: &'static str,
    eta: f64,
    top_eigenvalue: f64,
    init_p: f64,
    suboptimality: f64,
}

/// Model of the empirical second moment, so suboptimality is measured
/// against the data the iteration saw.
fn empirical_model(m: &DMatrix<f64>) -> Result<CovarianceModel> {
    let eig = jacobi_eigen(m)?;
    let spectrum: Vec<f64> = eig.values.iter().map(|&s| s.max(0.0)).collect();
    Ok(CovarianceModel::with_basis(spectrum, eig.vectors)?)
}

#[allow(clippy::too_many_arguments)]
fn cmd_ingest(
    data: &Path,
    dim: usize,
    b: Option<f64>,
    p: Option<f64>,
    eta: Option<f64>,
    horizon: Option<u64>,
    seed: u64,
    out: Option<&Path>,
) -> Result<()> {
    let summary = scan_file(data, dim)?;
    if summary.rows == 0 {
        return Err(Error::Config(format!("{} has no data rows", data.display())).into());
    }
    let model = empirical_model(&summary.second_moment)?;
    let (b, b_source) = match b {
        Some(b) => (b, "declared"),
        None => (summary.observed_b()?.context("data has zero second moment")?, "observed"),
    };
    let horizon = horizon.unwrap_or(summary.rows);
    if horizon > summary.rows {
        return Err(Error::Config(format!(
            "horizon {horizon} exceeds the {} rows in the file",
            summary.rows
        ))
        .into());
    }
    let schedule = match eta {
        Some(eta) => StepSchedule::constant(eta)?,
        None => StepSchedule::gap_free(b, p.unwrap_or(dim as f64).max(8.0), horizon, 1.0)?,
    };

    let mut rng = rng_for(seed, Purpose::Init);
    let w0 = init_uniform_sphere(dim, &mut rng)?.w0;
    let init_p = p_of(&w0, &model);
    let mut stream = ingest_stream(data, dim)?;
    let (w, _) = oja::run(&mut stream, w0, &schedule, horizon)?;

    let report = IngestReport {
        rows: summary.rows,
        dim,
        horizon,
        b,
        b_source,
        eta: schedule.eta,
        top_eigenvalue: model.norm(),
        init_p,
        suboptimality: oja_core::suboptimality(&w, &model),
    };
    println!("{}", serde_json::to_string(&report)?);

    if let Some(path) = out {
        let mut csv = CsvOut::create(path, &["index", "component"])?;
        for (i, x) in w.iter().enumerate() {
            csv.row([i.to_string(), fmt_f64(*x)])?;
        }
        csv.finish()?;
    }
    Ok(())
}
