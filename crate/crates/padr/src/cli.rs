//! The `padr` command-line tool: argument parsing and the six commands.

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use padr_core::diagnostics::{
    check_surrogation, directional_probe, residual_exact, residual_sampled, DirectionalProbe, ResidualReport,
    ResidualSettings, SurrogationReport,
};
use padr_core::{Dataset, FeatureScaler, PadrError, Problem, RngHandle, Stream};
use serde::Serialize;

use crate::baselines::Decider;
use crate::bench::{decide, run_benchmark, score, simopt_decisions, split_data};
use crate::config::{self, Command, Overrides, RunConfig};
use crate::error::{Error, Result};
use crate::io::{
    atomic_write, read_dataset, read_model, rows_to_csv, to_json_bytes, trace_to_csv, write_dataset, write_model,
    ModelFile,
};
use crate::train::{train, TrainJob};

/// Environment variable consulted when neither `--threads` nor the config
/// sets a thread count.
pub const THREADS_ENV: &str = "PADR_THREADS";

#[derive(Debug, Parser)]
#[command(name = "padr", version, about = "Train and benchmark piecewise-affine decision rules")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
    /// TOML or JSON run configuration (`.json` is read as JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Named instance used as the base configuration.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Cmd {
    /// Write train.csv and test.csv drawn from the configured demand model.
    Gen,
    /// Train the configured rule with fixed hyperparameters.
    Train,
    /// Score a trained model on test data against the oracle.
    Eval,
    /// Run every method on every seed and write report.csv.
    Bench,
    /// Surrogation check, stationarity residual and descent probe at a model.
    Diagnose,
    /// Select hyperparameters by random search, then retrain.
    Sweep,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Gen => Command::Gen,
            Cmd::Train => Command::Train,
            Cmd::Eval => Command::Eval,
            Cmd::Bench => Command::Bench,
            Cmd::Diagnose => Command::Diagnose,
            Cmd::Sweep => Command::Sweep,
        }
    }
}

impl Cli {
    pub fn load(&self) -> Result<RunConfig> {
        let overrides = Overrides { seed: self.seed, out: self.out.clone(), threads: self.threads };
        config::load(self.command.into(), self.preset.as_deref(), self.config.as_deref(), &overrides)
    }
}

/// `--threads`, then the config, then `PADR_THREADS`; `None` means all cores.
pub fn thread_count(cfg: &RunConfig) -> Result<Option<usize>> {
    if cfg.threads.is_some() {
        return Ok(cfg.threads);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Config(format!("{THREADS_ENV}: `{v}` is not a positive integer"))),
        },
        Err(_) => Ok(None),
    }
}

/// Parses, configures the thread pool and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match cli.load().and_then(|cfg| {
        let mut pool = rayon::ThreadPoolBuilder::new();
        if let Some(n) = thread_count(&cfg)? {
            pool = pool.num_threads(n);
        }
        let pool = pool.build().map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| run(&cfg))
    }) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs the configured command, writing its artifacts under `paths.out`.
pub fn run(cfg: &RunConfig) -> Result<()> {
    let command = cfg.command.ok_or_else(|| Error::Config("no command".into()))?;
    atomic_write(&cfg.out("config.json"), &cfg.echo())?;
    match command {
        Command::Gen => gen(cfg),
        Command::Train => fit(cfg, false),
        Command::Sweep => fit(cfg, true),
        Command::Eval => eval(cfg),
        Command::Bench => bench(cfg),
        Command::Diagnose => diagnose(cfg),
    }
}

fn gen(cfg: &RunConfig) -> Result<()> {
    let (train, test) = split_data(&cfg.experiment, cfg.seed)?;
    write_dataset(&cfg.out("train.csv"), &train)?;
    write_dataset(&cfg.out("test.csv"), &test)?;
    eprintln!("wrote {} training and {} test samples to {}", train.n(), test.n(), cfg.paths.out.display());
    Ok(())
}

fn check_outputs(cfg: &RunConfig, data: &Dataset, what: &str) -> Result<()> {
    let d = cfg.experiment.cost.d();
    if data.m() != d {
        return Err(Error::Bench(format!("{what} data has {} outcome columns but the cost setup has {d} products", data.m())));
    }
    Ok(())
}

fn train_data(cfg: &RunConfig) -> Result<Dataset> {
    let data = match &cfg.paths.train {
        Some(p) => read_dataset(p)?,
        None => split_data(&cfg.experiment, cfg.seed)?.0,
    };
    check_outputs(cfg, &data, "training")?;
    Ok(data)
}

fn test_data(cfg: &RunConfig) -> Result<Dataset> {
    let data = match &cfg.paths.test {
        Some(p) => read_dataset(p)?,
        None => split_data(&cfg.experiment, cfg.seed)?.1,
    };
    check_outputs(cfg, &data, "test")?;
    Ok(data)
}

fn fit(cfg: &RunConfig, sweep: bool) -> Result<()> {
    let exp = &cfg.experiment;
    let raw = train_data(cfg)?;
    let scaler = exp.scale_features.then(|| FeatureScaler::fit(&raw));
    let data = match &scaler {
        Some(s) => s.transform(&raw)?,
        None => raw,
    };
    let trained = train(TrainJob {
        data: &data,
        hypothesis: exp.rule.hypothesis(exp.cost.d(), data.p())?,
        cost: exp.cost.cost_spec(),
        constraints: exp.cost.constraint_spec(exp.penalty.gamma, exp.penalty.lambda),
        smm: exp.smm.to_config(cfg.seed)?,
        sweep: sweep.then_some(&exp.sweep),
        timing: exp.timing,
    })?;
    if let Some(s) = &trained.sweep {
        atomic_write(&cfg.out("sweep.csv"), &rows_to_csv(&s.table))?;
        let row = &s.table[s.best_index];
        eprintln!(
            "selected candidate {} of {} (validation cost {:.4} on {} samples)",
            row.candidate,
            s.table.len(),
            row.validation_cost,
            s.validation_size
        );
    }
    write_model(&cfg.out("model.json"), &ModelFile::new(&trained.theta, scaler))?;
    atomic_write(&cfg.out("trace.csv"), &trace_to_csv(&trained.run.best.trace.records))?;
    for r in &trained.run.rounds {
        if let Some(e) = &r.error {
            eprintln!("round {} failed: {e}", r.round);
        }
    }
    eprintln!(
        "best round {} of {}: training objective {:.6}",
        trained.run.best_round,
        trained.run.rounds.len(),
        trained.run.best.trace.output_objective
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvalReport {
    n: usize,
    test_cost: f64,
    feasibility: Option<f64>,
    simopt_cost: f64,
    gap: f64,
}

fn eval(cfg: &RunConfig) -> Result<()> {
    let model = read_model(&cfg.model_path())?;
    let test = test_data(cfg)?;
    let theta = model.theta()?;
    if theta.cfg().d != cfg.experiment.cost.d() {
        return Err(Error::Bench(format!(
            "model has {} outputs but the cost setup has {} products",
            theta.cfg().d,
            cfg.experiment.cost.d()
        )));
    }
    let prepared = model.prepare(&test)?;
    let decider = Decider::Rule { theta, degree: 1, plug_in: false };
    let mine = score(&cfg.experiment.cost, &decide(&cfg.experiment, &decider, &prepared)?, &test)?;
    let oracle = score(&cfg.experiment.cost, &simopt_decisions(&cfg.experiment, &test, cfg.seed)?, &test)?;
    let report = EvalReport {
        n: test.n(),
        test_cost: mine.test_cost,
        feasibility: mine.feasibility,
        simopt_cost: oracle.test_cost,
        gap: mine.test_cost - oracle.test_cost,
    };
    atomic_write(&cfg.out("eval.json"), &to_json_bytes(&report))?;
    eprintln!("test cost {:.4} (oracle {:.4}, gap {:.4})", report.test_cost, report.simopt_cost, report.gap);
    Ok(())
}

fn bench(cfg: &RunConfig) -> Result<()> {
    let report = run_benchmark(&cfg.experiment)?;
    atomic_write(&cfg.out("report.csv"), &rows_to_csv(&report.rows))?;
    for r in report.rows.iter().filter(|r| r.seed.is_none()) {
        eprintln!("{:<12} test cost {:>9.4}  gap {:>9.4}", r.method, r.test_cost, r.gap);
    }
    if report.failures.is_empty() {
        return Ok(());
    }
    for (m, s, e) in &report.failures {
        eprintln!("{m} seed {s} failed: {e}");
    }
    Err(Error::Bench(format!("{} benchmark cells failed", report.failures.len())))
}

#[derive(Debug, Serialize)]
struct DiagnoseReport {
    objective: f64,
    base_cost: f64,
    surrogation: SurrogationReport,
    residual: ResidualReport,
    descent: DirectionalProbe,
}

/// Keys of the diagnostic draws under the index stream.
const SURROGATION_KEY: u64 = 0;
const RESIDUAL_KEY: u64 = 1;
const PROBE_KEY: u64 = 2;

fn diagnose(cfg: &RunConfig) -> Result<()> {
    let exp = &cfg.experiment;
    let model = read_model(&cfg.model_path())?;
    let theta = model.theta()?;
    let data = model.prepare(&train_data(cfg)?)?;
    let mut problem = Problem::new(&data, *theta.cfg(), exp.cost.cost_spec())?;
    if let Some(c) = exp.cost.constraint_spec(exp.penalty.gamma, exp.penalty.lambda) {
        problem = problem.with_constraints(c)?;
    }
    let d = &cfg.diagnose;
    let rng = RngHandle::new(cfg.seed, Stream::Index);
    let surrogation = check_surrogation(&problem, &theta, d.epsilon, d.probes, &rng.child(SURROGATION_KEY))?;
    let settings = ResidualSettings { cap: d.exact_cap, ..ResidualSettings::default() };
    let residual = match residual_exact(&problem, &theta, d.epsilon, d.rho, &settings) {
        Err(PadrError::CapExceeded { .. }) => {
            residual_sampled(&problem, &theta, d.epsilon, d.rho, d.residual_draws, &rng.child(RESIDUAL_KEY), &settings)?
        }
        r => r?,
    };
    let descent = directional_probe(&problem, &theta, d.directions, d.step, &rng.child(PROBE_KEY))?;
    let report =
        DiagnoseReport { objective: problem.objective(&theta)?, base_cost: problem.base_cost(&theta)?, surrogation, residual, descent };
    atomic_write(&cfg.out("diagnose.json"), &to_json_bytes(&report))?;
    eprintln!(
        "residual {:.3e} ({}), P2 violation {:.1e}, min directional slope {:.3e}",
        report.residual.residual,
        if report.residual.exact { "exact" } else { "sampled" },
        report.surrogation.p2_violation,
        report.descent.min_slope
    );
    Ok(())
}
