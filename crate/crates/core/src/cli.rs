//! Command-line front end.
//!
//! Exit codes: 0 success, 1 unexpected failure (I/O, failed derivative
//! check), 2 invalid input, 3 the solver did not converge (the report is still
//! written).
//!
//! Output layout under the output directory: `runs/` for synthesized run
//! logs, `fit/` for fitted trajectories, `report.json` for the estimate and
//! `validation.csv` for validation tables.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::estimator::{
    check_runs, estimate, fit_direct, validate, write_fitted, EstimationConfig, EstimationError,
    TranscribedProblem,
};
use crate::model::{
    char_poly_roots, routh_stable, ModelConfig, PilotParams, VehicleConfig, PARAM_DIM,
};
use crate::nlp::{check_derivatives, NlpProblem, OuterRecord, SparseRows, Structure};
use crate::runlog::{fmt17, RunLog};
use crate::synth::{generate_runs, standard_protocol, Scenario, REFERENCE_THETA};

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

/// Derivative check threshold.
pub const GRADCHECK_TOL: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Solver(String),
    #[error(transparent)]
    Other(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Solver(_) => EXIT_SOLVER,
            CliError::Other(_) => EXIT_FAILURE,
        }
    }
}

fn input<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Input(e.to_string())
}

#[derive(Debug, Parser)]
#[command(
    name = "pilot-sysid",
    version,
    about = "Pilot model identification from closed-loop vehicle runs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize run logs from an experiment file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Base seed; scenario noise seeds follow consecutively.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit a pilot model to run files.
    Estimate {
        /// Run CSV files (each with its `.meta.json` sidecar).
        runs: Vec<PathBuf>,
        /// Experiment file supplying the vehicle and estimation settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Baseline fit to the recorded stick instead of the vehicle response.
        #[arg(long)]
        direct: bool,
        #[arg(long)]
        tol_eq: Option<f64>,
        #[arg(long)]
        max_iter: Option<usize>,
    },
    /// Re-simulate a pilot model against run files and tabulate the errors.
    Validate {
        /// JSON file holding the pilot parameters (a report or a bare array).
        #[arg(long)]
        theta: PathBuf,
        runs: Vec<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the transcription's derivatives against finite differences.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Corrupt the constraint Jacobian to exercise the check.
        #[arg(long)]
        inject_bug: bool,
    },
}

fn reference_theta() -> [f64; PARAM_DIM] {
    REFERENCE_THETA
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn yes() -> bool {
    true
}

/// Experiment file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    /// Vehicle configuration file, relative to the experiment file. The
    /// default vehicle when absent.
    #[serde(default)]
    pub vehicle_config: Option<PathBuf>,
    /// Pilot used for synthesis.
    #[serde(default = "reference_theta")]
    pub theta: [f64; PARAM_DIM],
    pub scenarios: Vec<Scenario>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default = "yes")]
    pub record_joystick: bool,
    #[serde(default)]
    pub estimation: EstimationConfig,
}

impl ExperimentSpec {
    /// The six-run protocol with the reference pilot.
    pub fn standard(noise_sigma: f64, seed: u64) -> Self {
        Self {
            vehicle_config: None,
            theta: REFERENCE_THETA,
            scenarios: standard_protocol(noise_sigma, seed),
            out: default_out(),
            record_joystick: true,
            estimation: EstimationConfig::default(),
        }
    }

    pub fn check(&self) -> Result<(), String> {
        if self.scenarios.is_empty() {
            return Err("no scenarios".into());
        }
        if self.theta.iter().any(|v| !v.is_finite()) {
            return Err(format!("non-finite theta {:?}", self.theta));
        }
        for (i, s) in self.scenarios.iter().enumerate() {
            let bad = if s.repetitions < 1 {
                Some("repetitions must be at least 1")
            } else if !(s.duration > 0.0 && s.duration.is_finite()) {
                Some("duration must be positive")
            } else if !(s.sample_rate > 0.0 && s.sample_rate.is_finite()) {
                Some("sample_rate must be positive")
            } else if !(s.noise_sigma >= 0.0 && s.noise_sigma.is_finite()) {
                Some("noise_sigma must be non-negative")
            } else if !s.yhat.is_finite() {
                Some("yhat must be finite")
            } else {
                None
            };
            if let Some(msg) = bad {
                return Err(format!("scenario {i}: {msg}"));
            }
        }
        Ok(())
    }
}

/// Reads an experiment file and the vehicle it names.
pub fn load_experiment(path: &Path) -> Result<(ExperimentSpec, VehicleConfig<f64>), CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let spec: ExperimentSpec = serde_json::from_str(&text)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    spec.check()
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let vehicle = match &spec.vehicle_config {
        None => VehicleConfig::default(),
        Some(p) => {
            let p = path.parent().unwrap_or(Path::new(".")).join(p);
            ModelConfig::load(&p).map_err(input)?.vehicle
        }
    };
    Ok((spec, vehicle))
}

fn load_runs(paths: &[PathBuf]) -> Result<Vec<RunLog>, CliError> {
    if paths.is_empty() {
        return Err(CliError::Input("no run files given".into()));
    }
    let runs = paths
        .iter()
        .map(|p| RunLog::read(p).map_err(|e| CliError::Input(format!("{}: {e}", p.display()))))
        .collect::<Result<Vec<_>, _>>()?;
    check_runs(&runs).map_err(input)?;
    Ok(runs)
}

fn stem(p: &Path) -> String {
    p.file_stem()
        .map_or_else(|| "run".into(), |s| s.to_string_lossy().into_owned())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).context("serializing report")?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

pub fn cmd_simulate(
    config: &Path,
    out: Option<PathBuf>,
    seed: Option<u64>,
) -> Result<Vec<PathBuf>, CliError> {
    let (spec, vehicle) = load_experiment(config)?;
    let mut scenarios = spec.scenarios.clone();
    if let Some(mut next) = seed {
        for s in &mut scenarios {
            s.seed = next;
            next += s.repetitions as u64;
        }
    }
    let runs = generate_runs(
        &PilotParams::new(spec.theta),
        &vehicle,
        &scenarios,
        spec.record_joystick,
    )
    .map_err(input)?;
    let dir = out.unwrap_or(spec.out).join("runs");
    create_dir(&dir)?;
    let mut paths = Vec::new();
    for r in &runs {
        paths.push(r.log.write(&dir, &r.name).context("writing run log")?);
    }
    Ok(paths)
}

#[derive(Serialize)]
struct Report<'a, T: Serialize> {
    mode: &'static str,
    runs: Vec<String>,
    result: &'a T,
    #[serde(skip_serializing_if = "Option::is_none")]
    history: Option<&'a [OuterRecord]>,
}

pub struct EstimateArgs {
    pub runs: Vec<PathBuf>,
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub direct: bool,
    pub tol_eq: Option<f64>,
    pub max_iter: Option<usize>,
}

/// Returns the report path.
pub fn cmd_estimate(args: EstimateArgs) -> Result<PathBuf, CliError> {
    let (vehicle, mut ecfg, out) = match &args.config {
        Some(p) => {
            let (spec, vehicle) = load_experiment(p)?;
            (vehicle, spec.estimation, spec.out)
        }
        None => (
            VehicleConfig::default(),
            EstimationConfig::default(),
            default_out(),
        ),
    };
    if let Some(t) = args.tol_eq {
        if !(t > 0.0 && t.is_finite()) {
            return Err(CliError::Input(format!(
                "--tol-eq must be positive, got {t}"
            )));
        }
        ecfg.solver.eps_eq = t;
    }
    if let Some(m) = args.max_iter {
        if m == 0 {
            return Err(CliError::Input("--max-iter must be at least 1".into()));
        }
        ecfg.solver.max_iter = m;
    }
    let runs = load_runs(&args.runs)?;
    let names: Vec<String> = args.runs.iter().map(|p| stem(p)).collect();
    let out = args.out.unwrap_or(out);
    let fit_dir = out.join("fit");
    create_dir(&fit_dir)?;
    let report = out.join("report.json");

    if args.direct {
        return match fit_direct(&runs, &ecfg) {
            Ok(d) => {
                write_json(
                    &report,
                    &Report {
                        mode: "direct",
                        runs: names,
                        result: &d,
                        history: None,
                    },
                )?;
                Ok(report)
            }
            Err(e @ EstimationError::DirectFailed { .. }) => {
                write_json(
                    &report,
                    &Report {
                        mode: "direct",
                        runs: names,
                        result: &e.to_string(),
                        history: None,
                    },
                )?;
                Err(CliError::Solver(e.to_string()))
            }
            Err(e) => Err(classify(e)),
        };
    }

    let (result, failure) = match estimate(&runs, &vehicle, &ecfg) {
        Ok(r) => (r, None),
        Err(EstimationError::SolverFailed(r)) => {
            let msg = EstimationError::SolverFailed(r.clone()).to_string();
            (*r, Some(msg))
        }
        Err(e) => return Err(classify(e)),
    };
    write_fitted(&fit_dir, &names, &result, &runs).context("writing fitted trajectories")?;
    let history = result.report.as_ref().map(|r| r.history.as_slice());
    write_json(
        &report,
        &Report {
            mode: "joint",
            runs: names,
            result: &result,
            history,
        },
    )?;
    match failure {
        None => Ok(report),
        Some(msg) => Err(CliError::Solver(msg)),
    }
}

fn classify(e: EstimationError) -> CliError {
    match e {
        EstimationError::NoRuns
        | EstimationError::InconsistentRuns(_)
        | EstimationError::MissingJoystickChannel { .. }
        | EstimationError::InvalidConfig(_)
        | EstimationError::UnstablePilot(_) => input(e),
        other => CliError::Other(other.into()),
    }
}

/// Pilot parameters from a JSON document: a bare array of six numbers, or an
/// object whose `theta` (or `result.theta`) holds one, possibly nested.
pub fn find_theta(v: &Value) -> Option<[f64; PARAM_DIM]> {
    match v {
        Value::Array(a) if a.len() == PARAM_DIM => {
            let mut t = [0.0; PARAM_DIM];
            for (x, y) in t.iter_mut().zip(a) {
                *x = y.as_f64()?;
            }
            Some(t)
        }
        Value::Object(o) => o
            .get("theta")
            .and_then(find_theta)
            .or_else(|| o.get("result").and_then(find_theta)),
        _ => None,
    }
}

/// Writes `validation.csv` and returns its path and text.
pub fn cmd_validate(
    theta: &Path,
    run_paths: &[PathBuf],
    config: Option<&Path>,
    out: Option<PathBuf>,
) -> Result<(PathBuf, String), CliError> {
    let (vehicle, out_default) = match config {
        Some(p) => {
            let (spec, vehicle) = load_experiment(p)?;
            (vehicle, spec.out)
        }
        None => (VehicleConfig::default(), default_out()),
    };
    let text = fs::read_to_string(theta)
        .map_err(|e| CliError::Input(format!("{}: {e}", theta.display())))?;
    let doc: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Input(format!("{}: {e}", theta.display())))?;
    let th = PilotParams::new(find_theta(&doc).ok_or_else(|| {
        CliError::Input(format!("{}: no pilot parameters found", theta.display()))
    })?);
    if !routh_stable(&th) {
        let roots: Vec<String> = char_poly_roots(&th)
            .iter()
            .map(|z| format!("{:.6}{:+.6}i", z.re, z.im))
            .collect();
        return Err(CliError::Input(format!(
            "pilot model {:?} fails the Routh test: margins {:?}, roots [{}]",
            th.theta,
            th.routh_margins(),
            roots.join(", ")
        )));
    }
    let runs = load_runs(run_paths)?;
    let mut table = String::from("run,yhat,rmse,steady_state_error,status\n");
    for (p, run) in run_paths.iter().zip(&runs) {
        let row = match validate(&th, run, &vehicle) {
            Ok(v) => format!(
                "{},{},{},{},ok\n",
                stem(p),
                fmt17(run.yhat),
                fmt17(v.rmse),
                fmt17(v.steady_state_error)
            ),
            Err(EstimationError::Simulation(_)) => {
                format!("{},{},,,diverged\n", stem(p), fmt17(run.yhat))
            }
            Err(e) => return Err(classify(e)),
        };
        table.push_str(&row);
    }
    let out = out.unwrap_or(out_default);
    create_dir(&out)?;
    let path = out.join("validation.csv");
    fs::write(&path, &table).with_context(|| format!("writing {}", path.display()))?;
    Ok((path, table))
}

/// A problem whose constraint Jacobian is off by five percent.
struct Corrupted<'a, P>(&'a P);

impl<P: NlpProblem> NlpProblem for Corrupted<'_, P> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn residuals(&self, w: &[f64]) -> Vec<f64> {
        self.0.residuals(w)
    }
    fn residual_jacobian(&self, w: &[f64]) -> SparseRows {
        self.0.residual_jacobian(w)
    }
    fn eq(&self, w: &[f64]) -> Vec<f64> {
        self.0.eq(w)
    }
    fn eq_jacobian(&self, w: &[f64]) -> SparseRows {
        let j = self.0.eq_jacobian(w);
        let mut out = SparseRows::with_capacity(j.ncols(), j.nrows());
        for row in j.rows() {
            out.push(row.iter().map(|&(c, v)| (c, 1.05 * v)).collect());
        }
        out
    }
    fn ineq_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        self.0.ineq_bounds()
    }
    fn ineq(&self, w: &[f64]) -> Vec<f64> {
        self.0.ineq(w)
    }
    fn ineq_jacobian(&self, w: &[f64]) -> SparseRows {
        self.0.ineq_jacobian(w)
    }
    fn structure(&self) -> Structure {
        self.0.structure()
    }
}

/// Derivative check of the experiment's estimation problem at its
/// initialization point; the default experiment is the six-run protocol with
/// noise 0.05.
pub fn cmd_gradcheck(
    config: Option<&Path>,
    seed: Option<u64>,
    inject_bug: bool,
) -> Result<crate::nlp::DerivativeCheck, CliError> {
    let (spec, vehicle) = match config {
        Some(p) => load_experiment(p)?,
        None => (ExperimentSpec::standard(0.05, 1), VehicleConfig::default()),
    };
    let mut scenarios = spec.scenarios.clone();
    if let Some(mut next) = seed {
        for s in &mut scenarios {
            s.seed = next;
            next += s.repetitions as u64;
        }
    }
    let runs: Vec<RunLog> =
        generate_runs(&PilotParams::new(spec.theta), &vehicle, &scenarios, false)
            .map_err(input)?
            .into_iter()
            .map(|r| r.log)
            .collect();
    let problem = TranscribedProblem::new(&runs, &vehicle, &spec.estimation).map_err(classify)?;
    let w0 = problem.initial_point();
    Ok(if inject_bug {
        check_derivatives(&Corrupted(&problem), &w0)
    } else {
        check_derivatives(&problem, &w0)
    })
}

fn threads_from_env() -> Result<(), CliError> {
    let Ok(v) = std::env::var("PILOT_SYSID_THREADS") else {
        return Ok(());
    };
    let n: usize = v.parse().ok().filter(|n| *n > 0).ok_or_else(|| {
        CliError::Input(format!(
            "PILOT_SYSID_THREADS must be a positive integer, got {v:?}"
        ))
    })?;
    // a second initialization in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(())
}

/// Runs one command, printing progress to stdout.
pub fn run(cli: Cli) -> Result<(), CliError> {
    threads_from_env()?;
    match cli.command {
        Command::Simulate { config, out, seed } => {
            let paths = cmd_simulate(&config, out, seed)?;
            for p in &paths {
                println!("{}", p.display());
            }
        }
        Command::Estimate {
            runs,
            config,
            out,
            direct,
            tol_eq,
            max_iter,
        } => {
            let report = cmd_estimate(EstimateArgs {
                runs,
                config,
                out,
                direct,
                tol_eq,
                max_iter,
            })?;
            println!("{}", report.display());
        }
        Command::Validate {
            theta,
            runs,
            config,
            out,
        } => {
            let (_, table) = cmd_validate(&theta, &runs, config.as_deref(), out)?;
            print!("{table}");
        }
        Command::Gradcheck {
            config,
            seed,
            inject_bug,
        } => {
            let check = cmd_gradcheck(config.as_deref(), seed, inject_bug)?;
            for b in &check.blocks {
                println!(
                    "{:<20} max_rel_error {:.3e} at row {} col {} (analytic {:.6e}, finite difference {:.6e})",
                    b.block, b.max_rel_error, b.row, b.col, b.analytic, b.finite_difference
                );
            }
            println!("max_rel_error {:.3e}", check.max_rel_error);
            if !(check.max_rel_error < GRADCHECK_TOL) {
                return Err(CliError::Other(anyhow::anyhow!(
                    "derivative check failed: {:.3e} >= {GRADCHECK_TOL:e}",
                    check.max_rel_error
                )));
            }
        }
    }
    Ok(())
}
