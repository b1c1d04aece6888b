//! Pilot identification from one or more recorded runs.

mod direct;
mod problem;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use direct::{estimate_direct, fit_direct, DirectEstimate, DirectProblem};
pub use problem::TranscribedProblem;

use crate::collocation::{dynamics_defect, CollocationError, StateArray, TimeGrid};
use crate::model::{idx, routh_stable, JointState, PilotParams, VehicleConfig};
use crate::nlp::{solve, SolveError, SolveReport, SolveStatus, SolverOptions};
use crate::runlog::{fmt17, RunLog};
use crate::simulate::{simulate_closed_loop, SimError, Trajectory, DEFAULT_DT_INT};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    /// Measured positions, differenced velocities, neutral pilot.
    #[default]
    Measured,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimationConfig {
    pub routh_margin: f64,
    pub joystick_bound: bool,
    pub pin_initial_state: bool,
    pub init: InitStrategy,
    pub solver: SolverOptions,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            routh_margin: 1e-4,
            joystick_bound: true,
            pin_initial_state: true,
            init: InitStrategy::Measured,
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum EstimationError {
    #[error("no runs given")]
    NoRuns,
    #[error("inconsistent runs: {0}")]
    InconsistentRuns(String),
    #[error("run {run} has no joystick channel")]
    MissingJoystickChannel { run: usize },
    #[error("solver stopped with {:?} (eq {:.3e}, stationarity {:.3e})", .0.solver.status, .0.solver.eq_inf, .0.solver.stationarity)]
    SolverFailed(Box<EstimationResult>),
    #[error("baseline solver stopped with {status:?} (eq {eq_inf:.3e}, stationarity {stationarity:.3e})")]
    DirectFailed {
        status: SolveStatus,
        eq_inf: f64,
        stationarity: f64,
    },
    #[error("pilot model fails the Routh test, margins {0:?}")]
    UnstablePilot([f64; 4]),
    #[error("invalid estimation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Collocation(#[from] CollocationError),
    #[error(transparent)]
    Simulation(#[from] SimError),
}

pub fn check_runs(runs: &[RunLog]) -> Result<(), EstimationError> {
    let first = runs.first().ok_or(EstimationError::NoRuns)?;
    for (i, run) in runs.iter().enumerate() {
        run.validate()
            .map_err(|e| EstimationError::InconsistentRuns(format!("run {i}: {e}")))?;
        if (run.sample_rate - first.sample_rate).abs() > 1e-12 * first.sample_rate {
            return Err(EstimationError::InconsistentRuns(format!(
                "run {i} sampled at {} Hz, run 0 at {} Hz",
                run.sample_rate, first.sample_rate
            )));
        }
        if run.intervals() < 1 {
            return Err(EstimationError::InconsistentRuns(format!(
                "run {i} has a single sample"
            )));
        }
    }
    Ok(())
}

/// The fields of a run that enter a fit, bit for bit.
fn run_key(run: &RunLog) -> Vec<u64> {
    let mut k = vec![
        run.yhat.to_bits(),
        run.sample_rate.to_bits(),
        run.t.len() as u64,
    ];
    k.extend(run.t.iter().chain(&run.y_v).map(|v| v.to_bits()));
    if let Some(u) = &run.u_joystick {
        k.extend(u.iter().map(|v| v.to_bits()));
    }
    k
}

/// Runs with identical data merged and put in a canonical order, so a fit
/// does not depend on how the input list was arranged.
pub(crate) struct RunSet {
    pub runs: Vec<RunLog>,
    /// Multiplicities, scaled so that a uniformly repeated list weighs exactly
    /// like the list without repeats.
    pub weights: Vec<f64>,
    /// Position in `runs` of each input run.
    pub index: Vec<usize>,
}

impl RunSet {
    pub fn new(input: &[RunLog]) -> Self {
        let keys: Vec<Vec<u64>> = input.iter().map(run_key).collect();
        let mut order: Vec<usize> = (0..input.len()).collect();
        order.sort_by(|&a, &b| keys[a].cmp(&keys[b]));
        let mut runs = Vec::new();
        let mut counts: Vec<usize> = Vec::new();
        let mut index = vec![0; input.len()];
        for (pos, &i) in order.iter().enumerate() {
            if pos == 0 || keys[order[pos - 1]] != keys[i] {
                runs.push(input[i].clone());
                counts.push(0);
            }
            *counts.last_mut().expect("pushed above") += 1;
            index[i] = runs.len() - 1;
        }
        let (nd, nt) = (runs.len(), input.len());
        let weights = counts
            .iter()
            .map(|&m| (m * nd) as f64 / nt as f64)
            .collect();
        Self {
            runs,
            weights,
            index,
        }
    }
}

/// Solver summary carried in the result file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverSummary {
    pub status: SolveStatus,
    pub objective: f64,
    pub eq_inf: f64,
    pub ineq_violation: f64,
    pub stationarity: f64,
    pub iterations: usize,
    pub outer_iterations: usize,
}

impl From<&SolveReport> for SolverSummary {
    fn from(r: &SolveReport) -> Self {
        Self {
            status: r.status,
            objective: r.objective,
            eq_inf: r.eq_inf,
            ineq_violation: r.ineq_violation,
            stationarity: r.stationarity,
            iterations: r.iterations,
            outer_iterations: r.outer_iterations,
        }
    }
}

/// Constraint values recomputed from the returned model and trajectories.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub max_defect: f64,
    pub max_abs_stick: f64,
    pub routh_margins: [f64; 4],
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunFit {
    pub yhat: f64,
    pub objective: f64,
    /// Forward re-simulation of the fitted model against the measurements;
    /// `None` when the simulation diverged.
    pub rmse: Option<f64>,
    pub steady_state_error: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EstimationResult {
    pub theta: PilotParams<f64>,
    pub total_objective: f64,
    pub runs: Vec<RunFit>,
    pub solver: SolverSummary,
    pub verification: Verification,
    #[serde(skip)]
    pub states: Vec<StateArray<f64>>,
    #[serde(skip)]
    pub report: Option<SolveReport>,
}

/// Initial decision vector for [`estimate`].
pub fn initialize(
    runs: &[RunLog],
    cfg: &VehicleConfig<f64>,
    ecfg: &EstimationConfig,
) -> Result<Vec<f64>, EstimationError> {
    let p = TranscribedProblem::new(runs, cfg, ecfg)?;
    Ok(match ecfg.init {
        InitStrategy::Measured => p.initial_point(),
    })
}

fn verify(
    theta: &PilotParams<f64>,
    states: &[StateArray<f64>],
    runs: &[RunLog],
    cfg: &VehicleConfig<f64>,
    ecfg: &EstimationConfig,
) -> Result<Verification, EstimationError> {
    let mut max_defect = 0.0f64;
    let mut max_abs_stick = 0.0f64;
    for (x, run) in states.iter().zip(runs) {
        let grid = TimeGrid::for_run(run)?;
        let d = dynamics_defect(x, run.yhat, theta, cfg, &grid)?;
        max_defect = d.iter().fold(max_defect, |m, v| m.max(v.abs()));
        if ecfg.pin_initial_state {
            max_defect = x.col(0).iter().fold(max_defect, |m, v| m.max(v.abs()));
        }
        let w = theta.output_weights();
        for k in 0..x.cols {
            let c = x.col(k);
            let u = w[0] * c[idx::XP1] + w[1] * c[idx::XP1 + 1] + w[2] * c[idx::XP1 + 2];
            max_abs_stick = max_abs_stick.max(u.abs());
        }
    }
    let routh_margins = theta.routh_margins();
    let stick_ok = !ecfg.joystick_bound || max_abs_stick <= 1.0 + ecfg.solver.eps_ineq.max(1e-8);
    let passed = max_defect <= ecfg.solver.eps_eq
        && stick_ok
        && routh_margins
            .iter()
            .all(|m| *m >= ecfg.routh_margin - ecfg.solver.eps_ineq)
        && routh_stable(theta);
    Ok(Verification {
        max_defect,
        max_abs_stick,
        routh_margins,
        passed,
    })
}

/// Fits one pilot model to all runs jointly. Identical runs are fitted once
/// with a proportional weight and the runs are taken in a canonical order, so
/// the answer does not depend on the order of `runs`. Fails with
/// [`EstimationError::SolverFailed`] (carrying the partial result) unless the
/// solver converged and the constraints hold on independent re-evaluation.
pub fn estimate(
    runs: &[RunLog],
    cfg: &VehicleConfig<f64>,
    ecfg: &EstimationConfig,
) -> Result<EstimationResult, EstimationError> {
    if !(ecfg.routh_margin > 0.0) {
        return Err(EstimationError::InvalidConfig(format!(
            "routh_margin must be positive, got {}",
            ecfg.routh_margin
        )));
    }
    check_runs(runs)?;
    let set = RunSet::new(runs);
    let problem = TranscribedProblem::weighted(&set.runs, &set.weights, cfg, ecfg)?;
    let w0 = match ecfg.init {
        InitStrategy::Measured => problem.initial_point(),
    };
    let report = solve(&problem, &w0, &ecfg.solver)?;
    let theta = problem.theta(&report.w);
    let distinct: Vec<StateArray<f64>> = (0..set.runs.len())
        .map(|r| problem.states(&report.w, r))
        .collect();
    let verification = verify(&theta, &distinct, &set.runs, cfg, ecfg)?;
    let states = set.index.iter().map(|&d| distinct[d].clone()).collect();
    let run_fits = runs
        .iter()
        .zip(&set.index)
        .map(|(run, &d)| {
            let v = routh_stable(&theta)
                .then(|| validate(&theta, run, cfg).ok())
                .flatten();
            RunFit {
                yhat: run.yhat,
                objective: problem.run_objective(&report.w, d),
                rmse: v.as_ref().map(|v| v.rmse),
                steady_state_error: v.as_ref().map(|v| v.steady_state_error),
            }
        })
        .collect::<Vec<_>>();
    let result = EstimationResult {
        theta,
        total_objective: run_fits.iter().map(|r| r.objective).sum(),
        runs: run_fits,
        solver: SolverSummary::from(&report),
        verification,
        states,
        report: Some(report),
    };
    if result.solver.status != SolveStatus::Converged || !result.verification.passed {
        return Err(EstimationError::SolverFailed(Box::new(result)));
    }
    Ok(result)
}

#[derive(Clone, Debug)]
pub struct Validation {
    pub rmse: f64,
    pub steady_state_error: f64,
    /// Simulated output on the run's sample grid.
    pub simulated: Vec<f64>,
    pub trajectory: Trajectory<f64>,
}

/// Integrator step that divides the sample period and is no coarser than the
/// default.
fn integration_step(dt_sample: f64) -> f64 {
    let sub = (dt_sample / DEFAULT_DT_INT).ceil().max(1.0);
    dt_sample / sub
}

/// Re-simulates the closed loop from hover and scores it against a run.
pub fn validate(
    theta: &PilotParams<f64>,
    run: &RunLog,
    cfg: &VehicleConfig<f64>,
) -> Result<Validation, EstimationError> {
    if !routh_stable(theta) {
        return Err(EstimationError::UnstablePilot(theta.routh_margins()));
    }
    let dt_int = integration_step(run.dt());
    let stride = (run.dt() / dt_int).round() as usize;
    let tr = simulate_closed_loop(
        &JointState::zero(),
        run.yhat,
        theta,
        cfg,
        run.duration,
        dt_int,
    )?;
    let simulated: Vec<f64> = (0..run.y_v.len()).map(|k| tr.outputs[k * stride]).collect();
    let sq: f64 = simulated
        .iter()
        .zip(&run.y_v)
        .map(|(s, y)| (s - y).powi(2))
        .sum();
    let rmse = (sq / simulated.len() as f64).sqrt();
    let steady_state_error = (run.yhat - tr.final_output()).abs();
    Ok(Validation {
        rmse,
        steady_state_error,
        simulated,
        trajectory: tr,
    })
}

/// Writes `<dir>/<stem>_fit.csv` per run: time, measurement, the fitted joint
/// state and fitted pilot output.
pub fn write_fitted(
    dir: &Path,
    stems: &[String],
    result: &EstimationResult,
    runs: &[RunLog],
) -> std::io::Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    let w = result.theta.output_weights();
    for ((x, run), stem) in result.states.iter().zip(runs).zip(stems) {
        let path = dir.join(format!("{stem}_fit.csv"));
        let mut wr = csv::Writer::from_path(&path).map_err(std::io::Error::other)?;
        wr.write_record([
            "t", "y_v", "z", "phi", "v", "q", "omega_f", "omega_b", "xp1", "xp2", "xp3", "u",
        ])
        .map_err(std::io::Error::other)?;
        for k in 0..x.cols {
            let c = x.col(k);
            let u = w[0] * c[idx::XP1] + w[1] * c[idx::XP1 + 1] + w[2] * c[idx::XP1 + 2];
            let mut rec = vec![fmt17(run.t[k]), fmt17(run.y_v[k])];
            rec.extend(c.iter().map(|v| fmt17(*v)));
            rec.push(fmt17(u));
            wr.write_record(&rec).map_err(std::io::Error::other)?;
        }
        wr.flush()?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nlp::NlpProblem;
    use crate::simulate::sample_run;
    use crate::synth::reference_pilot;

    fn runs(targets: &[f64], duration: f64, sigma: f64, joystick: bool) -> Vec<RunLog> {
        let cfg = VehicleConfig::default();
        targets
            .iter()
            .enumerate()
            .map(|(i, &yhat)| {
                let tr = simulate_closed_loop(
                    &JointState::zero(),
                    yhat,
                    &reference_pilot(),
                    &cfg,
                    duration,
                    DEFAULT_DT_INT,
                )
                .unwrap();
                sample_run(&tr, 20.0, sigma, 40 + i as u64, joystick).unwrap()
            })
            .collect()
    }

    /// Central differences of `J^T [a; b; e]` along each border variable give
    /// the border columns of the curvature, which must be complete.
    fn check_border_curvature<P: NlpProblem>(p: &P, w: &[f64], border: std::ops::Range<usize>) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut weights =
            |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };
        let a = weights(p.residuals(w).len());
        let b = weights(p.eq(w).len());
        let e = weights(p.ineq(w).len());
        let grad = |x: &[f64]| {
            let mut g = p.residual_jacobian(x).tmul(&a);
            p.eq_jacobian(x).tmul_add(&b, &mut g);
            p.ineq_jacobian(x).tmul_add(&e, &mut g);
            g
        };
        let entries = p.curvature(w, &a, &b, &e);
        let h = 1e-6;
        for t in border {
            let mut col = vec![0.0; w.len()];
            for &(i, j, v) in &entries {
                if j == t {
                    col[i] += v;
                }
                if i == t && i != j {
                    col[j] += v;
                }
            }
            let (mut up, mut dn) = (w.to_vec(), w.to_vec());
            up[t] += h;
            dn[t] -= h;
            let (gu, gd) = (grad(&up), grad(&dn));
            for i in 0..w.len() {
                let fd = (gu[i] - gd[i]) / (2.0 * h);
                assert!(
                    (fd - col[i]).abs() < 1e-6 * (1.0 + fd.abs()),
                    "column {t} row {i}: {fd} vs {}",
                    col[i]
                );
            }
        }
    }

    #[test]
    fn curvature_border_columns_are_exact() {
        use rand::{Rng, SeedableRng};
        let rs = runs(&[2.0, 4.0], 1.0, 0.05, true);
        let cfg = VehicleConfig::default();
        let ecfg = EstimationConfig::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let p = TranscribedProblem::weighted(&rs, &[0.5, 2.0], &cfg, &ecfg).unwrap();
        let w: Vec<f64> = (0..p.dim()).map(|_| rng.random_range(-0.5..0.5)).collect();
        check_border_curvature(&p, &w, p.theta_range());
        let d = DirectProblem::weighted(&rs, &[0.5, 2.0], &ecfg).unwrap();
        let w: Vec<f64> = (0..d.dim()).map(|_| rng.random_range(-0.5..0.5)).collect();
        let n = d.dim();
        check_border_curvature(&d, &w, n - 6..n);
    }

    #[test]
    fn initial_point_matches_measurements() {
        let rs = runs(&[2.0, 4.0], 3.0, 0.05, false);
        let cfg = VehicleConfig::default();
        let ecfg = EstimationConfig::default();
        let p = TranscribedProblem::new(&rs, &cfg, &ecfg).unwrap();
        let w = initialize(&rs, &cfg, &ecfg).unwrap();
        assert_eq!(w.len(), 2 * 9 * 61 + 6);
        assert_eq!(p.objective(&w), 0.0);
        assert_eq!(p.theta(&w), PilotParams::neutral());
        assert!(p.theta(&w).is_stable());
        let x = p.states(&w, 1);
        assert_eq!(x.row(idx::Z), rs[1].y_v);
        assert!(x.row(idx::PHI).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn rejects_bad_inputs() {
        let cfg = VehicleConfig::default();
        let ecfg = EstimationConfig::default();
        assert!(matches!(
            estimate(&[], &cfg, &ecfg),
            Err(EstimationError::NoRuns)
        ));
        let mut rs = runs(&[2.0, 4.0], 3.0, 0.0, false);
        let bad = EstimationConfig {
            routh_margin: 0.0,
            ..EstimationConfig::default()
        };
        assert!(matches!(
            estimate(&rs, &cfg, &bad),
            Err(EstimationError::InvalidConfig(_))
        ));
        assert!(matches!(
            fit_direct(&rs, &ecfg),
            Err(EstimationError::MissingJoystickChannel { run: 0 })
        ));
        rs[1].sample_rate = 10.0;
        assert!(matches!(
            estimate(&rs, &cfg, &ecfg),
            Err(EstimationError::InconsistentRuns(_))
        ));
    }

    #[test]
    fn short_fit_converges_and_verifies() {
        let rs = runs(&[10.0, 20.0], 8.0, 0.0, false);
        let cfg = VehicleConfig::default();
        let res = estimate(&rs, &cfg, &EstimationConfig::default()).unwrap();
        assert_eq!(res.solver.status, SolveStatus::Converged);
        assert!(res.verification.passed);
        assert!(res.verification.max_defect <= 1e-6);
        assert!(res
            .verification
            .routh_margins
            .iter()
            .all(|m| *m >= 1e-4 - 1e-8));
        // explicit Euler on a 20 Hz grid: the fitted model must still track
        for r in &res.runs {
            assert!(r.rmse.unwrap() < 0.05, "{r:?}");
        }
        let total: f64 = res.runs.iter().map(|r| r.objective).sum();
        assert!((total - res.total_objective).abs() <= 1e-15 * total.max(1.0));
    }

    #[test]
    fn run_order_does_not_matter() {
        let rs = runs(&[10.0, 20.0, 15.0], 6.0, 0.02, false);
        let cfg = VehicleConfig::default();
        let ecfg = EstimationConfig::default();
        let a = estimate(&rs, &cfg, &ecfg).unwrap();
        let perm = vec![rs[2].clone(), rs[0].clone(), rs[1].clone()];
        let b = estimate(&perm, &cfg, &ecfg).unwrap();
        for (x, y) in a.theta.theta.iter().zip(&b.theta.theta) {
            assert!((x - y).abs() < 1e-8, "{:?} {:?}", a.theta, b.theta);
        }
        assert!((a.total_objective - b.total_objective).abs() < 1e-10);
        assert_eq!(a.runs[2].objective, b.runs[0].objective);
        assert_eq!(a.states[0].data, b.states[1].data);
    }

    #[test]
    fn duplicated_runs_double_the_objective() {
        let rs = runs(&[10.0, 20.0], 6.0, 0.02, false);
        let cfg = VehicleConfig::default();
        let ecfg = EstimationConfig::default();
        let a = estimate(&rs, &cfg, &ecfg).unwrap();
        let dup: Vec<RunLog> = rs.iter().chain(rs.iter()).cloned().collect();
        let b = estimate(&dup, &cfg, &ecfg).unwrap();
        for (x, y) in a.theta.theta.iter().zip(&b.theta.theta) {
            assert!((x - y).abs() < 1e-8, "{:?} {:?}", a.theta, b.theta);
        }
        assert!((b.total_objective - 2.0 * a.total_objective).abs() <= 1e-12 * a.total_objective);
        assert_eq!(b.runs.len(), 4);
        assert_eq!(b.runs[3].objective, a.runs[1].objective);
    }

    #[test]
    fn identical_runs_are_merged_in_canonical_order() {
        let rs = runs(&[10.0, 20.0], 1.0, 0.05, false);
        let list = vec![rs[1].clone(), rs[0].clone(), rs[1].clone()];
        let set = RunSet::new(&list);
        assert_eq!(set.runs.len(), 2);
        assert_eq!(set.index[0], set.index[2]);
        assert_ne!(set.index[0], set.index[1]);
        let w: f64 = set.weights.iter().sum();
        assert!((w - 2.0).abs() < 1e-15);
        assert_eq!(set.weights[set.index[0]], 4.0 / 3.0);
        let again = RunSet::new(&[rs[0].clone(), rs[1].clone(), rs[1].clone()]);
        assert_eq!(again.runs, set.runs);
        let doubled = RunSet::new(&[rs[0].clone(), rs[1].clone(), rs[0].clone(), rs[1].clone()]);
        assert_eq!(doubled.weights, vec![1.0, 1.0]);
    }

    #[test]
    fn validation_of_truth_sits_in_noise_band() {
        let sigma = 0.05;
        let rs = runs(&[10.0], 15.0, sigma, false);
        let v = validate(&reference_pilot(), &rs[0], &VehicleConfig::default()).unwrap();
        assert!(v.rmse > 0.5 * sigma && v.rmse < 3.0 * sigma, "{}", v.rmse);
        assert_eq!(v.simulated.len(), rs[0].y_v.len());
        let clean = runs(&[10.0], 15.0, 0.0, false);
        let v = validate(&reference_pilot(), &clean[0], &VehicleConfig::default()).unwrap();
        assert!(v.rmse < 1e-12);
        assert!(v.steady_state_error < 0.5);
    }

    #[test]
    fn unstable_pilot_is_not_simulated() {
        let rs = runs(&[10.0], 2.0, 0.0, false);
        let th = PilotParams::new([1.0, 1.0, 1.0, 0.1, 0.0, 0.0]);
        assert!(matches!(
            validate(&th, &rs[0], &VehicleConfig::default()),
            Err(EstimationError::UnstablePilot(_))
        ));
    }

    #[test]
    fn direct_fit_reproduces_recorded_stick() {
        let rs = runs(&[10.0, 20.0], 6.0, 0.0, true);
        let d = fit_direct(&rs, &EstimationConfig::default()).unwrap();
        assert!(d.command_rmse < 1e-3, "{}", d.command_rmse);
        assert!(d.theta.is_stable());
    }

    #[test]
    fn saturating_runs_respect_stick_bound() {
        // targets far enough away to drive the stick into its stops
        let cfg = VehicleConfig::default();
        let th = reference_pilot();
        let rs: Vec<RunLog> = [90.0, 95.0]
            .iter()
            .map(|&yhat| {
                let tr =
                    simulate_closed_loop(&JointState::zero(), yhat, &th, &cfg, 8.0, DEFAULT_DT_INT)
                        .unwrap();
                assert!(tr.commands.iter().any(|u| u.abs() >= 1.0));
                sample_run(&tr, 20.0, 0.0, 1, false).unwrap()
            })
            .collect();
        let res = estimate(&rs, &cfg, &EstimationConfig::default()).unwrap();
        assert!(
            res.verification.max_abs_stick <= 1.0 + 1e-8,
            "{:?}",
            res.verification
        );
        assert!(
            res.verification.max_abs_stick > 0.999,
            "bound not active: {:?}",
            res.verification
        );
    }

    #[test]
    fn fitted_files_have_one_row_per_sample() {
        let rs = runs(&[10.0], 6.0, 0.0, false);
        let cfg = VehicleConfig::default();
        let res = estimate(&rs, &cfg, &EstimationConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let paths = write_fitted(dir.path(), &["a".to_string()], &res, &rs).unwrap();
        let text = std::fs::read_to_string(&paths[0]).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "t,y_v,z,phi,v,q,omega_f,omega_b,xp1,xp2,xp3,u"
        );
        assert_eq!(lines.count(), 121);
    }
}
