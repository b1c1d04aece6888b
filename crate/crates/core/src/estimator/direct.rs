//! Baseline fit on the pilot channel alone: the pilot model is driven by the
//! measured tracking error and its output is matched to the recorded stick.
//! No vehicle dynamics enter the problem.

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{EstimationConfig, EstimationError};
use crate::collocation::TimeGrid;
use crate::model::{pilot_dynamics, PilotParams, PilotState, PARAM_DIM, PILOT_DIM};
use crate::nlp::{solve, NlpProblem, SolveReport, SolveStatus, SparseRows, Structure};
use crate::runlog::RunLog;

pub struct DirectProblem<'a> {
    runs: &'a [RunLog],
    margin: f64,
    pin_initial_state: bool,
    grids: Vec<TimeGrid<f64>>,
    offsets: Vec<usize>,
    theta_at: usize,
    scale: Vec<f64>,
}

impl<'a> DirectProblem<'a> {
    pub fn new(runs: &'a [RunLog], ecfg: &EstimationConfig) -> Result<Self, EstimationError> {
        Self::weighted(runs, &vec![1.0; runs.len()], ecfg)
    }

    /// Objective `sum_r weights[r] * ||u^r_fit - u^r||^2`.
    pub fn weighted(
        runs: &'a [RunLog],
        weights: &[f64],
        ecfg: &EstimationConfig,
    ) -> Result<Self, EstimationError> {
        super::check_runs(runs)?;
        if weights.len() != runs.len() || weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(EstimationError::InvalidConfig(format!(
                "bad run weights {weights:?}"
            )));
        }
        for (i, run) in runs.iter().enumerate() {
            if run.u_joystick.is_none() {
                return Err(EstimationError::MissingJoystickChannel { run: i });
            }
        }
        let mut grids = Vec::new();
        let mut offsets = Vec::new();
        let mut at = 0;
        for run in runs {
            let g = TimeGrid::for_run(run)?;
            offsets.push(at);
            at += PILOT_DIM * g.len();
            grids.push(g);
        }
        Ok(Self {
            runs,
            margin: ecfg.routh_margin,
            pin_initial_state: ecfg.pin_initial_state,
            grids,
            offsets,
            theta_at: at,
            scale: weights.iter().map(|w| w.sqrt()).collect(),
        })
    }

    fn theta_range(&self) -> Range<usize> {
        self.theta_at..self.theta_at + PARAM_DIM
    }

    pub fn theta(&self, w: &[f64]) -> PilotParams<f64> {
        let mut t = [0.0; PARAM_DIM];
        t.copy_from_slice(&w[self.theta_range()]);
        PilotParams::new(t)
    }

    pub fn initial_point(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.dim()];
        w[self.theta_range()].copy_from_slice(&PilotParams::<f64>::neutral().theta);
        w
    }

    fn col(&self, r: usize, k: usize) -> usize {
        self.offsets[r] + k * PILOT_DIM
    }

    fn stick(&self, w: &[f64], r: usize, k: usize) -> f64 {
        let t = &w[self.theta_range()];
        let c = self.col(r, k);
        t[3] * w[c] + t[4] * w[c + 1] + t[5] * w[c + 2]
    }

    /// RMS difference between the fitted pilot output and the recorded stick,
    /// over all samples of all runs.
    pub fn command_rmse(&self, w: &[f64]) -> f64 {
        let mut sq = 0.0;
        let mut n = 0;
        for (r, run) in self.runs.iter().enumerate() {
            let u = run.u_joystick.as_ref().expect("checked at construction");
            sq += (0..u.len())
                .map(|k| (self.stick(w, r, k) - u[k]).powi(2))
                .sum::<f64>();
            n += u.len();
        }
        (sq / n as f64).sqrt()
    }
}

impl NlpProblem for DirectProblem<'_> {
    fn dim(&self) -> usize {
        self.theta_at + PARAM_DIM
    }

    fn residuals(&self, w: &[f64]) -> Vec<f64> {
        let mut out = Vec::new();
        for (r, run) in self.runs.iter().enumerate() {
            let u = run.u_joystick.as_ref().expect("checked at construction");
            let s = self.scale[r];
            out.extend((0..u.len()).map(|k| s * (self.stick(w, r, k) - u[k])));
        }
        out
    }

    fn residual_jacobian(&self, w: &[f64]) -> SparseRows {
        let th = self.theta_at;
        let t = &w[self.theta_range()];
        let mut j = SparseRows::new(self.dim());
        for (r, g) in self.grids.iter().enumerate() {
            let s = self.scale[r];
            for k in 0..g.len() {
                let c = self.col(r, k);
                j.push(vec![
                    (c, s * t[3]),
                    (c + 1, s * t[4]),
                    (c + 2, s * t[5]),
                    (th + 3, s * w[c]),
                    (th + 4, s * w[c + 1]),
                    (th + 5, s * w[c + 2]),
                ]);
            }
        }
        j
    }

    fn eq(&self, w: &[f64]) -> Vec<f64> {
        let theta = self.theta(w);
        let parts: Vec<Vec<f64>> = (0..self.runs.len())
            .into_par_iter()
            .map(|r| {
                let run = &self.runs[r];
                let g = &self.grids[r];
                let mut c = Vec::with_capacity(PILOT_DIM * (g.n + 1));
                for k in 0..g.n {
                    let (a, b) = (self.col(r, k), self.col(r, k + 1));
                    let xp = PilotState([w[a], w[a + 1], w[a + 2]]);
                    let f = pilot_dynamics(&xp, run.yhat - run.y_v[k], &theta);
                    for i in 0..PILOT_DIM {
                        c.push((w[b + i] - w[a + i]) / g.dt - f[i]);
                    }
                }
                if self.pin_initial_state {
                    let a = self.col(r, 0);
                    c.extend(w[a..a + PILOT_DIM].iter().map(|v| v / g.dt));
                }
                c
            })
            .collect();
        parts.concat()
    }

    fn eq_jacobian(&self, w: &[f64]) -> SparseRows {
        let th = self.theta_at;
        let t = &w[self.theta_range()];
        let mut j = SparseRows::new(self.dim());
        for (r, g) in self.grids.iter().enumerate() {
            let inv = 1.0 / g.dt;
            for k in 0..g.n {
                let (a, b) = (self.col(r, k), self.col(r, k + 1));
                j.push(vec![(a, -inv), (a + 1, -1.0), (b, inv)]);
                j.push(vec![(a + 1, -inv), (a + 2, -1.0), (b + 1, inv)]);
                j.push(vec![
                    (a, t[0]),
                    (a + 1, t[1]),
                    (a + 2, t[2] - inv),
                    (b + 2, inv),
                    (th, w[a]),
                    (th + 1, w[a + 1]),
                    (th + 2, w[a + 2]),
                ]);
            }
            if self.pin_initial_state {
                let a = self.col(r, 0);
                for i in 0..PILOT_DIM {
                    j.push(vec![(a + i, inv)]);
                }
            }
        }
        j
    }

    fn ineq_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![self.margin; 4], vec![f64::INFINITY; 4])
    }

    fn ineq(&self, w: &[f64]) -> Vec<f64> {
        self.theta(w).routh_margins().to_vec()
    }

    fn ineq_jacobian(&self, w: &[f64]) -> SparseRows {
        let th = self.theta_at;
        let t = &w[self.theta_range()];
        let mut j = SparseRows::new(self.dim());
        j.push(vec![(th, 1.0)]);
        j.push(vec![(th + 1, 1.0)]);
        j.push(vec![(th + 2, 1.0)]);
        j.push(vec![(th, -1.0), (th + 1, t[2]), (th + 2, t[1])]);
        j
    }

    /// Exact: every nonlinearity is a product of a state and a parameter.
    fn curvature(&self, _w: &[f64], a: &[f64], b: &[f64], e: &[f64]) -> Vec<(usize, usize, f64)> {
        let th = self.theta_at;
        let pins = if self.pin_initial_state { PILOT_DIM } else { 0 };
        let mut out = Vec::new();
        let (mut row, mut res) = (0, 0);
        for (r, g) in self.grids.iter().enumerate() {
            for k in 0..g.len() {
                let c = self.col(r, k);
                let fb = if k < g.n {
                    b[row + k * PILOT_DIM + 2]
                } else {
                    0.0
                };
                for j in 0..3 {
                    if fb != 0.0 {
                        out.push((c + j, th + j, fb));
                    }
                    if a[res + k] != 0.0 {
                        out.push((c + j, th + 3 + j, self.scale[r] * a[res + k]));
                    }
                }
            }
            row += g.n * PILOT_DIM + pins;
            res += g.len();
        }
        if e[3] != 0.0 {
            out.push((th + 1, th + 2, e[3]));
        }
        out
    }

    fn structure(&self) -> Structure {
        Structure::BorderedBanded {
            blocks: (0..self.runs.len())
                .map(|r| self.offsets[r]..self.offsets[r] + PILOT_DIM * self.grids[r].len())
                .collect(),
            border: self.theta_range(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DirectEstimate {
    pub theta: PilotParams<f64>,
    pub command_rmse: f64,
    #[serde(skip)]
    pub report: Option<SolveReport>,
}

/// Full baseline fit with diagnostics. Runs are merged and ordered as in
/// [`super::estimate`].
pub fn fit_direct(
    runs: &[RunLog],
    ecfg: &EstimationConfig,
) -> Result<DirectEstimate, EstimationError> {
    super::check_runs(runs)?;
    for (i, run) in runs.iter().enumerate() {
        if run.u_joystick.is_none() {
            return Err(EstimationError::MissingJoystickChannel { run: i });
        }
    }
    let set = super::RunSet::new(runs);
    let problem = DirectProblem::weighted(&set.runs, &set.weights, ecfg)?;
    let report = solve(&problem, &problem.initial_point(), &ecfg.solver)?;
    let theta = problem.theta(&report.w);
    let command_rmse = problem.command_rmse(&report.w);
    if report.status != SolveStatus::Converged {
        return Err(EstimationError::DirectFailed {
            status: report.status,
            eq_inf: report.eq_inf,
            stationarity: report.stationarity,
        });
    }
    Ok(DirectEstimate {
        theta,
        command_rmse,
        report: Some(report),
    })
}

/// Pilot parameters fitted to the recorded stick alone.
pub fn estimate_direct(
    runs: &[RunLog],
    ecfg: &EstimationConfig,
) -> Result<PilotParams<f64>, EstimationError> {
    fit_direct(runs, ecfg).map(|d| d.theta)
}
