//! The multi-run transcription as an [`NlpProblem`].
//!
//! Decision vector: `[vec(X^1), ..., vec(X^M), theta]`.

use std::ops::Range;

use rayon::prelude::*;

use super::{EstimationConfig, EstimationError};
use crate::collocation::{defect_jacobian, dynamics_defect, StateArray, TimeGrid};
use crate::model::{idx, PilotParams, VehicleConfig, JOINT_DIM, PARAM_DIM};
use crate::nlp::{NlpProblem, SparseRows, Structure};
use crate::runlog::RunLog;

pub struct TranscribedProblem<'a> {
    runs: &'a [RunLog],
    cfg: VehicleConfig<f64>,
    margin: f64,
    joystick_bound: bool,
    pin_initial_state: bool,
    grids: Vec<TimeGrid<f64>>,
    offsets: Vec<usize>,
    theta_at: usize,
    /// square roots of the run weights
    scale: Vec<f64>,
}

impl<'a> TranscribedProblem<'a> {
    pub fn new(
        runs: &'a [RunLog],
        cfg: &VehicleConfig<f64>,
        ecfg: &EstimationConfig,
    ) -> Result<Self, EstimationError> {
        Self::weighted(runs, &vec![1.0; runs.len()], cfg, ecfg)
    }

    /// Objective `sum_r weights[r] * ||z^r - y^r||^2`.
    pub fn weighted(
        runs: &'a [RunLog],
        weights: &[f64],
        cfg: &VehicleConfig<f64>,
        ecfg: &EstimationConfig,
    ) -> Result<Self, EstimationError> {
        super::check_runs(runs)?;
        if weights.len() != runs.len() || weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(EstimationError::InvalidConfig(format!(
                "bad run weights {weights:?}"
            )));
        }
        let mut grids = Vec::with_capacity(runs.len());
        let mut offsets = Vec::with_capacity(runs.len());
        let mut at = 0;
        for run in runs {
            let g = TimeGrid::for_run(run)?;
            offsets.push(at);
            at += JOINT_DIM * g.len();
            grids.push(g);
        }
        Ok(Self {
            runs,
            cfg: *cfg,
            margin: ecfg.routh_margin,
            joystick_bound: ecfg.joystick_bound,
            pin_initial_state: ecfg.pin_initial_state,
            grids,
            offsets,
            theta_at: at,
            scale: weights.iter().map(|w| w.sqrt()).collect(),
        })
    }

    pub fn run_count(&self) -> usize {
        self.runs.len()
    }

    pub fn run_range(&self, r: usize) -> Range<usize> {
        self.offsets[r]..self.offsets[r] + JOINT_DIM * self.grids[r].len()
    }

    pub fn theta_range(&self) -> Range<usize> {
        self.theta_at..self.theta_at + PARAM_DIM
    }

    pub fn theta(&self, w: &[f64]) -> PilotParams<f64> {
        let mut t = [0.0; PARAM_DIM];
        t.copy_from_slice(&w[self.theta_range()]);
        PilotParams::new(t)
    }

    pub fn states(&self, w: &[f64], r: usize) -> StateArray<f64> {
        StateArray {
            rows: JOINT_DIM,
            cols: self.grids[r].len(),
            data: w[self.run_range(r)].to_vec(),
        }
    }

    /// Starting point: measured positions, differenced velocities, everything
    /// else zero, neutral pilot.
    pub fn initial_point(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.dim()];
        for (r, run) in self.runs.iter().enumerate() {
            let o = self.offsets[r];
            let n = self.grids[r].n;
            let dt = self.grids[r].dt;
            for k in 0..=n {
                w[o + k * JOINT_DIM + idx::Z] = run.y_v[k];
                let kk = k.min(n - 1);
                w[o + k * JOINT_DIM + idx::V] = (run.y_v[kk + 1] - run.y_v[kk]) / dt;
            }
        }
        w[self.theta_range()].copy_from_slice(&PilotParams::<f64>::neutral().theta);
        w
    }

    /// Unweighted objective contribution of a single run.
    pub fn run_objective(&self, w: &[f64], r: usize) -> f64 {
        let o = self.offsets[r];
        self.runs[r]
            .y_v
            .iter()
            .enumerate()
            .map(|(k, y)| (w[o + k * JOINT_DIM + idx::Z] - y).powi(2))
            .sum()
    }

    fn per_run<T: Send, F>(&self, f: F) -> Vec<T>
    where
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..self.runs.len()).into_par_iter().map(f).collect()
    }

    fn stick(&self, w: &[f64], r: usize, k: usize) -> f64 {
        let t = &w[self.theta_range()];
        let c = self.offsets[r] + k * JOINT_DIM + idx::XP1;
        t[3] * w[c] + t[4] * w[c + 1] + t[5] * w[c + 2]
    }
}

impl NlpProblem for TranscribedProblem<'_> {
    fn dim(&self) -> usize {
        self.theta_at + PARAM_DIM
    }

    fn residuals(&self, w: &[f64]) -> Vec<f64> {
        let mut out = Vec::new();
        for (r, run) in self.runs.iter().enumerate() {
            let (o, s) = (self.offsets[r], self.scale[r]);
            out.extend(
                run.y_v
                    .iter()
                    .enumerate()
                    .map(|(k, y)| s * (w[o + k * JOINT_DIM + idx::Z] - y)),
            );
        }
        out
    }

    fn residual_jacobian(&self, _w: &[f64]) -> SparseRows {
        let mut j = SparseRows::new(self.dim());
        for (r, g) in self.grids.iter().enumerate() {
            for k in 0..g.len() {
                j.push(vec![(
                    self.offsets[r] + k * JOINT_DIM + idx::Z,
                    self.scale[r],
                )]);
            }
        }
        j
    }

    fn eq(&self, w: &[f64]) -> Vec<f64> {
        let theta = self.theta(w);
        let parts = self.per_run(|r| {
            let x = self.states(w, r);
            let mut c = dynamics_defect(&x, self.runs[r].yhat, &theta, &self.cfg, &self.grids[r])
                .expect("shapes fixed at construction");
            if self.pin_initial_state {
                let s = 1.0 / self.grids[r].dt;
                c.extend(x.col(0).iter().map(|v| s * v));
            }
            c
        });
        parts.concat()
    }

    fn eq_jacobian(&self, w: &[f64]) -> SparseRows {
        let theta = self.theta(w);
        let dim = self.dim();
        let th = self.theta_at;
        let parts = self.per_run(|r| {
            let x = self.states(w, r);
            let blocks = defect_jacobian(&x, &theta, &self.cfg, &self.grids[r])
                .expect("shapes fixed at construction");
            let o = self.offsets[r];
            let mut j = SparseRows::with_capacity(dim, blocks.len() * JOINT_DIM + JOINT_DIM);
            for (k, b) in blocks.iter().enumerate() {
                let left = o + k * JOINT_DIM;
                let right = left + JOINT_DIM;
                for i in 0..JOINT_DIM {
                    let mut row = Vec::with_capacity(JOINT_DIM + 1 + PARAM_DIM);
                    for (jj, &v) in b.wrt_left[i].iter().enumerate() {
                        if v != 0.0 {
                            row.push((left + jj, v));
                        }
                    }
                    row.push((right + i, b.wrt_right_diag));
                    for (p, &v) in b.wrt_theta[i].iter().enumerate() {
                        if v != 0.0 {
                            row.push((th + p, v));
                        }
                    }
                    j.push(row);
                }
            }
            if self.pin_initial_state {
                let s = 1.0 / self.grids[r].dt;
                for i in 0..JOINT_DIM {
                    j.push(vec![(o + i, s)]);
                }
            }
            j
        });
        let mut out = SparseRows::new(dim);
        for p in parts {
            out.extend(p);
        }
        out
    }

    fn ineq_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lb = Vec::new();
        let mut ub = Vec::new();
        if self.joystick_bound {
            let n: usize = self.grids.iter().map(TimeGrid::len).sum();
            lb.resize(n, -1.0);
            ub.resize(n, 1.0);
        }
        lb.extend([self.margin; 4]);
        ub.extend([f64::INFINITY; 4]);
        (lb, ub)
    }

    fn ineq(&self, w: &[f64]) -> Vec<f64> {
        let mut g = Vec::new();
        if self.joystick_bound {
            for (r, grid) in self.grids.iter().enumerate() {
                g.extend((0..grid.len()).map(|k| self.stick(w, r, k)));
            }
        }
        g.extend(self.theta(w).routh_margins());
        g
    }

    fn ineq_jacobian(&self, w: &[f64]) -> SparseRows {
        let th = self.theta_at;
        let t = &w[self.theta_range()];
        let mut j = SparseRows::new(self.dim());
        if self.joystick_bound {
            for (r, grid) in self.grids.iter().enumerate() {
                for k in 0..grid.len() {
                    let c = self.offsets[r] + k * JOINT_DIM + idx::XP1;
                    j.push(vec![
                        (c, t[3]),
                        (c + 1, t[4]),
                        (c + 2, t[5]),
                        (th + 3, w[c]),
                        (th + 4, w[c + 1]),
                        (th + 5, w[c + 2]),
                    ]);
                }
            }
        }
        j.push(vec![(th, 1.0)]);
        j.push(vec![(th + 1, 1.0)]);
        j.push(vec![(th + 2, 1.0)]);
        j.push(vec![(th, -1.0), (th + 1, t[2]), (th + 2, t[1])]);
        j
    }

    /// Exact state-parameter cross terms: the pilot feedback and its output
    /// are bilinear in `(x_p, theta)`. The vehicle's own curvature in pitch is
    /// left out.
    fn curvature(&self, _w: &[f64], _a: &[f64], b: &[f64], e: &[f64]) -> Vec<(usize, usize, f64)> {
        let th = self.theta_at;
        let sens = self.cfg.command_sensitivity();
        let pins = if self.pin_initial_state { JOINT_DIM } else { 0 };
        let mut out = Vec::new();
        let (mut row, mut stick) = (0, 0);
        for (r, g) in self.grids.iter().enumerate() {
            for k in 0..g.len() {
                let c = self.offsets[r] + k * JOINT_DIM + idx::XP1;
                let (fb, cmd) = if k < g.n {
                    let d = &b[row + k * JOINT_DIM..row + (k + 1) * JOINT_DIM];
                    (
                        d[idx::XP1 + 2],
                        -sens.iter().zip(d).map(|(s, v)| s * v).sum::<f64>(),
                    )
                } else {
                    (0.0, 0.0)
                };
                let bound = if self.joystick_bound {
                    e[stick + k]
                } else {
                    0.0
                };
                for j in 0..3 {
                    if fb != 0.0 {
                        out.push((c + j, th + j, fb));
                    }
                    if cmd + bound != 0.0 {
                        out.push((c + j, th + 3 + j, cmd + bound));
                    }
                }
            }
            row += g.n * JOINT_DIM + pins;
            stick += g.len();
        }
        let routh = e[e.len() - 1];
        if routh != 0.0 {
            out.push((th + 1, th + 2, routh));
        }
        out
    }

    fn structure(&self) -> Structure {
        Structure::BorderedBanded {
            blocks: (0..self.runs.len()).map(|r| self.run_range(r)).collect(),
            border: self.theta_range(),
        }
    }
}
