//! Transcription of the closed-loop ODE onto a uniform grid: forward
//! difference operators, explicit-Euler defects and the output-fit objective.

use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::model::{
    joint_jacobian, joint_rhs, PilotParams, VehicleConfig, JOINT_DIM, PARAM_DIM, VEHICLE_DIM,
};
use crate::runlog::RunLog;
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum CollocationError {
    #[error("grid needs N >= 1 and dt > 0 (got N={n}, dt={dt})")]
    BadGrid { n: usize, dt: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid<T> {
    /// Number of intervals.
    pub n: usize,
    pub t_final: T,
    pub dt: T,
}

impl<T: Scalar> TimeGrid<T> {
    pub fn new(n: usize, t_final: T) -> Result<Self, CollocationError> {
        let dt = t_final / T::lit(n as f64);
        if n == 0 || !(dt > T::zero()) || !dt.is_finite() {
            return Err(CollocationError::BadGrid { n, dt: dt.as_f64() });
        }
        Ok(Self { n, t_final, dt })
    }

    /// Grid matching a recorded run.
    pub fn for_run(run: &RunLog) -> Result<Self, CollocationError> {
        Self::new(run.intervals(), T::lit(run.duration))
    }

    pub fn len(&self) -> usize {
        self.n + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn time(&self, k: usize) -> T {
        T::lit(k as f64) * self.dt
    }

    pub fn times(&self) -> Vec<T> {
        (0..=self.n).map(|k| self.time(k)).collect()
    }
}

/// `n x (N+1)` array of states stored column-major, so `data` is `vec(X)`.
#[derive(Clone, Debug, PartialEq)]
pub struct StateArray<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> StateArray<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, CollocationError> {
        if data.len() != rows * cols {
            return Err(CollocationError::Shape(format!(
                "{} entries for a {rows}x{cols} array",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn col(&self, k: usize) -> &[T] {
        &self.data[k * self.rows..(k + 1) * self.rows]
    }

    pub fn col_mut(&mut self, k: usize) -> &mut [T] {
        let r = self.rows;
        &mut self.data[k * r..(k + 1) * r]
    }

    pub fn get(&self, i: usize, k: usize) -> T {
        self.data[k * self.rows + i]
    }

    pub fn set(&mut self, i: usize, k: usize, v: T) {
        self.data[k * self.rows + i] = v;
    }

    pub fn row(&self, i: usize) -> Vec<T> {
        (0..self.cols).map(|k| self.get(i, k)).collect()
    }
}

/// Dense `N x (N+1)` forward-difference matrix.
pub fn build_d<T: Scalar>(n: usize, dt: T) -> Result<Vec<Vec<T>>, CollocationError> {
    let grid = TimeGrid::new(n, dt * T::lit(n as f64))?;
    let inv = T::one() / grid.dt;
    Ok((0..n)
        .map(|k| {
            let mut row = vec![T::zero(); n + 1];
            row[k] = -inv;
            row[k + 1] = inv;
            row
        })
        .collect())
}

/// Dense `D kron I_dim`. Only meant for small sizes and as a test oracle; the
/// transcription uses [`ForwardDifference`].
pub fn build_block_d<T: Scalar>(
    n: usize,
    dt: T,
    dim: usize,
) -> Result<Vec<Vec<T>>, CollocationError> {
    if dim == 0 {
        return Err(CollocationError::Shape(
            "block dimension must be >= 1".into(),
        ));
    }
    let d = build_d(n, dt)?;
    let mut out = vec![vec![T::zero(); (n + 1) * dim]; n * dim];
    for (k, drow) in d.iter().enumerate() {
        for (j, &v) in drow.iter().enumerate() {
            if v == T::zero() {
                continue;
            }
            for i in 0..dim {
                out[k * dim + i][j * dim + i] = v;
            }
        }
    }
    Ok(out)
}

/// Matrix-free `D kron I_dim`.
#[derive(Clone, Copy, Debug)]
pub struct ForwardDifference<T> {
    pub n: usize,
    pub dt: T,
    pub dim: usize,
}

impl<T: Scalar> ForwardDifference<T> {
    pub fn new(n: usize, dt: T, dim: usize) -> Result<Self, CollocationError> {
        TimeGrid::new(n, dt * T::lit(n as f64))?;
        if dim == 0 {
            return Err(CollocationError::Shape(
                "block dimension must be >= 1".into(),
            ));
        }
        Ok(Self { n, dt, dim })
    }

    pub fn apply(&self, x: &[T]) -> Result<Vec<T>, CollocationError> {
        let d = self.dim;
        if x.len() != (self.n + 1) * d {
            return Err(CollocationError::Shape(format!(
                "vector of length {} for {} columns of {d}",
                x.len(),
                self.n + 1
            )));
        }
        Ok((0..self.n * d)
            .map(|r| (x[r + d] - x[r]) / self.dt)
            .collect())
    }
}

fn check_shape<T: Scalar>(x: &StateArray<T>, grid: &TimeGrid<T>) -> Result<(), CollocationError> {
    if x.rows != JOINT_DIM || x.cols != grid.len() {
        return Err(CollocationError::Shape(format!(
            "state array {}x{} on a grid of {} points (need {JOINT_DIM} rows)",
            x.rows,
            x.cols,
            grid.len()
        )));
    }
    Ok(())
}

/// `(D kron I) vec(X) - F` with the vector field taken at the left endpoint
/// of every interval. Length `9 N`.
pub fn dynamics_defect<T: Scalar>(
    x: &StateArray<T>,
    yhat: T,
    theta: &PilotParams<T>,
    cfg: &VehicleConfig<T>,
    grid: &TimeGrid<T>,
) -> Result<Vec<T>, CollocationError> {
    check_shape(x, grid)?;
    let mut r = ForwardDifference::new(grid.n, grid.dt, JOINT_DIM)?.apply(&x.data)?;
    for k in 0..grid.n {
        let f = joint_rhs(x.col(k), yhat, theta, cfg, None);
        for i in 0..JOINT_DIM {
            r[k * JOINT_DIM + i] = r[k * JOINT_DIM + i] - f[i];
        }
    }
    Ok(r)
}

/// Derivatives of the defect block of interval `k`:
/// `d r_k / d x_k`, `d r_k / d x_{k+1}` (which is `I / dt`) and `d r_k / d theta`.
#[derive(Clone, Debug)]
pub struct DefectBlock<T> {
    pub wrt_left: [[T; JOINT_DIM]; JOINT_DIM],
    pub wrt_right_diag: T,
    pub wrt_theta: [[T; PARAM_DIM]; JOINT_DIM],
}

pub fn defect_jacobian<T: Scalar>(
    x: &StateArray<T>,
    theta: &PilotParams<T>,
    cfg: &VehicleConfig<T>,
    grid: &TimeGrid<T>,
) -> Result<Vec<DefectBlock<T>>, CollocationError> {
    check_shape(x, grid)?;
    let inv = T::one() / grid.dt;
    Ok((0..grid.n)
        .map(|k| {
            let (jx, jt) = joint_jacobian(x.col(k), theta, cfg);
            let mut left = [[T::zero(); JOINT_DIM]; JOINT_DIM];
            let mut wt = [[T::zero(); PARAM_DIM]; JOINT_DIM];
            for i in 0..JOINT_DIM {
                for j in 0..JOINT_DIM {
                    left[i][j] = -jx[i][j];
                }
                left[i][i] = left[i][i] - inv;
                for p in 0..PARAM_DIM {
                    wt[i][p] = -jt[i][p];
                }
            }
            DefectBlock {
                wrt_left: left,
                wrt_right_diag: inv,
                wrt_theta: wt,
            }
        })
        .collect())
}

/// Vehicle observation `h_v(x_v, y_p)`. The pilot output is accepted so a
/// feed-through observation can be substituted; position does not use it.
pub fn observe<T: Scalar>(xv: &[T], _yp: T) -> T {
    xv[0]
}

fn pilot_out<T: Scalar>(col: &[T], theta: &PilotParams<T>) -> T {
    let w = theta.output_weights();
    w[0] * col[VEHICLE_DIM] + w[1] * col[VEHICLE_DIM + 1] + w[2] * col[VEHICLE_DIM + 2]
}

fn check_run<T: Scalar>(x: &StateArray<T>, run: &RunLog) -> Result<(), CollocationError> {
    if x.rows != JOINT_DIM || x.cols != run.y_v.len() {
        return Err(CollocationError::Shape(format!(
            "state array has {} columns, run has {} samples",
            x.cols,
            run.y_v.len()
        )));
    }
    Ok(())
}

/// `|| vec(dY) - vec(H) ||^2` with `dY_k = yhat - y_v(t_k)` and
/// `H_k = yhat - h_v(x_v(t_k), h_p(x_p(t_k)))`.
pub fn fit_objective<T: Scalar>(
    x: &StateArray<T>,
    theta: &PilotParams<T>,
    run: &RunLog,
    _cfg: &VehicleConfig<T>,
) -> Result<T, CollocationError> {
    check_run(x, run)?;
    let yhat = T::lit(run.yhat);
    Ok((0..x.cols)
        .map(|k| {
            let col = x.col(k);
            let dy = yhat - T::lit(run.y_v[k]);
            let h = yhat - observe(&col[..VEHICLE_DIM], pilot_out(col, theta));
            (dy - h) * (dy - h)
        })
        .sum())
}

/// Same value as [`fit_objective`] written without the goal: `sum (z_k - y_k)^2`.
pub fn fit_residuals<T: Scalar>(
    x: &StateArray<T>,
    run: &RunLog,
) -> Result<Vec<T>, CollocationError> {
    check_run(x, run)?;
    Ok((0..x.cols)
        .map(|k| x.get(0, k) - T::lit(run.y_v[k]))
        .collect())
}

/// Writes `t, x_0..x_8, r_0..r_8` per grid point (defects are blank on the
/// last point) for inspection.
pub fn dump_csv<T: Scalar>(
    path: &Path,
    grid: &TimeGrid<T>,
    x: &StateArray<T>,
    defect: &[T],
) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut head = vec!["t".to_string()];
    head.extend((0..JOINT_DIM).map(|i| format!("x{i}")));
    head.extend((0..JOINT_DIM).map(|i| format!("r{i}")));
    writeln!(f, "{}", head.join(","))?;
    for k in 0..x.cols {
        let mut line = vec![format!("{:.16e}", grid.time(k).as_f64())];
        line.extend(x.col(k).iter().map(|v| format!("{:.16e}", v.as_f64())));
        for i in 0..JOINT_DIM {
            line.push(
                defect
                    .get(k * JOINT_DIM + i)
                    .filter(|_| k < grid.n)
                    .map(|v| format!("{:.16e}", v.as_f64()))
                    .unwrap_or_default(),
            );
        }
        writeln!(f, "{}", line.join(","))?;
    }
    f.flush()
}
