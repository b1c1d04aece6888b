//! Fixed-step RK4 integration of the closed loop and sampling into run logs.

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::model::{
    joint_rhs, pilot_output, routh_stable, vehicle_rhs_unchecked, JointState, PilotParams,
    VehicleConfig, JOINT_DIM, VEHICLE_DIM,
};
use crate::runlog::{RunLog, SCHEMA_VERSION};
use crate::scalar::{all_finite, Scalar};

/// Default integrator step: ten substeps per 20 Hz sample.
pub const DEFAULT_DT_INT: f64 = 0.005;

/// Physical stick travel.
pub const STICK_LIMIT: f64 = 1.0;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("state became non-finite at t = {time}")]
    NonFiniteState { time: f64 },
    #[error("invalid step: {0}")]
    InvalidStep(String),
    #[error("sample period {period} is not a multiple of the integrator step {dt_int}")]
    RateMismatch { period: f64, dt_int: f64 },
}

#[derive(Clone, Debug)]
pub struct Trajectory<T> {
    pub yhat: T,
    pub dt: T,
    pub times: Vec<T>,
    pub states: Vec<JointState<T>>,
    /// Pilot command after the stick clamp.
    pub commands: Vec<T>,
    pub outputs: Vec<T>,
}

impl<T: Scalar> Trajectory<T> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_output(&self) -> T {
        *self
            .outputs
            .last()
            .expect("trajectory has at least one point")
    }
}

pub fn hover_initial_state<T: Scalar>() -> JointState<T> {
    JointState::zero()
}

fn step_count<T: Scalar>(t_final: T, dt: T) -> Result<usize, SimError> {
    if !(dt > T::zero()) || !(t_final >= T::zero()) {
        return Err(SimError::InvalidStep(format!("dt={dt}, T={t_final}")));
    }
    let ratio = (t_final / dt).as_f64();
    let steps = ratio.round();
    if (ratio - steps).abs() > 1e-6 {
        return Err(SimError::InvalidStep(format!(
            "T={t_final} is not an integer multiple of dt={dt}"
        )));
    }
    Ok(steps as usize)
}

fn rk4_step<T: Scalar, F>(x: &[T; JOINT_DIM], dt: T, f: F) -> [T; JOINT_DIM]
where
    F: Fn(&[T; JOINT_DIM]) -> [T; JOINT_DIM],
{
    let half = dt / T::lit(2.0);
    let six = T::lit(6.0);
    let two = T::lit(2.0);
    let axpy = |a: &[T; JOINT_DIM], s: T, b: &[T; JOINT_DIM]| -> [T; JOINT_DIM] {
        let mut out = *a;
        for i in 0..JOINT_DIM {
            out[i] = a[i] + s * b[i];
        }
        out
    };
    let k1 = f(x);
    let k2 = f(&axpy(x, half, &k1));
    let k3 = f(&axpy(x, half, &k2));
    let k4 = f(&axpy(x, dt, &k3));
    let mut out = *x;
    for i in 0..JOINT_DIM {
        out[i] = x[i] + dt / six * (k1[i] + two * k2[i] + two * k3[i] + k4[i]);
    }
    out
}

/// Integrates the closed loop from `x0` over `[0, t_final]` with classical RK4.
/// The pilot command is clamped to the stick travel before it reaches the vehicle.
pub fn simulate_closed_loop<T: Scalar>(
    x0: &JointState<T>,
    yhat: T,
    theta: &PilotParams<T>,
    cfg: &VehicleConfig<T>,
    t_final: T,
    dt_int: T,
) -> Result<Trajectory<T>, SimError> {
    let steps = step_count(t_final, dt_int)?;
    if !routh_stable(theta) {
        warn!(
            "simulating with a pilot model that fails the Routh test: {:?}",
            theta.theta
        );
    }
    let lim = T::lit(STICK_LIMIT);
    let rhs = |x: &[T; JOINT_DIM]| joint_rhs(x, yhat, theta, cfg, Some(lim));
    let command = |x: &[T; JOINT_DIM]| {
        let u = pilot_output(&JointState::from_slice(x).xp, theta);
        u.max(-lim).min(lim)
    };

    let mut x = x0.to_array();
    let mut traj = Trajectory {
        yhat,
        dt: dt_int,
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        commands: Vec::with_capacity(steps + 1),
        outputs: Vec::with_capacity(steps + 1),
    };
    for k in 0..=steps {
        if k > 0 {
            x = rk4_step(&x, dt_int, rhs);
        }
        let t = T::lit(k as f64) * dt_int;
        if !all_finite(&x) {
            return Err(SimError::NonFiniteState { time: t.as_f64() });
        }
        traj.times.push(t);
        traj.states.push(JointState::from_slice(&x));
        traj.commands.push(command(&x));
        traj.outputs.push(x[0]);
    }
    Ok(traj)
}

/// Decimates a trajectory onto a `rate` Hz grid and corrupts the outputs with
/// i.i.d. Gaussian noise.
///
/// Noise comes from ChaCha8 seeded with `seed` (via `SeedableRng::seed_from_u64`)
/// through `rand_distr::Normal`, so identical inputs give identical logs.
pub fn sample_run<T: Scalar>(
    traj: &Trajectory<T>,
    rate: f64,
    sigma: f64,
    seed: u64,
    record_joystick: bool,
) -> Result<RunLog, SimError> {
    let dt_int = traj.dt.as_f64();
    let period = 1.0 / rate;
    let stride_f = period / dt_int;
    let stride = stride_f.round();
    if !(rate > 0.0) || stride < 1.0 || (stride_f - stride).abs() > 1e-9 * stride_f.max(1.0) {
        return Err(SimError::RateMismatch { period, dt_int });
    }
    let stride = stride as usize;
    let last = traj.len() - 1;
    if last % stride != 0 {
        return Err(SimError::RateMismatch { period, dt_int });
    }
    let n = last / stride;
    let normal =
        Normal::new(0.0, sigma).map_err(|_| SimError::InvalidStep(format!("sigma={sigma}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Vec::with_capacity(n + 1);
    let mut y = Vec::with_capacity(n + 1);
    let mut u = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let i = k * stride;
        t.push(k as f64 / rate);
        let clean = traj.outputs[i].as_f64();
        let noise = if sigma > 0.0 {
            normal.sample(&mut rng)
        } else {
            0.0
        };
        y.push(clean + noise);
        u.push(traj.commands[i].as_f64());
    }
    Ok(RunLog {
        yhat: traj.yhat.as_f64(),
        sample_rate: rate,
        duration: n as f64 / rate,
        t,
        y_v: y,
        u_joystick: record_joystick.then_some(u),
        noise_sigma: sigma,
        seed,
        schema_version: SCHEMA_VERSION,
    })
}

/// Vehicle alone from hover driven by a zero-order-held command sequence
/// sampled every `command_period`; returns the position at each command sample.
pub fn replay_commands<T: Scalar>(
    cfg: &VehicleConfig<T>,
    commands: &[T],
    command_period: T,
    dt_int: T,
) -> Result<Vec<T>, SimError> {
    let sub = step_count(command_period, dt_int)?.max(1);
    let lim = T::lit(STICK_LIMIT);
    let mut x = [T::zero(); VEHICLE_DIM];
    let mut out = Vec::with_capacity(commands.len());
    for (k, &u) in commands.iter().enumerate() {
        out.push(x[0]);
        if k + 1 == commands.len() {
            break;
        }
        let u = u.max(-lim).min(lim);
        for _ in 0..sub {
            x = rk4_vehicle(&x, u, dt_int, cfg);
        }
        if !all_finite(&x) {
            return Err(SimError::NonFiniteState {
                time: (T::lit((k + 1) as f64) * command_period).as_f64(),
            });
        }
    }
    Ok(out)
}

fn rk4_vehicle<T: Scalar>(
    x: &[T; VEHICLE_DIM],
    u: T,
    dt: T,
    cfg: &VehicleConfig<T>,
) -> [T; VEHICLE_DIM] {
    let f = |s: &[T; VEHICLE_DIM]| vehicle_rhs_unchecked(s, u, cfg);
    let add = |a: &[T; VEHICLE_DIM], s: T, b: &[T; VEHICLE_DIM]| {
        let mut o = *a;
        for i in 0..VEHICLE_DIM {
            o[i] = a[i] + s * b[i];
        }
        o
    };
    let half = dt / T::lit(2.0);
    let k1 = f(x);
    let k2 = f(&add(x, half, &k1));
    let k3 = f(&add(x, half, &k2));
    let k4 = f(&add(x, dt, &k3));
    let mut o = *x;
    for i in 0..VEHICLE_DIM {
        o[i] = x[i] + dt / T::lit(6.0) * (k1[i] + T::lit(2.0) * (k2[i] + k3[i]) + k4[i]);
    }
    o
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> VehicleConfig<f64> {
        VehicleConfig::default()
    }

    fn theta() -> PilotParams<f64> {
        PilotParams::new([27.0, 27.0, 9.0, 0.216, 1.35, 0.0])
    }

    #[test]
    fn equilibrium_stays_put() {
        let tr = simulate_closed_loop(&hover_initial_state(), 0.0, &theta(), &cfg(), 2.0, 0.005)
            .unwrap();
        assert_eq!(tr.len(), 401);
        assert!(tr.outputs.iter().all(|&y| y == 0.0));
        assert!(tr.states.iter().all(|s| s.to_array() == [0.0; JOINT_DIM]));
    }

    #[test]
    fn hover_state_is_zero() {
        let x = hover_initial_state::<f64>();
        assert_eq!(x.to_array(), [0.0; JOINT_DIM]);
        assert_eq!(x.xv.z, 0.0);
    }

    #[test]
    fn uniform_time_grid() {
        let tr = simulate_closed_loop(&hover_initial_state(), 10.0, &theta(), &cfg(), 15.0, 0.005)
            .unwrap();
        assert_eq!(tr.len(), 3001);
        for (k, t) in tr.times.iter().enumerate() {
            assert!((t - k as f64 * 0.005).abs() <= 1e-12 * (1.0 + t));
        }
        assert!((tr.times.last().unwrap() - 15.0).abs() < 0.0025);
    }

    #[test]
    fn commands_respect_stick_travel() {
        let hot = PilotParams::new([1.0, 3.0, 3.0, 5.0, 5.0, 0.0]);
        let tr = simulate_closed_loop(&hover_initial_state(), 20.0, &hot, &cfg(), 5.0, 0.005);
        if let Ok(tr) = tr {
            assert!(tr.commands.iter().all(|u| u.abs() <= 1.0));
            assert!(tr.commands.iter().any(|u| u.abs() == 1.0));
        }
    }

    #[test]
    fn rejects_misaligned_rate() {
        let tr = simulate_closed_loop(&hover_initial_state(), 10.0, &theta(), &cfg(), 1.5, 0.005)
            .unwrap();
        assert!(matches!(
            sample_run(&tr, 30.0, 0.0, 1, false),
            Err(SimError::RateMismatch { .. })
        ));
        assert!(matches!(sample_run(&tr, 20.0, 0.0, 1, false), Ok(_)));
    }

    #[test]
    fn noiseless_samples_are_exact() {
        let tr = simulate_closed_loop(&hover_initial_state(), 10.0, &theta(), &cfg(), 15.0, 0.005)
            .unwrap();
        let log = sample_run(&tr, 20.0, 0.0, 3, true).unwrap();
        assert_eq!(log.t.len(), 301);
        for k in 0..=300 {
            assert_eq!(log.y_v[k], tr.outputs[10 * k]);
            assert_eq!(log.u_joystick.as_ref().unwrap()[k], tr.commands[10 * k]);
        }
        log.validate().unwrap();
    }

    #[test]
    fn same_seed_same_log() {
        let tr = simulate_closed_loop(&hover_initial_state(), 10.0, &theta(), &cfg(), 15.0, 0.005)
            .unwrap();
        let a = sample_run(&tr, 20.0, 0.05, 11, false).unwrap();
        let b = sample_run(&tr, 20.0, 0.05, 11, false).unwrap();
        let c = sample_run(&tr, 20.0, 0.05, 12, false).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.y_v, c.y_v);
    }

    #[test]
    fn noise_variance_within_chi_square_band() {
        // 301 samples: the 0.1%/99.9% chi-square quantiles sit inside [0.8, 1.2] sigma^2
        let tr = simulate_closed_loop(&hover_initial_state(), 10.0, &theta(), &cfg(), 15.0, 0.005)
            .unwrap();
        let sigma = 0.05;
        let log = sample_run(&tr, 20.0, sigma, 0, false).unwrap();
        let d: Vec<f64> = (0..=300).map(|k| log.y_v[k] - tr.outputs[10 * k]).collect();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let var = d.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (d.len() - 1) as f64;
        let ratio = var / (sigma * sigma);
        assert!((0.8..=1.2).contains(&ratio), "{ratio}");
    }

    #[test]
    fn replay_of_zero_commands_hovers() {
        let y = replay_commands(&cfg(), &[0.0; 301], 0.05, 0.01).unwrap();
        assert_eq!(y.len(), 301);
        assert!(y.iter().all(|&z| z == 0.0));
    }
}
