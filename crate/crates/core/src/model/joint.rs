//! Pilot in the loop: the vehicle is driven by the pilot's output and the
//! pilot perceives the tracking error `yhat - y_v`.

use serde::{Deserialize, Serialize};

use super::pilot::{pilot_dynamics, pilot_output, PilotParams, PilotState, PARAM_DIM, PILOT_DIM};
use super::vehicle::{
    vehicle_output, vehicle_rhs, vehicle_rhs_jacobian, VehicleConfig, VehicleState, VEHICLE_DIM,
};
use super::ModelError;
use crate::scalar::{all_finite, Scalar};

pub const JOINT_DIM: usize = VEHICLE_DIM + PILOT_DIM;

/// Layout of the stacked state `x = [x_v; x_p]`.
pub mod idx {
    pub const Z: usize = 0;
    pub const PHI: usize = 1;
    pub const V: usize = 2;
    pub const Q: usize = 3;
    pub const OMEGA_F: usize = 4;
    pub const OMEGA_B: usize = 5;
    pub const XP1: usize = 6;
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct JointState<T> {
    pub xv: VehicleState<T>,
    pub xp: PilotState<T>,
}

impl<T: Scalar> JointState<T> {
    pub fn zero() -> Self {
        Self {
            xv: VehicleState::hover(),
            xp: PilotState::zero(),
        }
    }

    pub fn to_array(&self) -> [T; JOINT_DIM] {
        let v = self.xv.to_array();
        let p = self.xp.0;
        [v[0], v[1], v[2], v[3], v[4], v[5], p[0], p[1], p[2]]
    }

    pub fn from_slice(x: &[T]) -> Self {
        assert_eq!(x.len(), JOINT_DIM);
        Self {
            xv: VehicleState::from_array([x[0], x[1], x[2], x[3], x[4], x[5]]),
            xp: PilotState([x[6], x[7], x[8]]),
        }
    }
}

/// Closed-loop vector field `f(x; yhat, theta)`.
pub fn joint_dynamics<T: Scalar>(
    x: &JointState<T>,
    yhat: T,
    theta: &PilotParams<T>,
    cfg: &VehicleConfig<T>,
) -> Result<[T; JOINT_DIM], ModelError> {
    let arr = x.to_array();
    if !all_finite(&arr) {
        return Err(ModelError::NonFiniteState);
    }
    Ok(joint_rhs(&arr, yhat, theta, cfg, None))
}

/// Raw right-hand side. `clamp` limits the pilot command before it reaches
/// the vehicle (the simulator's actuator path); the model itself never clamps.
#[inline]
pub(crate) fn joint_rhs<T: Scalar>(
    x: &[T],
    yhat: T,
    theta: &PilotParams<T>,
    cfg: &VehicleConfig<T>,
    clamp: Option<T>,
) -> [T; JOINT_DIM] {
    let xv = [x[0], x[1], x[2], x[3], x[4], x[5]];
    let xp = PilotState([x[6], x[7], x[8]]);
    let mut u = pilot_output(&xp, theta);
    if let Some(lim) = clamp {
        u = u.max(-lim).min(lim);
    }
    let fv = vehicle_rhs(&xv, u, cfg);
    let up = yhat - vehicle_output(&VehicleState::from_array(xv));
    let fp = pilot_dynamics(&xp, up, theta);
    [
        fv[0], fv[1], fv[2], fv[3], fv[4], fv[5], fp[0], fp[1], fp[2],
    ]
}

/// Jacobians of the unclamped joint field: `df/dx` (9x9) and `df/dtheta` (9x6).
pub fn joint_jacobian<T: Scalar>(
    x: &[T],
    theta: &PilotParams<T>,
    cfg: &VehicleConfig<T>,
) -> ([[T; JOINT_DIM]; JOINT_DIM], [[T; PARAM_DIM]; JOINT_DIM]) {
    let z = T::zero();
    let xv = [x[0], x[1], x[2], x[3], x[4], x[5]];
    let (jv, ju) = vehicle_rhs_jacobian(&xv, cfg);
    let w = theta.output_weights();
    let mut jx = [[z; JOINT_DIM]; JOINT_DIM];
    let mut jt = [[z; PARAM_DIM]; JOINT_DIM];
    for i in 0..VEHICLE_DIM {
        jx[i][..VEHICLE_DIM].copy_from_slice(&jv[i]);
        for k in 0..PILOT_DIM {
            jx[i][VEHICLE_DIM + k] = ju[i] * w[k];
            jt[i][3 + k] = ju[i] * x[VEHICLE_DIM + k];
        }
    }
    let p = VEHICLE_DIM;
    jx[p][p + 1] = T::one();
    jx[p + 1][p + 2] = T::one();
    jx[p + 2][idx::Z] = -T::one();
    jx[p + 2][p] = -theta.theta[0];
    jx[p + 2][p + 1] = -theta.theta[1];
    jx[p + 2][p + 2] = -theta.theta[2];
    jt[p + 2][0] = -x[p];
    jt[p + 2][1] = -x[p + 1];
    jt[p + 2][2] = -x[p + 2];
    (jx, jt)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn th() -> PilotParams<f64> {
        PilotParams::new([0.9, 2.1, 1.7, 0.03, 0.2, -0.05])
    }

    #[test]
    fn equilibrium_at_goal() {
        let out =
            joint_dynamics(&JointState::zero(), 0.0, &th(), &VehicleConfig::default()).unwrap();
        assert_eq!(out, [0.0; JOINT_DIM]);
    }

    #[test]
    fn goal_offset_drives_pilot_only() {
        for yhat in [10.0, 20.0] {
            let out = joint_dynamics(&JointState::zero(), yhat, &th(), &VehicleConfig::default())
                .unwrap();
            let mut want = [0.0; JOINT_DIM];
            want[8] = yhat;
            assert_eq!(out, want);
        }
    }

    #[test]
    fn clamp_only_touches_vehicle_input() {
        let cfg = VehicleConfig::default();
        let theta = PilotParams::new([1.0, 1.0, 2.0, 10.0, 0.0, 0.0]);
        let mut x = [0.0; JOINT_DIM];
        x[6] = 1.0;
        let free = joint_rhs(&x, 5.0, &theta, &cfg, None);
        let clamped = joint_rhs(&x, 5.0, &theta, &cfg, Some(1.0));
        let unit = PilotParams::new([1.0, 1.0, 2.0, 1.0, 0.0, 0.0]);
        let reference = joint_rhs(&x, 5.0, &unit, &cfg, None);
        assert_eq!(clamped[..6], reference[..6]);
        assert_ne!(free[4], clamped[4]);
        assert_eq!(free[6..], clamped[6..]);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let cfg = VehicleConfig::default();
        let theta = th();
        let x = [2.0, 0.2, 0.5, -0.1, 0.3, -0.2, 1.5, -0.7, 0.4];
        let yhat = 10.0;
        let (jx, jt) = joint_jacobian(&x, &theta, &cfg);
        let h = 1e-6;
        for j in 0..JOINT_DIM {
            let mut xp = x;
            let mut xm = x;
            xp[j] += h;
            xm[j] -= h;
            let fp = joint_rhs(&xp, yhat, &theta, &cfg, None);
            let fm = joint_rhs(&xm, yhat, &theta, &cfg, None);
            for i in 0..JOINT_DIM {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                assert!(
                    (fd - jx[i][j]).abs() < 1e-6 * (1.0 + fd.abs()),
                    "dx ({i},{j}) {fd} {}",
                    jx[i][j]
                );
            }
        }
        for j in 0..PARAM_DIM {
            let mut tp = theta;
            let mut tm = theta;
            tp.theta[j] += h;
            tm.theta[j] -= h;
            let fp = joint_rhs(&x, yhat, &tp, &cfg, None);
            let fm = joint_rhs(&x, yhat, &tm, &cfg, None);
            for i in 0..JOINT_DIM {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                assert!(
                    (fd - jt[i][j]).abs() < 1e-6 * (1.0 + fd.abs()),
                    "dtheta ({i},{j})"
                );
            }
        }
    }
}
