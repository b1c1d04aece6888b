//! Pitch-axis quadcopter with an internal pitch-tracking loop.
//!
//! State `[z, phi, v, q, omega_f, omega_b]`: inertial position, pitch angle,
//! forward body velocity, pitch rate and front/back propeller speed
//! perturbations from hover. The inner loop turns a normalized stick command
//! into a pitch reference `command_scale * u` and tracks it with differential
//! throttle about the hover setting.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use super::roots;
use super::ModelError;
use crate::scalar::{all_finite, Scalar};

pub const VEHICLE_DIM: usize = 6;

/// Gain on `[reference - phi, -q]` as printed with the propeller model.
/// It does not stabilize the inner loop for `prop_decay = 14.48` (the Routh
/// condition needs `prop_decay * |k_q| > |k_phi|`), so it is kept for
/// reference and rejected by [`VehicleConfig::validate`].
pub const PUBLISHED_GAIN: [f64; 2] = [-76.37, -1.02];

/// Default gain: inner loop poles at `-5 (0.7 +/- 0.714i)` and `-7.48`
/// for the default physical constants (see [`VehicleConfig::place_gain`]).
pub const DEFAULT_GAIN: [f64; 2] = [-595.63, -246.40];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct VehicleConfig<T> {
    pub mass_kg: T,
    pub inertia_yy: T,
    pub gravity: T,
    /// Propeller speed decay rate (1/s).
    pub prop_decay: T,
    /// Propeller speed gain per throttle count.
    pub prop_gain: T,
    /// Throttle setting at hover (counts).
    pub hover_throttle: T,
    /// Thrust per unit of propeller speed perturbation, linearized about hover.
    pub thrust_slope: T,
    #[serde(rename = "gain_K")]
    pub gain_k: [T; 2],
    /// Pitch reference per unit stick (rad).
    pub command_scale: T,
}

impl<T: Scalar> Default for VehicleConfig<T> {
    fn default() -> Self {
        Self {
            mass_kg: T::lit(1.0),
            inertia_yy: T::lit(0.01),
            gravity: T::lit(9.81),
            prop_decay: T::lit(14.48),
            prop_gain: T::lit(0.0222),
            hover_throttle: T::lit(1601.0),
            thrust_slope: T::lit(0.05),
            gain_k: DEFAULT_GAIN.map(T::lit),
            command_scale: T::FRAC_PI_4(),
        }
    }
}

impl<T: Scalar> VehicleConfig<T> {
    pub fn with_gain(mut self, gain: [T; 2]) -> Self {
        self.gain_k = gain;
        self
    }

    /// Thrust of one propeller at speed perturbation `omega`.
    #[inline]
    pub fn thrust(&self, omega: T) -> T {
        self.mass_kg * self.gravity / T::lit(4.0) + self.thrust_slope * omega
    }

    /// `d f_v / d u`: the vehicle field is affine in the command, so this is
    /// constant.
    pub fn command_sensitivity(&self) -> [T; VEHICLE_DIM] {
        let g = self.prop_gain * self.gain_k[0] * self.command_scale;
        let z = T::zero();
        [z, z, z, z, -g, g]
    }

    /// Differential throttle `delta = K [scale*u - phi, -q]`; the front motor
    /// receives `hover - delta` and the back motor `hover + delta`.
    #[inline]
    pub fn throttle(&self, phi: T, q: T, uv: T) -> (T, T) {
        let delta = self.gain_k[0] * (self.command_scale * uv - phi) + self.gain_k[1] * (-q);
        (self.hover_throttle - delta, self.hover_throttle + delta)
    }

    /// Moment arm factor `sqrt(2) / I_yy` times the thrust slope: pitch
    /// acceleration per unit of `omega_f - omega_b`.
    #[inline]
    fn moment_gain(&self) -> T {
        T::SQRT_2() / self.inertia_yy * self.thrust_slope
    }

    /// Jacobian of the `(phi, q, omega_f, omega_b)` subsystem at hover with zero command.
    pub fn inner_loop_jacobian(&self) -> Vec<Vec<T>> {
        let z = T::zero();
        let mg = self.moment_gain();
        let b = self.prop_gain;
        let a = self.prop_decay;
        let [kphi, kq] = self.gain_k;
        // d(delta)/d(phi) = -kphi, d(delta)/d(q) = -kq
        vec![
            vec![z, T::one(), z, z],
            vec![z, z, mg, -mg],
            vec![b * kphi, b * kq, -a, z],
            vec![-b * kphi, -b * kq, z, -a],
        ]
    }

    pub fn inner_loop_eigenvalues(&self) -> Vec<Complex<T>> {
        inner_loop_eigenvalues(self)
    }

    /// Gain giving the differential inner loop the characteristic polynomial
    /// `(s + prop_decay - 2 zeta omega)(s^2 + 2 zeta omega s + omega^2)`.
    ///
    /// The `s^2` coefficient of the differential loop is pinned to
    /// `prop_decay`, so only the oscillatory pair is free.
    pub fn place_gain(&self, zeta: T, omega: T) -> Result<[T; 2], ModelError> {
        let two = T::lit(2.0);
        let p3 = self.prop_decay - two * zeta * omega;
        if !(p3 > T::zero()) || !(omega > T::zero()) || !(zeta > T::zero()) {
            return Err(ModelError::Placement(format!(
                "requested pair (zeta={zeta}, omega={omega}) leaves third pole {} not in the left half plane",
                -p3
            )));
        }
        // s^3 + a s^2 + 2 b mg kq' s + 2 b mg kphi' with kq' = -kq, kphi' = -kphi
        let kappa = two * self.prop_gain * self.moment_gain();
        let c1 = omega * omega + p3 * two * zeta * omega;
        let c0 = p3 * omega * omega;
        Ok([-c0 / kappa, -c1 / kappa])
    }

    /// Checks physical positivity and that the inner pitch loop is Hurwitz.
    pub fn validate(&self) -> Result<(), ModelError> {
        let fields = [
            self.mass_kg,
            self.inertia_yy,
            self.gravity,
            self.prop_decay,
            self.prop_gain,
            self.hover_throttle,
            self.thrust_slope,
            self.gain_k[0],
            self.gain_k[1],
            self.command_scale,
        ];
        if !all_finite(&fields) {
            return Err(ModelError::InvalidConfig("non-finite field".into()));
        }
        if !(self.mass_kg > T::zero()) {
            return Err(ModelError::InvalidConfig("mass_kg must be positive".into()));
        }
        if !(self.inertia_yy > T::zero()) {
            return Err(ModelError::InvalidConfig(
                "inertia_yy must be positive".into(),
            ));
        }
        if !(self.prop_decay > T::zero()) {
            return Err(ModelError::InvalidConfig(
                "prop_decay must be positive".into(),
            ));
        }
        let eig = self.inner_loop_eigenvalues();
        if eig.iter().any(|l| !(l.re < T::zero())) {
            return Err(ModelError::UnstableInnerLoop(
                eig.iter().map(|l| (l.re.as_f64(), l.im.as_f64())).collect(),
            ));
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> VehicleConfig<U> {
        let c = |x: T| U::lit(x.as_f64());
        VehicleConfig {
            mass_kg: c(self.mass_kg),
            inertia_yy: c(self.inertia_yy),
            gravity: c(self.gravity),
            prop_decay: c(self.prop_decay),
            prop_gain: c(self.prop_gain),
            hover_throttle: c(self.hover_throttle),
            thrust_slope: c(self.thrust_slope),
            gain_k: self.gain_k.map(c),
            command_scale: c(self.command_scale),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct VehicleState<T> {
    pub z: T,
    pub phi: T,
    pub v: T,
    pub q: T,
    pub omega_f: T,
    pub omega_b: T,
}

impl<T: Scalar> VehicleState<T> {
    pub fn hover() -> Self {
        Self::from_array([T::zero(); VEHICLE_DIM])
    }

    pub fn from_array(x: [T; VEHICLE_DIM]) -> Self {
        let [z, phi, v, q, omega_f, omega_b] = x;
        Self {
            z,
            phi,
            v,
            q,
            omega_f,
            omega_b,
        }
    }

    pub fn to_array(&self) -> [T; VEHICLE_DIM] {
        [self.z, self.phi, self.v, self.q, self.omega_f, self.omega_b]
    }
}

#[inline]
pub fn prop_dynamics<T: Scalar>(p: T, e: T, cfg: &VehicleConfig<T>) -> T {
    -cfg.prop_decay * p + cfg.prop_gain * (e - cfg.hover_throttle)
}

pub fn vehicle_dynamics<T: Scalar>(
    xv: &VehicleState<T>,
    uv: T,
    cfg: &VehicleConfig<T>,
) -> Result<[T; VEHICLE_DIM], ModelError> {
    if !all_finite(&xv.to_array()) || !uv.is_finite() {
        return Err(ModelError::NonFiniteState);
    }
    Ok(vehicle_rhs(&xv.to_array(), uv, cfg))
}

/// Unchecked right-hand side on the raw state array.
#[inline]
pub(crate) fn vehicle_rhs<T: Scalar>(
    x: &[T; VEHICLE_DIM],
    uv: T,
    cfg: &VehicleConfig<T>,
) -> [T; VEHICLE_DIM] {
    let [_, phi, v, q, wf, wb] = *x;
    let tf = cfg.thrust(wf);
    let tb = cfg.thrust(wb);
    let (ef, eb) = cfg.throttle(phi, q, uv);
    let two = T::lit(2.0);
    [
        v,
        q,
        two / cfg.mass_kg * (tf + tb) * phi.sin(),
        T::SQRT_2() / cfg.inertia_yy * (tf - tb),
        prop_dynamics(wf, ef, cfg),
        prop_dynamics(wb, eb, cfg),
    ]
}

/// Partial derivatives of [`vehicle_rhs`] with respect to the state (row-major
/// 6x6) and to the command (length 6).
pub(crate) fn vehicle_rhs_jacobian<T: Scalar>(
    x: &[T; VEHICLE_DIM],
    cfg: &VehicleConfig<T>,
) -> ([[T; VEHICLE_DIM]; VEHICLE_DIM], [T; VEHICLE_DIM]) {
    let z = T::zero();
    let two = T::lit(2.0);
    let [_, phi, _, _, wf, wb] = *x;
    let c = cfg.thrust_slope;
    let b = cfg.prop_gain;
    let a = cfg.prop_decay;
    let [kphi, kq] = cfg.gain_k;
    let sum_thrust = cfg.thrust(wf) + cfg.thrust(wb);
    let lat = two / cfg.mass_kg;
    let mom = T::SQRT_2() / cfg.inertia_yy;
    // delta = kphi (s u - phi) - kq q ; e_f = e0 - delta ; e_b = e0 + delta
    let mut jx = [[z; VEHICLE_DIM]; VEHICLE_DIM];
    jx[0][2] = T::one();
    jx[1][3] = T::one();
    jx[2][1] = lat * sum_thrust * phi.cos();
    jx[2][4] = lat * c * phi.sin();
    jx[2][5] = lat * c * phi.sin();
    jx[3][4] = mom * c;
    jx[3][5] = -mom * c;
    jx[4][1] = b * kphi;
    jx[4][3] = b * kq;
    jx[4][4] = -a;
    jx[5][1] = -b * kphi;
    jx[5][3] = -b * kq;
    jx[5][5] = -a;
    (jx, cfg.command_sensitivity())
}

/// Controlled output: inertial position.
#[inline]
pub fn vehicle_output<T: Scalar>(xv: &VehicleState<T>) -> T {
    xv.z
}

pub fn inner_loop_eigenvalues<T: Scalar>(cfg: &VehicleConfig<T>) -> Vec<Complex<T>> {
    roots::eigenvalues(&cfg.inner_loop_jacobian())
}
