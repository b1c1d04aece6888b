//! Third-order SISO pilot model in controllable canonical form.
//!
//! The six parameters split into the characteristic polynomial coefficients
//! `theta[0..3]` (so that `P(s) = s^3 + theta[2] s^2 + theta[1] s + theta[0]`)
//! and the output weights `theta[3..6]`.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

pub const PILOT_DIM: usize = 3;
pub const PARAM_DIM: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct PilotParams<T> {
    pub theta: [T; PARAM_DIM],
}

impl<T: Scalar> PilotParams<T> {
    pub fn new(theta: [T; PARAM_DIM]) -> Self {
        Self { theta }
    }

    pub fn from_f64(theta: [f64; PARAM_DIM]) -> Self {
        Self {
            theta: theta.map(T::lit),
        }
    }

    /// Denominator split into a stable starting point with zero output weights.
    pub fn neutral() -> Self {
        Self::from_f64([6.0, 11.0, 6.0, 0.0, 0.0, 0.0])
    }

    pub fn output_weights(&self) -> [T; PILOT_DIM] {
        [self.theta[3], self.theta[4], self.theta[5]]
    }

    /// The four quantities that must be strictly positive for a Hurwitz
    /// companion matrix: `theta1, theta2, theta3, theta3*theta2 - theta1`.
    pub fn routh_margins(&self) -> [T; 4] {
        let [t1, t2, t3, ..] = self.theta;
        [t1, t2, t3, t3 * t2 - t1]
    }

    /// Strict Routh-Hurwitz test for the cubic characteristic polynomial.
    pub fn is_stable(&self) -> bool {
        routh_stable(self)
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().all(|t| t.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> PilotParams<U> {
        PilotParams {
            theta: self.theta.map(|t| U::lit(t.as_f64())),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct PilotState<T>(pub [T; PILOT_DIM]);

impl<T: Scalar> PilotState<T> {
    pub fn zero() -> Self {
        Self([T::zero(); PILOT_DIM])
    }
}

/// `xp' = A(theta) xp + B up` with `A` the companion matrix of the characteristic polynomial.
#[inline]
pub fn pilot_dynamics<T: Scalar>(
    xp: &PilotState<T>,
    up: T,
    theta: &PilotParams<T>,
) -> [T; PILOT_DIM] {
    let [x1, x2, x3] = xp.0;
    let [t1, t2, t3, ..] = theta.theta;
    [x2, x3, -t1 * x1 - t2 * x2 - t3 * x3 + up]
}

/// Normalized stick command. Not clamped: saturation is a constraint of the
/// estimation problem and a property of the simulator's actuator path.
#[inline]
pub fn pilot_output<T: Scalar>(xp: &PilotState<T>, theta: &PilotParams<T>) -> T {
    let [x1, x2, x3] = xp.0;
    theta.theta[3] * x1 + theta.theta[4] * x2 + theta.theta[5] * x3
}

pub fn routh_stable<T: Scalar>(theta: &PilotParams<T>) -> bool {
    theta.routh_margins().iter().all(|&m| m > T::zero())
}
