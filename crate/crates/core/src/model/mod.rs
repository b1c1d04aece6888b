//! Vehicle, pilot and closed-loop dynamics plus the stability checks the
//! rest of the crate relies on.

mod joint;
mod pilot;
pub mod roots;
mod vehicle;

use std::path::Path;

use num_complex::Complex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub(crate) use joint::joint_rhs;
pub use joint::{idx, joint_dynamics, joint_jacobian, JointState, JOINT_DIM};
pub(crate) use vehicle::vehicle_rhs as vehicle_rhs_unchecked;

pub use pilot::{
    pilot_dynamics, pilot_output, routh_stable, PilotParams, PilotState, PARAM_DIM, PILOT_DIM,
};
pub use vehicle::{
    inner_loop_eigenvalues, prop_dynamics, vehicle_dynamics, vehicle_output, VehicleConfig,
    VehicleState, DEFAULT_GAIN, PUBLISHED_GAIN, VEHICLE_DIM,
};

use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("state contains non-finite entries")]
    NonFiniteState,
    #[error("invalid vehicle configuration: {0}")]
    InvalidConfig(String),
    #[error("inner pitch loop is not Hurwitz, eigenvalues {0:?}")]
    UnstableInnerLoop(Vec<(f64, f64)>),
    #[error("pole placement failed: {0}")]
    Placement(String),
    #[error("config file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Roots of `s^3 + theta3 s^2 + theta2 s + theta1`.
pub fn char_poly_roots<T: Scalar>(theta: &PilotParams<T>) -> Vec<Complex<T>> {
    let [t1, t2, t3, ..] = theta.theta;
    roots::monic_roots(&[t3, t2, t1])
}

/// On-disk configuration document. `pilot` is only needed for synthesis.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(flatten)]
    pub vehicle: VehicleConfig<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pilot: Option<PilotParams<f64>>,
}

impl ModelConfig {
    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let cfg: ModelConfig = serde_json::from_str(text)?;
        cfg.vehicle.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a configuration file; rejects configurations whose
    /// inner pitch loop is not stable.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Like [`load`](Self::load) but replaces the gain by pole placement
    /// before validating.
    pub fn load_with_placement(
        path: impl AsRef<Path>,
        zeta: f64,
        omega: f64,
    ) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg: ModelConfig = serde_json::from_str(&text)?;
        cfg.vehicle.gain_k = cfg.vehicle.place_gain(zeta, omega)?;
        cfg.vehicle.validate()?;
        Ok(cfg)
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vehicle: VehicleConfig::default(),
            pilot: None,
        }
    }
}
