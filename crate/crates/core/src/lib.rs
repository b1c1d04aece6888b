//! Identification of a linear pilot model from closed-loop vehicle
//! trajectories: the states on the sample grid become decision variables,
//! explicit-Euler defects tie them to the dynamics, and an augmented-Lagrangian
//! least-squares solver fits one pilot model to all runs at once.
//!
//! Model, simulation and transcription code is generic over [`scalar::Scalar`]
//! (`f32` or `f64`); the solver and estimator work in `f64`.

pub mod cli;
pub mod collocation;
pub mod estimator;
pub mod model;
pub mod nlp;
pub mod runlog;
pub mod scalar;
pub mod simulate;
pub mod synth;

pub type PilotParams64 = model::PilotParams<f64>;
pub type PilotParams32 = model::PilotParams<f32>;
pub type VehicleConfig64 = model::VehicleConfig<f64>;
pub type VehicleConfig32 = model::VehicleConfig<f32>;
pub type JointState64 = model::JointState<f64>;
pub type JointState32 = model::JointState<f32>;
pub type Trajectory64 = simulate::Trajectory<f64>;
pub type Trajectory32 = simulate::Trajectory<f32>;
pub type TimeGrid64 = collocation::TimeGrid<f64>;
pub type TimeGrid32 = collocation::TimeGrid<f32>;
pub type StateArray64 = collocation::StateArray<f64>;
pub type StateArray32 = collocation::StateArray<f32>;
