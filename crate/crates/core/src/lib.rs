//! Simulation core for a hydraulic loader crane lifting a waste container
//! with a swinging discharge unit: kinematics, plant, nominal controller,
//! reference trajectory and the learning environment.

// Validation uses `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod controller;
pub mod env;
pub mod error;
pub mod kinematics;
pub mod log;
pub mod plant;
pub mod trajectory;

pub use error::{CoreError, Result};
pub use kinematics::{KinematicChain, Pose, Vector7, N_JOINTS};
pub use env::{CraneEnv, EnvConfig, Observation, Side, StepInfo, StepOutcome, TerminationEvent, ACT_DIM, OBS_DIM};
