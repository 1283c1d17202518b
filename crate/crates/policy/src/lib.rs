//! Residual policy learning: a Gaussian MLP policy with a separate value
//! network, trained with PPO on vectorized environments.

// Validation uses `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adam;
pub mod checkpoint;
pub mod env;
pub mod error;
pub mod mlp;
pub mod normalizer;
pub mod policy;
pub mod ppo;
pub mod train;

pub use checkpoint::Checkpoint;
pub use env::{ActionRepeat, Environment, ToyEnv, Transition};
pub use error::{PolicyError, Result};
pub use policy::ActorCritic;
pub use ppo::{PpoConfig, RolloutBatch};
pub use train::{evaluate, train, CurveRow, EpisodeResult, Trainer};
