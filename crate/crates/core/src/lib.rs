//! AoI-aware beam prediction under an average sensing-rate budget.
//!
//! The crate is organised bottom-up:
//!
//! - [`env`]: synthetic mmWave street scenario (ULA channel, DFT codebook,
//!   noisy position and camera-surrogate observations, optimal beam labels).
//! - [`aoi_queue`]: age-of-information recursion, the virtual queue that
//!   tracks the sensing budget, and the drift-plus-penalty reward.
//! - [`nn`]: a small dense network stack shared by the beam predictor and the
//!   Q-network.
//! - [`predictor`]: age-augmented dataset construction, predictor training and
//!   top-k evaluation.
//! - [`dqn`]: the sensing agent (replay memory, target network, Bellman
//!   updates) and the sequential inference loop.
//! - [`policies`]: baseline sensing policies.
//! - [`harness`]: end-to-end pipeline, sweeps, result tables and plots.
//!
//! Data-parallel loops (sweep arms, batch evaluation, loss tables) go through
//! [`exec`], which uses rayon when the `parallel` feature is enabled and falls
//! back to plain iterators otherwise.

pub mod aoi_queue;
pub mod dqn;
pub mod env;
pub mod exec;
pub mod harness;
pub mod nn;
pub mod policies;
pub mod predictor;

pub use aoi_queue::{AoiQueueState, BudgetConfig};
pub use dqn::{DqnConfig, InferenceMetrics, ReplayMemory, Transition};
pub use env::{ChannelParams, CodebookConfig, ScenarioSample, TrajectoryConfig};
pub use harness::{ExperimentConfig, RunMetrics};
pub use nn::{Activation, LayerSpec, Mlp};
pub use policies::PolicyKind;
pub use predictor::{AugmentedExample, Predictor, PredictorConfig};
