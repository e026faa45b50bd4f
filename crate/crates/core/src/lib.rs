//! Online transmit-power control for energy-harvesting multiple-access
//! channels, learned by imitating an offline convex-optimization oracle.
//!
//! The crate is organised as a pipeline:
//!
//! * [`envsim`] samples channel and harvesting processes and applies the
//!   battery dynamics.
//! * [`offline`] solves the non-causal finite-horizon throughput problem.
//! * [`datagen`] turns offline solutions into a supervised dataset.
//! * [`neuralnet`] is a from-scratch feedforward network with exact
//!   backpropagation and Adam training.
//! * [`mdp`] is the discretized-MDP baseline for the single-user case.
//! * [`policyeval`] rolls out any policy and compares it against the
//!   block-wise offline benchmark.

pub mod datagen;
pub mod envsim;
pub mod error;
pub mod mdp;
pub mod neuralnet;
pub mod offline;
pub mod policyeval;
pub mod rng;

pub use datagen::{DataPoint, Dataset, NormalizationStats};
pub use envsim::{EpisodeRealization, SlotState, SystemConfig};
pub use error::{Error, Result};
pub use mdp::{DiscretizedMdp, MdpPolicy};
pub use neuralnet::{MlpArchitecture, MlpParameters, TrainConfig};
pub use offline::{OfflineProgram, OfflineSolution};
pub use policyeval::{Policy, PolicyReport};
