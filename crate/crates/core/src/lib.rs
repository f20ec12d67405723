//! Adaptive-rank representation learning for reinforcement learning under
//! dynamics uncertainty.
//!
//! The crate is organised bottom-up:
//!
//! - [`lowrank`]: dense matrices, thin SVD, rank-selection criteria and the
//!   bottleneck factorization used to cap a layer's rank.
//! - [`uncertainty`]: Wasserstein balls over tabular kernels and sinusoidal
//!   physical-parameter schedules.
//! - [`linear_soft_rl`]: entropy-regularized RL with linear features, the
//!   first-order linear system, truncated solves and the bias/variance lab.
//! - [`nn`]: a small dense network stack with bottleneck layers, Adam and a
//!   reset-aware warm-up/cosine learning-rate schedule.
//! - [`envs`]: pendulum and point-mass environments with perturbable physics.
//! - [`adarl`]: the soft actor-critic learner with periodic rank adaptation.

pub mod adarl;
pub mod envs;
pub mod error;
pub mod linear_soft_rl;
pub mod lowrank;
pub mod nn;
pub mod rng;
pub mod uncertainty;

pub use error::{Error, Result};
pub use lowrank::{Matrix, SvdFactors};
