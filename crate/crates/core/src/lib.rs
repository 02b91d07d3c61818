//! Peer-to-peer distillation reinforcement learning on randomized
//! continuous-control tasks.
//!
//! The crate is layered bottom-up:
//!
//! - [`numerics`]: dense tensors, a tanh MLP with explicit backward pass, Adam
//!   and a parameter checkpoint format.
//! - [`policy`]: diagonal-Gaussian actor, state-value critic and the closed-form
//!   distribution math (log-prob, entropy, KL) with analytic gradients.
//! - [`envs`]: native pendulum and cartpole tasks with five randomizable
//!   dynamics knobs scaled by a single diversity scalar.
//! - [`algos`]: rollouts, GAE, the PPO / distillation / value losses, the
//!   peer-to-peer distillation iteration and four baseline trainers.
//! - [`harness`]: experiment configs, seeded training runs, evaluation,
//!   diversity curves, sweeps, CSV metrics and SVG plots.

pub mod algos;
pub mod envs;
pub mod error;
pub mod harness;
pub mod numerics;
pub mod policy;
pub mod rng;

pub use error::{Error, Result};
pub use numerics::{AdamState, MlpParams, ParamSet, Tensor};
pub use policy::{ActorParams, CriticParams, GaussianDist};
