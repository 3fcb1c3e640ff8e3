//! Continual offline reinforcement learning with diffusion-based dual
//! generative replay, at desk scale on point-mass tasks.
//!
//! The pieces, bottom-up:
//!
//! * [`numerics`]: dense nets with hand-written backward passes and Adam.
//! * [`envs`]: point-mass task families and scripted data collectors.
//! * [`dataset`]: offline datasets, returns-to-go, persistence, batching.
//! * [`diffusion`]: VP schedule, denoising losses, reverse-time sampler.
//! * [`critic`]: multi-head Q network, in-trajectory Bellman targets,
//!   behavior cloning, and candidate resampling for action selection.
//! * [`continual`]: the sequential-task orchestrator.

pub mod continual;
pub mod critic;
pub mod dataset;
pub mod diffusion;
pub mod envs;
mod error;
pub mod numerics;
pub mod parallel;
pub mod rng;

pub use error::{Error, Result};
