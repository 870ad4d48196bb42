//! Hierarchical macro/micro policy optimization for goal-conditioned
//! gridworld agents.
//!
//! A shared-trunk policy plans a blueprint of sub-goals (macro head) and then
//! executes atomic actions conditioned on the active sub-goal (micro head).
//! Both levels are trained critic-free with group-relative advantages and a
//! clipped surrogate, alternating planner exploration and executor
//! adaptation every iteration.

pub mod credit;
pub mod optimize;
pub mod env;
pub mod policy;
pub mod rollout;
pub mod harness;
pub mod error;
pub mod seed;

pub use error::{Error, Result};
