//! Curriculum task selection for contextual multi-task reinforcement
//! learning.
//!
//! The crate pairs a teacher that picks training tasks with a policy-gradient
//! student. The teacher's central rule scores candidate tasks by the product
//! of the learner's learning potential on the task, its learning potential on
//! a target task, and the similarity between the two, then samples task pairs
//! through a softmax. Alongside the practical selection rule the crate ships
//! desk-scale environments (a correlated contextual bandit and a sparse gate
//! gridworld), exact tabular evaluation and exact policy gradients, a
//! verification suite for the closed-form identities behind the rule, and a
//! reproducible experiment runner with CSV and SVG outputs.
//!
//! All numeric code is generic over the scalar type via [`num::Real`]
//! (`f32` or `f64`); the aliases below fix `f64`, which is what the CLI and
//! the experiment configs use.

pub mod chart;
pub mod config;
pub mod envs;
pub mod error;
pub mod learner;
pub mod mdp;
pub mod num;
pub mod rng;
pub mod run;
pub mod teacher;
pub mod value;
pub mod verify;

pub use error::{Error, Result};
pub use num::Real;

/// Default scalar for the CLI and experiment runner.
pub type Scalar = f64;

pub type Context64 = mdp::Context<f64>;
pub type Context32 = mdp::Context<f32>;
pub type Trajectory64 = mdp::Trajectory<f64>;
pub type TaskPools64 = mdp::TaskPools<f64>;
pub type PolicyParams64 = learner::PolicyParams<f64>;
pub type ValueTable64 = value::ValueTable<f64>;
