//! Hierarchical consensus builder, cooperative multi-agent tasks and a
//! consensus-augmented centralized-critic actor-critic.

mod error;

pub mod consensus;
pub mod envs;
pub mod hierarchy;
pub mod marl;
pub mod rng;
pub mod synthetic;

pub use error::{CoreError, Result};
