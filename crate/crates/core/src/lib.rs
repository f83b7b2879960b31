//! Simulation core for the cartpole slalom game: physics, the balancing
//! policy, influence arbitration, game rules, session logs and analytics.

pub mod analytics;
pub mod bots;
pub mod config;
pub mod engine;
pub mod error;
pub mod influence;
pub mod log;
pub mod physics;
pub mod policy;
pub mod rules;
pub mod session;

pub use error::{Error, Result};
