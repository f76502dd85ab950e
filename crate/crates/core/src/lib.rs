//! Distributed sampling-based active information acquisition for robot teams.
//!
//! Each robot grows its own search tree over (pose, belief) nodes, fusing its
//! neighbors' beliefs with a distributed Kalman filter, and the team plan is read off
//! the trees once every target's uncertainty drops below its threshold.

pub mod baseline;
pub mod belief;
pub mod bias;
pub mod commgraph;
pub mod env;
pub mod error;
pub mod linalg;
pub mod models;
pub mod planner;
pub mod scenario;

pub use error::{Error, Result};
