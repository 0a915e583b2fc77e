//! Offline goal-conditioned RL on discrete grid mazes with option-aware
//! temporally abstracted value learning.

pub mod approx;
pub mod dataset;
pub mod diagnostics;
pub mod error;
pub mod layouts;
pub mod maze;
pub mod policy;
pub mod rng;
pub mod runner;
pub mod value;

pub use error::{Error, Result};
