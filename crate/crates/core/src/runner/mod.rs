//! Config-driven orchestration: dataset generation, training, evaluation,
//! diagnostics and the comparison experiments.

mod config;
mod eval;
mod experiments;
mod pipeline;

pub use config::*;
pub use eval::*;
pub use experiments::*;
pub use pipeline::*;
