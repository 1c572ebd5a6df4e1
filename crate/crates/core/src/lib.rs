pub mod error;
pub mod filter;
pub mod log;
pub mod measurement;
pub mod monte_carlo;
pub mod pipeline;
pub mod propagation;
pub mod report;
pub mod simulator;
pub mod so3;
pub mod time_sync;
pub mod state;
pub mod update;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
