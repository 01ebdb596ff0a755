//! Baselines, the exhaustive oracle, experiment configuration and sweeps.

mod experiment;
mod oracle;
mod sweep;

pub use experiment::*;
pub use oracle::*;
pub use sweep::*;
