//! Topology generation and THz channel realizations.

pub mod channel;
pub mod topology;

pub use channel::*;
pub use topology::*;
