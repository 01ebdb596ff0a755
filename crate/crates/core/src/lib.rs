//! Multi-AP, multi-RIS THz MIMO-NOMA simulator with a graph-embedded
//! value-decomposition actor-critic learner.

pub mod autodiff;
pub mod config;
pub mod env;
pub mod error;
pub mod gevdac;
pub mod harness;
pub mod link;
pub mod phy;

pub use config::NetworkConfig;
pub use error::{Error, Result};
