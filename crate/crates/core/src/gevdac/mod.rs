//! Graph-embedded actors, local critics with monotonic mixing, and the
//! on-policy training loop. The baseline learners are variants of the same
//! model.

mod model;
mod train;

pub use model::*;
pub use train::*;

use crate::error::{Error, Result};

/// One-step TD advantage `r + Γ V(s') − V(s)`.
pub fn advantage(reward: f64, v: f64, v_next: f64, gamma: f64) -> f64 {
    reward + gamma * v_next - v
}

/// `Σ_{i<m} Γ^i r_i + Γ^m v_horizon` with `m = min(n, rewards.len())`;
/// `v_horizon` must be the value at that horizon.
pub fn n_step_return(rewards: &[f64], gamma: f64, n: usize, v_horizon: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument("n-step return needs n ≥ 1".into()));
    }
    let m = n.min(rewards.len());
    let mut acc = 0.0;
    let mut disc = 1.0;
    for r in &rewards[..m] {
        acc += disc * r;
        disc *= gamma;
    }
    Ok(acc + disc * v_horizon)
}
