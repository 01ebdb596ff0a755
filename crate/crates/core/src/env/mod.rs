//! Traffic and virtual queues, drift bookkeeping, reward shaping and the
//! per-slot environment.

mod environment;
mod graph;
mod metrics;

pub use environment::*;
pub use graph::*;
pub use metrics::*;

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{fmt_f64, KeyValues, NetworkConfig};
use crate::error::{Error, Result};
use crate::link::HeadSelection;
use crate::phy::UserKind;

/// Traffic, QoS and reward parameters. Rates are in Gbps, volumes in Gbit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub slot_s: f64,
    pub packet_bits: f64,
    pub se_arrival_gbps: f64,
    pub iot_arrival_gbps: f64,
    pub se_min_rate_gbps: f64,
    pub iot_min_rate_gbps: f64,
    /// Queue thresholds, expressed as rate × slot like the arrivals.
    pub se_qmax_gbps: f64,
    pub iot_qmax_gbps: f64,
    pub outage_eps: f64,
    /// Arrival cap as a multiple of the mean arrival volume.
    pub arrival_cap_factor: f64,
    pub zeta: f64,
    pub xi_penalty: f64,
    pub episode_len: usize,
    pub head_selection: HeadSelection,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            slot_s: 1e-3,
            packet_bits: 1e5,
            se_arrival_gbps: 10.0,
            iot_arrival_gbps: 0.2,
            se_min_rate_gbps: 2.0,
            iot_min_rate_gbps: 0.1,
            se_qmax_gbps: 25.0,
            iot_qmax_gbps: 10.0,
            outage_eps: 0.1,
            arrival_cap_factor: 5.0,
            zeta: 1.0,
            xi_penalty: 10.0,
            episode_len: 200,
            head_selection: HeadSelection::Qos,
        }
    }
}

impl EnvConfig {
    pub const KEYS: &'static [(&'static str, &'static str)] = &[
        ("slot_s", "s"),
        ("packet_bits", "bit"),
        ("se_arrival_gbps", "Gbps"),
        ("iot_arrival_gbps", "Gbps"),
        ("se_min_rate_gbps", "Gbps"),
        ("iot_min_rate_gbps", "Gbps"),
        ("se_qmax_gbps", "Gbps (× slot)"),
        ("iot_qmax_gbps", "Gbps (× slot)"),
        ("outage_eps", "probability"),
        ("arrival_cap_factor", "× mean arrival"),
        ("zeta", "dimensionless"),
        ("xi_penalty", "1/Gbps"),
        ("episode_len", "slots"),
        ("head_selection", "qos | csi"),
    ];

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("slot_s", self.slot_s),
            ("packet_bits", self.packet_bits),
            ("se_qmax_gbps", self.se_qmax_gbps),
            ("iot_qmax_gbps", self.iot_qmax_gbps),
            ("arrival_cap_factor", self.arrival_cap_factor),
        ];
        for (k, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("`{k}` must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("se_arrival_gbps", self.se_arrival_gbps),
            ("iot_arrival_gbps", self.iot_arrival_gbps),
            ("se_min_rate_gbps", self.se_min_rate_gbps),
            ("iot_min_rate_gbps", self.iot_min_rate_gbps),
            ("zeta", self.zeta),
            ("xi_penalty", self.xi_penalty),
        ];
        for (k, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("`{k}` must be non-negative, got {v}")));
            }
        }
        if !(self.outage_eps > 0.0 && self.outage_eps <= 1.0) {
            return Err(Error::Config("`outage_eps` must be in (0, 1]".into()));
        }
        if self.episode_len == 0 {
            return Err(Error::Config("`episode_len` must be positive".into()));
        }
        Ok(())
    }

    pub fn apply(&mut self, kv: &KeyValues) -> Result<()> {
        kv.set_f64("slot_s", &mut self.slot_s)?;
        kv.set_f64("packet_bits", &mut self.packet_bits)?;
        kv.set_f64("se_arrival_gbps", &mut self.se_arrival_gbps)?;
        kv.set_f64("iot_arrival_gbps", &mut self.iot_arrival_gbps)?;
        kv.set_f64("se_min_rate_gbps", &mut self.se_min_rate_gbps)?;
        kv.set_f64("iot_min_rate_gbps", &mut self.iot_min_rate_gbps)?;
        kv.set_f64("se_qmax_gbps", &mut self.se_qmax_gbps)?;
        kv.set_f64("iot_qmax_gbps", &mut self.iot_qmax_gbps)?;
        kv.set_f64("outage_eps", &mut self.outage_eps)?;
        kv.set_f64("arrival_cap_factor", &mut self.arrival_cap_factor)?;
        kv.set_f64("zeta", &mut self.zeta)?;
        kv.set_f64("xi_penalty", &mut self.xi_penalty)?;
        kv.set_usize("episode_len", &mut self.episode_len)?;
        if let Some(v) = kv.get("head_selection") {
            self.head_selection = match v {
                "qos" => HeadSelection::Qos,
                "csi" => HeadSelection::Csi,
                other => return Err(Error::Config(format!("`head_selection`: unknown value `{other}`"))),
            };
        }
        Ok(())
    }

    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        kv.reject_unknown(&[Self::KEYS])?;
        let mut cfg = Self::default();
        cfg.apply(kv)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            let unit = Self::KEYS.iter().find(|(key, _)| *key == k).map(|(_, u)| *u).unwrap_or("");
            let _ = writeln!(out, "{k} = {v}  # {unit}");
        };
        line("slot_s", fmt_f64(self.slot_s));
        line("packet_bits", fmt_f64(self.packet_bits));
        line("se_arrival_gbps", fmt_f64(self.se_arrival_gbps));
        line("iot_arrival_gbps", fmt_f64(self.iot_arrival_gbps));
        line("se_min_rate_gbps", fmt_f64(self.se_min_rate_gbps));
        line("iot_min_rate_gbps", fmt_f64(self.iot_min_rate_gbps));
        line("se_qmax_gbps", fmt_f64(self.se_qmax_gbps));
        line("iot_qmax_gbps", fmt_f64(self.iot_qmax_gbps));
        line("outage_eps", fmt_f64(self.outage_eps));
        line("arrival_cap_factor", fmt_f64(self.arrival_cap_factor));
        line("zeta", fmt_f64(self.zeta));
        line("xi_penalty", fmt_f64(self.xi_penalty));
        line("episode_len", self.episode_len.to_string());
        line(
            "head_selection",
            match self.head_selection {
                HeadSelection::Qos => "qos".into(),
                HeadSelection::Csi => "csi".into(),
            },
        );
        out
    }

    /// Mean arrival volume per slot, Gbit.
    pub fn mean_arrival(&self, kind: UserKind) -> f64 {
        match kind {
            UserKind::Se => self.se_arrival_gbps * self.slot_s,
            UserKind::Iot => self.iot_arrival_gbps * self.slot_s,
        }
    }

    /// Queue threshold q_max, Gbit.
    pub fn q_max(&self, kind: UserKind) -> f64 {
        match kind {
            UserKind::Se => self.se_qmax_gbps * self.slot_s,
            UserKind::Iot => self.iot_qmax_gbps * self.slot_s,
        }
    }

    pub fn min_rate(&self, kind: UserKind) -> f64 {
        match kind {
            UserKind::Se => self.se_min_rate_gbps,
            UserKind::Iot => self.iot_min_rate_gbps,
        }
    }

    /// A^max, Gbit.
    pub fn arrival_cap(&self, kind: UserKind) -> f64 {
        self.arrival_cap_factor * self.mean_arrival(kind)
    }

    /// R^max, Gbit per slot: the rate at full power over a unit-gain channel.
    pub fn service_cap(&self, net: &NetworkConfig) -> f64 {
        net.bandwidth_hz * (1.0 + net.max_tx_power_w / net.noise_power_w).log2() * self.slot_s * 1e-9
    }
}

/// Network plus environment settings read from one file.
pub fn read_configs(path: impl AsRef<Path>) -> Result<(NetworkConfig, EnvConfig)> {
    let kv = KeyValues::read(path)?;
    kv.reject_unknown(&[NetworkConfig::KEYS, EnvConfig::KEYS])?;
    let mut net = NetworkConfig::default();
    net.apply(&kv)?;
    net.validate()?;
    let mut env = EnvConfig::default();
    env.apply(&kv)?;
    env.validate()?;
    Ok((net, env))
}

/// `A + max(q − served, 0)`.
pub fn update_queue(q: f64, served: f64, arrivals: f64) -> f64 {
    arrivals + (q - served).max(0.0)
}

/// `max(Y + q' − q_max·ε, 0)`.
pub fn update_virtual_queue(y: f64, q_next: f64, q_max: f64, eps: f64) -> f64 {
    (y + q_next - q_max * eps).max(0.0)
}

/// Constants and per-slot terms of the one-step drift bound
/// `ΔL ≤ C + B + Λ(A − R)` for one user.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftTerms {
    pub c: f64,
    pub b: f64,
    pub lambda: f64,
}

impl DriftTerms {
    pub fn bound(&self, arrivals: f64, served: f64) -> f64 {
        self.c + self.b + self.lambda * (arrivals - served)
    }
}

/// Caps entering the constant C.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftCaps {
    pub arrival_max: f64,
    pub service_max: f64,
    pub q_max: f64,
    pub eps: f64,
}

pub fn drift_terms(q: f64, y: f64, arrivals: f64, caps: &DriftCaps) -> DriftTerms {
    let c_q = 0.5 * caps.arrival_max.powi(2) + 0.5 * caps.service_max.powi(2);
    let c_y = 0.5 * (caps.q_max * caps.eps).powi(2);
    DriftTerms {
        c: 2.0 * c_q + c_y,
        b: 0.5 * q * q + y * (arrivals + q),
        lambda: y + 2.0 * q,
    }
}

/// Literal one-step change of `L = ½(q² + Y²)`.
pub fn lyapunov_drift(q: f64, y: f64, q_next: f64, y_next: f64) -> f64 {
    0.5 * (q_next * q_next - q * q) + 0.5 * (y_next * y_next - y * y)
}

/// `Σ max(R_min − R, 0)`.
pub fn rate_violation(rates: &[f64], minima: &[f64]) -> f64 {
    rates.iter().zip(minima).map(|(r, m)| (m - r).max(0.0)).sum()
}

/// `ζη − ξδ + Σ Λ·R`.
pub fn reward(eta: f64, delta: f64, lambda: &[f64], rates: &[f64], zeta: f64, xi_penalty: f64) -> f64 {
    let weighted: f64 = lambda.iter().zip(rates).map(|(l, r)| l * r).sum();
    zeta * eta - xi_penalty * delta + weighted
}

/// Traffic and virtual queues of every user (Gbit).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueState {
    pub q: Vec<f64>,
    pub y: Vec<f64>,
    /// Arrivals of the last completed slot.
    pub arrivals: Vec<f64>,
    pub q_max: Vec<f64>,
    pub eps: f64,
    pub arrival_mean: Vec<f64>,
}

impl QueueState {
    pub fn new(kinds: &[UserKind], env: &EnvConfig) -> Self {
        let n = kinds.len();
        Self {
            q: vec![0.0; n],
            y: vec![0.0; n],
            arrivals: vec![0.0; n],
            q_max: kinds.iter().map(|&k| env.q_max(k)).collect(),
            eps: env.outage_eps,
            arrival_mean: kinds.iter().map(|&k| env.mean_arrival(k)).collect(),
        }
    }

    /// Λ = Y + 2q per user.
    pub fn lambda(&self) -> Vec<f64> {
        self.q.iter().zip(&self.y).map(|(q, y)| y + 2.0 * q).collect()
    }
}

/// Empirical outage `Pr(q ≥ q_max)` and the Markov bound `E[q]/q_max` per user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutageStats {
    pub empirical: Vec<f64>,
    pub markov_bound: Vec<f64>,
}

/// `history[t][user]` holds queue lengths.
pub fn outage_stats(history: &[Vec<f64>], q_max: &[f64]) -> Result<OutageStats> {
    if history.is_empty() {
        return Err(Error::InvalidArgument("outage statistics of an empty history".into()));
    }
    let n = q_max.len();
    if history.iter().any(|row| row.len() != n) {
        return Err(Error::Dimension(format!("queue history rows must have {n} users")));
    }
    let t = history.len() as f64;
    let mut empirical = vec![0.0; n];
    let mut mean = vec![0.0; n];
    for row in history {
        for u in 0..n {
            if row[u] >= q_max[u] {
                empirical[u] += 1.0;
            }
            mean[u] += row[u];
        }
    }
    Ok(OutageStats {
        empirical: empirical.iter().map(|c| c / t).collect(),
        markov_bound: mean.iter().zip(q_max).map(|(s, m)| s / t / m).collect(),
    })
}
