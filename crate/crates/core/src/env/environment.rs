use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::{
    drift_terms, rate_violation, reward, update_queue, update_virtual_queue, DriftCaps, DriftTerms, EnvConfig,
    QueueState,
};
use crate::config::NetworkConfig;
use crate::error::{Error, Result};
use crate::link::{
    build_plan, energy_efficiency, power_consumption, rates, sinr_all, LinkLayerPlan, PlanSnapshot, PowerAction,
};
use crate::phy::{
    build_topology, effective_channels, sample_channel_state, ChannelState, CRow, LargeScale, RisAction, Topology,
};

/// Actions of every agent for one slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointAction {
    pub power: PowerAction,
    pub ris: Vec<RisAction>,
}

impl JointAction {
    /// Zero power, every RIS element off.
    pub fn idle(net: &NetworkConfig) -> Self {
        Self {
            power: PowerAction::zeros(net.total_users()),
            ris: vec![RisAction::all_off(net.ris_elements); net.num_ris],
        }
    }

    pub fn validate(&self, net: &NetworkConfig) -> Result<()> {
        self.power.validate(net)?;
        if self.ris.len() != net.num_ris {
            return Err(Error::Action(format!("{} RIS actions for {} RISs", self.ris.len(), net.num_ris)));
        }
        for a in &self.ris {
            a.validate(net.ris_elements, net.ris_phase_bits)?;
        }
        Ok(())
    }
}

/// Everything derived from one joint action in the current slot, before
/// the queues move.
#[derive(Debug, Clone)]
pub struct SlotEvaluation {
    pub plan: LinkLayerPlan,
    pub sinr: Vec<f64>,
    pub sic_fail: Vec<bool>,
    pub rates_gbps: Vec<f64>,
    pub power_w: f64,
    /// Gbit/J.
    pub eta: f64,
    /// Gbps.
    pub delta: f64,
    pub lambda: Vec<f64>,
    pub reward: f64,
}

/// Result of one environment transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub t: usize,
    pub reward: f64,
    pub eta: f64,
    pub delta: f64,
    pub rates_gbps: Vec<f64>,
    pub power_w: f64,
    pub lambda: Vec<f64>,
    pub q_before: Vec<f64>,
    pub y_before: Vec<f64>,
    pub arrivals: Vec<f64>,
    /// Volume removed from each queue's service budget this slot, Gbit.
    pub served: Vec<f64>,
    pub q_after: Vec<f64>,
    pub y_after: Vec<f64>,
    /// `q_after ≥ q_max` per user.
    pub outage: Vec<bool>,
    pub sic_fail: Vec<bool>,
    pub plan: PlanSnapshot,
    pub done: bool,
}

impl StepOutcome {
    /// Drift terms of every user at the start of this slot.
    pub fn drift_terms(&self, caps: &[DriftCaps]) -> Vec<DriftTerms> {
        (0..self.q_before.len())
            .map(|u| drift_terms(self.q_before[u], self.y_before[u], self.arrivals[u], &caps[u]))
            .collect()
    }
}

/// One network instance driven slot by slot.
#[derive(Debug, Clone)]
pub struct Environment {
    pub net: NetworkConfig,
    pub env: EnvConfig,
    pub topology: Topology,
    large: LargeScale,
    channels: ChannelState,
    queues: QueueState,
    last_action: JointAction,
    t: usize,
    rng: ChaCha8Rng,
}

impl Environment {
    /// Builds the topology and the first episode from `seed`.
    pub fn new(net: NetworkConfig, env: EnvConfig, seed: u64) -> Result<Self> {
        net.validate()?;
        env.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let topology = build_topology(&net, &mut rng)?;
        let large = LargeScale::sample(&topology, &net, &mut rng)?;
        let channels = sample_channel_state(&large, &net, &mut rng)?;
        let queues = QueueState::new(&topology.user_kind, &env);
        let last_action = JointAction::idle(&net);
        Ok(Self { net, env, topology, large, channels, queues, last_action, t: 0, rng })
    }

    /// Starts a new episode: fresh blockage and reflection geometry, empty
    /// queues, idle action history.
    pub fn reset(&mut self) -> Result<()> {
        self.large = LargeScale::sample(&self.topology, &self.net, &mut self.rng)?;
        self.channels = sample_channel_state(&self.large, &self.net, &mut self.rng)?;
        self.queues = QueueState::new(&self.topology.user_kind, &self.env);
        self.last_action = JointAction::idle(&self.net);
        self.t = 0;
        Ok(())
    }

    /// Reseeds the random stream, then resets. The topology is kept.
    pub fn reset_with_seed(&mut self, seed: u64) -> Result<()> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.reset()
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn done(&self) -> bool {
        self.t >= self.env.episode_len
    }

    pub fn channels(&self) -> &ChannelState {
        &self.channels
    }

    pub fn large_scale(&self) -> &LargeScale {
        &self.large
    }

    pub fn queues(&self) -> &QueueState {
        &self.queues
    }

    pub fn last_action(&self) -> &JointAction {
        &self.last_action
    }

    /// Per-user caps used by the drift constants.
    pub fn drift_caps(&self) -> Vec<DriftCaps> {
        let service_max = self.env.service_cap(&self.net);
        self.topology
            .user_kind
            .iter()
            .map(|&k| DriftCaps {
                arrival_max: self.env.arrival_cap(k),
                service_max,
                q_max: self.env.q_max(k),
                eps: self.env.outage_eps,
            })
            .collect()
    }

    pub fn min_rates(&self) -> Vec<f64> {
        self.topology.user_kind.iter().map(|&k| self.env.min_rate(k)).collect()
    }

    /// Effective channels under the given RIS configurations.
    pub fn effective_channels(&self, ris: &[RisAction]) -> Result<Vec<Vec<CRow>>> {
        effective_channels(&self.channels, ris, &self.net)
    }

    /// Projects the power part of a raw action onto the budget and checks
    /// every shape.
    pub fn sanitize(&self, action: JointAction) -> Result<JointAction> {
        let power = action.power.project(&self.net)?;
        let action = JointAction { power, ris: action.ris };
        action.validate(&self.net)?;
        Ok(action)
    }

    /// Evaluates a joint action in the current slot without changing any
    /// state.
    pub fn evaluate(&self, action: &JointAction) -> Result<SlotEvaluation> {
        action.validate(&self.net)?;
        let eff = self.effective_channels(&action.ris)?;
        let plan = build_plan(&eff, &self.topology, &self.net, self.env.head_selection)?;
        let report = sinr_all(&eff, &plan, &action.power.alloc, self.net.noise_power_w)?;
        let rates_gbps: Vec<f64> = rates(&report.sinr, self.net.bandwidth_hz).iter().map(|r| r * 1e-9).collect();
        let power_w = power_consumption(&action.power.alloc, &action.ris, &self.net);
        let eta = energy_efficiency(&rates_gbps, power_w)?;
        let delta = rate_violation(&rates_gbps, &self.min_rates());
        let lambda = self.queues.lambda();
        let r = reward(eta, delta, &lambda, &rates_gbps, self.env.zeta, self.env.xi_penalty);
        Ok(SlotEvaluation {
            plan,
            sinr: report.sinr,
            sic_fail: report.sic_fail,
            rates_gbps,
            power_w,
            eta,
            delta,
            lambda,
            reward: r,
        })
    }

    /// Applies a joint action: evaluates the slot, draws arrivals, updates
    /// both queues and samples the next slot's channels.
    pub fn step(&mut self, action: JointAction) -> Result<StepOutcome> {
        let action = self.sanitize(action)?;
        let eval = self.evaluate(&action)?;
        if !eval.reward.is_finite() {
            return Err(Error::Diverged(format!("non-finite reward at slot {}", self.t)));
        }
        let caps = self.drift_caps();
        let n = self.topology.num_users();
        let mut arrivals = vec![0.0; n];
        for (u, a) in arrivals.iter_mut().enumerate() {
            let mean_packets = self.queues.arrival_mean[u] * 1e9 / self.env.packet_bits;
            let packets = if mean_packets > 0.0 {
                Poisson::new(mean_packets)
                    .map_err(|e| Error::Config(format!("arrival distribution: {e}")))?
                    .sample(&mut self.rng)
            } else {
                0.0
            };
            *a = (packets * self.env.packet_bits * 1e-9).min(caps[u].arrival_max);
        }
        let served: Vec<f64> = eval
            .rates_gbps
            .iter()
            .zip(&caps)
            .map(|(r, c)| (r * self.env.slot_s).min(c.service_max))
            .collect();
        let q_before = self.queues.q.clone();
        let y_before = self.queues.y.clone();
        let q_after: Vec<f64> = (0..n).map(|u| update_queue(q_before[u], served[u], arrivals[u])).collect();
        let y_after: Vec<f64> = (0..n)
            .map(|u| update_virtual_queue(y_before[u], q_after[u], self.queues.q_max[u], self.queues.eps))
            .collect();
        let outage: Vec<bool> = (0..n).map(|u| q_after[u] >= self.queues.q_max[u]).collect();

        self.queues.q = q_after.clone();
        self.queues.y = y_after.clone();
        self.queues.arrivals = arrivals.clone();
        self.last_action = action;
        self.t += 1;
        self.channels = sample_channel_state(&self.large, &self.net, &mut self.rng)?;

        Ok(StepOutcome {
            t: self.t - 1,
            reward: eval.reward,
            eta: eval.eta,
            delta: eval.delta,
            rates_gbps: eval.rates_gbps,
            power_w: eval.power_w,
            lambda: eval.lambda,
            q_before,
            y_before,
            arrivals,
            served,
            q_after,
            y_after,
            outage,
            sic_fail: eval.sic_fail,
            plan: eval.plan.snapshot(),
            done: self.done(),
        })
    }

    /// Stable hash of the configuration and topology, logged so runs of
    /// different learners can be checked to share one environment.
    pub fn checksum(&self) -> u64 {
        let text = serde_json::to_string(&(&self.net, &self.env, &self.topology)).unwrap_or_default();
        fnv1a(text.as_bytes())
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_env(seed: u64) -> Environment {
        Environment::new(NetworkConfig::tiny(), EnvConfig::default(), seed).unwrap()
    }

    #[test]
    fn identical_seeds_identical_steps() {
        let mut a = tiny_env(3);
        let mut b = tiny_env(3);
        let act = JointAction { power: PowerAction { alloc: vec![0.4, 0.5] }, ris: vec![RisAction::all_off(2)] };
        for _ in 0..5 {
            assert_eq!(a.step(act.clone()).unwrap(), b.step(act.clone()).unwrap());
        }
    }

    #[test]
    fn idle_slot_is_circuit_only() {
        let mut e = tiny_env(4);
        let out = e.step(JointAction::idle(&e.net)).unwrap();
        assert!(out.rates_gbps.iter().all(|&r| r == 0.0));
        assert_eq!(out.eta, 0.0);
        assert!((out.delta - (2.0 + 0.1)).abs() < 1e-12);
        assert!((out.reward + 10.0 * out.delta).abs() < 1e-12);
        let circuit = 2.0 * e.net.p_device_w + e.net.ap_circuit_power();
        assert!((out.power_w - circuit).abs() < 1e-12);
    }

    #[test]
    fn queues_conserve() {
        let mut e = tiny_env(5);
        let act = JointAction { power: PowerAction { alloc: vec![0.3, 0.3] }, ris: vec![RisAction::all_off(2)] };
        for _ in 0..20 {
            let o = e.step(act.clone()).unwrap();
            for u in 0..2 {
                assert!((o.q_after[u] - o.arrivals[u] - (o.q_before[u] - o.served[u]).max(0.0)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn malformed_action_rejected() {
        let mut e = tiny_env(6);
        let bad = JointAction { power: PowerAction { alloc: vec![0.1] }, ris: vec![RisAction::all_off(2)] };
        assert!(e.step(bad).is_err());
        let bad = JointAction { power: PowerAction { alloc: vec![0.1, 0.1] }, ris: vec![RisAction::all_off(3)] };
        assert!(e.step(bad).is_err());
    }

    #[test]
    fn oversized_power_is_projected() {
        let mut e = tiny_env(7);
        let act = JointAction { power: PowerAction { alloc: vec![3.0, 1.0] }, ris: vec![RisAction::all_off(2)] };
        let o = e.step(act).unwrap();
        let expect = e.net.pa_inefficiency * 1.0 + 2.0 * e.net.p_device_w + e.net.ap_circuit_power();
        assert!((o.power_w - expect).abs() < 1e-12);
    }
}
