//! Shared helpers for the integration tests: small networks and a second,
//! loop-by-loop evaluation of the NOMA SINR/SIC expressions.

#![allow(dead_code)]

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ris_noma::autodiff::Tape;
use ris_noma::env::{EnvConfig, Environment, JointAction};
use ris_noma::gevdac::{AgentAction, Model, ModelConfig, Variant};
use ris_noma::link::{LinkLayerPlan, PowerAction};
use ris_noma::phy::{CRow, RisAction};
use ris_noma::NetworkConfig;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Two APs with two clusters each, short arrays.
pub fn small_net() -> NetworkConfig {
    NetworkConfig {
        num_aps: 2,
        num_ris: 1,
        se_users_per_ap: 2,
        iot_users_per_ap: 3,
        antennas: 8,
        rf_chains: 2,
        ris_elements: 4,
        room_length_m: 12.0,
        room_width_m: 8.0,
        ..NetworkConfig::default()
    }
}

pub fn env_with(net: NetworkConfig, episode_len: usize, seed: u64) -> Environment {
    Environment::new(net, EnvConfig { episode_len, ..EnvConfig::default() }, seed).unwrap()
}

pub fn random_ris<R: Rng>(net: &NetworkConfig, rng: &mut R) -> Vec<RisAction> {
    let levels = net.ris_phase_levels() as u32;
    (0..net.num_ris)
        .map(|_| {
            let mut a = RisAction::all_off(net.ris_elements);
            for l in 0..net.ris_elements {
                a.on_off[l] = rng.random::<bool>();
                a.phase_index[l] = rng.random_range(0..levels);
            }
            a
        })
        .collect()
}

/// Uniform random allocation scaled onto each AP's budget by a random
/// fraction in (0, 1].
pub fn random_power<R: Rng>(net: &NetworkConfig, rng: &mut R) -> PowerAction {
    let k = net.users_per_ap();
    let mut alloc = Vec::with_capacity(net.total_users());
    for _ in 0..net.num_aps {
        let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-3).collect();
        let total: f64 = raw.iter().sum();
        let frac: f64 = rng.random_range(0.05..=1.0);
        alloc.extend(raw.iter().map(|r| r / total * frac * net.max_tx_power_w));
    }
    PowerAction { alloc }
}

pub fn random_action<R: Rng>(net: &NetworkConfig, rng: &mut R) -> JointAction {
    JointAction { power: random_power(net, rng), ris: random_ris(net, rng) }
}

/// `|h · (V w)|²` with the product written out element by element.
fn gain(h: &CRow, plan: &LinkLayerPlan, ap: usize, cluster: usize) -> f64 {
    let v = &plan.aps[ap].analog;
    let w = &plan.aps[ap].digital[cluster];
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..v.nrows() {
        let mut vw = Complex64::new(0.0, 0.0);
        for j in 0..v.ncols() {
            vw += v[(i, j)] * w[j];
        }
        acc += h[i] * vw;
    }
    acc.norm_sqr()
}

/// SINR of every user and the SIC failure flags, evaluated directly from
/// the per-cluster definitions: members in decode order see the head and
/// all earlier members as interference, the head sees the members it fails
/// to cancel, and everyone sees the total power of every other cluster.
pub fn literal_sinr(channels: &[Vec<CRow>], plan: &LinkLayerPlan, alloc: &[f64], noise: f64) -> (Vec<f64>, Vec<bool>) {
    let users = alloc.len();
    let mut sinr = vec![0.0; users];
    let mut fail = vec![false; users];

    // Power of cluster (m', n'), including its head.
    let cluster_power = |m: usize, n: usize| -> f64 {
        let c = &plan.aps[m].clusters[n];
        let mut p = alloc[c.head];
        for &u in &c.members {
            p += alloc[u];
        }
        p
    };
    let interference = |u: usize, m: usize, n: usize| -> f64 {
        let mut total = 0.0;
        for m2 in 0..plan.aps.len() {
            for n2 in 0..plan.aps[m2].clusters.len() {
                if m2 == m && n2 == n {
                    continue;
                }
                total += gain(&channels[m2][u], plan, m2, n2) * cluster_power(m2, n2);
            }
        }
        total
    };

    for m in 0..plan.aps.len() {
        for n in 0..plan.aps[m].clusters.len() {
            let c = &plan.aps[m].clusters[n];
            // order[0] is the head (k = 1), then members k = 2, 3, …
            let mut order = vec![c.head];
            order.extend(c.members.iter().copied());
            let head = c.head;
            let g_head = gain(&channels[m][head], plan, m, n);
            for k in 1..order.len() {
                let u = order[k];
                let g_u = gain(&channels[m][u], plan, m, n);
                let mut earlier_own = 0.0;
                let mut earlier_head = 0.0;
                for &e in &order[..k] {
                    earlier_own += g_u * alloc[e];
                    earlier_head += g_head * alloc[e];
                }
                let own = g_u * alloc[u] / (earlier_own + interference(u, m, n) + noise);
                let at_head = g_head * alloc[u] / (earlier_head + interference(head, m, n) + noise);
                sinr[u] = own;
                fail[u] = !(at_head >= own);
            }
            let mut residual = 0.0;
            for &u in &order[1..] {
                if fail[u] {
                    residual += g_head * alloc[u];
                }
            }
            sinr[head] = g_head * alloc[head] / (residual + interference(head, m, n) + noise);
        }
    }
    (sinr, fail)
}

/// Relative difference with an absolute floor for values near zero.
pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

/// Random desk-sized network: 1 to 3 APs, 0 to 2 RISs, short arrays.
pub fn random_small_net<R: Rng>(rng: &mut R) -> NetworkConfig {
    let se = rng.random_range(1..=2);
    NetworkConfig {
        num_aps: rng.random_range(1..=3),
        num_ris: rng.random_range(0..=2),
        se_users_per_ap: se,
        iot_users_per_ap: rng.random_range(0..=3),
        antennas: se * rng.random_range(1..=3),
        rf_chains: se,
        ris_elements: rng.random_range(1..=3),
        ris_phase_bits: rng.random_range(1..=2),
        room_length_m: rng.random_range(6.0..20.0),
        room_width_m: rng.random_range(4.0..12.0),
        ..NetworkConfig::default()
    }
}

/// Narrow learner widths so finite differences over every parameter stay cheap.
pub fn narrow_model(variant: Variant) -> ModelConfig {
    ModelConfig { variant, embed_dim: 3, hidden_dim: 4, mix_hidden: 3, critic_hidden: 4, ..ModelConfig::default() }
}

/// An environment advanced a few slots with random actions, so queues,
/// last actions and GRU inputs are all nonzero.
pub fn warmed_env<R: Rng>(net: &NetworkConfig, slots: usize, rng: &mut R) -> Environment {
    let mut env = env_with(net.clone(), slots + 10, rng.random());
    for _ in 0..slots {
        env.step(random_action(net, rng)).unwrap();
    }
    env
}

pub fn random_hidden<R: Rng>(nodes: usize, width: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..nodes).map(|_| (0..width).map(|_| rng.random_range(-0.8..0.8)).collect()).collect()
}

/// One stochastic action per agent drawn from `model` at `env`'s current slot.
pub fn sample_actions<R: Rng>(model: &Model, env: &Environment, h: &[Vec<f64>], rng: &mut R) -> Vec<AgentAction> {
    let graph = env.comm_graph();
    let mut tape = Tape::with_params(&model.params);
    let fw = model.forward(&mut tape, &graph, &env.global_state(), h).unwrap();
    graph
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| model.sample(&mut tape, n.kind, fw.heads[i], false, rng).unwrap())
        .collect()
}
