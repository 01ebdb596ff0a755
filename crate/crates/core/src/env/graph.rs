use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::Environment;
use crate::error::{Error, Result};
use crate::phy::{path_gain, CMat, RisAction, UserKind};

/// Identifies an agent: an AP (type 0) or a RIS (type 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AgentId {
    Ap(usize),
    Ris(usize),
}

/// What one agent sees locally. APs see direct channels towards their own
/// users and the users of neighboring APs, the Λ weights of their own users
/// and their previous allocation. RISs see their links towards neighboring
/// APs and those APs' users plus their previous configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum AgentObservation {
    Ap {
        ap: usize,
        /// `(serving AP m, H̃^{ap,m})`, own block first; rows are the users of m.
        channel_blocks: Vec<(usize, CMat)>,
        lambda: Vec<f64>,
        last_power: Vec<f64>,
    },
    Ris {
        ris: usize,
        /// `(AP m, F)`: rows are the users of m, columns the RIS elements.
        ris_to_user: Vec<(usize, CMat)>,
        /// `(AP m, G^{m,ris})`, L × N_A.
        ap_to_ris: Vec<(usize, CMat)>,
        last_action: RisAction,
    },
}

impl AgentObservation {
    /// Number of real scalars (complex entries count twice).
    pub fn dimension(&self) -> usize {
        match self {
            AgentObservation::Ap { channel_blocks, lambda, last_power, .. } => {
                channel_blocks.iter().map(|(_, m)| 2 * m.len()).sum::<usize>() + lambda.len() + last_power.len()
            }
            AgentObservation::Ris { ris_to_user, ap_to_ris, last_action, .. } => {
                ris_to_user.iter().chain(ap_to_ris).map(|(_, m)| 2 * m.len()).sum::<usize>()
                    + 2 * last_action.on_off.len()
            }
        }
    }
}

/// Multipliers that bring channel entries, queue weights and actions to
/// order-one feature values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureScale {
    /// Inverse of the amplitude of a line-of-sight path at the reference distance.
    pub channel: f64,
    /// Λ is fed as `ln(1 + Λ / lambda)`.
    pub lambda: f64,
    pub power: f64,
    pub phase_levels: f64,
}

/// Reference distance for [`FeatureScale::channel`], m.
pub const FEATURE_REFERENCE_DISTANCE_M: f64 = 5.0;

impl FeatureScale {
    pub fn for_env(env: &Environment) -> Self {
        let net = &env.net;
        let amp = path_gain(net.carrier_freq_hz, FEATURE_REFERENCE_DISTANCE_M, net.absorption_coeff)
            .map(f64::sqrt)
            .unwrap_or(1.0)
            * net.path_amplitude_gain();
        Self {
            channel: 1.0 / amp,
            lambda: env.env.q_max(UserKind::Se),
            power: 1.0 / net.max_tx_power_w,
            phase_levels: (net.ris_phase_levels() - 1).max(1) as f64,
        }
    }
}

/// Pushes (re, im) pairs of `m` (row-major), scaled by `scale`.
fn push_complex(out: &mut Vec<f64>, m: &CMat, scale: f64) {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            let z: Complex64 = m[(r, c)];
            out.push(z.re * scale);
            out.push(z.im * scale);
        }
    }
}

impl Environment {
    /// Direct channels from `ap` to the users of `target` as a K × N_A matrix.
    pub fn direct_block(&self, ap: usize, target: usize) -> CMat {
        let users: Vec<usize> = self.topology.users_of_ap(target).collect();
        let ch = &self.channels().direct[ap];
        CMat::from_fn(users.len(), self.net.antennas, |r, c| ch[users[r]][c])
    }

    /// RIS → users-of-`ap` channels as a K × L matrix.
    pub fn ris_user_block(&self, ris: usize, ap: usize) -> CMat {
        let users: Vec<usize> = self.topology.users_of_ap(ap).collect();
        let ch = &self.channels().ris_to_user[ris];
        CMat::from_fn(users.len(), self.net.ris_elements, |r, c| ch[users[r]][c])
    }

    pub fn agents(&self) -> Vec<AgentId> {
        (0..self.net.num_aps)
            .map(AgentId::Ap)
            .chain((0..self.net.num_ris).map(AgentId::Ris))
            .collect()
    }

    pub fn observe(&self, agent: AgentId) -> Result<AgentObservation> {
        match agent {
            AgentId::Ap(i) if i < self.net.num_aps => {
                let mut blocks = vec![(i, self.direct_block(i, i))];
                for &m in &self.topology.ap_neighbor_aps[i] {
                    blocks.push((m, self.direct_block(i, m)));
                }
                let users = self.topology.users_of_ap(i);
                let lambda = self.queues().lambda();
                Ok(AgentObservation::Ap {
                    ap: i,
                    channel_blocks: blocks,
                    lambda: lambda[users.clone()].to_vec(),
                    last_power: self.last_action().power.alloc[users].to_vec(),
                })
            }
            AgentId::Ris(j) if j < self.net.num_ris => {
                let aps = &self.topology.ris_neighbor_aps[j];
                Ok(AgentObservation::Ris {
                    ris: j,
                    ris_to_user: aps.iter().map(|&m| (m, self.ris_user_block(j, m))).collect(),
                    ap_to_ris: aps.iter().map(|&m| (m, self.channels().ap_to_ris[m][j].clone())).collect(),
                    last_action: self.last_action().ris[j].clone(),
                })
            }
            other => Err(Error::InvalidArgument(format!("no agent {other:?}"))),
        }
    }

    fn ap_node_feature(&self, i: usize, scale: &FeatureScale) -> Vec<f64> {
        let users = self.topology.users_of_ap(i);
        let mut f = Vec::new();
        let s = scale.channel * (self.net.antennas as f64).sqrt();
        push_complex(&mut f, &self.direct_block(i, i), s);
        let lambda = self.queues().lambda();
        f.extend(lambda[users.clone()].iter().map(|l| (l / scale.lambda).ln_1p()));
        f.extend(self.last_action().power.alloc[users].iter().map(|a| a * scale.power));
        f
    }

    fn ris_node_feature(&self, j: usize, scale: &FeatureScale) -> Vec<f64> {
        let a = &self.last_action().ris[j];
        let mut f: Vec<f64> = a.on_off.iter().map(|&w| if w { 1.0 } else { 0.0 }).collect();
        f.extend(a.phase_index.iter().map(|&b| b as f64 / scale.phase_levels));
        f
    }

    /// Communication graph of the current slot. Nodes are the APs followed
    /// by the RISs.
    pub fn comm_graph(&self) -> CommGraph {
        let scale = FeatureScale::for_env(self);
        let m = self.net.num_aps;
        let mut nodes = Vec::with_capacity(m + self.net.num_ris);
        for i in 0..m {
            nodes.push(Node { kind: NodeKind::Ap, features: self.ap_node_feature(i, &scale) });
        }
        for j in 0..self.net.num_ris {
            nodes.push(Node { kind: NodeKind::Ris, features: self.ris_node_feature(j, &scale) });
        }

        let s_ap = scale.channel * (self.net.antennas as f64).sqrt();
        let s_ris = scale.channel * (self.net.ris_elements as f64).sqrt();
        let s_g = scale.channel * ((self.net.ris_elements * self.net.antennas) as f64).sqrt();
        let mut edges = Vec::new();
        for i in 0..m {
            for &j in &self.topology.ap_neighbor_ris[i] {
                // Mean over the RIS's neighboring APs keeps the width fixed.
                let targets = &self.topology.ris_neighbor_aps[j];
                let mut acc = CMat::zeros(self.topology.users_per_ap, self.net.antennas);
                for &t in targets {
                    acc += self.direct_block(i, t);
                }
                acc /= Complex64::new(targets.len().max(1) as f64, 0.0);
                let mut f = Vec::new();
                push_complex(&mut f, &acc, s_ap);
                edges.push(Edge { src: i, dst: m + j, kind: EdgeKind::ApToRis, features: f });
            }
            for &k in &self.topology.ap_neighbor_aps[i] {
                let mut f = Vec::new();
                push_complex(&mut f, &self.direct_block(i, k), s_ap);
                edges.push(Edge { src: i, dst: k, kind: EdgeKind::ApToAp, features: f });
            }
        }
        for j in 0..self.net.num_ris {
            for &i in &self.topology.ris_neighbor_aps[j] {
                let mut f = Vec::new();
                push_complex(&mut f, &self.channels().ap_to_ris[i][j], s_g);
                push_complex(&mut f, &self.ris_user_block(j, i), s_ris);
                edges.push(Edge { src: m + j, dst: i, kind: EdgeKind::RisToAp, features: f });
            }
        }
        CommGraph::new(nodes, edges)
    }

    /// Compact global state for the mixing hypernetworks: per-user queue
    /// weights, per-(AP, user) direct channel strength, the previous power
    /// allocation and per-RIS switching statistics.
    pub fn global_state(&self) -> Vec<f64> {
        let scale = FeatureScale::for_env(self);
        let mut s: Vec<f64> = self.queues().lambda().iter().map(|l| (l / scale.lambda).ln_1p()).collect();
        for row in &self.channels().direct {
            s.extend(row.iter().map(|h| h.norm() * scale.channel));
        }
        s.extend(self.last_action().power.alloc.iter().map(|a| a * scale.power));
        for a in &self.last_action().ris {
            let n = a.on_off.len().max(1) as f64;
            s.push(a.active_elements() as f64 / n);
            s.push(a.phase_index.iter().map(|&b| b as f64).sum::<f64>() / n / scale.phase_levels);
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    Ap,
    Ris,
}

impl NodeKind {
    pub fn type_index(self) -> usize {
        match self {
            NodeKind::Ap => 0,
            NodeKind::Ris => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EdgeKind {
    ApToRis,
    RisToAp,
    ApToAp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub kind: NodeKind,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub kind: EdgeKind,
    pub features: Vec<f64>,
}

/// Typed directed graph of agents with node and edge features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommGraph {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    /// Edge indices arriving at each node.
    pub inbound: Vec<Vec<usize>>,
    /// Edge indices leaving each node.
    pub outbound: Vec<Vec<usize>>,
}

impl CommGraph {
    pub fn new(nodes: Vec<Node>, edges: Vec<Edge>) -> Self {
        let mut inbound = vec![Vec::new(); nodes.len()];
        let mut outbound = vec![Vec::new(); nodes.len()];
        for (e, edge) in edges.iter().enumerate() {
            outbound[edge.src].push(e);
            inbound[edge.dst].push(e);
        }
        Self { nodes, edges, inbound, outbound }
    }

    pub fn count_edges(&self, kind: EdgeKind) -> usize {
        self.edges.iter().filter(|e| e.kind == kind).count()
    }

    /// Feature width of a node type, if any node of that type exists.
    pub fn node_dim(&self, kind: NodeKind) -> Option<usize> {
        self.nodes.iter().find(|n| n.kind == kind).map(|n| n.features.len())
    }

    pub fn edge_dim(&self, kind: EdgeKind) -> Option<usize> {
        self.edges.iter().find(|e| e.kind == kind).map(|e| e.features.len())
    }

    /// Relabels nodes so that old node `i` becomes `perm[i]`, and reverses the
    /// edge list. The result is isomorphic to `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.nodes.len();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::InvalidArgument("not a permutation of the node set".into()));
        }
        let mut nodes = self.nodes.clone();
        for (old, &new) in perm.iter().enumerate() {
            nodes[new] = self.nodes[old].clone();
        }
        let edges = self
            .edges
            .iter()
            .rev()
            .map(|e| Edge { src: perm[e.src], dst: perm[e.dst], kind: e.kind, features: e.features.clone() })
            .collect();
        Ok(Self::new(nodes, edges))
    }

    /// The same graph with every edge removed.
    pub fn without_edges(&self) -> Self {
        Self::new(self.nodes.clone(), Vec::new())
    }
}
