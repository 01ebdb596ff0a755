use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{add_gru, dense, gru_step, Activation, AggKind, HyperMixer, Init, ParamStore, Tape, Var};
use crate::env::{CommGraph, EdgeKind, Environment, JointAction, NodeKind};
use crate::error::{Error, Result};
use crate::link::PowerAction;
use crate::phy::RisAction;

/// Which learner the parameters describe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Graph-embedded actors, local critics, monotonic mixer.
    Gevdac,
    /// Raw neighbor features instead of learned messages.
    IeVdac,
    /// No messages at all.
    Vdac,
    /// Local actors with a single critic on the concatenated node features.
    CentralCritic,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Gevdac => "gevdac",
            Variant::IeVdac => "ie-vdac",
            Variant::Vdac => "vdac",
            Variant::CentralCritic => "central-critic",
        }
    }

    pub fn uses_mixer(self) -> bool {
        self != Variant::CentralCritic
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub mix_hidden: usize,
    pub critic_hidden: usize,
    /// Message-passing rounds.
    pub layers: usize,
    pub aggregation: AggKind,
    pub log_std_init: f64,
    pub log_std_min: f64,
    pub log_std_max: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Gevdac,
            embed_dim: 16,
            hidden_dim: 32,
            mix_hidden: 32,
            critic_hidden: 64,
            layers: 2,
            aggregation: AggKind::Mean,
            log_std_init: -0.5,
            log_std_min: -20.0,
            log_std_max: 2.0,
        }
    }
}

/// Sizes fixed by the network configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub num_aps: usize,
    pub num_ris: usize,
    pub users_per_ap: usize,
    pub antennas: usize,
    pub ris_elements: usize,
    pub phase_levels: usize,
    pub state_dim: usize,
}

impl ModelDims {
    pub fn from_env(env: &Environment) -> Self {
        let net = &env.net;
        Self {
            num_aps: net.num_aps,
            num_ris: net.num_ris,
            users_per_ap: net.users_per_ap(),
            antennas: net.antennas,
            ris_elements: net.ris_elements,
            phase_levels: net.ris_phase_levels(),
            state_dim: env.global_state().len(),
        }
    }

    pub fn agents(&self) -> usize {
        self.num_aps + self.num_ris
    }

    pub fn node_dim(&self, kind: NodeKind) -> usize {
        match kind {
            NodeKind::Ap => 2 * self.users_per_ap * self.antennas + 2 * self.users_per_ap,
            NodeKind::Ris => 2 * self.ris_elements,
        }
    }

    pub fn edge_dim(&self, kind: EdgeKind) -> usize {
        let (k, n, l) = (self.users_per_ap, self.antennas, self.ris_elements);
        match kind {
            EdgeKind::ApToRis | EdgeKind::ApToAp => 2 * k * n,
            EdgeKind::RisToAp => 2 * l * n + 2 * k * l,
        }
    }

    /// Width of the actor head output.
    pub fn head_dim(&self, kind: NodeKind) -> usize {
        match kind {
            NodeKind::Ap => self.users_per_ap + 1,
            NodeKind::Ris => self.ris_elements * (1 + self.phase_levels),
        }
    }
}

const NODE_KINDS: [NodeKind; 2] = [NodeKind::Ap, NodeKind::Ris];
const EDGE_KINDS: [EdgeKind; 3] = [EdgeKind::ApToRis, EdgeKind::RisToAp, EdgeKind::ApToAp];

fn edge_src(kind: EdgeKind) -> NodeKind {
    match kind {
        EdgeKind::RisToAp => NodeKind::Ris,
        _ => NodeKind::Ap,
    }
}

fn edge_dst(kind: EdgeKind) -> NodeKind {
    match kind {
        EdgeKind::ApToRis => NodeKind::Ris,
        _ => NodeKind::Ap,
    }
}

fn edge_tag(kind: EdgeKind) -> &'static str {
    match kind {
        EdgeKind::ApToRis => "ap_ris",
        EdgeKind::RisToAp => "ris_ap",
        EdgeKind::ApToAp => "ap_ap",
    }
}

fn type_tag(kind: NodeKind) -> usize {
    kind.type_index()
}

/// Action of one agent in the head's native coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AgentAction {
    /// Pre-squash Gaussian sample: total-power logit followed by one logit per user.
    Ap { logits: Vec<f64> },
    Ris { on: Vec<bool>, phase: Vec<u32> },
}

/// Tape handles of one forward pass, indexed by graph node.
#[derive(Debug, Clone)]
pub struct Forward {
    pub z_tilde: Vec<Var>,
    pub hidden: Vec<Var>,
    pub heads: Vec<Var>,
    /// Local critics; empty for the central-critic variant.
    pub values: Vec<Var>,
    pub v_tot: Var,
}

/// Parameters of one learner plus the shapes they were built for.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub cfg: ModelConfig,
    pub dims: ModelDims,
    pub params: ParamStore,
}

impl Model {
    pub fn new(cfg: ModelConfig, dims: ModelDims, seed: u64) -> Result<Self> {
        if cfg.embed_dim == 0 || cfg.hidden_dim == 0 {
            return Err(Error::Config("embedding and hidden widths must be positive".into()));
        }
        let mut p = ParamStore::new(seed);
        let present = |k: NodeKind| match k {
            NodeKind::Ap => dims.num_aps > 0,
            NodeKind::Ris => dims.num_ris > 0,
        };
        if cfg.variant == Variant::Gevdac || cfg.variant == Variant::Vdac {
            for l in 0..cfg.layers {
                let zdim = |k: NodeKind| if l == 0 { dims.node_dim(k) } else { cfg.embed_dim };
                for e in EDGE_KINDS {
                    if present(edge_src(e)) && present(edge_dst(e)) {
                        p.add_dense(&format!("g.l{l}.psi.{}", edge_tag(e)), zdim(edge_src(e)) + dims.edge_dim(e), cfg.embed_dim)?;
                    }
                }
                for k in NODE_KINDS.into_iter().filter(|&k| present(k)) {
                    p.add_dense(&format!("g.l{l}.phi{}", type_tag(k)), zdim(k) + cfg.embed_dim, cfg.embed_dim)?;
                }
            }
        }
        for k in NODE_KINDS.into_iter().filter(|&k| present(k)) {
            let u = type_tag(k);
            let zt = Self::z_tilde_dim(&cfg, &dims, k);
            p.add_dense(&format!("a{u}.in"), zt, cfg.hidden_dim)?;
            add_gru(&mut p, &format!("a{u}.gru"), cfg.hidden_dim, cfg.hidden_dim)?;
            p.add_dense(&format!("a{u}.pi"), cfg.hidden_dim, dims.head_dim(k))?;
            if k == NodeKind::Ap {
                p.add("a0.log_std", vec![dims.head_dim(k)], Init::Constant(cfg.log_std_init))?;
            }
            if cfg.variant.uses_mixer() {
                p.add_dense(&format!("v{u}.out"), cfg.hidden_dim, 1)?;
            }
        }
        if cfg.variant.uses_mixer() {
            Self::mixer_of(&cfg, &dims).add_params(&mut p, "mix")?;
        } else {
            p.add_dense("c.l1", dims.state_dim, cfg.critic_hidden)?;
            p.add_dense("c.out", cfg.critic_hidden, 1)?;
        }
        Ok(Self { cfg, dims, params: p })
    }

    fn mixer_of(cfg: &ModelConfig, dims: &ModelDims) -> HyperMixer {
        HyperMixer { agents: dims.agents(), state_dim: dims.state_dim, hidden: cfg.mix_hidden, activation: Activation::Elu }
    }

    pub fn mixer(&self) -> HyperMixer {
        Self::mixer_of(&self.cfg, &self.dims)
    }

    /// Width of the actor input for one node type.
    pub fn z_tilde_dim(cfg: &ModelConfig, dims: &ModelDims, kind: NodeKind) -> usize {
        let o = dims.node_dim(kind);
        match cfg.variant {
            Variant::Gevdac | Variant::Vdac => o + if cfg.layers == 0 { o } else { cfg.embed_dim },
            Variant::IeVdac => {
                o + EDGE_KINDS.iter().filter(|&&e| edge_dst(e) == kind).map(|&e| dims.edge_dim(e)).sum::<usize>()
            }
            Variant::CentralCritic => o,
        }
    }

    /// Scalars sent between agents per slot.
    pub fn exchange_volume(&self, graph: &CommGraph) -> usize {
        match self.cfg.variant {
            Variant::Gevdac => self.cfg.layers * graph.edges.len() * self.cfg.embed_dim,
            Variant::IeVdac => graph.edges.iter().map(|e| e.features.len()).sum(),
            Variant::Vdac | Variant::CentralCritic => 0,
        }
    }

    fn check_graph(&self, graph: &CommGraph) -> Result<()> {
        for n in &graph.nodes {
            if n.features.len() != self.dims.node_dim(n.kind) {
                return Err(Error::Dimension(format!(
                    "{:?} node feature of length {} (model expects {})",
                    n.kind,
                    n.features.len(),
                    self.dims.node_dim(n.kind)
                )));
            }
        }
        for e in &graph.edges {
            if e.features.len() != self.dims.edge_dim(e.kind) {
                return Err(Error::Dimension(format!("{:?} edge feature of length {}", e.kind, e.features.len())));
            }
        }
        Ok(())
    }

    /// Embedded local states `z̃_i = [o_i, z_i]`, one per node.
    pub fn embed(&self, tape: &mut Tape, graph: &CommGraph) -> Result<Vec<Var>> {
        self.check_graph(graph)?;
        let obs: Vec<Var> = graph.nodes.iter().map(|n| tape.input(n.features.clone())).collect();
        match self.cfg.variant {
            Variant::CentralCritic => Ok(obs),
            Variant::IeVdac => {
                let mut out = Vec::with_capacity(obs.len());
                for (i, node) in graph.nodes.iter().enumerate() {
                    let mut parts = vec![obs[i]];
                    for e in EDGE_KINDS.into_iter().filter(|&e| edge_dst(e) == node.kind) {
                        let inbound: Vec<Var> = graph.inbound[i]
                            .iter()
                            .filter(|&&k| graph.edges[k].kind == e)
                            .map(|&k| tape.input(graph.edges[k].features.clone()))
                            .collect();
                        parts.push(tape.aggregate(AggKind::Mean, &inbound, self.dims.edge_dim(e))?);
                    }
                    out.push(tape.concat(&parts));
                }
                Ok(out)
            }
            Variant::Gevdac | Variant::Vdac => {
                let empty;
                let graph = if self.cfg.variant == Variant::Vdac {
                    empty = graph.without_edges();
                    &empty
                } else {
                    graph
                };
                let mut z = obs.clone();
                for l in 0..self.cfg.layers {
                    let mut inbox: Vec<Vec<Var>> = vec![Vec::new(); z.len()];
                    for e in &graph.edges {
                        let d = tape.input(e.features.clone());
                        let x = tape.concat(&[z[e.src], d]);
                        let m = dense(tape, &format!("g.l{l}.psi.{}", edge_tag(e.kind)), x, Activation::Tanh)?;
                        inbox[e.dst].push(m);
                    }
                    let mut next = Vec::with_capacity(z.len());
                    for (i, node) in graph.nodes.iter().enumerate() {
                        let agg = tape.aggregate(self.cfg.aggregation, &inbox[i], self.cfg.embed_dim)?;
                        let x = tape.concat(&[z[i], agg]);
                        next.push(dense(tape, &format!("g.l{l}.phi{}", type_tag(node.kind)), x, Activation::Tanh)?);
                    }
                    z = next;
                }
                Ok(obs.iter().zip(&z).map(|(&o, &zi)| tape.concat(&[o, zi])).collect())
            }
        }
    }

    /// Full forward pass for one slot. `h_prev` holds each node's GRU state.
    pub fn forward(&self, tape: &mut Tape, graph: &CommGraph, state: &[f64], h_prev: &[Vec<f64>]) -> Result<Forward> {
        if h_prev.len() != graph.nodes.len() {
            return Err(Error::Dimension(format!("{} GRU states for {} nodes", h_prev.len(), graph.nodes.len())));
        }
        let z_tilde = self.embed(tape, graph)?;
        let mut hidden = Vec::with_capacity(z_tilde.len());
        let mut heads = Vec::with_capacity(z_tilde.len());
        let mut values = Vec::new();
        for (i, node) in graph.nodes.iter().enumerate() {
            let u = type_tag(node.kind);
            let x = dense(tape, &format!("a{u}.in"), z_tilde[i], Activation::Relu)?;
            let h0 = tape.input(h_prev[i].clone());
            let h = gru_step(tape, &format!("a{u}.gru"), x, h0)?;
            heads.push(dense(tape, &format!("a{u}.pi"), h, Activation::Linear)?);
            if self.cfg.variant.uses_mixer() {
                values.push(dense(tape, &format!("v{u}.out"), h, Activation::Linear)?);
            }
            hidden.push(h);
        }
        let v_tot = if self.cfg.variant.uses_mixer() {
            let s = tape.input(state.to_vec());
            let v = tape.concat(&values);
            self.mixer().forward(tape, "mix", s, v)?
        } else {
            let x = tape.input(state.to_vec());
            let h = dense(tape, "c.l1", x, Activation::Relu)?;
            dense(tape, "c.out", h, Activation::Linear)?
        };
        Ok(Forward { z_tilde, hidden, heads, values, v_tot })
    }

    pub fn zero_hidden(&self, nodes: usize) -> Vec<Vec<f64>> {
        vec![vec![0.0; self.cfg.hidden_dim]; nodes]
    }

    fn log_std(&self, tape: &mut Tape) -> Result<Var> {
        let ls = tape.param("a0.log_std")?;
        Ok(tape.clamp(ls, self.cfg.log_std_min, self.cfg.log_std_max))
    }

    /// `log π(action | head)` recorded on the tape.
    pub fn log_prob(&self, tape: &mut Tape, kind: NodeKind, head: Var, action: &AgentAction) -> Result<Var> {
        match (kind, action) {
            (NodeKind::Ap, AgentAction::Ap { logits }) => {
                let ls = self.log_std(tape)?;
                gaussian_log_prob(tape, head, ls, logits)
            }
            (NodeKind::Ris, AgentAction::Ris { on, phase }) => {
                ris_log_prob(tape, head, on, phase, self.dims.ris_elements, self.dims.phase_levels)
            }
            _ => Err(Error::Action(format!("action does not match a {kind:?} agent"))),
        }
    }

    /// Draws an action from the head; `greedy` takes the mode instead.
    pub fn sample<R: Rng + ?Sized>(&self, tape: &mut Tape, kind: NodeKind, head: Var, greedy: bool, rng: &mut R) -> Result<AgentAction> {
        let h = tape.value(head).to_vec();
        match kind {
            NodeKind::Ap => {
                if greedy {
                    return Ok(AgentAction::Ap { logits: h });
                }
                let ls = self.log_std(tape)?;
                let sd: Vec<f64> = tape.value(ls).iter().map(|v| v.exp()).collect();
                let logits = h
                    .iter()
                    .zip(&sd)
                    .map(|(m, s)| {
                        let e: f64 = StandardNormal.sample(rng);
                        m + s * e
                    })
                    .collect();
                Ok(AgentAction::Ap { logits })
            }
            NodeKind::Ris => {
                let (l, levels) = (self.dims.ris_elements, self.dims.phase_levels);
                let mut on = Vec::with_capacity(l);
                let mut phase = Vec::with_capacity(l);
                for e in 0..l {
                    let p_on = 1.0 / (1.0 + (-h[e]).exp());
                    on.push(if greedy { h[e] > 0.0 } else { rng.random::<f64>() < p_on });
                    let logits = &h[l + e * levels..l + (e + 1) * levels];
                    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let w: Vec<f64> = logits.iter().map(|x| (x - m).exp()).collect();
                    let pick = if greedy {
                        (0..levels).fold(0, |b, k| if logits[k] > logits[b] { k } else { b })
                    } else {
                        let mut u = rng.random::<f64>() * w.iter().sum::<f64>();
                        let mut k = 0;
                        while k + 1 < levels && u >= w[k] {
                            u -= w[k];
                            k += 1;
                        }
                        k
                    };
                    phase.push(pick as u32);
                }
                Ok(AgentAction::Ris { on, phase })
            }
        }
    }
}

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Diagonal Gaussian density of `x` with mean `mean` and log-std `log_std`.
pub fn gaussian_log_prob(tape: &mut Tape, mean: Var, log_std: Var, x: &[f64]) -> Result<Var> {
    let n = x.len();
    let xv = tape.input(x.to_vec());
    let d = tape.sub(xv, mean)?;
    let neg = tape.affine(log_std, -1.0, 0.0);
    let inv = tape.exp(neg);
    let z = tape.mul(d, inv)?;
    let z2 = tape.square(z);
    let q = tape.sum(z2);
    let s = tape.sum(log_std);
    let a = tape.affine(q, -0.5, -(n as f64) * HALF_LN_2PI);
    tape.sub(a, s)
}

/// Independent Bernoulli switches followed by one categorical phase per element.
pub fn ris_log_prob(tape: &mut Tape, head: Var, on: &[bool], phase: &[u32], elements: usize, levels: usize) -> Result<Var> {
    if on.len() != elements || phase.len() != elements {
        return Err(Error::Action(format!("RIS action for {} elements (want {elements})", on.len())));
    }
    let logits = tape.slice(head, 0, elements)?;
    let signs = tape.input(on.iter().map(|&w| if w { 1.0 } else { -1.0 }).collect());
    let signed = tape.mul(signs, logits)?;
    let ls = tape.log_sigmoid(signed);
    let mut terms = vec![tape.sum(ls)];
    for (e, &b) in phase.iter().enumerate() {
        if b as usize >= levels {
            return Err(Error::Action(format!("phase index {b} with {levels} levels")));
        }
        let block = tape.slice(head, elements + e * levels, levels)?;
        let lp = tape.log_softmax(block);
        terms.push(tape.slice(lp, b as usize, 1)?);
    }
    tape.add_all(&terms)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Maps per-node actions (graph order: APs, then RISs) onto the environment action.
pub fn joint_action(env: &Environment, actions: &[AgentAction]) -> Result<JointAction> {
    let net = &env.net;
    if actions.len() != net.num_aps + net.num_ris {
        return Err(Error::Action(format!("{} agent actions for {} agents", actions.len(), net.num_aps + net.num_ris)));
    }
    let mut power = PowerAction::zeros(net.total_users());
    let mut ris = Vec::with_capacity(net.num_ris);
    for (i, a) in actions.iter().enumerate() {
        match a {
            AgentAction::Ap { logits } if i < net.num_aps => {
                let users = env.topology.users_of_ap(i);
                if logits.len() != users.len() + 1 {
                    return Err(Error::Action(format!("AP {i}: {} logits for {} users", logits.len(), users.len())));
                }
                let total = sigmoid(logits[0]) * net.max_tx_power_w;
                let m = logits[1..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let w: Vec<f64> = logits[1..].iter().map(|x| (x - m).exp()).collect();
                let z: f64 = w.iter().sum();
                for (u, wk) in users.zip(&w) {
                    power.alloc[u] = total * wk / z;
                }
            }
            AgentAction::Ris { on, phase } if i >= net.num_aps => {
                ris.push(RisAction { on_off: on.clone(), phase_index: phase.clone() });
            }
            _ => return Err(Error::Action(format!("agent {i} has an action of the wrong type"))),
        }
    }
    Ok(JointAction { power, ris })
}
