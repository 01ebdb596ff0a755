use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{joint_action, AgentAction, Model, ModelConfig, ModelDims};
use super::{advantage, n_step_return};
use crate::autodiff::{apply_updates, ParamGrads, Tape};
use crate::env::{CommGraph, Environment, JointAction, StepOutcome};
use crate::error::{Error, Result};
use crate::phy::UserKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub gamma: f64,
    pub n_step: usize,
    pub kappa_pi: f64,
    pub kappa_v: f64,
    pub kappa_mu: f64,
    /// Rewards are multiplied by this before entering the losses.
    pub reward_scale: f64,
    /// Each of the policy and critic gradients is rescaled to at most this
    /// norm before the update; 0 disables.
    pub max_grad_norm: f64,
    pub episodes: usize,
    /// Slots per update; 0 updates once per episode.
    pub update_every: usize,
    /// Greedy test episode every this many training episodes; 0 disables.
    pub test_every: usize,
    pub test_slots: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            gamma: 0.99,
            n_step: 8,
            kappa_pi: 3e-4,
            kappa_v: 1e-3,
            kappa_mu: 1e-3,
            reward_scale: 1.0,
            max_grad_norm: 10.0,
            episodes: 10,
            update_every: 0,
            test_every: 1,
            test_slots: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Settings that train reliably at desk scale. The critic is myopic:
    /// with a far-sighted critic the `Λ·R` reward term pays the actors for
    /// letting queues grow.
    pub fn desk() -> Self {
        Self {
            gamma: 0.0,
            kappa_pi: 3e-2,
            kappa_v: 1e-3,
            kappa_mu: 1e-2,
            reward_scale: 0.01,
            update_every: 10,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("discount {} outside [0, 1)", self.gamma)));
        }
        if self.n_step == 0 {
            return Err(Error::Config("n_step must be at least 1".into()));
        }
        for (k, v) in [("kappa_pi", self.kappa_pi), ("kappa_v", self.kappa_v), ("kappa_mu", self.kappa_mu)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{k} = {v}")));
            }
        }
        if !(self.max_grad_norm.is_finite() && self.max_grad_norm >= 0.0) {
            return Err(Error::Config("max_grad_norm must be finite and non-negative".into()));
        }
        if !(self.reward_scale.is_finite() && self.reward_scale > 0.0) {
            return Err(Error::Config("reward_scale must be positive".into()));
        }
        Ok(())
    }
}

/// One slot of a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub graph: CommGraph,
    pub state: Vec<f64>,
    pub h_prev: Vec<Vec<f64>>,
    pub z_tilde: Vec<Vec<f64>>,
    pub actions: Vec<AgentAction>,
    pub log_probs: Vec<f64>,
    pub v_tot: f64,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub outcome: StepOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
    /// `V_tot` at the state after the last step.
    pub final_v_tot: f64,
}

/// Carries the per-agent GRU state across slots of one episode.
#[derive(Debug, Clone)]
pub struct Runner {
    pub h: Vec<Vec<f64>>,
}

impl Runner {
    pub fn new(model: &Model, env: &Environment) -> Self {
        Self { h: model.zero_hidden(env.net.num_aps + env.net.num_ris) }
    }

    pub fn reset(&mut self, model: &Model) {
        self.h = model.zero_hidden(self.h.len());
    }

    /// Observes, acts and advances the environment by one slot.
    pub fn step<R: Rng + ?Sized>(&mut self, model: &Model, env: &mut Environment, greedy: bool, rng: &mut R) -> Result<TrajectoryStep> {
        let graph = env.comm_graph();
        let state = env.global_state();
        let mut tape = Tape::with_params(&model.params);
        let fw = model.forward(&mut tape, &graph, &state, &self.h)?;
        let mut actions = Vec::with_capacity(graph.nodes.len());
        let mut log_probs = Vec::with_capacity(graph.nodes.len());
        for (i, node) in graph.nodes.iter().enumerate() {
            let a = model.sample(&mut tape, node.kind, fw.heads[i], greedy, rng)?;
            let lp = model.log_prob(&mut tape, node.kind, fw.heads[i], &a)?;
            log_probs.push(tape.scalar(lp));
            actions.push(a);
        }
        let z_tilde = fw.z_tilde.iter().map(|&v| tape.value(v).to_vec()).collect();
        let h_next: Vec<Vec<f64>> = fw.hidden.iter().map(|&v| tape.value(v).to_vec()).collect();
        let v_tot = tape.scalar(fw.v_tot);
        drop(tape);
        let outcome = env.step(joint_action(env, &actions)?)?;
        let h_prev = std::mem::replace(&mut self.h, h_next);
        Ok(TrajectoryStep {
            graph,
            state,
            h_prev,
            z_tilde,
            actions,
            log_probs,
            v_tot,
            reward: outcome.reward,
            next_state: env.global_state(),
            outcome,
        })
    }

    /// `V_tot` of the current environment state under the current GRU state.
    pub fn value(&self, model: &Model, env: &Environment) -> Result<f64> {
        let mut tape = Tape::with_params(&model.params);
        let fw = model.forward(&mut tape, &env.comm_graph(), &env.global_state(), &self.h)?;
        Ok(tape.scalar(fw.v_tot))
    }
}

/// Resets `env` and runs `slots` slots from empty queues and zero GRU state.
pub fn rollout<R: Rng + ?Sized>(env: &mut Environment, model: &Model, slots: usize, greedy: bool, rng: &mut R) -> Result<Trajectory> {
    env.reset()?;
    let mut runner = Runner::new(model, env);
    let mut steps = Vec::with_capacity(slots);
    for _ in 0..slots {
        steps.push(runner.step(model, env, greedy, rng)?);
    }
    let final_v_tot = runner.value(model, env)?;
    Ok(Trajectory { steps, final_v_tot })
}

/// Gradients of one batch of consecutive slots.
#[derive(Debug, Clone)]
pub struct BatchGradients {
    /// Ascent direction of `Σ_t A_t Σ_i log π_i`, averaged over slots.
    pub policy: ParamGrads,
    /// Gradient of the mean squared critic error.
    pub critic: ParamGrads,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    pub critic_loss: f64,
}

/// Computes policy and critic gradients for consecutive `steps` followed by
/// a state with value `bootstrap`. Rewards are multiplied by `reward_scale`.
/// Advantages and returns are constants of the backward pass.
pub fn batch_gradients(model: &Model, steps: &[TrajectoryStep], bootstrap: f64, cfg: &TrainConfig) -> Result<BatchGradients> {
    let t_len = steps.len();
    if t_len == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let rewards: Vec<f64> = steps.iter().map(|s| s.reward * cfg.reward_scale).collect();
    let mut values: Vec<f64> = steps.iter().map(|s| s.v_tot).collect();
    values.push(bootstrap);
    let advantages: Vec<f64> = (0..t_len).map(|t| advantage(rewards[t], values[t], values[t + 1], cfg.gamma)).collect();
    let returns = (0..t_len)
        .map(|t| {
            let m = cfg.n_step.min(t_len - t);
            n_step_return(&rewards[t..t + m], cfg.gamma, m, values[t + m])
        })
        .collect::<Result<Vec<_>>>()?;

    let mut policy = ParamGrads::zeros_like(&model.params);
    let mut critic = ParamGrads::zeros_like(&model.params);
    let mut critic_loss = 0.0;
    let w = 1.0 / t_len as f64;
    for (t, step) in steps.iter().enumerate() {
        let mut tape = Tape::with_params(&model.params);
        let fw = model.forward(&mut tape, &step.graph, &step.state, &step.h_prev)?;
        let mut lps = Vec::with_capacity(step.actions.len());
        for (i, node) in step.graph.nodes.iter().enumerate() {
            lps.push(model.log_prob(&mut tape, node.kind, fw.heads[i], &step.actions[i])?);
        }
        let lp = tape.add_all(&lps)?;
        let obj = tape.affine(lp, advantages[t], 0.0);
        let diff = tape.affine(fw.v_tot, -1.0, returns[t]);
        let loss = tape.square(diff);
        critic_loss += w * tape.scalar(loss);
        if advantages[t] != 0.0 {
            let g = tape.backward(obj)?;
            policy.add_scaled(&tape.param_grads(&g), w)?;
        }
        let g = tape.backward(loss)?;
        critic.add_scaled(&tape.param_grads(&g), w)?;
    }
    Ok(BatchGradients { policy, critic, advantages, returns, critic_loss })
}

fn is_mixer(name: &str) -> bool {
    name.starts_with("mix.")
}

/// `θ ← θ + κ_π G_π − κ_V G_V` for actor, embedding and critic parameters
/// and `μ ← μ − κ_μ G_V` for the mixer.
pub fn apply_batch(model: &mut Model, g: &BatchGradients, cfg: &TrainConfig) -> Result<()> {
    let clip = |mut g: ParamGrads| {
        let n = g.norm();
        if cfg.max_grad_norm > 0.0 && n > cfg.max_grad_norm {
            g.scale(cfg.max_grad_norm / n);
        }
        g
    };
    let policy = clip(g.policy.clone());
    let critic = clip(g.critic.clone());
    let critic_theta = critic.clone().masked(|n| !is_mixer(n));
    let critic_mu = critic.masked(is_mixer);
    apply_updates(
        &mut model.params,
        &[(&policy, cfg.kappa_pi), (&critic_theta, -cfg.kappa_v), (&critic_mu, -cfg.kappa_mu)],
    )
}

/// One row of the learning curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub episode: usize,
    pub algorithm: String,
    pub seed: u64,
    pub train_reward: f64,
    pub train_eta: f64,
    pub test_reward: Option<f64>,
    pub test_eta: Option<f64>,
    pub se_outage: Option<f64>,
    pub iot_outage: Option<f64>,
    pub critic_loss: f64,
    pub grad_norm_pi: f64,
    pub grad_norm_v: f64,
    pub exchange_per_slot: f64,
    pub env_checksum: u64,
}

pub struct TrainOutcome {
    pub model: Model,
    pub curve: Vec<CurveRow>,
}

/// Averages of one test episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestMetrics {
    pub reward: f64,
    pub eta: f64,
    pub sum_rate_gbps: f64,
    pub power_w: f64,
    /// Fraction of (slot, user) pairs with `q ≥ q_max`, per user kind.
    pub se_outage: f64,
    pub iot_outage: f64,
    /// Mean of `q / q_max`, the Markov bound on the outage above.
    pub se_queue_ratio: f64,
    pub iot_queue_ratio: f64,
}

impl TestMetrics {
    pub fn from_outcomes(outcomes: &[StepOutcome], kinds: &[UserKind], q_max: &[f64]) -> Self {
        let mut m = TestMetrics {
            reward: 0.0,
            eta: 0.0,
            sum_rate_gbps: 0.0,
            power_w: 0.0,
            se_outage: 0.0,
            iot_outage: 0.0,
            se_queue_ratio: 0.0,
            iot_queue_ratio: 0.0,
        };
        let (mut se_n, mut iot_n) = (0usize, 0usize);
        for o in outcomes {
            m.reward += o.reward;
            m.eta += o.eta;
            m.sum_rate_gbps += o.rates_gbps.iter().sum::<f64>();
            m.power_w += o.power_w;
            for (u, &out) in o.outage.iter().enumerate() {
                let hit = if out { 1.0 } else { 0.0 };
                let ratio = o.q_after[u] / q_max[u];
                match kinds[u] {
                    UserKind::Se => {
                        m.se_outage += hit;
                        m.se_queue_ratio += ratio;
                        se_n += 1;
                    }
                    UserKind::Iot => {
                        m.iot_outage += hit;
                        m.iot_queue_ratio += ratio;
                        iot_n += 1;
                    }
                }
            }
        }
        let n = outcomes.len().max(1) as f64;
        m.reward /= n;
        m.eta /= n;
        m.sum_rate_gbps /= n;
        m.power_w /= n;
        let (se, iot) = (se_n.max(1) as f64, iot_n.max(1) as f64);
        m.se_outage /= se;
        m.se_queue_ratio /= se;
        m.iot_outage /= iot;
        m.iot_queue_ratio /= iot;
        m
    }
}

/// Runs `policy` for `slots` slots after a reset with `seed`.
pub fn evaluate_policy<F>(env: &mut Environment, seed: u64, slots: usize, mut policy: F) -> Result<(TestMetrics, Vec<StepOutcome>)>
where
    F: FnMut(&Environment) -> Result<JointAction>,
{
    env.reset_with_seed(seed)?;
    let mut outcomes = Vec::with_capacity(slots);
    for _ in 0..slots {
        let a = policy(env)?;
        outcomes.push(env.step(a)?);
    }
    let m = TestMetrics::from_outcomes(&outcomes, &env.topology.user_kind, &env.queues().q_max);
    Ok((m, outcomes))
}

/// Greedy test episode of `model`.
pub fn test_episode(model: &Model, env: &mut Environment, seed: u64, slots: usize) -> Result<TestMetrics> {
    Ok(test_episode_outcomes(model, env, seed, slots)?.0)
}

pub fn test_episode_outcomes(model: &Model, env: &mut Environment, seed: u64, slots: usize) -> Result<(TestMetrics, Vec<StepOutcome>)> {
    env.reset_with_seed(seed)?;
    let mut runner = Runner::new(model, env);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut outcomes = Vec::with_capacity(slots);
    for _ in 0..slots {
        outcomes.push(runner.step(model, env, true, &mut rng)?.outcome);
    }
    let m = TestMetrics::from_outcomes(&outcomes, &env.topology.user_kind, &env.queues().q_max);
    Ok((m, outcomes))
}

pub struct TrainOptions<'a> {
    /// Written after every episode when set.
    pub curve_csv: Option<&'a Path>,
    /// Parameters are saved here if training diverges.
    pub failure_checkpoint: Option<PathBuf>,
}

/// On-policy training. `make_env(seed)` builds the training environment
/// (seed `cfg.seed`) and the test environment (seed `cfg.seed + 1`).
pub fn train<F>(make_env: F, cfg: &TrainConfig, opts: &TrainOptions) -> Result<TrainOutcome>
where
    F: Fn(u64) -> Result<Environment>,
{
    cfg.validate()?;
    let mut env = make_env(cfg.seed)?;
    let mut test_env = make_env(cfg.seed.wrapping_add(1))?;
    let dims = ModelDims::from_env(&env);
    let mut model = Model::new(cfg.model.clone(), dims, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut runner = Runner::new(&model, &env);
    let batch = if cfg.update_every == 0 { env.env.episode_len } else { cfg.update_every };
    let test_slots = if cfg.test_slots == 0 { env.env.episode_len } else { cfg.test_slots };
    let checksum = env.checksum();
    let mut curve = Vec::with_capacity(cfg.episodes);
    let mut writer = match opts.curve_csv {
        Some(p) => Some(csv::Writer::from_path(p)?),
        None => None,
    };

    for episode in 0..cfg.episodes {
        env.reset()?;
        runner.reset(&model);
        let (mut r_sum, mut eta_sum, mut slots) = (0.0, 0.0, 0usize);
        let (mut gpi, mut gv, mut closs, mut updates) = (0.0, 0.0, 0.0, 0usize);
        let mut exchange = 0usize;
        while !env.done() {
            let mut steps = Vec::with_capacity(batch);
            while steps.len() < batch && !env.done() {
                let s = runner.step(&model, &mut env, false, &mut rng)?;
                exchange += model.exchange_volume(&s.graph);
                r_sum += s.reward;
                eta_sum += s.outcome.eta;
                slots += 1;
                steps.push(s);
            }
            let bootstrap = runner.value(&model, &env)?;
            let g = batch_gradients(&model, &steps, bootstrap, cfg)?;
            gpi += g.policy.norm();
            gv += g.critic.norm();
            closs += g.critic_loss;
            updates += 1;
            if let Err(e) = apply_batch(&mut model, &g, cfg) {
                if let Some(p) = &opts.failure_checkpoint {
                    model.params.save(p)?;
                }
                log::error!("training diverged in episode {episode}: {e}");
                return Err(e);
            }
        }
        let n = slots.max(1) as f64;
        let u = updates.max(1) as f64;
        let test = if cfg.test_every > 0 && (episode + 1) % cfg.test_every == 0 {
            Some(test_episode(&model, &mut test_env, cfg.seed.wrapping_add(1), test_slots)?)
        } else {
            None
        };
        let row = CurveRow {
            episode,
            algorithm: model.cfg.variant.name().to_string(),
            seed: cfg.seed,
            train_reward: r_sum / n,
            train_eta: eta_sum / n,
            test_reward: test.map(|t| t.reward),
            test_eta: test.map(|t| t.eta),
            se_outage: test.map(|t| t.se_outage),
            iot_outage: test.map(|t| t.iot_outage),
            critic_loss: closs / u,
            grad_norm_pi: gpi / u,
            grad_norm_v: gv / u,
            exchange_per_slot: exchange as f64 / n,
            env_checksum: checksum,
        };
        log::debug!("episode {episode}: train reward {:.4} grad norms {:.3e} / {:.3e}", row.train_reward, row.grad_norm_pi, row.grad_norm_v);
        if let Some(w) = writer.as_mut() {
            w.serialize(&row)?;
            w.flush()?;
        }
        curve.push(row);
    }
    Ok(TrainOutcome { model, curve })
}
