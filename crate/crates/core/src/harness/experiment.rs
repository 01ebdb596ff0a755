use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{best_action, oracle_actions, OracleReport};
use crate::autodiff::{AggKind, ParamStore};
use crate::config::{fmt_f64, KeyValues, NetworkConfig};
use crate::env::{EnvConfig, Environment, JointAction, SlotLog, StepOutcome};
use crate::error::{Error, Result};
use crate::gevdac::{
    evaluate_policy, test_episode_outcomes, train, CurveRow, Model, ModelDims, TestMetrics, TrainConfig, TrainOptions,
    Variant,
};
use crate::link::{HeadSelection, PowerAction};
use crate::phy::RisAction;

/// Every runnable algorithm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Gevdac,
    CentralCritic,
    Vdac,
    IeVdac,
    NoRisCsi,
    NoRisQos,
    Oracle,
}

impl Algorithm {
    pub const ALL: [Algorithm; 7] = [
        Algorithm::Gevdac,
        Algorithm::CentralCritic,
        Algorithm::Vdac,
        Algorithm::IeVdac,
        Algorithm::NoRisCsi,
        Algorithm::NoRisQos,
        Algorithm::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Gevdac => "gevdac",
            Algorithm::CentralCritic => "central-critic",
            Algorithm::Vdac => "vdac",
            Algorithm::IeVdac => "ie-vdac",
            Algorithm::NoRisCsi => "no-ris-csi",
            Algorithm::NoRisQos => "no-ris-qos",
            Algorithm::Oracle => "oracle",
        }
    }

    /// The learner behind a learning algorithm.
    pub fn variant(self) -> Option<Variant> {
        match self {
            Algorithm::Gevdac => Some(Variant::Gevdac),
            Algorithm::CentralCritic => Some(Variant::CentralCritic),
            Algorithm::Vdac => Some(Variant::Vdac),
            Algorithm::IeVdac => Some(Variant::IeVdac),
            _ => None,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown algorithm `{s}`")))
    }
}

/// Base network that config-file keys are applied on top of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Default,
    Tiny,
    Medium,
}

impl Preset {
    pub fn network(self) -> NetworkConfig {
        match self {
            Preset::Default => NetworkConfig::default(),
            Preset::Tiny => NetworkConfig::tiny(),
            Preset::Medium => NetworkConfig::medium(),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Preset::Default => "default",
            Preset::Tiny => "tiny",
            Preset::Medium => "medium",
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "default" => Ok(Preset::Default),
            "tiny" => Ok(Preset::Tiny),
            "medium" => Ok(Preset::Medium),
            _ => Err(Error::Config(format!("unknown preset `{s}`"))),
        }
    }
}

/// One experiment: a network, an algorithm, its seeds and where to write.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub network: NetworkConfig,
    pub env: EnvConfig,
    pub algorithm: Algorithm,
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
    /// Power levels per user for the oracle.
    pub oracle_power_levels: usize,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::with_preset(Preset::Default)
    }
}

impl ExperimentConfig {
    pub const KEYS: &'static [(&'static str, &'static str)] = &[
        ("preset", "default | tiny | medium"),
        ("algorithm", "gevdac | central-critic | vdac | ie-vdac | no-ris-csi | no-ris-qos | oracle"),
        ("seeds", "comma-separated integers"),
        ("episodes", "count"),
        ("gamma", "dimensionless"),
        ("n_step", "slots"),
        ("kappa_pi", "learning rate"),
        ("kappa_v", "learning rate"),
        ("kappa_mu", "learning rate"),
        ("reward_scale", "dimensionless"),
        ("max_grad_norm", "dimensionless (0 = off)"),
        ("update_every", "slots (0 = episode)"),
        ("test_every", "episodes (0 = off)"),
        ("test_slots", "slots (0 = episode_len)"),
        ("embed_dim", "count"),
        ("hidden_dim", "count"),
        ("mix_hidden", "count"),
        ("critic_hidden", "count"),
        ("layers", "count"),
        ("aggregation", "mean | sum | max"),
        ("log_std_init", "log"),
        ("oracle_power_levels", "count"),
        ("output_dir", "path"),
    ];

    pub fn with_preset(preset: Preset) -> Self {
        Self {
            preset,
            network: preset.network(),
            env: EnvConfig::default(),
            algorithm: Algorithm::Gevdac,
            seeds: vec![0],
            train: TrainConfig::desk(),
            oracle_power_levels: 4,
            output_dir: PathBuf::from("runs"),
        }
    }

    /// Parses a combined file of experiment, network and environment keys.
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        kv.reject_unknown(&[Self::KEYS, NetworkConfig::KEYS, EnvConfig::KEYS])?;
        let preset = kv.get("preset").map(Preset::from_str).transpose()?.unwrap_or(Preset::Default);
        let mut cfg = Self::with_preset(preset);
        cfg.network.apply(kv)?;
        cfg.env.apply(kv)?;
        if let Some(a) = kv.get("algorithm") {
            cfg.algorithm = a.parse()?;
        }
        if let Some(s) = kv.get("seeds") {
            cfg.seeds = parse_seeds(s)?;
        }
        let t = &mut cfg.train;
        kv.set_usize("episodes", &mut t.episodes)?;
        kv.set_f64("gamma", &mut t.gamma)?;
        kv.set_usize("n_step", &mut t.n_step)?;
        kv.set_f64("kappa_pi", &mut t.kappa_pi)?;
        kv.set_f64("kappa_v", &mut t.kappa_v)?;
        kv.set_f64("kappa_mu", &mut t.kappa_mu)?;
        kv.set_f64("reward_scale", &mut t.reward_scale)?;
        kv.set_f64("max_grad_norm", &mut t.max_grad_norm)?;
        kv.set_usize("update_every", &mut t.update_every)?;
        kv.set_usize("test_every", &mut t.test_every)?;
        kv.set_usize("test_slots", &mut t.test_slots)?;
        let m = &mut t.model;
        kv.set_usize("embed_dim", &mut m.embed_dim)?;
        kv.set_usize("hidden_dim", &mut m.hidden_dim)?;
        kv.set_usize("mix_hidden", &mut m.mix_hidden)?;
        kv.set_usize("critic_hidden", &mut m.critic_hidden)?;
        kv.set_usize("layers", &mut m.layers)?;
        kv.set_f64("log_std_init", &mut m.log_std_init)?;
        if let Some(a) = kv.get("aggregation") {
            m.aggregation = match a {
                "mean" => AggKind::Mean,
                "sum" => AggKind::Sum,
                "max" => AggKind::Max,
                other => return Err(Error::Config(format!("`aggregation`: unknown value `{other}`"))),
            };
        }
        kv.set_usize("oracle_power_levels", &mut cfg.oracle_power_levels)?;
        if let Some(d) = kv.get("output_dir") {
            cfg.output_dir = PathBuf::from(d);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_key_values(&KeyValues::read(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.env.validate()?;
        self.train.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.oracle_power_levels == 0 {
            return Err(Error::Config("`oracle_power_levels` must be positive".into()));
        }
        Ok(())
    }

    /// The full resolved configuration in the file format.
    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        let t = &self.train;
        let m = &t.model;
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let agg = match m.aggregation {
            AggKind::Mean => "mean",
            AggKind::Sum => "sum",
            AggKind::Max => "max",
        };
        let items: Vec<(&str, String)> = vec![
            ("preset", self.preset.name().into()),
            ("algorithm", self.algorithm.name().into()),
            ("seeds", seeds.join(",")),
            ("episodes", t.episodes.to_string()),
            ("gamma", fmt_f64(t.gamma)),
            ("n_step", t.n_step.to_string()),
            ("kappa_pi", fmt_f64(t.kappa_pi)),
            ("kappa_v", fmt_f64(t.kappa_v)),
            ("kappa_mu", fmt_f64(t.kappa_mu)),
            ("reward_scale", fmt_f64(t.reward_scale)),
            ("max_grad_norm", fmt_f64(t.max_grad_norm)),
            ("update_every", t.update_every.to_string()),
            ("test_every", t.test_every.to_string()),
            ("test_slots", t.test_slots.to_string()),
            ("embed_dim", m.embed_dim.to_string()),
            ("hidden_dim", m.hidden_dim.to_string()),
            ("mix_hidden", m.mix_hidden.to_string()),
            ("critic_hidden", m.critic_hidden.to_string()),
            ("layers", m.layers.to_string()),
            ("aggregation", agg.into()),
            ("log_std_init", fmt_f64(m.log_std_init)),
            ("oracle_power_levels", self.oracle_power_levels.to_string()),
            ("output_dir", self.output_dir.display().to_string()),
        ];
        for (k, v) in items {
            let _ = writeln!(out, "{k} = {v}");
        }
        out.push_str(&self.network.to_file_string());
        out.push_str(&self.env.to_file_string());
        out
    }

    pub fn make_env(&self, seed: u64) -> Result<Environment> {
        Environment::new(self.network.clone(), self.env.clone(), seed)
    }

    /// Training settings of one learner run.
    pub fn train_config(&self, variant: Variant, seed: u64) -> TrainConfig {
        let mut t = self.train.clone();
        t.model.variant = variant;
        t.seed = seed;
        t
    }

    /// Slots of one test episode.
    pub fn test_slots(&self) -> usize {
        if self.train.test_slots == 0 {
            self.env.episode_len
        } else {
            self.train.test_slots
        }
    }
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse().map_err(|_| Error::Config(format!("`seeds`: bad seed `{p}`"))))
        .collect()
}

/// Outcome of running one algorithm with one seed.
pub struct RunResult {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub curve: Vec<CurveRow>,
    /// Final greedy test episode on the test environment.
    pub final_test: TestMetrics,
    pub test_outcomes: Vec<StepOutcome>,
    pub model: Option<Model>,
    pub oracle: Option<OracleReport>,
}

/// Trains one learner. The final test episode uses the same environment
/// and seed as the periodic tests inside training.
pub fn run_learner(cfg: &ExperimentConfig, variant: Variant, seed: u64, opts: &TrainOptions) -> Result<RunResult> {
    let tc = cfg.train_config(variant, seed);
    let out = train(|s| cfg.make_env(s), &tc, opts)?;
    let mut test_env = cfg.make_env(seed.wrapping_add(1))?;
    let (final_test, test_outcomes) = test_episode_outcomes(&out.model, &mut test_env, seed.wrapping_add(1), cfg.test_slots())?;
    let algorithm = Algorithm::ALL.into_iter().find(|a| a.variant() == Some(variant)).unwrap_or(Algorithm::Gevdac);
    Ok(RunResult { algorithm, seed, curve: out.curve, final_test, test_outcomes, model: Some(out.model), oracle: None })
}

/// Local actors on raw observations with one critic on the global state.
pub fn run_central_critic(cfg: &ExperimentConfig, seed: u64, opts: &TrainOptions) -> Result<RunResult> {
    run_learner(cfg, Variant::CentralCritic, seed, opts)
}

/// What VDAC agents send to their neighbors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Exchange {
    None,
    Raw,
}

pub fn run_vdac(cfg: &ExperimentConfig, seed: u64, exchange: Exchange, opts: &TrainOptions) -> Result<RunResult> {
    let v = match exchange {
        Exchange::None => Variant::Vdac,
        Exchange::Raw => Variant::IeVdac,
    };
    run_learner(cfg, v, seed, opts)
}

/// Equal power split with every RIS element off.
pub fn no_ris_action(net: &NetworkConfig) -> JointAction {
    JointAction { power: PowerAction::equal_split(net), ris: vec![RisAction::all_off(net.ris_elements); net.num_ris] }
}

/// The RIS-free benchmark with the given cluster-head rule. It has nothing
/// to learn; episodes are still run so the curve lines up with the learners.
pub fn run_no_ris_benchmark(cfg: &ExperimentConfig, kind: HeadSelection, seed: u64) -> Result<RunResult> {
    let mut local = cfg.clone();
    local.env.head_selection = kind;
    let mut env = local.make_env(seed)?;
    let mut test_env = local.make_env(seed.wrapping_add(1))?;
    let checksum = env.checksum();
    let action = no_ris_action(&local.network);
    let algorithm = match kind {
        HeadSelection::Csi => Algorithm::NoRisCsi,
        HeadSelection::Qos => Algorithm::NoRisQos,
    };
    let mut curve = Vec::with_capacity(cfg.train.episodes);
    for episode in 0..cfg.train.episodes {
        env.reset()?;
        let mut outcomes = Vec::with_capacity(local.env.episode_len);
        while !env.done() {
            outcomes.push(env.step(action.clone())?);
        }
        let train = TestMetrics::from_outcomes(&outcomes, &env.topology.user_kind, &env.queues().q_max);
        let test = if cfg.train.test_every > 0 && (episode + 1) % cfg.train.test_every == 0 {
            Some(evaluate_policy(&mut test_env, seed.wrapping_add(1), local.test_slots(), |_| Ok(action.clone()))?.0)
        } else {
            None
        };
        curve.push(CurveRow {
            episode,
            algorithm: algorithm.name().to_string(),
            seed,
            train_reward: train.reward,
            train_eta: train.eta,
            test_reward: test.map(|t| t.reward),
            test_eta: test.map(|t| t.eta),
            se_outage: test.map(|t| t.se_outage),
            iot_outage: test.map(|t| t.iot_outage),
            critic_loss: 0.0,
            grad_norm_pi: 0.0,
            grad_norm_v: 0.0,
            exchange_per_slot: 0.0,
            env_checksum: checksum,
        });
    }
    let (final_test, test_outcomes) =
        evaluate_policy(&mut test_env, seed.wrapping_add(1), local.test_slots(), |_| Ok(action.clone()))?;
    Ok(RunResult { algorithm, seed, curve, final_test, test_outcomes, model: None, oracle: None })
}

/// Plays the one-step optimal discrete action on the test episode.
pub fn run_oracle(cfg: &ExperimentConfig, seed: u64) -> Result<RunResult> {
    let mut env = cfg.make_env(seed.wrapping_add(1))?;
    let actions = oracle_actions(&env, cfg.oracle_power_levels)?;
    let checksum = env.checksum();
    let mut best_rewards = Vec::new();
    let mut best_actions = Vec::new();
    let (final_test, test_outcomes) = evaluate_policy(&mut env, seed.wrapping_add(1), cfg.test_slots(), |e| {
        let (i, r) = best_action(e, &actions)?;
        best_rewards.push(r);
        best_actions.push(i);
        Ok(actions[i].clone())
    })?;
    let slots = best_rewards.len();
    let report = OracleReport {
        space_size: actions.len(),
        slots,
        mean_best_reward: best_rewards.iter().sum::<f64>() / slots.max(1) as f64,
        best_rewards,
        best_actions,
    };
    let row = CurveRow {
        episode: 0,
        algorithm: Algorithm::Oracle.name().to_string(),
        seed,
        train_reward: final_test.reward,
        train_eta: final_test.eta,
        test_reward: Some(final_test.reward),
        test_eta: Some(final_test.eta),
        se_outage: Some(final_test.se_outage),
        iot_outage: Some(final_test.iot_outage),
        critic_loss: 0.0,
        grad_norm_pi: 0.0,
        grad_norm_v: 0.0,
        exchange_per_slot: 0.0,
        env_checksum: checksum,
    };
    Ok(RunResult {
        algorithm: Algorithm::Oracle,
        seed,
        curve: vec![row],
        final_test,
        test_outcomes,
        model: None,
        oracle: Some(report),
    })
}

/// Runs `algorithm` with `seed` under `cfg`.
pub fn run_algorithm(cfg: &ExperimentConfig, algorithm: Algorithm, seed: u64, opts: &TrainOptions) -> Result<RunResult> {
    match algorithm {
        Algorithm::NoRisCsi => run_no_ris_benchmark(cfg, HeadSelection::Csi, seed),
        Algorithm::NoRisQos => run_no_ris_benchmark(cfg, HeadSelection::Qos, seed),
        Algorithm::Oracle => run_oracle(cfg, seed),
        a => run_learner(cfg, a.variant().expect("learning algorithm"), seed, opts),
    }
}

/// Base name of the files one run writes.
pub fn run_stem(algorithm: Algorithm, seed: u64) -> String {
    format!("{}-seed{seed}", algorithm.name())
}

/// Runs every seed of `cfg` and writes, per seed, the learning curve
/// (`.curve.csv`), the final test episode (`.steps.jsonl`), the parameters
/// of learners (`.params`) and the oracle report (`.oracle.json`). The
/// resolved configuration goes to `config.txt`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunResult>> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    std::fs::write(cfg.output_dir.join("config.txt"), cfg.to_file_string())?;
    let mut results = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let stem = cfg.output_dir.join(run_stem(cfg.algorithm, seed));
        let curve_path = stem.with_extension("curve.csv");
        let opts = TrainOptions {
            curve_csv: cfg.algorithm.variant().map(|_| curve_path.as_path()),
            failure_checkpoint: Some(stem.with_extension("failed.params")),
        };
        let r = run_algorithm(cfg, cfg.algorithm, seed, &opts)?;
        if cfg.algorithm.variant().is_none() {
            write_curve(&curve_path, &r.curve)?;
        }
        write_step_log(&stem.with_extension("steps.jsonl"), &r.test_outcomes)?;
        if let Some(m) = &r.model {
            m.params.save(stem.with_extension("params"))?;
        }
        if let Some(o) = &r.oracle {
            std::fs::write(stem.with_extension("oracle.json"), serde_json::to_string_pretty(o)?)?;
        }
        log::info!(
            "{} seed {seed}: test reward {:.4}, η {:.4} Gbit/J, SE outage {:.4}",
            cfg.algorithm,
            r.final_test.reward,
            r.final_test.eta,
            r.final_test.se_outage
        );
        results.push(r);
    }
    Ok(results)
}

pub fn write_curve(path: &Path, rows: &[CurveRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_curve(path: &Path) -> Result<Vec<CurveRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<CurveRow>, _>>()?;
    Ok(rows)
}

pub fn write_step_log(path: &Path, outcomes: &[StepOutcome]) -> Result<()> {
    let mut log = SlotLog::create(path)?;
    for o in outcomes {
        log.write(o)?;
    }
    log.flush()
}

/// Rebuilds a learner from saved parameters for `cfg`'s network.
pub fn load_model(cfg: &ExperimentConfig, variant: Variant, checkpoint: &Path) -> Result<Model> {
    let env = cfg.make_env(cfg.seeds[0])?;
    let mut model = Model::new(cfg.train_config(variant, 0).model, ModelDims::from_env(&env), 0)?;
    let saved = ParamStore::load(checkpoint)?;
    model.params.copy_values_from(&saved)?;
    Ok(model)
}

/// Greedy test episode of a saved learner on the test environment of the
/// run with `seed`, so a saved run's final test is reproduced exactly.
pub fn eval_checkpoint(cfg: &ExperimentConfig, variant: Variant, checkpoint: &Path, seed: u64) -> Result<(TestMetrics, Vec<StepOutcome>)> {
    let model = load_model(cfg, variant, checkpoint)?;
    let test_seed = seed.wrapping_add(1);
    let mut env = cfg.make_env(test_seed)?;
    test_episode_outcomes(&model, &mut env, test_seed, cfg.test_slots())
}
