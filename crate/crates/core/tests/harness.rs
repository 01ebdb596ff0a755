mod common;

use std::path::Path;
use std::process::Command;

use ris_noma::config::KeyValues;
use ris_noma::env::JointAction;
use ris_noma::harness::{
    best_action, exhaustive_oracle, no_ris_action, oracle_actions, oracle_space_size, plot_rows_from_curve,
    plot_rows_from_sweep, read_curve, read_sweep, run_experiment, run_no_ris_benchmark, run_oracle, sweep, tune_zeta,
    write_rows, Algorithm, ExperimentConfig, PlotMetric, Preset, SweepAxis, SweepRow,
};
use ris_noma::link::{power_consumption, HeadSelection, PowerAction};
use ris_noma::phy::{RisAction, UserKind};
use ris_noma::NetworkConfig;

fn tiny_cfg(episode_len: usize, episodes: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::with_preset(Preset::Tiny);
    cfg.env.episode_len = episode_len;
    cfg.train.episodes = episodes;
    cfg
}

#[test]
fn config_file_round_trips() {
    let mut cfg = ExperimentConfig::with_preset(Preset::Medium);
    cfg.seeds = vec![3, 1, 4];
    cfg.algorithm = Algorithm::IeVdac;
    cfg.env.zeta = 0.37;
    cfg.network.ris_elements = 7;
    cfg.train.kappa_pi = 1.25e-4;
    cfg.train.model.layers = 2;
    cfg.oracle_power_levels = 3;
    let text = cfg.to_file_string();
    let back = ExperimentConfig::from_key_values(&KeyValues::parse(&text).unwrap()).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.to_file_string(), text);
}

#[test]
fn config_rejects_unknown_and_bad_values() {
    let parse = |s: &str| ExperimentConfig::from_key_values(&KeyValues::parse(s).unwrap());
    assert!(parse("preset = tiny\nepisodez = 3\n").is_err());
    assert!(parse("preset = huge\n").is_err());
    assert!(parse("seeds = 1,x\n").is_err());
    assert!(parse("reward_scale = 0\n").is_err());
    assert!(parse("oracle_power_levels = 0\n").is_err());
    let ok = parse("preset = tiny # desk\nepisodes = 5\n").unwrap();
    assert_eq!((ok.preset, ok.train.episodes), (Preset::Tiny, 5));
    assert_eq!(ok.network, NetworkConfig::tiny());
}

#[test]
fn oracle_space_has_expected_size() {
    let cfg = tiny_cfg(10, 1);
    let env = cfg.make_env(0).unwrap();
    let actions = oracle_actions(&env, 4).unwrap();
    // 4 levels for each of 2 users, 2 bits (on/off and 1 phase bit) on each of 2 elements.
    assert_eq!(oracle_space_size(&env, 4), 4u128.pow(2) * 4u128.pow(2));
    assert_eq!(actions.len() as u128, oracle_space_size(&env, 4));

    let bare = ExperimentConfig { network: NetworkConfig { num_ris: 0, ..NetworkConfig::tiny() }, ..cfg };
    let env = bare.make_env(0).unwrap();
    let one = oracle_actions(&env, 1).unwrap();
    assert_eq!(one.len(), 1);
    assert_eq!(best_action(&env, &one).unwrap().0, 0);
    assert!(oracle_actions(&ExperimentConfig::with_preset(Preset::Medium).make_env(0).unwrap(), 4).is_err());
}

/// At every state visited the oracle's reward dominates each action it
/// searched, including the RIS-free equal split.
#[test]
fn oracle_dominates_its_search_space() {
    let cfg = tiny_cfg(20, 1);
    let mut env = cfg.make_env(5).unwrap();
    let actions = oracle_actions(&env, cfg.oracle_power_levels).unwrap();
    let benchmark = no_ris_action(&cfg.network);
    for _ in 0..20 {
        let (i, best) = best_action(&env, &actions).unwrap();
        for a in &actions {
            assert!(env.evaluate(a).unwrap().reward <= best);
        }
        let b = env.evaluate(&env.sanitize(benchmark.clone()).unwrap()).unwrap().reward;
        assert!(b <= best + 1e-12 * best.abs(), "{b} > {best}");
        env.step(actions[i].clone()).unwrap();
    }
}

#[test]
fn oracle_runs_reproduce() {
    let cfg = tiny_cfg(15, 1);
    let a = run_oracle(&cfg, 2).unwrap();
    let b = run_oracle(&cfg, 2).unwrap();
    assert_eq!(a.test_outcomes, b.test_outcomes);
    let (ra, rb) = (a.oracle.unwrap(), b.oracle.unwrap());
    assert_eq!(ra, rb);
    assert_eq!(ra.slots, 15);
    let mut env = cfg.make_env(2).unwrap();
    let again = exhaustive_oracle(&mut env, cfg.oracle_power_levels, 15, 3).unwrap();
    assert_eq!(again.best_rewards.len(), 15);
}

#[test]
fn no_ris_benchmark_switches_every_element_off() {
    let mut cfg = ExperimentConfig::with_preset(Preset::Medium);
    cfg.env.episode_len = 20;
    cfg.train.episodes = 2;
    let r = run_no_ris_benchmark(&cfg, HeadSelection::Csi, 0).unwrap();
    assert_eq!(r.curve.len(), 2);
    let net = &cfg.network;
    let off = vec![RisAction::all_off(net.ris_elements); net.num_ris];
    let expected = power_consumption(&PowerAction::equal_split(net).alloc, &off, net);
    for o in &r.test_outcomes {
        assert!((o.power_w - expected).abs() <= 1e-12 * expected);
    }
    let on = vec![RisAction { on_off: vec![true; net.ris_elements], phase_index: vec![0; net.ris_elements] }; net.num_ris];
    assert!(power_consumption(&PowerAction::equal_split(net).alloc, &on, net) > expected);
}

#[test]
fn qos_heads_are_se_users() {
    let mut cfg = ExperimentConfig::with_preset(Preset::Medium);
    cfg.env.episode_len = 10;
    cfg.train.episodes = 0;
    let r = run_no_ris_benchmark(&cfg, HeadSelection::Qos, 1).unwrap();
    let kinds = cfg.make_env(2).unwrap().topology.user_kind.clone();
    for o in &r.test_outcomes {
        for c in o.plan.clusters.iter().flatten() {
            assert_eq!(kinds[c.head], UserKind::Se);
        }
    }
}

/// Reserving the cluster heads for SE users protects their queues when the
/// strongest channels belong to IoT devices.
#[test]
fn qos_heads_protect_se_reliability() {
    let mut cfg = ExperimentConfig::with_preset(Preset::Medium);
    cfg.train.episodes = 0;
    let (mut qos, mut csi) = (0.0, 0.0);
    for seed in 0..3 {
        qos += run_no_ris_benchmark(&cfg, HeadSelection::Qos, seed).unwrap().final_test.se_outage;
        csi += run_no_ris_benchmark(&cfg, HeadSelection::Csi, seed).unwrap().final_test.se_outage;
    }
    assert!(qos < csi, "qos {qos} csi {csi}");
}

#[test]
fn users_axis_grows_only_iot() {
    let base = ExperimentConfig::with_preset(Preset::Medium);
    let cfg = SweepAxis::Users.apply(&base, 20.0).unwrap();
    assert_eq!(cfg.network.total_users(), 20);
    assert_eq!(cfg.network.se_users_per_ap, base.network.se_users_per_ap);
    assert_eq!(cfg.network.iot_users_per_ap, 8);
    assert!(SweepAxis::Users.apply(&base, 21.0).is_err());
    assert!(SweepAxis::Users.apply(&base, 4.0).is_err());
    assert!(SweepAxis::Antennas.apply(&base, 32.5).is_err());
    assert_eq!(SweepAxis::Antennas.apply(&base, 64.0).unwrap().network.antennas, 64);
    assert_eq!(SweepAxis::Ris.apply(&base, 4.0).unwrap().network.num_ris, 4);
    assert_eq!(SweepAxis::Zeta.apply(&base, 0.5).unwrap().env.zeta, 0.5);
    assert_eq!("K".parse::<SweepAxis>().unwrap(), SweepAxis::Users);
    assert!("speed".parse::<SweepAxis>().is_err());
}

fn row(axis: &str, value: f64, alg: Algorithm, seed: u64, eta: f64, se_outage: f64) -> SweepRow {
    SweepRow {
        axis: axis.into(),
        value,
        algorithm: alg.name().into(),
        seed,
        reward: 0.0,
        eta,
        sum_rate_gbps: 0.0,
        power_w: 1.0,
        se_outage,
        iot_outage: se_outage / 2.0,
        se_queue_ratio: 0.0,
        iot_queue_ratio: 0.0,
        exchange_per_slot: 0.0,
        env_checksum: 0,
    }
}

#[test]
fn plot_rows_cover_each_run() {
    let mut rows = Vec::new();
    for k in [16.0, 20.0, 24.0] {
        for a in [Algorithm::Gevdac, Algorithm::Vdac] {
            for s in 0..2 {
                rows.push(row("users", k, a, s, k / 10.0, 0.1));
            }
        }
    }
    rows.push(row("antennas", 64.0, Algorithm::Gevdac, 0, 1.0, 0.0));
    let ee = plot_rows_from_sweep(PlotMetric::EeVsK, &rows);
    assert_eq!(ee.len(), 12);
    assert!(ee.iter().all(|p| p.metric == "ee-vs-K" && p.y == p.x / 10.0));
    let rel = plot_rows_from_sweep(PlotMetric::ReliabilityVsK, &rows);
    assert_eq!(rel.len(), 24);
    assert!(rel.iter().any(|p| p.series == "iot" && (p.y - 0.95).abs() < 1e-15));
    assert_eq!(plot_rows_from_sweep(PlotMetric::EeVsNa, &rows).len(), 1);
    assert!(plot_rows_from_sweep(PlotMetric::RewardVsStep, &rows).is_empty());
    assert_eq!("EE-VS-k".parse::<PlotMetric>().unwrap(), PlotMetric::EeVsK);

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("sweep.csv");
    write_rows(&p, &rows).unwrap();
    assert_eq!(read_sweep(&p).unwrap(), rows);
}

#[test]
fn zeta_tuning_picks_most_efficient_feasible_value() {
    let g = Algorithm::Gevdac;
    let rows = vec![
        row("zeta", 0.5, g, 0, 1.0, 0.00),
        row("zeta", 0.5, g, 1, 1.2, 0.02),
        row("zeta", 1.0, g, 0, 2.0, 0.04),
        row("zeta", 1.0, g, 1, 2.2, 0.04),
        row("zeta", 2.0, g, 0, 5.0, 0.30),
        row("zeta", 2.0, Algorithm::Vdac, 0, 9.0, 0.00),
    ];
    assert_eq!(tune_zeta(&rows, g, 0.05), Some(1.0));
    assert_eq!(tune_zeta(&rows, g, 0.01), Some(0.5));
    assert_eq!(tune_zeta(&rows, g, 0.0), None);
    assert_eq!(tune_zeta(&rows, Algorithm::Vdac, 0.0), Some(2.0));
}

#[test]
fn sweep_runs_every_combination_in_order() {
    let mut cfg = tiny_cfg(5, 1);
    cfg.seeds = vec![0, 1];
    let algs = [Algorithm::Gevdac, Algorithm::NoRisQos];
    let rows = sweep(&cfg, SweepAxis::Zeta, &[0.5, 2.0], &algs).unwrap();
    assert_eq!(rows.len(), 8);
    let keys: Vec<(f64, String, u64)> = rows.iter().map(|r| (r.value, r.algorithm.clone(), r.seed)).collect();
    assert_eq!(keys[0], (0.5, "gevdac".into(), 0));
    assert_eq!(keys[3], (0.5, "no-ris-qos".into(), 1));
    assert_eq!(keys[4], (2.0, "gevdac".into(), 0));
    // Same seed, same network regardless of the algorithm.
    assert_eq!(rows[0].env_checksum, rows[2].env_checksum);
    assert_eq!(rows, sweep(&cfg, SweepAxis::Zeta, &[0.5, 2.0], &algs).unwrap());
}

#[test]
fn experiment_writes_its_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_cfg(8, 3);
    cfg.output_dir = dir.path().to_path_buf();
    cfg.seeds = vec![7];
    let r = run_experiment(&cfg).unwrap().remove(0);
    let stem = dir.path().join("gevdac-seed7");
    let curve = read_curve(&stem.with_extension("curve.csv")).unwrap();
    assert_eq!(curve, r.curve);
    let points = plot_rows_from_curve(&curve, 8);
    assert_eq!(points.iter().map(|p| p.x).collect::<Vec<_>>(), vec![8.0, 16.0, 24.0]);
    let saved = ExperimentConfig::from_file(dir.path().join("config.txt")).unwrap();
    assert_eq!(saved, cfg);
    let (m, outcomes) =
        ris_noma::harness::eval_checkpoint(&cfg, ris_noma::gevdac::Variant::Gevdac, &stem.with_extension("params"), 7)
            .unwrap();
    assert_eq!(m, r.final_test);
    assert_eq!(outcomes, r.test_outcomes);

    cfg.algorithm = Algorithm::Oracle;
    run_experiment(&cfg).unwrap();
    assert!(dir.path().join("oracle-seed7.oracle.json").exists());
}

fn cli() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ris-noma"));
    c.env("RUST_LOG", "warn").env_remove("RIS_NOMA_CONFIG");
    c
}

fn write_desk_config(dir: &Path) -> std::path::PathBuf {
    let p = dir.join("desk.txt");
    std::fs::write(&p, "preset = tiny\nepisodes = 2\nepisode_len = 6\nseeds = 3\n").unwrap();
    p
}

#[test]
fn cli_train_is_deterministic_and_eval_replays() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write_desk_config(dir.path());
    for run in ["a", "b"] {
        let out = cli()
            .args(["train", "--config"])
            .arg(&conf)
            .arg("--out")
            .arg(dir.path().join(run))
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for file in ["gevdac-seed3.curve.csv", "gevdac-seed3.steps.jsonl", "gevdac-seed3.params"] {
        let a = std::fs::read(dir.path().join("a").join(file)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(file)).unwrap();
        assert!(a == b, "{file} differs between identical runs");
    }
    let log = dir.path().join("eval.jsonl");
    let out = cli()
        .args(["eval", "--config"])
        .arg(&conf)
        .arg("--checkpoint")
        .arg(dir.path().join("a/gevdac-seed3.params"))
        .arg("--out")
        .arg(&log)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read(&log).unwrap(), std::fs::read(dir.path().join("a/gevdac-seed3.steps.jsonl")).unwrap());
}

#[test]
fn cli_rejects_bad_input() {
    let bad_flag = cli().args(["train", "--episodez", "3"]).output().unwrap();
    assert!(!bad_flag.status.success());
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("bad.txt");
    std::fs::write(&conf, "preset = tiny\nfrobnicate = 1\n").unwrap();
    let out = cli().args(["train", "--config"]).arg(&conf).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    let out = cli().args(["eval", "--preset", "tiny", "--algorithm", "oracle", "--checkpoint", "x"]).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn cli_oracle_and_plot_data() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write_desk_config(dir.path());
    let report = dir.path().join("oracle.json");
    let out = cli().args(["oracle", "--tiny", "--config"]).arg(&conf).arg("--out").arg(&report).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(json["space_size"], 256);
    assert_eq!(json["slots"], 6);

    let rows: Vec<SweepRow> = [16.0, 20.0]
        .iter()
        .flat_map(|&k| (0..3).map(move |s| row("users", k, Algorithm::Gevdac, s, 1.0, 0.0)))
        .collect();
    let input = dir.path().join("sweep.csv");
    write_rows(&input, &rows).unwrap();
    let plot = dir.path().join("plot.csv");
    let out = cli()
        .args(["plot-data", "--metric", "ee-vs-K", "--input"])
        .arg(&input)
        .arg("--out")
        .arg(&plot)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&plot).unwrap();
    assert_eq!(text.lines().count(), 1 + 6);
}

#[test]
fn joint_action_shapes_of_benchmark() {
    let net = NetworkConfig::medium();
    let JointAction { power, ris } = no_ris_action(&net);
    power.validate(&net).unwrap();
    assert_eq!(ris.len(), net.num_ris);
    assert!(ris.iter().all(|r| r.active_elements() == 0));
}
