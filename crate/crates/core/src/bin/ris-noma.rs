use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ris_noma::gevdac::Variant;
use ris_noma::harness::{
    eval_checkpoint, plot_rows_from_curve, plot_rows_from_sweep, read_curve, read_sweep, run_experiment, run_oracle,
    sweep, write_rows, write_step_log, Algorithm, ExperimentConfig, PlotMetric, Preset, SweepAxis,
};
use ris_noma::Result;

/// Simulator, learners and benchmarks for RIS-aided THz MIMO-NOMA networks.
#[derive(Parser)]
#[command(name = "ris-noma", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` experiment file.
    #[arg(long, env = "RIS_NOMA_CONFIG")]
    config: Option<PathBuf>,
    /// Base network when no config file sets one.
    #[arg(long)]
    preset: Option<Preset>,
    /// Replaces the configured seeds; repeat for several.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    #[arg(long)]
    episodes: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the configured algorithm for every seed.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        algorithm: Option<Algorithm>,
        /// Output directory (overrides `output_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Greedy test episode of saved parameters.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "gevdac")]
        algorithm: Algorithm,
        /// JSONL step log of the episode.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exhaustive one-step oracle.
    Oracle {
        #[command(flatten)]
        common: Common,
        /// Use the desk-scale oracle network.
        #[arg(long)]
        tiny: bool,
        #[arg(long)]
        levels: Option<usize>,
        /// JSON report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Final test metrics over a grid of one parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated; defaults to the axis' standard grid.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "gevdac")]
        algorithms: Vec<Algorithm>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tidy CSV for plotting, from a sweep or learning curves.
    PlotData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        metric: PlotMetric,
        /// Sweep CSV, or curve CSVs for reward-vs-step. Without input the
        /// needed sweep or training runs are executed.
        #[arg(long)]
        input: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "gevdac")]
        algorithms: Vec<Algorithm>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::with_preset(common.preset.unwrap_or(Preset::Default)),
    };
    if common.config.is_some() {
        if let Some(p) = common.preset {
            log::warn!("--preset {p:?} ignored: the config file decides the network");
        }
    }
    if !common.seeds.is_empty() {
        cfg.seeds = common.seeds.clone();
    }
    if let Some(e) = common.episodes {
        cfg.train.episodes = e;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn learner(a: Algorithm) -> Result<Variant> {
    a.variant()
        .ok_or_else(|| ris_noma::Error::InvalidArgument(format!("{a} has no parameters to evaluate")))
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Train { common, algorithm, out } => {
            let mut cfg = load(&common)?;
            if let Some(a) = algorithm {
                cfg.algorithm = a;
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            let env = cfg.make_env(cfg.seeds[0])?;
            log::info!("environment checksum {:016x}", env.checksum());
            for r in run_experiment(&cfg)? {
                println!(
                    "{} seed {}: reward {:.6} eta {:.6} se_outage {:.4} iot_outage {:.4}",
                    r.algorithm, r.seed, r.final_test.reward, r.final_test.eta, r.final_test.se_outage, r.final_test.iot_outage
                );
            }
        }
        Cmd::Eval { common, checkpoint, algorithm, out } => {
            let cfg = load(&common)?;
            let seed = cfg.seeds[0];
            let (m, outcomes) = eval_checkpoint(&cfg, learner(algorithm)?, &checkpoint, seed)?;
            if let Some(p) = out {
                write_step_log(&p, &outcomes)?;
            }
            println!("{}", serde_json::to_string(&m)?);
        }
        Cmd::Oracle { common, tiny, levels, out } => {
            let mut cfg = load(&common)?;
            if tiny {
                cfg.network = Preset::Tiny.network();
            }
            if let Some(l) = levels {
                cfg.oracle_power_levels = l;
            }
            let start = std::time::Instant::now();
            let r = run_oracle(&cfg, cfg.seeds[0])?;
            let report = r.oracle.expect("oracle report");
            println!(
                "{} joint actions, {} slots, mean best one-step reward {:.6} ({:.2?})",
                report.space_size,
                report.slots,
                report.mean_best_reward,
                start.elapsed()
            );
            if let Some(p) = out {
                std::fs::write(p, serde_json::to_string_pretty(&report)?)?;
            }
        }
        Cmd::Sweep { common, axis, values, algorithms, out } => {
            let cfg = load(&common)?;
            let values = if values.is_empty() { axis.default_values() } else { values };
            let rows = sweep(&cfg, axis, &values, &algorithms)?;
            write_rows(&out, &rows)?;
            println!("{} rows written to {}", rows.len(), out.display());
        }
        Cmd::PlotData { common, metric, input, algorithms, out } => {
            let cfg = load(&common)?;
            let rows = match metric.axis() {
                Some(axis) => {
                    let sweep_rows = match input.first() {
                        Some(p) => read_sweep(p)?,
                        None => sweep(&cfg, axis, &axis.default_values(), &algorithms)?,
                    };
                    plot_rows_from_sweep(metric, &sweep_rows)
                }
                None => {
                    let mut rows = Vec::new();
                    if input.is_empty() {
                        for a in &algorithms {
                            let mut c = cfg.clone();
                            c.algorithm = *a;
                            for r in run_experiment(&c)? {
                                rows.extend(plot_rows_from_curve(&r.curve, cfg.env.episode_len));
                            }
                        }
                    } else {
                        for p in &input {
                            rows.extend(plot_rows_from_curve(&read_curve(p)?, cfg.env.episode_len));
                        }
                    }
                    rows
                }
            };
            write_rows(&out, &rows)?;
            println!("{} rows written to {}", rows.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
