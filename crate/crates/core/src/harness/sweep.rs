use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_algorithm, Algorithm, ExperimentConfig};
use crate::error::{Error, Result};
use crate::gevdac::{CurveRow, TrainOptions};

/// The quantity a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    /// Total users K, spread evenly over the APs; the SE count per AP is kept.
    Users,
    /// Antennas per AP.
    Antennas,
    /// Number of RISs.
    Ris,
    /// Energy-efficiency weight of the reward.
    Zeta,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Users => "users",
            SweepAxis::Antennas => "antennas",
            SweepAxis::Ris => "ris",
            SweepAxis::Zeta => "zeta",
        }
    }

    pub fn default_values(self) -> Vec<f64> {
        match self {
            SweepAxis::Users => vec![16.0, 20.0, 24.0],
            SweepAxis::Antennas => vec![32.0, 64.0, 128.0],
            SweepAxis::Ris => vec![1.0, 2.0, 4.0],
            SweepAxis::Zeta => vec![0.25, 0.5, 1.0, 2.0, 4.0],
        }
    }

    /// Sets the axis to `value` in a copy of `base`.
    pub fn apply(self, base: &ExperimentConfig, value: f64) -> Result<ExperimentConfig> {
        let mut cfg = base.clone();
        let count = || -> Result<usize> {
            if value >= 0.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(Error::Config(format!("{} sweep needs whole numbers, got {value}", self.name())))
            }
        };
        match self {
            SweepAxis::Users => {
                let k = count()?;
                let m = cfg.network.num_aps;
                if k == 0 || k % m != 0 {
                    return Err(Error::Config(format!("{k} users cannot be split evenly over {m} APs")));
                }
                // SE users head the clusters, one per RF chain, so only the
                // IoT population grows.
                let per_ap = k / m;
                let se = base.network.se_users_per_ap;
                if per_ap <= se {
                    return Err(Error::Config(format!("{k} users leave no IoT users beside {se} SE users per AP")));
                }
                cfg.network.iot_users_per_ap = per_ap - se;
            }
            SweepAxis::Antennas => cfg.network.antennas = count()?,
            SweepAxis::Ris => cfg.network.num_ris = count()?,
            SweepAxis::Zeta => cfg.env.zeta = value,
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "users" | "k" | "K" => Ok(SweepAxis::Users),
            "antennas" | "na" | "N_A" => Ok(SweepAxis::Antennas),
            "ris" | "j" | "J" => Ok(SweepAxis::Ris),
            "zeta" => Ok(SweepAxis::Zeta),
            _ => Err(Error::Config(format!("unknown sweep axis `{s}`"))),
        }
    }
}

/// Final test metrics of one (axis value, algorithm, seed) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: f64,
    pub algorithm: String,
    pub seed: u64,
    pub reward: f64,
    pub eta: f64,
    pub sum_rate_gbps: f64,
    pub power_w: f64,
    pub se_outage: f64,
    pub iot_outage: f64,
    pub se_queue_ratio: f64,
    pub iot_queue_ratio: f64,
    pub exchange_per_slot: f64,
    pub env_checksum: u64,
}

/// Runs every (value, algorithm, seed) combination. Runs are independent
/// and execute in parallel; the output order is value, then algorithm,
/// then seed.
pub fn sweep(base: &ExperimentConfig, axis: SweepAxis, values: &[f64], algorithms: &[Algorithm]) -> Result<Vec<SweepRow>> {
    let mut jobs = Vec::new();
    for &v in values {
        let cfg = axis.apply(base, v)?;
        for &a in algorithms {
            for &seed in &base.seeds {
                jobs.push((cfg.clone(), v, a, seed));
            }
        }
    }
    jobs.par_iter()
        .map(|(cfg, v, a, seed)| {
            let opts = TrainOptions { curve_csv: None, failure_checkpoint: None };
            let r = run_algorithm(cfg, *a, *seed, &opts)?;
            let t = r.final_test;
            let last = r.curve.last();
            log::info!("{axis} = {v}: {a} seed {seed} reward {:.4}", t.reward);
            Ok(SweepRow {
                axis: axis.name().to_string(),
                value: *v,
                algorithm: a.name().to_string(),
                seed: *seed,
                reward: t.reward,
                eta: t.eta,
                sum_rate_gbps: t.sum_rate_gbps,
                power_w: t.power_w,
                se_outage: t.se_outage,
                iot_outage: t.iot_outage,
                se_queue_ratio: t.se_queue_ratio,
                iot_queue_ratio: t.iot_queue_ratio,
                exchange_per_slot: last.map_or(0.0, |c| c.exchange_per_slot),
                env_checksum: last.map_or(0, |c| c.env_checksum),
            })
        })
        .collect()
}

/// The ζ with the highest mean η among values whose mean SE outage is at
/// most `target`, using `algorithm`'s rows of a ζ sweep.
pub fn tune_zeta(rows: &[SweepRow], algorithm: Algorithm, target: f64) -> Option<f64> {
    let mut values: Vec<f64> = rows.iter().filter(|r| r.axis == "zeta").map(|r| r.value).collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let mut best: Option<(f64, f64)> = None;
    for v in values {
        let sel: Vec<&SweepRow> = rows
            .iter()
            .filter(|r| r.axis == "zeta" && r.value == v && r.algorithm == algorithm.name())
            .collect();
        if sel.is_empty() {
            continue;
        }
        let n = sel.len() as f64;
        let outage = sel.iter().map(|r| r.se_outage).sum::<f64>() / n;
        let eta = sel.iter().map(|r| r.eta).sum::<f64>() / n;
        if outage <= target && best.is_none_or(|(_, e)| eta > e) {
            best = Some((v, eta));
        }
    }
    best.map(|(v, _)| v)
}

/// Plot series derived from sweeps and learning curves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlotMetric {
    RewardVsStep,
    EeVsK,
    ReliabilityVsK,
    EeVsNa,
    ReliabilityVsNa,
}

impl PlotMetric {
    pub fn name(self) -> &'static str {
        match self {
            PlotMetric::RewardVsStep => "reward-vs-step",
            PlotMetric::EeVsK => "ee-vs-K",
            PlotMetric::ReliabilityVsK => "reliability-vs-K",
            PlotMetric::EeVsNa => "ee-vs-NA",
            PlotMetric::ReliabilityVsNa => "reliability-vs-NA",
        }
    }

    /// The sweep a metric is read from, if any.
    pub fn axis(self) -> Option<SweepAxis> {
        match self {
            PlotMetric::RewardVsStep => None,
            PlotMetric::EeVsK | PlotMetric::ReliabilityVsK => Some(SweepAxis::Users),
            PlotMetric::EeVsNa | PlotMetric::ReliabilityVsNa => Some(SweepAxis::Antennas),
        }
    }
}

impl FromStr for PlotMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            PlotMetric::RewardVsStep,
            PlotMetric::EeVsK,
            PlotMetric::ReliabilityVsK,
            PlotMetric::EeVsNa,
            PlotMetric::ReliabilityVsNa,
        ]
        .into_iter()
        .find(|m| m.name().eq_ignore_ascii_case(s))
        .ok_or_else(|| Error::Config(format!("unknown plot metric `{s}`")))
    }
}

/// One tidy plot point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub metric: String,
    pub x: f64,
    pub algorithm: String,
    pub seed: u64,
    /// `all`, or the user kind for reliability.
    pub series: String,
    pub y: f64,
}

/// Energy-efficiency rows give one point per (x, algorithm, seed);
/// reliability rows give one per user kind as well.
pub fn plot_rows_from_sweep(metric: PlotMetric, rows: &[SweepRow]) -> Vec<PlotRow> {
    let Some(axis) = metric.axis() else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for r in rows.iter().filter(|r| r.axis == axis.name()) {
        let point = |series: &str, y: f64| PlotRow {
            metric: metric.name().to_string(),
            x: r.value,
            algorithm: r.algorithm.clone(),
            seed: r.seed,
            series: series.to_string(),
            y,
        };
        match metric {
            PlotMetric::EeVsK | PlotMetric::EeVsNa => out.push(point("all", r.eta)),
            _ => {
                out.push(point("se", 1.0 - r.se_outage));
                out.push(point("iot", 1.0 - r.iot_outage));
            }
        }
    }
    out
}

/// Test reward against training steps; `episode_len` converts episodes to steps.
pub fn plot_rows_from_curve(rows: &[CurveRow], episode_len: usize) -> Vec<PlotRow> {
    rows.iter()
        .filter_map(|r| {
            r.test_reward.map(|y| PlotRow {
                metric: PlotMetric::RewardVsStep.name().to_string(),
                x: ((r.episode + 1) * episode_len) as f64,
                algorithm: r.algorithm.clone(),
                seed: r.seed,
                series: "test".to_string(),
                y,
            })
        })
        .collect()
}

pub fn write_rows<T: Serialize>(path: &std::path::Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sweep(path: &std::path::Path) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<SweepRow>, _>>()?;
    Ok(rows)
}
