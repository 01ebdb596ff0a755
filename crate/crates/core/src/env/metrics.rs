use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::StepOutcome;
use crate::error::Result;

/// One JSON line per slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotMetrics {
    pub t: usize,
    pub reward: f64,
    pub eta: f64,
    pub delta: f64,
    pub rates_gbps: Vec<f64>,
    pub q: Vec<f64>,
    pub y: Vec<f64>,
    pub outage: Vec<bool>,
}

impl From<&StepOutcome> for SlotMetrics {
    fn from(o: &StepOutcome) -> Self {
        Self {
            t: o.t,
            reward: o.reward,
            eta: o.eta,
            delta: o.delta,
            rates_gbps: o.rates_gbps.clone(),
            q: o.q_after.clone(),
            y: o.y_after.clone(),
            outage: o.outage.clone(),
        }
    }
}

pub struct SlotLog {
    out: BufWriter<File>,
}

impl SlotLog {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self { out: BufWriter::new(File::create(path)?) })
    }

    pub fn write(&mut self, outcome: &StepOutcome) -> Result<()> {
        serde_json::to_writer(&mut self.out, &SlotMetrics::from(outcome))?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

/// Per-episode averages.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub episode: usize,
    pub slots: usize,
    pub mean_reward: f64,
    pub mean_eta: f64,
    pub mean_delta: f64,
    pub mean_rate_gbps: f64,
    pub mean_power_w: f64,
    pub mean_queue: f64,
    /// Fraction of (slot, user) pairs in outage.
    pub outage_rate: f64,
    pub sic_fail_rate: f64,
}

impl EpisodeSummary {
    pub fn from_outcomes(episode: usize, outcomes: &[StepOutcome]) -> Self {
        let n = outcomes.len().max(1) as f64;
        let avg = |f: &dyn Fn(&StepOutcome) -> f64| outcomes.iter().map(f).sum::<f64>() / n;
        let frac = |v: &[bool]| v.iter().filter(|&&b| b).count() as f64 / v.len().max(1) as f64;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
        Self {
            episode,
            slots: outcomes.len(),
            mean_reward: avg(&|o| o.reward),
            mean_eta: avg(&|o| o.eta),
            mean_delta: avg(&|o| o.delta),
            mean_rate_gbps: avg(&|o| mean(&o.rates_gbps)),
            mean_power_w: avg(&|o| o.power_w),
            mean_queue: avg(&|o| mean(&o.q_after)),
            outage_rate: avg(&|o| frac(&o.outage)),
            sic_fail_rate: avg(&|o| frac(&o.sic_fail)),
        }
    }
}

pub fn write_episode_csv(path: impl AsRef<Path>, rows: &[EpisodeSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_episode_csv(path: impl AsRef<Path>) -> Result<Vec<EpisodeSummary>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        rows.push(rec?);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::NetworkConfig;
    use crate::env::{EnvConfig, Environment, JointAction};

    #[test]
    fn slot_log_and_summary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let net = NetworkConfig::tiny();
        let mut env = Environment::new(net.clone(), EnvConfig::default(), 9).unwrap();
        let mut log = SlotLog::create(dir.path().join("slots.jsonl")).unwrap();
        let mut outcomes = Vec::new();
        for _ in 0..5 {
            let mut a = JointAction::idle(&net);
            a.power.alloc.iter_mut().for_each(|x| *x = 0.5);
            let o = env.step(a).unwrap();
            log.write(&o).unwrap();
            outcomes.push(o);
        }
        log.flush().unwrap();
        let text = std::fs::read_to_string(dir.path().join("slots.jsonl")).unwrap();
        let lines: Vec<SlotMetrics> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[4], SlotMetrics::from(&outcomes[4]));

        let s = EpisodeSummary::from_outcomes(0, &outcomes);
        let p = dir.path().join("episodes.csv");
        write_episode_csv(&p, &[s.clone()]).unwrap();
        let back = read_episode_csv(&p).unwrap();
        assert_eq!(back.len(), 1);
        assert!((back[0].mean_reward - s.mean_reward).abs() <= 1e-9 * s.mean_reward.abs().max(1.0));
    }
}
