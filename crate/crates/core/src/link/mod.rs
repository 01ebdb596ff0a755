//! Per-slot link-layer derivations: clustering, hybrid beamforming, NOMA
//! decoding, SINRs, rates and power.

mod beamforming;
mod cluster;

pub use beamforming::*;
pub use cluster::*;

use serde::{Deserialize, Serialize};

use crate::config::NetworkConfig;
use crate::error::{Error, Result};
use crate::phy::{CMat, CRow, RisAction, Topology, UserKind};

/// How cluster heads are picked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadSelection {
    /// SE users head the clusters.
    Qos,
    /// The strongest channels head the clusters regardless of user kind.
    Csi,
}

/// Transmit power per user (W), indexed by global user id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerAction {
    pub alloc: Vec<f64>,
}

impl PowerAction {
    pub fn zeros(users: usize) -> Self {
        Self { alloc: vec![0.0; users] }
    }

    /// `p_max` split evenly over the users of each AP.
    pub fn equal_split(config: &NetworkConfig) -> Self {
        let k = config.users_per_ap();
        Self { alloc: vec![config.max_tx_power_w / k as f64; config.total_users()] }
    }

    /// Clamps negatives to zero and scales each AP's allocation down onto
    /// `Σα ≤ p_max`.
    pub fn project(mut self, config: &NetworkConfig) -> Result<Self> {
        self.check_len(config)?;
        if self.alloc.iter().any(|a| a.is_nan()) {
            return Err(Error::Action("NaN power allocation".into()));
        }
        let k = config.users_per_ap();
        for block in self.alloc.chunks_mut(k) {
            for a in block.iter_mut() {
                *a = a.max(0.0);
            }
            let total: f64 = block.iter().sum();
            if total > config.max_tx_power_w {
                let s = config.max_tx_power_w / total;
                for a in block.iter_mut() {
                    *a *= s;
                }
            }
        }
        Ok(self)
    }

    pub fn validate(&self, config: &NetworkConfig) -> Result<()> {
        self.check_len(config)?;
        for (m, block) in self.alloc.chunks(config.users_per_ap()).enumerate() {
            if block.iter().any(|a| !(*a >= 0.0)) {
                return Err(Error::Action(format!("AP {m}: negative or NaN power")));
            }
            let total: f64 = block.iter().sum();
            if total > config.max_tx_power_w * (1.0 + 1e-12) {
                return Err(Error::Action(format!("AP {m}: total power {total} W above the budget")));
            }
        }
        Ok(())
    }

    fn check_len(&self, config: &NetworkConfig) -> Result<()> {
        if self.alloc.len() != config.total_users() {
            return Err(Error::Action(format!(
                "{} power entries for {} users",
                self.alloc.len(),
                config.total_users()
            )));
        }
        Ok(())
    }
}

/// Beamforming and clustering of one AP.
#[derive(Debug, Clone, PartialEq)]
pub struct ApPlan {
    /// Members of each cluster are stored in decode order.
    pub clusters: Vec<Cluster>,
    pub analog: CMat,
    pub digital: Vec<CVec>,
    /// `V w_n` per cluster.
    pub beams: Vec<CVec>,
    pub regularized: bool,
}

/// Where a user sits in the plan. Position 0 is the head; position `k ≥ 1`
/// is the k-th member in decode order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserSlot {
    pub ap: usize,
    pub cluster: usize,
    pub position: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkLayerPlan {
    pub aps: Vec<ApPlan>,
    pub slots: Vec<UserSlot>,
}

impl LinkLayerPlan {
    /// Cluster power `p_n^m = Σ_k α_{nk}^m`, `[ap][cluster]`.
    pub fn cluster_power(&self, alloc: &[f64]) -> Vec<Vec<f64>> {
        self.aps
            .iter()
            .map(|ap| {
                ap.clusters
                    .iter()
                    .map(|c| alloc[c.head] + c.members.iter().map(|&u| alloc[u]).sum::<f64>())
                    .collect()
            })
            .collect()
    }

    pub fn snapshot(&self) -> PlanSnapshot {
        PlanSnapshot {
            clusters: self.aps.iter().map(|a| a.clusters.clone()).collect(),
            regularized: self.aps.iter().map(|a| a.regularized).collect(),
        }
    }
}

/// Serializable summary of a plan for the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSnapshot {
    pub clusters: Vec<Vec<Cluster>>,
    pub regularized: Vec<bool>,
}

/// Derives clustering, analog and ZF beamformers and decode order for
/// every AP. `channels[ap][user]` are the effective channels.
pub fn build_plan(
    channels: &[Vec<CRow>],
    topology: &Topology,
    config: &NetworkConfig,
    heads: HeadSelection,
) -> Result<LinkLayerPlan> {
    if channels.len() != topology.num_aps() || channels.iter().any(|r| r.len() != topology.num_users()) {
        return Err(Error::Dimension("effective channels do not match the topology".into()));
    }
    let n_sub = config.antennas_per_subarray();
    let mut aps = Vec::with_capacity(topology.num_aps());
    let mut slots = vec![UserSlot { ap: 0, cluster: 0, position: 0 }; topology.num_users()];
    for m in 0..topology.num_aps() {
        let own = &channels[m];
        let users: Vec<usize> = topology.users_of_ap(m).collect();
        let head_ids: Vec<usize> = match heads {
            HeadSelection::Qos => users.iter().copied().filter(|&u| topology.user_kind[u] == UserKind::Se).collect(),
            HeadSelection::Csi => strongest_users(own, &users, config.rf_chains),
        };
        let others: Vec<usize> = users.iter().copied().filter(|u| !head_ids.contains(u)).collect();
        let max_size = config.effective_max_cluster_size().max(others.len().div_ceil(head_ids.len().max(1)) + 1);
        let mut clusters = cluster_users(own, &head_ids, &others, config.rf_chains, max_size)?;

        let head_channels: Vec<CRow> = clusters.iter().map(|c| own[c.head].clone()).collect();
        let analog = analog_beamformer(&head_channels, n_sub, config.analog_phase_bits)?;
        let centers: Vec<CRow> = clusters
            .iter()
            .map(|c| {
                let mut s = own[c.head].clone();
                for &u in &c.members {
                    s += &own[u];
                }
                s / num_complex::Complex64::new(c.size() as f64, 0.0)
            })
            .collect();
        let zf = zf_digital_beamformer(&centers, &analog, config.zf_centers)?;
        let beams: Vec<CVec> = zf.columns.iter().map(|w| &analog * w).collect();

        for (n, c) in clusters.iter_mut().enumerate() {
            let gains: Vec<f64> = c.members.iter().map(|&u| beam_gain(&own[u], &beams[n])).collect();
            c.members = decoding_order(&c.members, &gains)?;
            slots[c.head] = UserSlot { ap: m, cluster: n, position: 0 };
            for (k, &u) in c.members.iter().enumerate() {
                slots[u] = UserSlot { ap: m, cluster: n, position: k + 1 };
            }
        }
        aps.push(ApPlan { clusters, analog, digital: zf.columns, beams, regularized: zf.regularized });
    }
    Ok(LinkLayerPlan { aps, slots })
}

/// SINRs of every user plus the SIC bookkeeping behind them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinrReport {
    pub sinr: Vec<f64>,
    /// True when the head cannot cancel this member (always false for heads).
    pub sic_fail: Vec<bool>,
    /// SINR of decoding this member's signal at its head (0 for heads).
    pub head_decode_sinr: Vec<f64>,
}

/// Evaluates every user's SINR under the plan and allocation `alloc` (W per
/// user). Members at decode position `k` see intra-cluster interference
/// from the head and the members before them; the head sees members whose
/// cancellation fails.
pub fn sinr_all(channels: &[Vec<CRow>], plan: &LinkLayerPlan, alloc: &[f64], noise: f64) -> Result<SinrReport> {
    let users = plan.slots.len();
    if alloc.len() != users {
        return Err(Error::Dimension(format!("{} powers for {users} users", alloc.len())));
    }
    let p = plan.cluster_power(alloc);
    // gains[u][m'][n'] = |h^{m'u} V^{m'} w_{n'}^{m'}|²
    let gains: Vec<Vec<Vec<f64>>> = (0..users)
        .map(|u| {
            plan.aps
                .iter()
                .enumerate()
                .map(|(m, ap)| ap.beams.iter().map(|b| beam_gain(&channels[m][u], b)).collect())
                .collect()
        })
        .collect();
    let inter = |u: usize| -> f64 {
        let s = plan.slots[u];
        let mut total = 0.0;
        for (m, ap_p) in p.iter().enumerate() {
            for (n, &pn) in ap_p.iter().enumerate() {
                if (m, n) != (s.ap, s.cluster) {
                    total += gains[u][m][n] * pn;
                }
            }
        }
        total
    };

    let mut sinr = vec![0.0; users];
    let mut sic_fail = vec![false; users];
    let mut head_decode_sinr = vec![0.0; users];
    for (m, ap) in plan.aps.iter().enumerate() {
        for (n, c) in ap.clusters.iter().enumerate() {
            let head = c.head;
            let g_head = gains[head][m][n];
            let i_head = inter(head);
            // α of positions 1..k-1 (head first, then earlier members).
            let mut before = alloc[head];
            for &u in &c.members {
                let g = gains[u][m][n];
                let own = g * alloc[u] / (before * g + inter(u) + noise);
                let at_head = g_head * alloc[u] / (before * g_head + i_head + noise);
                sinr[u] = own;
                head_decode_sinr[u] = at_head;
                sic_fail[u] = at_head < own;
                before += alloc[u];
            }
            let residual: f64 = c.members.iter().filter(|&&u| sic_fail[u]).map(|&u| g_head * alloc[u]).sum();
            sinr[head] = g_head * alloc[head] / (residual + i_head + noise);
        }
    }
    Ok(SinrReport { sinr, sic_fail, head_decode_sinr })
}

/// SIC failure flags per user (false for heads).
pub fn sic_feasibility(channels: &[Vec<CRow>], plan: &LinkLayerPlan, alloc: &[f64], noise: f64) -> Result<Vec<bool>> {
    Ok(sinr_all(channels, plan, alloc, noise)?.sic_fail)
}

/// `bandwidth · log2(1 + γ)` in bit/s.
pub fn rates(sinr: &[f64], bandwidth_hz: f64) -> Vec<f64> {
    sinr.iter().map(|g| bandwidth_hz * g.log2_1p()).collect()
}

trait Log2OnePlus {
    fn log2_1p(self) -> f64;
}

impl Log2OnePlus for f64 {
    fn log2_1p(self) -> f64 {
        self.ln_1p() / std::f64::consts::LN_2
    }
}

/// Total network power (W): amplifier-scaled transmit power plus device,
/// AP circuit and active RIS element power.
pub fn power_consumption(alloc: &[f64], ris: &[RisAction], config: &NetworkConfig) -> f64 {
    let transmit: f64 = alloc.iter().sum();
    let active: usize = ris.iter().map(RisAction::active_elements).sum();
    config.pa_inefficiency * transmit
        + config.total_users() as f64 * config.p_device_w
        + config.num_aps as f64 * config.ap_circuit_power()
        + active as f64 * config.ris_element_power()
}

/// Sum rate divided by power.
pub fn energy_efficiency(rates: &[f64], power_w: f64) -> Result<f64> {
    if !(power_w > 0.0) {
        return Err(Error::InvalidArgument(format!("energy efficiency with power {power_w} W")));
    }
    Ok(rates.iter().sum::<f64>() / power_w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phy::build_topology;
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_channels(cfg: &NetworkConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<CRow>> {
        (0..cfg.num_aps)
            .map(|_| {
                (0..cfg.total_users())
                    .map(|_| {
                        CRow::from_fn(cfg.antennas, |_, _| {
                            Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
                        })
                    })
                    .collect()
            })
            .collect()
    }

    fn small() -> NetworkConfig {
        NetworkConfig {
            num_aps: 2,
            se_users_per_ap: 2,
            iot_users_per_ap: 3,
            rf_chains: 2,
            antennas: 8,
            ..NetworkConfig::default()
        }
    }

    #[test]
    fn single_user_has_no_interference() {
        let cfg = NetworkConfig { iot_users_per_ap: 0, ..NetworkConfig::tiny() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let topo = build_topology(&cfg, &mut rng).unwrap();
        let ch = random_channels(&cfg, &mut rng);
        let plan = build_plan(&ch, &topo, &cfg, HeadSelection::Qos).unwrap();
        let rep = sinr_all(&ch, &plan, &[0.3], 1e-3).unwrap();
        let g = beam_gain(&ch[0][0], &plan.aps[0].beams[0]);
        assert!((rep.sinr[0] - g * 0.3 / 1e-3).abs() <= 1e-12 * rep.sinr[0]);
    }

    #[test]
    fn zero_power_user_has_zero_sinr() {
        let cfg = small();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let topo = build_topology(&cfg, &mut rng).unwrap();
        let ch = random_channels(&cfg, &mut rng);
        let plan = build_plan(&ch, &topo, &cfg, HeadSelection::Qos).unwrap();
        let mut alloc = vec![0.1; cfg.total_users()];
        alloc[3] = 0.0;
        let rep = sinr_all(&ch, &plan, &alloc, 1e-3).unwrap();
        assert_eq!(rep.sinr[3], 0.0);
    }

    #[test]
    fn identical_head_and_member_channels_do_not_fail() {
        let cfg = NetworkConfig { iot_users_per_ap: 1, ..NetworkConfig::tiny() };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let topo = build_topology(&cfg, &mut rng).unwrap();
        let h = random_channels(&cfg, &mut rng)[0][0].clone();
        let ch = vec![vec![h.clone(), h]];
        let plan = build_plan(&ch, &topo, &cfg, HeadSelection::Qos).unwrap();
        let rep = sinr_all(&ch, &plan, &[0.4, 0.6], 1e-3).unwrap();
        assert_eq!(rep.head_decode_sinr[1], rep.sinr[1]);
        assert!(!rep.sic_fail[1]);
    }

    #[test]
    fn zero_head_channel_fails_every_powered_member() {
        let cfg = NetworkConfig { iot_users_per_ap: 2, max_cluster_size: 3, ..NetworkConfig::tiny() };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let topo = build_topology(&cfg, &mut rng).unwrap();
        let ch = random_channels(&cfg, &mut rng);
        let plan = build_plan(&ch, &topo, &cfg, HeadSelection::Qos).unwrap();
        // Evaluate with the head's channel zeroed after planning.
        let mut zeroed = ch.clone();
        zeroed[0][0] = CRow::zeros(cfg.antennas);
        let rep = sinr_all(&zeroed, &plan, &[0.2, 0.3, 0.3], 1e-3).unwrap();
        assert!(rep.sic_fail[1] && rep.sic_fail[2]);
    }

    #[test]
    fn own_power_monotone() {
        let cfg = small();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let topo = build_topology(&cfg, &mut rng).unwrap();
        for _ in 0..50 {
            let ch = random_channels(&cfg, &mut rng);
            let plan = build_plan(&ch, &topo, &cfg, HeadSelection::Qos).unwrap();
            let alloc: Vec<f64> = (0..cfg.total_users()).map(|_| rng.random::<f64>() * 0.2).collect();
            let base = sinr_all(&ch, &plan, &alloc, 1e-3).unwrap();
            let u = rng.random_range(0..cfg.total_users());
            let mut more = alloc.clone();
            more[u] += 0.05;
            let after = sinr_all(&ch, &plan, &more, 1e-3).unwrap();
            // Raising a head's power can flip SIC flags of its members, which
            // only removes residual terms from the head's own SINR.
            assert!(after.sinr[u] >= base.sinr[u] * (1.0 - 1e-12), "user {u}");
        }
    }

    #[test]
    fn qos_heads_are_se_users() {
        let cfg = small();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let topo = build_topology(&cfg, &mut rng).unwrap();
        let ch = random_channels(&cfg, &mut rng);
        let plan = build_plan(&ch, &topo, &cfg, HeadSelection::Qos).unwrap();
        for ap in &plan.aps {
            for c in &ap.clusters {
                assert_eq!(topo.user_kind[c.head], UserKind::Se);
            }
        }
    }

    #[test]
    fn rates_cases() {
        let r = rates(&[1.0, 0.0, 3.0], 10e9);
        assert!((r[0] - 10e9).abs() < 1e-3);
        assert_eq!(r[1], 0.0);
        assert!((r[2] - 20e9).abs() < 1e-3);
    }

    #[test]
    fn power_cases() {
        let cfg = small();
        let off = vec![RisAction::all_off(cfg.ris_elements); cfg.num_ris];
        let base = power_consumption(&vec![0.0; cfg.total_users()], &off, &cfg);
        let want = cfg.total_users() as f64 * cfg.p_device_w + cfg.num_aps as f64 * cfg.ap_circuit_power();
        assert_eq!(base, want);
        let mut one = off.clone();
        one[1].on_off[3] = true;
        let more = power_consumption(&vec![0.0; cfg.total_users()], &one, &cfg);
        assert!((more - base - cfg.ris_element_power()).abs() < 1e-15);
        let alloc: Vec<f64> = (0..cfg.total_users()).map(|i| 0.01 * i as f64).collect();
        let full = power_consumption(&alloc, &one, &cfg);
        let hand = 2.5 * alloc.iter().sum::<f64>()
            + 10.0 * 0.01
            + 2.0 * (0.2 + 2.0 * 0.16 + 8.0 * (0.03 + 0.02))
            + 1.0 * 5e-3;
        assert!((full - hand).abs() < 1e-12);
    }

    #[test]
    fn efficiency_cases() {
        assert_eq!(energy_efficiency(&[0.0, 0.0], 2.0).unwrap(), 0.0);
        let a = energy_efficiency(&[1.0, 2.0], 3.0).unwrap();
        let b = energy_efficiency(&[2.0, 4.0], 3.0).unwrap();
        assert_eq!(b, 2.0 * a);
        assert!(energy_efficiency(&[1.0], 0.0).is_err());
    }

    #[test]
    fn projection_scales_onto_budget() {
        let cfg = small();
        let raw = PowerAction { alloc: vec![0.5; cfg.total_users()] };
        let p = raw.project(&cfg).unwrap();
        p.validate(&cfg).unwrap();
        for block in p.alloc.chunks(cfg.users_per_ap()) {
            assert!((block.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(PowerAction { alloc: vec![0.1; 3] }.project(&cfg).is_err());
    }
}
