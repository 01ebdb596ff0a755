//! THz link model: spreading/absorption loss, array responses, rough-surface
//! reflections, discrete RIS phase profiles and cascaded channels.

use std::f64::consts::PI;

use nalgebra::{DMatrix, RowDVector};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::topology::{distance, sin_departure, Topology};
use crate::config::{NetworkConfig, SPEED_OF_LIGHT};
use crate::error::{Error, Result};

pub type CRow = RowDVector<Complex64>;
pub type CMat = DMatrix<Complex64>;

/// Probability that a link of the given length keeps its line of sight,
/// `exp(-distance / d_B)`.
pub fn los_probability(distance_m: f64, decay_m: f64) -> Result<f64> {
    if !(distance_m >= 0.0) {
        return Err(Error::InvalidArgument(format!("negative distance {distance_m}")));
    }
    if !(decay_m > 0.0) {
        return Err(Error::InvalidArgument(format!("non-positive LoS decay distance {decay_m}")));
    }
    Ok((-distance_m / decay_m).exp())
}

/// Spreading plus molecular absorption loss in dB (a negative gain):
/// `20·log10(c / (4π f d)) − 10·k·d·log10(e)`.
pub fn path_loss_db(freq_hz: f64, distance_m: f64, absorption: f64) -> Result<f64> {
    if !(freq_hz > 0.0) {
        return Err(Error::InvalidArgument(format!("non-positive frequency {freq_hz}")));
    }
    if !(distance_m > 0.0) {
        return Err(Error::InvalidArgument(format!("path loss needs a positive distance, got {distance_m}")));
    }
    let spreading = 20.0 * (SPEED_OF_LIGHT / (4.0 * PI * freq_hz * distance_m)).log10();
    let absorption = 10.0 * absorption * distance_m * std::f64::consts::E.log10();
    Ok(spreading - absorption)
}

/// Linear power gain corresponding to [`path_loss_db`].
pub fn path_gain(freq_hz: f64, distance_m: f64, absorption: f64) -> Result<f64> {
    Ok(10f64.powf(path_loss_db(freq_hz, distance_m, absorption)? / 10.0))
}

/// Uniform linear array response: entry `m` is `e^{jπ m sinφ} / √n`.
pub fn array_response(n: usize, aod: f64) -> Vec<Complex64> {
    let norm = 1.0 / (n as f64).sqrt();
    let s = aod.sin();
    (0..n)
        .map(|m| Complex64::from_polar(norm, PI * m as f64 * s))
        .collect()
}

/// Fresnel reflection coefficient times the Rayleigh roughness factor.
pub fn reflection_coeff(incidence: f64, roughness_m: f64, freq_hz: f64, refractive_index: Complex64) -> Complex64 {
    let cos_in = incidence.cos();
    let sin_in = incidence.sin();
    let root = (refractive_index * refractive_index - Complex64::new(sin_in * sin_in, 0.0)).sqrt();
    let fresnel = (Complex64::new(cos_in, 0.0) - root) / (Complex64::new(cos_in, 0.0) + root);
    let roughness = (-0.5 * (4.0 * PI * freq_hz * roughness_m * cos_in / SPEED_OF_LIGHT)).exp();
    fresnel * roughness
}

/// One non-line-of-sight reflection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NlosPath {
    /// Path length relative to the direct distance.
    pub detour: f64,
    pub aod: f64,
    pub incidence: f64,
}

/// Episode-level geometry of one transmitter→user link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkGeometry {
    pub distance: f64,
    pub aod: f64,
    pub los: bool,
    pub nlos: Vec<NlosPath>,
}

impl LinkGeometry {
    pub fn sample<R: Rng + ?Sized>(distance_m: f64, aod: f64, config: &NetworkConfig, rng: &mut R) -> Result<Self> {
        let p = los_probability(distance_m, config.los_decay_distance_m)?;
        let los = rng.random::<f64>() < p;
        let nlos = (0..config.num_nlos_paths)
            .map(|_| NlosPath {
                detour: rng.random_range(config.detour_min..=config.detour_max),
                aod: rng.random_range(-PI / 2.0..PI / 2.0),
                incidence: rng.random_range(0.0..PI / 2.0),
            })
            .collect();
        Ok(Self { distance: distance_m, aod, los, nlos })
    }

    pub fn num_paths(&self) -> usize {
        1 + self.nlos.len()
    }
}

/// Row channel `Σ_paths amplitude · e^{jψ} · αᴴ(φ)` for an `n`-element array.
/// `phases[0]` rotates the LoS term, `phases[1..]` the reflections.
pub fn link_vector(n: usize, geometry: &LinkGeometry, phases: &[f64], config: &NetworkConfig) -> Result<CRow> {
    if phases.len() != geometry.num_paths() {
        return Err(Error::Dimension(format!(
            "{} small-scale phases for {} paths",
            phases.len(),
            geometry.num_paths()
        )));
    }
    let gain = config.path_amplitude_gain();
    let f = config.carrier_freq_hz;
    let k = config.absorption_coeff;
    let mut out = CRow::zeros(n);
    if geometry.los {
        let amp = path_gain(f, geometry.distance, k)?.sqrt() * gain;
        add_path(&mut out, Complex64::from_polar(amp, phases[0]), geometry.aod);
    }
    for (path, &psi) in geometry.nlos.iter().zip(&phases[1..]) {
        let amp = path_gain(f, geometry.distance * path.detour, k)?.sqrt() * gain;
        let rho = reflection_coeff(path.incidence, config.roughness_sigma_m, f, config.refractive_index);
        add_path(&mut out, rho * Complex64::from_polar(amp, psi), path.aod);
    }
    Ok(out)
}

fn add_path(out: &mut CRow, coeff: Complex64, aod: f64) {
    let resp = array_response(out.len(), aod);
    for (o, a) in out.iter_mut().zip(resp) {
        *o += coeff * a.conj();
    }
}

fn sample_phases<R: Rng + ?Sized>(count: usize, rng: &mut R) -> Vec<f64> {
    (0..count).map(|_| rng.random_range(0.0..2.0 * PI)).collect()
}

/// Direct AP→user channel (1 × N_A) with a freshly sampled blockage state,
/// reflection geometry and small-scale phases.
pub fn direct_channel<R: Rng + ?Sized>(
    topology: &Topology,
    user: usize,
    ap: usize,
    rng: &mut R,
    config: &NetworkConfig,
) -> Result<(CRow, bool)> {
    let geometry = direct_geometry(topology, user, ap, config, rng)?;
    let phases = sample_phases(geometry.num_paths(), rng);
    let h = link_vector(config.antennas, &geometry, &phases, config)?;
    Ok((h, geometry.los))
}

fn direct_geometry<R: Rng + ?Sized>(
    topology: &Topology,
    user: usize,
    ap: usize,
    config: &NetworkConfig,
    rng: &mut R,
) -> Result<LinkGeometry> {
    let a = &topology.ap_positions[ap];
    let u = &topology.user_positions[user];
    LinkGeometry::sample(distance(a, u), sin_departure(a, u).asin(), config, rng)
}

/// A RIS configuration: ON/OFF switch and phase index per element.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RisAction {
    pub on_off: Vec<bool>,
    pub phase_index: Vec<u32>,
}

impl RisAction {
    pub fn all_off(elements: usize) -> Self {
        Self { on_off: vec![false; elements], phase_index: vec![0; elements] }
    }

    pub fn active_elements(&self) -> usize {
        self.on_off.iter().filter(|&&w| w).count()
    }

    pub fn validate(&self, elements: usize, bits: u32) -> Result<()> {
        if self.on_off.len() != elements || self.phase_index.len() != elements {
            return Err(Error::Action(format!(
                "RIS action has {}/{} entries, expected {elements}",
                self.on_off.len(),
                self.phase_index.len()
            )));
        }
        let levels = 1u64 << bits;
        if let Some(b) = self.phase_index.iter().find(|&&b| u64::from(b) >= levels) {
            return Err(Error::Action(format!("phase index {b} outside 0..{levels}")));
        }
        Ok(())
    }
}

/// Diagonal of Θ: entry `l` is `ω_l · e^{j·2^{1−b}·π·β_l}`.
pub fn ris_phase_diagonal(action: &RisAction, bits: u32) -> Result<Vec<Complex64>> {
    action.validate(action.on_off.len(), bits)?;
    let step = 2f64.powi(1 - bits as i32) * PI;
    Ok(action
        .on_off
        .iter()
        .zip(&action.phase_index)
        .map(|(&on, &beta)| if on { Complex64::from_polar(1.0, step * beta as f64) } else { Complex64::new(0.0, 0.0) })
        .collect())
}

/// Full L × L phase-shift matrix Θ.
pub fn ris_phase_matrix(action: &RisAction, bits: u32) -> Result<CMat> {
    let diag = ris_phase_diagonal(action, bits)?;
    Ok(CMat::from_diagonal(&nalgebra::DVector::from_vec(diag)))
}

/// One RIS hop: RIS→user row `f` (1 × L), phase matrix Θ (L × L) and
/// AP→RIS matrix `G` (L × N_A).
pub struct RisLink<'a> {
    pub ris_to_user: &'a CRow,
    pub phase: &'a CMat,
    pub ap_to_ris: &'a CMat,
}

/// `h̃ + Σ_j f_j Θ_j G_j`.
pub fn cascaded_channel(direct: &CRow, links: &[RisLink<'_>]) -> Result<CRow> {
    let mut h = direct.clone();
    for (j, link) in links.iter().enumerate() {
        let l = link.ris_to_user.len();
        if link.phase.nrows() != l
            || link.phase.ncols() != l
            || link.ap_to_ris.nrows() != l
            || link.ap_to_ris.ncols() != direct.len()
        {
            return Err(Error::Dimension(format!(
                "RIS link {j}: f is 1×{l}, Θ is {}×{}, G is {}×{}, h̃ is 1×{}",
                link.phase.nrows(),
                link.phase.ncols(),
                link.ap_to_ris.nrows(),
                link.ap_to_ris.ncols(),
                direct.len()
            )));
        }
        h += link.ris_to_user * link.phase * link.ap_to_ris;
    }
    Ok(h)
}

/// Episode-level channel geometry: blockage flags, reflection geometry and
/// angles. Resampled at every episode reset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LargeScale {
    /// `[ap][user]`
    pub direct: Vec<Vec<LinkGeometry>>,
    /// `[ris][user]`
    pub ris_user: Vec<Vec<LinkGeometry>>,
    /// `[ap][ris]`: (distance, departure angle at AP, arrival angle at RIS).
    pub ap_ris: Vec<Vec<(f64, f64, f64)>>,
}

impl LargeScale {
    pub fn sample<R: Rng + ?Sized>(topology: &Topology, config: &NetworkConfig, rng: &mut R) -> Result<Self> {
        let users = topology.num_users();
        let direct = (0..topology.num_aps())
            .map(|ap| (0..users).map(|u| direct_geometry(topology, u, ap, config, rng)).collect())
            .collect::<Result<Vec<Vec<_>>>>()?;
        let ris_user = topology
            .ris_positions
            .iter()
            .map(|r| {
                (0..users)
                    .map(|u| {
                        let p = &topology.user_positions[u];
                        LinkGeometry::sample(distance(r, p), sin_departure(r, p).asin(), config, rng)
                    })
                    .collect()
            })
            .collect::<Result<Vec<Vec<_>>>>()?;
        let ap_ris = topology
            .ap_positions
            .iter()
            .map(|a| {
                topology
                    .ris_positions
                    .iter()
                    .map(|r| (distance(a, r), sin_departure(a, r).asin(), sin_departure(r, a).asin()))
                    .collect()
            })
            .collect();
        Ok(Self { direct, ris_user, ap_ris })
    }

    /// Same geometry with every blockage removed.
    pub fn with_all_los(mut self) -> Self {
        for g in self.direct.iter_mut().chain(self.ris_user.iter_mut()).flatten() {
            g.los = true;
        }
        self
    }
}

/// All link matrices for one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelState {
    /// `[ap][user]`, each 1 × N_A.
    pub direct: Vec<Vec<CRow>>,
    /// `[ris][user]`, each 1 × L.
    pub ris_to_user: Vec<Vec<CRow>>,
    /// `[ap][ris]`, each L × N_A.
    pub ap_to_ris: Vec<Vec<CMat>>,
    pub los_direct: Vec<Vec<bool>>,
    pub los_ris_user: Vec<Vec<bool>>,
}

/// Draws the slot's small-scale phases on top of the episode geometry.
/// AP→RIS links are always line of sight.
pub fn sample_channel_state<R: Rng + ?Sized>(
    large: &LargeScale,
    config: &NetworkConfig,
    rng: &mut R,
) -> Result<ChannelState> {
    let n_a = config.antennas;
    let l = config.ris_elements;
    let mut direct = Vec::with_capacity(large.direct.len());
    for row in &large.direct {
        let mut out = Vec::with_capacity(row.len());
        for g in row {
            let phases = sample_phases(g.num_paths(), rng);
            out.push(link_vector(n_a, g, &phases, config)?);
        }
        direct.push(out);
    }
    let mut ris_to_user = Vec::with_capacity(large.ris_user.len());
    for row in &large.ris_user {
        let mut out = Vec::with_capacity(row.len());
        for g in row {
            let phases = sample_phases(g.num_paths(), rng);
            out.push(link_vector(l, g, &phases, config)?);
        }
        ris_to_user.push(out);
    }
    let gain = config.path_amplitude_gain();
    let mut ap_to_ris = Vec::with_capacity(large.ap_ris.len());
    for row in &large.ap_ris {
        let mut out = Vec::with_capacity(row.len());
        for &(d, aod, aoa) in row {
            let amp = path_gain(config.carrier_freq_hz, d, config.absorption_coeff)?.sqrt() * gain;
            let c = Complex64::from_polar(amp, rng.random_range(0.0..2.0 * PI));
            let at_ris = array_response(l, aoa);
            let at_ap = array_response(n_a, aod);
            out.push(CMat::from_fn(l, n_a, |r, col| c * at_ris[r] * at_ap[col].conj()));
        }
        ap_to_ris.push(out);
    }
    Ok(ChannelState {
        direct,
        ris_to_user,
        ap_to_ris,
        los_direct: large.direct.iter().map(|r| r.iter().map(|g| g.los).collect()).collect(),
        los_ris_user: large.ris_user.iter().map(|r| r.iter().map(|g| g.los).collect()).collect(),
    })
}

/// Effective channels `h^{ap,user}` under the given RIS configurations,
/// indexed `[ap][user]`.
pub fn effective_channels(
    state: &ChannelState,
    ris_actions: &[RisAction],
    config: &NetworkConfig,
) -> Result<Vec<Vec<CRow>>> {
    if ris_actions.len() != state.ris_to_user.len() {
        return Err(Error::Action(format!(
            "{} RIS actions for {} RISs",
            ris_actions.len(),
            state.ris_to_user.len()
        )));
    }
    let diags = ris_actions
        .iter()
        .map(|a| {
            a.validate(config.ris_elements, config.ris_phase_bits)?;
            ris_phase_diagonal(a, config.ris_phase_bits)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(state.direct.len());
    for (ap, row) in state.direct.iter().enumerate() {
        let mut per_user = Vec::with_capacity(row.len());
        for (u, h_direct) in row.iter().enumerate() {
            let mut h = h_direct.clone();
            for (j, diag) in diags.iter().enumerate() {
                if diag.iter().all(|c| c.norm_sqr() == 0.0) {
                    continue;
                }
                // f·Θ is elementwise because Θ is diagonal.
                let f_theta = CRow::from_iterator(
                    diag.len(),
                    state.ris_to_user[j][u].iter().zip(diag).map(|(f, t)| f * t),
                );
                h += f_theta * &state.ap_to_ris[ap][j];
            }
            per_user.push(h);
        }
        out.push(per_user);
    }
    Ok(out)
}
