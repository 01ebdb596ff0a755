//! Flat `key = value` configuration files.
//!
//! One setting per line, `#` starts a comment. Units are fixed per key and
//! listed in [`NetworkConfig::KEYS`] and [`crate::env::EnvConfig::KEYS`].
//! Unknown keys are rejected so that typos do not silently fall back to
//! defaults.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Parsed `key = value` pairs, in file order of first appearance.
#[derive(Debug, Clone, Default)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got `{raw}`", lineno + 1))
            })?;
            let key = key.trim().to_string();
            if entries.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key `{key}`", lineno + 1)));
            }
        }
        Ok(Self { entries })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Fails if any key is not in `known`.
    pub fn reject_unknown(&self, known: &[&[(&str, &str)]]) -> Result<()> {
        for key in self.keys() {
            if !known.iter().any(|set| set.iter().any(|(k, _)| *k == key)) {
                return Err(Error::Config(format!("unknown key `{key}`")));
            }
        }
        Ok(())
    }

    pub(crate) fn set_f64(&self, key: &str, slot: &mut f64) -> Result<()> {
        if let Some(v) = self.get(key) {
            *slot = parse_f64(key, v)?;
        }
        Ok(())
    }

    pub(crate) fn set_usize(&self, key: &str, slot: &mut usize) -> Result<()> {
        if let Some(v) = self.get(key) {
            *slot = v
                .parse()
                .map_err(|_| Error::Config(format!("`{key}`: expected a non-negative integer, got `{v}`")))?;
        }
        Ok(())
    }

    pub(crate) fn set_u64(&self, key: &str, slot: &mut u64) -> Result<()> {
        if let Some(v) = self.get(key) {
            *slot = v
                .parse()
                .map_err(|_| Error::Config(format!("`{key}`: expected an integer, got `{v}`")))?;
        }
        Ok(())
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    match v {
        "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
        _ => v
            .parse()
            .map_err(|_| Error::Config(format!("`{key}`: expected a number, got `{v}`"))),
    }
}

/// How the zero-forcing precoder forms its cluster-center matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZfCenters {
    /// Centers are composed with the analog beamformer (`Ĥ·V`, N_R × N_R).
    Composed,
    /// Zero-forcing on the raw N_R × N_A centers, mapped to the RF domain by `Vᴴ`.
    Raw,
}

/// Per-element RIS power draw (W) for resolutions of 1..=6 bits.
const RIS_ELEMENT_POWER_BY_BITS: [f64; 6] = [5e-3, 10e-3, 15e-3, 45e-3, 60e-3, 78e-3];

/// Physical-layer and link-layer parameters of one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub num_aps: usize,
    pub num_ris: usize,
    pub se_users_per_ap: usize,
    pub iot_users_per_ap: usize,
    pub antennas: usize,
    pub rf_chains: usize,
    pub ris_elements: usize,
    pub ris_phase_bits: u32,
    pub analog_phase_bits: u32,
    pub carrier_freq_hz: f64,
    pub bandwidth_hz: f64,
    /// Medium absorption coefficient k(f), 1/m.
    pub absorption_coeff: f64,
    pub antenna_gain_dbi: f64,
    /// Extra linear amplitude factor on every path (houses the unexplained `√M`).
    pub amplitude_scale: f64,
    pub noise_power_w: f64,
    pub max_tx_power_w: f64,
    pub p_baseband_w: f64,
    pub p_rf_chain_w: f64,
    pub p_phase_shifter_w: f64,
    pub p_amplifier_w: f64,
    pub p_device_w: f64,
    /// Per active RIS element; `None` selects the built-in value for `ris_phase_bits`.
    pub ris_element_power_w: Option<f64>,
    pub pa_inefficiency: f64,
    pub num_nlos_paths: usize,
    pub roughness_sigma_m: f64,
    pub refractive_index: Complex64,
    pub los_decay_distance_m: f64,
    pub detour_min: f64,
    pub detour_max: f64,
    pub room_length_m: f64,
    pub room_width_m: f64,
    pub ap_height_m: f64,
    pub ris_height_m: f64,
    pub user_height_m: f64,
    pub neighbor_distance_m: f64,
    /// 0 selects ⌈K_U / N_R⌉ + 1.
    pub max_cluster_size: usize,
    pub zf_centers: ZfCenters,
    pub rng_seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            num_aps: 3,
            num_ris: 2,
            se_users_per_ap: 4,
            iot_users_per_ap: 4,
            antennas: 64,
            rf_chains: 4,
            ris_elements: 20,
            ris_phase_bits: 1,
            analog_phase_bits: 4,
            carrier_freq_hz: 0.3e12,
            bandwidth_hz: 10e9,
            absorption_coeff: 0.0033,
            antenna_gain_dbi: 20.0,
            amplitude_scale: 1.0,
            // kT·B over 10 GHz: -174 dBm/Hz + 100 dB = -74 dBm.
            noise_power_w: 10f64.powf(-7.4) * 1e-3,
            max_tx_power_w: 1.0,
            p_baseband_w: 0.2,
            p_rf_chain_w: 0.16,
            p_phase_shifter_w: 0.03,
            p_amplifier_w: 0.02,
            p_device_w: 0.01,
            ris_element_power_w: None,
            pa_inefficiency: 2.5,
            num_nlos_paths: 2,
            roughness_sigma_m: 0.05e-3,
            refractive_index: Complex64::new(1.922, 0.0057),
            los_decay_distance_m: 8.0,
            detour_min: 1.2,
            detour_max: 2.0,
            room_length_m: 30.0,
            room_width_m: 10.0,
            ap_height_m: 3.0,
            ris_height_m: 1.5,
            user_height_m: 1.0,
            neighbor_distance_m: 15.0,
            max_cluster_size: 0,
            zf_centers: ZfCenters::Composed,
            rng_seed: 1,
        }
    }
}

impl NetworkConfig {
    /// Keys accepted in config files, with their units.
    pub const KEYS: &'static [(&'static str, &'static str)] = &[
        ("num_aps", "count"),
        ("num_ris", "count"),
        ("se_users_per_ap", "count"),
        ("iot_users_per_ap", "count"),
        ("antennas", "count"),
        ("rf_chains", "count"),
        ("ris_elements", "count"),
        ("ris_phase_bits", "bits"),
        ("analog_phase_bits", "bits"),
        ("carrier_freq_hz", "Hz"),
        ("bandwidth_hz", "Hz"),
        ("absorption_coeff", "1/m"),
        ("antenna_gain_dbi", "dBi"),
        ("amplitude_scale", "linear"),
        ("noise_power_w", "W"),
        ("max_tx_power_w", "W"),
        ("p_baseband_w", "W"),
        ("p_rf_chain_w", "W"),
        ("p_phase_shifter_w", "W"),
        ("p_amplifier_w", "W"),
        ("p_device_w", "W"),
        ("ris_element_power_w", "W"),
        ("pa_inefficiency", "dimensionless"),
        ("num_nlos_paths", "count"),
        ("roughness_sigma_m", "m"),
        ("refractive_index_re", "dimensionless"),
        ("refractive_index_im", "dimensionless"),
        ("los_decay_distance_m", "m"),
        ("detour_min", "dimensionless"),
        ("detour_max", "dimensionless"),
        ("room_length_m", "m"),
        ("room_width_m", "m"),
        ("ap_height_m", "m"),
        ("ris_height_m", "m"),
        ("user_height_m", "m"),
        ("neighbor_distance_m", "m (inf allowed)"),
        ("max_cluster_size", "count (0 = auto)"),
        ("zf_centers", "composed | raw"),
        ("rng_seed", "integer"),
    ];

    /// Desk-scale network used by the exhaustive oracle: one AP with one SE
    /// and one IoT user, one 2-element 1-bit RIS.
    pub fn tiny() -> Self {
        Self {
            num_aps: 1,
            num_ris: 1,
            se_users_per_ap: 1,
            iot_users_per_ap: 1,
            antennas: 4,
            rf_chains: 1,
            ris_elements: 2,
            ris_phase_bits: 1,
            room_length_m: 10.0,
            room_width_m: 10.0,
            ..Self::default()
        }
    }

    /// Two APs, two RISs, twelve users, 32 antennas per AP.
    pub fn medium() -> Self {
        Self {
            num_aps: 2,
            num_ris: 2,
            se_users_per_ap: 2,
            iot_users_per_ap: 4,
            antennas: 32,
            rf_chains: 2,
            ris_elements: 20,
            room_length_m: 20.0,
            room_width_m: 10.0,
            ..Self::default()
        }
    }

    pub fn users_per_ap(&self) -> usize {
        self.se_users_per_ap + self.iot_users_per_ap
    }

    pub fn total_users(&self) -> usize {
        self.num_aps * self.users_per_ap()
    }

    pub fn antennas_per_subarray(&self) -> usize {
        self.antennas / self.rf_chains
    }

    pub fn effective_max_cluster_size(&self) -> usize {
        if self.max_cluster_size > 0 {
            self.max_cluster_size
        } else {
            self.iot_users_per_ap.div_ceil(self.rf_chains) + 1
        }
    }

    /// Number of selectable phase levels per RIS element, `2^b`.
    pub fn ris_phase_levels(&self) -> usize {
        1usize << self.ris_phase_bits
    }

    pub fn ris_element_power(&self) -> f64 {
        self.ris_element_power_w.unwrap_or_else(|| {
            let idx = (self.ris_phase_bits as usize).clamp(1, RIS_ELEMENT_POWER_BY_BITS.len()) - 1;
            RIS_ELEMENT_POWER_BY_BITS[idx]
        })
    }

    /// Circuit power of one AP: P_BB + N_R·P_RF + N_A·(P_PS + P_A).
    pub fn ap_circuit_power(&self) -> f64 {
        self.p_baseband_w
            + self.rf_chains as f64 * self.p_rf_chain_w
            + self.antennas as f64 * (self.p_phase_shifter_w + self.p_amplifier_w)
    }

    /// Linear amplitude of the antenna gain combined with `amplitude_scale`.
    pub fn path_amplitude_gain(&self) -> f64 {
        self.amplitude_scale * 10f64.powf(self.antenna_gain_dbi / 20.0)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.num_aps == 0 || self.se_users_per_ap == 0 || self.antennas == 0 || self.rf_chains == 0 {
            return fail("num_aps, se_users_per_ap, antennas and rf_chains must be positive".into());
        }
        if self.num_ris > 0 && self.ris_elements == 0 {
            return fail("ris_elements must be positive when RISs are present".into());
        }
        if self.antennas % self.rf_chains != 0 {
            return fail(format!(
                "antennas ({}) must be a multiple of rf_chains ({})",
                self.antennas, self.rf_chains
            ));
        }
        if self.rf_chains != self.se_users_per_ap {
            return fail(format!(
                "rf_chains ({}) must equal se_users_per_ap ({})",
                self.rf_chains, self.se_users_per_ap
            ));
        }
        if self.ris_phase_bits == 0 || self.ris_phase_bits > 16 {
            return fail("ris_phase_bits must be in 1..=16".into());
        }
        if self.analog_phase_bits == 0 || self.analog_phase_bits > 16 {
            return fail("analog_phase_bits must be in 1..=16".into());
        }
        let powers = [
            self.noise_power_w,
            self.max_tx_power_w,
            self.p_baseband_w,
            self.p_rf_chain_w,
            self.p_phase_shifter_w,
            self.p_amplifier_w,
            self.p_device_w,
            self.ris_element_power(),
        ];
        if powers.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return fail("all powers must be finite and non-negative".into());
        }
        if self.noise_power_w <= 0.0 {
            return fail("noise_power_w must be positive".into());
        }
        if !(self.carrier_freq_hz > 0.0 && self.bandwidth_hz > 0.0) {
            return fail("carrier_freq_hz and bandwidth_hz must be positive".into());
        }
        if !(self.room_length_m > 0.0 && self.room_width_m > 0.0) {
            return fail("room dimensions must be positive".into());
        }
        if !(self.los_decay_distance_m > 0.0) {
            return fail("los_decay_distance_m must be positive".into());
        }
        if !(1.0 <= self.detour_min && self.detour_min <= self.detour_max) {
            return fail("detour factors must satisfy 1 <= detour_min <= detour_max".into());
        }
        if self.neighbor_distance_m.is_nan() || self.neighbor_distance_m < 0.0 {
            return fail("neighbor_distance_m must be non-negative".into());
        }
        Ok(())
    }

    /// Overrides defaults with the network keys present in `kv`.
    pub fn apply(&mut self, kv: &KeyValues) -> Result<()> {
        kv.set_usize("num_aps", &mut self.num_aps)?;
        kv.set_usize("num_ris", &mut self.num_ris)?;
        kv.set_usize("se_users_per_ap", &mut self.se_users_per_ap)?;
        kv.set_usize("iot_users_per_ap", &mut self.iot_users_per_ap)?;
        kv.set_usize("antennas", &mut self.antennas)?;
        kv.set_usize("rf_chains", &mut self.rf_chains)?;
        kv.set_usize("ris_elements", &mut self.ris_elements)?;
        let mut bits = self.ris_phase_bits as usize;
        kv.set_usize("ris_phase_bits", &mut bits)?;
        self.ris_phase_bits = bits as u32;
        let mut abits = self.analog_phase_bits as usize;
        kv.set_usize("analog_phase_bits", &mut abits)?;
        self.analog_phase_bits = abits as u32;
        kv.set_f64("carrier_freq_hz", &mut self.carrier_freq_hz)?;
        kv.set_f64("bandwidth_hz", &mut self.bandwidth_hz)?;
        kv.set_f64("absorption_coeff", &mut self.absorption_coeff)?;
        kv.set_f64("antenna_gain_dbi", &mut self.antenna_gain_dbi)?;
        kv.set_f64("amplitude_scale", &mut self.amplitude_scale)?;
        kv.set_f64("noise_power_w", &mut self.noise_power_w)?;
        kv.set_f64("max_tx_power_w", &mut self.max_tx_power_w)?;
        kv.set_f64("p_baseband_w", &mut self.p_baseband_w)?;
        kv.set_f64("p_rf_chain_w", &mut self.p_rf_chain_w)?;
        kv.set_f64("p_phase_shifter_w", &mut self.p_phase_shifter_w)?;
        kv.set_f64("p_amplifier_w", &mut self.p_amplifier_w)?;
        kv.set_f64("p_device_w", &mut self.p_device_w)?;
        if kv.get("ris_element_power_w").is_some() {
            let mut p = 0.0;
            kv.set_f64("ris_element_power_w", &mut p)?;
            self.ris_element_power_w = Some(p);
        }
        kv.set_f64("pa_inefficiency", &mut self.pa_inefficiency)?;
        kv.set_usize("num_nlos_paths", &mut self.num_nlos_paths)?;
        kv.set_f64("roughness_sigma_m", &mut self.roughness_sigma_m)?;
        kv.set_f64("refractive_index_re", &mut self.refractive_index.re)?;
        kv.set_f64("refractive_index_im", &mut self.refractive_index.im)?;
        kv.set_f64("los_decay_distance_m", &mut self.los_decay_distance_m)?;
        kv.set_f64("detour_min", &mut self.detour_min)?;
        kv.set_f64("detour_max", &mut self.detour_max)?;
        kv.set_f64("room_length_m", &mut self.room_length_m)?;
        kv.set_f64("room_width_m", &mut self.room_width_m)?;
        kv.set_f64("ap_height_m", &mut self.ap_height_m)?;
        kv.set_f64("ris_height_m", &mut self.ris_height_m)?;
        kv.set_f64("user_height_m", &mut self.user_height_m)?;
        kv.set_f64("neighbor_distance_m", &mut self.neighbor_distance_m)?;
        kv.set_usize("max_cluster_size", &mut self.max_cluster_size)?;
        if let Some(v) = kv.get("zf_centers") {
            self.zf_centers = match v {
                "composed" => ZfCenters::Composed,
                "raw" => ZfCenters::Raw,
                other => return Err(Error::Config(format!("`zf_centers`: unknown value `{other}`"))),
            };
        }
        kv.set_u64("rng_seed", &mut self.rng_seed)?;
        Ok(())
    }

    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        kv.reject_unknown(&[Self::KEYS])?;
        let mut cfg = Self::default();
        cfg.apply(kv)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_key_values(&KeyValues::read(path)?)
    }

    /// Renders the configuration back to the flat file format.
    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            let unit = Self::KEYS.iter().find(|(key, _)| *key == k).map(|(_, u)| *u).unwrap_or("");
            let _ = writeln!(out, "{k} = {v}  # {unit}");
        };
        line("num_aps", self.num_aps.to_string());
        line("num_ris", self.num_ris.to_string());
        line("se_users_per_ap", self.se_users_per_ap.to_string());
        line("iot_users_per_ap", self.iot_users_per_ap.to_string());
        line("antennas", self.antennas.to_string());
        line("rf_chains", self.rf_chains.to_string());
        line("ris_elements", self.ris_elements.to_string());
        line("ris_phase_bits", self.ris_phase_bits.to_string());
        line("analog_phase_bits", self.analog_phase_bits.to_string());
        line("carrier_freq_hz", fmt_f64(self.carrier_freq_hz));
        line("bandwidth_hz", fmt_f64(self.bandwidth_hz));
        line("absorption_coeff", fmt_f64(self.absorption_coeff));
        line("antenna_gain_dbi", fmt_f64(self.antenna_gain_dbi));
        line("amplitude_scale", fmt_f64(self.amplitude_scale));
        line("noise_power_w", fmt_f64(self.noise_power_w));
        line("max_tx_power_w", fmt_f64(self.max_tx_power_w));
        line("p_baseband_w", fmt_f64(self.p_baseband_w));
        line("p_rf_chain_w", fmt_f64(self.p_rf_chain_w));
        line("p_phase_shifter_w", fmt_f64(self.p_phase_shifter_w));
        line("p_amplifier_w", fmt_f64(self.p_amplifier_w));
        line("p_device_w", fmt_f64(self.p_device_w));
        if let Some(p) = self.ris_element_power_w {
            line("ris_element_power_w", fmt_f64(p));
        }
        line("pa_inefficiency", fmt_f64(self.pa_inefficiency));
        line("num_nlos_paths", self.num_nlos_paths.to_string());
        line("roughness_sigma_m", fmt_f64(self.roughness_sigma_m));
        line("refractive_index_re", fmt_f64(self.refractive_index.re));
        line("refractive_index_im", fmt_f64(self.refractive_index.im));
        line("los_decay_distance_m", fmt_f64(self.los_decay_distance_m));
        line("detour_min", fmt_f64(self.detour_min));
        line("detour_max", fmt_f64(self.detour_max));
        line("room_length_m", fmt_f64(self.room_length_m));
        line("room_width_m", fmt_f64(self.room_width_m));
        line("ap_height_m", fmt_f64(self.ap_height_m));
        line("ris_height_m", fmt_f64(self.ris_height_m));
        line("user_height_m", fmt_f64(self.user_height_m));
        line("neighbor_distance_m", fmt_f64(self.neighbor_distance_m));
        line("max_cluster_size", self.max_cluster_size.to_string());
        line(
            "zf_centers",
            match self.zf_centers {
                ZfCenters::Composed => "composed".into(),
                ZfCenters::Raw => "raw".into(),
            },
        );
        line("rng_seed", self.rng_seed.to_string());
        out
    }
}

pub(crate) fn fmt_f64(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:?}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_and_presets_validate() {
        NetworkConfig::default().validate().unwrap();
        NetworkConfig::tiny().validate().unwrap();
        NetworkConfig::medium().validate().unwrap();
    }

    #[test]
    fn file_round_trip() {
        let mut cfg = NetworkConfig::medium();
        cfg.neighbor_distance_m = f64::INFINITY;
        cfg.ris_element_power_w = Some(0.007);
        cfg.zf_centers = ZfCenters::Raw;
        let text = cfg.to_file_string();
        let back = NetworkConfig::from_key_values(&KeyValues::parse(&text).unwrap()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn rejects_unknown_and_inconsistent_keys() {
        let kv = KeyValues::parse("num_apps = 2\n").unwrap();
        assert!(NetworkConfig::from_key_values(&kv).is_err());
        let kv = KeyValues::parse("antennas = 30\nrf_chains = 4\nse_users_per_ap = 4").unwrap();
        assert!(NetworkConfig::from_key_values(&kv).is_err());
        let kv = KeyValues::parse("rf_chains = 2").unwrap();
        assert!(NetworkConfig::from_key_values(&kv).is_err(), "N_R must equal K_S");
        assert!(KeyValues::parse("a = 1\na = 2").is_err());
        assert!(KeyValues::parse("just words").is_err());
    }

    #[test]
    fn noise_default_is_minus_74_dbm() {
        let dbm = 10.0 * (NetworkConfig::default().noise_power_w * 1e3).log10();
        assert!((dbm + 74.0).abs() < 1e-12);
    }
}
