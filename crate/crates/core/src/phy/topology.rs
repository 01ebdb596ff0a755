use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::NetworkConfig;
use crate::error::{Error, Result};

pub type Point = [f64; 3];

pub fn distance(a: &Point, b: &Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Sine of the departure angle from `from` towards `to` for a linear array
/// laid along the x axis (0 at broadside).
pub fn sin_departure(from: &Point, to: &Point) -> f64 {
    let d = distance(from, to);
    if d == 0.0 {
        0.0
    } else {
        (to[0] - from[0]) / d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UserKind {
    #[serde(rename = "SE")]
    Se,
    #[serde(rename = "IoT")]
    Iot,
}

/// Node placement and neighbor relations.
///
/// Users are numbered AP by AP: AP `m` serves the contiguous block
/// `m·K .. (m+1)·K`, SE users first, then IoT users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub ap_positions: Vec<Point>,
    pub ris_positions: Vec<Point>,
    pub user_positions: Vec<Point>,
    pub user_kind: Vec<UserKind>,
    pub ap_of_user: Vec<usize>,
    /// Per AP: neighboring RIS indices (the RIS part of N_i^0).
    pub ap_neighbor_ris: Vec<Vec<usize>>,
    /// Per AP: neighboring AP indices (the AP part of N_i^0).
    pub ap_neighbor_aps: Vec<Vec<usize>>,
    /// Per RIS: neighboring AP indices (N_j^1).
    pub ris_neighbor_aps: Vec<Vec<usize>>,
    pub users_per_ap: usize,
}

impl Topology {
    pub fn num_aps(&self) -> usize {
        self.ap_positions.len()
    }

    pub fn num_ris(&self) -> usize {
        self.ris_positions.len()
    }

    pub fn num_users(&self) -> usize {
        self.user_positions.len()
    }

    pub fn users_of_ap(&self, ap: usize) -> std::ops::Range<usize> {
        ap * self.users_per_ap..(ap + 1) * self.users_per_ap
    }

    /// Checks that every user maps to one AP and that RIS/AP neighbor
    /// relations mirror each other.
    pub fn check_consistency(&self) -> Result<()> {
        for (u, &ap) in self.ap_of_user.iter().enumerate() {
            if !self.users_of_ap(ap).contains(&u) {
                return Err(Error::InvalidArgument(format!("user {u} outside the block of AP {ap}")));
            }
        }
        for (ap, ris_set) in self.ap_neighbor_ris.iter().enumerate() {
            for &j in ris_set {
                if !self.ris_neighbor_aps[j].contains(&ap) {
                    return Err(Error::InvalidArgument(format!("RIS {j} / AP {ap} neighbor asymmetry")));
                }
            }
        }
        for (j, aps) in self.ris_neighbor_aps.iter().enumerate() {
            for &ap in aps {
                if !self.ap_neighbor_ris[ap].contains(&j) {
                    return Err(Error::InvalidArgument(format!("AP {ap} / RIS {j} neighbor asymmetry")));
                }
            }
        }
        Ok(())
    }

    /// Writes the topology as pretty JSON for inspection.
    pub fn dump(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Places APs on the ceiling (one per cell along the room length), RISs on
/// the two long walls and users uniformly inside the cell of their AP.
pub fn build_topology<R: Rng + ?Sized>(config: &NetworkConfig, rng: &mut R) -> Result<Topology> {
    config.validate()?;
    let m = config.num_aps;
    let cell = config.room_length_m / m as f64;
    let width = config.room_width_m;

    let ap_positions: Vec<Point> = (0..m)
        .map(|i| [(i as f64 + 0.5) * cell, width / 2.0, config.ap_height_m])
        .collect();
    let ris_positions: Vec<Point> = (0..config.num_ris)
        .map(|j| {
            let x = (j as f64 + 0.5) * config.room_length_m / config.num_ris as f64;
            let y = if j % 2 == 0 { 0.0 } else { width };
            [x, y, config.ris_height_m]
        })
        .collect();

    let k = config.users_per_ap();
    let mut user_positions = Vec::with_capacity(m * k);
    let mut user_kind = Vec::with_capacity(m * k);
    let mut ap_of_user = Vec::with_capacity(m * k);
    for ap in 0..m {
        for local in 0..k {
            let x = (ap as f64 + rng.random::<f64>()) * cell;
            let y = rng.random::<f64>() * width;
            user_positions.push([x, y, config.user_height_m]);
            user_kind.push(if local < config.se_users_per_ap { UserKind::Se } else { UserKind::Iot });
            ap_of_user.push(ap);
        }
    }

    let within = |a: &Point, b: &Point| distance(a, b) <= config.neighbor_distance_m;
    let ap_neighbor_ris: Vec<Vec<usize>> = ap_positions
        .iter()
        .map(|a| (0..ris_positions.len()).filter(|&j| within(a, &ris_positions[j])).collect())
        .collect();
    let ris_neighbor_aps: Vec<Vec<usize>> = ris_positions
        .iter()
        .map(|r| (0..m).filter(|&i| within(&ap_positions[i], r)).collect())
        .collect();
    let ap_neighbor_aps: Vec<Vec<usize>> = (0..m)
        .map(|i| (0..m).filter(|&o| o != i && within(&ap_positions[i], &ap_positions[o])).collect())
        .collect();

    let topo = Topology {
        ap_positions,
        ris_positions,
        user_positions,
        user_kind,
        ap_of_user,
        ap_neighbor_ris,
        ap_neighbor_aps,
        ris_neighbor_aps,
        users_per_ap: k,
    };
    topo.check_consistency()?;
    Ok(topo)
}
