use std::f64::consts::PI;

use nalgebra::DVector;
use num_complex::Complex64;

use crate::config::ZfCenters;
use crate::error::{Error, Result};
use crate::phy::{CMat, CRow};

pub type CVec = DVector<Complex64>;

/// Gram matrices with a condition number above this get diagonal loading.
pub const ZF_CONDITION_LIMIT: f64 = 1e12;

/// Index `ϖ ∈ {0, …, 2^B − 1}` whose phasor `e^{j2πϖ/2^B}` is closest to the
/// unit phasor of `h`. A zero entry maps to 0.
pub fn quantized_phase_index(h: Complex64, bits: u32) -> u32 {
    let norm = h.norm();
    if norm == 0.0 {
        return 0;
    }
    let target = h / norm;
    let levels = 1u32 << bits;
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for w in 0..levels {
        let d = (Complex64::from_polar(1.0, 2.0 * PI * w as f64 / levels as f64) - target).norm();
        if d < best_dist {
            best_dist = d;
            best = w;
        }
    }
    best
}

/// Sub-connected analog beamformer (N_A × N_R). Column `n` is nonzero only
/// on subarray `n`, where element `i` is `e^{−j2πϖ/2^B} / √N_sub` with `ϖ`
/// quantizing the phase of head `n`'s channel at that antenna.
pub fn analog_beamformer(heads: &[CRow], n_sub: usize, bits: u32) -> Result<CMat> {
    let n_r = heads.len();
    let n_a = n_r * n_sub;
    if let Some(h) = heads.iter().find(|h| h.len() != n_a) {
        return Err(Error::Dimension(format!("head channel 1×{} for {n_r} subarrays of {n_sub}", h.len())));
    }
    let amp = 1.0 / (n_sub as f64).sqrt();
    let levels = (1u32 << bits) as f64;
    let mut v = CMat::zeros(n_a, n_r);
    for (n, h) in heads.iter().enumerate() {
        for i in 0..n_sub {
            let a = n * n_sub + i;
            let w = quantized_phase_index(h[a], bits);
            v[(a, n)] = Complex64::from_polar(amp, -2.0 * PI * w as f64 / levels);
        }
    }
    Ok(v)
}

/// Zero-forcing result for one AP.
#[derive(Debug, Clone, PartialEq)]
pub struct DigitalBeamformer {
    /// One N_R × 1 precoder per cluster, normalized so that `‖V w_n‖ = 1`.
    pub columns: Vec<CVec>,
    /// Set when the Gram matrix needed diagonal loading.
    pub regularized: bool,
}

/// ZF precoders from cluster centers (rows, 1 × N_A each) and the analog
/// beamformer `V`.
pub fn zf_digital_beamformer(centers: &[CRow], analog: &CMat, mode: ZfCenters) -> Result<DigitalBeamformer> {
    let n_r = centers.len();
    let n_a = analog.nrows();
    if analog.ncols() != n_r {
        return Err(Error::Dimension(format!("{n_r} centers for an N_A×{} analog beamformer", analog.ncols())));
    }
    if let Some(c) = centers.iter().find(|c| c.len() != n_a) {
        return Err(Error::Dimension(format!("center 1×{} against {n_a} antennas", c.len())));
    }
    if n_r == 0 {
        return Ok(DigitalBeamformer { columns: vec![], regularized: false });
    }
    let raw = CMat::from_fn(n_r, n_a, |r, c| centers[r][c]);
    let h = match mode {
        ZfCenters::Composed => &raw * analog,
        ZfCenters::Raw => raw,
    };
    let (inv, regularized) = regularized_inverse(&(&h * h.adjoint()))?;
    let mut w = h.adjoint() * inv;
    if mode == ZfCenters::Raw {
        w = analog.adjoint() * w;
    }
    let mut columns = Vec::with_capacity(n_r);
    for n in 0..n_r {
        let col: CVec = w.column(n).into_owned();
        let norm = (analog * &col).norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::InvalidArgument(format!("zero-forcing column {n} has zero norm")));
        }
        columns.push(col / Complex64::new(norm, 0.0));
    }
    Ok(DigitalBeamformer { columns, regularized })
}

fn regularized_inverse(gram: &CMat) -> Result<(CMat, bool)> {
    let n = gram.nrows();
    let sv = gram.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    let trace: f64 = (0..n).map(|i| gram[(i, i)].re).sum();
    if !(trace > 0.0) {
        return Err(Error::InvalidArgument("zero-forcing on all-zero cluster centers".into()));
    }
    let ill = !(min > 0.0) || max / min > ZF_CONDITION_LIMIT;
    let mut g = gram.clone();
    if ill {
        let eps = 1e-8 * trace / n as f64;
        log::warn!("zero-forcing Gram matrix ill-conditioned (σmax/σmin = {:.3e}), loading with {eps:.3e}", max / min);
        for i in 0..n {
            g[(i, i)] += Complex64::new(eps, 0.0);
        }
    }
    let inv = g
        .try_inverse()
        .ok_or_else(|| Error::InvalidArgument("zero-forcing Gram matrix is singular".into()))?;
    Ok((inv, ill))
}

/// Effective channel gain `|h V w|²` of a row channel through one beam `V w`.
pub fn beam_gain(h: &CRow, beam: &CVec) -> f64 {
    h.iter().zip(beam.iter()).map(|(a, b)| a * b).sum::<Complex64>().norm_sqr()
}
