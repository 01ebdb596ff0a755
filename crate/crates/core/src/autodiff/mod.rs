//! Tape-based reverse-mode differentiation and the small set of layers the
//! learners are built from.

mod nn;
mod params;
mod tape;

pub use nn::*;
pub use params::*;
pub use tape::*;

use crate::error::{Error, Result};

/// `θ ← θ + rate · g` for every tensor. Nothing is written when any
/// gradient entry is non-finite.
pub fn sgd_update(store: &mut ParamStore, grads: &ParamGrads, rate: f64) -> Result<()> {
    apply_updates(store, &[(grads, rate)])
}

/// Applies `θ ← θ + Σ_k rate_k · g_k` in one pass, so a composite step can
/// mix ascent and descent terms with separate rates.
pub fn apply_updates(store: &mut ParamStore, terms: &[(&ParamGrads, f64)]) -> Result<()> {
    for (g, _) in terms {
        if g.names.len() != store.len() || g.names.iter().zip(store.names()).any(|(a, b)| a != b) {
            return Err(Error::Dimension("gradients do not match the parameter store".into()));
        }
        if let Some(name) = g.first_non_finite() {
            return Err(Error::Diverged(format!("non-finite gradient for {name}")));
        }
    }
    for (i, (_, values)) in store.values_mut().enumerate() {
        for (g, rate) in terms {
            if *rate != 0.0 {
                values.iter_mut().zip(&g.values[i]).for_each(|(v, d)| *v += rate * d);
            }
        }
    }
    Ok(())
}

/// Worst disagreement found by [`check_gradients`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares the tape gradient of the scalar built by `f` with central
/// differences of step `h` for every parameter entry. The relative error is
/// `|a − n| / max(|a|, |n|, floor)`.
pub fn check_gradients<F>(store: &ParamStore, h: f64, floor: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::with_params(store);
        let out = f(&mut tape)?;
        let g = tape.backward(out)?;
        tape.param_grads(&g)
    };
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut tape = Tape::with_params(s);
        let out = f(&mut tape)?;
        Ok(tape.scalar(out))
    };
    let mut probe = store.clone();
    let mut worst = GradCheck { max_rel_err: 0.0, worst_param: String::new(), worst_index: 0, analytic: 0.0, numeric: 0.0 };
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for (ti, name) in names.iter().enumerate() {
        for k in 0..store.get_index(ti).values.len() {
            let orig = store.get_index(ti).values[k];
            probe.get_mut(name).unwrap().values[k] = orig + h;
            let up = eval(&probe)?;
            probe.get_mut(name).unwrap().values[k] = orig - h;
            let down = eval(&probe)?;
            probe.get_mut(name).unwrap().values[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.values[ti][k];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            if err > worst.max_rel_err || worst.worst_param.is_empty() {
                worst = GradCheck { max_rel_err: err, worst_param: name.clone(), worst_index: k, analytic: a, numeric };
            }
        }
    }
    Ok(worst)
}
