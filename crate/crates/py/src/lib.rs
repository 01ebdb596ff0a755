//! Python bindings. Structured results cross the boundary as JSON and come
//! out as plain dicts and lists.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use ris_noma::env::{Environment, JointAction};
use ris_noma::gevdac::TrainOptions;
use ris_noma::harness::{no_ris_action, run_algorithm, Algorithm, ExperimentConfig, Preset};
use ris_noma::link::PowerAction;
use ris_noma::phy::RisAction;

fn err(e: ris_noma::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn experiment(preset: &str, episode_len: Option<usize>, config: Option<&str>) -> PyResult<ExperimentConfig> {
    let mut cfg = match config {
        Some(text) => {
            let kv = ris_noma::config::KeyValues::parse(text).map_err(err)?;
            ExperimentConfig::from_key_values(&kv).map_err(err)?
        }
        None => ExperimentConfig::with_preset(preset.parse::<Preset>().map_err(err)?),
    };
    if let Some(t) = episode_len {
        cfg.env.episode_len = t;
    }
    cfg.validate().map_err(err)?;
    Ok(cfg)
}

/// Path loss in dB (negative) at `freq_hz`, `distance_m` and absorption
/// coefficient `absorption` per metre.
#[pyfunction]
fn path_loss_db(freq_hz: f64, distance_m: f64, absorption: f64) -> PyResult<f64> {
    ris_noma::phy::path_loss_db(freq_hz, distance_m, absorption).map_err(err)
}

/// One simulated network with its queues.
#[pyclass(module = "ris_noma_py")]
struct Env {
    inner: Environment,
}

#[pymethods]
impl Env {
    #[new]
    #[pyo3(signature = (preset = "tiny", seed = 0, episode_len = None, config = None))]
    fn new(preset: &str, seed: u64, episode_len: Option<usize>, config: Option<&str>) -> PyResult<Self> {
        let cfg = experiment(preset, episode_len, config)?;
        Ok(Self { inner: cfg.make_env(seed).map_err(err)? })
    }

    #[getter]
    fn num_users(&self) -> usize {
        self.inner.net.total_users()
    }

    #[getter]
    fn num_ris(&self) -> usize {
        self.inner.net.num_ris
    }

    #[getter]
    fn ris_elements(&self) -> usize {
        self.inner.net.ris_elements
    }

    #[getter]
    fn done(&self) -> bool {
        self.inner.done()
    }

    #[pyo3(signature = (seed = None))]
    fn reset(&mut self, seed: Option<u64>) -> PyResult<()> {
        match seed {
            Some(s) => self.inner.reset_with_seed(s),
            None => self.inner.reset(),
        }
        .map_err(err)
    }

    fn global_state(&self) -> Vec<f64> {
        self.inner.global_state()
    }

    /// Advances one slot. `power` is per user in W; `ris_on` and
    /// `ris_phase` hold one list per RIS. Without RIS arguments every
    /// element is off. Returns the slot record as a dict.
    #[pyo3(signature = (power, ris_on = None, ris_phase = None))]
    fn step<'py>(
        &mut self,
        py: Python<'py>,
        power: Vec<f64>,
        ris_on: Option<Vec<Vec<bool>>>,
        ris_phase: Option<Vec<Vec<u32>>>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let net = &self.inner.net;
        let ris = match (ris_on, ris_phase) {
            (Some(on), Some(phase)) => {
                on.into_iter().zip(phase).map(|(on_off, phase_index)| RisAction { on_off, phase_index }).collect()
            }
            (None, None) => vec![RisAction::all_off(net.ris_elements); net.num_ris],
            _ => return Err(PyValueError::new_err("ris_on and ris_phase go together")),
        };
        let action = JointAction { power: PowerAction { alloc: power }, ris };
        let out = self.inner.step(action).map_err(err)?;
        to_py(py, &out)
    }

    /// Steps with an equal power split and every RIS element off.
    fn step_baseline<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let out = self.inner.step(no_ris_action(&self.inner.net)).map_err(err)?;
        to_py(py, &out)
    }
}

/// Trains or runs `algorithm` and returns its learning curve and final
/// test metrics.
#[pyfunction]
#[pyo3(signature = (algorithm = "gevdac", preset = "tiny", seed = 0, episodes = 10, episode_len = None, config = None))]
fn run<'py>(
    py: Python<'py>,
    algorithm: &str,
    preset: &str,
    seed: u64,
    episodes: usize,
    episode_len: Option<usize>,
    config: Option<&str>,
) -> PyResult<Bound<'py, PyAny>> {
    let mut cfg = experiment(preset, episode_len, config)?;
    cfg.train.episodes = episodes;
    let alg: Algorithm = algorithm.parse().map_err(err)?;
    let opts = TrainOptions { curve_csv: None, failure_checkpoint: None };
    let r = py.detach(|| run_algorithm(&cfg, alg, seed, &opts)).map_err(err)?;
    let out = serde_json::json!({
        "algorithm": alg.name(),
        "seed": seed,
        "curve": r.curve,
        "final_test": r.final_test,
        "oracle": r.oracle,
    });
    to_py(py, &out)
}

#[pymodule]
fn ris_noma_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(path_loss_db, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_class::<Env>()?;
    Ok(())
}
