//! Python bindings: synthetic corpora, single-session simulation under GCC,
//! the oracle or a trained policy, and a few numerical helpers.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use ratelab::gcc::GccConfig;
use ratelab::learner::{load_model_file, save_model_file, ModelBundle, TrainHyper};
use ratelab::pipeline::{gen_corpus as core_gen_corpus, run_entry, ControllerSpec, CorpusEntry, CorpusSpec};
use ratelab::sim::SimConfig;
use ratelab::telemetry::{Normalizers, StateVector, STATE_LEN};
use ratelab::trace::parse_trace_csv;

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Draws a synthetic corpus. Each entry is a dict with `id`, `csv`,
/// `rtt_ms` and `seed`.
#[pyfunction]
#[pyo3(signature = (n_traces=5, duration_ms=60_000, seed=0))]
fn gen_corpus(py: Python<'_>, n_traces: usize, duration_ms: u64, seed: u64) -> PyResult<Vec<Bound<'_, PyDict>>> {
    let spec = CorpusSpec {
        n_traces,
        duration_ms,
        ..CorpusSpec::default()
    };
    let entries = core_gen_corpus(&spec, seed).map_err(err)?;
    entries
        .iter()
        .map(|e| {
            let d = PyDict::new(py);
            d.set_item("id", &e.trace.id)?;
            d.set_item("csv", e.trace.to_csv())?;
            d.set_item("rtt_ms", e.rtt_ms)?;
            d.set_item("seed", e.seed)?;
            Ok(d)
        })
        .collect()
}

/// Replays one trace (CSV text) and returns its QoE as a dict.
///
/// `controller` is `"gcc"`, `"oracle"` or `"policy"`; the last needs
/// `model_path`.
#[pyfunction]
#[pyo3(signature = (trace_csv, controller="gcc", rtt_ms=100, seed=0, model_path=None))]
fn simulate<'py>(
    py: Python<'py>,
    trace_csv: &str,
    controller: &str,
    rtt_ms: u64,
    seed: u64,
    model_path: Option<PathBuf>,
) -> PyResult<Bound<'py, PyDict>> {
    let spec = match (controller, model_path) {
        ("gcc", None) => ControllerSpec::Gcc(GccConfig::default()),
        ("oracle", None) => ControllerSpec::oracle(GccConfig::default()),
        ("policy", Some(p)) => ControllerSpec::Policy(Box::new(load_model_file(&p).map_err(err)?)),
        ("policy", None) => return Err(err("controller \"policy\" needs model_path")),
        (c, _) => return Err(err(format!("unknown controller {c:?} (or model_path given without \"policy\")"))),
    };
    let entry = CorpusEntry {
        trace: parse_trace_csv("trace", trace_csv).map_err(err)?,
        rtt_ms,
        seed,
        tag: String::new(),
    };
    let log = py.detach(|| run_entry(&spec, &entry, &SimConfig::default())).map_err(err)?;
    let q = ratelab::eval::qoe(&log);
    let d = PyDict::new(py);
    d.set_item("avg_video_bitrate_kbps", q.avg_video_bitrate_kbps)?;
    d.set_item("freeze_rate", q.freeze_rate)?;
    d.set_item("frame_rate_fps", q.frame_rate_fps)?;
    d.set_item("mean_frame_delay_ms", q.mean_frame_delay_ms)?;
    d.set_item("ticks", log.ticks.len())?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (pred, target, kappa=1.0))]
fn quantile_huber_loss(pred: Vec<f64>, target: Vec<f64>, kappa: f64) -> PyResult<f64> {
    if pred.is_empty() || target.is_empty() || !(kappa > 0.0) {
        return Err(err("pred and target must be non-empty and kappa positive"));
    }
    Ok(ratelab::learner::quantile_huber_loss(&pred, &target, kappa))
}

#[pyfunction]
fn ks_statistic(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(err("both samples must be non-empty"));
    }
    Ok(ratelab::telemetry::ks_statistic(&a, &b))
}

/// A trained encoder and actor loaded from a model file.
#[pyclass(frozen)]
struct Policy {
    model: ModelBundle,
}

#[pymethods]
impl Policy {
    #[new]
    fn new(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            model: load_model_file(&path).map_err(err)?.policy_only(),
        })
    }

    /// Freshly initialized weights with the default architecture.
    #[staticmethod]
    #[pyo3(signature = (seed=0))]
    fn untrained(seed: u64) -> Self {
        let hyper = TrainHyper {
            seed,
            ..TrainHyper::default()
        };
        Self {
            model: ModelBundle::new(&hyper, Normalizers::default(), false),
        }
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_model_file(&self.model, false, &path).map_err(err)
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.model.policy_param_count()
    }

    /// Target bitrate in kbps for a flattened, normalized state window.
    fn act(&self, state: Vec<f32>) -> PyResult<f64> {
        let s = StateVector(state);
        if !s.is_valid() {
            return Err(err(format!("state must hold {STATE_LEN} finite values in [0, 1]")));
        }
        Ok(self.model.act_kbps(&s))
    }
}

#[pymodule]
fn ratelab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("STATE_LEN", STATE_LEN)?;
    m.add_function(wrap_pyfunction!(gen_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(quantile_huber_loss, m)?)?;
    m.add_function(wrap_pyfunction!(ks_statistic, m)?)?;
    m.add_class::<Policy>()?;
    Ok(())
}
