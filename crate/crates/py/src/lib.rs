//! Python bindings exposing the value model, synthetic curve generation, and
//! the experiment harness.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use o2o_select::envsim::CurveFamily;
use o2o_select::error::Error;
use o2o_select::harness::{emit_report, run_experiment, ExperimentConfig, ReportFormat};
use o2o_select::valuemodel::{self, ValueSeries};

fn to_py_err(err: Error) -> PyErr {
    match err {
        Error::Precondition(_) | Error::Input(_) | Error::Format(_) | Error::Validation(_) => {
            PyValueError::new_err(err.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// Fit an AR(2)-ARCH(1) model to a value series by two-stage least squares.
#[pyfunction]
fn fit_ar_arch(py: Python<'_>, values: Vec<f64>) -> PyResult<Py<PyDict>> {
    let series = ValueSeries::from_values(0, values).map_err(to_py_err)?;
    let params = valuemodel::fit_ar_arch(&series).map_err(to_py_err)?;
    let dict = PyDict::new(py);
    dict.set_item("beta0", params.beta0)?;
    dict.set_item("beta1", params.beta1)?;
    dict.set_item("beta2", params.beta2)?;
    dict.set_item("alpha0", params.alpha0)?;
    dict.set_item("alpha1", params.alpha1)?;
    dict.set_item("fallback_used", params.fallback_used)?;
    Ok(dict.into())
}

/// Fit, simulate forward paths, and return per-step UCBs plus the max-UCB.
#[pyfunction]
#[pyo3(signature = (values, horizon, paths=100, quantile=0.95, seed=0))]
fn forecast_ucb(
    py: Python<'_>,
    values: Vec<f64>,
    horizon: usize,
    paths: usize,
    quantile: f64,
    seed: u64,
) -> PyResult<Py<PyDict>> {
    let series = ValueSeries::from_values(0, values).map_err(to_py_err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let result =
        valuemodel::forecast_ucb(&series, horizon, paths, quantile, &mut rng).map_err(to_py_err)?;
    let dict = PyDict::new(py);
    dict.set_item("horizon", result.horizon)?;
    dict.set_item("ucb_per_step", result.ucb_per_step)?;
    dict.set_item("max_ucb", result.max_ucb)?;
    dict.set_item("num_paths", result.num_paths)?;
    dict.set_item("quantile", result.quantile)?;
    Ok(dict.into())
}

/// Nearest-rank percentile of a sequence.
#[pyfunction]
fn percentile(values: Vec<f64>, q: f64) -> PyResult<f64> {
    valuemodel::percentile(&values, q).map_err(to_py_err)
}

/// Generate a synthetic true-value curve from a family declared as JSON,
/// e.g. `{"family": "PLATEAU", "level": 0.5}`.
#[pyfunction]
fn synth_curve(family_json: &str, length: usize, seed: u64) -> PyResult<Vec<f64>> {
    let family: CurveFamily =
        serde_json::from_str(family_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let curve = o2o_select::envsim::synth_curve(&family, 0, length, seed).map_err(to_py_err)?;
    Ok(curve.values)
}

/// Run the full strategy comparison described by an experiment config JSON
/// document and return the rendered report.
#[pyfunction]
#[pyo3(signature = (config_json, format="markdown"))]
fn run_compare(config_json: &str, format: &str) -> PyResult<String> {
    let config = ExperimentConfig::from_json(config_json).map_err(to_py_err)?;
    let format: ReportFormat = format.parse().map_err(to_py_err)?;
    let report = run_experiment(&config).map_err(to_py_err)?;
    emit_report(&report, format).map_err(to_py_err)
}

#[pymodule]
fn o2o_select_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(fit_ar_arch, m)?)?;
    m.add_function(wrap_pyfunction!(forecast_ucb, m)?)?;
    m.add_function(wrap_pyfunction!(percentile, m)?)?;
    m.add_function(wrap_pyfunction!(synth_curve, m)?)?;
    m.add_function(wrap_pyfunction!(run_compare, m)?)?;
    Ok(())
}
