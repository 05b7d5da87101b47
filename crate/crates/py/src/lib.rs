//! Python bindings: records, correlations, the heat-balance solver, dataset
//! utilities, metrics and single experiments.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use chf_hybrid::correlations::{self, BaseModelKind};
use chf_hybrid::dataset;
use chf_hybrid::evalsuite::{self, MetricsReport, PredictionSet};
use chf_hybrid::hybrid::{self, ExperimentConfig, HbmCache};
use chf_hybrid::properties;
use chf_hybrid::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Range { .. }
        | Error::Precondition(_)
        | Error::Schema(_)
        | Error::Parse { .. }
        | Error::Config(_)
        | Error::Size(_)
        | Error::Shape(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn base_kind(name: &str) -> PyResult<BaseModelKind> {
    name.parse().map_err(to_py)
}

/// One CHF measurement in SI-ish units (m, MPa, kg/m2/s, kJ/kg, kW/m2).
#[pyclass(name = "ChfRecord", from_py_object)]
#[derive(Clone)]
pub struct PyChfRecord {
    inner: correlations::ChfRecord,
}

#[pymethods]
impl PyChfRecord {
    #[new]
    #[pyo3(signature = (diameter, heated_length, pressure, mass_flux, inlet_subcooling, outlet_quality, chf, inlet_temperature=None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        diameter: f64,
        heated_length: f64,
        pressure: f64,
        mass_flux: f64,
        inlet_subcooling: f64,
        outlet_quality: f64,
        chf: f64,
        inlet_temperature: Option<f64>,
    ) -> Self {
        Self {
            inner: correlations::ChfRecord {
                diameter,
                heated_length,
                pressure,
                mass_flux,
                inlet_subcooling,
                inlet_temperature,
                outlet_quality,
                chf,
            },
        }
    }

    #[getter]
    fn diameter(&self) -> f64 {
        self.inner.diameter
    }
    #[getter]
    fn heated_length(&self) -> f64 {
        self.inner.heated_length
    }
    #[getter]
    fn pressure(&self) -> f64 {
        self.inner.pressure
    }
    #[getter]
    fn mass_flux(&self) -> f64 {
        self.inner.mass_flux
    }
    #[getter]
    fn inlet_subcooling(&self) -> f64 {
        self.inner.inlet_subcooling
    }
    #[getter]
    fn inlet_temperature(&self) -> Option<f64> {
        self.inner.inlet_temperature
    }
    #[getter]
    fn outlet_quality(&self) -> f64 {
        self.inner.outlet_quality
    }
    #[getter]
    fn chf(&self) -> f64 {
        self.inner.chf
    }

    fn __repr__(&self) -> String {
        let r = &self.inner;
        format!(
            "ChfRecord(D={}, L={}, P={}, G={}, dh_sub={}, x_e={}, chf={})",
            r.diameter, r.heated_length, r.pressure, r.mass_flux, r.inlet_subcooling, r.outlet_quality, r.chf
        )
    }
}

fn unwrap_records(records: &[PyChfRecord]) -> Vec<correlations::ChfRecord> {
    records.iter().map(|r| r.inner).collect()
}

fn wrap_records(records: Vec<correlations::ChfRecord>) -> Vec<PyChfRecord> {
    records.into_iter().map(|inner| PyChfRecord { inner }).collect()
}

/// Predictive distribution of one point.
#[pyclass(name = "PredictionSet", from_py_object)]
#[derive(Clone)]
pub struct PyPredictionSet {
    inner: PredictionSet,
}

#[pymethods]
impl PyPredictionSet {
    #[staticmethod]
    fn from_samples(samples: Vec<f64>) -> Self {
        Self { inner: PredictionSet::from_samples(samples) }
    }

    #[staticmethod]
    fn from_moments(mean: f64, std: f64) -> Self {
        Self { inner: PredictionSet::from_moments(mean, std) }
    }

    #[getter]
    fn mean(&self) -> f64 {
        self.inner.mean
    }
    #[getter]
    fn std(&self) -> f64 {
        self.inner.std
    }
    #[getter]
    fn rstd(&self) -> f64 {
        self.inner.rstd
    }
    #[getter]
    fn interval_2sigma(&self) -> (f64, f64) {
        self.inner.interval_2sigma
    }
    #[getter]
    fn samples(&self) -> Vec<f64> {
        self.inner.samples.clone()
    }

    fn shifted(&self, offset: f64) -> Self {
        Self { inner: self.inner.shifted(offset) }
    }

    fn __repr__(&self) -> String {
        format!("PredictionSet(mean={}, std={}, rstd={})", self.inner.mean, self.inner.std, self.inner.rstd)
    }
}

fn metrics_dict<'py>(py: Python<'py>, m: &MetricsReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("mu_error", m.mu_error)?;
    d.set_item("max_error", m.max_error)?;
    d.set_item("mean_rstd", m.mean_rstd)?;
    d.set_item("max_rstd", m.max_rstd)?;
    d.set_item("rrmse", m.rrmse)?;
    d.set_item("f_gt10", m.f_gt10)?;
    d.set_item("r2", m.r2)?;
    Ok(d)
}

/// Saturation properties at `pressure` MPa as a dict.
#[pyfunction]
fn saturation_props(py: Python<'_>, pressure: f64) -> PyResult<Bound<'_, PyDict>> {
    let p = properties::saturation_props(pressure).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("pressure", p.pressure)?;
    d.set_item("t_sat", p.t_sat)?;
    d.set_item("h_f", p.h_f)?;
    d.set_item("h_g", p.h_g)?;
    d.set_item("h_fg", p.h_fg)?;
    Ok(d)
}

#[pyfunction]
fn biasi_chf(diameter: f64, pressure: f64, mass_flux: f64, quality: f64) -> PyResult<f64> {
    correlations::biasi_chf(diameter, pressure, mass_flux, quality).map_err(to_py)
}

#[pyfunction]
fn bowring_chf(diameter: f64, heated_length: f64, pressure: f64, mass_flux: f64, inlet_subcooling: f64) -> PyResult<f64> {
    correlations::bowring_chf(diameter, heated_length, pressure, mass_flux, inlet_subcooling).map_err(to_py)
}

/// Self-consistent CHF of `record` under base correlation `base` ("biasi" or "bowring").
#[pyfunction]
fn hbm_solve(record: PyChfRecord, base: &str) -> PyResult<f64> {
    correlations::hbm_solve(base_kind(base)?, &record.inner).map_err(to_py)
}

/// Stand-alone correlation metrics over `records`.
#[pyfunction]
fn baseline_metrics<'py>(py: Python<'py>, records: Vec<PyChfRecord>, base: &str) -> PyResult<Bound<'py, PyDict>> {
    let m = correlations::baseline_metrics(base_kind(base)?, &unwrap_records(&records)).map_err(to_py)?;
    metrics_dict(py, &m)
}

#[pyfunction]
#[pyo3(signature = (n, seed, base="biasi", noise_rel=0.05))]
fn synth_generate(n: usize, seed: u64, base: &str, noise_rel: f64) -> PyResult<Vec<PyChfRecord>> {
    Ok(wrap_records(dataset::synth_generate(n, seed, base_kind(base)?, noise_rel).map_err(to_py)?))
}

#[pyfunction]
fn load_csv(path: PathBuf) -> PyResult<Vec<PyChfRecord>> {
    Ok(wrap_records(dataset::load_csv(&path).map_err(to_py)?))
}

#[pyfunction]
fn write_csv(path: PathBuf, records: Vec<PyChfRecord>) -> PyResult<()> {
    dataset::write_csv(&path, &unwrap_records(&records)).map_err(to_py)
}

/// Records inside the dryout validity ranges.
#[pyfunction]
fn filter_do(records: Vec<PyChfRecord>) -> Vec<PyChfRecord> {
    wrap_records(dataset::filter_do(&unwrap_records(&records), &dataset::FilterCriteria::default()))
}

/// Shuffled (train, val, test) index lists.
#[pyfunction]
#[pyo3(signature = (n, seed, fractions=(0.8, 0.1, 0.1)))]
fn shuffle_split(n: usize, seed: u64, fractions: (f64, f64, f64)) -> PyResult<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    let s = dataset::shuffle_split_n(n, fractions, seed).map_err(to_py)?;
    Ok((s.train_idx, s.val_idx, s.test_idx))
}

/// Accuracy/uncertainty metrics; `stds` defaults to point predictions.
#[pyfunction]
#[pyo3(signature = (y_true, means, stds=None))]
fn metrics<'py>(py: Python<'py>, y_true: Vec<f64>, means: Vec<f64>, stds: Option<Vec<f64>>) -> PyResult<Bound<'py, PyDict>> {
    let preds = prediction_sets(&means, stds.as_deref())?;
    let m = evalsuite::metrics(&y_true, &preds).map_err(to_py)?;
    metrics_dict(py, &m)
}

fn prediction_sets(means: &[f64], stds: Option<&[f64]>) -> PyResult<Vec<PredictionSet>> {
    match stds {
        None => Ok(means.iter().map(|&m| PredictionSet::point(m)).collect()),
        Some(s) if s.len() == means.len() => {
            Ok(means.iter().zip(s).map(|(&m, &s)| PredictionSet::from_moments(m, s)).collect())
        }
        Some(s) => Err(PyValueError::new_err(format!("{} means vs {} stds", means.len(), s.len()))),
    }
}

/// (expected_p, observed_p, miscalibration_area).
#[pyfunction]
#[pyo3(signature = (y_true, means, stds, grid_size=100))]
fn calibration_curve(y_true: Vec<f64>, means: Vec<f64>, stds: Vec<f64>, grid_size: usize) -> PyResult<(Vec<f64>, Vec<f64>, f64)> {
    let preds = prediction_sets(&means, Some(&stds))?;
    let c = evalsuite::calibration_curve(&y_true, &preds, grid_size).map_err(to_py)?;
    Ok((c.expected_p, c.observed_p, c.miscalibration_area))
}

/// Trains and evaluates one configuration.
///
/// `config` is TOML in the shape of a run file's `[experiment]` table, e.g.
/// `method = "bnn"\nbase = "bowring"`. Returns a dict with the manifest
/// metrics and the test-set predictions.
#[pyfunction]
#[pyo3(signature = (records, split, config=""))]
fn run_experiment<'py>(
    py: Python<'py>,
    records: Vec<PyChfRecord>,
    split: (Vec<usize>, Vec<usize>, Vec<usize>),
    config: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = ExperimentConfig::from_toml(config).map_err(to_py)?;
    let records = unwrap_records(&records);
    let split = dataset::DatasetSplit {
        seed: 0,
        fractions_ppm: (0, 0, 0),
        train_idx: split.0,
        val_idx: split.1,
        test_idx: split.2,
    };
    let out = py
        .detach(|| hybrid::run_experiment(&cfg, &records, &split, &HbmCache::new()))
        .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("run_id", &out.manifest.run_id)?;
    d.set_item("metrics", metrics_dict(py, &out.manifest.metrics)?)?;
    d.set_item("n_train", out.manifest.n_train)?;
    d.set_item("test_idx", out.evaluation.test_idx.clone())?;
    d.set_item("y_true", out.evaluation.y_true.clone())?;
    let preds: Vec<PyPredictionSet> = out
        .evaluation
        .predictions
        .iter()
        .map(|p| PyPredictionSet { inner: p.clone() })
        .collect();
    d.set_item("predictions", preds)?;
    d.set_item("miscalibration_area", out.manifest.miscalibration_area)?;
    Ok(d)
}

#[pymodule]
#[pyo3(name = "chf_hybrid")]
fn chf_hybrid_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyChfRecord>()?;
    m.add_class::<PyPredictionSet>()?;
    m.add_function(wrap_pyfunction!(saturation_props, m)?)?;
    m.add_function(wrap_pyfunction!(biasi_chf, m)?)?;
    m.add_function(wrap_pyfunction!(bowring_chf, m)?)?;
    m.add_function(wrap_pyfunction!(hbm_solve, m)?)?;
    m.add_function(wrap_pyfunction!(baseline_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(synth_generate, m)?)?;
    m.add_function(wrap_pyfunction!(load_csv, m)?)?;
    m.add_function(wrap_pyfunction!(write_csv, m)?)?;
    m.add_function(wrap_pyfunction!(filter_do, m)?)?;
    m.add_function(wrap_pyfunction!(shuffle_split, m)?)?;
    m.add_function(wrap_pyfunction!(metrics, m)?)?;
    m.add_function(wrap_pyfunction!(calibration_curve, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add("DEFAULT_MEMBERS", chf_hybrid::ensemble::DEFAULT_MEMBERS)?;
    Ok(())
}
