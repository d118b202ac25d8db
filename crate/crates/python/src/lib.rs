//! Python bindings. Configs and reports cross the boundary as JSON strings.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use ssmctl_core::artifacts::{execute, resolve_base, Command};
use ssmctl_core::config::{ExperimentConfig, PRESETS};
use ssmctl_core::pipeline::{self, Stage, StageError};
use ssmctl_core::ssm::ReducedModel;

create_exception!(ssmctl, SsmctlError, PyException, "Stage-tagged failure; the message is a JSON report.");

fn stage_err(e: StageError) -> PyErr {
    SsmctlError::new_err(e.report().to_string())
}

fn config_err(e: ssmctl_core::error::Error) -> PyErr {
    stage_err(StageError::new(Stage::Config, e))
}

fn parse(config: &str) -> PyResult<ExperimentConfig> {
    ExperimentConfig::from_json(config).map_err(config_err)
}

fn json<T: serde::Serialize>(v: &T) -> PyResult<String> {
    serde_json::to_string(v).map_err(|e| SsmctlError::new_err(e.to_string()))
}

#[pyfunction]
fn presets() -> Vec<&'static str> {
    PRESETS.to_vec()
}

/// Config JSON of a named preset.
#[pyfunction]
fn preset_config(name: &str) -> PyResult<String> {
    json(&ExperimentConfig::preset(name).map_err(config_err)?)
}

#[pyfunction]
fn config_hash(config: &str) -> PyResult<String> {
    Ok(parse(config)?.hash())
}

/// Spectral analysis report as JSON.
#[pyfunction]
fn analyze(config: &str) -> PyResult<String> {
    json(&pipeline::analyze(&parse(config)?).map_err(stage_err)?)
}

/// Runs CMA-ES on the reduced model; returns the synthesis report as JSON.
#[pyfunction]
fn synthesize(py: Python<'_>, config: &str) -> PyResult<String> {
    let cfg = parse(config)?;
    let syn = py.detach(|| pipeline::synthesize_controller(&cfg)).map_err(stage_err)?;
    json(&syn.report())
}

/// Closed-loop comparison report as JSON (synthesizes first when the config
/// has no `controller_params`).
#[pyfunction]
fn simulate(py: Python<'_>, config: &str) -> PyResult<String> {
    let cfg = parse(config)?;
    let (sim, _) = py.detach(|| pipeline::simulate(&cfg)).map_err(stage_err)?;
    json(&sim.report)
}

/// Runs a CLI command with artifacts; returns `(run_dir, summary_json)`.
#[pyfunction]
#[pyo3(signature = (command, config, out_dir=None))]
fn run(py: Python<'_>, command: &str, config: &str, out_dir: Option<PathBuf>) -> PyResult<(PathBuf, String)> {
    let cmd = match command {
        "analyze" => Command::Analyze,
        "reduce" => Command::Reduce,
        "synthesize" => Command::Synthesize,
        "simulate" => Command::Simulate,
        "sweep" => Command::Sweep,
        "pipeline" => Command::Pipeline,
        other => {
            return Err(config_err(ssmctl_core::error::Error::Config(format!("unknown command '{other}'"))));
        }
    };
    let cfg = parse(config)?;
    let base = resolve_base(out_dir.as_deref(), &cfg);
    let (dir, summary) = py.detach(|| execute(cmd, &cfg, &base)).map_err(stage_err)?;
    Ok((dir, summary.to_string()))
}

/// Solved reduced model for a config and optional controller coefficients.
#[pyclass(frozen)]
struct Model {
    inner: ReducedModel,
}

#[pymethods]
impl Model {
    #[new]
    #[pyo3(signature = (config, params=None))]
    fn new(config: &str, params: Option<Vec<f64>>) -> PyResult<Self> {
        let mut cfg = parse(config)?;
        if params.is_some() {
            cfg.controller_params = params;
        }
        let r = pipeline::reduce(&cfg).map_err(stage_err)?;
        Ok(Self { inner: r.model })
    }

    #[getter]
    fn reduced_dim(&self) -> usize {
        self.inner.reduced_dim()
    }

    #[getter]
    fn omega(&self) -> f64 {
        self.inner.omega()
    }

    fn lift(&self, q: Vec<f64>, phi: f64) -> PyResult<Vec<f64>> {
        Ok(self.inner.lift(&q, phi).map_err(config_err)?.x)
    }

    fn reduced_rhs(&self, q: Vec<f64>, phi: f64) -> PyResult<Vec<f64>> {
        Ok(self.inner.reduced_rhs(&q, phi).map_err(config_err)?.0)
    }

    fn project(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.project(&x).map_err(config_err)
    }

    fn residual(&self, q: Vec<f64>, phi: f64) -> PyResult<f64> {
        Ok(self.inner.invariance_residual(&[(q, phi)]).map_err(config_err)?[0])
    }

    /// Coefficient bundles as JSON.
    fn to_json(&self) -> PyResult<String> {
        json(&self.inner.to_json())
    }
}

#[pymodule]
pub fn ssmctl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SsmctlError", m.py().get_type::<SsmctlError>())?;
    m.add("__version__", ssmctl_core::artifacts::VERSION)?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(presets, m)?)?;
    m.add_function(wrap_pyfunction!(preset_config, m)?)?;
    m.add_function(wrap_pyfunction!(config_hash, m)?)?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
