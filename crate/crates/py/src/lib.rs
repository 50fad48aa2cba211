//! Python bindings: exponent tables, single-path runs from a TOML config, the
//! identity battery and the command-line studies.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use snls_core::cli::{self, LoadedConfig, RunConfig, Study};
use snls_core::functionals::{self, Functional};
use snls_core::transforms::{identity_battery, ExponentTable};
use snls_core::Error;

fn to_py(e: Error) -> PyErr {
    match cli::exit_code(&e) {
        cli::exit::CONFIG => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Derived exponents for `(d, alpha, lambda)` as a dict; infinite values are `None`.
#[pyfunction]
#[pyo3(signature = (d, alpha, lam=-1.0))]
fn exponents<'py>(py: Python<'py>, d: usize, alpha: f64, lam: f64) -> PyResult<Bound<'py, PyDict>> {
    let t = ExponentTable::new(d, alpha, lam).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("d", t.d)?;
    out.set_item("alpha", t.alpha)?;
    out.set_item("strauss", t.strauss)?;
    out.set_item("h_power", t.h_power)?;
    out.set_item("q_tilde", t.q_tilde)?;
    out.set_item("theta", t.theta)?;
    out.set_item("p1", t.p1)?;
    out.set_item("q2", t.q2)?;
    Ok(out)
}

/// Runs one path of the configured equation and returns snapshot times, the
/// functional values at those times and the final field as `(re, im)` lists.
#[pyfunction]
#[pyo3(signature = (config, path=0))]
fn simulate<'py>(py: Python<'py>, config: &str, path: usize) -> PyResult<Bound<'py, PyDict>> {
    let c = RunConfig::parse(config).map_err(to_py)?;
    c.validate(Study::Simulate).map_err(to_py)?;
    let setup = c.setup(&PathBuf::from(".")).map_err(to_py)?;
    let traj = py.detach(|| setup.run_path(path)).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("times", traj.series.times().to_vec())?;
    for f in [Functional::Mass, Functional::Hamiltonian, Functional::Virial, Functional::Momentum] {
        let vals = traj
            .series
            .times()
            .iter()
            .zip(traj.series.fields())
            .map(|(t, x)| functionals::evaluate(f, x, *t, setup.nl))
            .collect::<Result<Vec<f64>, _>>()
            .map_err(to_py)?;
        out.set_item(f.name(), vals)?;
    }
    let last = traj.final_field();
    out.set_item("re", last.values().iter().map(|v| v.re).collect::<Vec<_>>())?;
    out.set_item("im", last.values().iter().map(|v| v.im).collect::<Vec<_>>())?;
    out.set_item("shape", vec![setup.grid.n(); setup.grid.dim()])?;
    Ok(out)
}

/// Identity battery on the datum of a config; returns `{name: (value, tolerance, pass)}`.
#[pyfunction]
fn transforms<'py>(py: Python<'py>, config: &str) -> PyResult<Bound<'py, PyDict>> {
    let c = RunConfig::parse(config).map_err(to_py)?;
    c.validate(Study::Transforms).map_err(to_py)?;
    let x0 = c.initial_datum(&PathBuf::from(".")).map_err(to_py)?;
    let checks = identity_battery(&x0, c.problem.alpha).map_err(to_py)?;
    let out = PyDict::new(py);
    for ch in checks {
        out.set_item(ch.name, (ch.value, ch.tolerance, ch.pass))?;
    }
    Ok(out)
}

/// Runs a command-line study (`simulate`, `sweep`, ...) on a config file and
/// returns its exit code.
#[pyfunction]
#[pyo3(signature = (study, config, out=None, seed=None))]
fn run(py: Python<'_>, study: &str, config: PathBuf, out: Option<PathBuf>, seed: Option<u64>) -> PyResult<i32> {
    let study: Study = study.parse().map_err(to_py)?;
    let args = cli::RunArgs {
        config,
        seed,
        out,
        threads: None,
    };
    let loaded: LoadedConfig = cli::load_config(&args).map_err(to_py)?;
    Ok(py.detach(|| cli::run(study, &loaded)))
}

#[pymodule]
fn snls(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", snls_core::VERSION)?;
    m.add_function(wrap_pyfunction!(exponents, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(transforms, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
