use std::path::PathBuf;

use mca_core::error::Error;
use mca_core::harness::{commands, ExperimentConfig, Invocation, SolveKind, BENCHMARK_IDS};
use mca_core::mdp::{SampledMdp, TransitionKernel};
use mca_core::solvers::{relative_value_iteration, value_iteration};
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;

fn to_py(err: Error) -> PyErr {
    if err.is_numerical() {
        PyArithmeticError::new_err(err.to_string())
    } else {
        PyValueError::new_err(err.to_string())
    }
}

fn tables(h: f64, kernel: Vec<Vec<Vec<f64>>>, cost: Vec<Vec<f64>>, alpha: f64) -> PyResult<SampledMdp> {
    let kernel = TransitionKernel::from_dense(h, &kernel).map_err(to_py)?;
    SampledMdp::from_tables(kernel, &cost, alpha).map_err(to_py)
}

/// Runs one CLI command against a config file and returns the written paths.
///
/// `command` is one of build-kernel, solve, sweep, rollout, lyapunov, coupling;
/// `kind` picks discounted or average for solve.
#[pyfunction]
#[pyo3(signature = (command, config, seed=None, out=None, kind="discounted"))]
fn run(command: &str, config: PathBuf, seed: Option<u64>, out: Option<PathBuf>, kind: &str) -> PyResult<Vec<String>> {
    let loaded = ExperimentConfig::load(&config).map_err(to_py)?;
    let inv = Invocation::new(loaded, seed, out.as_deref());
    let written = match command {
        "build-kernel" => commands::build_kernels(&inv),
        "solve" => {
            let kind = match kind {
                "discounted" => SolveKind::Discounted,
                "average" => SolveKind::Average,
                other => return Err(PyValueError::new_err(format!("unknown solve kind {other:?}"))),
            };
            commands::solve(&inv, kind)
        }
        "sweep" => commands::sweep(&inv),
        "rollout" => commands::rollout(&inv),
        "lyapunov" => commands::lyapunov(&inv),
        "coupling" => commands::coupling(&inv),
        other => return Err(PyValueError::new_err(format!("unknown command {other:?}"))),
    }
    .map_err(to_py)?;
    Ok(written.into_iter().map(|p| p.display().to_string()).collect())
}

/// Discounted values and greedy policy for explicit tables.
///
/// `kernel[a][i][j]` is the transition matrix of action `a` and `cost[i][a]`
/// the running cost; stage costs are `cost·h` and the discount `exp(-alpha·h)`.
#[pyfunction]
#[pyo3(signature = (h, kernel, cost, alpha, tol=1e-10))]
fn solve_discounted(
    h: f64,
    kernel: Vec<Vec<Vec<f64>>>,
    cost: Vec<Vec<f64>>,
    alpha: f64,
    tol: f64,
) -> PyResult<(Vec<f64>, Vec<usize>)> {
    let mdp = tables(h, kernel, cost, alpha)?;
    let (sol, policy) = value_iteration(&mdp, tol).map_err(to_py)?;
    Ok((sol.values, policy.actions))
}

/// Average cost per unit time, relative values pinned at `anchor`, and policy.
#[pyfunction]
#[pyo3(signature = (h, kernel, cost, tol=1e-10, anchor=0))]
fn solve_average(
    h: f64,
    kernel: Vec<Vec<Vec<f64>>>,
    cost: Vec<Vec<f64>>,
    tol: f64,
    anchor: usize,
) -> PyResult<(f64, Vec<f64>, Vec<usize>)> {
    let mdp = tables(h, kernel, cost, 1.0)?;
    let (sol, policy) = relative_value_iteration(&mdp, tol, anchor).map_err(to_py)?;
    Ok((sol.gain.unwrap_or(f64::NAN), sol.values, policy.actions))
}

/// Registered benchmark ids usable as `model = "..."` in configs.
#[pyfunction]
fn benchmarks() -> Vec<&'static str> {
    BENCHMARK_IDS.to_vec()
}

#[pymodule]
fn mca(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(solve_discounted, m)?)?;
    m.add_function(wrap_pyfunction!(solve_average, m)?)?;
    m.add_function(wrap_pyfunction!(benchmarks, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
