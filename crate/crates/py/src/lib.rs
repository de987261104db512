//! Python bindings: `import nll`.

use std::sync::Arc;

use nll_core::cli::{self, CampaignConfig};
use nll_core::gamma::{self, Competitor};
use nll_core::geodesics::{self, GeodesicConfig, TransitionCosts};
use nll_core::grid::{build_grid, AnnulusGrid};
use nll_core::ldg;
use nll_core::solvers::{self, NewtonOptions, SolverConfig};
use nll_core::stability::{self, StabilityConfig};
use nll_core::state::{self, System};
use nll_core::{energy, Error};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn err(e: Error) -> PyErr {
    match e {
        Error::Params(_) | Error::Geometry(_) | Error::Domain(_) | Error::Config(_) | Error::Boundary(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn json_to_py<'py>(py: Python<'py>, v: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (v.to_string(),))
}

fn system_of(name: &str) -> PyResult<System> {
    match name {
        "reduced" => Ok(System::Reduced),
        "full" => Ok(System::Full),
        _ => Err(PyValueError::new_err(format!("system must be 'reduced' or 'full', got {name:?}"))),
    }
}

/// Material constants `A, B, C` and `λ̄²`.
#[pyclass(name = "MaterialParams", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyParams(ldg::MaterialParams);

#[pymethods]
impl PyParams {
    /// Leave `A` and `t_reduced` unset for `A = -B²/(3C)`.
    #[new]
    #[pyo3(signature = (a=None, b=ldg::DEFAULT_B, c=ldg::DEFAULT_C, lambda_bar_sq=ldg::DEFAULT_LAMBDA_BAR_SQ, t_reduced=None))]
    fn new(a: Option<f64>, b: f64, c: f64, lambda_bar_sq: f64, t_reduced: Option<f64>) -> PyResult<Self> {
        let m = cli::MaterialSection { a, t_reduced, b, c, lambda_bar_sq };
        m.params().map(PyParams).map_err(err)
    }

    #[getter]
    fn a(&self) -> f64 {
        self.0.a()
    }
    #[getter]
    fn b(&self) -> f64 {
        self.0.b()
    }
    #[getter]
    fn c(&self) -> f64 {
        self.0.c()
    }
    #[getter]
    fn lambda_bar_sq(&self) -> f64 {
        self.0.lambda_bar_sq()
    }
    #[getter]
    fn s_plus(&self) -> f64 {
        self.0.s_plus()
    }
    #[getter]
    fn t_reduced(&self) -> f64 {
        self.0.t_reduced()
    }

    fn __repr__(&self) -> String {
        format!(
            "MaterialParams(A={}, B={}, C={}, lambda_bar_sq={})",
            self.0.a(),
            self.0.b(),
            self.0.c(),
            self.0.lambda_bar_sq()
        )
    }
}

/// Uniform grid on `[-1, 1]²` minus the square hole of half-side ρ.
#[pyclass(name = "Grid", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyGrid(Arc<AnnulusGrid>);

#[pymethods]
impl PyGrid {
    #[new]
    #[pyo3(signature = (n=129, rho=0.2, eps_corner=4.0))]
    fn new(n: usize, rho: f64, eps_corner: f64) -> PyResult<Self> {
        build_grid(n, rho, eps_corner).map(PyGrid).map_err(err)
    }
    #[getter]
    fn n(&self) -> usize {
        self.0.n()
    }
    #[getter]
    fn h(&self) -> f64 {
        self.0.h()
    }
    #[getter]
    fn rho(&self) -> f64 {
        self.0.spec().rho_snapped
    }
    /// Node coordinates in storage order.
    fn coordinates(&self) -> Vec<(f64, f64)> {
        (0..self.0.len()).map(|i| self.0.xy(i)).collect()
    }
    fn __repr__(&self) -> String {
        format!("Grid(n={}, rho={})", self.0.n(), self.0.spec().rho_snapped)
    }
}

/// Nodal `q` fields on a grid; hole nodes hold 0.
#[pyclass(name = "State", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyState(state::State);

#[pymethods]
impl PyState {
    #[getter]
    fn system(&self) -> &'static str {
        match self.0.system() {
            System::Reduced => "reduced",
            System::Full => "full",
        }
    }
    #[getter]
    fn grid(&self) -> PyGrid {
        PyGrid(self.0.grid().clone())
    }
    /// Values of `q_a` (1-based `a`), or None if the system does not carry it.
    fn component(&self, a: usize) -> Option<Vec<f64>> {
        if a == 0 {
            return None;
        }
        self.0.component(a - 1).map(|f| f.values().to_vec())
    }
    fn to_full(&self) -> PyState {
        PyState(self.0.to_full())
    }
    fn to_reduced(&self) -> PyState {
        PyState(self.0.to_reduced())
    }
    fn energy(&self, params: &PyParams) -> f64 {
        energy::energy(&self.0, &params.0).total
    }
    fn residual(&self, params: &PyParams) -> f64 {
        solvers::residual_max(&self.0, &params.0)
    }
    /// Label and diagnostics as a dict.
    fn classify<'py>(&self, py: Python<'py>, params: &PyParams) -> PyResult<Bound<'py, PyAny>> {
        let info = solvers::classify(&self.0, &params.0);
        json_to_py(py, &serde_json::to_value(info).map_err(|e| err(e.into()))?)
    }
    fn export(&self, directory: &str, prefix: &str) -> PyResult<()> {
        self.0.export(std::path::Path::new(directory), prefix).map_err(err)
    }
}

/// Initial condition `kind` in {wors, bd, esc, escaped, random}.
#[pyfunction]
#[pyo3(signature = (grid, params, kind="wors", orientation=1, eta=None, winding=1, seed=0, system="reduced"))]
#[allow(clippy::too_many_arguments)]
fn initial_state(
    grid: &PyGrid,
    params: &PyParams,
    kind: &str,
    orientation: i8,
    eta: Option<f64>,
    winding: i8,
    seed: u64,
    system: &str,
) -> PyResult<PyState> {
    let sys = system_of(system)?;
    let (g, p) = (&grid.0, &params.0);
    if orientation.abs() != 1 || winding.abs() != 1 {
        return Err(PyValueError::new_err("orientation and winding must be +1 or -1"));
    }
    let s = match kind {
        "wors" => solvers::ic_wors(g, p),
        "bd" => solvers::ic_bd(g, p, orientation),
        "esc" => solvers::ic_esc(g, p, eta.unwrap_or(0.96 - g.spec().rho_snapped)).map_err(err)?,
        "escaped" => return Ok(PyState(solvers::ic_escaped(g, p, winding))),
        "random" => solvers::ic_random(g, p, sys, seed),
        _ => return Err(PyValueError::new_err(format!("unknown initial condition {kind:?}"))),
    };
    Ok(PyState(if sys == System::Full { s.to_full() } else { s }))
}

/// Newton's method; returns `(state, iterations)`.
#[pyfunction]
#[pyo3(signature = (state, params, symmetric=false, tol_rel=None))]
fn newton_solve(
    state: &PyState,
    params: &PyParams,
    symmetric: bool,
    tol_rel: Option<f64>,
) -> PyResult<(PyState, usize)> {
    let mut cfg = SolverConfig::default();
    if let Some(t) = tol_rel {
        cfg.newton_tol_rel = t;
    }
    let opts = if symmetric { NewtonOptions::symmetric(state.0.system()) } else { NewtonOptions::default() };
    let r = solvers::newton_solve(&state.0, &params.0, &cfg, &opts).map_err(err)?;
    Ok((PyState(r.state), r.iterations))
}

/// Gradient flow to steady state or `t_end`; returns `(state, [(t, energy)])`.
#[pyfunction]
#[pyo3(signature = (state, params, dt=None, t_end=None))]
fn gradient_flow(
    state: &PyState,
    params: &PyParams,
    dt: Option<f64>,
    t_end: Option<f64>,
) -> PyResult<(PyState, Vec<(f64, f64)>)> {
    let mut cfg = SolverConfig::default();
    if let Some(d) = dt {
        cfg.dt = d;
    }
    if let Some(t) = t_end {
        cfg.t_end = t;
    }
    let r = solvers::gradient_flow(&state.0, &params.0, &cfg).map_err(err)?;
    Ok((PyState(r.state), r.energies))
}

/// Second-variation verdicts per subspace as a dict.
#[pyfunction]
fn stability_report<'py>(py: Python<'py>, state: &PyState, params: &PyParams) -> PyResult<Bound<'py, PyAny>> {
    let r = stability::stability_report(&state.0.to_reduced(), &params.0, &StabilityConfig::default()).map_err(err)?;
    let entries: Vec<serde_json::Value> = r
        .entries
        .iter()
        .map(|e| {
            serde_json::json!({
                "subspace": e.subspace.name(), "estimate": e.estimate,
                "verdict": e.verdict, "converged": e.converged,
            })
        })
        .collect();
    json_to_py(py, &serde_json::Value::Array(entries))
}

/// `(c1, c2, c3, c4)` for the given material.
#[pyfunction]
#[pyo3(signature = (params, n_path=401))]
fn transition_costs(params: &PyParams, n_path: usize) -> PyResult<(f64, f64, f64, f64)> {
    let c = geodesics::transition_costs(&params.0, &GeodesicConfig::with_nodes(n_path)).map_err(err)?;
    Ok((c.c1, c.c2, c.c3, c.c4))
}

/// Limit energy of `"WORS"`, `"BD"` or `"ESC"` for costs `(c1, c2, c3, c4)`.
#[pyfunction]
#[pyo3(signature = (config, rho, costs, eta=0.0))]
fn j_inf(config: &str, rho: f64, costs: (f64, f64, f64, f64), eta: f64) -> PyResult<f64> {
    let which = match config.to_ascii_uppercase().as_str() {
        "WORS" => Competitor::Wors,
        "BD" => Competitor::Bd,
        "ESC" => Competitor::Esc,
        _ => return Err(PyValueError::new_err(format!("unknown configuration {config:?}"))),
    };
    let c = TransitionCosts::from_values(costs.0, costs.1, costs.2, costs.3);
    gamma::j_inf(which, rho, eta, &c).map_err(err)
}

/// Run a campaign from TOML text; returns the summary dict.
#[pyfunction]
fn run_campaign<'py>(py: Python<'py>, toml: &str) -> PyResult<Bound<'py, PyAny>> {
    let cfg = CampaignConfig::from_toml(toml).map_err(err)?;
    let s = py.detach(|| cli::run(&cfg)).map_err(err)?;
    json_to_py(py, &s.summary)
}

#[pymodule]
fn nll(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyParams>()?;
    m.add_class::<PyGrid>()?;
    m.add_class::<PyState>()?;
    m.add_function(wrap_pyfunction!(initial_state, m)?)?;
    m.add_function(wrap_pyfunction!(newton_solve, m)?)?;
    m.add_function(wrap_pyfunction!(gradient_flow, m)?)?;
    m.add_function(wrap_pyfunction!(stability_report, m)?)?;
    m.add_function(wrap_pyfunction!(transition_costs, m)?)?;
    m.add_function(wrap_pyfunction!(j_inf, m)?)?;
    m.add_function(wrap_pyfunction!(run_campaign, m)?)?;
    Ok(())
}
