//! Python bindings: N-functions, meshes and fields as plain lists, the
//! regularized system solve, continuation, the comparison test and
//! config-driven runs.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use philap::comparison::{comparison_test as core_comparison, verdict_label, ComparisonInstance};
use philap::config::RunConfig;
use philap::error::Error;
use philap::expr::Expr;
use philap::grid::{self, DiscreteField};
use philap::nfunction::{self, Complementary};
use philap::solver::{
    continuation_solve, linear_warm_start, newton_solve, NewtonOptions, RegularizationParams, SolverOptions,
};
use philap::system::{Exponents, Structure, SystemSpec};

fn to_py(e: Error) -> PyErr {
    if e.is_solver_failure() {
        PyRuntimeError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn parse_structure(s: &str) -> PyResult<Structure> {
    match s {
        "cooperative" => Ok(Structure::Cooperative),
        "non-cooperative" => Ok(Structure::NonCooperative),
        "mixed" => Ok(Structure::Mixed),
        "general" => Ok(Structure::General),
        other => Err(PyValueError::new_err(format!("unknown structure {other:?}"))),
    }
}

#[pyclass(name = "NFunction", module = "philap_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyNFunction {
    inner: nfunction::NFunction,
}

#[pymethods]
impl PyNFunction {
    /// `Phi(t) = t^p / p`.
    #[staticmethod]
    fn power(p: f64) -> PyResult<Self> {
        nfunction::NFunction::power(p).map(|inner| Self { inner }).map_err(to_py)
    }

    /// `Phi(t) = sum_k t^p_k / p_k`.
    #[staticmethod]
    fn sum_powers(ps: Vec<f64>) -> PyResult<Self> {
        nfunction::NFunction::sum_powers(&ps).map(|inner| Self { inner }).map_err(to_py)
    }

    #[getter]
    fn ell(&self) -> f64 {
        self.inner.ell()
    }

    #[getter]
    fn m(&self) -> f64 {
        self.inner.m()
    }

    fn phi(&self, s: f64) -> f64 {
        self.inner.phi(s)
    }

    fn __call__(&self, t: f64) -> f64 {
        self.inner.eval(t)
    }

    fn conjugate(&self, t: f64) -> PyResult<f64> {
        self.inner.conjugate(t).map_err(to_py)
    }

    /// Audit rows as `(check, worst_margin, pass)`.
    #[pyo3(signature = (zeta_samples = 10000, seed = 0))]
    fn audit(&self, zeta_samples: usize, seed: u64) -> Vec<(String, f64, bool)> {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        nfunction::audit(&self.inner, zeta_samples, &mut rng)
            .into_iter()
            .map(|r| (r.check, r.worst_margin, r.pass))
            .collect()
    }

    fn __repr__(&self) -> String {
        format!("NFunction({})", self.inner.kernel().label())
    }
}

#[pyclass(name = "Mesh", module = "philap_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyMesh {
    inner: Arc<grid::Mesh>,
}

#[pymethods]
impl PyMesh {
    #[staticmethod]
    fn interval(x0: f64, x1: f64, cells: usize) -> PyResult<Self> {
        grid::Mesh::interval(x0, x1, cells).map(|inner| Self { inner }).map_err(to_py)
    }

    #[staticmethod]
    fn rectangle(x0: f64, x1: f64, y0: f64, y1: f64, nx: usize, ny: usize) -> PyResult<Self> {
        grid::Mesh::rectangle(x0, x1, y0, y1, nx, ny).map(|inner| Self { inner }).map_err(to_py)
    }

    #[getter]
    fn n_nodes(&self) -> usize {
        self.inner.n_nodes()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    /// Node coordinates; the second entry is 0 in one dimension.
    fn nodes(&self) -> Vec<(f64, f64)> {
        self.inner.nodes().iter().map(|p| (p[0], p[1])).collect()
    }

    fn boundary_mask(&self) -> Vec<bool> {
        self.inner.boundary_mask().to_vec()
    }

    fn distance(&self) -> Vec<f64> {
        grid::distance_function(&self.inner).into_values()
    }

    fn __repr__(&self) -> String {
        format!("Mesh(dim={}, nodes={})", self.inner.dim(), self.inner.n_nodes())
    }
}

impl PyMesh {
    fn field(&self, values: Vec<f64>) -> PyResult<DiscreteField> {
        DiscreteField::new(self.inner.clone(), values).map_err(to_py)
    }
}

#[pyfunction]
#[pyo3(signature = (nf, mesh, values, on_gradient = false))]
fn luxemburg_norm(nf: &PyNFunction, mesh: &PyMesh, values: Vec<f64>, on_gradient: bool) -> PyResult<f64> {
    grid::luxemburg_norm(&nf.inner, &mesh.field(values)?, on_gradient).map_err(to_py)
}

/// Luxemburg norm with respect to the complementary function.
#[pyfunction]
fn complementary_norm(nf: &PyNFunction, mesh: &PyMesh, values: Vec<f64>) -> PyResult<f64> {
    grid::luxemburg_norm(&Complementary(&nf.inner), &mesh.field(values)?, false).map_err(to_py)
}

#[pyfunction]
fn modular(nf: &PyNFunction, mesh: &PyMesh, values: Vec<f64>) -> PyResult<f64> {
    Ok(grid::modular(&nf.inner, &mesh.field(values)?))
}

/// The coupled system with constant coefficients.
#[pyclass(name = "System", module = "philap_py")]
struct PySystem {
    spec: SystemSpec,
}

fn pair(d: &Bound<'_, PyDict>, key: &str) -> PyResult<[f64; 2]> {
    match d.get_item(key)? {
        None => Ok([0.0; 2]),
        Some(v) => {
            if let Ok(x) = v.extract::<f64>() {
                Ok([x; 2])
            } else {
                v.extract::<(f64, f64)>().map(|(a, b)| [a, b])
            }
        }
    }
}

#[pymethods]
impl PySystem {
    /// `exponents` maps alpha, beta, gamma, sigma to a number or a pair.
    #[new]
    #[pyo3(signature = (nf, mesh, structure, exponents = None, a = 1.0, b = 1.0))]
    fn new(
        nf: &PyNFunction,
        mesh: &PyMesh,
        structure: &str,
        exponents: Option<&Bound<'_, PyDict>>,
        a: f64,
        b: f64,
    ) -> PyResult<Self> {
        let exps = match exponents {
            None => Exponents::default(),
            Some(d) => {
                for key in d.keys() {
                    let k: String = key.extract()?;
                    if !["alpha", "beta", "gamma", "sigma"].contains(&k.as_str()) {
                        return Err(PyValueError::new_err(format!("unknown exponent {k:?}")));
                    }
                }
                Exponents {
                    alpha: pair(d, "alpha")?,
                    beta: pair(d, "beta")?,
                    gamma: pair(d, "gamma")?,
                    sigma: pair(d, "sigma")?,
                }
            }
        };
        let spec = SystemSpec::with_constants(
            nf.inner.clone(),
            mesh.inner.clone(),
            exps,
            [a; 2],
            [b; 2],
            parse_structure(structure)?,
        );
        Ok(Self { spec })
    }

    /// Violated hypotheses as `(name, detail)`.
    fn validate(&self) -> Vec<(String, String)> {
        self.spec
            .validate()
            .violations()
            .map(|f| (f.name.clone(), f.detail.clone()))
            .collect()
    }

    /// One regularized solve from the linear warm start; returns `(u, v)`.
    #[pyo3(signature = (eps, delta = 0.0))]
    fn solve(&self, py: Python<'_>, eps: f64, delta: f64) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let spec = &self.spec;
        py.detach(|| {
            let params = RegularizationParams::new(eps, delta);
            let (u0, v0) = linear_warm_start(spec, &params)?;
            let sol = newton_solve(spec, &params, (&u0, &v0), &NewtonOptions::default())?;
            Ok((sol.u.into_values(), sol.v.into_values()))
        })
        .map_err(to_py)
    }

    /// Runs the default continuation; returns a dict with the stage table
    /// and the final fields.
    fn continuation<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let spec = &self.spec;
        let report = py
            .detach(|| continuation_solve(spec, &SolverOptions::default()))
            .map_err(to_py)?;
        let out = PyDict::new(py);
        let stages: Vec<Bound<'py, PyDict>> = report
            .stages
            .iter()
            .map(|s| {
                let d = PyDict::new(py);
                d.set_item("eps", s.eps)?;
                d.set_item("delta", s.delta)?;
                d.set_item("norm_u", s.norm_u)?;
                d.set_item("norm_v", s.norm_v)?;
                d.set_item("residual", s.residual)?;
                d.set_item("increment", s.increment)?;
                d.set_item("pairing", s.pairing)?;
                d.set_item("c_lower", s.c_lower)?;
                d.set_item("r0", s.r0)?;
                d.set_item("barrier_margin", s.barrier_margin)?;
                Ok(d)
            })
            .collect::<PyResult<_>>()?;
        out.set_item("stages", stages)?;
        out.set_item("increments_monotone", report.increments_monotone())?;
        out.set_item("u", report.solution.u.values().to_vec())?;
        out.set_item("v", report.solution.v.values().to_vec())?;
        Ok(out)
    }
}

/// Checks the comparison principle for `-Delta_Phi u = f(x, u)`; returns a
/// dict with the verdict label and its diagnostics.
#[pyfunction]
#[pyo3(signature = (nf, mesh, f, u1, u2, residual_tol = 1e-8))]
fn comparison_test<'py>(
    py: Python<'py>,
    nf: &PyNFunction,
    mesh: &PyMesh,
    f: &str,
    u1: Vec<f64>,
    u2: Vec<f64>,
    residual_tol: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let f = Expr::parse(f).map_err(to_py)?;
    let mut inst = ComparisonInstance::new(nf.inner.clone(), f, mesh.field(u1)?, mesh.field(u2)?);
    inst.residual_tol = residual_tol;
    let outcome = core_comparison(&inst);
    let d = PyDict::new(py);
    d.set_item("verdict", verdict_label(&outcome))?;
    match &outcome {
        Ok(v) => {
            d.set_item("ratio_bound", v.ratio_bound)?;
            d.set_item("ordering_margin", v.ordering_margin)?;
            d.set_item("pairing", v.pairing)?;
            d.set_item("excluded_points", v.excluded_points)?;
        }
        Err(e) => d.set_item("detail", e.to_string())?,
    }
    Ok(d)
}

/// Runs a TOML config; returns `(exit_code, artifacts_dir, summary)`.
#[pyfunction]
#[pyo3(signature = (path, output_dir = None, check_only = false))]
fn run_config(
    py: Python<'_>,
    path: PathBuf,
    output_dir: Option<PathBuf>,
    check_only: bool,
) -> PyResult<(i32, PathBuf, String)> {
    let mut cfg = RunConfig::from_path(&path).map_err(to_py)?;
    if let Some(dir) = output_dir {
        cfg.output_dir = dir;
    }
    let out = py.detach(|| philap::runner::run(&cfg, check_only));
    Ok((out.exit_code, out.artifacts, out.summary))
}

#[pymodule]
fn philap_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNFunction>()?;
    m.add_class::<PyMesh>()?;
    m.add_class::<PySystem>()?;
    m.add_function(wrap_pyfunction!(luxemburg_norm, m)?)?;
    m.add_function(wrap_pyfunction!(complementary_norm, m)?)?;
    m.add_function(wrap_pyfunction!(modular, m)?)?;
    m.add_function(wrap_pyfunction!(comparison_test, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    Ok(())
}
