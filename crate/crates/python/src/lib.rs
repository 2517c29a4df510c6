//! Python module `dhl`: exponent algebra, pointwise ellipticity, the
//! checkerboard oracle, corrector campaigns and readers for the binary
//! formats written by the command-line tool.

use std::fmt::Display;
use std::fs::File;
use std::io::BufReader;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use dhl_core::exponents::lambda_mu_of_matrix;
use dhl_core::fields::{make_checkerboard, periodize};
use dhl_core::homogenize::{corrector_campaign as run_campaign, effective_coefficient};
use dhl_core::{ExtReal, Family, FieldSpec, MatrixField, ScalarField};

fn value_error(e: impl Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn open(path: &str) -> PyResult<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| PyOSError::new_err(format!("{path}: {e}")))
}

/// Derived exponents; infinite values come back as `math.inf`.
#[pyclass(name = "Exponents", module = "dhl", frozen, get_all)]
struct Exponents {
    d: usize,
    p: f64,
    q: f64,
    p_prime: f64,
    delta: f64,
    s: f64,
    chi: f64,
    p_star: f64,
    q_star: f64,
    kappa: f64,
    sharp_ok: bool,
    classical_ok: bool,
    borderline: bool,
}

#[pymethods]
impl Exponents {
    fn __repr__(&self) -> String {
        format!(
            "Exponents(d={}, p={}, q={}, delta={}, p_star={}, q_star={}, kappa={}, sharp_ok={})",
            self.d, self.p, self.q, self.delta, self.p_star, self.q_star, self.kappa, self.sharp_ok
        )
    }
}

#[pyfunction]
fn derive_exponents(d: usize, p: f64, q: f64) -> PyResult<Exponents> {
    let e = dhl_core::derive_exponents(d, ExtReal::from_f64(p), ExtReal::from_f64(q)).map_err(value_error)?;
    Ok(Exponents {
        d: e.d,
        p: e.p.to_f64(),
        q: e.q.to_f64(),
        p_prime: e.p_prime,
        delta: e.delta,
        s: e.s,
        chi: e.chi,
        p_star: e.p_star,
        q_star: e.q_star.to_f64(),
        kappa: e.kappa.to_f64(),
        sharp_ok: e.sharp_ok,
        classical_ok: e.classical_ok,
        borderline: e.borderline,
    })
}

/// `(λ, μ)` of a row-major `d × d` matrix.
#[pyfunction]
fn lambda_mu(matrix: Vec<f64>, d: usize) -> PyResult<(f64, f64)> {
    let e = lambda_mu_of_matrix(&matrix, d).map_err(value_error)?;
    Ok((e.lambda, e.mu.to_f64()))
}

/// `⨍ a(e₁ + ∇φ₁)·e₁` for the two-phase checkerboard on the unit torus.
#[pyfunction]
#[pyo3(signature = (n, omega1 = 1.0, omega2 = 4.0))]
fn checkerboard_coefficient(py: Python<'_>, n: usize, omega1: f64, omega2: f64) -> PyResult<f64> {
    py.detach(|| {
        let field = periodize(&make_checkerboard(2, n, 1.0, omega1, omega2)?, 1.0)?;
        Ok(effective_coefficient(&field, 0)?[0])
    })
    .map_err(|e: dhl_core::Error| value_error(e))
}

/// Two-dimensional iid mixture campaign; returns per-length means and the
/// curve-level checks.
#[pyfunction]
#[pyo3(signature = (p0, q0, lengths, seeds, direction = 0, resolution = 1))]
fn corrector_campaign<'py>(
    py: Python<'py>,
    p0: f64,
    q0: f64,
    lengths: Vec<usize>,
    seeds: Vec<u64>,
    direction: usize,
    resolution: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let first = *lengths.first().ok_or_else(|| value_error("lengths must not be empty"))?;
    let spec = FieldSpec::new(
        2,
        first,
        first as f64,
        Family::IidParetoMixture { p0: ExtReal::from_f64(p0), q0: ExtReal::from_f64(q0) },
        0,
    );
    let curve = py.detach(|| run_campaign(&spec, &lengths, &seeds, direction, resolution)).map_err(value_error)?;
    let out = PyDict::new(py);
    out.set_item("lengths", curve.summary.iter().map(|s| s.length).collect::<Vec<_>>())?;
    out.set_item("mean_sup", curve.summary.iter().map(|s| s.mean_sup).collect::<Vec<_>>())?;
    out.set_item("mean_l1", curve.summary.iter().map(|s| s.mean_l1).collect::<Vec<_>>())?;
    out.set_item("expected_mu", curve.expected_mu.map(|m| m.to_f64()))?;
    out.set_item("decreasing", curve.mean_sup_decreasing())?;
    out.set_item("energy_bound_pass", curve.energy_bound_pass())?;
    out.set_item("failures", curve.failures())?;
    Ok(out)
}

/// Reads a `DHL1` field file: `(d, n, length, values)`.
#[pyfunction]
fn read_field(path: &str) -> PyResult<(usize, usize, f64, Vec<f64>)> {
    let field = MatrixField::read_from(&mut open(path)?).map_err(value_error)?;
    Ok((field.grid.d, field.grid.n, field.grid.length, field.values().to_vec()))
}

/// Reads a `DHS1` solution file; the box side is not stored in the file.
#[pyfunction]
fn read_solution(path: &str, length: f64) -> PyResult<(usize, usize, f64, Vec<f64>)> {
    let u = ScalarField::read_from(&mut open(path)?, length).map_err(value_error)?;
    Ok((u.grid.d, u.grid.n, u.meta.residual, u.values))
}

#[pymodule]
fn dhl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", dhl_core::VERSION)?;
    m.add_class::<Exponents>()?;
    m.add_function(wrap_pyfunction!(derive_exponents, m)?)?;
    m.add_function(wrap_pyfunction!(lambda_mu, m)?)?;
    m.add_function(wrap_pyfunction!(checkerboard_coefficient, m)?)?;
    m.add_function(wrap_pyfunction!(corrector_campaign, m)?)?;
    m.add_function(wrap_pyfunction!(read_field, m)?)?;
    m.add_function(wrap_pyfunction!(read_solution, m)?)?;
    Ok(())
}
