//! Python bindings.  Rational values cross the boundary as strings in `p/q`
//! form (decimals are converted exactly), floats stay floats.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use quasicopula::eval2d::axiom_report;
use quasicopula::rational::{format_rational, parse_decimal, parse_rational, Rational};
use quasicopula::{
    apply_transform_nd, box_counting_estimate, encode_pgm, family_r_of_s, family_s_of_r,
    lattice_eval, make_cube_matrix, make_step_matrix, rasterize_support, solve_dim_nd,
    solve_moran, EvaluableNd, FixedPointEvaluator, MinNd, MultiMatrix, OccupancyGrid, PiNd,
    QtMatrix2, Rect,
};

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_rat(s: &str) -> PyResult<Rational> {
    parse_rational(s)
        .or_else(|_| parse_decimal(s))
        .map_err(value_error)
}

/// Order-m quasi-transformation matrix with exact rational entries.
#[pyclass(name = "Matrix2", frozen)]
struct PyMatrix2 {
    inner: QtMatrix2,
}

#[pymethods]
impl PyMatrix2 {
    /// Builds from display rows (top row first), entries as rational or
    /// decimal strings.
    #[new]
    fn new(rows: Vec<Vec<String>>) -> PyResult<Self> {
        let parsed = rows
            .iter()
            .map(|row| row.iter().map(|s| parse_rat(s)).collect())
            .collect::<PyResult<Vec<Vec<Rational>>>>()?;
        let inner = QtMatrix2::from_display_rows(parsed).map_err(value_error)?;
        Ok(PyMatrix2 { inner })
    }

    #[staticmethod]
    fn t0() -> Self {
        PyMatrix2 {
            inner: QtMatrix2::t0(),
        }
    }

    #[staticmethod]
    fn tr(r: &str) -> PyResult<Self> {
        let inner = QtMatrix2::tr(&parse_rat(r)?).map_err(value_error)?;
        Ok(PyMatrix2 { inner })
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        let inner = QtMatrix2::from_text(text).map_err(value_error)?;
        Ok(PyMatrix2 { inner })
    }

    fn order(&self) -> usize {
        self.inner.order()
    }

    /// Entry at 1-based (column, row), rows counted from the bottom.
    fn entry(&self, i: usize, j: usize) -> PyResult<String> {
        let m = self.inner.order();
        if !(1..=m).contains(&i) || !(1..=m).contains(&j) {
            return Err(value_error(format!("cell ({i}, {j}) outside order {m}")));
        }
        Ok(format_rational(self.inner.entry(i, j)))
    }

    fn is_proper(&self) -> bool {
        self.inner.is_proper()
    }

    fn self_similar(&self) -> bool {
        self.inner.self_similarity().holds
    }

    /// Column and row partitions as rational strings, both from 0 to 1.
    fn partitions(&self) -> (Vec<String>, Vec<String>) {
        let pp = self.inner.partitions();
        let fmt = |xs: &[Rational]| xs.iter().map(format_rational).collect();
        (fmt(pp.p()), fmt(pp.q()))
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn __repr__(&self) -> String {
        format!(
            "Matrix2(order={}, proper={})",
            self.inner.order(),
            self.inner.is_proper()
        )
    }
}

/// Fixed-point evaluator for a 2-d matrix transform.
#[pyclass(name = "Evaluator", frozen)]
struct PyEvaluator {
    inner: FixedPointEvaluator,
}

#[pymethods]
impl PyEvaluator {
    #[new]
    #[pyo3(signature = (matrix, tolerance = 1e-12, max_depth = 64))]
    fn new(matrix: &PyMatrix2, tolerance: f64, max_depth: u32) -> PyResult<Self> {
        let inner = FixedPointEvaluator::new(matrix.inner.clone(), tolerance, max_depth)
            .map_err(value_error)?;
        Ok(PyEvaluator { inner })
    }

    /// Returns (value, guaranteed absolute error bound).
    fn eval(&self, u: f64, v: f64) -> PyResult<(f64, f64)> {
        let out = self.inner.eval(u, v).map_err(value_error)?;
        Ok((out.value, out.error_bound))
    }

    /// Exact value as a rational string, or None when the descent cannot
    /// certify termination at this point.
    fn eval_exact(&self, u: &str, v: &str) -> PyResult<Option<String>> {
        let out = self
            .inner
            .eval_exact(&parse_rat(u)?, &parse_rat(v)?)
            .map_err(value_error)?;
        Ok(out.as_ref().map(format_rational))
    }

    /// Returns (value, error bound, exact rational string or None).
    fn volume(&self, u1: &str, u2: &str, v1: &str, v2: &str) -> PyResult<(f64, f64, Option<String>)> {
        let rect = Rect::new(parse_rat(u1)?, parse_rat(u2)?, parse_rat(v1)?, parse_rat(v2)?)
            .map_err(value_error)?;
        let out = self.inner.volume(&rect).map_err(value_error)?;
        Ok((out.value, out.error_bound, out.exact.as_ref().map(format_rational)))
    }

    /// Seeded audit of the margin, monotonicity and Lipschitz conditions.
    #[pyo3(signature = (samples = 10_000, seed = 0, tolerance = None))]
    fn axioms<'py>(
        &self,
        py: Python<'py>,
        samples: u64,
        seed: u64,
        tolerance: Option<f64>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let tol = tolerance.unwrap_or(2.0 * self.inner.tolerance());
        let report = axiom_report(&self.inner, samples, seed, tol).map_err(value_error)?;
        let dict = PyDict::new_bound(py);
        dict.set_item("passes", report.passes())?;
        dict.set_item("tolerance", report.tolerance)?;
        dict.set_item("boundary_worst", report.boundary_worst)?;
        dict.set_item("monotonicity_worst", report.monotonicity_worst)?;
        dict.set_item("lipschitz_worst", report.lipschitz_worst)?;
        Ok(dict)
    }
}

/// Dense n-dimensional quasi-transformation matrix.
#[pyclass(name = "MatrixNd", frozen)]
struct PyMatrixNd {
    inner: MultiMatrix,
}

#[pymethods]
impl PyMatrixNd {
    #[staticmethod]
    fn step(n: usize, r: &str) -> PyResult<Self> {
        let inner = make_step_matrix(n, &parse_rat(r)?).map_err(value_error)?;
        Ok(PyMatrixNd { inner })
    }

    #[staticmethod]
    fn cube(n: usize) -> PyResult<Self> {
        let inner = make_cube_matrix(n).map_err(value_error)?;
        Ok(PyMatrixNd { inner })
    }

    #[staticmethod]
    fn from_2d(matrix: &PyMatrix2) -> Self {
        PyMatrixNd {
            inner: MultiMatrix::from_2d(&matrix.inner),
        }
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = MultiMatrix::from_json(text).map_err(value_error)?;
        Ok(PyMatrixNd { inner })
    }

    fn n(&self) -> usize {
        self.inner.n()
    }

    fn shape(&self) -> Vec<usize> {
        self.inner.shape().to_vec()
    }

    /// Entry at a 1-based multi-index.
    fn entry(&self, index: Vec<usize>) -> PyResult<String> {
        let shape = self.inner.shape();
        if index.len() != shape.len()
            || index.iter().zip(shape).any(|(&i, &m)| i < 1 || i > m)
        {
            return Err(value_error(format!("index {index:?} outside shape {shape:?}")));
        }
        Ok(format_rational(self.inner.entry(&index)))
    }

    fn is_proper(&self) -> bool {
        self.inner.is_proper()
    }

    fn contraction_alpha(&self) -> String {
        format_rational(&self.inner.contraction_alpha())
    }

    fn axis_partition(&self, axis: usize) -> PyResult<Vec<String>> {
        if axis >= self.inner.n() {
            return Err(value_error(format!("axis {axis} outside dimension {}", self.inner.n())));
        }
        Ok(self
            .inner
            .axis_partition(axis)
            .iter()
            .map(format_rational)
            .collect())
    }

    /// One transform application to the product or min base at a point.
    fn apply(&self, base: &str, u: Vec<f64>) -> PyResult<f64> {
        let q: &dyn EvaluableNd = match base {
            "pi" => &PiNd,
            "min" => &MinNd,
            other => return Err(value_error(format!("unknown base `{other}`, use pi or min"))),
        };
        apply_transform_nd(&self.inner, q, &u).map_err(value_error)
    }

    /// Exact fixed-point lattice at the given depth, as JSON.
    fn lattice_json(&self, depth: u32) -> PyResult<String> {
        Ok(lattice_eval(&self.inner, depth).map_err(value_error)?.to_json())
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn __repr__(&self) -> String {
        format!(
            "MatrixNd(shape={:?}, proper={})",
            self.inner.shape(),
            self.inner.is_proper()
        )
    }
}

/// Solves `sum ratios^s = 1`; returns (s, residual).
#[pyfunction]
#[pyo3(signature = (ratios, tol = 1e-12))]
fn moran_dimension(ratios: Vec<f64>, tol: f64) -> PyResult<(f64, f64)> {
    let report = solve_moran(&ratios, tol).map_err(value_error)?;
    Ok((report.s, report.residual))
}

/// Support dimension of the corner family at parameter r.
#[pyfunction]
#[pyo3(signature = (r, n = 2, tol = 1e-12))]
fn s_of_r(r: f64, n: u32, tol: f64) -> PyResult<f64> {
    family_s_of_r(r, n, tol).map_err(value_error)
}

/// Inverse of `s_of_r` on ]n-1 ... n[ (2-d: ]1, 2[).
#[pyfunction]
#[pyo3(signature = (s, n = 2, tol = 1e-12))]
fn r_of_s(s: f64, n: u32, tol: f64) -> PyResult<f64> {
    family_r_of_s(s, n, tol).map_err(value_error)
}

/// n-dimensional step-family dimension via an independent bisection.
#[pyfunction]
#[pyo3(signature = (n, r, tol = 1e-12))]
fn dim_nd(n: usize, r: f64, tol: f64) -> PyResult<f64> {
    solve_dim_nd(n, r, tol).map_err(value_error)
}

/// Renders the depth-l support as PGM bytes (grey palette, signed cells).
#[pyfunction]
fn render_pgm<'py>(
    py: Python<'py>,
    matrix: &PyMatrix2,
    depth: u32,
    res: usize,
) -> PyResult<Bound<'py, PyBytes>> {
    let mask = rasterize_support(&matrix.inner, depth, res).map_err(value_error)?;
    Ok(PyBytes::new_bound(py, &encode_pgm(&mask)))
}

/// Box-counting slope of the rasterized support; returns (dim, counts).
#[pyfunction]
fn box_dimension(
    matrix: &PyMatrix2,
    depth: u32,
    res: usize,
    scales: Vec<f64>,
) -> PyResult<(f64, Vec<u64>)> {
    let grid = OccupancyGrid::from_support(
        &matrix.inner,
        depth,
        res,
        quasicopula::ifs_support::DEFAULT_BUDGET,
    )
    .map_err(value_error)?;
    let fit = box_counting_estimate(&grid, &scales).map_err(value_error)?;
    Ok((fit.dim, fit.counts))
}

#[pymodule]
fn quasicopula_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMatrix2>()?;
    m.add_class::<PyEvaluator>()?;
    m.add_class::<PyMatrixNd>()?;
    m.add_function(wrap_pyfunction!(moran_dimension, m)?)?;
    m.add_function(wrap_pyfunction!(s_of_r, m)?)?;
    m.add_function(wrap_pyfunction!(r_of_s, m)?)?;
    m.add_function(wrap_pyfunction!(dim_nd, m)?)?;
    m.add_function(wrap_pyfunction!(render_pgm, m)?)?;
    m.add_function(wrap_pyfunction!(box_dimension, m)?)?;
    Ok(())
}
