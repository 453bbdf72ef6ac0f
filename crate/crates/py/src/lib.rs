//! Python bindings: model specs and models, the basis functions, parameter audits,
//! the gradient-check suite and single-process training.
//!
//! Tensors cross the boundary as nested lists of floats.

use std::path::PathBuf;
use std::str::FromStr;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use afkan::basis::{self, GridSpec, PhaseLayout};
use afkan::data::{Dataset, DatasetKind, Split};
use afkan::gradcheck::{gradcheck_suite, CheckOptions};
use afkan::train::{multi_run, TrainConfig};
use afkan::{checkpoint, Activation, Error, Tensor};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(_) | Error::MissingData { .. } => PyIOError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn tag<T: FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(py_err)
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    let w = *t.shape().last().unwrap_or(&1);
    t.data().chunks(w.max(1)).map(<[f64]>::to_vec).collect()
}

fn matrix(x: Vec<Vec<f64>>) -> PyResult<Tensor> {
    let cols = x.first().map_or(0, Vec::len);
    if x.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    Tensor::new(vec![x.len(), cols], x.concat()).map_err(py_err)
}

fn grid_spec(g: usize, k: usize) -> PyResult<GridSpec> {
    GridSpec::new(g, k).map_err(py_err)
}

#[pyclass(name = "ModelSpec", from_py_object)]
#[derive(Clone)]
struct PyModelSpec {
    inner: afkan::ModelSpec,
}

#[pymethods]
impl PyModelSpec {
    #[new]
    #[pyo3(signature = (
        variant = "afkan", widths = vec![784, 64, 10], mode = None, grid = None, order = None,
        act = "silu", ftype = "quad1", pln = "layer", l2mm = true, seed = 0
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        variant: &str,
        widths: Vec<usize>,
        mode: Option<&str>,
        grid: Option<usize>,
        order: Option<usize>,
        act: &str,
        ftype: &str,
        pln: &str,
        l2mm: bool,
        seed: u64,
    ) -> PyResult<Self> {
        let mut s = afkan::ModelSpec::new(tag(variant)?, widths);
        if let Some(m) = mode {
            s.mode = tag(m)?;
        }
        s.grid.grid = grid.unwrap_or(s.grid.grid);
        s.grid.order = order.unwrap_or(s.grid.order);
        s.act = tag(act)?;
        s.ftype = tag(ftype)?;
        s.pln = tag(pln)?;
        s.l2mm = l2mm;
        s.seed = seed;
        s.validate().map_err(py_err)?;
        Ok(Self { inner: s })
    }

    #[getter]
    fn variant(&self) -> String {
        self.inner.variant.to_string()
    }

    #[getter]
    fn widths(&self) -> Vec<usize> {
        self.inner.widths.clone()
    }

    #[getter]
    fn label(&self) -> String {
        self.inner.label()
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        format!(
            "ModelSpec({}, widths={:?})",
            self.inner.label(),
            self.inner.widths
        )
    }
}

#[pyclass(name = "Model")]
struct PyModel {
    inner: afkan::Model,
}

#[pymethods]
impl PyModel {
    #[new]
    fn new(spec: PyModelSpec) -> PyResult<Self> {
        Ok(Self {
            inner: afkan::Model::new(&spec.inner).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: checkpoint::load(path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        checkpoint::save(&self.inner, path).map_err(py_err)
    }

    #[getter]
    fn spec(&self) -> PyModelSpec {
        PyModelSpec {
            inner: self.inner.spec().clone(),
        }
    }

    fn param_count(&self) -> usize {
        self.inner.params().total()
    }

    /// `(name, shape)` for every parameter tensor, in storage order.
    fn parameters(&self) -> Vec<(String, Vec<usize>)> {
        self.inner
            .params()
            .iter()
            .map(|(n, t)| (n.to_string(), t.shape().to_vec()))
            .collect()
    }

    /// Flat row-major values of one parameter.
    fn get_param(&self, name: &str) -> PyResult<Vec<f64>> {
        let id = self
            .inner
            .params()
            .find(name)
            .ok_or_else(|| PyValueError::new_err(format!("no parameter {name}")))?;
        Ok(self.inner.params().get(id).data().to_vec())
    }

    fn set_param(&mut self, name: &str, values: Vec<f64>) -> PyResult<()> {
        let id = self
            .inner
            .params()
            .find(name)
            .ok_or_else(|| PyValueError::new_err(format!("no parameter {name}")))?;
        let t = self.inner.params_mut().get_mut(id);
        if t.len() != values.len() {
            return Err(PyValueError::new_err(format!(
                "{name} holds {} values, got {}",
                t.len(),
                values.len()
            )));
        }
        t.data_mut().copy_from_slice(&values);
        Ok(())
    }

    /// Inference logits for a list of input rows.
    #[pyo3(signature = (x, batch_size = 64))]
    fn predict(&mut self, x: Vec<Vec<f64>>, batch_size: usize) -> PyResult<Vec<Vec<f64>>> {
        let y = self.inner.predict(&matrix(x)?, batch_size).map_err(py_err)?;
        Ok(rows(&y))
    }

    fn __repr__(&self) -> String {
        format!(
            "Model({}, params={})",
            self.inner.spec().label(),
            self.inner.params().total()
        )
    }
}

/// `(low, high)` phase rows at initialization.
#[pyfunction]
#[pyo3(signature = (grid = 3, order = 3))]
fn phase_init(grid: usize, order: usize) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let p = basis::phase_init(grid_spec(grid, order)?, PhaseLayout::Compact);
    Ok((p.low.data().to_vec(), p.high.data().to_vec()))
}

/// One row of `G + k` B-spline values per input.
#[pyfunction]
#[pyo3(signature = (xs, grid = 5, order = 3, lo = -1.0, hi = 1.0))]
fn bspline_basis(xs: Vec<f64>, grid: usize, order: usize, lo: f64, hi: f64) -> PyResult<Vec<Vec<f64>>> {
    let t = basis::bspline_basis(&Tensor::vector(xs), grid_spec(grid, order)?, lo, hi).map_err(py_err)?;
    Ok(rows(&t))
}

/// AF-KAN basis at initialized phases, one row of `G + k` values per input.
#[pyfunction]
#[pyo3(signature = (xs, grid = 3, order = 3, act = "silu", ftype = "quad1"))]
fn basis_a(xs: Vec<f64>, grid: usize, order: usize, act: &str, ftype: &str) -> PyResult<Vec<Vec<f64>>> {
    let phase = basis::phase_init(grid_spec(grid, order)?, PhaseLayout::Compact);
    let x = Tensor::new(vec![xs.len(), 1], xs).map_err(py_err)?;
    let t = basis::basis_a_values(&x, &phase, tag(act)?, tag(ftype)?).map_err(py_err)?;
    Ok(rows(&t))
}

/// ReLU-KAN bells at initialized phases, one row per input.
#[pyfunction]
#[pyo3(signature = (xs, grid = 5, order = 3))]
fn relu_kan_r(xs: Vec<f64>, grid: usize, order: usize) -> PyResult<Vec<Vec<f64>>> {
    let phase = basis::phase_init(grid_spec(grid, order)?, PhaseLayout::Compact);
    let x = Tensor::new(vec![xs.len(), 1], xs).map_err(py_err)?;
    Ok(rows(&basis::relu_kan_r_values(&x, &phase).map_err(py_err)?))
}

#[pyfunction]
fn activation(name: &str, xs: Vec<f64>) -> PyResult<Vec<f64>> {
    let a: Activation = tag(name)?;
    Ok(a.apply_all(&xs))
}

/// Max relative gradient error of every configuration in the sweep.
#[pyfunction]
#[pyo3(signature = (trials = 1, seed = 0))]
fn gradcheck<'py>(py: Python<'py>, trials: usize, seed: u64) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let rows = gradcheck_suite(CheckOptions::default(), trials, seed).map_err(py_err)?;
    rows.into_iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("variant", r.variant)?;
            d.set_item("mode", r.mode.map(|m| m.to_string()))?;
            d.set_item("act", r.act.to_string())?;
            d.set_item("ftype", r.ftype.map(|f| f.to_string()))?;
            d.set_item("max_rel_err", r.outcome.max_rel_err)?;
            Ok(d)
        })
        .collect()
}

/// Trains `runs` seeded models and returns every epoch record as a dict.
#[pyfunction]
#[pyo3(signature = (spec, data_dir, dataset = "mnist", epochs = 25, runs = 1, seed = 0, batch_size = 64, lr = 1e-3))]
#[allow(clippy::too_many_arguments)]
fn train<'py>(
    py: Python<'py>,
    spec: PyModelSpec,
    data_dir: PathBuf,
    dataset: &str,
    epochs: usize,
    runs: usize,
    seed: u64,
    batch_size: usize,
    lr: f64,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let kind: DatasetKind = tag(dataset)?;
    let train = Dataset::load(&data_dir, kind, Split::Train).map_err(py_err)?;
    let test = Dataset::load(&data_dir, kind, Split::Test).map_err(py_err)?;
    let mut cfg = TrainConfig::new(spec.inner);
    cfg.epochs = epochs;
    cfg.runs = runs;
    cfg.seed = seed;
    cfg.batch_size = batch_size;
    cfg.lr = lr;
    let (hist, _, _) = py
        .detach(|| multi_run(&cfg, &train, &test, runs, &mut |_| {}))
        .map_err(py_err)?;
    hist.iter()
        .flat_map(|h| &h.epochs)
        .map(|e| {
            let d = PyDict::new(py);
            d.set_item("run", e.run)?;
            d.set_item("epoch", e.epoch)?;
            d.set_item("lr", e.lr)?;
            d.set_item("train_loss", e.train_loss)?;
            d.set_item("train_acc", e.train_acc)?;
            d.set_item("val_acc", e.val_acc)?;
            d.set_item("macro_f1", e.macro_f1)?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
fn afkan_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModelSpec>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(phase_init, m)?)?;
    m.add_function(wrap_pyfunction!(bspline_basis, m)?)?;
    m.add_function(wrap_pyfunction!(basis_a, m)?)?;
    m.add_function(wrap_pyfunction!(relu_kan_r, m)?)?;
    m.add_function(wrap_pyfunction!(activation, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    Ok(())
}
