//! Python bindings. Tensors cross the boundary as flat `list[float]` plus a shape.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use neuroplastic::data::{self, Dataset as CoreDataset};
use neuroplastic::experiment::{run_experiment, ExperimentConfig, Overrides};
use neuroplastic::optimizer::StepDiagnostics;
use neuroplastic::output::{emit_outputs, summary_file};
use neuroplastic::plasticity;
use neuroplastic::stabilizer::{self, LayerGroup, StabilizerConfig};
use neuroplastic::{Error, Mlp as CoreMlp, NeuroPlastic as CoreNeuroPlastic, Optimizer, OptimizerConfig, Tensor};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::DatasetMissing(_) => PyIOError::new_err(e.to_string()),
        Error::DivergedState { .. } | Error::NonFiniteGradient { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn tensor(data: Vec<f64>, shape: Option<Vec<usize>>) -> PyResult<Tensor> {
    match shape {
        Some(s) => Tensor::new(data, s).map_err(to_py),
        None => Ok(Tensor::from_vec(data)),
    }
}

fn diag_dict<'py>(py: Python<'py>, d: &StepDiagnostics) -> PyResult<Bound<'py, PyDict>> {
    let out = PyDict::new(py);
    out.set_item("mean_alpha", d.mean_alpha)?;
    out.set_item("update_norm", d.update_norm)?;
    out.set_item("grad_norm", d.grad_norm)?;
    out.set_item("gain", d.gain)?;
    out.set_item("eta_effective", d.eta_effective)?;
    out.set_item("alpha_saturation_frac", d.alpha_saturation_frac)?;
    Ok(out)
}

/// `|g| / (mean|g| + eps)`.
#[pyfunction]
#[pyo3(signature = (g, eps = 1e-8))]
fn gradient_signal(g: Vec<f64>, eps: f64) -> PyResult<Vec<f64>> {
    Ok(plasticity::gradient_signal(&Tensor::from_vec(g), eps).map_err(to_py)?.into_data())
}

#[pyfunction]
#[pyo3(signature = (a, eps = 1e-8))]
fn activity_signal(a: Vec<f64>, eps: f64) -> PyResult<Vec<f64>> {
    Ok(plasticity::activity_signal(&Tensor::from_vec(a), eps).map_err(to_py)?.into_data())
}

#[pyfunction]
#[pyo3(signature = (m, v, eps = 1e-8))]
fn memory_signal(m: Vec<f64>, v: Vec<f64>, eps: f64) -> PyResult<Vec<f64>> {
    let s = plasticity::memory_signal(&Tensor::from_vec(m), &Tensor::from_vec(v), eps).map_err(to_py)?;
    Ok(s.into_data())
}

/// Clip to `tau`, then apply the RMS gain. Returns `(update, gain)`.
#[pyfunction]
#[pyo3(signature = (u, tau = 1.0, r_target = 0.02, rho = 0.01))]
fn stabilize(u: Vec<f64>, tau: f64, r_target: f64, rho: f64) -> PyResult<(Vec<f64>, f64)> {
    let cfg = StabilizerConfig {
        tau,
        r_target,
        rho,
        ..StabilizerConfig::default()
    };
    cfg.validate().map_err(to_py)?;
    let s = stabilizer::stabilize_with_gain(&Tensor::from_vec(u), &cfg, LayerGroup::Middle).map_err(to_py)?;
    Ok((s.update.into_data(), s.gain))
}

/// The plasticity-modulated optimizer over a fixed list of parameter shapes.
///
/// `config` is a JSON object with the same fields as an `[optimizers.neuroplastic]`
/// table in an experiment config; omitted fields take their defaults.
#[pyclass]
struct NeuroPlastic {
    inner: CoreNeuroPlastic,
    shapes: Vec<Vec<usize>>,
}

#[pymethods]
impl NeuroPlastic {
    #[new]
    #[pyo3(signature = (shapes, config = None, lr = None))]
    fn new(shapes: Vec<Vec<usize>>, config: Option<&str>, lr: Option<f64>) -> PyResult<Self> {
        let mut cfg: OptimizerConfig = match config {
            Some(text) => serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?,
            None => OptimizerConfig::default(),
        };
        if let Some(lr) = lr {
            cfg.lr = lr;
        }
        let inner = CoreNeuroPlastic::new(cfg, &shapes).map_err(to_py)?;
        Ok(Self { inner, shapes })
    }

    fn set_epoch(&mut self, epoch: usize) {
        self.inner.set_epoch(epoch);
    }

    /// One step. Returns `(new_params, diagnostics)`; inputs are not modified.
    fn step<'py>(
        &mut self,
        py: Python<'py>,
        params: Vec<Vec<f64>>,
        grads: Vec<Vec<f64>>,
    ) -> PyResult<(Vec<Vec<f64>>, Bound<'py, PyDict>)> {
        if params.len() != self.shapes.len() || grads.len() != self.shapes.len() {
            return Err(PyValueError::new_err(format!(
                "expected {} parameter and gradient tensors",
                self.shapes.len()
            )));
        }
        let mut p = Vec::with_capacity(params.len());
        let mut g = Vec::with_capacity(grads.len());
        for ((pd, gd), shape) in params.into_iter().zip(grads).zip(&self.shapes) {
            p.push(tensor(pd, Some(shape.clone()))?);
            g.push(tensor(gd, Some(shape.clone()))?);
        }
        let d = self.inner.step(&mut p, &g).map_err(to_py)?;
        Ok((p.into_iter().map(Tensor::into_data).collect(), diag_dict(py, &d)?))
    }

    fn config_json(&self) -> PyResult<String> {
        serde_json::to_string(self.inner.config()).map_err(|e| PyValueError::new_err(e.to_string()))
    }
}

/// Multilayer perceptron with ReLU hidden layers and a softmax cross-entropy head.
#[pyclass]
struct Mlp {
    inner: CoreMlp,
}

impl Mlp {
    fn batch(&self, x: Vec<f64>) -> PyResult<Tensor> {
        let dim = self.inner.input_dim();
        if x.len() % dim != 0 {
            return Err(PyValueError::new_err(format!("input length {} not a multiple of {dim}", x.len())));
        }
        let rows = x.len() / dim;
        Tensor::new(x, vec![rows, dim]).map_err(to_py)
    }
}

#[pymethods]
impl Mlp {
    #[new]
    #[pyo3(signature = (sizes, seed = 0))]
    fn new(sizes: Vec<usize>, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: CoreMlp::new(&sizes, seed).map_err(to_py)?,
        })
    }

    #[getter]
    fn sizes(&self) -> Vec<usize> {
        self.inner.sizes().to_vec()
    }

    fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.inner.param_shapes()
    }

    fn params(&self) -> Vec<Vec<f64>> {
        self.inner.params().iter().map(|t| t.data().to_vec()).collect()
    }

    fn set_params(&mut self, params: Vec<Vec<f64>>) -> PyResult<()> {
        let shapes = self.inner.param_shapes();
        if params.len() != shapes.len() {
            return Err(PyValueError::new_err(format!("expected {} tensors", shapes.len())));
        }
        let tensors = params
            .into_iter()
            .zip(shapes)
            .map(|(d, s)| tensor(d, Some(s)))
            .collect::<PyResult<Vec<_>>>()?;
        self.inner = CoreMlp::from_params(self.inner.sizes(), tensors).map_err(to_py)?;
        Ok(())
    }

    /// Mean cross-entropy and its gradient for a row-major batch `x`.
    fn loss_and_grad(&self, x: Vec<f64>, y: Vec<usize>) -> PyResult<(f64, Vec<Vec<f64>>)> {
        let lg = self.inner.forward_backward(&self.batch(x)?, &y).map_err(to_py)?;
        Ok((lg.loss, lg.grads.into_iter().map(Tensor::into_data).collect()))
    }

    /// `(loss, accuracy)` over a row-major batch.
    #[pyo3(signature = (x, y, chunk = 2000))]
    fn evaluate(&self, x: Vec<f64>, y: Vec<usize>, chunk: usize) -> PyResult<(f64, f64)> {
        let e = self.inner.evaluate(&self.batch(x)?, &y, chunk).map_err(to_py)?;
        Ok((e.loss, e.accuracy))
    }
}

#[pyclass]
struct Dataset {
    inner: CoreDataset,
}

#[pymethods]
impl Dataset {
    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn labels(&self) -> Vec<usize> {
        self.inner.labels().to_vec()
    }

    /// Row-major pixels in [0, 1] for examples `start..stop`.
    fn images(&self, start: usize, stop: usize) -> PyResult<Vec<f64>> {
        let dim = self.inner.dim();
        if start > stop || stop > self.inner.len() {
            return Err(PyValueError::new_err(format!("bad range {start}..{stop}")));
        }
        Ok(self.inner.images().data()[start * dim..stop * dim].to_vec())
    }
}

/// Load an IDX image/label pair, gzipped or not.
#[pyfunction]
fn load_idx(images: PathBuf, labels: PathBuf) -> PyResult<Dataset> {
    Ok(Dataset {
        inner: data::load_idx(images, labels).map_err(to_py)?,
    })
}

/// Run an experiment config, write its outputs, and return the summary as JSON.
#[pyfunction]
#[pyo3(signature = (config, out_dir = None, epochs = None))]
fn run_config(py: Python<'_>, config: PathBuf, out_dir: Option<PathBuf>, epochs: Option<usize>) -> PyResult<String> {
    let mut cfg = ExperimentConfig::from_file(&config).map_err(to_py)?;
    cfg.apply(&Overrides {
        epochs,
        out_dir: out_dir.clone(),
        ..Overrides::default()
    })
    .map_err(to_py)?;
    let (train, test) = cfg.load_data(config.parent()).map_err(to_py)?;
    let records = py
        .detach(|| run_experiment(&cfg, &train, &test, &|_| {}))
        .map_err(to_py)?;
    emit_outputs(&records, cfg.reference.as_deref(), &cfg.out_dir).map_err(to_py)?;
    let summary = summary_file(&records, cfg.reference.as_deref()).map_err(to_py)?;
    serde_json::to_string(&summary).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pymodule]
fn pyneuroplastic(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(gradient_signal, m)?)?;
    m.add_function(wrap_pyfunction!(activity_signal, m)?)?;
    m.add_function(wrap_pyfunction!(memory_signal, m)?)?;
    m.add_function(wrap_pyfunction!(stabilize, m)?)?;
    m.add_function(wrap_pyfunction!(load_idx, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add_class::<NeuroPlastic>()?;
    m.add_class::<Mlp>()?;
    m.add_class::<Dataset>()?;
    Ok(())
}
