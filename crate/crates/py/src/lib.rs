//! Python bindings: model construction and inference, degradation
//! synthesis, metrics, the complexity analyzer, and the training loop.
//!
//! Model tensors cross the boundary as float32 numpy arrays (HWC for
//! images, NHWC for batches); synthesis and metrics use float64.

use std::path::PathBuf;

use numpy::{IntoPyArray, PyArray2, PyArray3, PyReadonlyArray3, PyReadonlyArray4};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use desnow_core::bench as core_bench;
use desnow_core::data::load_pairs;
use desnow_core::loss::{self, LossConfig};
use desnow_core::net::{Model as CoreModel, ModelConfig};
use desnow_core::snow;
use desnow_core::train::{self, TrainConfig};
use desnow_core::Error;

fn to_py_err(e: Error) -> PyErr {
    match &e {
        Error::Io { .. } | Error::Image { .. } => PyIOError::new_err(e.to_string()),
        _ if e.is_validation() => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Renders a Python value the way the key-value parsers expect.
fn kv_value(value: &Bound<'_, PyAny>) -> PyResult<String> {
    if let Ok(b) = value.extract::<bool>() {
        return Ok(if b { "true" } else { "false" }.to_string());
    }
    Ok(value.str()?.to_string())
}

fn model_config_from(options: Option<&Bound<'_, PyDict>>) -> PyResult<ModelConfig> {
    let mut cfg = ModelConfig::default();
    if let Some(dict) = options {
        for (k, v) in dict.iter() {
            let key: String = k.extract()?;
            cfg.apply_kv(&key, &kv_value(&v)?).map_err(to_py_err)?;
        }
    }
    Ok(cfg)
}

fn train_config_from(options: Option<&Bound<'_, PyDict>>) -> PyResult<TrainConfig> {
    let mut cfg = TrainConfig::default();
    if let Some(dict) = options {
        for (k, v) in dict.iter() {
            let key: String = k.extract()?;
            cfg.apply_kv(&key, &kv_value(&v)?).map_err(to_py_err)?;
        }
    }
    Ok(cfg)
}

/// The restoration network.
#[pyclass]
struct Model {
    inner: CoreModel<f32>,
}

#[pymethods]
impl Model {
    /// Builds a fresh model; `options` overrides config keys, e.g.
    /// `Model({"base_channels": 8, "num_stages": 2})`.
    #[new]
    #[pyo3(signature = (options=None))]
    fn new(options: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let cfg = model_config_from(options)?;
        Ok(Model {
            inner: CoreModel::build(&cfg).map_err(to_py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Model {
            inner: CoreModel::load(&path).map_err(to_py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(to_py_err)
    }

    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    /// Config as a dict of strings, matching the checkpoint manifest keys.
    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let dict = PyDict::new(py);
        for (k, v) in self.inner.cfg.to_kv() {
            dict.set_item(k, v)?;
        }
        Ok(dict)
    }

    /// Raw network pass on an NHWC float32 batch whose sides are multiples
    /// of the scale factor. Unclamped output.
    fn forward<'py>(
        &self,
        py: Python<'py>,
        x: PyReadonlyArray4<'py, f32>,
    ) -> PyResult<Bound<'py, numpy::PyArray4<f32>>> {
        let input = x.as_array().to_owned();
        let (out, _) = self.inner.forward(&input, false).map_err(to_py_err)?;
        Ok(out.into_pyarray(py))
    }

    /// Restores one HWC float32 image: pads, optionally tiles, clamps.
    #[pyo3(signature = (img, tile=None))]
    fn desnow<'py>(
        &self,
        py: Python<'py>,
        img: PyReadonlyArray3<'py, f32>,
        tile: Option<usize>,
    ) -> PyResult<Bound<'py, PyArray3<f32>>> {
        let image = img.as_array().to_owned();
        let out = self.inner.desnow_image(&image, tile).map_err(to_py_err)?;
        Ok(out.into_pyarray(py))
    }

    /// Restores every pair under `data_dir`; returns
    /// `[(id, psnr, ssim), ...]`.
    #[pyo3(signature = (data_dir, tile=None))]
    fn evaluate_dir<'py>(
        &self,
        py: Python<'py>,
        data_dir: PathBuf,
        tile: Option<usize>,
    ) -> PyResult<Bound<'py, PyList>> {
        let (pairs, _) = load_pairs::<f32>(&data_dir).map_err(to_py_err)?;
        let rows = train::evaluate_all(&self.inner, &pairs, tile).map_err(to_py_err)?;
        PyList::new(py, rows)
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(params={}, stages={}, base_channels={})",
            self.inner.param_count(),
            self.inner.cfg.num_stages,
            self.inner.cfg.base_channels
        )
    }
}

/// Deterministic smooth synthetic scene in [0, 1], HWC float64.
#[pyfunction]
fn gen_clean_scene(py: Python<'_>, seed: u64, height: usize, width: usize) -> Bound<'_, PyArray3<f64>> {
    snow::gen_clean_scene(seed, height, width).into_pyarray(py)
}

/// Degrades a clean HWC float64 image; returns the degraded image and the
/// map dict (`z`, `r`, `t` 2-d; `c`, `a` 3-d).
#[pyfunction]
#[pyo3(signature = (clean, seed=0))]
fn synthesize_pair<'py>(
    py: Python<'py>,
    clean: PyReadonlyArray3<'py, f64>,
    seed: u64,
) -> PyResult<(Bound<'py, PyArray3<f64>>, Bound<'py, PyDict>)> {
    let clean = clean.as_array().to_owned();
    let (h, w, _) = clean.dim();
    let cfg = snow::SynthConfig {
        rng_seed: seed,
        ..snow::SynthConfig::default()
    };
    let params = snow::generate_snow_params(&cfg, (h, w)).map_err(to_py_err)?;
    let degraded = snow::synthesize_snow(&clean, &params).map_err(to_py_err)?;
    let maps = PyDict::new(py);
    maps.set_item("z", PyArray2::from_owned_array(py, params.z_mask))?;
    maps.set_item("r", PyArray2::from_owned_array(py, params.r_mask))?;
    maps.set_item("t", PyArray2::from_owned_array(py, params.t_map))?;
    maps.set_item("c", PyArray3::from_owned_array(py, params.c_map))?;
    maps.set_item("a", PyArray3::from_owned_array(py, params.a_map))?;
    Ok((degraded.into_pyarray(py), maps))
}

/// Writes `count` synthetic pairs into `out_dir`; returns how many.
#[pyfunction]
#[pyo3(signature = (out_dir, count, height, width, seed=0))]
fn make_pairs(out_dir: PathBuf, count: usize, height: usize, width: usize, seed: u64) -> PyResult<usize> {
    let cfg = snow::SynthConfig {
        rng_seed: seed,
        ..snow::SynthConfig::default()
    };
    let cleans: Vec<_> = (0..count)
        .map(|i| snow::gen_clean_scene(seed.wrapping_add(i as u64), height, width))
        .collect();
    snow::make_pair_dataset(&cfg, &cleans, &out_dir).map_err(to_py_err)
}

/// Peak signal-to-noise ratio of two HWC float64 images, in dB.
#[pyfunction]
#[pyo3(signature = (a, b, peak=1.0))]
fn psnr(a: PyReadonlyArray3<'_, f64>, b: PyReadonlyArray3<'_, f64>, peak: f64) -> PyResult<f64> {
    loss::psnr(&a.as_array().to_owned(), &b.as_array().to_owned(), peak).map_err(to_py_err)
}

/// Structural similarity of two HWC float64 images.
#[pyfunction]
#[pyo3(signature = (a, b, peak=1.0))]
fn ssim(a: PyReadonlyArray3<'_, f64>, b: PyReadonlyArray3<'_, f64>, peak: f64) -> PyResult<f64> {
    loss::ssim(&a.as_array().to_owned(), &b.as_array().to_owned(), peak).map_err(to_py_err)
}

/// Charbonnier loss between NHWC float64 batches.
#[pyfunction]
fn charbonnier(pred: PyReadonlyArray4<'_, f64>, target: PyReadonlyArray4<'_, f64>) -> PyResult<f64> {
    loss::charbonnier(
        &pred.as_array().to_owned(),
        &target.as_array().to_owned(),
        &LossConfig::default(),
    )
    .map_err(to_py_err)
}

/// Closed-form parameter accounting; returns a dict with the total and the
/// per-region split.
#[pyfunction]
#[pyo3(signature = (options=None))]
fn count_params<'py>(py: Python<'py>, options: Option<&Bound<'py, PyDict>>) -> PyResult<Bound<'py, PyDict>> {
    let cfg = model_config_from(options)?;
    let report = core_bench::count_params(&cfg).map_err(to_py_err)?;
    let dict = PyDict::new(py);
    dict.set_item("total", report.total_params)?;
    dict.set_item("encoder", report.encoder_params)?;
    dict.set_item("attention", report.eam_params)?;
    dict.set_item("rebuilding", report.hor_params)?;
    dict.set_item("decoder", report.decoder_params)?;
    dict.set_item("heads", report.head_params)?;
    Ok(dict)
}

/// Multiply-accumulate count of one forward pass at `height` x `width`.
#[pyfunction]
#[pyo3(signature = (height, width, options=None))]
fn count_macs(height: usize, width: usize, options: Option<&Bound<'_, PyDict>>) -> PyResult<u64> {
    let cfg = model_config_from(options)?;
    core_bench::count_macs(&cfg, height, width).map_err(to_py_err)
}

/// Triangular cyclic learning rate at `step`.
#[pyfunction]
#[pyo3(signature = (step, base_lr=4e-4, max_lr=6e-4, period=4000, gamma=1.0))]
fn cyclic_lr(step: u64, base_lr: f64, max_lr: f64, period: usize, gamma: f64) -> f64 {
    let cfg = TrainConfig {
        base_lr,
        max_lr,
        cycle_period_steps: period,
        cyclic_gamma: gamma,
        ..TrainConfig::default()
    };
    train::cyclic_lr(step, &cfg)
}

/// Trains (or resumes) on a pair directory; returns a summary dict.
#[pyfunction]
#[pyo3(signature = (data_dir, out_dir, model_options=None, train_options=None, resume=false))]
fn train_model<'py>(
    py: Python<'py>,
    data_dir: PathBuf,
    out_dir: PathBuf,
    model_options: Option<&Bound<'py, PyDict>>,
    train_options: Option<&Bound<'py, PyDict>>,
    resume: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let mc = model_config_from(model_options)?;
    let tc = train_config_from(train_options)?;
    let outcome = train::train(&mc, &tc, &data_dir, &out_dir, resume).map_err(to_py_err)?;
    let dict = PyDict::new(py);
    dict.set_item("checkpoint", outcome.checkpoint)?;
    dict.set_item("log", outcome.log_file)?;
    dict.set_item("steps", outcome.completed_steps)?;
    dict.set_item("stopped_early", outcome.stopped_early)?;
    dict.set_item("losses", outcome.rows.iter().map(|r| r.loss).collect::<Vec<_>>())?;
    dict.set_item("psnr", outcome.final_psnr)?;
    dict.set_item("ssim", outcome.final_ssim)?;
    Ok(dict)
}

#[pymodule]
fn desnow(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(gen_clean_scene, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize_pair, m)?)?;
    m.add_function(wrap_pyfunction!(make_pairs, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(charbonnier, m)?)?;
    m.add_function(wrap_pyfunction!(count_params, m)?)?;
    m.add_function(wrap_pyfunction!(count_macs, m)?)?;
    m.add_function(wrap_pyfunction!(cyclic_lr, m)?)?;
    m.add_function(wrap_pyfunction!(train_model, m)?)?;
    Ok(())
}
