//! Python bindings: sequences, training, forecasting, and evaluation.
//!
//! Trajectories cross the boundary as nested lists of `[x, y, z]` floats;
//! structured results (evaluation reports) cross as JSON strings so Python
//! sees exactly what the CLI writes to disk.

use candle_core::Device;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use handcast::data::{
    compute_stats, load_dataset, save_dataset, Side, JOINT_COUNT,
};
use handcast::diffusion::{make_schedule, ScheduleKind};
use handcast::error::Error;
use handcast::eval::{self, EvalConfig, Method};
use handcast::geometry::Vec3;
use handcast::synthgen::{generate_sequence, FeatureMode, GenConfig};
use handcast::training::{run_to_completion, TrainConfig};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse_side(side: &str) -> PyResult<Side> {
    match side {
        "left" => Ok(Side::Left),
        "right" => Ok(Side::Right),
        other => Err(PyValueError::new_err(format!("side must be left or right, got {other}"))),
    }
}

fn frames_to_lists(frames: &[Vec<Vec3>]) -> Vec<Vec<[f64; 3]>> {
    frames
        .iter()
        .map(|f| f.iter().map(|p| [p.x, p.y, p.z]).collect())
        .collect()
}

/// One egocentric capture: observed camera poses, 2D hand tracks, image
/// features, and 3D joint annotations plus the future joint trajectory.
#[pyclass(name = "Sequence", from_py_object)]
#[derive(Clone)]
struct PySequence {
    inner: handcast::data::Sequence,
}

#[pymethods]
impl PySequence {
    #[getter]
    fn id(&self) -> String {
        self.inner.meta.id.clone()
    }

    #[getter]
    fn activity(&self) -> String {
        self.inner.meta.activity.clone()
    }

    #[getter]
    fn t_obs(&self) -> usize {
        self.inner.t_obs()
    }

    #[getter]
    fn f_fut(&self) -> usize {
        self.inner.f_fut()
    }

    /// All (t_obs + f_fut) annotated frames as J x [x, y, z] lists.
    fn joints(&self) -> Vec<Vec<[f64; 3]>> {
        let frames: Vec<Vec<Vec3>> = self
            .inner
            .obs_joints
            .iter()
            .chain(&self.inner.fut_joints)
            .map(|f| (0..JOINT_COUNT).map(|j| f.position(j).unwrap_or(Vec3::zeros())).collect())
            .collect();
        frames_to_lists(&frames)
    }

    /// Observation frames in which this side's wrist is outside the view.
    fn hidden_obs_count(&self, side: &str) -> PyResult<usize> {
        Ok(self.inner.hidden_obs_count(parse_side(side)?))
    }

    /// Out-of-view ratio over the observation window for one side.
    fn oov_ratio(&self, side: &str) -> PyResult<f64> {
        Ok(eval::oov_ratio(&self.inner, parse_side(side)?))
    }

    fn __repr__(&self) -> String {
        format!(
            "Sequence(id={:?}, activity={:?}, t_obs={}, f_fut={})",
            self.inner.meta.id,
            self.inner.meta.activity,
            self.inner.t_obs(),
            self.inner.f_fut()
        )
    }
}

/// Generate `n` canonicalized synthetic sequences.
#[pyfunction]
#[pyo3(signature = (seed = 0, n = 8, t_obs = 20, f_fut = 10, d_img = 384, feature_mode = "zeros"))]
fn generate(
    seed: u64,
    n: usize,
    t_obs: usize,
    f_fut: usize,
    d_img: usize,
    feature_mode: &str,
) -> PyResult<Vec<PySequence>> {
    let feature_mode = match feature_mode {
        "zeros" => FeatureMode::Zeros,
        "scene" => FeatureMode::SceneEncoding,
        other => {
            return Err(PyValueError::new_err(format!(
                "feature_mode must be zeros or scene, got {other}"
            )))
        }
    };
    let cfg = GenConfig {
        seed,
        n_sequences: n,
        t_obs,
        f_fut,
        d_img,
        feature_mode,
        ..GenConfig::default()
    };
    cfg.validate().map_err(py_err)?;
    (0..n)
        .map(|i| {
            let mut s = generate_sequence(&cfg, i).map_err(py_err)?;
            s.canonicalize().map_err(py_err)?;
            Ok(PySequence { inner: s })
        })
        .collect()
}

/// Load a dataset file (sequences come back canonicalized).
#[pyfunction]
fn load(path: &str) -> PyResult<Vec<PySequence>> {
    Ok(load_dataset(path).map_err(py_err)?.into_iter().map(|s| PySequence { inner: s }).collect())
}

/// Save sequences to a dataset file.
#[pyfunction]
fn save(path: &str, seqs: Vec<PySequence>) -> PyResult<()> {
    let seqs: Vec<_> = seqs.into_iter().map(|s| s.inner).collect();
    save_dataset(path, &seqs).map_err(py_err)
}

/// The denoiser plus its optimizer state; drives training and forecasting.
#[pyclass(name = "Trainer", unsendable)]
struct PyTrainer {
    inner: handcast::training::Trainer,
}

#[pymethods]
impl PyTrainer {
    /// Build a fresh trainer for a dataset.
    #[new]
    #[pyo3(signature = (
        dataset,
        iterations = 1000,
        learning_rate = 1e-3,
        batch_size = 8,
        seed = 0,
        n_steps = 1000,
        d_z = 64,
        n_layers = 2,
        n_heads = 4,
        lambda_vis = 0.1,
        lambda_reproj = 0.05,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        dataset: Vec<PySequence>,
        iterations: usize,
        learning_rate: f64,
        batch_size: usize,
        seed: u64,
        n_steps: usize,
        d_z: usize,
        n_layers: usize,
        n_heads: usize,
        lambda_vis: f64,
        lambda_reproj: f64,
    ) -> PyResult<Self> {
        let first = dataset
            .first()
            .ok_or_else(|| PyValueError::new_err("dataset is empty"))?;
        let dcfg = handcast::denoiser::DenoiserConfig {
            d_z,
            n_layers,
            n_heads,
            d_img: first.inner.d_img(),
            t_obs: first.inner.t_obs(),
            f_fut: first.inner.f_fut(),
            joints: JOINT_COUNT,
            n_steps,
        };
        let tcfg = TrainConfig {
            iterations,
            learning_rate,
            batch_size,
            seed,
            n_steps,
            lambda_vis,
            lambda_reproj,
            ..TrainConfig::default()
        };
        tcfg.validate().map_err(py_err)?;
        let seqs: Vec<_> = dataset.into_iter().map(|s| s.inner).collect();
        let inner = handcast::training::Trainer::new(dcfg, tcfg, &seqs, &Device::Cpu)
            .map_err(py_err)?;
        Ok(PyTrainer { inner })
    }

    #[getter]
    fn step(&self) -> usize {
        self.inner.step
    }

    /// Train to the configured iteration count; returns one
    /// (iteration, joint, vis, reproj, total) row per iteration run.
    fn run(&mut self, dataset: Vec<PySequence>) -> PyResult<Vec<(usize, f64, f64, f64, f64)>> {
        let seqs: Vec<_> = dataset.into_iter().map(|s| s.inner).collect();
        let mut rows = Vec::new();
        run_to_completion(&mut self.inner, &seqs, &mut |row| {
            rows.push((row.iteration, row.joint, row.vis, row.reproj, row.total));
        })
        .map_err(py_err)?;
        Ok(rows)
    }

    /// Raise the iteration target (for continuing a loaded checkpoint).
    fn set_iterations(&mut self, iterations: usize) {
        self.inner.tcfg.iterations = iterations;
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyTrainer {
            inner: handcast::training::Trainer::load(path, &Device::Cpu).map_err(py_err)?,
        })
    }

    /// Sample one full trajectory for a sequence. Returns
    /// `(frames, visibility)`: (t_obs + f_fut) x J x [x, y, z] positions and
    /// per-observation-frame [left, right] visibility probabilities.
    #[pyo3(signature = (seq, seed = 0, stream = 0))]
    fn forecast(
        &self,
        seq: &PySequence,
        seed: u64,
        stream: u64,
    ) -> PyResult<(Vec<Vec<[f64; 3]>>, Vec<[f64; 2]>)> {
        let (frames, vis) = eval::forecast(&self.inner, &seq.inner, seed, stream).map_err(py_err)?;
        Ok((frames_to_lists(&frames), vis))
    }

    fn __repr__(&self) -> String {
        let cfg = self.inner.model.config();
        format!(
            "Trainer(step={}, d_z={}, n_layers={}, params={})",
            self.inner.step,
            cfg.d_z,
            cfg.n_layers,
            self.inner.model.param_count()
        )
    }
}

/// Evaluate one method over a dataset; returns the metrics report as a JSON
/// string (the same record the CLI writes). `method` is one of "model",
/// "static", "cvm", or "ground-truth"; "model" needs `trainer`, "static"
/// computes its mean pose from `stats_from` (defaulting to `dataset`).
#[pyfunction]
#[pyo3(signature = (dataset, method = "model", trainer = None, stats_from = None, seed = 0, fps = 10.0))]
fn evaluate(
    dataset: Vec<PySequence>,
    method: &str,
    trainer: Option<&PyTrainer>,
    stats_from: Option<Vec<PySequence>>,
    seed: u64,
    fps: f64,
) -> PyResult<String> {
    let seqs: Vec<_> = dataset.into_iter().map(|s| s.inner).collect();
    let cfg = EvalConfig { seed, fps };
    let stats;
    let m = match method {
        "model" => {
            let t =
                trainer.ok_or_else(|| PyValueError::new_err("method \"model\" needs trainer"))?;
            Method::Model(&t.inner)
        }
        "static" => {
            let basis: Vec<_> = match stats_from {
                Some(list) => list.into_iter().map(|s| s.inner).collect(),
                None => seqs.clone(),
            };
            stats = compute_stats(&basis).map_err(py_err)?;
            Method::Static(&stats)
        }
        "cvm" => Method::ConstantVelocity,
        "ground-truth" => Method::GroundTruth,
        other => {
            return Err(PyValueError::new_err(format!(
                "method must be model, static, cvm, or ground-truth, got {other}"
            )))
        }
    };
    let report = eval::evaluate(&m, &seqs, &cfg).map_err(py_err)?;
    serde_json::to_string(&report).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Render a JSON metrics report as the CLI's text table.
#[pyfunction]
fn render_table(report_json: &str) -> PyResult<String> {
    let report: handcast::eval::MetricsReport =
        serde_json::from_str(report_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(eval::render_table(&report))
}

fn to_vec3s(xs: Vec<[f64; 3]>) -> Vec<Vec3> {
    xs.into_iter().map(|p| Vec3::new(p[0], p[1], p[2])).collect()
}

/// Average displacement error between two equal-length trajectories.
#[pyfunction]
fn ade(pred: Vec<[f64; 3]>, gt: Vec<[f64; 3]>) -> PyResult<f64> {
    eval::ade(&to_vec3s(pred), &to_vec3s(gt)).map_err(py_err)
}

/// Final displacement error between two equal-length trajectories.
#[pyfunction]
fn fde(pred: Vec<[f64; 3]>, gt: Vec<[f64; 3]>) -> PyResult<f64> {
    eval::fde(&to_vec3s(pred), &to_vec3s(gt)).map_err(py_err)
}

/// Cumulative signal level of the linear noise schedule at step `n`.
#[pyfunction]
fn alpha_bar(n_steps: usize, n: usize) -> PyResult<f64> {
    let s = make_schedule(ScheduleKind::Linear, n_steps).map_err(py_err)?;
    if n > n_steps {
        return Err(PyValueError::new_err(format!("n = {n} beyond n_steps = {n_steps}")));
    }
    Ok(s.alpha_bar(n))
}

#[pymodule]
fn handcast_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySequence>()?;
    m.add_class::<PyTrainer>()?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(load, m)?)?;
    m.add_function(wrap_pyfunction!(save, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(render_table, m)?)?;
    m.add_function(wrap_pyfunction!(ade, m)?)?;
    m.add_function(wrap_pyfunction!(fde, m)?)?;
    m.add_function(wrap_pyfunction!(alpha_bar, m)?)?;
    m.add("JOINT_COUNT", JOINT_COUNT)?;
    Ok(())
}
