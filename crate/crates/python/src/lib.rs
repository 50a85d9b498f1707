//! Python module `splatstyle`: scene I/O, the stylization pipeline and its
//! building blocks. Points cross the boundary as lists of coordinate rows.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use splatstyle_core::cloud::{self, FeatureCloud, GaussianCloud, Normalization};
use splatstyle_core::partition;
use splatstyle_core::register::{self, FitOptions};
use splatstyle_core::regularize::{self, RegularizerParams};
use splatstyle_core::render::{self, Camera};
use splatstyle_core::sinkhorn::{self, SinkhornParams};
use splatstyle_core::spatial::KdTree;
use splatstyle_core::styler::{self, StylizationConfig};
use splatstyle_core::{synth, Error};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Contract(_) | Error::Format(_) | Error::EmptyScene => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn feature_cloud(rows: Vec<Vec<f64>>) -> PyResult<FeatureCloud> {
    let dim = rows.first().map(Vec::len).unwrap_or(0);
    if rows.iter().any(|r| r.len() != dim) {
        return Err(PyValueError::new_err("rows must all have the same length"));
    }
    FeatureCloud::uniform(rows.concat(), dim, Normalization::IDENTITY).map_err(to_py)
}

/// A 3D Gaussian splat scene.
#[pyclass(name = "Cloud", module = "splatstyle")]
pub struct PyCloud {
    inner: GaussianCloud,
}

#[pymethods]
impl PyCloud {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: cloud::load_ply(path).map_err(to_py)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        cloud::save_ply(&self.inner, path).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Cloud({} Gaussians)", self.inner.len())
    }

    fn positions(&self) -> Vec<[f64; 3]> {
        self.inner.positions()
    }

    /// Linear RGB from the DC band.
    fn colors(&self) -> Vec<[f64; 3]> {
        self.inner.gaussians.iter().map(|g| g.color).collect()
    }

    fn opacities(&self) -> Vec<f64> {
        self.inner.gaussians.iter().map(|g| g.opacity).collect()
    }

    fn scales(&self) -> Vec<[f64; 3]> {
        self.inner.gaussians.iter().map(|g| g.scale()).collect()
    }

    /// `((min_x, min_y, min_z), (max_x, max_y, max_z))`, or None when empty.
    fn bbox(&self) -> Option<([f64; 3], [f64; 3])> {
        self.inner.bbox()
    }

    fn subset(&self, indices: Vec<usize>) -> PyResult<Self> {
        if let Some(&i) = indices.iter().find(|&&i| i >= self.inner.len()) {
            return Err(PyValueError::new_err(format!("index {i} out of range")));
        }
        Ok(Self {
            inner: self.inner.subset(&indices),
        })
    }
}

#[pyfunction]
#[pyo3(signature = (n, seed = 0))]
fn cube_surface(n: usize, seed: u64) -> PyCloud {
    PyCloud {
        inner: synth::cube_surface(n, seed),
    }
}

#[pyfunction]
#[pyo3(signature = (n, seed = 0))]
fn bump_field(n: usize, seed: u64) -> PyCloud {
    PyCloud {
        inner: synth::bump_field(n, seed),
    }
}

#[pyfunction]
#[pyo3(signature = (n_each, separation, seed = 0))]
fn two_blobs(n_each: usize, separation: f64, seed: u64) -> PyCloud {
    PyCloud {
        inner: synth::two_blobs(n_each, separation, seed),
    }
}

#[pyfunction]
#[pyo3(signature = (n, radius, phase = 0.0, color = [0.8, 0.8, 0.8]))]
fn ring(n: usize, radius: f64, phase: f64, color: [f64; 3]) -> PyCloud {
    PyCloud {
        inner: synth::ring(n, radius, phase, color),
    }
}

#[pyfunction]
fn luminance(rgb: [f64; 3]) -> f64 {
    cloud::luminance(rgb)
}

/// Debiased entropic OT divergence between two uniform point sets.
#[pyfunction]
#[pyo3(signature = (a, b, gamma, max_iter = 1000, tol = 1e-6))]
fn sinkhorn_divergence(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>, gamma: f64, max_iter: usize, tol: f64) -> PyResult<f64> {
    let params = SinkhornParams {
        gamma,
        max_iter,
        tol,
        anneal: true,
    };
    let (a, b) = (feature_cloud(a)?, feature_cloud(b)?);
    Ok(sinkhorn::sinkhorn_divergence(&a, &b, &params).map_err(to_py)?.sd_value)
}

/// Returns `(labels, inertia)`.
#[pyfunction]
#[pyo3(signature = (points, k, seed = 0, max_iter = 100))]
fn kmeans(points: Vec<Vec<f64>>, k: usize, seed: u64, max_iter: usize) -> PyResult<(Vec<usize>, f64)> {
    let p = partition::kmeans(&feature_cloud(points)?, k, seed, max_iter).map_err(to_py)?;
    Ok((p.labels, p.inertia))
}

/// Fit `x ↦ diag(S)·R·(x − t)` mapping `cluster` onto `style`; returns the
/// transform as a dict.
#[pyfunction]
#[pyo3(signature = (cluster, style, seed = 0))]
fn fit_similarity(py: Python<'_>, cluster: Vec<[f64; 3]>, style: Vec<[f64; 3]>, seed: u64) -> PyResult<Py<PyAny>> {
    let opts = FitOptions {
        seed,
        ..Default::default()
    };
    let t = register::fit_similarity(&cluster, &KdTree::new(style), &opts).map_err(to_py)?;
    let json = serde_json::to_string(&t).map_err(json_err)?;
    Ok(py.import("json")?.call_method1("loads", (json,))?.unbind())
}

#[pyfunction]
fn aniso_loss(cloud: &PyCloud, r: f64) -> f64 {
    regularize::aniso_loss(&cloud.inner, r)
}

#[pyfunction]
fn uniform_loss(cloud: &PyCloud, s: f64) -> f64 {
    regularize::uniform_loss(&cloud.inner, s)
}

#[pyfunction]
#[pyo3(signature = (cloud, r, s = None, apply_uniform = false))]
fn project_scales(cloud: &PyCloud, r: f64, s: Option<f64>, apply_uniform: bool) -> PyResult<PyCloud> {
    let s = match s {
        Some(s) => s,
        None => regularize::median_scale(&cloud.inner).ok_or_else(|| to_py(Error::EmptyScene))?,
    };
    let out = regularize::project_scales(&cloud.inner, &RegularizerParams { r, s }, apply_uniform).map_err(to_py)?;
    Ok(PyCloud { inner: out })
}

/// Run the full pipeline. `config` takes the same keys as the JSON run
/// configuration. Returns `(stylized, report)` with the report as a dict.
#[pyfunction]
#[pyo3(signature = (content, style, config = None))]
fn stylize(
    py: Python<'_>,
    content: &PyCloud,
    style: &PyCloud,
    config: Option<&Bound<'_, PyDict>>,
) -> PyResult<(PyCloud, Py<PyAny>)> {
    let json = py.import("json")?;
    let cfg: StylizationConfig = match config {
        Some(d) => {
            let text: String = json.call_method1("dumps", (d,))?.extract()?;
            serde_json::from_str(&text).map_err(json_err)?
        }
        None => StylizationConfig::default(),
    };
    let (content, style) = (&content.inner, &style.inner);
    let (out, report) = py.detach(|| styler::stylize_scene(content, style, &cfg)).map_err(to_py)?;
    let report = serde_json::to_string(&report).map_err(json_err)?;
    Ok((PyCloud { inner: out }, json.call_method1("loads", (report,))?.unbind()))
}

/// Render a preview and return it as PNG bytes.
#[pyfunction]
#[pyo3(signature = (cloud, eye, look_at, width, height, fov = 50.0, up = [0.0, 1.0, 0.0]))]
fn render_png<'py>(
    py: Python<'py>,
    cloud: &PyCloud,
    eye: [f64; 3],
    look_at: [f64; 3],
    width: u32,
    height: u32,
    fov: f64,
    up: [f64; 3],
) -> PyResult<Bound<'py, PyBytes>> {
    let cam = Camera {
        eye,
        look_at,
        up,
        vertical_fov: fov,
        width,
        height,
    };
    let img = render::render(&cloud.inner, &cam).map_err(to_py)?;
    let mut out = Vec::new();
    render::encode_png(&img, &mut out).map_err(to_py)?;
    Ok(PyBytes::new(py, &out))
}

#[pymodule]
fn splatstyle(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCloud>()?;
    m.add_function(wrap_pyfunction!(cube_surface, m)?)?;
    m.add_function(wrap_pyfunction!(bump_field, m)?)?;
    m.add_function(wrap_pyfunction!(two_blobs, m)?)?;
    m.add_function(wrap_pyfunction!(ring, m)?)?;
    m.add_function(wrap_pyfunction!(luminance, m)?)?;
    m.add_function(wrap_pyfunction!(sinkhorn_divergence, m)?)?;
    m.add_function(wrap_pyfunction!(kmeans, m)?)?;
    m.add_function(wrap_pyfunction!(fit_similarity, m)?)?;
    m.add_function(wrap_pyfunction!(aniso_loss, m)?)?;
    m.add_function(wrap_pyfunction!(uniform_loss, m)?)?;
    m.add_function(wrap_pyfunction!(project_scales, m)?)?;
    m.add_function(wrap_pyfunction!(stylize, m)?)?;
    m.add_function(wrap_pyfunction!(render_png, m)?)?;
    Ok(())
}
