//! Python bindings: density prior, body model, and a training session with
//! rendering, probing and mesh export.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use avatarforge_core::bodymodel::{capsule, BodyModelAsset, PoseShapeParams};
use avatarforge_core::deform::SpaceKind;
use avatarforge_core::field::{self, GradientMode};
use avatarforge_core::geoquery;
use avatarforge_core::guidance;
use avatarforge_core::meshexport::{extract_mesh, write_mesh, ExtractionConfig, MeshFormat};
use avatarforge_core::render::{iou, rasterize_mask, Camera, Orbit};
use avatarforge_core::trainer::{Checkpoint, TrainConfig, Trainer};
use avatarforge_core::{Error, Vec3};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::InvalidArgument(_) | Error::DimensionMismatch(_) | Error::Config(_) | Error::Json(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn space_kind(s: &str) -> PyResult<SpaceKind> {
    s.parse().map_err(py_err)
}

/// Body density prior for a signed distance `d` and sharpness `a`.
#[pyfunction]
#[pyo3(signature = (d, a = 0.001))]
fn density_from_distance(d: f64, a: f64) -> PyResult<f64> {
    geoquery::density_from_distance(d, a).map_err(py_err)
}

/// Cumulative noise level of the default schedule at step `t`.
#[pyfunction]
fn alpha_bar(t: usize) -> PyResult<f64> {
    let s = guidance::NoiseSchedule::default();
    if t >= s.steps() {
        return Err(PyValueError::new_err(format!("t must be below {}", s.steps())));
    }
    Ok(s.alpha_bar(t))
}

#[pyfunction]
fn add_noise(x: Vec<f64>, eps: Vec<f64>, alpha_bar: f64) -> PyResult<Vec<f64>> {
    guidance::add_noise(&x, &eps, alpha_bar).map_err(py_err)
}

/// Parametric body model.
#[pyclass]
struct BodyModel {
    asset: BodyModelAsset,
}

#[pymethods]
impl BodyModel {
    /// The built-in capsule person.
    #[staticmethod]
    fn capsule() -> Self {
        Self {
            asset: capsule::capsule_person().clone(),
        }
    }

    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        Ok(Self {
            asset: BodyModelAsset::load(&path).map_err(py_err)?,
        })
    }

    fn save(&self, path: std::path::PathBuf) -> PyResult<()> {
        self.asset.save(&path).map_err(py_err)
    }

    #[getter]
    fn num_vertices(&self) -> usize {
        self.asset.num_vertices()
    }

    #[getter]
    fn num_joints(&self) -> usize {
        self.asset.num_joints()
    }

    #[getter]
    fn num_shape(&self) -> usize {
        self.asset.n_shape
    }

    #[getter]
    fn faces(&self) -> Vec<[u32; 3]> {
        self.asset.faces.clone()
    }

    /// A-pose rotations, one axis-angle per joint.
    #[getter]
    fn a_pose(&self) -> Vec<[f64; 3]> {
        self.asset.a_pose.clone()
    }

    /// Posed vertices for shape `beta` and per-joint axis-angles `xi`.
    #[pyo3(signature = (beta, xi, translation = [0.0; 3]))]
    fn pose(&self, beta: Vec<f64>, xi: Vec<[f64; 3]>, translation: [f64; 3]) -> PyResult<Vec<[f64; 3]>> {
        let p = PoseShapeParams {
            beta,
            xi,
            global_translation: translation,
        };
        let body = self.asset.pose_body(&p).map_err(py_err)?;
        Ok(body.vertices.iter().map(|v| [v.x, v.y, v.z]).collect())
    }

    /// Joint locations of the posed body.
    fn joints(&self, beta: Vec<f64>, xi: Vec<[f64; 3]>) -> PyResult<Vec<[f64; 3]>> {
        let p = PoseShapeParams {
            beta,
            xi,
            global_translation: [0.0; 3],
        };
        let body = self.asset.pose_body(&p).map_err(py_err)?;
        Ok(body.joints.iter().map(|v| [v.x, v.y, v.z]).collect())
    }
}

/// Field, body spaces and optimiser state built from a JSON config.
#[pyclass(unsendable)]
struct Session {
    trainer: Trainer,
}

fn camera(azimuth: f64, elevation: f64, radius: f64, fov: f64, resolution: usize) -> Camera {
    let orbit = Orbit {
        radius,
        elevation_deg: elevation,
        azimuth_deg: azimuth,
        fov_deg: fov,
    };
    Camera::orbit(&orbit, [0.0; 3], resolution, resolution)
}

#[pymethods]
impl Session {
    /// `config_json` holds any subset of the training config fields.
    #[new]
    #[pyo3(signature = (config_json = None))]
    fn new(config_json: Option<&str>) -> PyResult<Self> {
        let cfg: TrainConfig = match config_json {
            Some(s) => serde_json::from_str(s).map_err(|e| PyValueError::new_err(e.to_string()))?,
            None => TrainConfig::default(),
        };
        Ok(Self {
            trainer: Trainer::new(&cfg).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        let state = Checkpoint::load(&path).map_err(py_err)?;
        Ok(Self {
            trainer: Trainer::from_checkpoint(state, None).map_err(py_err)?,
        })
    }

    fn save(&self, path: std::path::PathBuf) -> PyResult<()> {
        self.trainer.state.save(&path).map_err(py_err)
    }

    #[getter]
    fn step_count(&self) -> usize {
        self.trainer.state.step
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.trainer.params().len()
    }

    /// Runs one optimisation step and returns its loss report.
    fn step<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let r = self.trainer.train_step().map_err(py_err)?;
        let d = PyDict::new_bound(py);
        d.set_item("sds_canonical", r.sds_canonical)?;
        d.set_item("sds_observation", r.sds_observation)?;
        d.set_item("normal_loss", r.normal_loss)?;
        d.set_item("total", r.total_weighted)?;
        Ok(d)
    }

    /// Deterministic render; returns (features `[H*W*4]`, opacity `[H*W]`).
    #[pyo3(signature = (space = "canonical", azimuth = 0.0, elevation = 0.0, radius = 1.5, fov = 60.0, resolution = 64))]
    fn render(
        &self,
        space: &str,
        azimuth: f64,
        elevation: f64,
        radius: f64,
        fov: f64,
        resolution: usize,
    ) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let cam = camera(azimuth, elevation, radius, fov, resolution);
        let img = self.trainer.render_eval(space_kind(space)?, &cam).map_err(py_err)?;
        Ok((img.features, img.opacity))
    }

    /// IoU of the rendered opacity mask against the rasterized body mesh.
    #[pyo3(signature = (space = "observation", azimuth = 0.0, elevation = 0.0, radius = 1.5, fov = 60.0, resolution = 64))]
    fn silhouette_iou(
        &self,
        space: &str,
        azimuth: f64,
        elevation: f64,
        radius: f64,
        fov: f64,
        resolution: usize,
    ) -> PyResult<f64> {
        let kind = space_kind(space)?;
        let cam = camera(azimuth, elevation, radius, fov, resolution);
        let img = self.trainer.render_eval(kind, &cam).map_err(py_err)?;
        let body = &self.trainer.space(kind).body;
        Ok(iou(&img.mask(0.5), &rasterize_mask(&body.vertices, &body.faces, &cam)))
    }

    /// Field sample at a point, with the analytic density gradient.
    #[pyo3(signature = (point, space = "canonical"))]
    fn probe<'py>(&self, py: Python<'py>, point: [f64; 3], space: &str) -> PyResult<Bound<'py, PyDict>> {
        let sp = self.trainer.space(space_kind(space)?);
        let x = Vec3::from(point);
        let s = field::eval_in_space(self.trainer.params(), sp, &x).map_err(py_err)?;
        let g = field::density_gradient(self.trainer.params(), sp, &x, GradientMode::Analytic).map_err(py_err)?;
        let d = PyDict::new_bound(py);
        d.set_item("sigma", s.sigma)?;
        d.set_item("color", s.color.to_vec())?;
        d.set_item("normal", s.normal.to_vec())?;
        d.set_item("normal_unit", s.reported_normal().to_vec())?;
        d.set_item("prior_sigma", s.prior_sigma)?;
        d.set_item("density_gradient", vec![g.x, g.y, g.z])?;
        Ok(d)
    }

    /// Writes the isosurface to `path` (`.obj` or `.ply`); returns the
    /// vertex and face counts.
    #[pyo3(signature = (path, space = "canonical", iso = 25.0, resolution = 128))]
    fn export_mesh(&self, path: std::path::PathBuf, space: &str, iso: f64, resolution: usize) -> PyResult<(usize, usize)> {
        let cfg = ExtractionConfig {
            grid_resolution: resolution,
            iso_level: iso,
            space: space_kind(space)?,
        };
        let t = &self.trainer;
        let mesh = extract_mesh(t.params(), &t.canonical, &t.observation, &cfg).map_err(py_err)?;
        let fmt = MeshFormat::from_path(&path).ok_or_else(|| PyValueError::new_err("mesh path must end in .obj or .ply"))?;
        write_mesh(&mesh, &path, fmt).map_err(py_err)?;
        Ok((mesh.vertices.len(), mesh.faces.len()))
    }
}

#[pymodule]
fn avatarforge(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(density_from_distance, m)?)?;
    m.add_function(wrap_pyfunction!(alpha_bar, m)?)?;
    m.add_function(wrap_pyfunction!(add_noise, m)?)?;
    m.add_class::<BodyModel>()?;
    m.add_class::<Session>()?;
    Ok(())
}
