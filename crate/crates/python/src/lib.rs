//! Python bindings. Fields cross the boundary as row-major nested lists.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use k2map::ddm::{self, Conditioning, GaussianOracle, StepSchedule};
use k2map::helmholtz::{self, Boundary, Epsilon, HelmholtzParams, Indicator};
use k2map::io::{self as kio, Format};
use k2map::localization::{self, FingerprintDb, LocalizationConfig};
use k2map::metrics;
use k2map::synth::{self, PropagationParams};
use k2map::{BsConfig, EnvironmentMap, Grid, OutlineMask, ScalarField, UnitTag};

fn err(e: k2map::Error) -> PyErr {
    match e {
        k2map::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for k2map::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(err)
    }
}

fn parse_unit(s: &str) -> PyResult<UnitTag> {
    Ok(match s {
        "linear_power" => UnitTag::LinearPower,
        "amplitude" => UnitTag::Amplitude,
        "normalized_gray" => UnitTag::NormalizedGray,
        "k_squared" => UnitTag::KSquared,
        "log_amplitude" => UnitTag::LogAmplitude,
        other => return Err(PyValueError::new_err(format!("unknown unit `{other}`"))),
    })
}

fn unit_name(u: UnitTag) -> &'static str {
    match u {
        UnitTag::LinearPower => "linear_power",
        UnitTag::Amplitude => "amplitude",
        UnitTag::NormalizedGray => "normalized_gray",
        UnitTag::KSquared => "k_squared",
        UnitTag::LogAmplitude => "log_amplitude",
    }
}

fn parse<T: std::str::FromStr<Err = String>>(s: &str) -> PyResult<T> {
    s.parse().map_err(PyValueError::new_err)
}

fn rows_shape<T>(rows: &[Vec<T>]) -> PyResult<(usize, usize)> {
    let h = rows.len();
    let w = rows.first().map_or(0, Vec::len);
    if h == 0 || w == 0 || rows.iter().any(|r| r.len() != w) {
        return Err(PyValueError::new_err("expected a non-empty rectangular list of rows"));
    }
    Ok((w, h))
}

#[pyclass(name = "ScalarField", module = "k2map", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyScalarField {
    inner: ScalarField,
}

#[pymethods]
impl PyScalarField {
    #[new]
    #[pyo3(signature = (rows, unit = "linear_power", hx = 1.0, hy = 1.0))]
    fn new(rows: Vec<Vec<f64>>, unit: &str, hx: f64, hy: f64) -> PyResult<Self> {
        let (w, h) = rows_shape(&rows)?;
        let grid = Grid::new(w, h, hx, hy).py()?;
        let inner = ScalarField::new(grid, rows.concat(), parse_unit(unit)?).py()?;
        Ok(PyScalarField { inner })
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn spacing(&self) -> (f64, f64) {
        (self.inner.hx(), self.inner.hy())
    }

    #[getter]
    fn unit(&self) -> &'static str {
        unit_name(self.inner.unit())
    }

    fn get(&self, x: usize, y: usize) -> PyResult<f64> {
        if x >= self.inner.width() || y >= self.inner.height() {
            return Err(PyValueError::new_err("index out of range"));
        }
        Ok(self.inner.get(x, y))
    }

    fn min(&self) -> f64 {
        self.inner.min()
    }

    fn max(&self) -> f64 {
        self.inner.max()
    }

    fn to_list(&self) -> Vec<Vec<f64>> {
        self.inner.data().chunks(self.inner.width()).map(<[f64]>::to_vec).collect()
    }

    fn with_unit(&self, unit: &str) -> PyResult<Self> {
        Ok(PyScalarField {
            inner: self.inner.clone().with_unit(parse_unit(unit)?),
        })
    }

    fn __repr__(&self) -> String {
        format!("ScalarField({}x{}, unit={})", self.inner.width(), self.inner.height(), self.unit())
    }
}

fn wrap(inner: ScalarField) -> PyScalarField {
    PyScalarField { inner }
}

#[pyclass(name = "OutlineMask", module = "k2map", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyOutlineMask {
    inner: OutlineMask,
}

#[pymethods]
impl PyOutlineMask {
    #[new]
    fn new(rows: Vec<Vec<bool>>) -> PyResult<Self> {
        let (w, h) = rows_shape(&rows)?;
        Ok(PyOutlineMask {
            inner: OutlineMask::new(w, h, rows.concat()).py()?,
        })
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    fn count(&self) -> usize {
        self.inner.count()
    }

    fn get(&self, x: usize, y: usize) -> PyResult<bool> {
        if x >= self.inner.width() || y >= self.inner.height() {
            return Err(PyValueError::new_err("index out of range"));
        }
        Ok(self.inner.get(x, y))
    }

    fn to_list(&self) -> Vec<Vec<bool>> {
        self.inner.bits().chunks(self.inner.width()).map(<[bool]>::to_vec).collect()
    }

    fn __repr__(&self) -> String {
        format!("OutlineMask({}x{}, count={})", self.inner.width(), self.inner.height(), self.inner.count())
    }
}

#[pyclass(name = "EnvironmentMap", module = "k2map", frozen)]
struct PyEnvironment {
    inner: EnvironmentMap,
}

#[pymethods]
impl PyEnvironment {
    #[new]
    #[pyo3(signature = (static_mask, dynamic_mask = None, hx = 1.0, hy = 1.0))]
    fn new(static_mask: Vec<Vec<bool>>, dynamic_mask: Option<Vec<Vec<bool>>>, hx: f64, hy: f64) -> PyResult<Self> {
        let (w, h) = rows_shape(&static_mask)?;
        let grid = Grid::new(w, h, hx, hy).py()?;
        let s = OutlineMask::new(w, h, static_mask.concat()).py()?;
        let d = match dynamic_mask {
            Some(rows) => {
                let (dw, dh) = rows_shape(&rows)?;
                OutlineMask::new(dw, dh, rows.concat()).py()?
            }
            None => OutlineMask::empty(w, h),
        };
        Ok(PyEnvironment {
            inner: EnvironmentMap::new(grid, s, d).py()?,
        })
    }

    /// Obstacle-free environment.
    #[staticmethod]
    fn empty(width: usize, height: usize) -> PyResult<Self> {
        Ok(PyEnvironment {
            inner: EnvironmentMap::empty(Grid::square(width, height).py()?),
        })
    }

    #[staticmethod]
    #[pyo3(signature = (width, height, n_static, n_dynamic, seed))]
    fn random(width: usize, height: usize, n_static: usize, n_dynamic: usize, seed: u64) -> PyResult<Self> {
        let grid = Grid::square(width, height).py()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(PyEnvironment {
            inner: synth::random_environment(grid, n_static, n_dynamic, &mut rng),
        })
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.grid().width
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.grid().height
    }

    fn nearest_free_pixel(&self, x: usize, y: usize) -> Option<(usize, usize)> {
        synth::nearest_free_pixel(&self.inner, x, y)
    }
}

#[pyclass(name = "BsConfig", module = "k2map", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyBs {
    inner: BsConfig,
}

#[pymethods]
impl PyBs {
    #[new]
    #[pyo3(signature = (x, y, z = BsConfig::DEFAULT_HEIGHT_M, tx_power_dbm = BsConfig::DEFAULT_TX_POWER_DBM, carrier_hz = BsConfig::DEFAULT_CARRIER_HZ))]
    fn new(x: f64, y: f64, z: f64, tx_power_dbm: f64, carrier_hz: f64) -> Self {
        PyBs {
            inner: BsConfig {
                x,
                y,
                z,
                tx_power_dbm,
                carrier_hz,
            },
        }
    }

    #[staticmethod]
    fn at_pixel(env: PyRef<'_, PyEnvironment>, x: usize, y: usize) -> PyResult<Self> {
        Ok(PyBs {
            inner: BsConfig::at_pixel(x, y, env.inner.grid()).py()?,
        })
    }

    #[getter]
    fn position(&self) -> (f64, f64) {
        (self.inner.x, self.inner.y)
    }
}

fn helmholtz_params(sigma: f64, boundary: &str, eps: Option<f64>, eps_rel: f64, scales: Option<Vec<f64>>) -> PyResult<HelmholtzParams> {
    let mut p = HelmholtzParams {
        eps: match eps {
            Some(e) => Epsilon::Absolute(e),
            None => Epsilon::RelativeToMax(eps_rel),
        },
        sigma,
        boundary: parse::<Boundary>(boundary)?,
        ..HelmholtzParams::default()
    };
    if let Some(s) = scales {
        p.scales = s;
    }
    p.validate().py()?;
    Ok(p)
}

fn propagation(gamma: f64, k: f64, wall_loss_db: f64, floor_db: f64, reflection_order: usize) -> PyResult<PropagationParams> {
    let p = PropagationParams {
        gamma,
        k,
        wall_loss_db,
        floor_db,
        reflection_order,
    };
    p.validate().py()?;
    Ok(p)
}

#[pyfunction]
#[pyo3(signature = (power, eps = 0.0))]
fn amplitude_from_power(power: PyRef<'_, PyScalarField>, eps: f64) -> PyResult<PyScalarField> {
    k2map::amplitude_from_power(&power.inner, eps).py().map(wrap)
}

#[pyfunction]
#[pyo3(signature = (field, sigma, boundary = "replicate"))]
fn gaussian_smooth(field: PyRef<'_, PyScalarField>, sigma: f64, boundary: &str) -> PyResult<PyScalarField> {
    helmholtz::gaussian_smooth(&field.inner, sigma, parse(boundary)?).py().map(wrap)
}

#[pyfunction]
#[pyo3(signature = (field, boundary = "replicate"))]
fn laplacian_5pt(field: PyRef<'_, PyScalarField>, boundary: &str) -> PyResult<PyScalarField> {
    helmholtz::laplacian_5pt(&field.inner, parse(boundary)?).py().map(wrap)
}

/// Curvature indicator of an amplitude map (`k-eff` or `k-log`).
#[pyfunction]
#[pyo3(signature = (amplitude, indicator = "k-eff", sigma = 1.0, boundary = "replicate", eps = None, eps_rel = 1e-6))]
fn indicator_map(
    amplitude: PyRef<'_, PyScalarField>,
    indicator: &str,
    sigma: f64,
    boundary: &str,
    eps: Option<f64>,
    eps_rel: f64,
) -> PyResult<PyScalarField> {
    let p = helmholtz_params(sigma, boundary, eps, eps_rel, None)?;
    helmholtz::indicator_map(&amplitude.inner, &p, parse::<Indicator>(indicator)?).py().map(wrap)
}

#[pyfunction]
#[pyo3(signature = (k2, threshold = 0.0))]
fn outline_mask(k2: PyRef<'_, PyScalarField>, threshold: f64) -> PyResult<PyOutlineMask> {
    helmholtz::outline_mask(&k2.inner, threshold).py().map(|inner| PyOutlineMask { inner })
}

#[pyfunction]
#[pyo3(signature = (amplitude, scales = vec![0.5, 1.0, 2.0], indicator = "k-eff", boundary = "replicate", eps = None, eps_rel = 1e-6))]
fn persistence_mask(
    amplitude: PyRef<'_, PyScalarField>,
    scales: Vec<f64>,
    indicator: &str,
    boundary: &str,
    eps: Option<f64>,
    eps_rel: f64,
) -> PyResult<PyOutlineMask> {
    let p = helmholtz_params(1.0, boundary, eps, eps_rel, Some(scales))?;
    helmholtz::persistence_mask_with(&amplitude.inner, &p, parse::<Indicator>(indicator)?)
        .py()
        .map(|inner| PyOutlineMask { inner })
}

#[pyfunction]
#[pyo3(signature = (env, bs, model = "dominant-path", gamma = 0.1, k = 0.5, wall_loss_db = 10.0, floor_db = -150.0, reflection_order = 2))]
#[allow(clippy::too_many_arguments)]
fn synthesize(
    env: PyRef<'_, PyEnvironment>,
    bs: PyRef<'_, PyBs>,
    model: &str,
    gamma: f64,
    k: f64,
    wall_loss_db: f64,
    floor_db: f64,
    reflection_order: usize,
) -> PyResult<PyScalarField> {
    let p = propagation(gamma, k, wall_loss_db, floor_db, reflection_order)?;
    let (env, bs) = (&env.inner, &bs.inner);
    let field = match model {
        "free-space" => synth::free_space_power(env, bs, &p),
        "dominant-path" => synth::dominant_path_power(env, bs, &p),
        "evanescent" => synth::evanescent_field(env.grid(), (bs.x, bs.y), &p),
        "multipath" => synth::multipath_toy(env, bs, &p, &synth::Reflector::grid_boundary(env.grid())).map(|u| u.power()),
        other => return Err(PyValueError::new_err(format!("unknown model `{other}`"))),
    };
    field.py().map(wrap)
}

#[pyfunction]
fn nmse(pred: PyRef<'_, PyScalarField>, gt: PyRef<'_, PyScalarField>) -> PyResult<f64> {
    metrics::nmse(&pred.inner, &gt.inner).py()
}

#[pyfunction]
fn rmse(pred: PyRef<'_, PyScalarField>, gt: PyRef<'_, PyScalarField>) -> PyResult<f64> {
    metrics::rmse(&pred.inner, &gt.inner).py()
}

#[pyfunction]
#[pyo3(signature = (pred, gt, dynamic_range = 1.0))]
fn ssim(pred: PyRef<'_, PyScalarField>, gt: PyRef<'_, PyScalarField>, dynamic_range: f64) -> PyResult<f64> {
    metrics::ssim_global(&pred.inner, &gt.inner, dynamic_range).py()
}

#[pyfunction]
#[pyo3(signature = (pred, gt, peak = 1.0))]
fn psnr(pred: PyRef<'_, PyScalarField>, gt: PyRef<'_, PyScalarField>, peak: f64) -> PyResult<f64> {
    metrics::psnr(&pred.inner, &gt.inner, peak).py()
}

#[pyfunction]
fn dtc(pred: PyRef<'_, PyOutlineMask>, gt: PyRef<'_, PyOutlineMask>, tol: f64) -> PyResult<f64> {
    metrics::dtc(&pred.inner, &gt.inner, tol).py()
}

#[pyfunction]
fn dtiou(pred: PyRef<'_, PyOutlineMask>, gt: PyRef<'_, PyOutlineMask>, tol: f64) -> PyResult<f64> {
    metrics::dtiou(&pred.inner, &gt.inner, tol).py()
}

/// `(x_t, eps)` for `x_t = (1 - t) x0 + sqrt(t) eps`.
#[pyfunction]
fn forward_sample(x0: Vec<f64>, t: f64, seed: u64) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (state, eps) = ddm::forward_sample(&x0, t, &mut rng).py()?;
    Ok((state.x, eps))
}

#[pyfunction]
fn one_step_reconstruct(x_t: Vec<f64>, t: f64, f_hat: Vec<f64>, eps_hat: Vec<f64>) -> PyResult<Vec<f64>> {
    let state = ddm::DiffusionState { t, x: x_t, rng_seed: 0 };
    ddm::one_step_reconstruct(&state, &ddm::PredictorOutput { f_hat, eps_hat }).py()
}

#[pyclass(name = "GaussianOracle", module = "k2map", frozen)]
struct PyOracle {
    inner: GaussianOracle,
}

#[pymethods]
impl PyOracle {
    /// Posterior-mean oracle, or posterior sampling when `seed` is given.
    #[new]
    #[pyo3(signature = (mu0, var0, seed = None))]
    fn new(mu0: f64, var0: f64, seed: Option<u64>) -> PyResult<Self> {
        let mut inner = GaussianOracle::new(mu0, var0).py()?;
        if let Some(s) = seed {
            inner = inner.sampling(s);
        }
        Ok(PyOracle { inner })
    }

    fn posterior_mean(&self, x_t: f64, t: f64) -> f64 {
        self.inner.posterior_mean(x_t, t)
    }

    /// Exact `(mean, var)` of the chain output for a uniform schedule.
    fn terminal_moments(&self, steps: usize) -> PyResult<(f64, f64)> {
        Ok(self.inner.terminal_moments(&StepSchedule::uniform(steps).py()?))
    }

    /// Runs `n` independent reverse chains from `x_1 ~ N(0, 1)`.
    fn sample(&self, n: usize, steps: usize, seed: u64) -> PyResult<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ddm::sample(&self.inner, n, &StepSchedule::uniform(steps).py()?, &Conditioning::none(), &mut rng).py()
    }
}

#[pyclass(name = "FingerprintDb", module = "k2map", frozen)]
struct PyDb {
    inner: FingerprintDb,
}

#[pymethods]
impl PyDb {
    #[new]
    #[pyo3(signature = (positions, vectors, hx = 1.0, hy = 1.0))]
    fn new(positions: Vec<(f64, f64)>, vectors: Vec<Vec<f64>>, hx: f64, hy: f64) -> PyResult<Self> {
        Ok(PyDb {
            inner: FingerprintDb::new(positions, vectors, hx, hy).py()?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (maps, stride = 1, env = None))]
    fn build(maps: Vec<PyRef<'_, PyScalarField>>, stride: usize, env: Option<PyRef<'_, PyEnvironment>>) -> PyResult<Self> {
        let maps: Vec<ScalarField> = maps.iter().map(|m| m.inner.clone()).collect();
        Ok(PyDb {
            inner: localization::build_db(&maps, stride, env.as_ref().map(|e| &e.inner)).py()?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn positions(&self) -> Vec<(f64, f64)> {
        self.inner.positions().to_vec()
    }

    fn locate(&self, query: Vec<f64>, k: usize) -> PyResult<(f64, f64)> {
        localization::knn_locate(&self.inner, &query, k).py()
    }
}

#[pyfunction]
#[pyo3(signature = (db_pred, db_truth, n_queries = 3000, k = 5, noise_std = None, seed = 0))]
fn evaluate_localization(
    db_pred: PyRef<'_, PyDb>,
    db_truth: PyRef<'_, PyDb>,
    n_queries: usize,
    k: usize,
    noise_std: Option<f64>,
    seed: u64,
) -> PyResult<f64> {
    let cfg = LocalizationConfig { n_queries, k, noise_std };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    localization::evaluate_localization(&db_pred.inner, &db_truth.inner, &cfg, &mut rng).py()
}

#[pyfunction]
fn load_gray_image(path: PathBuf) -> PyResult<PyScalarField> {
    kio::load_gray_image(&path).py().map(wrap)
}

#[pyfunction]
#[pyo3(signature = (path, unit = "normalized_gray"))]
fn load_field(path: PathBuf, unit: &str) -> PyResult<PyScalarField> {
    kio::load_field(&path, parse_unit(unit)?).py().map(wrap)
}

/// Writes png8 or csv, chosen by `format` or else the file extension.
#[pyfunction]
#[pyo3(signature = (path, field, format = None))]
fn save_field(path: PathBuf, field: PyRef<'_, PyScalarField>, format: Option<&str>) -> PyResult<()> {
    let fmt = match format {
        Some(f) => parse::<Format>(f)?,
        None if path.extension().is_some_and(|e| e == "csv") => Format::Csv,
        None => Format::Png8,
    };
    kio::save_field(&path, &field.inner, fmt).py()
}

/// Runs the command-line interface in-process and returns its exit code.
#[pyfunction]
fn cli(args: Vec<String>) -> i32 {
    k2map::cli::run(std::iter::once("k2map".to_string()).chain(args))
}

#[pymodule]
#[pyo3(name = "k2map")]
fn k2map_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScalarField>()?;
    m.add_class::<PyOutlineMask>()?;
    m.add_class::<PyEnvironment>()?;
    m.add_class::<PyBs>()?;
    m.add_class::<PyOracle>()?;
    m.add_class::<PyDb>()?;
    m.add_function(wrap_pyfunction!(amplitude_from_power, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_smooth, m)?)?;
    m.add_function(wrap_pyfunction!(laplacian_5pt, m)?)?;
    m.add_function(wrap_pyfunction!(indicator_map, m)?)?;
    m.add_function(wrap_pyfunction!(outline_mask, m)?)?;
    m.add_function(wrap_pyfunction!(persistence_mask, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(nmse, m)?)?;
    m.add_function(wrap_pyfunction!(rmse, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(dtc, m)?)?;
    m.add_function(wrap_pyfunction!(dtiou, m)?)?;
    m.add_function(wrap_pyfunction!(forward_sample, m)?)?;
    m.add_function(wrap_pyfunction!(one_step_reconstruct, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_localization, m)?)?;
    m.add_function(wrap_pyfunction!(load_gray_image, m)?)?;
    m.add_function(wrap_pyfunction!(load_field, m)?)?;
    m.add_function(wrap_pyfunction!(save_field, m)?)?;
    m.add_function(wrap_pyfunction!(cli, m)?)?;
    Ok(())
}
