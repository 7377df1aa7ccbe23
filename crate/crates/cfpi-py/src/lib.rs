//! Python bindings: preintegration, states, simulation and the benchmark.
//!
//! Vectors cross the boundary as lists of floats and matrices as lists of
//! rows. Quaternions are `[x, y, z, w]`. Scenario configurations are passed
//! as JSON strings with the same schema as the `bench` CLI.

use cfpi::estimator::{run_estimator, EstimatorConfig, Mode};
use cfpi::manifold::{ImuState, Quat, Vector15};
use cfpi::montecarlo::run_monte_carlo;
use cfpi::oracle::suite::{run_oracle_suite, SuiteConfig};
use cfpi::preintegration::{preintegrate_interval, BiasLinearization, ImuNoise, ImuSample, PreintModel, PreintegratedFactor};
use cfpi::scenario::ScenarioConfig;
use cfpi::simulator::simulate;
use nalgebra::{DMatrix, Vector3, Vector4};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn model(name: &str) -> PyResult<PreintModel> {
    PreintModel::parse(name).ok_or_else(|| value_error(format!("unknown model '{name}'")))
}

fn v3(v: &[f64]) -> PyResult<Vector3<f64>> {
    match v {
        [x, y, z] => Ok(Vector3::new(*x, *y, *z)),
        _ => Err(value_error(format!("expected 3 values, got {}", v.len()))),
    }
}

fn quat(v: &[f64]) -> PyResult<Quat> {
    match v {
        [x, y, z, w] => {
            let q = Vector4::new(*x, *y, *z, *w);
            let n = q.norm();
            if !(n > 0.0 && n.is_finite()) {
                return Err(value_error("quaternion must be finite and non-zero"));
            }
            Ok(Quat::from_coords(q / n))
        }
        _ => Err(value_error(format!("expected [x, y, z, w], got {} values", v.len()))),
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn rows3(m: &nalgebra::Matrix3<f64>) -> Vec<Vec<f64>> {
    rows(&DMatrix::from_column_slice(3, 3, m.as_slice()))
}

/// Full IMU state `(q, b_ω, v, b_a, p)`.
#[pyclass(name = "ImuState", from_py_object)]
#[derive(Clone)]
pub struct PyImuState {
    pub inner: ImuState,
}

#[pymethods]
impl PyImuState {
    #[new]
    #[pyo3(signature = (q = vec![0.0, 0.0, 0.0, 1.0], p = vec![0.0; 3], v = vec![0.0; 3], bg = vec![0.0; 3], ba = vec![0.0; 3]))]
    fn new(q: Vec<f64>, p: Vec<f64>, v: Vec<f64>, bg: Vec<f64>, ba: Vec<f64>) -> PyResult<Self> {
        Ok(Self { inner: ImuState { q: quat(&q)?, bg: v3(&bg)?, v: v3(&v)?, ba: v3(&ba)?, p: v3(&p)? } })
    }

    #[getter]
    fn q(&self) -> Vec<f64> {
        self.inner.q.coords().iter().copied().collect()
    }

    #[getter]
    fn p(&self) -> Vec<f64> {
        self.inner.p.iter().copied().collect()
    }

    #[getter]
    fn v(&self) -> Vec<f64> {
        self.inner.v.iter().copied().collect()
    }

    #[getter]
    fn bg(&self) -> Vec<f64> {
        self.inner.bg.iter().copied().collect()
    }

    #[getter]
    fn ba(&self) -> Vec<f64> {
        self.inner.ba.iter().copied().collect()
    }

    /// `self ⊞ δx` with `δx = [θ, b_ω, v, b_a, p]`.
    fn boxplus(&self, dx: Vec<f64>) -> PyResult<Self> {
        if dx.len() != 15 {
            return Err(value_error(format!("expected 15 values, got {}", dx.len())));
        }
        Ok(Self { inner: self.inner.boxplus(&Vector15::from_column_slice(&dx)) })
    }

    /// `self ⊟ other`.
    fn boxminus(&self, other: &PyImuState) -> Vec<f64> {
        self.inner.boxminus(&other.inner).iter().copied().collect()
    }

    fn __repr__(&self) -> String {
        let x = &self.inner;
        format!("ImuState(q={:?}, p={:?}, v={:?})", self.q(), x.p.as_slice(), x.v.as_slice())
    }
}

/// Preintegrated IMU measurement between two keyframes.
#[pyclass(name = "PreintegratedMeasurement", from_py_object)]
#[derive(Clone)]
pub struct PyPreintegrated {
    pub inner: PreintegratedFactor,
}

#[pymethods]
impl PyPreintegrated {
    #[getter]
    fn model(&self) -> &'static str {
        self.inner.model.name()
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.inner.dt
    }

    /// `ᵏ⁺¹_k q̆` as `[x, y, z, w]`.
    #[getter]
    fn q(&self) -> Vec<f64> {
        self.inner.q.coords().iter().copied().collect()
    }

    #[getter]
    fn alpha(&self) -> Vec<f64> {
        self.inner.alpha.iter().copied().collect()
    }

    #[getter]
    fn beta(&self) -> Vec<f64> {
        self.inner.beta.iter().copied().collect()
    }

    /// 15×15 covariance over `[θ, b_ω, β, b_a, α]`.
    #[getter]
    fn covariance(&self) -> Vec<Vec<f64>> {
        rows(&DMatrix::from_column_slice(15, 15, self.inner.cov.as_slice()))
    }

    /// Bias Jacobians `J_q, J_α, J_β, H_α, H_β` by name.
    fn bias_jacobian(&self, name: &str) -> PyResult<Vec<Vec<f64>>> {
        let f = &self.inner;
        let m = match name {
            "jq" => &f.jq,
            "ja" => &f.ja,
            "jb" => &f.jb,
            "ha" => &f.ha,
            "hb" => &f.hb,
            "oa" => &f.oa,
            "ob" => &f.ob,
            _ => return Err(value_error(format!("unknown Jacobian '{name}'"))),
        };
        Ok(rows3(m))
    }

    /// End state implied by the measurement from `xk`.
    fn predict(&self, xk: &PyImuState) -> PyImuState {
        PyImuState { inner: self.inner.predict(&xk.inner) }
    }
}

/// Preintegrates samples `(t, ω, a)` over `[t0, t1]` with the given model.
#[pyfunction]
#[pyo3(signature = (model_name, t, omega, accel, t0, t1, bg = vec![0.0; 3], ba = vec![0.0; 3], q_kg = vec![0.0, 0.0, 0.0, 1.0]))]
#[allow(clippy::too_many_arguments)]
fn preintegrate(
    model_name: &str,
    t: Vec<f64>,
    omega: Vec<Vec<f64>>,
    accel: Vec<Vec<f64>>,
    t0: f64,
    t1: f64,
    bg: Vec<f64>,
    ba: Vec<f64>,
    q_kg: Vec<f64>,
) -> PyResult<PyPreintegrated> {
    if t.len() != omega.len() || t.len() != accel.len() {
        return Err(value_error("t, omega and accel must have the same length"));
    }
    if t.windows(2).any(|w| w[1] <= w[0]) {
        return Err(value_error("sample times must be strictly increasing"));
    }
    if !(t1 > t0) {
        return Err(value_error("t1 must be greater than t0"));
    }
    let samples = t
        .iter()
        .zip(omega.iter().zip(&accel))
        .map(|(t, (w, a))| Ok(ImuSample { t: *t, omega: v3(w)?, accel: v3(a)? }))
        .collect::<PyResult<Vec<_>>>()?;
    let lin = BiasLinearization::new(v3(&bg)?, v3(&ba)?, quat(&q_kg)?);
    let f = preintegrate_interval(model(model_name)?, lin, ImuNoise::default(), &samples, t0, t1);
    Ok(PyPreintegrated { inner: f })
}

/// Default scenario as JSON.
#[pyfunction]
fn default_config() -> String {
    serde_json::to_string_pretty(&ScenarioConfig::default()).expect("config serializes")
}

/// Ground truth `(t, state)` at every camera frame of run `run`.
#[pyfunction]
#[pyo3(signature = (config_json, run = 0))]
fn simulate_truth(config_json: &str, run: u64) -> PyResult<Vec<(f64, PyImuState)>> {
    let cfg = ScenarioConfig::from_json(config_json).map_err(value_error)?;
    let sim = simulate(&cfg.trajectory, &cfg.imu, &cfg.camera, cfg.seed, run);
    Ok(sim.frames.iter().map(|f| (f.t, PyImuState { inner: f.truth })).collect())
}

/// Runs the estimator on run `run` and returns `(t, estimate, truth)` per frame.
#[pyfunction]
#[pyo3(signature = (config_json, model_name, run = 0, loosely_coupled = false))]
fn estimate(
    py: Python<'_>,
    config_json: &str,
    model_name: &str,
    run: u64,
    loosely_coupled: bool,
) -> PyResult<Vec<(f64, PyImuState, PyImuState)>> {
    let cfg = ScenarioConfig::from_json(config_json).map_err(value_error)?;
    let m = model(model_name)?;
    let est_cfg = EstimatorConfig {
        mode: if loosely_coupled { Mode::LooselyCoupled } else { cfg.estimator.mode },
        ..cfg.estimator.clone()
    };
    let (out, sim) = py.detach(|| {
        let sim = simulate(&cfg.trajectory, &cfg.imu, &cfg.camera, cfg.seed, run);
        (run_estimator(&sim, m, &cfg.imu.noise, &cfg.camera, &est_cfg), sim)
    });
    if let Some(reason) = out.diverged {
        return Err(value_error(format!("estimator diverged: {reason}")));
    }
    Ok(out
        .steps
        .iter()
        .map(|s| (s.t, PyImuState { inner: s.state }, PyImuState { inner: sim.frames[s.frame].truth }))
        .collect())
}

/// Runs the Monte-Carlo benchmark and returns the summary JSON. When `out_dir`
/// is given the CSV and JSON outputs are written there as well.
#[pyfunction]
#[pyo3(signature = (config_json, out_dir = None))]
fn run_benchmark(py: Python<'_>, config_json: &str, out_dir: Option<std::path::PathBuf>) -> PyResult<String> {
    let cfg = ScenarioConfig::from_json(config_json).map_err(value_error)?;
    let report = py.detach(|| run_monte_carlo(&cfg));
    if let Some(dir) = out_dir {
        report.write(&dir).map_err(value_error)?;
    }
    Ok(report.summary_json())
}

/// Runs the oracle suite. Returns `(name, worst / tolerance, passed)` per check.
#[pyfunction]
#[pyo3(signature = (quick = true))]
fn run_oracle(py: Python<'_>, quick: bool) -> Vec<(String, f64, bool)> {
    let mut cfg = SuiteConfig::default();
    if quick {
        cfg.mean_draws = 100;
        cfg.rk4_substeps = 2000;
        cfg.jacobian_draws = 10;
        cfg.bias_draws = 10;
    }
    let report = py.detach(|| run_oracle_suite(&cfg));
    report.checks.into_iter().map(|c| (c.name, c.worst, c.passed)).collect()
}

#[pymodule]
pub fn cfpi_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyImuState>()?;
    m.add_class::<PyPreintegrated>()?;
    m.add_function(wrap_pyfunction!(preintegrate, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_truth, m)?)?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(run_benchmark, m)?)?;
    m.add_function(wrap_pyfunction!(run_oracle, m)?)?;
    Ok(())
}
