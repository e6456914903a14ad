//! Python bindings: the driving world, reward assembly, preference vectors,
//! trained policies and the evaluation metrics.

use prefdrive::agent::{self, PreferenceVector, Td3, PREF_DIM};
use prefdrive::harness::{self, rollout};
use prefdrive::metrics::{self, InfractionCounts, PenaltyTable};
use prefdrive::reward::{self, RewardParams, OBJECTIVE_NAMES};
use prefdrive::world::{self, Action, Observation, WorldConfig, OBSERVATION_DIM};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Converts any serializable value to Python objects through the `json` module.
fn to_py<'py, T: serde::Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(value_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn preference(lambda: Vec<f64>) -> PyResult<PreferenceVector> {
    let w: [f64; PREF_DIM] = lambda
        .as_slice()
        .try_into()
        .map_err(|_| PyValueError::new_err(format!("lambda needs {PREF_DIM} components, got {}", lambda.len())))?;
    PreferenceVector::new(w).map_err(value_err)
}

/// A preference vector on the probability simplex.
#[pyclass(name = "Preference", frozen, from_py_object)]
#[derive(Clone, Copy)]
struct PyPreference(PreferenceVector);

#[pymethods]
impl PyPreference {
    #[new]
    fn new(weights: Vec<f64>) -> PyResult<Self> {
        preference(weights).map(Self)
    }

    #[staticmethod]
    fn sample(seed: u64) -> Self {
        Self(PreferenceVector::sample(&mut ChaCha8Rng::seed_from_u64(seed)))
    }

    #[staticmethod]
    fn one_hot(index: usize) -> PyResult<Self> {
        if index >= PREF_DIM {
            return Err(PyValueError::new_err(format!("index must be below {PREF_DIM}")));
        }
        Ok(Self(PreferenceVector::one_hot(index)))
    }

    #[staticmethod]
    fn uniform() -> Self {
        Self(PreferenceVector::uniform())
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.0.as_array().to_vec()
    }

    /// `(1, λ)`, the weights applied to the five-component value vector.
    fn augmented(&self) -> Vec<f64> {
        self.0.augmented().to_vec()
    }

    fn scalarize(&self, q: [f64; 5]) -> f64 {
        agent::scalarize(&self.0, &q)
    }

    fn __repr__(&self) -> String {
        let w = self.0.as_array();
        format!("Preference([{}, {}, {}, {}])", w[0], w[1], w[2], w[3])
    }
}

/// The 2D driving world with reward assembly on every step.
#[pyclass(name = "World", unsendable)]
struct PyWorld {
    config: WorldConfig,
    reward: RewardParams,
    world: world::World,
    observation: Observation,
}

impl PyWorld {
    fn observation_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        d.set_item("features", self.observation.to_features())?;
        d.set_item("bearing", self.observation.bearing())?;
        Ok(d)
    }
}

#[pymethods]
impl PyWorld {
    /// `scenario` 1..=7 selects a fixed route; `None` draws a random route from `seed`.
    #[new]
    #[pyo3(signature = (scenario=None, seed=0, traffic_density=None))]
    fn new(scenario: Option<u32>, seed: u64, traffic_density: Option<f64>) -> PyResult<Self> {
        let config = WorldConfig {
            scenario,
            traffic_density,
            ..WorldConfig::default()
        };
        config.validate().map_err(value_err)?;
        let (world, observation) = world::World::reset(&config, seed).map_err(value_err)?;
        Ok(Self {
            config,
            reward: RewardParams::default(),
            world,
            observation,
        })
    }

    /// Starts a new episode and returns its first observation.
    fn reset<'py>(&mut self, py: Python<'py>, seed: u64) -> PyResult<Bound<'py, PyDict>> {
        let (world, observation) = world::World::reset(&self.config, seed).map_err(value_err)?;
        self.world = world;
        self.observation = observation;
        self.observation_dict(py)
    }

    /// Advances one 0.1 s step. Both inputs are clipped to [-1, 1].
    fn step<'py>(&mut self, py: Python<'py>, steer: f64, longitudinal: f64) -> PyResult<Bound<'py, PyDict>> {
        let result = self.world.step(Action::new(steer, longitudinal)).map_err(value_err)?;
        let r = reward::assemble(&result.context, &self.reward).map_err(value_err)?;
        self.observation = result.observation;
        let d = self.observation_dict(py)?;
        d.set_item("reward", r.to_array().to_vec())?;
        d.set_item("events", result.outcome.events.names())?;
        d.set_item("termination", to_py(py, &result.outcome.termination)?)?;
        d.set_item("state", to_py(py, &result.state)?)?;
        Ok(d)
    }

    #[getter]
    fn steps(&self) -> u32 {
        self.world.steps()
    }

    #[getter]
    fn route(&self) -> Vec<(f64, f64)> {
        self.world.route().waypoints.iter().map(|p| (p.x, p.y)).collect()
    }

    #[getter]
    fn route_completion(&self) -> f64 {
        self.world.route_completion()
    }

    #[getter]
    fn terminated(&self) -> Option<String> {
        let r = self.world.terminated()?;
        serde_json::to_value(r).ok()?.as_str().map(String::from)
    }

    #[getter]
    fn features(&self) -> Vec<f64> {
        self.observation.to_features()
    }
}

/// A trained policy loaded from a checkpoint.
#[pyclass(name = "Policy", frozen)]
struct PyPolicy(Td3);

#[pymethods]
impl PyPolicy {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        harness::load_policy(&path).map(Self).map_err(value_err)
    }

    /// An untrained policy with the given hidden sizes, for experiments and tests.
    #[staticmethod]
    #[pyo3(signature = (seed, hidden=vec![250, 125]))]
    fn random(seed: u64, hidden: Vec<usize>) -> PyResult<Self> {
        let cfg = agent::Td3Config {
            hidden,
            ..agent::Td3Config::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Td3::new(cfg, OBSERVATION_DIM, &mut rng).map(Self).map_err(value_err)
    }

    /// Greedy `(steer, longitudinal)` for an observation feature vector.
    fn act(&self, features: Vec<f64>, preference: PyPreference) -> PyResult<(f64, f64)> {
        let a = self.0.act(&features, &preference.0).map_err(value_err)?;
        Ok((a.steer, a.longitudinal))
    }

    /// Twin critic estimates of the five-component value of `(features, action)`.
    fn q_values(&self, features: Vec<f64>, preference: PyPreference, action: (f64, f64)) -> PyResult<[[f64; 5]; 2]> {
        self.0
            .q_values(&features, &preference.0, Action::new(action.0, action.1))
            .map_err(value_err)
    }

    /// Runs one greedy episode and returns its metrics.
    #[pyo3(signature = (preference, scenario=1, seed=0))]
    fn evaluate<'py>(&self, py: Python<'py>, preference: PyPreference, scenario: u32, seed: u64) -> PyResult<Bound<'py, PyAny>> {
        let world = WorldConfig::scenario(scenario);
        let log = rollout::run_episode(&self.0, &world, &RewardParams::default(), seed, preference.0, true)
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        let m = metrics::episode_metrics(&log, &PenaltyTable::default()).map_err(value_err)?;
        to_py(py, &m)
    }
}

/// Default reward coefficients as a dict.
#[pyfunction]
fn reward_params(py: Python<'_>) -> PyResult<Bound<'_, PyAny>> {
    to_py(py, &RewardParams::default())
}

#[pyfunction]
fn angle_loss(lambda_p: [f64; PREF_DIM], q_pref: [f64; PREF_DIM]) -> PyResult<f64> {
    agent::angle_loss(&lambda_p, &q_pref).map_err(value_err)
}

/// Welch's t-test; returns `(t, dof, p)`.
#[pyfunction]
fn welch_t_test(xs: Vec<f64>, ys: Vec<f64>) -> PyResult<(f64, f64, f64)> {
    let w = metrics::welch_t_test(&xs, &ys).map_err(value_err)?;
    Ok((w.t, w.dof, w.p))
}

#[pyfunction]
fn significance_stars(p: f64) -> &'static str {
    metrics::significance_stars(p)
}

/// Driving score in percent with the default penalty factors.
#[pyfunction]
#[pyo3(signature = (route_completion, vehicle_collision=0, environment_collision=0, timeout=0, speeding=0, lane_violation=0))]
fn driving_score(
    route_completion: f64,
    vehicle_collision: u32,
    environment_collision: u32,
    timeout: u32,
    speeding: u32,
    lane_violation: u32,
) -> f64 {
    let counts = InfractionCounts {
        vehicle_collision,
        environment_collision,
        timeout,
        speeding,
        lane_violation,
    };
    metrics::driving_score(route_completion, &counts, &PenaltyTable::default())
}

#[pymodule]
fn prefdrive_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPreference>()?;
    m.add_class::<PyWorld>()?;
    m.add_class::<PyPolicy>()?;
    m.add_function(wrap_pyfunction!(reward_params, m)?)?;
    m.add_function(wrap_pyfunction!(angle_loss, m)?)?;
    m.add_function(wrap_pyfunction!(welch_t_test, m)?)?;
    m.add_function(wrap_pyfunction!(significance_stars, m)?)?;
    m.add_function(wrap_pyfunction!(driving_score, m)?)?;
    m.add("OBJECTIVE_NAMES", OBJECTIVE_NAMES.to_vec())?;
    m.add("OBSERVATION_DIM", OBSERVATION_DIM)?;
    Ok(())
}
