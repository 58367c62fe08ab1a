//! Python bindings: policies, adapters, the walker environment and a few
//! numeric helpers.

use adaptnet::adapt::{self, AdaptedPolicy};
use adaptnet::analysis;
use adaptnet::experiment::{self, ExperimentConfig, PolicyManifest};
use adaptnet::neural::{PolicyNet, Tensor};
use adaptnet::trainer::{self, Env};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row_slice(r).to_vec()).collect()
}

fn config(json: Option<&str>) -> PyResult<ExperimentConfig> {
    match json {
        Some(s) => ExperimentConfig::from_json(s).map_err(err),
        None => Ok(ExperimentConfig::default()),
    }
}

/// A base policy network.
#[pyclass(name = "Policy", module = "adaptnet")]
struct Policy {
    net: PolicyNet,
}

#[pymethods]
impl Policy {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            net: experiment::load_policy(path).map_err(err)?,
        })
    }

    /// Freshly initialized network for the default body.
    #[staticmethod]
    #[pyo3(signature = (seed = 0))]
    fn random(seed: u64) -> PyResult<Self> {
        let cfg = ExperimentConfig {
            seed,
            ..Default::default()
        };
        Ok(Self {
            net: cfg.fresh_policy().map_err(err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        let m = PolicyManifest {
            kind: "policy".into(),
            dims: self.net.dims.clone(),
            config_hash: None,
            seed: None,
            iterations: None,
        };
        experiment::save_policy(&self.net, &m, path).map_err(err)
    }

    /// Deterministic action means and per-dimension `log_std` for a batch.
    fn act(&self, obs: Vec<Vec<f64>>, goal: Vec<Vec<f64>>) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
        let (m, ls) = self
            .net
            .act(&Tensor::from_rows(&obs), &Tensor::from_rows(&goal))
            .map_err(err)?;
        Ok((rows(&m), ls.row_slice(0).to_vec()))
    }

    #[getter]
    fn obs_dim(&self) -> usize {
        self.net.dims.obs_dim()
    }

    #[getter]
    fn goal_dim(&self) -> usize {
        self.net.dims.goal_dim
    }

    #[getter]
    fn action_dim(&self) -> usize {
        self.net.dims.action_dim
    }

    fn content_hash(&self) -> String {
        self.net.params.content_hash()
    }
}

/// Adapters over a frozen base.
#[pyclass(name = "Adapter", module = "adaptnet")]
struct Adapter {
    p: AdaptedPolicy,
}

#[pymethods]
impl Adapter {
    /// Fresh adapters; `config_json` is an experiment config whose `adapter`
    /// section picks the variant.
    #[staticmethod]
    #[pyo3(signature = (base, config_json = None))]
    fn build(base: &Policy, config_json: Option<&str>) -> PyResult<Self> {
        let cfg = config(config_json)?;
        Ok(Self {
            p: cfg.adapted_policy(&base.net).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(base: &Policy, path: &str) -> PyResult<Self> {
        Ok(Self {
            p: adapt::load_adapter(&base.net, path).map_err(err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        adapt::save_adapter(&self.p, path).map_err(err)
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.p.config.alpha
    }

    #[setter]
    fn set_alpha(&mut self, alpha: f64) -> PyResult<()> {
        self.p.set_alpha(alpha).map_err(err)
    }

    #[getter]
    fn trainable_count(&self) -> usize {
        self.p.trainable_count()
    }

    /// Action means and `log_std` at the current α (or `alpha` if given).
    #[pyo3(signature = (obs, goal, alpha = None))]
    fn act(&self, obs: Vec<Vec<f64>>, goal: Vec<Vec<f64>>, alpha: Option<f64>) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
        let a = alpha.unwrap_or(self.p.config.alpha);
        let (m, ls) = self
            .p
            .forward_alpha(a, &Tensor::from_rows(&obs), &Tensor::from_rows(&goal), None)
            .map_err(err)?;
        Ok((rows(&m), ls.row_slice(0).to_vec()))
    }

    /// Fold the internal adapters into the trunk weights; the injector stays.
    fn merge(&self) -> PyResult<Adapter> {
        Ok(Adapter {
            p: adapt::merge(&self.p).map_err(err)?,
        })
    }
}

/// The planar walker with its goal and reference clip.
#[pyclass(name = "Env", module = "adaptnet", unsendable)]
struct PyEnv {
    env: Env,
}

#[pymethods]
impl PyEnv {
    #[new]
    #[pyo3(signature = (config_json = None, seed = 0))]
    fn new(config_json: Option<&str>, seed: u64) -> PyResult<Self> {
        let task = config(config_json)?.task().map_err(err)?;
        Ok(Self {
            env: Env::new(task.env, Some(task.clip), seed),
        })
    }

    /// `(obs, goal)` for the current state.
    fn observation(&self) -> (Vec<f64>, Vec<f64>) {
        let o = self.env.observation();
        (o.obs, o.goal)
    }

    fn step<'py>(&mut self, py: Python<'py>, action: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
        let expected = self.env.morphology().num_actuated();
        if action.len() != expected {
            return Err(err(format!("action has {} entries, expected {expected}", action.len())));
        }
        let info = self.env.step(&action);
        let d = PyDict::new(py);
        d.set_item("goal_reward", info.goal_reward)?;
        d.set_item("fell", info.fell)?;
        d.set_item("timeout", info.timeout)?;
        d.set_item("done", info.done())?;
        d.set_item("root_x", info.root_x)?;
        Ok(d)
    }

    fn reset(&mut self) {
        self.env.reset();
    }

    /// `(x, y, angle)` per link.
    fn poses(&self) -> Vec<(f64, f64, f64)> {
        self.env.poses().iter().map(|p| (p.x, p.y, p.angle)).collect()
    }

    #[getter]
    fn time(&self) -> f64 {
        self.env.time
    }
}

/// Advantages and returns from one trajectory (`values` has one extra entry).
#[pyfunction]
fn gae(rewards: Vec<f64>, values: Vec<f64>, dones: Vec<bool>, gamma: f64, lam: f64) -> PyResult<(Vec<f64>, Vec<f64>)> {
    trainer::gae(&rewards, &values, &dones, gamma, lam).map_err(err)
}

#[pyfunction]
fn standardize(x: Vec<f64>) -> Vec<f64> {
    trainer::standardize(&x)
}

#[pyfunction]
fn goal_reward(displacement: f64, target_velocity: f64, distance: f64, radius: f64, frame_dt: f64) -> f64 {
    trainer::goal_reward(displacement, target_velocity, distance, radius, frame_dt)
}

#[pyfunction]
fn imitation_reward(head_outputs: Vec<f64>) -> f64 {
    trainer::imitation_reward(&head_outputs)
}

/// Classical MDS of a distance matrix: `(coords, stress)`.
#[pyfunction]
fn classical_mds(dist: Vec<Vec<f64>>, dim: usize) -> PyResult<(Vec<Vec<f64>>, f64)> {
    let e = analysis::classical_mds(&dist, dim).map_err(err)?;
    Ok((e.coords, e.stress))
}

#[pymodule]
#[pyo3(name = "adaptnet")]
fn adaptnet_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Policy>()?;
    m.add_class::<Adapter>()?;
    m.add_class::<PyEnv>()?;
    m.add_function(wrap_pyfunction!(gae, m)?)?;
    m.add_function(wrap_pyfunction!(standardize, m)?)?;
    m.add_function(wrap_pyfunction!(goal_reward, m)?)?;
    m.add_function(wrap_pyfunction!(imitation_reward, m)?)?;
    m.add_function(wrap_pyfunction!(classical_mds, m)?)?;
    m.add("CONTROL_DT", trainer::CONTROL_DT)?;
    Ok(())
}
