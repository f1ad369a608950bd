//! `evaplay`: Python access to the eva-core task space, policies, losses,
//! metrics, regret oracles and the run loop.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use pyo3::IntoPyObjectExt;

use eva_core::creator::{self, MetricKind};
use eva_core::losses::{self, LossConfig, LossKind};
use eva_core::orchestrator::{self, RunConfig, RunMode};
use eva_core::preference;
use eva_core::regret_lab;
use eva_core::rng::stream;
use eva_core::{PolicyParams, PromptId, ReferencePolicy, ResponseSet, SoftmaxPolicy};

create_exception!(
    evaplay,
    EvaError,
    PyException,
    "Raised for every eva-core error; the message starts with its category."
);

fn err(e: eva_core::EvaError) -> PyErr {
    EvaError::new_err(format!("[{}] {e}", e.category()))
}

fn json_to_py(py: Python<'_>, value: &serde_json::Value) -> PyResult<Py<PyAny>> {
    use serde_json::Value;
    Ok(match value {
        Value::Null => py.None(),
        Value::Bool(b) => b.into_py_any(py)?,
        Value::Number(n) => match (n.as_i64(), n.as_u64()) {
            (Some(i), _) => i.into_py_any(py)?,
            (None, Some(u)) => u.into_py_any(py)?,
            _ => n.as_f64().unwrap_or(f64::NAN).into_py_any(py)?,
        },
        Value::String(s) => s.into_py_any(py)?,
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(json_to_py(py, item)?)?;
            }
            list.into_any().unbind()
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, v) in map {
                dict.set_item(k, json_to_py(py, v)?)?;
            }
            dict.into_any().unbind()
        }
    })
}

fn metric(kind: &str) -> PyResult<MetricKind> {
    MetricKind::ALL
        .into_iter()
        .find(|m| m.as_str() == kind)
        .ok_or_else(|| {
            EvaError::new_err(format!("[invalid-argument] unknown metric kind {kind:?}"))
        })
}

fn response_set(features: Vec<Vec<f64>>) -> PyResult<ResponseSet> {
    ResponseSet::from_features(PromptId(0), features).map_err(err)
}

/// A synthetic prompt.
#[pyclass(module = "evaplay", from_py_object)]
#[derive(Clone)]
struct Prompt {
    inner: eva_core::Prompt,
}

#[pymethods]
impl Prompt {
    #[getter]
    fn id(&self) -> u64 {
        self.inner.id.0
    }

    #[getter]
    fn family(&self) -> String {
        self.inner.family.clone()
    }

    #[getter]
    fn difficulty(&self) -> f64 {
        self.inner.difficulty
    }

    #[getter]
    fn features(&self) -> Vec<f64> {
        self.inner.features.clone()
    }

    #[getter]
    fn parent(&self) -> Option<u64> {
        self.inner.parent().map(|p| p.0)
    }

    /// Copy with a different difficulty.
    fn with_difficulty(&self, difficulty: f64) -> PyResult<Prompt> {
        if !(0.0..=1.0).contains(&difficulty) {
            return Err(EvaError::new_err(
                "[invalid-argument] difficulty outside [0, 1]",
            ));
        }
        Ok(Prompt {
            inner: eva_core::Prompt {
                difficulty,
                ..self.inner.clone()
            },
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Prompt(id={}, family={:?}, difficulty={:.4})",
            self.inner.id.0, self.inner.family, self.inner.difficulty
        )
    }
}

/// Reward oracle plus response enumeration.
#[pyclass(module = "evaplay")]
struct TaskSpace {
    inner: eva_core::TaskSpace,
}

#[pymethods]
impl TaskSpace {
    /// Default task space, or the `[task]` table of a TOML config.
    #[new]
    #[pyo3(signature = (config_toml=None))]
    fn new(config_toml: Option<&str>) -> PyResult<Self> {
        let inner = match config_toml {
            Some(text) => RunConfig::from_toml_str(text).map_err(err)?.task,
            None => eva_core::TaskSpace::default(),
        };
        Ok(TaskSpace { inner })
    }

    #[getter]
    fn feature_dim(&self) -> usize {
        self.inner.oracle.feature_dim()
    }

    fn sample_prompts(&self, n: usize, seed: u64) -> Vec<Prompt> {
        let mut rng = stream(seed);
        self.inner
            .oracle
            .sample_prompts(n, &mut rng)
            .into_iter()
            .map(|inner| Prompt { inner })
            .collect()
    }

    /// `(features, rewards)` of the prompt's enumerated responses.
    fn annotate(&self, prompt: &Prompt) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
        let (set, rewards) = self.inner.annotate(&prompt.inner).map_err(err)?;
        Ok((
            set.responses.into_iter().map(|r| r.features).collect(),
            rewards,
        ))
    }

    /// `n_evolutions` children by in-depth / in-breadth mutation.
    #[pyo3(signature = (prompt, n_evolutions=4, seed=0))]
    fn evolve(&self, prompt: &Prompt, n_evolutions: usize, seed: u64) -> PyResult<Vec<Prompt>> {
        let evolve = eva_core::task_space::EvolveConfig::default();
        let mut rng = stream(seed);
        Ok(evolve
            .evolve(&prompt.inner, n_evolutions, &mut rng)
            .map_err(err)?
            .into_iter()
            .map(|inner| Prompt { inner })
            .collect())
    }
}

/// Log-linear softmax policy over response features.
#[pyclass(module = "evaplay")]
struct Policy {
    inner: PolicyParams,
}

#[pymethods]
impl Policy {
    #[new]
    fn new(theta: Vec<f64>) -> PyResult<Self> {
        Ok(Policy {
            inner: PolicyParams::new(theta, 0).map_err(err)?,
        })
    }

    #[getter]
    fn theta(&self) -> Vec<f64> {
        self.inner.theta.clone()
    }

    fn distribution(&self, features: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        self.inner
            .distribution(&response_set(features)?)
            .map_err(err)
    }

    fn logprob(&self, features: Vec<Vec<f64>>, index: usize) -> PyResult<f64> {
        self.inner
            .logprob(&response_set(features)?, index)
            .map_err(err)
    }

    fn grad_logprob(&self, features: Vec<Vec<f64>>, index: usize) -> PyResult<Vec<f64>> {
        self.inner
            .grad_logprob(&response_set(features)?, index)
            .map_err(err)
    }

    fn sample(&self, features: Vec<Vec<f64>>, n: usize, seed: u64) -> PyResult<Vec<usize>> {
        let mut rng = stream(seed);
        self.inner
            .sample(&response_set(features)?, n, &mut rng)
            .map_err(err)
    }

    /// `KL(self || reference)` over the given responses.
    fn kl_to(&self, reference: Vec<f64>, features: Vec<Vec<f64>>) -> PyResult<f64> {
        let reference = ReferencePolicy::new(reference).map_err(err)?;
        self.inner
            .kl_to(&reference, &response_set(features)?)
            .map_err(err)
    }
}

/// Informativeness of a reward vector under one metric kind.
#[pyfunction]
#[pyo3(signature = (rewards, kind="A_min"))]
fn info(rewards: Vec<f64>, kind: &str) -> PyResult<f64> {
    creator::info(&rewards, metric(kind)?).map_err(err)
}

#[pyfunction]
fn metric_kinds() -> Vec<&'static str> {
    MetricKind::ALL.iter().map(|m| m.as_str()).collect()
}

#[pyfunction]
fn loss_kinds() -> Vec<&'static str> {
    LossKind::ALL.iter().map(|k| k.as_str()).collect()
}

#[pyfunction]
fn bt_probability(r_plus: f64, r_minus: f64) -> f64 {
    preference::bt_probability(r_plus, r_minus)
}

/// `(loss, delta, grad)` of one preference pair. Unset hyperparameters take
/// the kind's standard values.
#[pyfunction]
#[pyo3(signature = (kind, theta, theta_ref, features, chosen, rejected, beta=None, gamma=None, lam=None, alpha=None, nll_weight=0.0))]
#[allow(clippy::too_many_arguments)]
fn loss(
    kind: &str,
    theta: Vec<f64>,
    theta_ref: Vec<f64>,
    features: Vec<Vec<f64>>,
    chosen: usize,
    rejected: usize,
    beta: Option<f64>,
    gamma: Option<f64>,
    lam: Option<f64>,
    alpha: Option<f64>,
    nll_weight: f64,
) -> PyResult<(f64, f64, Vec<f64>)> {
    let kind: LossKind = kind.parse().map_err(err)?;
    let base = LossConfig::standard(kind);
    let config = LossConfig {
        beta: beta.or(base.beta),
        gamma: gamma.or(base.gamma),
        lambda: lam.or(base.lambda),
        alpha: alpha.or(base.alpha),
        ..base
    }
    .with_nll(nll_weight);
    let set = response_set(features)?;
    let pair = preference::PreferencePair {
        prompt_id: set.prompt_id,
        chosen,
        rejected,
        r_chosen: 1.0,
        r_rejected: 0.0,
    };
    let params = PolicyParams::new(theta, 0).map_err(err)?;
    let reference = ReferencePolicy::new(theta_ref).map_err(err)?;
    let e = losses::evaluate(&config, &params, &reference, &set, &pair).map_err(err)?;
    Ok((e.loss, e.delta, e.grad))
}

/// `(probs, beta * log Z)` of the KL-regularized optimum.
#[pyfunction]
fn kl_optimal(ref_logprobs: Vec<f64>, rewards: Vec<f64>, beta: f64) -> PyResult<(Vec<f64>, f64)> {
    let star =
        regret_lab::kl_optimal_from(PromptId(0), &ref_logprobs, &rewards, beta).map_err(err)?;
    Ok((star.probs, star.value))
}

#[pyfunction]
fn regret(probs: Vec<f64>, rewards: Vec<f64>) -> f64 {
    regret_lab::regret_from(&probs, &rewards)
}

/// Exact expected `max - min` reward over `n` i.i.d. draws.
#[pyfunction]
fn expected_a_min(probs: Vec<f64>, rewards: Vec<f64>, n: usize) -> PyResult<f64> {
    regret_lab::expected_a_min(&probs, &rewards, n).map_err(err)
}

/// `(policy index, creator distribution, value)` of min-max regret.
#[pyfunction]
fn solve_regret_matrix(regret: Vec<Vec<f64>>) -> PyResult<(usize, Vec<f64>, f64)> {
    let s = regret_lab::solve_regret_matrix(&regret).map_err(err)?;
    Ok((s.policy, s.creator, s.value))
}

#[pyfunction]
fn default_config() -> PyResult<String> {
    RunConfig::default().to_toml_string().map_err(err)
}

/// Runs a config and returns its iteration logs as dicts. With `out_dir`
/// every output file is written there as well.
#[pyfunction]
#[pyo3(signature = (config_toml=None, out_dir=None, seed=None, iterations=None, mode=None))]
fn run(
    py: Python<'_>,
    config_toml: Option<&str>,
    out_dir: Option<PathBuf>,
    seed: Option<u64>,
    iterations: Option<usize>,
    mode: Option<&str>,
) -> PyResult<Py<PyAny>> {
    let mut config = match config_toml {
        Some(text) => RunConfig::from_toml_str(text).map_err(err)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(n) = iterations {
        config.iterations = n;
    }
    if let Some(m) = mode {
        config.mode =
            serde_json::from_value::<RunMode>(serde_json::Value::String(m.to_string()))
                .map_err(|_| EvaError::new_err(format!("[invalid-argument] unknown mode {m:?}")))?;
    }
    config.validate().map_err(err)?;
    let state = py
        .detach(|| match out_dir {
            Some(dir) => orchestrator::execute_new(config, &dir, None),
            None => orchestrator::run(config),
        })
        .map_err(err)?;
    let logs =
        serde_json::to_value(&state.records.logs).map_err(|e| EvaError::new_err(e.to_string()))?;
    json_to_py(py, &logs)
}

#[pymodule]
pub fn evaplay(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("EvaError", m.py().get_type::<EvaError>())?;
    m.add_class::<Prompt>()?;
    m.add_class::<TaskSpace>()?;
    m.add_class::<Policy>()?;
    m.add_function(wrap_pyfunction!(info, m)?)?;
    m.add_function(wrap_pyfunction!(metric_kinds, m)?)?;
    m.add_function(wrap_pyfunction!(loss_kinds, m)?)?;
    m.add_function(wrap_pyfunction!(bt_probability, m)?)?;
    m.add_function(wrap_pyfunction!(loss, m)?)?;
    m.add_function(wrap_pyfunction!(kl_optimal, m)?)?;
    m.add_function(wrap_pyfunction!(regret, m)?)?;
    m.add_function(wrap_pyfunction!(expected_a_min, m)?)?;
    m.add_function(wrap_pyfunction!(solve_regret_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
