//! Log-linear softmax response policy `pi_theta(y | x) ∝ exp(theta . psi(x, y))`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EvaError, Result};
use crate::task_space::{dot, ResponseSet};

/// Solver weights plus the id of the snapshot they belong to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub theta: Vec<f64>,
    pub snapshot_id: u64,
}

impl PolicyParams {
    pub fn new(theta: Vec<f64>, snapshot_id: u64) -> Result<Self> {
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(EvaError::NumericDomain(
                "policy weights must be finite".into(),
            ));
        }
        Ok(PolicyParams { theta, snapshot_id })
    }

    pub fn zeros(dim: usize) -> Self {
        PolicyParams {
            theta: vec![0.0; dim],
            snapshot_id: 0,
        }
    }

    /// Copy-on-write update: returns a new snapshot with the next id.
    pub fn with_theta(&self, theta: Vec<f64>) -> Result<Self> {
        Self::new(theta, self.snapshot_id + 1)
    }
}

/// Frozen reference policy. Weights cannot be mutated after construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferencePolicy {
    theta_ref: Vec<f64>,
}

impl ReferencePolicy {
    pub fn new(theta_ref: Vec<f64>) -> Result<Self> {
        if theta_ref.iter().any(|v| !v.is_finite()) {
            return Err(EvaError::NumericDomain(
                "reference weights must be finite".into(),
            ));
        }
        Ok(ReferencePolicy { theta_ref })
    }

    /// Uniform reference (`theta_ref = 0`).
    pub fn uniform(dim: usize) -> Self {
        ReferencePolicy {
            theta_ref: vec![0.0; dim],
        }
    }

    /// A fresh solver snapshot initialized at the reference weights.
    pub fn initial_params(&self) -> PolicyParams {
        PolicyParams {
            theta: self.theta_ref.clone(),
            snapshot_id: 0,
        }
    }
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Everything derived from a weight vector over a response set.
pub trait SoftmaxPolicy {
    fn theta(&self) -> &[f64];

    fn logits(&self, set: &ResponseSet) -> Result<Vec<f64>> {
        if set.is_empty() {
            return Err(EvaError::invalid("empty response set"));
        }
        if set.dim() != self.theta().len() {
            return Err(EvaError::invalid(format!(
                "policy has {} weights but responses have {} features",
                self.theta().len(),
                set.dim()
            )));
        }
        Ok(set
            .responses
            .iter()
            .map(|r| dot(self.theta(), &r.features))
            .collect())
    }

    fn log_distribution(&self, set: &ResponseSet) -> Result<Vec<f64>> {
        let logits = self.logits(set)?;
        let lse = log_sum_exp(&logits);
        Ok(logits.into_iter().map(|z| z - lse).collect())
    }

    /// Softmax with max-subtraction.
    fn distribution(&self, set: &ResponseSet) -> Result<Vec<f64>> {
        let logits = self.logits(set)?;
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        Ok(weights.into_iter().map(|w| w / total).collect())
    }

    fn logprob(&self, set: &ResponseSet, index: usize) -> Result<f64> {
        set.get(index)?;
        Ok(self.log_distribution(set)?[index])
    }

    /// `log(1 - pi(y_index))`, computed from the other responses' mass.
    fn log_complement(&self, set: &ResponseSet, index: usize) -> Result<f64> {
        set.get(index)?;
        let logits = self.logits(set)?;
        let others: Vec<f64> = logits
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != index)
            .map(|(_, &z)| z)
            .collect();
        Ok(log_sum_exp(&others) - log_sum_exp(&logits))
    }

    /// Policy-weighted mean feature vector `sum_j p_j psi_j`.
    fn mean_features(&self, set: &ResponseSet) -> Result<Vec<f64>> {
        let probs = self.distribution(set)?;
        let mut mean = vec![0.0; set.dim()];
        for (p, r) in probs.iter().zip(&set.responses) {
            for (m, f) in mean.iter_mut().zip(&r.features) {
                *m += p * f;
            }
        }
        Ok(mean)
    }

    /// `psi(x, y_index) - E_pi[psi(x, y)]`.
    fn grad_logprob(&self, set: &ResponseSet, index: usize) -> Result<Vec<f64>> {
        let response = set.get(index)?;
        let mean = self.mean_features(set)?;
        Ok(response
            .features
            .iter()
            .zip(&mean)
            .map(|(f, m)| f - m)
            .collect())
    }

    /// `n` i.i.d. draws by inverse CDF.
    fn sample<R: Rng + ?Sized>(
        &self,
        set: &ResponseSet,
        n: usize,
        rng: &mut R,
    ) -> Result<Vec<usize>>
    where
        Self: Sized,
    {
        if n < 1 {
            return Err(EvaError::invalid("sample count must be >= 1"));
        }
        let probs = self.distribution(set)?;
        Ok((0..n).map(|_| sample_index(&probs, rng)).collect())
    }

    /// `KL(pi_theta || pi_ref)` over the response set.
    fn kl_to(&self, reference: &dyn SoftmaxPolicy, set: &ResponseSet) -> Result<f64> {
        let logp = self.log_distribution(set)?;
        let logq = reference.log_distribution(set)?;
        let kl: f64 = logp
            .iter()
            .zip(&logq)
            .map(|(lp, lq)| lp.exp() * (lp - lq))
            .sum();
        Ok(kl.max(0.0))
    }
}

impl SoftmaxPolicy for PolicyParams {
    fn theta(&self) -> &[f64] {
        &self.theta
    }
}

impl SoftmaxPolicy for ReferencePolicy {
    fn theta(&self) -> &[f64] {
        &self.theta_ref
    }
}

pub fn kl_to_ref(
    params: &PolicyParams,
    reference: &ReferencePolicy,
    set: &ResponseSet,
) -> Result<f64> {
    params.kl_to(reference, set)
}

/// Inverse-CDF draw; the last index absorbs rounding in the cumulative sum.
pub fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs
        .iter()
        .rposition(|&p| p > 0.0)
        .unwrap_or(probs.len() - 1)
}
