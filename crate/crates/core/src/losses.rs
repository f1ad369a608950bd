//! Contrastive preference losses and their analytic gradients.
//!
//! Each loss is available as a scalar kernel over precomputed ratios and as
//! a compositional operation over `(policy, reference, responses, pair)`.
//! Most kernels are functions of the contrastive ratio
//!
//! ```text
//! delta = [log pi(y+) - log pi_ref(y+)] - [log pi(y-) - log pi_ref(y-)]
//! ```
//!
//! whose gradient under the log-linear policy is simply `psi(y+) - psi(y-)`.

use serde::{Deserialize, Serialize};

use crate::error::{EvaError, Result};
use crate::policy::{PolicyParams, ReferencePolicy, SoftmaxPolicy};
use crate::preference::PreferencePair;
use crate::task_space::ResponseSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossKind {
    #[serde(rename = "DPO")]
    Dpo,
    #[serde(rename = "IPO")]
    Ipo,
    #[serde(rename = "SLiC")]
    Slic,
    #[serde(rename = "R-DPO")]
    RDpo,
    #[serde(rename = "DPO-P")]
    DpoP,
    #[serde(rename = "SimPO")]
    SimPo,
    #[serde(rename = "ORPO")]
    Orpo,
    #[serde(rename = "SPPO")]
    Sppo,
}

impl LossKind {
    pub const ALL: [LossKind; 8] = [
        LossKind::Dpo,
        LossKind::Ipo,
        LossKind::Slic,
        LossKind::RDpo,
        LossKind::DpoP,
        LossKind::SimPo,
        LossKind::Orpo,
        LossKind::Sppo,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Dpo => "DPO",
            LossKind::Ipo => "IPO",
            LossKind::Slic => "SLiC",
            LossKind::RDpo => "R-DPO",
            LossKind::DpoP => "DPO-P",
            LossKind::SimPo => "SimPO",
            LossKind::Orpo => "ORPO",
            LossKind::Sppo => "SPPO",
        }
    }

    pub fn uses_reference(self) -> bool {
        !matches!(self, LossKind::SimPo | LossKind::Orpo)
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for LossKind {
    type Err = EvaError;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| EvaError::invalid(format!("unknown loss kind {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub kind: LossKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// SimPO target margin.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// ORPO odds-ratio weight.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// R-DPO length penalty or DPO-P positive-likelihood penalty.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Weight of the length-normalized chosen-response NLL term added to any kind.
    #[serde(default)]
    pub nll_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig::standard(LossKind::Dpo)
    }
}

impl LossConfig {
    fn bare(kind: LossKind) -> Self {
        LossConfig {
            kind,
            beta: None,
            gamma: None,
            lambda: None,
            alpha: None,
            nll_weight: 0.0,
        }
    }

    pub fn dpo(beta: f64) -> Self {
        LossConfig {
            beta: Some(beta),
            ..Self::bare(LossKind::Dpo)
        }
    }

    pub fn with_beta(kind: LossKind, beta: f64) -> Self {
        LossConfig {
            beta: Some(beta),
            ..Self::bare(kind)
        }
    }

    pub fn simpo(beta: f64, gamma: f64) -> Self {
        LossConfig {
            beta: Some(beta),
            gamma: Some(gamma),
            ..Self::bare(LossKind::SimPo)
        }
    }

    pub fn orpo(lambda: f64) -> Self {
        LossConfig {
            lambda: Some(lambda),
            ..Self::bare(LossKind::Orpo)
        }
    }

    pub fn penalized(kind: LossKind, beta: f64, alpha: f64) -> Self {
        LossConfig {
            beta: Some(beta),
            alpha: Some(alpha),
            ..Self::bare(kind)
        }
    }

    /// Standard settings: DPO beta 0.05, IPO beta 0.6, SimPO beta 10 /
    /// gamma 5, SPPO beta 0.001, ORPO lambda 0.5. SLiC uses beta 1, R-DPO
    /// beta 0.05 / alpha 0.01, DPO-P beta 0.05 / alpha 1.
    pub fn standard(kind: LossKind) -> Self {
        match kind {
            LossKind::Dpo => Self::dpo(0.05),
            LossKind::Ipo => Self::with_beta(kind, 0.6),
            LossKind::Slic => Self::with_beta(kind, 1.0),
            LossKind::RDpo => Self::penalized(kind, 0.05, 0.01),
            LossKind::DpoP => Self::penalized(kind, 0.05, 1.0),
            LossKind::SimPo => Self::simpo(10.0, 5.0),
            LossKind::Orpo => Self::orpo(0.5),
            LossKind::Sppo => Self::with_beta(kind, 0.001),
        }
    }

    pub fn with_nll(mut self, weight: f64) -> Self {
        self.nll_weight = weight;
        self
    }

    fn need(&self, value: Option<f64>, name: &str) -> Result<f64> {
        value.ok_or_else(|| EvaError::Config(format!("{} loss requires {name}", self.kind)))
    }

    pub fn validate(&self) -> Result<()> {
        let positive_beta = |b: f64| {
            if b > 0.0 && b.is_finite() {
                Ok(())
            } else {
                Err(EvaError::Config(format!(
                    "{} loss needs beta > 0, got {b}",
                    self.kind
                )))
            }
        };
        match self.kind {
            LossKind::Dpo | LossKind::Ipo | LossKind::Slic | LossKind::Sppo => {
                positive_beta(self.need(self.beta, "beta")?)?
            }
            LossKind::RDpo => {
                positive_beta(self.need(self.beta, "beta")?)?;
                self.need(self.alpha, "alpha")?;
            }
            LossKind::DpoP => {
                positive_beta(self.need(self.beta, "beta")?)?;
                if self.need(self.alpha, "alpha")? < 0.0 {
                    return Err(EvaError::Config("DPO-P needs alpha >= 0".into()));
                }
            }
            LossKind::SimPo => {
                positive_beta(self.need(self.beta, "beta")?)?;
                self.need(self.gamma, "gamma")?;
            }
            LossKind::Orpo => {
                self.need(self.lambda, "lambda")?;
            }
        }
        if self.nll_weight < 0.0 {
            return Err(EvaError::Config("nll_weight must be >= 0".into()));
        }
        Ok(())
    }
}

// ---- numerically stable sigmoid family ----

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log sigma(z) = -log1p(exp(-|z|)) + min(z, 0)`.
pub fn log_sigmoid(z: f64) -> f64 {
    z.min(0.0) - (-z.abs()).exp().ln_1p()
}

/// `-log sigma(z)`.
pub fn neg_log_sigmoid(z: f64) -> f64 {
    -log_sigmoid(z)
}

// ---- scalar kernels ----

pub fn dpo_loss(delta: f64, beta: f64) -> f64 {
    neg_log_sigmoid(beta * delta)
}

pub fn ipo_loss(delta: f64, beta: f64) -> f64 {
    (delta - 1.0 / (2.0 * beta)).powi(2)
}

pub fn slic_loss(delta: f64, beta: f64) -> f64 {
    (1.0 - beta * delta).max(0.0)
}

pub fn rdpo_loss(delta: f64, beta: f64, alpha: f64, len_plus: u32, len_minus: u32) -> f64 {
    neg_log_sigmoid(beta * delta - alpha * (len_plus as f64 - len_minus as f64))
}

pub fn dpop_loss(delta: f64, beta: f64, alpha: f64, logratio_plus: f64) -> f64 {
    neg_log_sigmoid(beta * delta - alpha * (-logratio_plus).max(0.0))
}

/// SimPO on length-normalized log-likelihoods `log pi(y)/|y|`.
pub fn simpo_kernel(norm_logp_plus: f64, norm_logp_minus: f64, beta: f64, gamma: f64) -> f64 {
    neg_log_sigmoid(beta * (norm_logp_plus - norm_logp_minus) - gamma)
}

/// ORPO on the log odds ratio `log[odds(y+) / odds(y-)]`.
pub fn orpo_kernel(log_odds_ratio: f64, lambda: f64) -> f64 {
    neg_log_sigmoid(lambda * log_odds_ratio)
}

pub fn sppo_kernel(logratio_plus: f64, logratio_minus: f64, beta: f64) -> f64 {
    (beta * logratio_plus - 0.5).powi(2) + (beta * logratio_minus + 0.5).powi(2)
}

// ---- compositional operations ----

/// Loss value, contrastive ratio, and gradient w.r.t. theta for one pair.
#[derive(Clone, Debug, PartialEq)]
pub struct LossEval {
    pub loss: f64,
    pub delta: f64,
    pub grad: Vec<f64>,
}

struct PairTerms {
    logp_plus: f64,
    logp_minus: f64,
    logratio_plus: f64,
    logratio_minus: f64,
    /// `psi(y+) - E_pi[psi]`
    g_plus: Vec<f64>,
    g_minus: Vec<f64>,
    len_plus: f64,
    len_minus: f64,
}

impl PairTerms {
    fn new(
        params: &PolicyParams,
        reference: &ReferencePolicy,
        set: &ResponseSet,
        pair: &PreferencePair,
    ) -> Result<Self> {
        pair.validate(set)?;
        let logp = params.log_distribution(set)?;
        let logq = reference.log_distribution(set)?;
        let (c, r) = (pair.chosen, pair.rejected);
        Ok(PairTerms {
            logp_plus: logp[c],
            logp_minus: logp[r],
            logratio_plus: logp[c] - logq[c],
            logratio_minus: logp[r] - logq[r],
            g_plus: params.grad_logprob(set, c)?,
            g_minus: params.grad_logprob(set, r)?,
            len_plus: set.responses[c].length_tokens as f64,
            len_minus: set.responses[r].length_tokens as f64,
        })
    }

    fn delta(&self) -> f64 {
        self.logratio_plus - self.logratio_minus
    }

    fn grad_delta(&self) -> Vec<f64> {
        combine(1.0, &self.g_plus, -1.0, &self.g_minus)
    }
}

fn combine(a: f64, x: &[f64], b: f64, y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(xi, yi)| a * xi + b * yi).collect()
}

fn scale(a: f64, x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| a * v).collect()
}

pub fn contrastive_ratio(
    params: &PolicyParams,
    reference: &ReferencePolicy,
    set: &ResponseSet,
    pair: &PreferencePair,
) -> Result<f64> {
    pair.validate(set)?;
    let logp = params.log_distribution(set)?;
    let logq = reference.log_distribution(set)?;
    Ok((logp[pair.chosen] - logq[pair.chosen]) - (logp[pair.rejected] - logq[pair.rejected]))
}

pub fn simpo_loss(
    params: &PolicyParams,
    set: &ResponseSet,
    pair: &PreferencePair,
    beta: f64,
    gamma: f64,
) -> Result<f64> {
    pair.validate(set)?;
    let logp = params.log_distribution(set)?;
    let lp = logp[pair.chosen] / set.responses[pair.chosen].length_tokens as f64;
    let lm = logp[pair.rejected] / set.responses[pair.rejected].length_tokens as f64;
    Ok(simpo_kernel(lp, lm, beta, gamma))
}

fn log_odds(params: &PolicyParams, set: &ResponseSet, index: usize) -> Result<(f64, f64)> {
    let logp = params.logprob(set, index)?;
    let log1m = params.log_complement(set, index)?;
    let p = logp.exp();
    if !(p > 0.0 && p < 1.0) || !log1m.is_finite() || !logp.is_finite() {
        return Err(EvaError::NumericDomain(format!(
            "odds undefined: pi(y_{index}) = {p} is not strictly inside (0, 1)"
        )));
    }
    Ok((logp - log1m, 1.0 - p))
}

pub fn orpo_loss(
    params: &PolicyParams,
    set: &ResponseSet,
    pair: &PreferencePair,
    lambda: f64,
) -> Result<f64> {
    pair.validate(set)?;
    let (lo_plus, _) = log_odds(params, set, pair.chosen)?;
    let (lo_minus, _) = log_odds(params, set, pair.rejected)?;
    Ok(orpo_kernel(lo_plus - lo_minus, lambda))
}

pub fn sppo_loss(
    params: &PolicyParams,
    reference: &ReferencePolicy,
    set: &ResponseSet,
    pair: &PreferencePair,
    beta: f64,
) -> Result<f64> {
    let t = PairTerms::new(params, reference, set, pair)?;
    Ok(sppo_kernel(t.logratio_plus, t.logratio_minus, beta))
}

/// `-alpha * log pi(y+) / |y+|`, the chosen-response NLL added to a loss.
pub fn nll_augmentation(
    params: &PolicyParams,
    set: &ResponseSet,
    pair: &PreferencePair,
    alpha: f64,
) -> Result<f64> {
    pair.validate(set)?;
    if alpha == 0.0 {
        return Ok(0.0);
    }
    let logp = params.logprob(set, pair.chosen)?;
    Ok(-alpha * logp / set.responses[pair.chosen].length_tokens as f64)
}

/// Loss value and analytic gradient of the configured loss.
pub fn evaluate(
    config: &LossConfig,
    params: &PolicyParams,
    reference: &ReferencePolicy,
    set: &ResponseSet,
    pair: &PreferencePair,
) -> Result<LossEval> {
    config.validate()?;
    let t = PairTerms::new(params, reference, set, pair)?;
    let delta = t.delta();
    let beta = config.beta.unwrap_or(0.0);
    let (mut loss, mut grad) = match config.kind {
        LossKind::Dpo => {
            let z = beta * delta;
            (
                neg_log_sigmoid(z),
                scale(-sigmoid(-z) * beta, &t.grad_delta()),
            )
        }
        LossKind::Ipo => {
            let resid = delta - 1.0 / (2.0 * beta);
            (resid * resid, scale(2.0 * resid, &t.grad_delta()))
        }
        LossKind::Slic => {
            let hinge = 1.0 - beta * delta;
            if hinge > 0.0 {
                (hinge, scale(-beta, &t.grad_delta()))
            } else {
                (0.0, vec![0.0; t.g_plus.len()])
            }
        }
        LossKind::RDpo => {
            let alpha = config.alpha.unwrap_or(0.0);
            let z = beta * delta - alpha * (t.len_plus - t.len_minus);
            (
                neg_log_sigmoid(z),
                scale(-sigmoid(-z) * beta, &t.grad_delta()),
            )
        }
        LossKind::DpoP => {
            let alpha = config.alpha.unwrap_or(0.0);
            let z = beta * delta - alpha * (-t.logratio_plus).max(0.0);
            let mut dz = scale(beta, &t.grad_delta());
            if t.logratio_plus < 0.0 {
                dz = combine(1.0, &dz, alpha, &t.g_plus);
            }
            (neg_log_sigmoid(z), scale(-sigmoid(-z), &dz))
        }
        LossKind::SimPo => {
            let gamma = config.gamma.unwrap_or(0.0);
            let z = beta * (t.logp_plus / t.len_plus - t.logp_minus / t.len_minus) - gamma;
            let dz = combine(
                beta / t.len_plus,
                &t.g_plus,
                -beta / t.len_minus,
                &t.g_minus,
            );
            (neg_log_sigmoid(z), scale(-sigmoid(-z), &dz))
        }
        LossKind::Orpo => {
            let lambda = config.lambda.unwrap_or(0.0);
            let (lo_plus, comp_plus) = log_odds(params, set, pair.chosen)?;
            let (lo_minus, comp_minus) = log_odds(params, set, pair.rejected)?;
            let z = lambda * (lo_plus - lo_minus);
            // d log odds(y) = d log pi(y) / (1 - pi(y))
            let dz = combine(
                lambda / comp_plus,
                &t.g_plus,
                -lambda / comp_minus,
                &t.g_minus,
            );
            (neg_log_sigmoid(z), scale(-sigmoid(-z), &dz))
        }
        LossKind::Sppo => {
            let a = beta * t.logratio_plus - 0.5;
            let b = beta * t.logratio_minus + 0.5;
            (
                a * a + b * b,
                combine(2.0 * a * beta, &t.g_plus, 2.0 * b * beta, &t.g_minus),
            )
        }
    };
    if config.nll_weight != 0.0 {
        loss += -config.nll_weight * t.logp_plus / t.len_plus;
        grad = combine(1.0, &grad, -config.nll_weight / t.len_plus, &t.g_plus);
    }
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(EvaError::NumericDomain(format!(
            "{} loss produced a non-finite value",
            config.kind
        )));
    }
    Ok(LossEval { loss, delta, grad })
}

pub fn loss_value(
    config: &LossConfig,
    params: &PolicyParams,
    reference: &ReferencePolicy,
    set: &ResponseSet,
    pair: &PreferencePair,
) -> Result<f64> {
    evaluate(config, params, reference, set, pair).map(|e| e.loss)
}

pub fn loss_gradient(
    config: &LossConfig,
    params: &PolicyParams,
    reference: &ReferencePolicy,
    set: &ResponseSet,
    pair: &PreferencePair,
) -> Result<Vec<f64>> {
    evaluate(config, params, reference, set, pair).map(|e| e.grad)
}
