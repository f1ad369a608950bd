//! Exact optimal policies, partition functions, regret, and tiny-game solves.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::creator::{info, MetricKind};
use crate::error::{EvaError, Result};
use crate::policy::{log_sum_exp, PolicyParams, ReferencePolicy, SoftmaxPolicy};
use crate::rng::{substream, tag};
use crate::solver::descend;
use crate::task_space::{Prompt, PromptId, ResponseSet, RewardOracle, TaskSpace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimalKind {
    Unregularized,
    KlRegularized,
}

/// Optimal response distribution at one prompt.
///
/// `value` is `V*(x) = max r` for the unregularized kind and the optimal
/// regularized objective `beta * log Z(x)` for the KL kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimalPolicy {
    pub prompt_id: PromptId,
    pub kind: OptimalKind,
    pub beta: Option<f64>,
    pub probs: Vec<f64>,
    pub value: f64,
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(EvaError::invalid(format!(
            "beta must be finite and > 0, got {beta}"
        )));
    }
    Ok(())
}

fn check_rewards(rewards: &[f64]) -> Result<()> {
    if rewards.is_empty() {
        return Err(EvaError::invalid("empty reward vector"));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(EvaError::NumericDomain("rewards must be finite".into()));
    }
    Ok(())
}

pub fn expected_reward(probs: &[f64], rewards: &[f64]) -> f64 {
    probs.iter().zip(rewards).map(|(p, r)| p * r).sum()
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Point mass on the first argmax.
pub fn unregularized_from_rewards(prompt_id: PromptId, rewards: &[f64]) -> Result<OptimalPolicy> {
    check_rewards(rewards)?;
    let best = rewards.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let star = rewards.iter().position(|&r| r == best).unwrap();
    let mut probs = vec![0.0; rewards.len()];
    probs[star] = 1.0;
    Ok(OptimalPolicy {
        prompt_id,
        kind: OptimalKind::Unregularized,
        beta: None,
        probs,
        value: best,
    })
}

pub fn unregularized_optimal(
    oracle: &RewardOracle,
    prompt: &Prompt,
    set: &ResponseSet,
) -> Result<OptimalPolicy> {
    unregularized_from_rewards(prompt.id, &oracle.rewards(prompt, set)?)
}

/// `log sum_y pi_ref(y) exp(r(y) / beta)` from reference log-probabilities.
pub fn log_partition_from(ref_logprobs: &[f64], rewards: &[f64], beta: f64) -> Result<f64> {
    check_beta(beta)?;
    check_rewards(rewards)?;
    if ref_logprobs.len() != rewards.len() {
        return Err(EvaError::invalid(
            "reference and reward vectors differ in length",
        ));
    }
    let terms: Vec<f64> = ref_logprobs
        .iter()
        .zip(rewards)
        .map(|(lq, r)| lq + r / beta)
        .collect();
    Ok(log_sum_exp(&terms))
}

pub fn log_partition(
    reference: &ReferencePolicy,
    oracle: &RewardOracle,
    prompt: &Prompt,
    set: &ResponseSet,
    beta: f64,
) -> Result<f64> {
    log_partition_from(
        &reference.log_distribution(set)?,
        &oracle.rewards(prompt, set)?,
        beta,
    )
}

/// `Z(x)`. Overflows to infinity when `max r / beta` exceeds the f64 range;
/// use [`log_partition`] in that regime.
pub fn partition_function(
    reference: &ReferencePolicy,
    oracle: &RewardOracle,
    prompt: &Prompt,
    set: &ResponseSet,
    beta: f64,
) -> Result<f64> {
    Ok(log_partition(reference, oracle, prompt, set, beta)?.exp())
}

/// `pi_ref * exp(r / beta) / Z`, normalized in log space.
pub fn kl_optimal_from(
    prompt_id: PromptId,
    ref_logprobs: &[f64],
    rewards: &[f64],
    beta: f64,
) -> Result<OptimalPolicy> {
    let log_z = log_partition_from(ref_logprobs, rewards, beta)?;
    let probs = ref_logprobs
        .iter()
        .zip(rewards)
        .map(|(lq, r)| (lq + r / beta - log_z).exp())
        .collect();
    Ok(OptimalPolicy {
        prompt_id,
        kind: OptimalKind::KlRegularized,
        beta: Some(beta),
        probs,
        value: beta * log_z,
    })
}

pub fn kl_optimal_policy(
    reference: &ReferencePolicy,
    oracle: &RewardOracle,
    prompt: &Prompt,
    set: &ResponseSet,
    beta: f64,
) -> Result<OptimalPolicy> {
    kl_optimal_from(
        prompt.id,
        &reference.log_distribution(set)?,
        &oracle.rewards(prompt, set)?,
        beta,
    )
}

/// `E_{pi*}[r] - E_{pi}[r]` against an unregularized optimum.
pub fn true_regret(
    policy: &dyn SoftmaxPolicy,
    optimal: &OptimalPolicy,
    oracle: &RewardOracle,
    prompt: &Prompt,
    set: &ResponseSet,
) -> Result<f64> {
    if optimal.kind != OptimalKind::Unregularized {
        return Err(EvaError::invalid(
            "true_regret needs an unregularized optimal policy",
        ));
    }
    if optimal.prompt_id != prompt.id {
        return Err(EvaError::invalid(
            "optimal policy belongs to a different prompt",
        ));
    }
    let rewards = oracle.rewards(prompt, set)?;
    let probs = policy.distribution(set)?;
    Ok((optimal.value - expected_reward(&probs, &rewards)).max(0.0))
}

/// Regret from rewards alone: `max r - E_pi[r]`.
pub fn regret_from(probs: &[f64], rewards: &[f64]) -> f64 {
    let best = rewards.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (best - expected_reward(probs, rewards)).max(0.0)
}

/// `E r - beta * KL(p || q)`.
pub fn kl_objective(probs: &[f64], ref_probs: &[f64], rewards: &[f64], beta: f64) -> f64 {
    let kl: f64 = probs
        .iter()
        .zip(ref_probs)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, q)| p * (p / q).ln())
        .sum();
    expected_reward(probs, rewards) - beta * kl
}

/// Regret against the KL-regularized optimum, reported as optimal minus
/// current. Without `include_kl` this compares expected rewards only and is
/// negative for policies greedier than `pi*_KL`; with it the regularized
/// objectives are compared and the value is never negative.
pub fn kl_regret(
    policy: &dyn SoftmaxPolicy,
    reference: &ReferencePolicy,
    oracle: &RewardOracle,
    prompt: &Prompt,
    set: &ResponseSet,
    beta: f64,
    include_kl: bool,
) -> Result<f64> {
    let rewards = oracle.rewards(prompt, set)?;
    let ref_log = reference.log_distribution(set)?;
    let star = kl_optimal_from(prompt.id, &ref_log, &rewards, beta)?;
    let probs = policy.distribution(set)?;
    if include_kl {
        let q: Vec<f64> = ref_log.iter().map(|l| l.exp()).collect();
        Ok((star.value - kl_objective(&probs, &q, &rewards, beta)).max(0.0))
    } else {
        Ok(expected_reward(&star.probs, &rewards) - expected_reward(&probs, &rewards))
    }
}

/// `r(x, y) - E_{y' ~ baseline}[r(x, y')]`.
pub fn advantage(
    oracle: &RewardOracle,
    prompt: &Prompt,
    set: &ResponseSet,
    y_index: usize,
    baseline: &dyn SoftmaxPolicy,
) -> Result<f64> {
    let response = set.get(y_index)?;
    let rewards = oracle.rewards(prompt, set)?;
    let probs = baseline.distribution(set)?;
    Ok(oracle.reward(prompt, response)? - expected_reward(&probs, &rewards))
}

/// Exact `E[max - min]` over `n` i.i.d. draws from `probs`.
pub fn expected_a_min(probs: &[f64], rewards: &[f64], n: usize) -> Result<f64> {
    check_rewards(rewards)?;
    if probs.len() != rewards.len() || n < 1 {
        return Err(EvaError::invalid(
            "need one probability per reward and n >= 1",
        ));
    }
    let mut order: Vec<usize> = (0..rewards.len()).collect();
    order.sort_by(|&a, &b| rewards[a].total_cmp(&rewards[b]));
    let nf = n as i32;
    let (mut e_max, mut e_min) = (0.0, 0.0);
    let mut cdf_prev = 0.0;
    let mut k = 0;
    while k < order.len() {
        let v = rewards[order[k]];
        let mut mass = 0.0;
        while k < order.len() && rewards[order[k]] == v {
            mass += probs[order[k]];
            k += 1;
        }
        let cdf = (cdf_prev + mass).min(1.0);
        e_max += v * (cdf.powi(nf) - cdf_prev.powi(nf));
        e_min += v * ((1.0 - cdf_prev).powi(nf) - (1.0 - cdf).powi(nf));
        cdf_prev = cdf;
    }
    Ok((e_max - e_min).max(0.0))
}

/// Gradient of [`kl_objective`] with respect to the logits of `probs`:
/// `p_k (h_k - sum_i p_i h_i)` with `h_i = r_i - beta log(p_i / q_i)`.
pub fn kl_objective_logit_grad(
    probs: &[f64],
    ref_probs: &[f64],
    rewards: &[f64],
    beta: f64,
) -> Vec<f64> {
    let h: Vec<f64> = probs
        .iter()
        .zip(ref_probs)
        .zip(rewards)
        .map(|((p, q), r)| r - beta * (p / q).ln())
        .collect();
    let mean: f64 = probs.iter().zip(&h).map(|(p, hi)| p * hi).sum();
    probs
        .iter()
        .zip(&h)
        .map(|(p, hi)| p * (hi - mean))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct KlAscent {
    pub params: PolicyParams,
    pub probs: Vec<f64>,
    pub steps: usize,
    pub grad_norm: f64,
}

/// Gradient ascent on the exact regularized objective of a tabular policy,
/// starting from the reference, until the gradient norm drops below `tol`.
pub fn ascend_kl_objective(
    reference: &ReferencePolicy,
    rewards: &[f64],
    beta: f64,
    learning_rate: f64,
    max_steps: usize,
    tol: f64,
) -> Result<KlAscent> {
    check_beta(beta)?;
    check_rewards(rewards)?;
    let set = ResponseSet::tabular(PromptId(0), rewards.len());
    let q = reference.distribution(&set)?;
    let mut params = reference.initial_params();
    let mut steps = 0;
    loop {
        let p = params.distribution(&set)?;
        let grad = kl_objective_logit_grad(&p, &q, rewards, beta);
        let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if grad_norm < tol || steps >= max_steps {
            return Ok(KlAscent {
                params,
                probs: p,
                steps,
                grad_norm,
            });
        }
        // Ascent is descent on the negated gradient.
        let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
        params = descend(&params, &neg, learning_rate)?;
        steps += 1;
    }
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation with average ranks for ties. `None` when
/// either side is constant or fewer than two points are given.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some(cov / (va * vb).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProxyRegretRow {
    pub prompt_id: PromptId,
    pub difficulty: f64,
    pub proxy: f64,
    pub expected_reward: f64,
    pub true_regret: f64,
    pub kl_regret: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProxyRegretReport {
    pub rows: Vec<ProxyRegretRow>,
    pub spearman: Option<f64>,
}

impl ProxyRegretReport {
    pub fn mean_true_regret(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.true_regret))
    }

    pub fn max_true_regret(&self) -> f64 {
        self.rows.iter().map(|r| r.true_regret).fold(0.0, f64::max)
    }

    pub fn mean_reward(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.expected_reward))
    }

    pub fn mean_kl_regret(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.kl_regret))
    }

    pub fn mean_proxy(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.proxy))
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (mut total, mut n) = (0.0, 0usize);
    for v in values {
        total += v;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

/// Per-prompt sampled proxy next to exact true and KL regret, rows in input
/// order. Each prompt samples from its own substream of `base_seed`.
#[allow(clippy::too_many_arguments)]
pub fn proxy_vs_regret_report(
    policy: &PolicyParams,
    reference: &ReferencePolicy,
    space: &TaskSpace,
    prompts: &[Prompt],
    n_samples: usize,
    metric: MetricKind,
    beta: f64,
    base_seed: u64,
) -> Result<ProxyRegretReport> {
    if n_samples < 2 {
        return Err(EvaError::invalid("proxy estimation needs n_samples >= 2"));
    }
    check_beta(beta)?;
    let rows = prompts
        .par_iter()
        .map(|prompt| {
            let (set, rewards) = space.annotate(prompt)?;
            let mut stream = substream(base_seed, &[tag("report"), prompt.id.0]);
            let sampled = policy.sample(&set, n_samples, &mut stream)?;
            let drawn: Vec<f64> = sampled.iter().map(|&i| rewards[i]).collect();
            let proxy = match info(&drawn, metric) {
                Err(EvaError::DegenerateMetric(_)) => 0.0,
                other => other?,
            };
            let probs = policy.distribution(&set)?;
            let ref_log = reference.log_distribution(&set)?;
            let star = kl_optimal_from(prompt.id, &ref_log, &rewards, beta)?;
            Ok(ProxyRegretRow {
                prompt_id: prompt.id,
                difficulty: prompt.difficulty,
                proxy,
                expected_reward: expected_reward(&probs, &rewards),
                true_regret: regret_from(&probs, &rewards),
                kl_regret: expected_reward(&star.probs, &rewards)
                    - expected_reward(&probs, &rewards),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let proxies: Vec<f64> = rows.iter().map(|r| r.proxy).collect();
    let regrets: Vec<f64> = rows.iter().map(|r| r.true_regret).collect();
    Ok(ProxyRegretReport {
        spearman: spearman(&proxies, &regrets),
        rows,
    })
}

/// Exhaustive evaluation limit on either side of a tiny game.
pub const MAX_GAME_SIDE: usize = 100;

/// Regret of every candidate policy (rows) on every prompt (columns).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegretGame {
    pub prompts: Vec<Prompt>,
    pub policies: Vec<PolicyParams>,
    pub regret: Vec<Vec<f64>>,
    /// Rewards of each prompt's responses, kept for proxy estimation.
    pub rewards: Vec<Vec<f64>>,
    /// `probs[i][j]`: policy `i`'s distribution at prompt `j`.
    pub probs: Vec<Vec<Vec<f64>>>,
}

impl RegretGame {
    pub fn build(space: &TaskSpace, prompts: &[Prompt], policies: &[PolicyParams]) -> Result<Self> {
        if prompts.is_empty() || policies.is_empty() {
            return Err(EvaError::invalid(
                "a game needs at least one prompt and one policy",
            ));
        }
        if prompts.len() > MAX_GAME_SIDE || policies.len() > MAX_GAME_SIDE {
            return Err(EvaError::invalid(format!(
                "game of {} prompts x {} policies exceeds the {MAX_GAME_SIDE} x {MAX_GAME_SIDE} limit",
                prompts.len(),
                policies.len()
            )));
        }
        let annotated = prompts
            .iter()
            .map(|p| space.annotate(p))
            .collect::<Result<Vec<_>>>()?;
        let probs = policies
            .par_iter()
            .map(|pol| {
                annotated
                    .iter()
                    .map(|(set, _)| pol.distribution(set))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let rewards: Vec<Vec<f64>> = annotated.into_iter().map(|(_, r)| r).collect();
        let regret = probs
            .iter()
            .map(|row: &Vec<Vec<f64>>| {
                row.iter()
                    .zip(&rewards)
                    .map(|(p, r)| regret_from(p, r))
                    .collect()
            })
            .collect();
        Ok(RegretGame {
            prompts: prompts.to_vec(),
            policies: policies.to_vec(),
            regret,
            rewards,
            probs,
        })
    }

    /// Worst-case regret of policy `i` over the prompt columns in `cols`.
    pub fn worst_case(&self, i: usize, cols: &[usize]) -> f64 {
        cols.iter()
            .map(|&j| self.regret[i][j])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn all_cols(&self) -> Vec<usize> {
        (0..self.prompts.len()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameSolution {
    pub policy: usize,
    /// Uniform over the prompts attaining the worst case of `policy`.
    pub creator: Vec<f64>,
    pub value: f64,
}

/// `min_policy max_prompt regret` over a raw matrix, ties to the lowest
/// policy index.
pub fn solve_regret_matrix(regret: &[Vec<f64>]) -> Result<GameSolution> {
    let cols = regret.first().map(|r| r.len()).unwrap_or(0);
    if regret.is_empty() || cols == 0 || regret.iter().any(|r| r.len() != cols) {
        return Err(EvaError::invalid(
            "regret matrix must be non-empty and rectangular",
        ));
    }
    if regret.len() > MAX_GAME_SIDE || cols > MAX_GAME_SIDE {
        return Err(EvaError::invalid(format!(
            "regret matrix exceeds {MAX_GAME_SIDE} x {MAX_GAME_SIDE}"
        )));
    }
    let worst: Vec<f64> = regret
        .iter()
        .map(|r| r.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let value = worst.iter().cloned().fold(f64::INFINITY, f64::min);
    let policy = worst.iter().position(|&w| w == value).unwrap();
    let hits: Vec<bool> = regret[policy].iter().map(|&r| r == value).collect();
    let count = hits.iter().filter(|&&h| h).count() as f64;
    let creator = hits
        .iter()
        .map(|&h| if h { 1.0 / count } else { 0.0 })
        .collect();
    Ok(GameSolution {
        policy,
        creator,
        value,
    })
}

pub fn minimax_game_solve(
    space: &TaskSpace,
    prompts: &[Prompt],
    policies: &[PolicyParams],
) -> Result<GameSolution> {
    solve_regret_matrix(&RegretGame::build(space, prompts, policies)?.regret)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlternationRound {
    pub round: usize,
    pub added_prompt: Option<usize>,
    pub proxy: f64,
    pub policy: usize,
    pub buffer_worst_case: f64,
    pub worst_case: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlternationResult {
    pub policy: usize,
    pub worst_case: f64,
    pub buffer: Vec<usize>,
    pub trace: Vec<AlternationRound>,
}

fn best_response(game: &RegretGame, cols: &[usize]) -> usize {
    let mut best = 0;
    let mut best_val = f64::INFINITY;
    for i in 0..game.policies.len() {
        let w = game.worst_case(i, cols);
        if w < best_val {
            best_val = w;
            best = i;
        }
    }
    best
}

/// Creator/solver alternation on a tiny game.
///
/// The solver starts as the policy with the lowest mean regret over the
/// universe. Each round the creator scores every prompt outside its buffer
/// by the exact expected `A_min` of `n_samples` draws from the current
/// policy and adds the top one; the solver then best-responds to the buffer.
/// The loop stops when no unbuffered prompt has positive proxy (a full
/// support policy with zero expected spread has zero regret there) or when
/// `max_rounds` is reached.
pub fn eva_alternation(
    game: &RegretGame,
    n_samples: usize,
    max_rounds: usize,
) -> Result<AlternationResult> {
    if n_samples < 2 {
        return Err(EvaError::invalid("proxy estimation needs n_samples >= 2"));
    }
    let all = game.all_cols();
    let mut policy = (0..game.policies.len())
        .min_by(|&a, &b| {
            let ma: f64 = game.regret[a].iter().sum();
            let mb: f64 = game.regret[b].iter().sum();
            ma.total_cmp(&mb).then(a.cmp(&b))
        })
        .unwrap();
    let mut buffer: Vec<usize> = Vec::new();
    let mut trace = Vec::new();
    for round in 0..max_rounds {
        let mut pick: Option<(usize, f64)> = None;
        for j in all.iter().copied().filter(|j| !buffer.contains(j)) {
            let proxy = expected_a_min(&game.probs[policy][j], &game.rewards[j], n_samples)?;
            if pick.is_none_or(|(_, best)| proxy > best) {
                pick = Some((j, proxy));
            }
        }
        let (added, proxy) = match pick {
            Some((j, proxy)) if proxy > 0.0 => (Some(j), proxy),
            other => (None, other.map(|(_, p)| p).unwrap_or(0.0)),
        };
        if let Some(j) = added {
            buffer.push(j);
            policy = best_response(game, &buffer);
        }
        trace.push(AlternationRound {
            round,
            added_prompt: added,
            proxy,
            policy,
            buffer_worst_case: if buffer.is_empty() {
                0.0
            } else {
                game.worst_case(policy, &buffer)
            },
            worst_case: game.worst_case(policy, &all),
        });
        if added.is_none() {
            break;
        }
    }
    Ok(AlternationResult {
        policy,
        worst_case: game.worst_case(policy, &all),
        buffer,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_log(m: usize) -> Vec<f64> {
        vec![-(m as f64).ln(); m]
    }

    #[test]
    fn unregularized_point_mass_and_ties() {
        let o = unregularized_from_rewards(PromptId(1), &[0.2, 0.9, 0.5]).unwrap();
        assert_eq!(o.probs, vec![0.0, 1.0, 0.0]);
        assert_eq!(o.value, 0.9);
        let t = unregularized_from_rewards(PromptId(1), &[0.4, 0.4]).unwrap();
        assert_eq!(t.probs, vec![1.0, 0.0]);
        assert_eq!(t.value, 0.4);
    }

    #[test]
    fn partition_values() {
        let beta = 0.3;
        let z0 = log_partition_from(&uniform_log(4), &[0.0; 4], beta)
            .unwrap()
            .exp();
        assert!((z0 - 1.0).abs() < 1e-15);
        let r = [beta * 2f64.ln(), 0.0, 0.0, 0.0];
        let z = log_partition_from(&uniform_log(4), &r, beta).unwrap().exp();
        assert!((z - 1.25).abs() < 1e-14);
        assert!(log_partition_from(&uniform_log(4), &r, 0.0).is_err());
    }

    #[test]
    fn kl_optimum_limits() {
        let r = [0.1, 0.7, 0.3];
        let cold = kl_optimal_from(PromptId(0), &uniform_log(3), &r, 1e-4).unwrap();
        let hard = unregularized_from_rewards(PromptId(0), &r).unwrap();
        assert!(total_variation(&cold.probs, &hard.probs) < 1e-6);
        let hot = kl_optimal_from(PromptId(0), &uniform_log(3), &r, 1e6).unwrap();
        assert!(hot.probs.iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-5));
        let flat = kl_optimal_from(PromptId(0), &uniform_log(3), &[0.0; 3], 0.5).unwrap();
        assert!(flat.probs.iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn regret_of_uniform_two_arm() {
        let p = [0.5, 0.5];
        assert_eq!(regret_from(&p, &[0.0, 1.0]), 0.5);
        assert_eq!(regret_from(&[0.0, 1.0], &[0.0, 1.0]), 0.0);
    }

    #[test]
    fn expected_a_min_small_cases() {
        // Two equiprobable values, two draws: spread 1 with probability 1/2.
        let e = expected_a_min(&[0.5, 0.5], &[0.0, 1.0], 2).unwrap();
        assert!((e - 0.5).abs() < 1e-15);
        assert_eq!(expected_a_min(&[0.3, 0.7], &[0.4, 0.4], 6).unwrap(), 0.0);
        assert_eq!(expected_a_min(&[1.0, 0.0], &[0.0, 1.0], 6).unwrap(), 0.0);
    }

    #[test]
    fn spearman_basics() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 1.0], &[0.0, 2.0]), None);
    }

    #[test]
    fn anti_diagonal_game_value() {
        let sol = solve_regret_matrix(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(sol.value, 1.0);
        assert_eq!(sol.policy, 0);
        assert_eq!(sol.creator, vec![0.0, 1.0]);
        let big = vec![vec![0.0; 101]; 2];
        assert!(solve_regret_matrix(&big).is_err());
    }
}
