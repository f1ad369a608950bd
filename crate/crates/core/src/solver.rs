//! The solver player: generate, annotate, pair, optionally rewrite, descend.

use std::collections::BTreeMap;

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{EvaError, Result};
use crate::losses::{self, LossConfig};
use crate::policy::{PolicyParams, ReferencePolicy, SoftmaxPolicy};
use crate::preference::{self, PreferencePair};
use crate::rng::{substream, tag};
use crate::task_space::{Prompt, PromptId, ResponseSet, RewardOracle, TaskSpace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// True reward order.
    Oracle,
    /// Order resampled from Bradley-Terry on the oracle rewards.
    BradleyTerry,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub n_responses: usize,
    pub loss: LossConfig,
    pub learning_rate: f64,
    /// Full-batch gradient steps per epoch.
    pub steps_per_iteration: usize,
    pub epochs: usize,
    pub rewriter_enabled: bool,
    pub rewriter_budget: usize,
    pub label_mode: LabelMode,
    /// Reuse the creator's sampled responses and rewards where available.
    pub share_annotations: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            n_responses: 6,
            loss: LossConfig::default(),
            learning_rate: 10.0,
            steps_per_iteration: 20,
            epochs: 2,
            rewriter_enabled: false,
            rewriter_budget: 2,
            label_mode: LabelMode::Oracle,
            share_annotations: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_responses < 2 {
            return Err(EvaError::Config("solver n_responses must be >= 2".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(EvaError::Config(
                "learning_rate must be finite and >= 0".into(),
            ));
        }
        if self.rewriter_enabled && self.rewriter_budget < 1 {
            return Err(EvaError::Config("rewriter_budget must be >= 1".into()));
        }
        self.loss.validate()
    }
}

/// Sampled response indices with their oracle rewards.
#[derive(Clone, Debug, PartialEq)]
pub struct Annotation {
    pub set: ResponseSet,
    pub sampled: Vec<usize>,
    pub rewards: Vec<f64>,
}

pub fn generate_and_annotate<R: Rng + ?Sized>(
    policy: &PolicyParams,
    space: &TaskSpace,
    prompt: &Prompt,
    n_responses: usize,
    rng: &mut R,
) -> Result<Annotation> {
    if n_responses < 2 {
        return Err(EvaError::invalid(
            "solver needs at least 2 responses per prompt",
        ));
    }
    let (set, all) = space.annotate(prompt)?;
    let sampled = policy.sample(&set, n_responses, rng)?;
    let rewards = sampled.iter().map(|&i| all[i]).collect();
    Ok(Annotation {
        set,
        sampled,
        rewards,
    })
}

/// Oracle pair among the sampled responses. Fails with `DegeneratePair`
/// when the samples hold a single distinct response or no reward spread.
pub fn build_pair(set: &ResponseSet, sampled: &[usize], rewards: &[f64]) -> Result<PreferencePair> {
    if sampled.len() != rewards.len() {
        return Err(EvaError::invalid(
            "one reward per sampled response required",
        ));
    }
    let mut distinct: Vec<(usize, f64)> = Vec::new();
    for (&i, &r) in sampled.iter().zip(rewards) {
        set.get(i)?;
        if !distinct.iter().any(|&(j, _)| j == i) {
            distinct.push((i, r));
        }
    }
    if distinct.len() < 2 {
        return Err(EvaError::DegeneratePair(format!(
            "prompt {}: all samples are response {}",
            set.prompt_id,
            sampled.first().copied().unwrap_or(0)
        )));
    }
    let values: Vec<f64> = distinct.iter().map(|&(_, r)| r).collect();
    let (c, r) = preference::argmax_argmin(&values)?;
    if values[c] == values[r] {
        return Err(EvaError::DegeneratePair(format!(
            "prompt {}: sampled rewards have no spread",
            set.prompt_id
        )));
    }
    Ok(PreferencePair {
        prompt_id: set.prompt_id,
        chosen: distinct[c].0,
        rejected: distinct[r].0,
        r_chosen: values[c],
        r_rejected: values[r],
    })
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Replaces the chosen response by the best of itself and its `budget`
/// nearest neighbors in feature space; `r_chosen` never decreases.
pub fn rewrite_chosen(
    pair: &PreferencePair,
    prompt: &Prompt,
    set: &ResponseSet,
    oracle: &RewardOracle,
    budget: usize,
) -> Result<PreferencePair> {
    if budget < 1 {
        return Err(EvaError::invalid("rewriter budget must be >= 1"));
    }
    pair.validate(set)?;
    let anchor = &set.get(pair.chosen)?.features;
    let mut candidates: Vec<(f64, usize)> = set
        .responses
        .iter()
        .filter(|r| r.index != pair.chosen && r.index != pair.rejected)
        .map(|r| (squared_distance(anchor, &r.features), r.index))
        .collect();
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut best = (pair.chosen, pair.r_chosen);
    for &(_, idx) in candidates.iter().take(budget) {
        let r = oracle.reward(prompt, &set.responses[idx])?;
        if r > best.1 {
            best = (idx, r);
        }
    }
    Ok(PreferencePair {
        chosen: best.0,
        r_chosen: best.1,
        ..pair.clone()
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair {
    pub set: ResponseSet,
    pub pair: PreferencePair,
    pub weight: f64,
    pub sampled: Vec<usize>,
    pub rewritten: bool,
}

impl TrainingPair {
    pub fn new(set: ResponseSet, pair: PreferencePair) -> Self {
        TrainingPair {
            set,
            pair,
            weight: 1.0,
            sampled: Vec::new(),
            rewritten: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub loss_before: f64,
    pub loss_after: f64,
    pub mean_delta: f64,
    pub mean_reward_gap: f64,
}

/// Weighted mean loss, contrastive ratio, and gradient over a batch.
pub fn batch_objective(
    policy: &PolicyParams,
    reference: &ReferencePolicy,
    batch: &[TrainingPair],
    loss: &LossConfig,
) -> Result<(f64, f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(EvaError::invalid("empty pair batch"));
    }
    let evals = batch
        .par_iter()
        .map(|tp| losses::evaluate(loss, policy, reference, &tp.set, &tp.pair))
        .collect::<Result<Vec<_>>>()?;
    let total_w: f64 = batch.iter().map(|tp| tp.weight).sum();
    if total_w <= 0.0 {
        return Err(EvaError::invalid("pair weights sum to zero"));
    }
    let mut grad = vec![0.0; policy.theta.len()];
    let (mut l, mut d) = (0.0, 0.0);
    for (tp, e) in batch.iter().zip(&evals) {
        let w = tp.weight / total_w;
        l += w * e.loss;
        d += w * e.delta;
        for (g, ge) in grad.iter_mut().zip(&e.grad) {
            *g += w * ge;
        }
    }
    Ok((l, d, grad))
}

/// `theta - lr * grad` as a new snapshot.
pub fn descend(policy: &PolicyParams, grad: &[f64], lr: f64) -> Result<PolicyParams> {
    if grad.len() != policy.theta.len() {
        return Err(EvaError::invalid("gradient dimension mismatch"));
    }
    policy.with_theta(
        policy
            .theta
            .iter()
            .zip(grad)
            .map(|(t, g)| t - lr * g)
            .collect(),
    )
}

/// One full-batch gradient step on the configured loss.
pub fn optimize_step(
    policy: &PolicyParams,
    reference: &ReferencePolicy,
    batch: &[TrainingPair],
    config: &SolverConfig,
) -> Result<(PolicyParams, StepStats)> {
    let (loss_before, mean_delta, grad) = batch_objective(policy, reference, batch, &config.loss)?;
    let next = descend(policy, &grad, config.learning_rate)?;
    let (loss_after, _, _) = batch_objective(&next, reference, batch, &config.loss)?;
    let mean_reward_gap =
        batch.iter().map(|tp| tp.pair.reward_gap()).sum::<f64>() / batch.len() as f64;
    Ok((
        next,
        StepStats {
            loss_before,
            loss_after,
            mean_delta,
            mean_reward_gap,
        },
    ))
}

/// Annotations handed over from the creator's estimation pass.
pub type SharedAnnotations = BTreeMap<PromptId, (Vec<usize>, Vec<f64>)>;

#[derive(Clone, Debug, PartialEq)]
pub struct SolverOutput {
    pub params: PolicyParams,
    pub pairs: Vec<TrainingPair>,
    pub degenerate: Vec<PromptId>,
    pub curve: Vec<StepStats>,
}

/// Builds pairs for every prompt, then runs `epochs` passes of
/// `steps_per_iteration` full-batch steps over a per-epoch shuffled order.
pub fn solver_step<R: Rng + ?Sized>(
    policy: &PolicyParams,
    reference: &ReferencePolicy,
    space: &TaskSpace,
    prompts: &[Prompt],
    config: &SolverConfig,
    shared: Option<&SharedAnnotations>,
    rng: &mut R,
) -> Result<SolverOutput> {
    config.validate()?;
    if prompts.is_empty() {
        return Err(EvaError::invalid("solver needs a non-empty prompt set"));
    }
    let base_seed: u64 = rng.random();
    let mut ordered: Vec<&Prompt> = prompts.iter().collect();
    ordered.sort_by_key(|p| p.id);
    ordered.dedup_by_key(|p| p.id);

    let built = ordered
        .par_iter()
        .map(
            |prompt| -> Result<std::result::Result<TrainingPair, PromptId>> {
                let mut stream = substream(base_seed, &[tag("generate"), prompt.id.0]);
                let reused = if config.share_annotations {
                    shared.and_then(|m| m.get(&prompt.id))
                } else {
                    None
                };
                let ann = match reused {
                    Some((sampled, rewards)) => Annotation {
                        set: space.responses(prompt)?,
                        sampled: sampled.clone(),
                        rewards: rewards.clone(),
                    },
                    None => generate_and_annotate(
                        policy,
                        space,
                        prompt,
                        config.n_responses,
                        &mut stream,
                    )?,
                };
                let mut pair = match build_pair(&ann.set, &ann.sampled, &ann.rewards) {
                    Ok(p) => p,
                    Err(EvaError::DegeneratePair(_)) => return Ok(Err(prompt.id)),
                    Err(e) => return Err(e),
                };
                if config.label_mode == LabelMode::BradleyTerry
                    && stream.random::<f64>()
                        >= preference::bt_probability(pair.r_chosen, pair.r_rejected)
                {
                    pair = pair.swapped();
                }
                let mut rewritten = false;
                if config.rewriter_enabled {
                    let new = rewrite_chosen(
                        &pair,
                        prompt,
                        &ann.set,
                        &space.oracle,
                        config.rewriter_budget,
                    )?;
                    rewritten = new.chosen != pair.chosen;
                    pair = new;
                }
                Ok(Ok(TrainingPair {
                    set: ann.set,
                    pair,
                    weight: 1.0,
                    sampled: ann.sampled,
                    rewritten,
                }))
            },
        )
        .collect::<Result<Vec<_>>>()?;

    let mut pairs = Vec::new();
    let mut degenerate = Vec::new();
    for item in built {
        match item {
            Ok(tp) => pairs.push(tp),
            Err(id) => degenerate.push(id),
        }
    }
    if pairs.is_empty() {
        warn!("every preference pair was degenerate; solver step is a no-op");
        return Ok(SolverOutput {
            params: policy.clone(),
            pairs,
            degenerate,
            curve: Vec::new(),
        });
    }

    let mut params = policy.clone();
    let mut curve = Vec::new();
    let mut batch = pairs.clone();
    for _ in 0..config.epochs {
        batch.shuffle(rng);
        for _ in 0..config.steps_per_iteration {
            let (next, stats) = optimize_step(&params, reference, &batch, config)?;
            params = next;
            curve.push(stats);
        }
    }
    Ok(SolverOutput {
        params,
        pairs,
        degenerate,
        curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn space_and_prompt(difficulty: f64) -> (TaskSpace, Prompt) {
        let space = TaskSpace::default();
        let p = Prompt::new(
            PromptId(11),
            "margin_control",
            difficulty,
            vec![0.3, 0.1, -0.5, 0.2],
            77,
        )
        .unwrap();
        (space, p)
    }

    #[test]
    fn annotation_counts_and_purity() {
        let (space, p) = space_and_prompt(0.5);
        let policy = PolicyParams::zeros(4);
        let ann = generate_and_annotate(&policy, &space, &p, 6, &mut stream(1)).unwrap();
        assert_eq!(ann.sampled.len(), 6);
        let all = space.oracle.rewards(&p, &ann.set).unwrap();
        for (i, r) in ann.sampled.iter().zip(&ann.rewards) {
            assert_eq!(all[*i], *r);
        }
    }

    #[test]
    fn degenerate_policy_gives_identical_samples() {
        let (space, p) = space_and_prompt(0.5);
        let set = space.responses(&p).unwrap();
        let theta: Vec<f64> = set.responses[3].features.iter().map(|f| 1e4 * f).collect();
        let policy = PolicyParams::new(theta, 0).unwrap();
        let ann = generate_and_annotate(&policy, &space, &p, 6, &mut stream(1)).unwrap();
        assert!(ann.sampled.iter().all(|&i| i == ann.sampled[0]));
        assert!(ann.rewards.iter().all(|&r| r == ann.rewards[0]));
        assert!(matches!(
            build_pair(&ann.set, &ann.sampled, &ann.rewards),
            Err(EvaError::DegeneratePair(_))
        ));
    }

    #[test]
    fn pair_brackets_sampled_rewards() {
        let set = ResponseSet::tabular(PromptId(2), 4);
        let pair = build_pair(&set, &[3, 1, 3], &[0.2, 0.9, 0.2]).unwrap();
        assert_eq!((pair.chosen, pair.rejected), (1, 3));
        assert_eq!((pair.r_chosen, pair.r_rejected), (0.9, 0.2));
    }

    #[test]
    fn rewrite_never_lowers_chosen_reward() {
        let (space, p) = space_and_prompt(0.5);
        let (set, rewards) = space.annotate(&p).unwrap();
        let best = rewards.iter().cloned().fold(f64::MIN, f64::max);
        let top = rewards.iter().position(|&r| r == best).unwrap();
        let worst = rewards.iter().cloned().fold(f64::MAX, f64::min);
        let bottom = rewards.iter().position(|&r| r == worst).unwrap();
        let pair = PreferencePair {
            prompt_id: p.id,
            chosen: top,
            rejected: bottom,
            r_chosen: best,
            r_rejected: worst,
        };
        let out = rewrite_chosen(&pair, &p, &set, &space.oracle, 3).unwrap();
        assert_eq!(out, pair);
        assert!(rewrite_chosen(&pair, &p, &set, &space.oracle, 0).is_err());
    }

    fn tabular_pair() -> TrainingPair {
        let set = ResponseSet::tabular(PromptId(1), 2);
        let pair = PreferencePair {
            prompt_id: PromptId(1),
            chosen: 0,
            rejected: 1,
            r_chosen: 0.9,
            r_rejected: 0.1,
        };
        TrainingPair::new(set, pair)
    }

    #[test]
    fn small_step_decreases_dpo_loss() {
        let config = SolverConfig {
            learning_rate: 0.1,
            loss: LossConfig::dpo(0.5),
            ..Default::default()
        };
        let reference = ReferencePolicy::uniform(2);
        let (_, stats) = optimize_step(
            &reference.initial_params(),
            &reference,
            &[tabular_pair()],
            &config,
        )
        .unwrap();
        assert!(stats.loss_after < stats.loss_before);
    }

    #[test]
    fn zero_gradient_leaves_theta() {
        // SLiC past the hinge has zero gradient.
        let config = SolverConfig {
            learning_rate: 1.0,
            loss: LossConfig::with_beta(crate::losses::LossKind::Slic, 1.0),
            ..Default::default()
        };
        let reference = ReferencePolicy::uniform(2);
        let start = PolicyParams::new(vec![2.0, -2.0], 0).unwrap();
        let (next, _) = optimize_step(&start, &reference, &[tabular_pair()], &config).unwrap();
        assert_eq!(next.theta, start.theta);
    }

    #[test]
    fn batch_gradient_is_mean_of_pair_gradients() {
        let reference = ReferencePolicy::uniform(2);
        let p = PolicyParams::new(vec![0.3, -0.1], 0).unwrap();
        let a = tabular_pair();
        let mut b = tabular_pair();
        b.pair = b.pair.swapped();
        let loss = LossConfig::dpo(0.7);
        let (_, _, g) = batch_objective(&p, &reference, &[a.clone(), b.clone()], &loss).unwrap();
        let ga = losses::loss_gradient(&loss, &p, &reference, &a.set, &a.pair).unwrap();
        let gb = losses::loss_gradient(&loss, &p, &reference, &b.set, &b.pair).unwrap();
        for i in 0..2 {
            assert!((g[i] - 0.5 * (ga[i] + gb[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_learning_rate_keeps_policy() {
        let (space, _) = space_and_prompt(0.5);
        let prompts = space.oracle.sample_prompts(8, &mut stream(4));
        let config = SolverConfig {
            learning_rate: 0.0,
            epochs: 1,
            ..Default::default()
        };
        let reference = ReferencePolicy::uniform(4);
        let start = reference.initial_params();
        let out = solver_step(
            &start,
            &reference,
            &space,
            &prompts,
            &config,
            None,
            &mut stream(5),
        )
        .unwrap();
        assert_eq!(out.params.theta, start.theta);
    }
}
