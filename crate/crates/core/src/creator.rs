//! The creator player: estimate informativeness, select, evolve, mix.

use std::collections::BTreeMap;

use log::warn;
use rand::seq::{index, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{EvaError, Result};
use crate::policy::{PolicyParams, SoftmaxPolicy};
use crate::rng::{substream, tag};
use crate::task_space::{EvolveConfig, Prompt, PromptId, TaskSpace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MetricKind {
    /// `|max r - min r|`, worst-case optimal advantage.
    #[serde(rename = "A_min")]
    AMin,
    /// `|mean r - max r|`, average optimal advantage.
    #[serde(rename = "A_avg")]
    AAvg,
    /// `|second best - best|`, dueling optimal advantage.
    #[serde(rename = "A_dts")]
    ADts,
    #[serde(rename = "var")]
    Var,
    #[serde(rename = "avg")]
    Avg,
    #[serde(rename = "inv_avg")]
    InvAvg,
    #[serde(rename = "inv_A_min")]
    InvAMin,
    #[serde(rename = "uniform")]
    Uniform,
}

impl MetricKind {
    pub const ALL: [MetricKind; 8] = [
        MetricKind::Uniform,
        MetricKind::Var,
        MetricKind::Avg,
        MetricKind::InvAvg,
        MetricKind::InvAMin,
        MetricKind::ADts,
        MetricKind::AAvg,
        MetricKind::AMin,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::AMin => "A_min",
            MetricKind::AAvg => "A_avg",
            MetricKind::ADts => "A_dts",
            MetricKind::Var => "var",
            MetricKind::Avg => "avg",
            MetricKind::InvAvg => "inv_avg",
            MetricKind::InvAMin => "inv_A_min",
            MetricKind::Uniform => "uniform",
        }
    }
}

impl std::fmt::Display for MetricKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for MetricKind {
    type Err = EvaError;

    fn from_str(s: &str) -> Result<Self> {
        MetricKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| EvaError::invalid(format!("unknown metric kind {s:?}")))
    }
}

fn max_of(rewards: &[f64]) -> f64 {
    rewards.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

fn min_of(rewards: &[f64]) -> f64 {
    rewards.iter().cloned().fold(f64::INFINITY, f64::min)
}

fn mean_of(rewards: &[f64]) -> f64 {
    rewards.iter().sum::<f64>() / rewards.len() as f64
}

fn at_least(rewards: &[f64], n: usize) -> Result<()> {
    if rewards.len() < n {
        return Err(EvaError::invalid(format!(
            "metric needs at least {n} rewards, got {}",
            rewards.len()
        )));
    }
    Ok(())
}

pub fn info_a_min(rewards: &[f64]) -> Result<f64> {
    at_least(rewards, 2)?;
    Ok((max_of(rewards) - min_of(rewards)).abs())
}

pub fn info_a_avg(rewards: &[f64]) -> Result<f64> {
    at_least(rewards, 1)?;
    Ok((mean_of(rewards) - max_of(rewards)).abs())
}

pub fn info_a_dts(rewards: &[f64]) -> Result<f64> {
    at_least(rewards, 2)?;
    let best = max_of(rewards);
    let star = rewards.iter().position(|&r| r == best).unwrap();
    let second = rewards
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != star)
        .map(|(_, &r)| r)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok((second - best).abs())
}

/// Any metric kind, including the heuristic ablation variants.
pub fn info(rewards: &[f64], kind: MetricKind) -> Result<f64> {
    at_least(rewards, 1)?;
    match kind {
        MetricKind::AMin => info_a_min(rewards),
        MetricKind::AAvg => info_a_avg(rewards),
        MetricKind::ADts => info_a_dts(rewards),
        MetricKind::Uniform => Ok(1.0),
        MetricKind::Avg => Ok(mean_of(rewards)),
        MetricKind::Var => {
            let mean = mean_of(rewards);
            Ok(rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / rewards.len() as f64)
        }
        MetricKind::InvAvg => {
            let mean = mean_of(rewards);
            if mean == 0.0 {
                return Err(EvaError::DegenerateMetric(
                    "1/avg(r) with zero mean reward".into(),
                ));
            }
            Ok(1.0 / mean)
        }
        MetricKind::InvAMin => {
            let spread = info_a_min(rewards)?;
            if spread == 0.0 {
                return Err(EvaError::DegenerateMetric(
                    "1/A_min with constant rewards".into(),
                ));
            }
            Ok(1.0 / spread)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InformativenessRecord {
    pub prompt: Prompt,
    /// Indices of the sampled responses, aligned with `rewards`.
    pub sampled: Vec<usize>,
    pub rewards: Vec<f64>,
    pub metric_kind: MetricKind,
    pub info: f64,
}

impl InformativenessRecord {
    /// Recomputes `info` from the stored rewards; degenerate inverse metrics
    /// score zero.
    pub fn recompute(&self) -> Result<f64> {
        match info(&self.rewards, self.metric_kind) {
            Err(EvaError::DegenerateMetric(_)) => Ok(0.0),
            other => other,
        }
    }

    pub fn max_reward(&self) -> f64 {
        max_of(&self.rewards)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    Sample,
    Greedy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    MinimaxRegret,
    Maximin,
    Randomization,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CreatorConfig {
    pub metric_kind: MetricKind,
    pub subset_fraction: f64,
    /// Children per selected prompt; 0 disables evolution.
    pub n_evolutions: usize,
    pub evolved_fraction: f64,
    pub selection_mode: SelectionMode,
    pub strategy: Strategy,
    /// Responses sampled per prompt when estimating informativeness.
    pub n_samples: usize,
    pub evolve: EvolveConfig,
    /// Re-score evolved children and drop zero-informativeness ones.
    pub post_evolve_filter: bool,
}

impl Default for CreatorConfig {
    fn default() -> Self {
        CreatorConfig {
            metric_kind: MetricKind::AMin,
            subset_fraction: 0.25,
            n_evolutions: 4,
            evolved_fraction: 0.8,
            selection_mode: SelectionMode::Sample,
            strategy: Strategy::MinimaxRegret,
            n_samples: 6,
            evolve: EvolveConfig::default(),
            post_evolve_filter: false,
        }
    }
}

impl CreatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.subset_fraction > 0.0 && self.subset_fraction <= 1.0) {
            return Err(EvaError::Config(
                "subset_fraction must lie in (0, 1]".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.evolved_fraction) {
            return Err(EvaError::Config(
                "evolved_fraction must lie in [0, 1]".into(),
            ));
        }
        if self.n_samples < 2 {
            return Err(EvaError::Config("creator n_samples must be >= 2".into()));
        }
        self.evolve.validate()
    }
}

/// `ceil(fraction * n)`, tolerant of floating error in the product.
pub fn subset_size(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Weighted sampling of `k` distinct indices by sequential draws with
/// renormalization. Once positive mass is exhausted the remaining draws are
/// uniform.
pub fn weighted_sample_indices<R: Rng + ?Sized>(
    weights: &[f64],
    k: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(EvaError::invalid(
            "sampling weights must be finite and >= 0",
        ));
    }
    if k > weights.len() {
        return Err(EvaError::invalid(format!(
            "cannot draw {k} items from {} without replacement",
            weights.len()
        )));
    }
    if weights.iter().all(|&w| w == 0.0) && k > 0 {
        warn!("all informativeness weights are zero; falling back to uniform selection");
    }
    let mut remaining: Vec<usize> = (0..weights.len()).collect();
    let mut out = Vec::with_capacity(k);
    while out.len() < k {
        let total: f64 = remaining.iter().map(|&i| weights[i]).sum();
        let pos = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (p, &i) in remaining.iter().enumerate() {
                acc += weights[i];
                if target < acc && weights[i] > 0.0 {
                    pick = Some(p);
                    break;
                }
            }
            pick.unwrap_or_else(|| remaining.iter().rposition(|&i| weights[i] > 0.0).unwrap())
        } else {
            rng.random_range(0..remaining.len())
        };
        out.push(remaining.remove(pos));
    }
    Ok(out)
}

pub fn weighted_sample<R: Rng + ?Sized>(
    records: &[InformativenessRecord],
    fraction: f64,
    rng: &mut R,
) -> Result<Vec<Prompt>> {
    let weights: Vec<f64> = records.iter().map(|r| r.info).collect();
    let k = subset_size(fraction, records.len());
    Ok(weighted_sample_indices(&weights, k, rng)?
        .into_iter()
        .map(|i| records[i].prompt.clone())
        .collect())
}

/// Top `ceil(fraction * N)` by a key, descending, ties by prompt id.
fn top_by(
    records: &[InformativenessRecord],
    fraction: f64,
    key: impl Fn(&InformativenessRecord) -> f64,
) -> Vec<Prompt> {
    let mut order: Vec<&InformativenessRecord> = records.iter().collect();
    order.sort_by(|a, b| {
        key(b)
            .partial_cmp(&key(a))
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.prompt.id.cmp(&b.prompt.id))
    });
    order
        .into_iter()
        .take(subset_size(fraction, records.len()))
        .map(|r| r.prompt.clone())
        .collect()
}

pub fn greedy_select(records: &[InformativenessRecord], fraction: f64) -> Vec<Prompt> {
    top_by(records, fraction, |r| r.info)
}

/// Draws `floor(evolved_fraction * total)` prompts from `evolved` and the
/// rest from `original`, uniformly without replacement, then shuffles.
pub fn mix_buffer<R: Rng + ?Sized>(
    evolved: &[Prompt],
    original: &[Prompt],
    evolved_fraction: f64,
    total: usize,
    rng: &mut R,
) -> Result<Vec<Prompt>> {
    let n_evolved = ((evolved_fraction * total as f64) + 1e-9).floor() as usize;
    let n_original = total - n_evolved.min(total);
    if n_evolved > evolved.len() || n_original > original.len() {
        return Err(EvaError::invalid(format!(
            "buffer mix needs {n_evolved} evolved and {n_original} original prompts, pools hold {} and {}",
            evolved.len(),
            original.len()
        )));
    }
    let mut mixed: Vec<Prompt> = index::sample(rng, evolved.len(), n_evolved)
        .into_iter()
        .map(|i| evolved[i].clone())
        .collect();
    mixed.extend(
        index::sample(rng, original.len(), n_original)
            .into_iter()
            .map(|i| original[i].clone()),
    );
    mixed.shuffle(rng);
    Ok(mixed)
}

/// Samples `n_samples` responses per prompt from the policy and scores each
/// prompt. Each prompt draws from its own substream of `base_seed`.
pub fn score_prompts(
    prompts: &[Prompt],
    policy: &PolicyParams,
    space: &TaskSpace,
    metric: MetricKind,
    n_samples: usize,
    base_seed: u64,
) -> Result<Vec<InformativenessRecord>> {
    prompts
        .par_iter()
        .map(|prompt| {
            let mut stream = substream(base_seed, &[tag("estimate"), prompt.id.0]);
            let (set, all_rewards) = space.annotate(prompt)?;
            let sampled = policy.sample(&set, n_samples, &mut stream)?;
            let rewards: Vec<f64> = sampled.iter().map(|&i| all_rewards[i]).collect();
            let info = match info(&rewards, metric) {
                Err(EvaError::DegenerateMetric(msg)) => {
                    warn!("prompt {}: {msg}; scoring as 0", prompt.id);
                    0.0
                }
                other => other?,
            };
            Ok(InformativenessRecord {
                prompt: prompt.clone(),
                sampled,
                rewards,
                metric_kind: metric,
                info,
            })
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CreatorOutput {
    pub prompts: Vec<Prompt>,
    pub records: Vec<InformativenessRecord>,
    pub selected: Vec<PromptId>,
    pub children: BTreeMap<PromptId, Vec<PromptId>>,
}

/// One creator round over `prompts`, producing a set of `total` prompts.
///
/// With `n_evolutions == 0` the selected subset itself is returned.
pub fn creator_step<R: Rng + ?Sized>(
    prompts: &[Prompt],
    policy: &PolicyParams,
    space: &TaskSpace,
    config: &CreatorConfig,
    total: usize,
    rng: &mut R,
) -> Result<CreatorOutput> {
    config.validate()?;
    if prompts.is_empty() {
        return Err(EvaError::invalid("creator needs a non-empty prompt set"));
    }
    if config.strategy == Strategy::Randomization {
        return Ok(CreatorOutput {
            prompts: space.oracle.sample_prompts(total, rng),
            ..Default::default()
        });
    }
    let base_seed: u64 = rng.random();
    let records = score_prompts(
        prompts,
        policy,
        space,
        config.metric_kind,
        config.n_samples,
        base_seed,
    )?;
    let selected = match (config.strategy, config.selection_mode) {
        // Lowest best-sampled reward first.
        (Strategy::Maximin, _) => top_by(&records, config.subset_fraction, |r| -r.max_reward()),
        (_, SelectionMode::Greedy) => greedy_select(&records, config.subset_fraction),
        (_, SelectionMode::Sample) => weighted_sample(&records, config.subset_fraction, rng)?,
    };
    let selected_ids: Vec<PromptId> = selected.iter().map(|p| p.id).collect();
    if config.n_evolutions == 0 {
        return Ok(CreatorOutput {
            prompts: selected,
            records,
            selected: selected_ids,
            children: BTreeMap::new(),
        });
    }

    let mut children = BTreeMap::new();
    let mut evolved = Vec::with_capacity(selected.len() * config.n_evolutions);
    for parent in &selected {
        let mut stream = substream(base_seed, &[tag("evolve"), parent.id.0]);
        let kids = config
            .evolve
            .evolve(parent, config.n_evolutions, &mut stream)?;
        children.insert(parent.id, kids.iter().map(|k| k.id).collect());
        evolved.extend(kids);
    }
    if config.post_evolve_filter {
        let rescored = score_prompts(
            &evolved,
            policy,
            space,
            config.metric_kind,
            config.n_samples,
            substream(base_seed, &[tag("filter")]).random(),
        )?;
        let needed = ((config.evolved_fraction * total as f64) + 1e-9).floor() as usize;
        let kept: Vec<Prompt> = rescored
            .into_iter()
            .filter(|r| r.info > 0.0)
            .map(|r| r.prompt)
            .collect();
        if kept.len() >= needed {
            evolved = kept;
        } else {
            warn!(
                "post-evolve filter kept {} of {} children, need {needed}; keeping all",
                kept.len(),
                evolved.len()
            );
        }
    }
    let mixed = mix_buffer(&evolved, prompts, config.evolved_fraction, total, rng)?;
    Ok(CreatorOutput {
        prompts: mixed,
        records,
        selected: selected_ids,
        children,
    })
}
