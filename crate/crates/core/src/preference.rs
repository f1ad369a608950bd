//! Preference labeling under the Bradley-Terry model.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EvaError, Result};
use crate::losses::sigmoid;
use crate::task_space::{PromptId, ResponseSet};

/// A labeled pair. Under oracle labeling `r_chosen >= r_rejected` always
/// holds; pairs from [`label_pair_sampled`] or [`exhaustive_bt_pairs`] may
/// carry either order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub prompt_id: PromptId,
    pub chosen: usize,
    pub rejected: usize,
    pub r_chosen: f64,
    pub r_rejected: f64,
}

impl PreferencePair {
    pub fn reward_gap(&self) -> f64 {
        self.r_chosen - self.r_rejected
    }

    pub fn swapped(&self) -> Self {
        PreferencePair {
            prompt_id: self.prompt_id,
            chosen: self.rejected,
            rejected: self.chosen,
            r_chosen: self.r_rejected,
            r_rejected: self.r_chosen,
        }
    }

    pub fn validate(&self, set: &ResponseSet) -> Result<()> {
        if self.prompt_id != set.prompt_id {
            return Err(EvaError::invalid(format!(
                "pair for prompt {} used with responses of prompt {}",
                self.prompt_id, set.prompt_id
            )));
        }
        set.get(self.chosen)?;
        set.get(self.rejected)?;
        if self.chosen == self.rejected {
            return Err(EvaError::invalid("chosen and rejected must differ"));
        }
        Ok(())
    }
}

/// `P(y+ > y-) = exp(r+) / (exp(r+) + exp(r-)) = sigma(r+ - r-)`.
pub fn bt_probability(r_plus: f64, r_minus: f64) -> f64 {
    sigmoid(r_plus - r_minus)
}

/// The same model written over optimal advantages `A = r - V*`. A shared
/// baseline cancels, so the value equals [`bt_probability`] on rewards.
pub fn advantage_preference_probability(a_plus: f64, a_minus: f64) -> f64 {
    let m = a_plus.max(a_minus);
    let ep = (a_plus - m).exp();
    let em = (a_minus - m).exp();
    ep / (ep + em)
}

/// Oracle labeling: chosen is the first argmax, rejected the first argmin
/// among the remaining indices.
pub fn label_pair(set: &ResponseSet, rewards: &[f64]) -> Result<PreferencePair> {
    if rewards.len() < 2 {
        return Err(EvaError::invalid("need at least 2 rewards to build a pair"));
    }
    if rewards.len() != set.len() {
        return Err(EvaError::invalid(format!(
            "{} rewards for {} responses",
            rewards.len(),
            set.len()
        )));
    }
    let (chosen, rejected) = argmax_argmin(rewards)?;
    Ok(PreferencePair {
        prompt_id: set.prompt_id,
        chosen,
        rejected,
        r_chosen: rewards[chosen],
        r_rejected: rewards[rejected],
    })
}

/// Position of the first maximum, and of the first minimum among the other
/// positions.
pub fn argmax_argmin(rewards: &[f64]) -> Result<(usize, usize)> {
    if rewards.len() < 2 {
        return Err(EvaError::invalid("need at least 2 rewards to build a pair"));
    }
    let chosen = first_extreme(rewards.iter().copied().enumerate(), |a, b| a > b).unwrap();
    let rejected = first_extreme(
        rewards
            .iter()
            .copied()
            .enumerate()
            .filter(|&(i, _)| i != chosen),
        |a, b| a < b,
    )
    .unwrap();
    Ok((chosen, rejected))
}

/// Oracle pair whose order is then resampled from Bradley-Terry.
pub fn label_pair_sampled<R: Rng + ?Sized>(
    set: &ResponseSet,
    rewards: &[f64],
    rng: &mut R,
) -> Result<PreferencePair> {
    let pair = label_pair(set, rewards)?;
    let keep = bt_probability(pair.r_chosen, pair.r_rejected);
    Ok(if rng.random::<f64>() < keep {
        pair
    } else {
        pair.swapped()
    })
}

/// Every ordered pair `(i, j)`, `i != j`, weighted by `P(i > j)`. Training on
/// this set minimizes the population Bradley-Terry preference loss.
pub fn exhaustive_bt_pairs(
    set: &ResponseSet,
    rewards: &[f64],
) -> Result<Vec<(PreferencePair, f64)>> {
    if rewards.len() != set.len() || rewards.len() < 2 {
        return Err(EvaError::invalid(
            "need one reward per response and at least 2 responses",
        ));
    }
    let mut out = Vec::with_capacity(rewards.len() * (rewards.len() - 1));
    for i in 0..rewards.len() {
        for j in 0..rewards.len() {
            if i != j {
                out.push((
                    PreferencePair {
                        prompt_id: set.prompt_id,
                        chosen: i,
                        rejected: j,
                        r_chosen: rewards[i],
                        r_rejected: rewards[j],
                    },
                    bt_probability(rewards[i], rewards[j]),
                ));
            }
        }
    }
    Ok(out)
}

fn first_extreme(
    items: impl Iterator<Item = (usize, f64)>,
    better: impl Fn(f64, f64) -> bool,
) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in items {
        match best {
            Some((_, b)) if !better(v, b) => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}
