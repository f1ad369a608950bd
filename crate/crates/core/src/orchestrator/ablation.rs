//! One-axis ablation sweeps under a shared seed.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run, RunConfig, RunMode, Schedule};
use crate::creator::{MetricKind, SelectionMode, Strategy};
use crate::error::{EvaError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    Metric,
    Procedure,
    Schedule,
    Strategy,
}

impl AblationAxis {
    pub const ALL: [AblationAxis; 4] = [
        AblationAxis::Metric,
        AblationAxis::Procedure,
        AblationAxis::Schedule,
        AblationAxis::Strategy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationAxis::Metric => "metric",
            AblationAxis::Procedure => "procedure",
            AblationAxis::Schedule => "schedule",
            AblationAxis::Strategy => "strategy",
        }
    }
}

impl std::str::FromStr for AblationAxis {
    type Err = EvaError;

    fn from_str(s: &str) -> Result<Self> {
        AblationAxis::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| EvaError::invalid(format!("unknown ablation axis {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub axis: AblationAxis,
    pub variant: String,
    pub final_mean_true_regret: f64,
    pub final_mean_reward: f64,
    pub worst_case_regret: f64,
    pub final_mean_kl_regret: f64,
}

/// Named eva configs along one axis, everything else taken from `base`.
pub fn ablation_variants(base: &RunConfig, axis: AblationAxis) -> Vec<(String, RunConfig)> {
    let mut base = base.clone();
    base.mode = RunMode::Eva;
    base.output_dir = None;
    let with = |f: &dyn Fn(&mut RunConfig)| {
        let mut c = base.clone();
        f(&mut c);
        c
    };
    match axis {
        AblationAxis::Metric => MetricKind::ALL
            .into_iter()
            .map(|m| (m.as_str().to_string(), with(&|c| c.creator.metric_kind = m)))
            .collect(),
        AblationAxis::Procedure => {
            let evolutions = if base.creator.n_evolutions == 0 {
                4
            } else {
                base.creator.n_evolutions
            };
            let mut out = Vec::new();
            for (evolve, tag) in [(true, "evolve"), (false, "no_evolve")] {
                for (mode, name) in [
                    (SelectionMode::Sample, "sample"),
                    (SelectionMode::Greedy, "greedy"),
                ] {
                    out.push((
                        format!("{name}-{tag}"),
                        with(&|c| {
                            c.creator.selection_mode = mode;
                            c.creator.n_evolutions = if evolve { evolutions } else { 0 };
                        }),
                    ));
                }
            }
            out
        }
        AblationAxis::Schedule => [Schedule::Incremental, Schedule::Scratch]
            .into_iter()
            .map(|s| (s.as_str().to_string(), with(&|c| c.schedule = s)))
            .collect(),
        AblationAxis::Strategy => [
            (Strategy::MinimaxRegret, "minimax_regret"),
            (Strategy::Maximin, "maximin"),
            (Strategy::Randomization, "randomization"),
        ]
        .into_iter()
        .map(|(s, name)| (name.to_string(), with(&|c| c.creator.strategy = s)))
        .collect(),
    }
}

/// Runs every variant of one axis (in parallel) and tabulates final-iteration
/// evaluation numbers.
pub fn run_ablation_suite(base: &RunConfig, axis: AblationAxis) -> Result<Vec<AblationRow>> {
    ablation_variants(base, axis)
        .into_par_iter()
        .map(|(variant, config)| {
            let state = run(config)?;
            let last = state
                .records
                .logs
                .last()
                .ok_or_else(|| EvaError::invalid("variant produced no iterations"))?;
            Ok(AblationRow {
                axis,
                variant,
                final_mean_true_regret: last.eval_mean_true_regret,
                final_mean_reward: last.eval_mean_reward,
                worst_case_regret: last.eval_max_true_regret,
                final_mean_kl_regret: last.eval_mean_kl_regret,
            })
        })
        .collect()
}
