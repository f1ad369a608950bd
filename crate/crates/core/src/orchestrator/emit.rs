//! Output files of a run.

use std::path::Path;

use serde::Serialize;

use super::{AblationRow, RunState};
use crate::error::{EvaError, Result};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";

/// Files written by [`emit_metrics`].
pub const RUN_FILES: [&str; 8] = [
    "run.json",
    "iterations.csv",
    "pairs.jsonl",
    "info.jsonl",
    "proxy_regret.csv",
    "curriculum.csv",
    "loss_curve.csv",
    "snapshots.csv",
];

/// Rounds to 12 significant digits.
pub fn sig12(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.11e}").parse().unwrap_or(x)
}

/// Shortest decimal that reads back as `sig12(x)`.
pub fn fmt_float(x: f64) -> String {
    let v = sig12(x);
    if v == 0.0 {
        "0".to_string()
    } else {
        format!("{v}")
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_float).unwrap_or_default()
}

fn csv_bytes(headers: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let ser = |e: csv::Error| EvaError::Serialization(e.to_string());
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(headers).map_err(ser)?;
    for row in rows {
        w.write_record(&row).map_err(ser)?;
    }
    w.into_inner()
        .map_err(|e| EvaError::Serialization(e.to_string()))
}

fn jsonl_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut out, row).map_err(|e| EvaError::Serialization(e.to_string()))?;
        out.push(b'\n');
    }
    Ok(out)
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    let path = dir.join(name);
    let tmp = dir.join(format!(".{name}.tmp"));
    std::fs::write(&tmp, bytes).map_err(|e| EvaError::io(&tmp, e))?;
    std::fs::rename(&tmp, &path).map_err(|e| EvaError::io(&path, e))
}

fn join_floats(values: &[f64]) -> String {
    values
        .iter()
        .map(|&v| fmt_float(v))
        .collect::<Vec<_>>()
        .join(";")
}

/// Writes every file in [`RUN_FILES`]. With no iterations the CSV files hold
/// headers only. Output depends on the state alone, so re-emission is
/// byte-identical.
pub fn emit_metrics(state: &RunState, dir: &Path) -> Result<()> {
    let rec = &state.records;
    let manifest = serde_json::to_vec_pretty(&state.manifest())
        .map_err(|e| EvaError::Serialization(e.to_string()))?;
    write(dir, "run.json", &manifest)?;

    let iterations = csv_bytes(
        &[
            "iteration",
            "mode",
            "schedule",
            "n_prompts",
            "seed_prompts",
            "evolved_prompts",
            "buffer_prompts",
            "info_mean",
            "info_max",
            "info_min",
            "n_pairs",
            "n_degenerate",
            "n_rewritten",
            "loss_steps",
            "loss_first",
            "loss_last",
            "snapshot_id",
            "eval_mean_true_regret",
            "eval_max_true_regret",
            "eval_mean_kl_regret",
            "eval_mean_reward",
            "eval_mean_proxy",
            "proxy_regret_spearman",
            "mean_difficulty",
            "mean_evolved_difficulty",
            "family_counts",
        ],
        rec.logs.iter().map(|l| {
            vec![
                l.iteration.to_string(),
                l.mode.as_str().to_string(),
                l.schedule.as_str().to_string(),
                l.n_prompts.to_string(),
                l.seed_prompts.to_string(),
                l.evolved_prompts.to_string(),
                l.buffer_prompts.to_string(),
                fmt_opt(l.info_mean),
                fmt_opt(l.info_max),
                fmt_opt(l.info_min),
                l.n_pairs.to_string(),
                l.n_degenerate.to_string(),
                l.n_rewritten.to_string(),
                l.loss_steps.to_string(),
                fmt_opt(l.loss_first),
                fmt_opt(l.loss_last),
                l.snapshot_id.to_string(),
                fmt_float(l.eval_mean_true_regret),
                fmt_float(l.eval_max_true_regret),
                fmt_float(l.eval_mean_kl_regret),
                fmt_float(l.eval_mean_reward),
                fmt_float(l.eval_mean_proxy),
                fmt_opt(l.proxy_regret_spearman),
                fmt_float(l.mean_difficulty),
                fmt_opt(l.mean_evolved_difficulty),
                l.family_counts
                    .iter()
                    .map(|(k, v)| format!("{k}:{v}"))
                    .collect::<Vec<_>>()
                    .join(";"),
            ]
        }),
    )?;
    write(dir, "iterations.csv", &iterations)?;

    write(dir, "pairs.jsonl", &jsonl_bytes(&rec.pairs)?)?;
    write(dir, "info.jsonl", &jsonl_bytes(&rec.info)?)?;

    let proxy = csv_bytes(
        &[
            "iteration",
            "prompt_id",
            "difficulty",
            "proxy",
            "expected_reward",
            "true_regret",
            "kl_regret",
        ],
        rec.proxy.iter().map(|p| {
            vec![
                p.iteration.to_string(),
                p.row.prompt_id.to_string(),
                fmt_float(p.row.difficulty),
                fmt_float(p.row.proxy),
                fmt_float(p.row.expected_reward),
                fmt_float(p.row.true_regret),
                fmt_float(p.row.kl_regret),
            ]
        }),
    )?;
    write(dir, "proxy_regret.csv", &proxy)?;

    let curriculum = csv_bytes(
        &[
            "iteration",
            "family",
            "count",
            "mean_difficulty",
            "mean_evolved_difficulty",
        ],
        rec.curriculum.iter().map(|c| {
            vec![
                c.iteration.to_string(),
                c.family.clone(),
                c.count.to_string(),
                fmt_float(c.mean_difficulty),
                fmt_opt(c.mean_evolved_difficulty),
            ]
        }),
    )?;
    write(dir, "curriculum.csv", &curriculum)?;

    let losses = csv_bytes(
        &[
            "iteration",
            "step",
            "loss_before",
            "loss_after",
            "mean_delta",
            "mean_reward_gap",
        ],
        rec.losses.iter().map(|l| {
            vec![
                l.iteration.to_string(),
                l.step.to_string(),
                fmt_float(l.loss_before),
                fmt_float(l.loss_after),
                fmt_float(l.mean_delta),
                fmt_float(l.mean_reward_gap),
            ]
        }),
    )?;
    write(dir, "loss_curve.csv", &losses)?;

    let snapshots = csv_bytes(
        &["iteration", "snapshot_id", "theta"],
        rec.snapshots.iter().map(|s| {
            vec![
                s.iteration.to_string(),
                s.snapshot_id.to_string(),
                join_floats(&s.theta),
            ]
        }),
    )?;
    write(dir, "snapshots.csv", &snapshots)
}

pub fn write_checkpoint(state: &RunState, dir: &Path) -> Result<()> {
    let mut saved = state.clone();
    saved.config.output_dir = None;
    let bytes = serde_json::to_vec(&saved).map_err(|e| EvaError::Serialization(e.to_string()))?;
    write(dir, CHECKPOINT_FILE, &bytes)
}

pub fn load_checkpoint(dir: &Path) -> Result<RunState> {
    let path = dir.join(CHECKPOINT_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| EvaError::io(&path, e))?;
    let mut state: RunState =
        serde_json::from_str(&text).map_err(|e| EvaError::Serialization(e.to_string()))?;
    state.config.validate()?;
    state.config.output_dir = Some(dir.to_path_buf());
    Ok(state)
}

pub fn ablation_table_csv(rows: &[AblationRow]) -> Result<String> {
    let bytes = csv_bytes(
        &[
            "axis",
            "variant",
            "final_mean_true_regret",
            "final_mean_reward",
            "worst_case_regret",
            "final_mean_kl_regret",
        ],
        rows.iter().map(|r| {
            vec![
                r.axis.as_str().to_string(),
                r.variant.clone(),
                fmt_float(r.final_mean_true_regret),
                fmt_float(r.final_mean_reward),
                fmt_float(r.worst_case_regret),
                fmt_float(r.final_mean_kl_regret),
            ]
        }),
    )?;
    String::from_utf8(bytes).map_err(|e| EvaError::Serialization(e.to_string()))
}
