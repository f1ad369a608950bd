//! Run-level control: the eva loop, baselines, schedules, checkpoints.

mod ablation;
mod emit;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use crate::creator::{creator_step, CreatorConfig, CreatorOutput};
use crate::error::{EvaError, Result};
use crate::policy::{PolicyParams, ReferencePolicy};
use crate::regret_lab::{proxy_vs_regret_report, ProxyRegretReport, ProxyRegretRow};
use crate::rng::{derive_seed, substream, tag};
use crate::solver::{solver_step, SharedAnnotations, SolverConfig, SolverOutput};
use crate::task_space::{Origin, Prompt, PromptId, TaskSpace};

pub use ablation::{ablation_variants, run_ablation_suite, AblationAxis, AblationRow};
pub use emit::{
    ablation_table_csv, emit_metrics, fmt_float, load_checkpoint, sig12, write_checkpoint,
    CHECKPOINT_FILE, RUN_FILES,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Eva,
    FixedPrompts,
    NewPromptsBaseline,
}

impl RunMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RunMode::Eva => "eva",
            RunMode::FixedPrompts => "fixed_prompts",
            RunMode::NewPromptsBaseline => "new_prompts_baseline",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Warm-start from the previous snapshot and train on the current set.
    Incremental,
    /// Reset to the reference and train on every set seen so far.
    Scratch,
}

impl Schedule {
    pub fn as_str(self) -> &'static str {
        match self {
            Schedule::Incremental => "incremental",
            Schedule::Scratch => "scratch",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiagnosticsConfig {
    /// Regularization strength for the reported KL regret.
    pub beta: f64,
    /// Samples per prompt for the proxy column of the report.
    pub n_samples: usize,
    /// Difficulty range of the held-out evaluation prompts.
    pub eval_difficulty: [f64; 2],
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            beta: 0.05,
            n_samples: 6,
            eval_difficulty: [0.0, 1.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub iterations: usize,
    pub prompts_per_iteration: usize,
    pub eval_prompts: usize,
    pub mode: RunMode,
    pub schedule: Schedule,
    /// Reference weights; empty means the uniform reference.
    pub reference_theta: Vec<f64>,
    pub creator: CreatorConfig,
    pub solver: SolverConfig,
    pub task: TaskSpace,
    pub diagnostics: DiagnosticsConfig,
    /// Where outputs go. Never written into the run manifest, so identical
    /// runs in different directories produce identical files.
    #[serde(skip_serializing)]
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            iterations: 3,
            prompts_per_iteration: 64,
            eval_prompts: 128,
            mode: RunMode::Eva,
            schedule: Schedule::Incremental,
            reference_theta: Vec::new(),
            creator: CreatorConfig::default(),
            solver: SolverConfig::default(),
            task: TaskSpace::default(),
            diagnostics: DiagnosticsConfig::default(),
            output_dir: None,
        }
    }
}

/// The `run.json` layout: the config plus how the run went.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: RunConfig,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub package: String,
    pub version: String,
    pub optimizer: String,
    pub iterations_completed: usize,
    pub prompt_counts: Vec<PromptCounts>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptCounts {
    pub iteration: usize,
    pub seed: usize,
    pub evolved: usize,
    pub buffer: usize,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(EvaError::Config("iterations must be >= 1".into()));
        }
        if self.prompts_per_iteration < 1 || self.eval_prompts < 1 {
            return Err(EvaError::Config("prompt counts must be >= 1".into()));
        }
        let [lo, hi] = self.diagnostics.eval_difficulty;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(EvaError::Config(
                "eval_difficulty must lie in [0, 1]".into(),
            ));
        }
        if !(self.diagnostics.beta > 0.0) || self.diagnostics.n_samples < 2 {
            return Err(EvaError::Config(
                "diagnostics need beta > 0 and n_samples >= 2".into(),
            ));
        }
        self.task.validate()?;
        self.creator.validate()?;
        self.solver.validate()?;
        let dim = self.task.oracle.feature_dim();
        if !self.reference_theta.is_empty() && self.reference_theta.len() != dim {
            return Err(EvaError::Config(format!(
                "reference_theta has {} weights, features have {dim}",
                self.reference_theta.len()
            )));
        }
        Ok(())
    }

    pub fn reference(&self) -> Result<ReferencePolicy> {
        if self.reference_theta.is_empty() {
            Ok(ReferencePolicy::uniform(self.task.oracle.feature_dim()))
        } else {
            ReferencePolicy::new(self.reference_theta.clone())
        }
    }

    /// Parses and validates a TOML document; missing keys take defaults.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| EvaError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Accepts either a bare config object or a `run.json` manifest.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| EvaError::Config(e.to_string()))?;
        let inner = match value.get("config") {
            Some(c) if value.get("provenance").is_some() => c.clone(),
            _ => value,
        };
        let config: Self =
            serde_json::from_value(inner).map_err(|e| EvaError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Parses by extension: `.json` as JSON, anything else as TOML.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| EvaError::io(path, e))?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json_str(&text),
            _ => Self::from_toml_str(&text),
        }
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| EvaError::Serialization(e.to_string()))
    }

    /// Initial prompt set `X_0`.
    pub fn seed_set(&self) -> Vec<Prompt> {
        self.task.oracle.sample_prompts(
            self.prompts_per_iteration,
            &mut substream(self.seed, &[tag("seed-set")]),
        )
    }

    /// Held-out prompts for the regret report, with difficulty drawn
    /// uniformly over `diagnostics.eval_difficulty`.
    pub fn eval_set(&self) -> Vec<Prompt> {
        use rand::Rng;
        let mut rng = substream(self.seed, &[tag("eval-set")]);
        let [lo, hi] = self.diagnostics.eval_difficulty;
        (0..self.eval_prompts)
            .map(|_| {
                let mut p = self.task.oracle.sample_prompt(&mut rng);
                p.difficulty = lo + (hi - lo) * rng.random::<f64>();
                p
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub mode: RunMode,
    pub schedule: Schedule,
    pub n_prompts: usize,
    pub seed_prompts: usize,
    /// Evolved during this iteration.
    pub evolved_prompts: usize,
    /// Evolved in an earlier iteration.
    pub buffer_prompts: usize,
    pub info_mean: Option<f64>,
    pub info_max: Option<f64>,
    pub info_min: Option<f64>,
    pub n_pairs: usize,
    pub n_degenerate: usize,
    pub n_rewritten: usize,
    /// Rows of `loss_curve.csv` for this iteration.
    pub loss_steps: usize,
    pub loss_first: Option<f64>,
    pub loss_last: Option<f64>,
    pub snapshot_id: u64,
    pub eval_mean_true_regret: f64,
    pub eval_max_true_regret: f64,
    pub eval_mean_kl_regret: f64,
    pub eval_mean_reward: f64,
    pub eval_mean_proxy: f64,
    pub proxy_regret_spearman: Option<f64>,
    pub mean_difficulty: f64,
    pub mean_evolved_difficulty: Option<f64>,
    pub family_counts: BTreeMap<String, usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRow {
    pub iteration: usize,
    pub prompt_id: PromptId,
    pub chosen: usize,
    pub rejected: usize,
    pub r_chosen: f64,
    pub r_rejected: f64,
    pub sampled: Vec<usize>,
    pub rewritten: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfoRow {
    pub iteration: usize,
    pub prompt_id: PromptId,
    pub difficulty: f64,
    pub info: f64,
    pub sampled: Vec<usize>,
    pub rewards: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProxyRow {
    pub iteration: usize,
    #[serde(flatten)]
    pub row: ProxyRegretRow,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub iteration: usize,
    pub step: usize,
    pub loss_before: f64,
    pub loss_after: f64,
    pub mean_delta: f64,
    pub mean_reward_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRow {
    pub iteration: usize,
    pub snapshot_id: u64,
    pub theta: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurriculumRow {
    pub iteration: usize,
    pub family: String,
    pub count: usize,
    pub mean_difficulty: f64,
    pub mean_evolved_difficulty: Option<f64>,
}

/// Everything a run writes, accumulated across iterations. Floats are
/// rounded to 12 significant digits when rows are created.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunRecords {
    pub logs: Vec<IterationLog>,
    pub pairs: Vec<PairRow>,
    pub info: Vec<InfoRow>,
    pub proxy: Vec<ProxyRow>,
    pub losses: Vec<LossRow>,
    pub snapshots: Vec<SnapshotRow>,
    pub curriculum: Vec<CurriculumRow>,
}

/// Resumable run state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub config: RunConfig,
    pub completed: usize,
    pub params: PolicyParams,
    /// The most recent prompt set `X_t`.
    pub current: Vec<Prompt>,
    /// Every training prompt so far, in first-seen order (scratch schedule).
    pub seen: Vec<Prompt>,
    pub records: RunRecords,
}

impl RunState {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let reference = config.reference()?;
        let seed_set = config.seed_set();
        Ok(RunState {
            params: reference.initial_params(),
            current: seed_set.clone(),
            seen: seed_set,
            completed: 0,
            records: RunRecords::default(),
            config,
        })
    }

    pub fn is_finished(&self) -> bool {
        self.completed >= self.config.iterations
    }

    pub fn logs(&self) -> &[IterationLog] {
        &self.records.logs
    }

    pub fn manifest(&self) -> RunManifest {
        RunManifest {
            config: self.config.clone(),
            provenance: Provenance {
                package: env!("CARGO_PKG_NAME").to_string(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                optimizer: "gradient_descent_constant_lr".to_string(),
                iterations_completed: self.completed,
                prompt_counts: self
                    .records
                    .logs
                    .iter()
                    .map(|l| PromptCounts {
                        iteration: l.iteration,
                        seed: l.seed_prompts,
                        evolved: l.evolved_prompts,
                        buffer: l.buffer_prompts,
                    })
                    .collect(),
            },
        }
    }

    /// Runs the next iteration.
    pub fn advance(&mut self) -> Result<()> {
        if self.is_finished() {
            return Err(EvaError::invalid("run already finished"));
        }
        let cfg = self.config.clone();
        let t = self.completed + 1;
        let tu = t as u64;
        let reference = cfg.reference()?;
        let seed_set = cfg.seed_set();
        let eval_set = cfg.eval_set();

        let mut creator_out: Option<CreatorOutput> = None;
        let next: Vec<Prompt> = match cfg.mode {
            RunMode::Eva => {
                // Without evolution the creator only ever filters the seed set.
                let source = if cfg.creator.n_evolutions == 0 {
                    &seed_set
                } else {
                    &self.current
                };
                let mut rng = substream(cfg.seed, &[tag("creator"), tu]);
                let out = creator_step(
                    source,
                    &self.params,
                    &cfg.task,
                    &cfg.creator,
                    cfg.prompts_per_iteration,
                    &mut rng,
                )?;
                let prompts = out.prompts.clone();
                creator_out = Some(out);
                prompts
            }
            RunMode::FixedPrompts => seed_set.clone(),
            RunMode::NewPromptsBaseline => cfg.task.oracle.sample_prompts(
                cfg.prompts_per_iteration,
                &mut substream(cfg.seed, &[tag("fresh"), tu]),
            ),
        };

        let (start, train) = match cfg.schedule {
            Schedule::Incremental => (self.params.clone(), next.clone()),
            Schedule::Scratch => {
                let known: BTreeSet<PromptId> = self.seen.iter().map(|p| p.id).collect();
                for p in &next {
                    if !known.contains(&p.id) {
                        self.seen.push(p.clone());
                    }
                }
                let mut start = reference.initial_params();
                start.snapshot_id = self.params.snapshot_id;
                (start, self.seen.clone())
            }
        };

        let shared: Option<SharedAnnotations> = creator_out.as_ref().map(|out| {
            out.records
                .iter()
                .map(|r| (r.prompt.id, (r.sampled.clone(), r.rewards.clone())))
                .collect()
        });
        let mut solver_rng = substream(cfg.seed, &[tag("solver"), tu]);
        let solved = solver_step(
            &start,
            &reference,
            &cfg.task,
            &train,
            &cfg.solver,
            shared.as_ref(),
            &mut solver_rng,
        )?;

        let report = proxy_vs_regret_report(
            &solved.params,
            &reference,
            &cfg.task,
            &eval_set,
            cfg.diagnostics.n_samples,
            cfg.creator.metric_kind,
            cfg.diagnostics.beta,
            derive_seed(cfg.seed, &[tag("report"), tu]),
        )?;

        self.record(t, &cfg, &train, creator_out.as_ref(), &solved, &report);
        info!(
            "iteration {t}: {} prompts, {} pairs, eval regret {:.4}",
            train.len(),
            solved.pairs.len(),
            report.mean_true_regret()
        );
        self.params = solved.params;
        self.current = next;
        self.completed = t;
        Ok(())
    }

    fn record(
        &mut self,
        t: usize,
        cfg: &RunConfig,
        train: &[Prompt],
        creator_out: Option<&CreatorOutput>,
        solved: &SolverOutput,
        report: &ProxyRegretReport,
    ) {
        let fresh: BTreeSet<PromptId> = creator_out
            .map(|o| o.children.values().flatten().copied().collect())
            .unwrap_or_default();
        let seed_prompts = train.iter().filter(|p| p.origin == Origin::Seed).count();
        let evolved_prompts = train.iter().filter(|p| fresh.contains(&p.id)).count();
        let buffer_prompts = train.len() - seed_prompts - evolved_prompts;

        let infos: Vec<f64> = creator_out
            .map(|o| o.records.iter().map(|r| r.info).collect())
            .unwrap_or_default();
        let stat = |f: fn(f64, f64) -> f64| infos.iter().copied().reduce(f).map(sig12);
        let info_mean =
            (!infos.is_empty()).then(|| sig12(infos.iter().sum::<f64>() / infos.len() as f64));

        let rec = &mut self.records;
        if let Some(out) = creator_out {
            for r in &out.records {
                rec.info.push(InfoRow {
                    iteration: t,
                    prompt_id: r.prompt.id,
                    difficulty: sig12(r.prompt.difficulty),
                    info: sig12(r.info),
                    sampled: r.sampled.clone(),
                    rewards: r.rewards.iter().map(|&v| sig12(v)).collect(),
                });
            }
        }
        for tp in &solved.pairs {
            rec.pairs.push(PairRow {
                iteration: t,
                prompt_id: tp.pair.prompt_id,
                chosen: tp.pair.chosen,
                rejected: tp.pair.rejected,
                r_chosen: sig12(tp.pair.r_chosen),
                r_rejected: sig12(tp.pair.r_rejected),
                sampled: tp.sampled.clone(),
                rewritten: tp.rewritten,
            });
        }
        for (step, s) in solved.curve.iter().enumerate() {
            rec.losses.push(LossRow {
                iteration: t,
                step,
                loss_before: sig12(s.loss_before),
                loss_after: sig12(s.loss_after),
                mean_delta: sig12(s.mean_delta),
                mean_reward_gap: sig12(s.mean_reward_gap),
            });
        }
        rec.snapshots.push(SnapshotRow {
            iteration: t,
            snapshot_id: solved.params.snapshot_id,
            theta: solved.params.theta.iter().map(|&v| sig12(v)).collect(),
        });
        for r in &report.rows {
            let mut row = r.clone();
            row.difficulty = sig12(row.difficulty);
            row.proxy = sig12(row.proxy);
            row.expected_reward = sig12(row.expected_reward);
            row.true_regret = sig12(row.true_regret);
            row.kl_regret = sig12(row.kl_regret);
            rec.proxy.push(ProxyRow { iteration: t, row });
        }

        let mut families: BTreeMap<String, (usize, f64, usize, f64)> = BTreeMap::new();
        for p in train {
            let e = families.entry(p.family.clone()).or_default();
            e.0 += 1;
            e.1 += p.difficulty;
            if p.origin != Origin::Seed {
                e.2 += 1;
                e.3 += p.difficulty;
            }
        }
        for (family, &(n, d, ne, de)) in &families {
            rec.curriculum.push(CurriculumRow {
                iteration: t,
                family: family.clone(),
                count: n,
                mean_difficulty: sig12(d / n as f64),
                mean_evolved_difficulty: (ne > 0).then(|| sig12(de / ne as f64)),
            });
        }
        let evolved: Vec<f64> = train
            .iter()
            .filter(|p| p.origin != Origin::Seed)
            .map(|p| p.difficulty)
            .collect();

        rec.logs.push(IterationLog {
            iteration: t,
            mode: cfg.mode,
            schedule: cfg.schedule,
            n_prompts: train.len(),
            seed_prompts,
            evolved_prompts,
            buffer_prompts,
            info_mean,
            info_max: stat(f64::max),
            info_min: stat(f64::min),
            n_pairs: solved.pairs.len(),
            n_degenerate: solved.degenerate.len(),
            n_rewritten: solved.pairs.iter().filter(|p| p.rewritten).count(),
            loss_steps: solved.curve.len(),
            loss_first: solved.curve.first().map(|s| sig12(s.loss_before)),
            loss_last: solved.curve.last().map(|s| sig12(s.loss_after)),
            snapshot_id: solved.params.snapshot_id,
            eval_mean_true_regret: sig12(report.mean_true_regret()),
            eval_max_true_regret: sig12(report.max_true_regret()),
            eval_mean_kl_regret: sig12(report.mean_kl_regret()),
            eval_mean_reward: sig12(report.mean_reward()),
            eval_mean_proxy: sig12(report.mean_proxy()),
            proxy_regret_spearman: report.spearman.map(sig12),
            mean_difficulty: sig12(
                train.iter().map(|p| p.difficulty).sum::<f64>() / train.len() as f64,
            ),
            mean_evolved_difficulty: (!evolved.is_empty())
                .then(|| sig12(evolved.iter().sum::<f64>() / evolved.len() as f64)),
            family_counts: families.iter().map(|(k, v)| (k.clone(), v.0)).collect(),
        });
    }
}

/// Runs every iteration in memory.
pub fn run(config: RunConfig) -> Result<RunState> {
    let mut state = RunState::new(config)?;
    while !state.is_finished() {
        state.advance()?;
    }
    Ok(state)
}

pub fn run_eva(config: RunConfig) -> Result<Vec<IterationLog>> {
    if config.mode != RunMode::Eva {
        return Err(EvaError::invalid("run_eva needs mode = eva"));
    }
    Ok(run(config)?.records.logs)
}

pub fn run_baseline(config: RunConfig) -> Result<Vec<IterationLog>> {
    if config.mode == RunMode::Eva {
        return Err(EvaError::invalid("run_baseline needs a baseline mode"));
    }
    Ok(run(config)?.records.logs)
}

/// Drives a run that checkpoints and emits into `dir` after every
/// iteration. `stop_after` halts once that many iterations are complete,
/// leaving a resumable directory.
pub fn execute(mut state: RunState, dir: &Path, stop_after: Option<usize>) -> Result<RunState> {
    std::fs::create_dir_all(dir).map_err(|e| EvaError::io(dir, e))?;
    state.config.output_dir = Some(dir.to_path_buf());
    emit_metrics(&state, dir)?;
    while !state.is_finished() && stop_after.is_none_or(|k| state.completed < k) {
        state.advance()?;
        write_checkpoint(&state, dir)?;
        emit_metrics(&state, dir)?;
    }
    Ok(state)
}

pub fn execute_new(config: RunConfig, dir: &Path, stop_after: Option<usize>) -> Result<RunState> {
    execute(RunState::new(config)?, dir, stop_after)
}

/// Continues the run checkpointed in `dir`.
pub fn resume(dir: &Path, stop_after: Option<usize>) -> Result<RunState> {
    execute(load_checkpoint(dir)?, dir, stop_after)
}
