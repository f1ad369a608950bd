use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use rand::Rng;

use eva_core::creator::MetricKind;
use eva_core::orchestrator::{
    self, ablation_table_csv, AblationAxis, RunConfig, RunMode, RunState,
};
use eva_core::regret_lab::{eva_alternation, spearman, RegretGame};
use eva_core::rng::{substream, tag};
use eva_core::{EvaError, PolicyParams, Result};

#[derive(Parser)]
#[command(
    name = "eva",
    version,
    about = "Creator/solver self-play on exactly solvable preference tasks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one config and write its outputs.
    Run {
        /// TOML config, or a JSON config / run.json manifest.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory.
        #[arg(long, default_value = "eva-out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        iterations: Option<usize>,
        /// eva, fixed_prompts or new_prompts_baseline.
        #[arg(long)]
        mode: Option<String>,
        /// Stop once this many iterations are done; resume with --resume.
        #[arg(long)]
        stop_after: Option<usize>,
        /// Continue the checkpointed run in --out instead of starting fresh.
        #[arg(long)]
        resume: bool,
    },
    /// Sweep one axis (metric, procedure, schedule, strategy) and print a CSV table.
    Ablate {
        #[arg(long)]
        axis: String,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write the table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize proxy against true regret from a run directory.
    Analyze { dir: PathBuf },
    /// Solve a random tiny game exhaustively and compare eva alternation.
    Minimax {
        #[arg(long, default_value_t = 8)]
        prompts: usize,
        #[arg(long, default_value_t = 16)]
        policies: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Draws per prompt behind the creator's expected A_min proxy.
        #[arg(long, default_value_t = 6)]
        n_samples: usize,
        /// Scale of the random policy weights.
        #[arg(long, default_value_t = 3.0)]
        scale: f64,
    },
    /// Print the default config as TOML.
    Defaults,
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn parse_mode(s: &str) -> Result<RunMode> {
    match s {
        "eva" => Ok(RunMode::Eva),
        "fixed_prompts" => Ok(RunMode::FixedPrompts),
        "new_prompts_baseline" => Ok(RunMode::NewPromptsBaseline),
        other => Err(EvaError::invalid(format!("unknown mode {other:?}"))),
    }
}

fn print_summary(state: &RunState) {
    for l in state.logs() {
        println!(
            "iteration {}: prompts {} (seed {}, evolved {}, buffer {}), pairs {}, eval regret {:.6}, mean reward {:.6}",
            l.iteration,
            l.n_prompts,
            l.seed_prompts,
            l.evolved_prompts,
            l.buffer_prompts,
            l.n_pairs,
            l.eval_mean_true_regret,
            l.eval_mean_reward
        );
    }
}

fn analyze(dir: &Path) -> Result<()> {
    let path = dir.join("proxy_regret.csv");
    let mut reader = csv::Reader::from_path(&path)
        .map_err(|e| EvaError::Serialization(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| EvaError::Serialization(e.to_string()))?
        .clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            EvaError::Serialization(format!("{} lacks column {name}", path.display()))
        })
    };
    let (it, px, tr, kl) = (
        col("iteration")?,
        col("proxy")?,
        col("true_regret")?,
        col("kl_regret")?,
    );
    let mut by_iter: std::collections::BTreeMap<usize, (Vec<f64>, Vec<f64>, Vec<f64>)> =
        Default::default();
    for record in reader.records() {
        let record = record.map_err(|e| EvaError::Serialization(e.to_string()))?;
        let num = |i: usize| -> Result<f64> {
            record[i]
                .parse()
                .map_err(|_| EvaError::Serialization(format!("bad number {:?}", &record[i])))
        };
        let t: usize = record[it]
            .parse()
            .map_err(|_| EvaError::Serialization(format!("bad iteration {:?}", &record[it])))?;
        let e = by_iter.entry(t).or_default();
        e.0.push(num(px)?);
        e.1.push(num(tr)?);
        e.2.push(num(kl)?);
    }
    println!(
        "iteration,prompts,mean_proxy,mean_true_regret,max_true_regret,mean_kl_regret,spearman"
    );
    for (t, (proxy, regret, klr)) in &by_iter {
        let n = proxy.len() as f64;
        let rho = spearman(proxy, regret)
            .map(|r| format!("{r:.6}"))
            .unwrap_or_default();
        println!(
            "{t},{},{:.6},{:.6},{:.6},{:.6},{rho}",
            proxy.len(),
            proxy.iter().sum::<f64>() / n,
            regret.iter().sum::<f64>() / n,
            regret.iter().cloned().fold(0.0, f64::max),
            klr.iter().sum::<f64>() / n,
        );
    }
    Ok(())
}

fn minimax(prompts: usize, policies: usize, seed: u64, n_samples: usize, scale: f64) -> Result<()> {
    let space = eva_core::TaskSpace::default();
    let mut rng = substream(seed, &[tag("tiny-game")]);
    let universe: Vec<_> = (0..prompts)
        .map(|_| {
            let mut p = space.oracle.sample_prompt(&mut rng);
            p.difficulty = rng.random::<f64>();
            p
        })
        .collect();
    let dim = space.oracle.feature_dim();
    let candidates = (0..policies)
        .map(|i| {
            PolicyParams::new(
                (0..dim)
                    .map(|_| scale * rng.random_range(-1.0..=1.0))
                    .collect(),
                i as u64,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let game = RegretGame::build(&space, &universe, &candidates)?;
    let exact = eva_core::regret_lab::solve_regret_matrix(&game.regret)?;
    let alt = eva_alternation(&game, n_samples, prompts)?;
    println!(
        "exhaustive: policy {} value {:.6}",
        exact.policy, exact.value
    );
    println!(
        "alternation: policy {} worst-case regret {:.6} after {} rounds (buffer {:?})",
        alt.policy,
        alt.worst_case,
        alt.trace.len(),
        alt.buffer
    );
    println!("gap: {:.6}", alt.worst_case - exact.value);
    Ok(())
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            iterations,
            mode,
            stop_after,
            resume,
        } => {
            let state = if resume {
                orchestrator::resume(&out, stop_after)
                    .with_context(|| format!("resuming {}", out.display()))?
            } else {
                let mut cfg = load_config(config.as_deref()).context("loading config")?;
                if let Some(s) = seed {
                    cfg.seed = s;
                }
                if let Some(n) = iterations {
                    cfg.iterations = n;
                }
                if let Some(m) = mode {
                    cfg.mode = parse_mode(&m)?;
                }
                orchestrator::execute_new(cfg, &out, stop_after)?
            };
            print_summary(&state);
            println!("outputs in {}", out.display());
        }
        Command::Ablate { axis, config, out } => {
            let axis: AblationAxis = axis.parse()?;
            let cfg = load_config(config.as_deref())?;
            let table = ablation_table_csv(&orchestrator::run_ablation_suite(&cfg, axis)?)?;
            match out {
                Some(p) => std::fs::write(&p, table).map_err(|e| EvaError::io(&p, e))?,
                None => print!("{table}"),
            }
        }
        Command::Analyze { dir } => analyze(&dir)?,
        Command::Minimax {
            prompts,
            policies,
            seed,
            n_samples,
            scale,
        } => minimax(prompts, policies, seed, n_samples, scale)?,
        Command::Defaults => print!("{}", RunConfig::default().to_toml_string()?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let defaults = RunConfig::default()
        .to_toml_string()
        .unwrap_or_else(|e| format!("<unavailable: {e}>"));
    let metrics: Vec<&str> = MetricKind::ALL.iter().map(|m| m.as_str()).collect();
    let help = format!(
        "Metric kinds: {}\nExit codes: 2 invalid argument, 3 config, 4 io, 5 serialization, 6 numeric domain, \
         7 degenerate metric, 8 degenerate pair.\n\nDefault config (every key optional):\n\n{defaults}",
        metrics.join(", ")
    );
    let matches = Cli::command().after_long_help(help).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => match e.downcast_ref::<EvaError>() {
            Some(eva) => {
                // EvaError already renders its own source, so skip the rest of the chain.
                let context = e.to_string();
                if context == eva.to_string() {
                    eprintln!("error [{}]: {eva}", eva.category());
                } else {
                    eprintln!("error [{}]: {context}: {eva}", eva.category());
                }
                ExitCode::from(eva.exit_code() as u8)
            }
            None => {
                eprintln!("error: {e:#}");
                ExitCode::FAILURE
            }
        },
    }
}
