//! Acceptance criteria 1-11. Runs without the libtest harness so the
//! `criterion N: PASS|FAIL` lines always reach stdout; exits nonzero if any fails.

use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF};

use eva_core::creator::{info, weighted_sample_indices, MetricKind};
use eva_core::losses::{evaluate, LossConfig, LossKind};
use eva_core::orchestrator::{self, RunConfig, RunMode};
use eva_core::preference::exhaustive_bt_pairs;
use eva_core::regret_lab::{
    ascend_kl_objective, eva_alternation, expected_a_min, kl_optimal_from, log_partition_from,
    solve_regret_matrix, total_variation, RegretGame,
};
use eva_core::solver::{descend, TrainingPair};
use eva_core::{
    PolicyParams, PreferencePair, Prompt, PromptId, ReferencePolicy, ResponseSet, SoftmaxPolicy,
    TaskSpace,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| uniform(rng, lo, hi)).collect()
}

fn random_config(kind: LossKind, rng: &mut ChaCha8Rng) -> LossConfig {
    let cfg = match kind {
        LossKind::Dpo => LossConfig::dpo(uniform(rng, 0.05, 2.0)),
        LossKind::Ipo | LossKind::Slic | LossKind::Sppo => {
            LossConfig::with_beta(kind, uniform(rng, 0.05, 2.0))
        }
        LossKind::RDpo | LossKind::DpoP => {
            LossConfig::penalized(kind, uniform(rng, 0.05, 2.0), uniform(rng, 0.0, 1.0))
        }
        LossKind::SimPo => LossConfig::simpo(uniform(rng, 0.5, 10.0), uniform(rng, 0.0, 2.0)),
        LossKind::Orpo => LossConfig::orpo(uniform(rng, 0.1, 2.0)),
    };
    cfg.with_nll(if rng.random_bool(0.5) {
        uniform(rng, 0.0, 1.0)
    } else {
        0.0
    })
}

/// True when the instance sits within `margin` of a piecewise boundary,
/// where a central difference straddles two branches.
fn near_kink(
    cfg: &LossConfig,
    params: &PolicyParams,
    reference: &ReferencePolicy,
    set: &ResponseSet,
    pair: &PreferencePair,
) -> bool {
    let margin = 1e-3;
    let logp = params.log_distribution(set).unwrap();
    let logq = reference.log_distribution(set).unwrap();
    let lr_plus = logp[pair.chosen] - logq[pair.chosen];
    let delta = lr_plus - (logp[pair.rejected] - logq[pair.rejected]);
    match cfg.kind {
        LossKind::Slic => (1.0 - cfg.beta.unwrap() * delta).abs() < margin,
        LossKind::DpoP => lr_plus.abs() < margin,
        _ => false,
    }
}

fn gradient_relative_error(
    cfg: &LossConfig,
    params: &PolicyParams,
    reference: &ReferencePolicy,
    set: &ResponseSet,
    pair: &PreferencePair,
) -> f64 {
    let h = 1e-5;
    let analytic = evaluate(cfg, params, reference, set, pair).unwrap().grad;
    let mut numeric = vec![0.0; analytic.len()];
    for (i, g) in numeric.iter_mut().enumerate() {
        let mut plus = params.theta.clone();
        let mut minus = params.theta.clone();
        plus[i] += h;
        minus[i] -= h;
        let lp = evaluate(cfg, &params.with_theta(plus).unwrap(), reference, set, pair)
            .unwrap()
            .loss;
        let lm = evaluate(
            cfg,
            &params.with_theta(minus).unwrap(),
            reference,
            set,
            pair,
        )
        .unwrap()
        .loss;
        *g = (lp - lm) / (2.0 * h);
    }
    let diff = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn criterion_01_gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    let mut worst_kind = LossKind::Dpo;
    for kind in LossKind::ALL {
        let mut accepted = 0;
        while accepted < 100 {
            let m = rng.random_range(3..=8);
            let d = rng.random_range(2..=5);
            let rows = (0..m).map(|_| random_vec(&mut rng, d, -1.0, 1.0)).collect();
            let set = ResponseSet::from_features(PromptId(accepted), rows).unwrap();
            let params = PolicyParams::new(random_vec(&mut rng, d, -2.0, 2.0), 1).unwrap();
            let reference = ReferencePolicy::new(random_vec(&mut rng, d, -1.0, 1.0)).unwrap();
            let chosen = rng.random_range(0..m);
            let rejected = (chosen + rng.random_range(1..m)) % m;
            let pair = PreferencePair {
                prompt_id: set.prompt_id,
                chosen,
                rejected,
                r_chosen: 1.0,
                r_rejected: 0.0,
            };
            let cfg = random_config(kind, &mut rng);
            if near_kink(&cfg, &params, &reference, &set, &pair) {
                continue;
            }
            let err = gradient_relative_error(&cfg, &params, &reference, &set, &pair);
            if err > worst {
                worst = err;
                worst_kind = kind;
            }
            accepted += 1;
        }
    }
    let elapsed = start.elapsed();
    let pass = worst <= 1e-6 && elapsed < Duration::from_secs(10);
    Outcome {
        pass,
        detail: format!("worst relative error {worst:.3e} ({worst_kind}), {elapsed:?}"),
    }
}

fn criterion_02_closed_form_optimum() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let rewards = random_vec(&mut rng, 5, 0.0, 1.0);
        let beta = uniform(&mut rng, 0.1, 1.0);
        let reference = ReferencePolicy::new(random_vec(&mut rng, 5, -1.0, 1.0)).unwrap();
        let set = ResponseSet::tabular(PromptId(0), 5);
        let star = kl_optimal_from(
            PromptId(0),
            &reference.log_distribution(&set).unwrap(),
            &rewards,
            beta,
        )
        .unwrap();
        let ascent = ascend_kl_objective(&reference, &rewards, beta, 5.0, 100_000, 1e-12).unwrap();
        worst = worst.max(total_variation(&ascent.probs, &star.probs));
    }
    let elapsed = start.elapsed();
    let pass = worst <= 1e-3 && elapsed < Duration::from_secs(30);
    Outcome {
        pass,
        detail: format!("worst TV {worst:.3e}, {elapsed:?}"),
    }
}

fn criterion_03_reward_reparameterization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let m = rng.random_range(2..=10);
        let rewards = random_vec(&mut rng, m, -1.0, 1.0);
        let beta = uniform(&mut rng, 0.05, 2.0);
        let reference = ReferencePolicy::new(random_vec(&mut rng, m, -2.0, 2.0)).unwrap();
        let set = ResponseSet::tabular(PromptId(0), m);
        let ref_log = reference.log_distribution(&set).unwrap();
        let star = kl_optimal_from(PromptId(0), &ref_log, &rewards, beta).unwrap();
        let log_z = log_partition_from(&ref_log, &rewards, beta).unwrap();
        for i in 0..m {
            let r = beta * (star.probs[i].ln() - ref_log[i]) + beta * log_z;
            worst = worst.max((r - rewards[i]).abs());
        }
    }
    let pass = worst <= 1e-10;
    Outcome {
        pass,
        detail: format!("worst abs error {worst:.3e}"),
    }
}

fn criterion_04_dpo_fixed_point() -> Outcome {
    let start = Instant::now();
    let beta = 0.05;
    let rewards = [0.8, 0.3];
    let set = ResponseSet::tabular(PromptId(0), 2);
    let reference = ReferencePolicy::uniform(2);
    let batch: Vec<TrainingPair> = exhaustive_bt_pairs(&set, &rewards)
        .unwrap()
        .into_iter()
        .map(|(pair, w)| TrainingPair {
            weight: w,
            ..TrainingPair::new(set.clone(), pair)
        })
        .collect();
    let loss = LossConfig::dpo(beta);
    let mut policy = reference.initial_params();
    for _ in 0..20_000 {
        let (_, _, grad) =
            eva_core::solver::batch_objective(&policy, &reference, &batch, &loss).unwrap();
        policy = descend(&policy, &grad, 400.0).unwrap();
    }
    let logp = policy.log_distribution(&set).unwrap();
    let logq = reference.log_distribution(&set).unwrap();
    let implicit = beta * ((logp[0] - logq[0]) - (logp[1] - logq[1]));
    let err = (implicit - (rewards[0] - rewards[1])).abs();
    let elapsed = start.elapsed();
    let pass = err <= 1e-2 && elapsed < Duration::from_secs(60);
    Outcome {
        pass,
        detail: format!("implicit gap {implicit:.6} vs 0.5, {elapsed:?}"),
    }
}

fn criterion_05_metric_suite() -> Outcome {
    let r = [0.1, 0.4, 0.9];
    let close = |kind, want: f64, tol: f64| (info(&r, kind).unwrap() - want).abs() <= tol;
    let mut ok = close(MetricKind::AMin, 0.8, 1e-12)
        && close(MetricKind::AAvg, 0.9 - 1.4 / 3.0, 1e-12)
        && close(MetricKind::AAvg, 0.4333, 1e-4)
        && close(MetricKind::ADts, 0.5, 1e-12)
        && close(MetricKind::Var, 0.10889, 1e-5)
        && close(MetricKind::Avg, 1.4 / 3.0, 1e-12)
        && close(MetricKind::Uniform, 1.0, 0.0)
        && info(&[0.5, 0.5], MetricKind::InvAMin).is_err()
        && info(&[0.7, 0.7, 0.2], MetricKind::ADts).unwrap() == 0.0;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut violations = 0;
    for _ in 0..1000 {
        let n = rng.random_range(2..=10);
        let v = random_vec(&mut rng, n, -2.0, 2.0);
        let c = uniform(&mut rng, 0.1, 10.0);
        let scaled: Vec<f64> = v.iter().map(|x| c * x).collect();
        let mut perm = v.clone();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        for (kind, power) in [
            (MetricKind::AMin, 1),
            (MetricKind::AAvg, 1),
            (MetricKind::ADts, 1),
            (MetricKind::Var, 2),
            (MetricKind::Avg, 1),
        ] {
            let base = info(&v, kind).unwrap();
            let tol = 1e-9 * (1.0 + base.abs() * c.powi(power));
            if (info(&scaled, kind).unwrap() - c.powi(power) * base).abs() > tol {
                violations += 1;
            }
            if (info(&perm, kind).unwrap() - base).abs() > 1e-12 * (1.0 + base.abs()) {
                violations += 1;
            }
        }
    }
    ok &= violations == 0;
    Outcome {
        pass: ok,
        detail: format!("{violations} invariance violations over 1000 vectors"),
    }
}

/// Inclusion probabilities of sequential weighted draws without
/// replacement, by enumerating every ordered draw sequence.
fn inclusion_probabilities(weights: &[f64], k: usize) -> Vec<f64> {
    fn walk(weights: &[f64], k: usize, taken: &mut Vec<usize>, prob: f64, out: &mut [f64]) {
        if taken.len() == k {
            for &i in taken.iter() {
                out[i] += prob;
            }
            return;
        }
        let total: f64 = (0..weights.len())
            .filter(|i| !taken.contains(i))
            .map(|i| weights[i])
            .sum();
        for i in 0..weights.len() {
            if taken.contains(&i) || weights[i] == 0.0 {
                continue;
            }
            taken.push(i);
            walk(weights, k, taken, prob * weights[i] / total, out);
            taken.pop();
        }
    }
    let mut out = vec![0.0; weights.len()];
    walk(weights, k, &mut Vec::new(), 1.0, &mut out);
    out
}

fn criterion_06_sampling_suite() -> Outcome {
    let trials = 50_000;
    let mut all_ok = true;
    let mut worst_z = 0.0f64;
    for (weights, k) in [
        (vec![0.1, 0.5, 1.0, 2.0, 0.4], 2),
        (vec![3.0, 1.0, 0.2, 0.0, 1.5], 3),
    ] {
        let exact = inclusion_probabilities(&weights, k);
        let mut counts = vec![0usize; weights.len()];
        for seed in 0..trials {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in weighted_sample_indices(&weights, k, &mut rng).unwrap() {
                counts[i] += 1;
            }
        }
        for (c, p) in counts.iter().zip(&exact) {
            let freq = *c as f64 / trials as f64;
            let sigma = (p * (1.0 - p) / trials as f64).sqrt();
            let z = if sigma == 0.0 {
                if freq == *p {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                (freq - p).abs() / sigma
            };
            worst_z = worst_z.max(z);
            all_ok &= z <= 3.0;
        }
    }

    let n = 5;
    let mut counts = vec![0usize; n];
    for seed in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(1_000_000 + seed);
        counts[weighted_sample_indices(&vec![0.0; n], 1, &mut rng).unwrap()[0]] += 1;
    }
    let expected = trials as f64 / n as f64;
    let chi2: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    let critical = ChiSquared::new((n - 1) as f64).unwrap().inverse_cdf(0.99);
    all_ok &= chi2 < critical;
    Outcome {
        pass: all_ok,
        detail: format!("worst inclusion z {worst_z:.2}, fallback chi2 {chi2:.2} < {critical:.2}"),
    }
}

/// One-sided sign test p-value for `wins` successes among `n` non-tied pairs.
fn sign_test_p(wins: u64, n: u64) -> f64 {
    if wins == 0 {
        return 1.0;
    }
    1.0 - Binomial::new(0.5, n).unwrap().cdf(wins - 1)
}

fn criterion_07_proximal_development() -> Outcome {
    // Mid-trained solver: one fixed-prompt training iteration from the reference.
    let config = RunConfig {
        mode: RunMode::FixedPrompts,
        iterations: 1,
        ..RunConfig::default()
    };
    let solver = orchestrator::run(config.clone()).unwrap().params;
    let space = &config.task;
    let n_samples = config.creator.n_samples;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut frontier_vs_easy, mut frontier_vs_hard) = ((0u64, 0u64), (0u64, 0u64));
    let mut means = [0.0f64; 3];
    let n_prompts = 200;
    for i in 0..n_prompts {
        let base = space.oracle.sample_prompt(&mut rng);
        let a_min: Vec<f64> = [0.05, 0.5, 0.95]
            .iter()
            .map(|&d| {
                let prompt = Prompt {
                    difficulty: d,
                    id: PromptId(10_000 + i),
                    ..base.clone()
                };
                let (set, rewards) = space.annotate(&prompt).unwrap();
                expected_a_min(&solver.distribution(&set).unwrap(), &rewards, n_samples).unwrap()
            })
            .collect();
        for (m, a) in means.iter_mut().zip(&a_min) {
            *m += a / n_prompts as f64;
        }
        let tally = |t: &mut (u64, u64), other: f64| {
            if a_min[1] != other {
                t.1 += 1;
                if a_min[1] > other {
                    t.0 += 1;
                }
            }
        };
        tally(&mut frontier_vs_easy, a_min[0]);
        tally(&mut frontier_vs_hard, a_min[2]);
    }
    let p_easy = sign_test_p(frontier_vs_easy.0, frontier_vs_easy.1);
    let p_hard = sign_test_p(frontier_vs_hard.0, frontier_vs_hard.1);
    let pass = means[1] > means[0] && means[1] > means[2] && p_easy < 0.01 && p_hard < 0.01;
    Outcome { pass, detail: format!(
            "mean A_min easy {:.4} frontier {:.4} unsolvable {:.4}; sign tests p {p_easy:.2e} ({}/{}), p {p_hard:.2e} ({}/{})",
            means[0], means[1], means[2], frontier_vs_easy.0, frontier_vs_easy.1, frontier_vs_hard.0, frontier_vs_hard.1
        ) }
}

fn criterion_08_minimax_oracle() -> Outcome {
    let space = TaskSpace::default();
    let mut worst_gap = f64::NEG_INFINITY;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(800 + seed);
        let prompts: Vec<Prompt> = (0..10)
            .map(|_| {
                let mut p = space.oracle.sample_prompt(&mut rng);
                p.difficulty = rng.random::<f64>();
                p
            })
            .collect();
        let policies: Vec<PolicyParams> = (0..20)
            .map(|i| {
                PolicyParams::new(
                    random_vec(&mut rng, space.oracle.feature_dim(), -3.0, 3.0),
                    i,
                )
                .unwrap()
            })
            .collect();
        let game = RegretGame::build(&space, &prompts, &policies).unwrap();
        let exact = solve_regret_matrix(&game.regret).unwrap();
        let alt = eva_alternation(&game, 6, prompts.len()).unwrap();
        worst_gap = worst_gap.max(alt.worst_case - exact.value);
    }
    let pass = worst_gap <= 0.05;
    Outcome {
        pass,
        detail: format!("worst gap over 20 games {worst_gap:.4}"),
    }
}

fn criterion_09_curriculum_trend() -> Outcome {
    let start = Instant::now();
    let eva_cfg = RunConfig {
        iterations: 3,
        ..RunConfig::default()
    };
    let fixed_cfg = RunConfig {
        mode: RunMode::FixedPrompts,
        ..eva_cfg.clone()
    };
    let (eva, fixed) = rayon::join(
        || orchestrator::run_eva(eva_cfg),
        || orchestrator::run_baseline(fixed_cfg),
    );
    let (eva, fixed) = (eva.unwrap(), fixed.unwrap());
    let difficulty: Vec<f64> = eva
        .iter()
        .map(|l| l.mean_evolved_difficulty.unwrap_or(f64::NAN))
        .collect();
    let increasing = difficulty.windows(2).all(|w| w[1] > w[0]);
    let (eva_final, fixed_final) = (eva[2].eval_mean_true_regret, fixed[2].eval_mean_true_regret);
    let elapsed = start.elapsed();
    let pass = increasing && eva_final < fixed_final && elapsed < Duration::from_secs(300);
    Outcome { pass, detail: format!("evolved difficulty {difficulty:.4?}; final regret eva {eva_final:.5} vs fixed {fixed_final:.5}, {elapsed:?}") }
}

fn criterion_10_configuration_fidelity() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = RunConfig {
        iterations: 1,
        ..RunConfig::default()
    };
    orchestrator::execute_new(config, dir.path(), None).unwrap();
    let text = std::fs::read_to_string(dir.path().join("run.json")).unwrap();
    let manifest: serde_json::Value = serde_json::from_str(&text).unwrap();
    let c = &manifest["config"];
    let checks = [
        (
            "creator.subset_fraction",
            c["creator"]["subset_fraction"] == 0.25,
        ),
        ("creator.n_evolutions", c["creator"]["n_evolutions"] == 4),
        (
            "creator.evolved_fraction",
            c["creator"]["evolved_fraction"] == 0.8,
        ),
        ("solver.n_responses", c["solver"]["n_responses"] == 6),
        ("seed", c["seed"] == 42),
        (
            "round trip",
            RunConfig::from_json_str(&text).unwrap()
                == RunConfig {
                    iterations: 1,
                    ..RunConfig::default()
                },
        ),
    ];
    let failed: Vec<&str> = checks
        .iter()
        .filter(|(_, ok)| !ok)
        .map(|(k, _)| *k)
        .collect();
    let pass = failed.is_empty();
    Outcome {
        pass,
        detail: format!("mismatched keys {failed:?}"),
    }
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

fn criterion_11_determinism() -> Outcome {
    let config = RunConfig {
        iterations: 3,
        ..RunConfig::default()
    };
    let (a, b, c) = (
        tempfile::tempdir().unwrap(),
        tempfile::tempdir().unwrap(),
        tempfile::tempdir().unwrap(),
    );
    orchestrator::execute_new(config.clone(), a.path(), None).unwrap();
    orchestrator::execute_new(config.clone(), b.path(), None).unwrap();
    orchestrator::execute_new(config, c.path(), Some(1)).unwrap();
    orchestrator::resume(c.path(), None).unwrap();
    let (ta, tb, tc) = (tree(a.path()), tree(b.path()), tree(c.path()));
    let identical = ta == tb;
    let resumed = ta == tc;
    let pass = identical && resumed && ta.len() > 1;
    Outcome {
        pass,
        detail: format!(
            "{} files; repeat identical {identical}, resume identical {resumed}",
            ta.len()
        ),
    }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("gradient suite", criterion_01_gradient_suite),
        ("closed-form optimum", criterion_02_closed_form_optimum),
        (
            "reward reparameterization",
            criterion_03_reward_reparameterization,
        ),
        ("DPO fixed point", criterion_04_dpo_fixed_point),
        ("metric suite", criterion_05_metric_suite),
        ("sampling suite", criterion_06_sampling_suite),
        (
            "proximal-development ordering",
            criterion_07_proximal_development,
        ),
        ("minimax oracle", criterion_08_minimax_oracle),
        ("curriculum trend", criterion_09_curriculum_trend),
        (
            "configuration fidelity",
            criterion_10_configuration_fidelity,
        ),
        ("determinism", criterion_11_determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|e| Outcome {
            pass: false,
            detail: format!(
                "panicked: {}",
                e.downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default()
            ),
        });
        let verdict = if outcome.pass { "PASS" } else { "FAIL" };
        println!("criterion {} ({name}): {verdict} {}", i + 1, outcome.detail);
        failed += usize::from(!outcome.pass);
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
