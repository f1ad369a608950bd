use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use eva_core::losses::{
    contrastive_ratio, dpo_loss, evaluate, loss_value, orpo_kernel, simpo_kernel, simpo_loss,
    slic_loss, sppo_loss, LossConfig, LossKind,
};
use eva_core::preference::exhaustive_bt_pairs;
use eva_core::solver::{batch_objective, descend, optimize_step, SolverConfig, TrainingPair};
use eva_core::{
    PolicyParams, PreferencePair, PromptId, ReferencePolicy, ResponseSet, SoftmaxPolicy,
};

fn pair(chosen: usize, rejected: usize) -> PreferencePair {
    PreferencePair {
        prompt_id: PromptId(0),
        chosen,
        rejected,
        r_chosen: 1.0,
        r_rejected: 0.0,
    }
}

fn grid() -> Vec<f64> {
    (-400..=400).map(|i| i as f64 * 0.025).collect()
}

#[test]
fn ratio_losses_are_non_increasing() {
    for beta in [0.05, 0.5, 2.0] {
        for w in grid().windows(2) {
            assert!(dpo_loss(w[1], beta) <= dpo_loss(w[0], beta));
            assert!(slic_loss(w[1], beta) <= slic_loss(w[0], beta));
            assert!(simpo_kernel(w[1], 0.0, beta, 0.5) <= simpo_kernel(w[0], 0.0, beta, 0.5));
            assert!(orpo_kernel(w[1], beta) <= orpo_kernel(w[0], beta));
        }
    }
}

#[test]
fn dpo_gradient_at_reference_is_half_beta_times_ratio_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..50 {
        let rows = (0..5)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let set = ResponseSet::from_features(PromptId(0), rows).unwrap();
        let reference =
            ReferencePolicy::new((0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let params = reference.initial_params();
        let beta = rng.random_range(0.01..2.0);
        let p = pair(1, 3);
        let grad = evaluate(&LossConfig::dpo(beta), &params, &reference, &set, &p)
            .unwrap()
            .grad;
        let g1 = params.grad_logprob(&set, 1).unwrap();
        let g3 = params.grad_logprob(&set, 3).unwrap();
        for i in 0..3 {
            assert!((grad[i] + beta / 2.0 * (g1[i] - g3[i])).abs() < 1e-14);
        }
    }
}

#[test]
fn compositional_forms_match_logprob_hand_computation() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..50 {
        let rows = (0..6)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let set = ResponseSet::from_features(PromptId(0), rows).unwrap();
        let params =
            PolicyParams::new((0..4).map(|_| rng.random_range(-2.0..2.0)).collect(), 0).unwrap();
        let reference =
            ReferencePolicy::new((0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let p = pair(4, 1);
        let lp = |i| params.logprob(&set, i).unwrap();
        let lq = |i| reference.logprob(&set, i).unwrap();

        let delta = (lp(4) - lq(4)) - (lp(1) - lq(1));
        assert!((contrastive_ratio(&params, &reference, &set, &p).unwrap() - delta).abs() < 1e-12);
        let swapped = contrastive_ratio(&params, &reference, &set, &p.swapped()).unwrap();
        assert!((swapped + delta).abs() < 1e-12);

        // Lengths are 1 + index.
        let simpo = -(1.0 / (1.0 + (-(10.0 * (lp(4) / 5.0 - lp(1) / 2.0) - 5.0)).exp())).ln();
        assert!((simpo_loss(&params, &set, &p, 10.0, 5.0).unwrap() - simpo).abs() < 1e-10);

        let beta = 0.001;
        let sppo = (beta * (lp(4) - lq(4)) - 0.5).powi(2) + (beta * (lp(1) - lq(1)) + 0.5).powi(2);
        assert!((sppo_loss(&params, &reference, &set, &p, beta).unwrap() - sppo).abs() < 1e-14);
    }
}

#[test]
fn sppo_gradient_vanishes_at_joint_minimizer() {
    // Tabular logits with beta * logratio = (+1/2, -1/2) against a uniform
    // reference; the third response absorbs the remaining mass.
    let beta = 2.0;
    let set = ResponseSet::tabular(PromptId(0), 3);
    let reference = ReferencePolicy::uniform(3);
    let target_plus = (1.0f64 / 3.0).ln() + 1.0 / (2.0 * beta);
    let target_minus = (1.0f64 / 3.0).ln() - 1.0 / (2.0 * beta);
    let rest = (1.0 - target_plus.exp() - target_minus.exp()).ln();
    let params = PolicyParams::new(vec![target_plus, target_minus, rest], 0).unwrap();
    let cfg = LossConfig::with_beta(LossKind::Sppo, beta);
    let eval = evaluate(&cfg, &params, &reference, &set, &pair(0, 1)).unwrap();
    assert!(eval.loss < 1e-20);
    assert!(eval.grad.iter().all(|g| g.abs() < 1e-10), "{:?}", eval.grad);
}

#[test]
fn converged_bt_dpo_recovers_reward_gaps_up_to_a_constant() {
    let beta = 0.1;
    let rewards = [0.9, 0.2, 0.55, 0.4];
    let set = ResponseSet::tabular(PromptId(0), 4);
    let reference = ReferencePolicy::uniform(4);
    let batch: Vec<TrainingPair> = exhaustive_bt_pairs(&set, &rewards)
        .unwrap()
        .into_iter()
        .map(|(p, w)| TrainingPair {
            weight: w,
            ..TrainingPair::new(set.clone(), p)
        })
        .collect();
    let loss = LossConfig::dpo(beta);
    let mut policy = reference.initial_params();
    for _ in 0..20_000 {
        let (_, _, grad) = batch_objective(&policy, &reference, &batch, &loss).unwrap();
        policy = descend(&policy, &grad, 200.0).unwrap();
    }
    let deltas: Vec<f64> = batch
        .iter()
        .map(|tp| beta * contrastive_ratio(&policy, &reference, &set, &tp.pair).unwrap())
        .collect();
    for (a, ta) in deltas.iter().zip(&batch) {
        for (b, tb) in deltas.iter().zip(&batch) {
            let gap = ta.pair.reward_gap() - tb.pair.reward_gap();
            assert!(((a - b) - gap).abs() < 1e-3, "{} vs {gap}", a - b);
        }
    }
}

#[test]
fn repeated_dpo_steps_drive_chosen_probability_to_one() {
    let set = ResponseSet::tabular(PromptId(0), 2);
    let reference = ReferencePolicy::uniform(2);
    let batch = vec![TrainingPair::new(set.clone(), pair(0, 1))];
    let config = SolverConfig {
        loss: LossConfig::dpo(0.5),
        learning_rate: 5.0,
        ..SolverConfig::default()
    };
    let mut policy = reference.initial_params();
    let mut last = f64::INFINITY;
    for _ in 0..2000 {
        let (next, stats) = optimize_step(&policy, &reference, &batch, &config).unwrap();
        assert!(stats.loss_after < last);
        last = stats.loss_after;
        policy = next;
    }
    assert!(policy.distribution(&set).unwrap()[0] > 0.999);
}

#[test]
fn standard_configs_validate_and_evaluate_at_reference() {
    let set = ResponseSet::tabular(PromptId(0), 3);
    let reference = ReferencePolicy::uniform(3);
    let params = reference.initial_params();
    for kind in LossKind::ALL {
        let cfg = LossConfig::standard(kind);
        cfg.validate().unwrap();
        let value = loss_value(&cfg, &params, &reference, &set, &pair(0, 2)).unwrap();
        assert!(value.is_finite() && value >= 0.0, "{kind}: {value}");
    }
    let sppo = loss_value(
        &LossConfig::standard(LossKind::Sppo),
        &params,
        &reference,
        &set,
        &pair(0, 2),
    )
    .unwrap();
    assert!((sppo - 0.5).abs() < 1e-15);
}
