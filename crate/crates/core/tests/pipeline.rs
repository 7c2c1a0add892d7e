use bpu_core::adapters::{attach_adapters, mlp_target_ids, AdapterKind, AttachMode};
use bpu_core::diagnostics::detect_in_series;
use bpu_core::evalkit::{
    accuracy, gen_blobs, membership_attack_from_losses, split, train_reference, Dataset, SplitSpec,
};
use bpu_core::model::Model;
use bpu_core::nnet::{loss_from_logits, softmax, Activation, MlpParams};
use bpu_core::rng::RngStream;
use bpu_core::unlearn::{
    run_unlearning, ObjectiveMode, OptimizerConfig, SessionOptions, TrainConfig, UnlearnSession,
};
use proptest::prelude::*;

fn blobs(seed: u64, spread: f64) -> (Dataset, Dataset, Dataset) {
    let ds = gen_blobs(&mut RngStream::new(seed), 120, 3, 4, spread).unwrap();
    split(&ds, &SplitSpec { forget_fraction: 0.2, holdout_fraction: 0.2, seed }).unwrap()
}

fn adapted(seed: u64, kind: AdapterKind) -> Model {
    let base = Model::from_mlp(MlpParams::init(&mut RngStream::new(seed), &[4, 8, 3], Activation::Tanh).unwrap());
    attach_adapters(&base, &mlp_target_ids(2), kind, 2, &mut RngStream::new(seed + 1), AttachMode::FreezeRest).unwrap()
}

fn sgd(mode: ObjectiveMode, alpha_r: f64, alpha_f: f64) -> TrainConfig {
    TrainConfig {
        alpha_r,
        alpha_f,
        lambda: 0.5,
        optimizer: OptimizerConfig::Sgd,
        learning_rate: 0.01,
        batch_size: 4,
        iterations: 40,
        seed: 3,
        objective_mode: mode,
        ..TrainConfig::default()
    }
}

#[test]
fn gradient_difference_matches_combined_objective() {
    let (retain, forget, _) = blobs(1, 1.0);
    let model = adapted(2, AdapterKind::Sine { omega: 10.0 });
    let go = |cfg| {
        run_unlearning(UnlearnSession::new(model.clone(), &retain, &forget, cfg, SessionOptions::default()).unwrap())
            .unwrap()
            .model
    };
    let a = go(sgd(ObjectiveMode::GradientDifference, 0.01, 0.5 * 0.01));
    let b = go(sgd(ObjectiveMode::Combined, 1.0, 1.0));
    for (x, y) in a.params().iter().zip(b.params()) {
        for (u, v) in x.iter().zip(y.iter()) {
            assert!((u - v).abs() < 1e-12, "{u} vs {v}");
        }
    }
}

#[test]
fn unlearning_leaves_the_frozen_base_untouched() {
    let (retain, forget, _) = blobs(4, 1.0);
    let model = adapted(5, AdapterKind::Tanh);
    let before = model.frozen_snapshot();
    let cfg = TrainConfig { iterations: 30, ..TrainConfig::default() };
    let out = run_unlearning(UnlearnSession::new(model.clone(), &retain, &forget, cfg, SessionOptions::default()).unwrap())
        .unwrap();
    assert_eq!(out.model.frozen_snapshot(), before);
    assert_ne!(out.model.params(), model.params());
}

#[test]
fn replay_is_bit_identical() {
    let (retain, forget, _) = blobs(6, 1.0);
    let model = adapted(7, AdapterKind::Sine { omega: 100.0 });
    let run = || {
        let opts = SessionOptions { theorem_checks: true, check_every: 5 };
        let cfg = TrainConfig { iterations: 25, ..TrainConfig::default() };
        run_unlearning(UnlearnSession::new(model.clone(), &retain, &forget, cfg, opts).unwrap()).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.model, b.model);
    assert_eq!(a.history, b.history);
    assert!(a.history.iter().any(|r| !r.assumptions.is_empty()));
}

#[test]
fn reference_fits_separated_blobs() {
    let (retain, _, holdout) = blobs(8, 0.1);
    let template = Model::from_mlp(MlpParams::init(&mut RngStream::new(9), &[4, 16, 3], Activation::Tanh).unwrap());
    let cfg = TrainConfig {
        alpha_f: 0.0,
        learning_rate: 1e-2,
        batch_size: 16,
        iterations: 300,
        ..TrainConfig::default()
    };
    let reference = train_reference(&retain, &template, &cfg).unwrap();
    assert!(accuracy(&reference, &retain).unwrap() >= 0.95);
    assert!(accuracy(&reference, &holdout).unwrap() >= 0.95);
}

proptest! {
    #[test]
    fn loss_and_probabilities_ignore_logit_shift(
        z in prop::collection::vec(-20.0f64..20.0, 2..10),
        shift in -50.0f64..50.0,
        pick in 0usize..10,
    ) {
        let y = pick % z.len();
        let moved: Vec<f64> = z.iter().map(|v| v + shift).collect();
        prop_assert!((loss_from_logits(&z, y) - loss_from_logits(&moved, y)).abs() < 1e-9);
        let p = softmax(&moved);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (a, b) in softmax(&z).iter().zip(&p) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn attack_accuracy_is_invariant_to_monotone_maps(
        m in prop::collection::vec(0.0f64..5.0, 1..30),
        n in prop::collection::vec(0.0f64..5.0, 1..30),
    ) {
        let base = membership_attack_from_losses(&m, &n).unwrap();
        let map = |v: &Vec<f64>| v.iter().map(|x| 3.0 * x + x.powi(3)).collect::<Vec<_>>();
        prop_assert_eq!(base, membership_attack_from_losses(&map(&m), &map(&n)).unwrap());
        prop_assert!((0.5..=1.0).contains(&base));
    }

    #[test]
    fn explosion_detection_is_monotone_in_factor(
        values in prop::collection::vec(0.1f64..1e4, 1..60),
        f1 in 1.5f64..100.0,
        f2 in 1.5f64..100.0,
        window in 1usize..6,
    ) {
        let (lo, hi) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
        match (detect_in_series(&values, lo, window), detect_in_series(&values, hi, window)) {
            (None, Some(_)) => prop_assert!(false, "fired at the larger factor only"),
            (Some(a), Some(b)) => prop_assert!(a <= b),
            _ => {}
        }
    }
}
