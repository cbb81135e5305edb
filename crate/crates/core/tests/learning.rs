//! Seeded end-to-end learning checks on small synthetic sets.

use qimb::agent::{evaluate_policy, train, EarlyStop, TrainingConfig};
use qimb::baselines::{predict_scores, train_supervised, SupervisedConfig, WeightMode};
use qimb::data::{generate_synthetic, Dataset, SyntheticSpec};
use qimb::duelnet::argmax;
use qimb::environment::compute_lambda;
use qimb::metrics::{confusion, sensitivity};

fn toy(n: usize, separation: f64, dim: usize, seed: u64) -> Dataset {
    generate_synthetic(&SyntheticSpec::simplex(&[0.95, 0.05], dim, separation, n, seed).unwrap()).unwrap()
}

#[test]
fn q_imb_learns_a_separable_toy_set() {
    let train_set = toy(200, 8.0, 2, 1);
    let val = toy(200, 8.0, 2, 2);
    let cfg = TrainingConfig {
        total_steps: 20_000,
        early_stop: EarlyStop::disabled(),
        seed: 3,
        ..TrainingConfig::binary()
    };
    let out = train(&cfg, &train_set, Some(&val)).unwrap();
    assert!(out.updates <= 20_000);
    let (_, _, _, g) = evaluate_policy(&out.params, &val, &compute_lambda(&val.class_counts()).unwrap()).unwrap();
    assert!(g.unwrap() > 0.9, "validation G-mean {g:?}");
}

fn minority_sensitivity(mode: WeightMode, seed: u64) -> f64 {
    let train_set = toy(2000, 1.5, 4, 10 + seed);
    let val = toy(600, 1.5, 4, 20 + seed);
    let test = toy(2000, 1.5, 4, 30 + seed);
    let cfg = SupervisedConfig {
        weight_mode: mode,
        seed,
        ..SupervisedConfig::binary()
    };
    let out = train_supervised(&cfg, &train_set, Some(&val)).unwrap();
    let pred: Vec<usize> = predict_scores(&out.model, &test).unwrap().iter().map(|s| argmax(s)).collect();
    sensitivity(&confusion(&pred, &test.labels, 1).unwrap()).unwrap()
}

#[test]
fn cost_sensitive_weights_raise_minority_sensitivity() {
    for seed in 0..3 {
        let plain = minority_sensitivity(WeightMode::None, seed);
        let weighted = minority_sensitivity(WeightMode::InverseFrequency, seed);
        assert!(weighted > plain, "seed {seed}: weighted {weighted} vs plain {plain}");
    }
}
