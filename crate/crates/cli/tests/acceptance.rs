//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Criteria 7-10 train real models and take several minutes.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use qimb::agent::{ddqn_target, train, TrainOutcome, TrainingConfig, Transition};
use qimb::baselines::{predict_scores, train_supervised, SupervisedConfig};
use qimb::data::{generate_synthetic, split, standardize, Dataset, SplitSpec, SyntheticSpec};
use qimb::duelnet::{argmax, Aggregator, DuelingParams, Head, Mode, NetworkShape};
use qimb::environment::{compute_lambda, Environment};
use qimb::metrics::{
    auroc, confusion, g_mean, one_vs_all, sensitivity, threshold_tune, wilcoxon_signed_rank, ConfusionCounts,
};
use qimb::numkernel::{finite_diff_grad, Activation, DenseLayer, LossReduction, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

type Check = Result<String, String>;

fn ensure(cond: bool, detail: String) -> Check {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- 1

/// Smallest |pre-activation| over every trunk unit for the batch, using the
/// same dropout draws the loss will use.
fn kink_margin(net: &DuelingParams, states: &[Vec<f64>], mask_seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(mask_seed);
    let mut margin = f64::INFINITY;
    for s in states {
        let (_, cache) = net.q_forward(s, Mode::Train, &mut rng).unwrap();
        for layer in cache.trunk_pre_activations() {
            for z in layer {
                margin = margin.min(z.abs());
            }
        }
    }
    margin
}

fn gradient_check() -> Check {
    let heads = [
        Head::Dueling(Aggregator::SoftmaxSubtract),
        Head::Dueling(Aggregator::MeanSubtract),
        Head::SingleStream,
    ];
    let mut worst = 0.0f64;
    let mut redraws = 0;
    for net_id in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(10_000 + net_id);
        let input_dim = rng.random_range(1..=10);
        let hidden: Vec<usize> = (0..rng.random_range(1..=2)).map(|_| rng.random_range(1..=50)).collect();
        let actions = if net_id % 2 == 0 { 2 } else { 5 };
        let shape = NetworkShape {
            input_dim,
            hidden,
            actions,
            head: heads[net_id as usize % 3],
            dropout: if net_id % 4 < 2 { 0.0 } else { 0.3 },
        };
        let mut net = DuelingParams::init(&shape, &mut rng).unwrap();
        // Zero biases pin dead-input units at exactly 0; use generic parameters.
        let flat: Vec<f64> = net.params_flat().iter().map(|_| rng.random_range(-1.0..1.0)).collect();
        net.set_params_flat(&flat).unwrap();
        let mut attempts = 0;
        let (states, mask_seed) = loop {
            let mask_seed: u64 = rng.random();
            let states: Vec<Vec<f64>> =
                (0..4).map(|_| (0..input_dim).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
            if kink_margin(&net, &states, mask_seed) > 1e-3 {
                break (states, mask_seed);
            }
            attempts += 1;
            if attempts > 10_000 {
                return Err(format!("network {net_id}: no batch clear of ReLU kinks"));
            }
        };
        redraws += attempts;
        let batch: Vec<(&[f64], usize, f64)> = states
            .iter()
            .map(|s| (s.as_slice(), rng.random_range(0..actions), rng.random_range(-1.0..1.0)))
            .collect();
        let loss_at = |p: &[f64]| {
            let mut n = net.clone();
            n.set_params_flat(p).unwrap();
            n.td_loss_and_grad(&batch, LossReduction::Sum, Mode::Train, &mut ChaCha8Rng::seed_from_u64(mask_seed))
                .unwrap()
                .0
        };
        let (_, analytic) = net
            .td_loss_and_grad(&batch, LossReduction::Sum, Mode::Train, &mut ChaCha8Rng::seed_from_u64(mask_seed))
            .unwrap();
        let numeric = finite_diff_grad(loss_at, &net.params_flat(), 1e-5);
        for (a, n) in analytic.iter().zip(&numeric) {
            worst = worst.max((a - n).abs() / a.abs().max(n.abs()).max(1e-3));
        }
    }
    ensure(
        worst < 1e-4,
        format!("max relative error {worst:.2e} over 100 networks ({redraws} batches redrawn near ReLU kinks)"),
    )
}

// ---------------------------------------------------------------- 2

fn lambda_identity() -> Check {
    let w = compute_lambda(&[20, 1]).unwrap();
    let l = w.lambda();
    let norm = l.iter().map(|x| x * x).sum::<f64>().sqrt();
    ensure(
        (norm - 1.0).abs() <= 1e-12 && (l[0] - 0.04994).abs() <= 1e-5 && (l[1] - 0.99875).abs() <= 1e-5,
        format!("lambda = [{:.5}, {:.5}], |lambda| - 1 = {:.1e}", l[0], l[1], norm - 1.0),
    )
}

// ---------------------------------------------------------------- 3

fn reported_g_consistency() -> Check {
    let rows = [
        ("OUH", 838, 707, 0.770),
        ("PUH", 828, 638, 0.727),
        ("UHB", 815, 717, 0.764),
        ("BH", 806, 825, 0.815),
    ];
    let mut worst = 0.0f64;
    for (_, sens, spec, g) in rows {
        let c = ConfusionCounts {
            tp: sens,
            fn_: 1000 - sens,
            tn: spec,
            fp: 1000 - spec,
        };
        worst = worst.max((g_mean(&c).unwrap() - g).abs());
    }
    ensure(worst <= 0.001, format!("max |G - reported G| = {worst:.5} over 4 rows"))
}

// ---------------------------------------------------------------- 4

fn brute_auroc(scores: &[f64], pos: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if pos[i] && !pos[j] {
                den += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    num / den
}

fn multisets(len: usize, values: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if cur.len() == len {
        out.push(cur.clone());
        return;
    }
    for v in start..values {
        cur.push(v);
        multisets(len, values, v, cur, out);
        cur.pop();
    }
}

fn auroc_oracle() -> Check {
    let grid = [0.0, 0.25, 0.5, 0.75, 1.0];
    let mut sets = Vec::new();
    multisets(8, grid.len(), 0, &mut Vec::new(), &mut sets);
    let mut cases = 0;
    for (k, set) in sets.iter().enumerate() {
        let mut scores: Vec<f64> = set.iter().map(|&i| grid[i]).collect();
        if k % 2 == 1 {
            scores.reverse();
        }
        for mask in 1u32..255 {
            let pos: Vec<bool> = (0..8).map(|b| mask >> b & 1 == 1).collect();
            let fast = auroc(&scores, &pos).unwrap();
            let slow = brute_auroc(&scores, &pos);
            if fast != slow {
                return Err(format!("mismatch on {scores:?} / {pos:?}: {fast} vs {slow}"));
            }
            cases += 1;
        }
    }
    Ok(format!("{cases} label assignments over {} score multisets, all exact", sets.len()))
}

// ---------------------------------------------------------------- 5

fn fixed_q(q: &[f64]) -> DuelingParams {
    let trunk = vec![DenseLayer::new(Matrix::identity(1), vec![0.0], Activation::Relu).unwrap()];
    let adv = DenseLayer::new(Matrix::zeros(q.len(), 1), q.to_vec(), Activation::Identity).unwrap();
    DuelingParams::from_layers(trunk, None, adv, Head::SingleStream, 0.0).unwrap()
}

fn ddqn_semantics() -> Check {
    // (online Q(s'), target Q(s'), r, gamma, expected y)
    let table = [
        ([1.0, 2.0], [5.0, -3.0], 0.5, 0.1, 0.5 + 0.1 * -3.0),
        ([4.0, -1.0], [0.0, 9.0], -0.2, 0.5, -0.2 + 0.5 * 0.0),
        ([0.3, 0.7], [2.0, 1.0], 1.0, 0.9, 1.0 + 0.9 * 1.0),
    ];
    for (on, tg, r, gamma, want) in table {
        let online = fixed_q(&on);
        let target = fixed_q(&tg);
        assert_ne!(argmax(&on), argmax(&tg));
        let mut t = Transition {
            state: vec![0.0],
            action: 0,
            reward: r,
            next_state: vec![1.0],
            term: false,
        };
        let y = ddqn_target(&t, &online, &target, gamma).unwrap();
        if (y - want).abs() > 1e-12 {
            return Err(format!("y = {y}, expected {want}"));
        }
        t.term = true;
        if ddqn_target(&t, &online, &target, gamma).unwrap() != r {
            return Err("terminal target differs from r".into());
        }
    }
    Ok("3 hand tables match r + gamma*Q_target(s', argmax Q_online); term=1 gives y = r exactly".into())
}

// ---------------------------------------------------------------- 6

fn termination_semantics() -> Check {
    let labels = [0, 0, 0, 1, 0, 0, 0, 0, 0, 0];
    let features = Matrix::new(10, 1, (0..10).map(f64::from).collect()).unwrap();
    let ds = Dataset::new(features, labels.to_vec(), vec!["x".into()], vec!["0".into(), "1".into()]).unwrap();
    let w = compute_lambda(&ds.class_counts()).unwrap();
    let lam = w.lambda().to_vec();
    let env = Environment::new(&ds, w, None).unwrap();

    // A presentation order with at least two majority rows before the case.
    let mut seed = 0;
    let mut ep = loop {
        let ep = env.reset(&mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let pos = ep.order().iter().position(|&r| labels[r] == 1).unwrap();
        if pos >= 2 {
            break ep;
        }
        seed += 1;
    };
    let first = env.step(&mut ep, 1).unwrap();
    let wrong_majority_continues = first.reward == -lam[0] && !first.term;
    let mut minority_ends = false;
    while let Some(row) = ep.current() {
        if labels[row] == 1 {
            let out = env.step(&mut ep, 0).unwrap();
            minority_ends = out.term && out.reward == -lam[1] && ep.terminated() && ep.current().is_none();
            break;
        }
        let out = env.step(&mut ep, 0).unwrap();
        assert!(!out.term);
    }

    let mut ep = env.reset(&mut ChaCha8Rng::seed_from_u64(99)).unwrap();
    let (mut total, mut oracle) = (0.0, 0.0);
    while let Some(row) = ep.current() {
        total += env.step(&mut ep, labels[row]).unwrap().reward;
        oracle += lam[labels[row]];
    }
    let oracle_ok = (total - oracle).abs() < 1e-12 && ep.steps_taken() == 10;
    ensure(
        wrong_majority_continues && minority_ends && oracle_ok,
        format!(
            "wrong majority continues: {wrong_majority_continues}; wrong minority ends: {minority_ends}; \
             oracle reward {total:.6} = sum lambda {oracle:.6}: {oracle_ok}"
        ),
    )
}

// ---------------------------------------------------------------- shared runs

struct Splits {
    train: Dataset,
    val: Dataset,
    test: Dataset,
}

fn make_splits(prevalences: &[f64], n: usize, dim: usize, parts: (f64, f64, f64), seed: u64) -> Splits {
    let ds = generate_synthetic(&SyntheticSpec::simplex(prevalences, dim, 2.0, n, seed).unwrap()).unwrap();
    let (tr, va, te) = split(
        &ds,
        &SplitSpec {
            train: parts.0,
            validation: parts.1,
            test: parts.2,
            seed,
            stratified: true,
        },
    )
    .unwrap();
    let (_, train, mut rest) = standardize(&tr, &[&va, &te]).unwrap();
    let test = rest.pop().unwrap();
    let val = rest.pop().unwrap();
    Splits { train, val, test }
}

fn q_scores(params: &DuelingParams, data: &Dataset) -> Vec<Vec<f64>> {
    (0..data.len()).map(|i| params.predict_scores(data.row(i)).unwrap()).collect()
}

fn positive_col(scores: &[Vec<f64>], c: usize) -> Vec<f64> {
    scores.iter().map(|s| s[c]).collect()
}

fn sens_at(scores: &[f64], labels: &[usize], threshold: f64) -> f64 {
    let pred: Vec<usize> = scores.iter().map(|&s| usize::from(s >= threshold)).collect();
    sensitivity(&confusion(&pred, labels, 1).unwrap()).unwrap()
}

struct BinaryRun {
    q_g: f64,
    mlp_g: f64,
    val_sens_default: f64,
    val_sens_tuned: f64,
    test_sens_default: f64,
    test_sens_tuned: f64,
    mlp_val_sens_tuned: f64,
    mlp_test_sens_default: f64,
    mlp_test_sens_tuned: f64,
}

fn binary_run(seed: u64) -> BinaryRun {
    let s = make_splits(&[0.95, 0.05], 4200, 10, (0.6, 0.2, 0.2), seed);
    let cfg = TrainingConfig {
        total_steps: 30_000,
        seed,
        ..TrainingConfig::binary()
    };
    let q = train(&cfg, &s.train, Some(&s.val)).unwrap();
    let test_scores = q_scores(&q.params, &s.test);
    let q_pred: Vec<usize> = test_scores.iter().map(|r| argmax(r)).collect();
    let q_g = g_mean(&confusion(&q_pred, &s.test.labels, 1).unwrap()).unwrap_or(0.0);

    let mlp = train_supervised(&SupervisedConfig { seed, ..SupervisedConfig::binary() }, &s.train, Some(&s.val)).unwrap();
    let m_test_scores = predict_scores(&mlp.model, &s.test).unwrap();
    let m_pred: Vec<usize> = m_test_scores.iter().map(|r| argmax(r)).collect();
    let mlp_g = g_mean(&confusion(&m_pred, &s.test.labels, 1).unwrap()).unwrap_or(0.0);

    let val_pos = positive_col(&q_scores(&q.params, &s.val), 1);
    let is_pos: Vec<bool> = s.val.labels.iter().map(|&l| l == 1).collect();
    let t = threshold_tune(&val_pos, &is_pos, 0.9).unwrap();
    let val_default: Vec<usize> = q_scores(&q.params, &s.val).iter().map(|r| argmax(r)).collect();
    let m_val_pos = positive_col(&predict_scores(&mlp.model, &s.val).unwrap(), 1);
    let mt = threshold_tune(&m_val_pos, &is_pos, 0.9).unwrap();
    BinaryRun {
        q_g,
        mlp_g,
        val_sens_default: sensitivity(&confusion(&val_default, &s.val.labels, 1).unwrap()).unwrap(),
        val_sens_tuned: sens_at(&val_pos, &s.val.labels, t),
        mlp_val_sens_tuned: sens_at(&m_val_pos, &s.val.labels, mt),
        mlp_test_sens_default: sensitivity(&confusion(&m_pred, &s.test.labels, 1).unwrap()).unwrap(),
        mlp_test_sens_tuned: sens_at(&positive_col(&m_test_scores, 1), &s.test.labels, mt),
        test_sens_default: sensitivity(&confusion(&q_pred, &s.test.labels, 1).unwrap()).unwrap(),
        test_sens_tuned: sens_at(&positive_col(&test_scores, 1), &s.test.labels, t),
    }
}

const CLINICAL_PREVALENCES: [f64; 5] = [0.288, 0.336, 0.087, 0.174, 0.113];
const MULTI_HIDDEN: usize = 128;
const MULTI_STEPS: u64 = 30_000;

struct MultiRun {
    q_sd_sens: f64,
    q_mean_g: f64,
    mlp_sd_sens: f64,
    ddqn_mean_g: f64,
    q_mid_auroc: f64,
    ddqn_mid_auroc: f64,
}

fn mid_auroc(out: &TrainOutcome) -> f64 {
    out.history
        .points
        .iter()
        .find(|p| p.step == MULTI_STEPS / 2)
        .and_then(|p| p.val_auroc)
        .expect("checkpoint at the mid-training step")
}

fn multiclass_run(seed: u64) -> MultiRun {
    let s = make_splits(&CLINICAL_PREVALENCES, 24_102, 10, (0.6, 0.15, 0.25), seed);
    let base = TrainingConfig {
        hidden: vec![MULTI_HIDDEN],
        total_steps: MULTI_STEPS,
        seed,
        ..TrainingConfig::multiclass()
    };
    let q = train(&base, &s.train, Some(&s.val)).unwrap();
    let d = train(
        &TrainingConfig {
            head: Head::SingleStream,
            ..base.clone()
        },
        &s.train,
        Some(&s.val),
    )
    .unwrap();
    let mlp = train_supervised(&SupervisedConfig { seed, ..SupervisedConfig::multiclass() }, &s.train, Some(&s.val))
        .unwrap();
    let ova = |scores: Vec<Vec<f64>>| {
        let pred: Vec<usize> = scores.iter().map(|r| argmax(r)).collect();
        one_vs_all(&pred, &s.test.labels, 5).unwrap()
    };
    let q_ova = ova(q_scores(&q.params, &s.test));
    let d_ova = ova(q_scores(&d.params, &s.test));
    let m_ova = ova(predict_scores(&mlp.model, &s.test).unwrap());
    MultiRun {
        q_sd_sens: q_ova.sd_sensitivity,
        q_mean_g: q_ova.mean_g,
        mlp_sd_sens: m_ova.sd_sensitivity,
        ddqn_mean_g: d_ova.mean_g,
        q_mid_auroc: mid_auroc(&q),
        ddqn_mid_auroc: mid_auroc(&d),
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn list(xs: impl Iterator<Item = f64>) -> String {
    xs.map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ")
}

// ---------------------------------------------------------------- 11

fn wilcoxon_exactness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut cases = 0;
    for n in 6..=10usize {
        for _ in 0..40 {
            // Small integer grid so tied magnitudes occur.
            let a: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(-4i32..=4))).collect();
            let b: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(-4i32..=4))).collect();
            let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
            if d.len() < 6 {
                continue;
            }
            let res = wilcoxon_signed_rank(&a, &b).unwrap();
            // Oracle: midranks of |d| by direct counting, then all 2^m sign flips.
            let mags: Vec<f64> = d.iter().map(|x| x.abs()).collect();
            let ranks: Vec<f64> = mags
                .iter()
                .map(|&m| {
                    let below = mags.iter().filter(|&&o| o < m).count() as f64;
                    let equal = mags.iter().filter(|&&o| o == m).count() as f64;
                    below + (equal + 1.0) / 2.0
                })
                .collect();
            let m = d.len();
            let centre = ranks.iter().sum::<f64>() / 2.0;
            let observed: f64 = ranks.iter().zip(&d).filter(|(_, &x)| x > 0.0).map(|(r, _)| r).sum();
            let dev = (observed - centre).abs();
            let extreme = (0u32..1 << m)
                .filter(|mask| {
                    let w: f64 = (0..m).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
                    (w - centre).abs() >= dev - 1e-9
                })
                .count();
            let p = extreme as f64 / f64::from(1u32 << m);
            if res.p_value != p || !res.exact {
                return Err(format!("n={m}: p {} vs enumeration {p}", res.p_value));
            }
            cases += 1;
        }
    }
    Ok(format!("{cases} paired samples with n in 6..=10, p-values identical to 2^n enumeration"))
}

// ---------------------------------------------------------------- 12

fn pipeline(dir: &Path) {
    let run = |args: &[&str]| {
        let out = Command::new(env!("CARGO_BIN_EXE_qimb")).current_dir(dir).args(args).output().unwrap();
        assert!(out.status.success(), "qimb {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    };
    run(&[
        "generate", "--set", "synthetic.n=1500", "--set", "synthetic.prevalences=[0.95, 0.05]", "--set",
        "synthetic.dim=10", "--seed", "12", "--out", "gen",
    ]);
    run(&["preprocess", "--set", "input=gen/data.csv", "--seed", "12", "--out", "prep"]);
    run(&[
        "train", "--set", "method=q-imb", "--set", "train=prep/train.csv", "--set", "validation=prep/validation.csv",
        "--set", "qlearning.total_steps=5000", "--set", "qlearning.early_stop.enabled=false", "--seed", "12", "--out",
        "model",
    ]);
    run(&["evaluate", "--set", "model=model/model.bin", "--set", "test=prep/test.csv", "--out", "eval"]);
}

fn determinism() -> Check {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path());
    pipeline(b.path());
    for f in ["eval/report.tsv", "eval/scores.tsv", "model/history.tsv"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        if x != y {
            return Err(format!("{f} differs between runs"));
        }
    }
    Ok("report.tsv, scores.tsv and history.tsv byte-identical across two runs".into())
}

// ----------------------------------------------------------------

fn panic_message(e: Box<dyn std::any::Any + Send>) -> String {
    e.downcast_ref::<String>()
        .cloned()
        .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "panic".into())
}

/// Runs `f` once per seed; a panic becomes an error shared by the
/// criteria that use these runs.
fn shared_runs<T>(f: fn(u64) -> T) -> Result<(Vec<T>, f64), String> {
    let start = Instant::now();
    let runs = catch_unwind(|| SEEDS.iter().map(|&s| f(s)).collect::<Vec<T>>())
        .map_err(|e| format!("training run panicked: {}", panic_message(e)))?;
    Ok((runs, start.elapsed().as_secs_f64() / SEEDS.len() as f64))
}

fn report(results: &mut Vec<bool>, id: &str, title: &str, f: impl FnOnce() -> Check) {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| Err(format!("panicked: {}", panic_message(e))));
    let secs = start.elapsed().as_secs_f64();
    let (tag, detail) = match &outcome {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("{tag} {id:>3}  {title}: {detail} [{secs:.1}s]");
    results.push(outcome.is_ok());
}

fn main() {
    let mut results = Vec::new();
    report(&mut results, "1", "gradient correctness", gradient_check);
    report(&mut results, "2", "lambda identity", lambda_identity);
    report(&mut results, "3", "reported G consistency", reported_g_consistency);
    report(&mut results, "4", "AUROC oracle equivalence", auroc_oracle);
    report(&mut results, "5", "DDQN target semantics", ddqn_semantics);
    report(&mut results, "6", "termination semantics", termination_semantics);

    let binary_runs = shared_runs(binary_run);
    report(&mut results, "7", "binary effectiveness", || {
        let (binary, binary_secs) = binary_runs.as_ref().map_err(Clone::clone)?;
        let binary_secs = *binary_secs;
        let (q, m) = (mean(binary.iter().map(|r| r.q_g)), mean(binary.iter().map(|r| r.mlp_g)));
        ensure(
            q - m >= 0.05 && binary_secs < 900.0,
            format!(
                "mean test G q-imb {q:.3} vs mlp {m:.3} (diff {:.3}); q-imb [{}] mlp [{}]; {binary_secs:.0}s per seed",
                q - m,
                list(binary.iter().map(|r| r.q_g)),
                list(binary.iter().map(|r| r.mlp_g)),
            ),
        )
    });
    report(&mut results, "10", "threshold tuning", || {
        let (binary, _) = binary_runs.as_ref().map_err(Clone::clone)?;
        let val_ok = binary.iter().all(|r| r.val_sens_tuned >= 0.9 && r.mlp_val_sens_tuned >= 0.9);
        let up = binary.iter().filter(|r| r.test_sens_tuned > r.test_sens_default).count();
        let mlp_up = binary.iter().filter(|r| r.mlp_test_sens_tuned > r.mlp_test_sens_default).count();
        ensure(
            val_ok && up == SEEDS.len() && mlp_up == SEEDS.len(),
            format!(
                "q-imb: validation sensitivity default [{}] -> tuned [{}], test default [{}] -> tuned [{}], \
                 raised in {up}/5; mlp: validation tuned [{}], test default [{}] -> tuned [{}], raised in {mlp_up}/5",
                list(binary.iter().map(|r| r.val_sens_default)),
                list(binary.iter().map(|r| r.val_sens_tuned)),
                list(binary.iter().map(|r| r.test_sens_default)),
                list(binary.iter().map(|r| r.test_sens_tuned)),
                list(binary.iter().map(|r| r.mlp_val_sens_tuned)),
                list(binary.iter().map(|r| r.mlp_test_sens_default)),
                list(binary.iter().map(|r| r.mlp_test_sens_tuned)),
            ),
        )
    });

    let multi_runs = shared_runs(multiclass_run);
    report(&mut results, "8", "multiclass effectiveness", || {
        let (multi, _) = multi_runs.as_ref().map_err(Clone::clone)?;
        let (qs, ms) = (mean(multi.iter().map(|r| r.q_sd_sens)), mean(multi.iter().map(|r| r.mlp_sd_sens)));
        let (qg, dg) = (mean(multi.iter().map(|r| r.q_mean_g)), mean(multi.iter().map(|r| r.ddqn_mean_g)));
        ensure(
            qs < ms && qg > dg,
            format!("sensitivity SD q-imb {qs:.3} vs mlp {ms:.3}; mean G q-imb {qg:.3} vs ddqn {dg:.3}"),
        )
    });
    report(&mut results, "9", "dueling vs non-dueling curves", || {
        let (multi, _) = multi_runs.as_ref().map_err(Clone::clone)?;
        let wins = multi.iter().filter(|r| r.q_mid_auroc > r.ddqn_mid_auroc).count();
        ensure(
            wins >= 4,
            format!(
                "validation AUROC at step {}: dueling [{}] vs single-stream [{}]; dueling ahead in {wins}/5",
                MULTI_STEPS / 2,
                list(multi.iter().map(|r| r.q_mid_auroc)),
                list(multi.iter().map(|r| r.ddqn_mid_auroc)),
            ),
        )
    });

    report(&mut results, "11", "Wilcoxon exactness", wilcoxon_exactness);
    report(&mut results, "12", "pipeline determinism", determinism);

    let failed = results.iter().filter(|ok| !**ok).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
