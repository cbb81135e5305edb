use std::path::Path;
use std::process::{Command, Output};

use qimb::baselines::cost_weights;

const BIN: &str = env!("CARGO_BIN_EXE_qimb");

fn qimb(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).current_dir(dir).args(args).output().expect("spawn qimb")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = qimb(dir, args);
    assert!(
        out.status.success(),
        "qimb {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    qimb(dir, args).status.code().unwrap()
}

fn read(dir: &Path, file: &str) -> String {
    std::fs::read_to_string(dir.join(file)).unwrap()
}

fn data_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.is_empty())
        .map(|l| l.split('\t').map(str::to_string).collect())
        .collect()
}

fn kv(text: &str, key: &str) -> String {
    data_rows(text).into_iter().find(|r| r[0] == key).unwrap()[1].clone()
}

fn binary_pipeline(dir: &Path) {
    ok(
        dir,
        &[
            "generate", "--set", "synthetic.n=900", "--set", "synthetic.prevalences=[0.9, 0.1]",
            "--set", "synthetic.dim=4", "--set", "synthetic.separation=3.0", "--seed", "5", "--out", "gen",
        ],
    );
    ok(dir, &["preprocess", "--set", "input=gen/data.csv", "--seed", "5", "--out", "prep"]);
    ok(
        dir,
        &[
            "train", "--set", "method=q-imb", "--set", "train=prep/train.csv", "--set",
            "validation=prep/validation.csv", "--set", "qlearning.total_steps=1500", "--set",
            "qlearning.hidden=[16]", "--set", "qlearning.validation_every=250", "--set",
            "qlearning.early_stop.enabled=false", "--seed", "2", "--out", "q",
        ],
    );
    ok(
        dir,
        &["tune-threshold", "--set", "model=q/model.bin", "--set", "validation=prep/validation.csv", "--out", "t90"],
    );
    ok(
        dir,
        &[
            "evaluate", "--set", "model=q/model.bin", "--set", "test=prep/test.csv", "--set",
            "threshold=t90/threshold.tsv", "--set", "ci_draws=200", "--out", "eval",
        ],
    );
}

#[test]
fn binary_pipeline_artifacts_and_determinism() {
    let run1 = tempfile::tempdir().unwrap();
    let run2 = tempfile::tempdir().unwrap();
    binary_pipeline(run1.path());
    binary_pipeline(run2.path());
    let d = run1.path();

    for f in ["model.bin", "history.tsv", "train_report.tsv", "resolved_config.toml", "preprocessing.json"] {
        assert!(d.join("q").join(f).exists(), "missing {f}");
    }
    let history = data_rows(&read(d, "q/history.tsv"));
    assert_eq!(history[0][0], "step");
    let steps: Vec<u64> = history[1..].iter().map(|r| r[0].parse().unwrap()).collect();
    assert!(!steps.is_empty());
    assert!(steps.windows(2).all(|w| w[0] < w[1]), "{steps:?}");

    let t = read(d, "t90/threshold.tsv");
    assert!(kv(&t, "validation_sensitivity").parse::<f64>().unwrap() >= 0.9);
    assert!(t.starts_with("# qimb "));
    assert!(t.contains("# config_sha256=") && t.contains("# seed="));
    assert_eq!(kv(&t, "validation_sha256").len(), 64);

    ok(
        d,
        &[
            "tune-threshold", "--set", "model=q/model.bin", "--set", "validation=prep/validation.csv", "--set",
            "target=0.85", "--out", "t85",
        ],
    );
    let t85: f64 = kv(&read(d, "t85/threshold.tsv"), "threshold").parse().unwrap();
    let t90: f64 = kv(&t, "threshold").parse().unwrap();
    assert!(t85 >= t90);

    let report = read(d, "eval/report.tsv");
    let metrics: Vec<String> = data_rows(&report).iter().skip(2).map(|r| r[1].clone()).collect();
    for m in ["sensitivity", "specificity", "auroc", "f_measure", "g_mean"] {
        assert!(metrics.iter().any(|x| x == m), "missing {m}");
    }
    let sens = data_rows(&report).into_iter().find(|r| r[1] == "sensitivity").unwrap();
    assert_ne!(sens[4], "NA", "bootstrap interval expected");

    for f in ["eval/report.tsv", "eval/scores.tsv", "q/model.bin", "prep/test.csv", "t90/threshold.tsv"] {
        assert_eq!(
            std::fs::read(d.join(f)).unwrap(),
            std::fs::read(run2.path().join(f)).unwrap(),
            "{f} differs between identical runs"
        );
    }

    ok(d, &["compare", "--set", "a=eval", "--set", "b=eval", "--out", "self"]);
    let c = read(d, "self/compare.tsv");
    let rows = data_rows(&c);
    assert!(rows.iter().filter(|r| r.len() == 5 && r[0] != "metric").all(|r| r[4] == "0.000000"));
    assert!(c.contains("no difference"));

    std::fs::create_dir(d.join("bare")).unwrap();
    std::fs::copy(d.join("eval/report.tsv"), d.join("bare/report.tsv")).unwrap();
    ok(d, &["compare", "--set", "a=eval", "--set", "b=bare", "--out", "bare_cmp"]);
    assert!(read(d, "bare_cmp/compare.tsv").contains("metrics-only"));

    ok(
        d,
        &[
            "train", "--set", "method=mlp+cost-sensitive", "--set", "train=prep/train.csv", "--set",
            "validation=prep/validation.csv", "--seed", "2", "--out", "m",
        ],
    );
    let rep = read(d, "m/train_report.tsv");
    let counts: Vec<usize> = data_rows(&rep).iter().filter(|r| r[0] == "class_count").map(|r| r[2].parse().unwrap()).collect();
    let logged: Vec<f64> = data_rows(&rep).iter().filter(|r| r[0] == "class_weight").map(|r| r[2].parse().unwrap()).collect();
    assert_eq!(logged, cost_weights(&counts).unwrap());

    ok(d, &["evaluate", "--set", "model=m/model.bin", "--set", "test=prep/test.csv", "--out", "m_eval"]);
    ok(d, &["compare", "--set", "a=eval", "--set", "b=m_eval", "--out", "cmp"]);
    let c1 = read(d, "cmp/compare.tsv");
    ok(d, &["compare", "--set", "a=eval", "--set", "b=m_eval", "--out", "cmp2"]);
    assert_eq!(c1, read(d, "cmp2/compare.tsv"));
    assert!(data_rows(&c1).iter().any(|r| r[0] == "wilcoxon"));

    ok(d, &["evaluate", "--set", "model=m/model.bin", "--set", "test=prep/validation.csv", "--out", "other"]);
    assert_eq!(code(d, &["compare", "--set", "a=eval", "--set", "b=other", "--out", "bad"]), 3);
}

#[test]
fn multiclass_flow_and_rejections() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(
        d.join("gen.toml"),
        "seed = 11\n[synthetic]\nn = 3000\nprevalences = [0.288, 0.336, 0.087, 0.174, 0.113]\nseparation = 3.0\n",
    )
    .unwrap();
    ok(d, &["generate", "--config", "gen.toml", "--out", "gen"]);
    let data = read(d, "gen/data.csv");
    let labels: Vec<&str> = data.lines().filter(|l| !l.starts_with('#')).skip(1).map(|l| l.rsplit(',').next().unwrap()).collect();
    assert_eq!(labels.len(), 3000);
    let prev = [0.288f64, 0.336, 0.087, 0.174, 0.113];
    let total: f64 = prev.iter().sum();
    for (k, p) in prev.iter().map(|p| p / total).enumerate() {
        let frac = labels.iter().filter(|l| **l == k.to_string()).count() as f64 / 3000.0;
        let se = (p * (1.0 - p) / 3000.0).sqrt();
        assert!((frac - p).abs() < 4.0 * se, "class {k}: {frac} vs {p}");
    }
    ok(d, &["generate", "--config", "gen.toml", "--out", "gen2"]);
    assert_eq!(std::fs::read(d.join("gen/data.csv")).unwrap(), std::fs::read(d.join("gen2/data.csv")).unwrap());

    ok(d, &["preprocess", "--set", "input=gen/data.csv", "--out", "prep"]);
    ok(
        d,
        &[
            "train", "--set", "method=mlp", "--set", "train=prep/train.csv", "--set",
            "validation=prep/validation.csv", "--set", "supervised.hidden=[16]", "--set", "supervised.epochs=5",
            "--out", "m",
        ],
    );
    assert_eq!(
        code(d, &["tune-threshold", "--set", "model=m/model.bin", "--set", "validation=prep/validation.csv", "--out", "t"]),
        3
    );
    ok(d, &["evaluate", "--set", "model=m/model.bin", "--set", "test=prep/test.csv", "--out", "e"]);
    let rows = data_rows(&read(d, "e/report.tsv"));
    for m in ["mean_sensitivity", "sd_sensitivity", "mean_g_mean", "sd_g_mean"] {
        assert!(rows.iter().any(|r| r[1] == m && r[2].is_empty()), "missing {m}");
    }
    for class in ["0", "1", "2", "3", "4"] {
        assert!(rows.iter().any(|r| r[1] == "sensitivity" && r[2] == class));
        assert!(rows.iter().any(|r| r[1] == "g_mean" && r[2] == class));
    }
    ok(d, &["compare", "--set", "a=e", "--set", "b=e", "--out", "c"]);
    assert!(read(d, "c/compare.tsv").contains("no difference"));

    ok(
        d,
        &[
            "train", "--set", "method=ddqn", "--set", "train=prep/train.csv", "--set", "qlearning.total_steps=200",
            "--set", "qlearning.hidden=[8]", "--out", "dd",
        ],
    );
    assert!(read(d, "dd/resolved_config.toml").contains("head = \"single-stream\""));
}

#[test]
fn usage_and_data_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(code(d, &["generate", "--set", "synthetic.n=0", "--set", "synthetic.prevalences=[0.5, 0.5]"]), 2);
    assert_eq!(code(d, &["generate", "--set", "synthetic.n=10"]), 2);
    assert_eq!(code(d, &["generate", "--config", "absent.toml"]), 2);
    assert_eq!(code(d, &["frobnicate"]), 2);
    assert_eq!(code(d, &["train", "--set", "method=xgboost", "--set", "train=none.csv"]), 2);
    assert_eq!(code(d, &["train", "--set", "method=mlp", "--set", "train=none.csv"]), 3);

    ok(
        d,
        &[
            "generate", "--set", "synthetic.n=400", "--set", "synthetic.prevalences=[0.8, 0.2]",
            "--set", "synthetic.dim=3", "--out", "g3",
        ],
    );
    ok(
        d,
        &[
            "generate", "--set", "synthetic.n=400", "--set", "synthetic.prevalences=[0.8, 0.2]",
            "--set", "synthetic.dim=5", "--out", "g5",
        ],
    );
    assert_eq!(
        code(d, &["train", "--set", "method=q-imb", "--set", "train=g3/data.csv", "--set", "qlearning.gama=0.2"]),
        2
    );
    assert_eq!(code(d, &["train", "--set", "method=q-imb", "--set", "train=g3/data.csv", "--out", "noval"]), 2);
    assert!(!d.join("noval").exists(), "nothing may be written before config validation");
    ok(
        d,
        &[
            "train", "--set", "method=mlp", "--set", "train=g3/data.csv", "--set", "supervised.epochs=2",
            "--out", "m3",
        ],
    );
    assert_eq!(code(d, &["evaluate", "--set", "model=m3/model.bin", "--set", "test=g5/data.csv", "--out", "e"]), 3);
    assert_eq!(
        code(
            d,
            &["tune-threshold", "--set", "model=m3/model.bin", "--set", "validation=g3/data.csv", "--set", "target=1.5"]
        ),
        2
    );
    assert_eq!(
        code(d, &["evaluate", "--set", "model=m3/model.bin", "--set", "test=g3/data.csv", "--set", "ci_draws=10"]),
        2
    );
    assert_eq!(
        code(
            d,
            &[
                "train", "--set", "method=q-imb", "--set", "train=g3/data.csv", "--set",
                "qlearning.learning_rate=1e300", "--set", "qlearning.early_stop.enabled=false", "--set",
                "qlearning.total_steps=200", "--out", "boom",
            ]
        ),
        4
    );
}
