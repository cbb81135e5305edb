use std::fmt;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use qimb::agent::{self, TrainingConfig};
use qimb::baselines::{self, SupervisedConfig, WeightMode};
use qimb::data::{majority_class, smote, Dataset};
use qimb::duelnet::Head;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use toml::{Table, Value};

use super::load;
use crate::artifacts::{check_schema, ensure_dir, fmt_f64, load_dataset, write_file, Header, Model, ModelProvenance, VERSION};
use crate::config::{render, to_table, with_preset};
use crate::error::CliError;
use crate::Common;

/// Training method.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Reward-shaped double dueling DQN.
    QImb,
    /// Same learner with a single-stream head.
    Ddqn,
    Mlp,
    MlpSmote,
    MlpCostSensitive,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::QImb => "q-imb",
            Method::Ddqn => "ddqn",
            Method::Mlp => "mlp",
            Method::MlpSmote => "mlp-smote",
            Method::MlpCostSensitive => "mlp-cost-sensitive",
        }
    }

    fn is_q(self) -> bool {
        matches!(self, Method::QImb | Method::Ddqn)
    }
}

impl FromStr for Method {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        Ok(match s {
            "q-imb" | "qimb" => Method::QImb,
            "ddqn" => Method::Ddqn,
            "mlp" => Method::Mlp,
            "mlp-smote" | "mlp+smote" => Method::MlpSmote,
            "mlp-cost-sensitive" | "mlp+cost-sensitive" => Method::MlpCostSensitive,
            other => {
                return Err(CliError::usage(format!(
                    "unknown method '{other}' (expected q-imb, ddqn, mlp, mlp-smote or mlp-cost-sensitive)"
                )))
            }
        })
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainConfig {
    method: String,
    train: PathBuf,
    validation: Option<PathBuf>,
    /// Overrides the learner's own seed when present.
    seed: Option<u64>,
    qlearning: Option<Table>,
    supervised: Option<Table>,
    #[serde(default)]
    smote: SmoteSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SmoteSection {
    strategy: f64,
    k: usize,
}

impl Default for SmoteSection {
    fn default() -> Self {
        Self { strategy: 1.0, k: 5 }
    }
}

enum Resolved {
    Q(TrainingConfig),
    Supervised(SupervisedConfig),
}

impl Resolved {
    fn seed(&self) -> u64 {
        match self {
            Resolved::Q(c) => c.seed,
            Resolved::Supervised(c) => c.seed,
        }
    }
}

fn resolve(method: Method, cfg: &TrainConfig, n_classes: usize) -> Result<Resolved, CliError> {
    let binary = n_classes == 2;
    if method.is_q() {
        if cfg.supervised.is_some() {
            return Err(CliError::usage(format!("[supervised] does not apply to {method}")));
        }
        let preset = if binary { TrainingConfig::binary() } else { TrainingConfig::multiclass() };
        let mut c: TrainingConfig = with_preset(&preset, cfg.qlearning.as_ref(), "qlearning")?;
        if method == Method::Ddqn {
            c.head = Head::SingleStream;
        }
        if let Some(s) = cfg.seed {
            c.seed = s;
        }
        c.validate()?;
        Ok(Resolved::Q(c))
    } else {
        if cfg.qlearning.is_some() {
            return Err(CliError::usage(format!("[qlearning] does not apply to {method}")));
        }
        let preset = if binary { SupervisedConfig::binary() } else { SupervisedConfig::multiclass() };
        let mut c: SupervisedConfig = with_preset(&preset, cfg.supervised.as_ref(), "supervised")?;
        c.weight_mode = match method {
            Method::MlpCostSensitive => WeightMode::InverseFrequency,
            _ => WeightMode::None,
        };
        if let Some(s) = cfg.seed {
            c.seed = s;
        }
        c.validate()?;
        if method == Method::MlpSmote && !(cfg.smote.strategy > 0.0 && cfg.smote.strategy <= 1.0 && cfg.smote.k > 0) {
            return Err(CliError::usage("smote.strategy must be in (0, 1] and smote.k positive"));
        }
        Ok(Resolved::Supervised(c))
    }
}

fn class_lines(out: &mut String, key: &str, names: &[String], values: &[f64]) {
    for (n, v) in names.iter().zip(values) {
        writeln!(out, "{key}\t{n}\t{}", fmt_f64(*v)).unwrap();
    }
}

/// Trains one method and writes `model.bin`, `history.tsv`,
/// `train_report.tsv`, `resolved_config.toml` and `preprocessing.json`.
pub fn train(common: &Common) -> Result<(), CliError> {
    let loaded = load::<TrainConfig>("train", common)?;
    let cfg = &loaded.config;
    let method: Method = cfg.method.parse()?;

    let (train_ds, train_side, train_sha) = load_dataset(&cfg.train)?;
    let validation = match &cfg.validation {
        Some(p) => {
            let (v, _, _) = load_dataset(p)?;
            if v.feature_names != train_ds.feature_names || v.class_names != train_ds.class_names {
                return Err(CliError::data("validation schema differs from the training set"));
            }
            Some(v).filter(|v| !v.is_empty())
        }
        None => None,
    };
    let k = train_ds.n_classes();
    let resolved = resolve(method, cfg, k)?;
    let seed = resolved.seed();
    let header = Header::new("train", loaded.hash.clone(), seed).with("method", method);

    let counts = train_ds.class_counts();
    if counts.iter().any(|&c| c == 0) {
        return Err(CliError::data(format!("training set lacks a class: counts {counts:?}")));
    }
    let positive = (k == 2).then(|| 1 - majority_class(&counts));

    let mut report = header.comment();
    writeln!(report, "method\t{method}").unwrap();
    writeln!(report, "train_samples\t{}", train_ds.len()).unwrap();
    writeln!(report, "validation_samples\t{}", validation.as_ref().map_or(0, Dataset::len)).unwrap();
    for (n, c) in train_ds.class_names.iter().zip(&counts) {
        writeln!(report, "class_count\t{n}\t{c}").unwrap();
    }

    let (model, history, resolved_section) = match &resolved {
        Resolved::Q(c) => {
            let outcome = agent::train(c, &train_ds, validation.as_ref())?;
            class_lines(&mut report, "lambda", &train_ds.class_names, outcome.weights.lambda());
            writeln!(report, "updates\t{}", outcome.updates).unwrap();
            writeln!(report, "episodes\t{}", outcome.episodes).unwrap();
            writeln!(report, "stopped_early\t{}", outcome.stopped_early).unwrap();
            writeln!(report, "selected_step\t{}", outcome.selected_step).unwrap();
            (Model::Q(outcome.params), outcome.history.to_tsv(), ("qlearning", to_table(c)?))
        }
        Resolved::Supervised(c) => {
            let data = if method == Method::MlpSmote {
                let mut rng = ChaCha8Rng::seed_from_u64(c.seed.wrapping_add(1));
                let s = smote(&train_ds, cfg.smote.strategy, cfg.smote.k, &mut rng)?;
                for (n, c) in s.class_names.iter().zip(s.class_counts()) {
                    writeln!(report, "smote_count\t{n}\t{c}").unwrap();
                }
                s
            } else {
                train_ds.clone()
            };
            let outcome = baselines::train_supervised(c, &data, validation.as_ref())?;
            class_lines(&mut report, "class_weight", &train_ds.class_names, &outcome.class_weights);
            writeln!(report, "epochs\t{}", outcome.history.len()).unwrap();
            writeln!(report, "best_epoch\t{}", outcome.best_epoch).unwrap();
            (Model::Mlp(outcome.model), baselines::history_tsv(&outcome.history), ("supervised", to_table(c)?))
        }
    };

    let provenance = ModelProvenance {
        version: VERSION.to_string(),
        method: method.to_string(),
        config_sha256: loaded.hash.clone(),
        seed,
        feature_names: train_ds.feature_names.clone(),
        class_names: train_ds.class_names.clone(),
        positive_class: positive,
        train_sha256: train_sha,
    };
    if let Some(v) = &validation {
        check_schema(v, &provenance, "validation")?;
    }

    let mut resolved_table = loaded.table.clone();
    resolved_table.remove("qlearning");
    resolved_table.remove("supervised");
    resolved_table.insert("seed".into(), Value::Integer(seed as i64));
    resolved_table.insert(resolved_section.0.into(), Value::Table(resolved_section.1));

    ensure_dir(&common.out)?;
    let out = &common.out;
    write_file(&out.join("model.bin"), model.to_bytes(&provenance)?)?;
    write_file(&out.join("history.tsv"), header.comment() + &history)?;
    write_file(&out.join("train_report.tsv"), &report)?;
    write_file(&out.join("resolved_config.toml"), header.comment() + &render(&resolved_table))?;
    write_file(&out.join("preprocessing.json"), train_side.to_json()? + "\n")?;
    print!("{}", report.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect::<String>());
    Ok(())
}
