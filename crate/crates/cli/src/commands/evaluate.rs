use std::fmt::Write as _;
use std::path::PathBuf;

use qimb::duelnet::argmax;
use qimb::metrics::{binary_report, multiclass_report, CiSpec};
use serde::Deserialize;

use super::load;
use super::threshold::ThresholdRecord;
use crate::artifacts::{check_schema, ensure_dir, fmt_f64, load_dataset, load_model, write_file, Header};
use crate::error::CliError;
use crate::Common;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvaluateConfig {
    model: PathBuf,
    test: PathBuf,
    /// `threshold.tsv` from tune-threshold; argmax decisions without it.
    threshold: Option<PathBuf>,
    /// Bootstrap replicates for binary confidence intervals; 0 disables.
    #[serde(default = "default_draws")]
    ci_draws: usize,
    seed: Option<u64>,
}

fn default_draws() -> usize {
    1000
}

/// Column name of a class score in `scores.tsv`.
pub fn score_column(class: &str) -> String {
    format!("score:{class}")
}

/// Writes `report.tsv`, `report.txt` and per-sample `scores.tsv`.
pub fn evaluate(common: &Common) -> Result<(), CliError> {
    let loaded = load::<EvaluateConfig>("evaluate", common)?;
    let cfg = &loaded.config;
    if cfg.ci_draws != 0 && cfg.ci_draws < 100 {
        return Err(CliError::usage(format!("ci_draws must be 0 or at least 100, got {}", cfg.ci_draws)));
    }
    let model = load_model(&cfg.model)?;
    let prov = &model.provenance;
    let threshold = match &cfg.threshold {
        Some(p) => {
            let t = ThresholdRecord::read(p)?;
            if t.model_sha256 != model.sha256 {
                return Err(CliError::data(format!("{} was tuned for a different model", p.display())));
            }
            Some(t)
        }
        None => None,
    };
    let (test, _, test_sha) = load_dataset(&cfg.test)?;
    check_schema(&test, prov, "test")?;

    let scores = (0..test.len())
        .map(|i| model.model.scores(test.row(i)))
        .collect::<Result<Vec<_>, CliError>>()?;
    let seed = cfg.seed.unwrap_or(prov.seed);
    let names = &prov.class_names;
    let binary = names.len() == 2;
    let positive = prov.positive_class.filter(|_| binary);

    let predicted: Vec<usize> = match (&threshold, positive) {
        (Some(t), Some(pos)) => {
            if names[pos] != t.positive_class {
                return Err(CliError::data("threshold positive class differs from the model's"));
            }
            scores.iter().map(|s| if s[pos] >= t.threshold { pos } else { 1 - pos }).collect()
        }
        (Some(_), None) => return Err(CliError::data("a threshold applies only to binary models")),
        (None, _) => scores.iter().map(|s| argmax(s)).collect(),
    };
    let report = match positive {
        Some(pos) => {
            let ci = (cfg.ci_draws > 0).then_some(CiSpec {
                draws: cfg.ci_draws,
                seed,
            });
            let pos_scores: Vec<f64> = scores.iter().map(|s| s[pos]).collect();
            binary_report(
                &prov.method,
                &predicted,
                &pos_scores,
                &test.labels,
                names,
                pos,
                threshold.as_ref().map(|t| t.threshold),
                ci,
            )?
        }
        None => multiclass_report(&prov.method, &predicted, &scores, &test.labels, names)?,
    };

    let mut header = Header::new("evaluate", loaded.hash, seed)
        .with("method", &prov.method)
        .with("test_sha256", &test_sha)
        .with("model_sha256", &model.sha256);
    if let Some(pos) = positive {
        header = header.with("positive_class", &names[pos]);
    }
    if let Some(t) = &threshold {
        header = header.with("threshold_target", fmt_f64(t.target));
    }

    let mut score_tsv = header.comment();
    let cols: Vec<String> = names.iter().map(|n| score_column(n)).collect();
    writeln!(score_tsv, "index\tlabel\tpredicted\t{}", cols.join("\t")).unwrap();
    for (i, s) in scores.iter().enumerate() {
        let vals: Vec<String> = s.iter().map(|v| fmt_f64(*v)).collect();
        writeln!(score_tsv, "{i}\t{}\t{}\t{}", names[test.labels[i]], names[predicted[i]], vals.join("\t")).unwrap();
    }

    ensure_dir(&common.out)?;
    write_file(&common.out.join("report.tsv"), header.comment() + &report.to_tsv())?;
    write_file(&common.out.join("report.txt"), header.comment() + &report.to_text())?;
    write_file(&common.out.join("scores.tsv"), &score_tsv)?;
    print!("{}", report.to_text());
    Ok(())
}
