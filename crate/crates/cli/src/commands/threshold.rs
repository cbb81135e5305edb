use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use qimb::metrics::threshold_tune;
use serde::Deserialize;

use super::load;
use crate::artifacts::{check_schema, ensure_dir, fmt_f64, load_dataset, load_model, read_text, tsv_rows, write_file, Header};
use crate::error::CliError;
use crate::Common;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ThresholdConfig {
    model: PathBuf,
    validation: PathBuf,
    #[serde(default = "default_target")]
    target: f64,
    seed: Option<u64>,
}

fn default_target() -> f64 {
    0.9
}

/// Parsed `threshold.tsv`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdRecord {
    pub threshold: f64,
    pub target: f64,
    pub positive_class: String,
    pub model_sha256: String,
}

impl ThresholdRecord {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = read_text(path)?;
        let map: BTreeMap<&str, &str> = tsv_rows(&text)
            .into_iter()
            .filter(|r| r.len() == 2)
            .map(|r| (r[0], r[1]))
            .collect();
        let get = |k: &str| {
            map.get(k)
                .copied()
                .ok_or_else(|| CliError::data(format!("{}: missing '{k}'", path.display())))
        };
        let num = |k: &str| -> Result<f64, CliError> {
            get(k)?
                .parse()
                .map_err(|_| CliError::data(format!("{}: bad number for '{k}'", path.display())))
        };
        Ok(Self {
            threshold: num("threshold")?,
            target: num("target")?,
            positive_class: get("positive_class")?.to_string(),
            model_sha256: get("model_sha256")?.to_string(),
        })
    }
}

/// Writes `threshold.tsv`: the positive-class score cut-off reaching the
/// target validation sensitivity, with its provenance.
pub fn tune_threshold(common: &Common) -> Result<(), CliError> {
    let loaded = load::<ThresholdConfig>("tune-threshold", common)?;
    let cfg = &loaded.config;
    if !(cfg.target > 0.0 && cfg.target <= 1.0) {
        return Err(CliError::usage(format!("target must be in (0, 1], got {}", cfg.target)));
    }
    let model = load_model(&cfg.model)?;
    let prov = &model.provenance;
    let Some(positive) = prov.positive_class.filter(|_| prov.class_names.len() == 2) else {
        return Err(CliError::data(
            "threshold tuning needs a binary model; multiclass decisions use argmax",
        ));
    };
    let (val, _, val_sha) = load_dataset(&cfg.validation)?;
    check_schema(&val, prov, "validation")?;
    let scores = (0..val.len())
        .map(|i| Ok(model.model.scores(val.row(i))?[positive]))
        .collect::<Result<Vec<f64>, CliError>>()?;
    let is_pos: Vec<bool> = val.labels.iter().map(|&l| l == positive).collect();
    let threshold = threshold_tune(&scores, &is_pos, cfg.target)?;
    let hits = scores.iter().zip(&is_pos).filter(|(s, p)| **p && **s >= threshold).count();
    let achieved = hits as f64 / is_pos.iter().filter(|p| **p).count() as f64;

    let seed = cfg.seed.unwrap_or(prov.seed);
    let header = Header::new("tune-threshold", loaded.hash, seed);
    let mut out = header.comment();
    writeln!(out, "key\tvalue").unwrap();
    writeln!(out, "threshold\t{}", fmt_f64(threshold)).unwrap();
    writeln!(out, "target\t{}", fmt_f64(cfg.target)).unwrap();
    writeln!(out, "validation_sensitivity\t{}", fmt_f64(achieved)).unwrap();
    writeln!(out, "positive_class\t{}", prov.class_names[positive]).unwrap();
    writeln!(out, "validation_sha256\t{val_sha}").unwrap();
    writeln!(out, "model_sha256\t{}", model.sha256).unwrap();
    ensure_dir(&common.out)?;
    write_file(&common.out.join("threshold.tsv"), &out)?;
    println!("threshold {threshold} reaches validation sensitivity {achieved:.4} (target {})", cfg.target);
    Ok(())
}
