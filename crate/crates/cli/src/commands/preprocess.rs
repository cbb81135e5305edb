use std::path::{Path, PathBuf};

use log::warn;
use qimb::data::{
    impute_median, load_csv, save_snapshot, sidecar_path, simulate_prevalence, split, standardize, CsvSchema,
    Dataset, Sidecar, SplitSpec, LABEL_COLUMN,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use super::load;
use crate::artifacts::{ensure_dir, read_text, Header};
use crate::error::CliError;
use crate::Common;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PreprocessConfig {
    #[serde(default)]
    seed: u64,
    input: PathBuf,
    /// Explicit column layout. Without it the input's sidecar is used, or
    /// every column except `label_column` is read as numeric.
    schema: Option<CsvSchema>,
    #[serde(default = "default_label")]
    label_column: String,
    #[serde(default)]
    split: SplitSection,
    /// Case-control subsampling of the training part.
    prevalence: Option<PrevalenceSection>,
    #[serde(default = "yes")]
    impute: bool,
    #[serde(default = "yes")]
    standardize: bool,
}

fn default_label() -> String {
    LABEL_COLUMN.to_string()
}

fn yes() -> bool {
    true
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SplitSection {
    train: f64,
    validation: f64,
    test: f64,
    #[serde(default = "yes")]
    stratified: bool,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            train: 0.6,
            validation: 0.2,
            test: 0.2,
            stratified: true,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PrevalenceSection {
    minority_class: String,
    controls_per_case: usize,
}

/// Column names from the first non-comment line.
fn header_columns(path: &Path, delimiter: char) -> Result<Vec<String>, CliError> {
    let text = read_text(path)?;
    let line = text
        .lines()
        .find(|l| !l.starts_with('#'))
        .ok_or_else(|| CliError::data(format!("{} has no header row", path.display())))?;
    Ok(line.split(delimiter).map(|c| c.trim().trim_matches('"').to_string()).collect())
}

fn load_input(cfg: &PreprocessConfig) -> Result<(Dataset, CsvSchema), CliError> {
    let schema = match &cfg.schema {
        Some(s) => s.clone(),
        None => {
            let side = sidecar_path(&cfg.input);
            if side.exists() {
                Sidecar::from_json(&read_text(&side)?)?.snapshot_schema()
            } else {
                let cols = header_columns(&cfg.input, ',')?;
                if !cols.contains(&cfg.label_column) {
                    return Err(CliError::data(format!(
                        "{} has no '{}' column",
                        cfg.input.display(),
                        cfg.label_column
                    )));
                }
                let features = cols.into_iter().filter(|c| *c != cfg.label_column).collect();
                CsvSchema::new(features, cfg.label_column.clone())
            }
        }
    };
    load_csv(&cfg.input, &schema).map_err(|e| CliError::data(format!("{}: {e}", cfg.input.display())))
}

/// Writes `train.csv`, `validation.csv` and `test.csv`, each with a
/// sidecar holding the fitted imputer and scaler.
pub fn preprocess(common: &Common) -> Result<(), CliError> {
    let loaded = load::<PreprocessConfig>("preprocess", common)?;
    let cfg = &loaded.config;
    let spec = SplitSpec {
        train: cfg.split.train,
        validation: cfg.split.validation,
        test: cfg.split.test,
        seed: cfg.seed,
        stratified: cfg.split.stratified,
    };
    let (full, schema) = load_input(cfg)?;
    let minority = match &cfg.prevalence {
        Some(p) => Some(
            full.class_names
                .iter()
                .position(|c| *c == p.minority_class)
                .ok_or_else(|| CliError::usage(format!("unknown class '{}'", p.minority_class)))?,
        ),
        None => None,
    };

    let (mut train, val, test) = split(&full, &spec)?;
    if let (Some(m), Some(p)) = (minority, &cfg.prevalence) {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
        train = simulate_prevalence(&train, m, p.controls_per_case, &mut rng)?;
    }

    let (imputer, train, val, test) = if cfg.impute {
        let (imp, tr, mut rest) = impute_median(&train, &[&val, &test])?;
        let te = rest.pop().unwrap();
        let va = rest.pop().unwrap();
        (Some(imp), tr, va, te)
    } else {
        if [&train, &val, &test].iter().any(|d| d.has_missing()) {
            return Err(CliError::data("missing values present and imputation is disabled"));
        }
        (None, train, val, test)
    };
    let (scaler, train, val, test) = if cfg.standardize {
        let (stats, tr, mut rest) = standardize(&train, &[&val, &test])?;
        for name in &stats.dropped {
            warn!("dropped constant feature '{name}'");
        }
        let te = rest.pop().unwrap();
        let va = rest.pop().unwrap();
        (Some(stats), tr, va, te)
    } else {
        (None, train, val, test)
    };

    ensure_dir(&common.out)?;
    for (name, ds) in [("train", &train), ("validation", &val), ("test", &test)] {
        let header = Header::new("preprocess", loaded.hash.clone(), cfg.seed).with("part", name);
        let mut side = Sidecar::for_dataset(ds);
        side.source_schema = Some(schema.clone());
        side.imputer = imputer.clone();
        side.scaler = scaler.clone();
        side.provenance = header.to_map();
        let path = common.out.join(format!("{name}.csv"));
        save_snapshot(ds, &path, &side, Some(&header.lines()))?;
        println!("{name}\t{}\t{:?}", ds.len(), ds.class_counts());
    }
    Ok(())
}
