//! Shared artifact plumbing: provenance headers, model files, dataset
//! snapshots and the small key/value files passed between commands.

use std::collections::BTreeMap;
use std::path::Path;

use qimb::baselines::Mlp;
use qimb::data::{load_snapshot, Dataset, Sidecar};
use qimb::duelnet::DuelingParams;
use qimb::model_io::{ModelKind, ModelRecord};
use serde::{Deserialize, Serialize};

use crate::config::sha256_bytes;
use crate::error::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Provenance lines written at the top of every output file.
#[derive(Debug, Clone)]
pub struct Header {
    pub command: &'static str,
    pub config_sha256: String,
    pub seed: u64,
    pub extra: Vec<(String, String)>,
}

impl Header {
    pub fn new(command: &'static str, config_sha256: String, seed: u64) -> Self {
        Self {
            command,
            config_sha256,
            seed,
            extra: Vec::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.extra.push((key.to_string(), value.to_string()));
        self
    }

    /// Plain lines, no comment marker.
    pub fn lines(&self) -> String {
        let mut s = format!(
            "qimb {VERSION} {}\nconfig_sha256={}\nseed={}\n",
            self.command, self.config_sha256, self.seed
        );
        for (k, v) in &self.extra {
            s.push_str(&format!("{k}={v}\n"));
        }
        s
    }

    /// Lines prefixed with `# `.
    pub fn comment(&self) -> String {
        self.lines().lines().map(|l| format!("# {l}\n")).collect()
    }

    pub fn to_map(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("version".into(), VERSION.into());
        m.insert("command".into(), self.command.into());
        m.insert("config_sha256".into(), self.config_sha256.clone());
        m.insert("seed".into(), self.seed.to_string());
        for (k, v) in &self.extra {
            m.insert(k.clone(), v.clone());
        }
        m
    }
}

/// Key/value pairs from `# key=value` header lines.
pub fn read_header(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .map_while(|l| l.strip_prefix("# "))
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

/// Non-comment lines of a tab-separated file, split into fields.
pub fn tsv_rows(text: &str) -> Vec<Vec<&str>> {
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.is_empty())
        .map(|l| l.split('\t').collect())
        .collect()
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::data(format!("cannot create {}: {e}", dir.display())))
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))
}

/// Loads a snapshot and its sidecar; returns the file hash too.
pub fn load_dataset(path: &Path) -> Result<(Dataset, Sidecar, String), CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    let (ds, side) = load_snapshot(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    if ds.has_missing() {
        return Err(CliError::data(format!(
            "{} has missing values; run preprocess with imputation first",
            path.display()
        )));
    }
    Ok((ds, side, sha256_bytes(&bytes)))
}

/// Metadata stored inside every model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelProvenance {
    pub version: String,
    pub method: String,
    pub config_sha256: String,
    pub seed: u64,
    pub feature_names: Vec<String>,
    pub class_names: Vec<String>,
    /// Minority class of a binary task.
    pub positive_class: Option<usize>,
    pub train_sha256: String,
}

pub enum Model {
    Q(DuelingParams),
    Mlp(Mlp),
}

impl Model {
    /// One score per class, summing to 1.
    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>, CliError> {
        Ok(match self {
            Model::Q(p) => p.predict_scores(x)?,
            Model::Mlp(m) => m.predict_scores(x)?,
        })
    }

    pub fn to_bytes(&self, provenance: &ModelProvenance) -> Result<Vec<u8>, CliError> {
        let json = serde_json::to_string(provenance).map_err(|e| CliError::data(e.to_string()))?;
        Ok(match self {
            Model::Q(p) => p.to_bytes(&json),
            Model::Mlp(m) => m.to_bytes(&json),
        })
    }
}

pub struct LoadedModel {
    pub model: Model,
    pub provenance: ModelProvenance,
    pub sha256: String,
}

pub fn load_model(path: &Path) -> Result<LoadedModel, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    let record = ModelRecord::decode(&bytes).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let model = match record.kind {
        ModelKind::QNetwork => Model::Q(DuelingParams::from_record(&record)?),
        ModelKind::Supervised => Model::Mlp(Mlp::from_record(&record)?),
    };
    let provenance: ModelProvenance = serde_json::from_str(&record.provenance)
        .map_err(|e| CliError::data(format!("{}: bad provenance: {e}", path.display())))?;
    Ok(LoadedModel {
        model,
        provenance,
        sha256: sha256_bytes(&bytes),
    })
}

/// Rejects data whose columns or classes differ from the model's.
pub fn check_schema(ds: &Dataset, prov: &ModelProvenance, what: &str) -> Result<(), CliError> {
    if ds.feature_names != prov.feature_names {
        return Err(CliError::data(format!(
            "{what} features {:?} do not match the model's {:?}",
            ds.feature_names, prov.feature_names
        )));
    }
    if ds.class_names != prov.class_names {
        return Err(CliError::data(format!(
            "{what} classes {:?} do not match the model's {:?}",
            ds.class_names, prov.class_names
        )));
    }
    Ok(())
}

/// Shortest round-trip float rendering.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_round_trip() {
        let h = Header::new("train", "ab".into(), 7).with("positive_class", "1");
        let text = h.comment() + "payload\n# not=header\n";
        let m = read_header(&text);
        assert_eq!(m["config_sha256"], "ab");
        assert_eq!(m["seed"], "7");
        assert_eq!(m["positive_class"], "1");
        assert!(!m.contains_key("not"));
        assert!(h.comment().starts_with(&format!("# qimb {VERSION} train\n")));
    }
}
