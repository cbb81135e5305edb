//! Layered TOML configuration: a file, then `--set key=value` overrides on
//! dotted paths, then `--seed`. The merged table is hashed for provenance.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::error::CliError;

pub fn load_merged(config: Option<&Path>, sets: &[String], seed: Option<u64>) -> Result<Table, CliError> {
    let mut table = match config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", p.display())))?;
            text.parse::<Table>()
                .map_err(|e| CliError::usage(format!("config {}: {e}", p.display())))?
        }
        None => Table::new(),
    };
    for s in sets {
        let (key, raw) = s
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("--set expects key=value, got '{s}'")))?;
        set_path(&mut table, key.trim(), parse_value(raw.trim()))?;
    }
    if let Some(seed) = seed {
        let v = i64::try_from(seed).map_err(|_| CliError::usage("seed must fit in a signed 64-bit integer"))?;
        table.insert("seed".into(), Value::Integer(v));
    }
    Ok(table)
}

/// TOML literal when it parses as one, otherwise a bare string.
fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn set_path(table: &mut Table, key: &str, value: Value) -> Result<(), CliError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::usage(format!("malformed key '{key}'")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::usage(format!("'{p}' in '{key}' is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Recursively overlays `top` onto `base`.
pub fn deep_merge(base: &mut Table, top: &Table) {
    for (k, v) in top {
        match (base.get_mut(k), v) {
            (Some(Value::Table(b)), Value::Table(t)) => deep_merge(b, t),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

pub fn to_table<T: Serialize>(value: &T) -> Result<Table, CliError> {
    match Value::try_from(value) {
        Ok(Value::Table(t)) => Ok(t),
        Ok(_) => Err(CliError::usage("expected a table")),
        Err(e) => Err(CliError::usage(e.to_string())),
    }
}

pub fn from_table<T: DeserializeOwned>(table: Table, what: &str) -> Result<T, CliError> {
    Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::usage(format!("{what}: {}", e.message())))
}

/// Preset defaults overlaid with the user's section.
pub fn with_preset<T: Serialize + DeserializeOwned>(preset: &T, user: Option<&Table>, what: &str) -> Result<T, CliError> {
    let mut base = to_table(preset)?;
    if let Some(u) = user {
        deep_merge(&mut base, u);
    }
    from_table(base, what)
}

pub fn render(table: &Table) -> String {
    toml::to_string(table).unwrap_or_default()
}

/// SHA-256 over the command name and the canonical rendering of its
/// merged configuration.
pub fn config_hash(command: &str, table: &Table) -> String {
    let mut h = Sha256::new();
    h.update(command.as_bytes());
    h.update(b"\n");
    h.update(render(table).as_bytes());
    hex::encode(h.finalize())
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    Ok(sha256_bytes(&bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_and_hash() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "method = \"mlp\"\n[qlearning]\ngamma = 0.1\n").unwrap();
        let sets = vec!["qlearning.gamma=0.5".to_string(), "qlearning.hidden=[4, 4]".into(), "train=data/x.csv".into()];
        let t = load_merged(Some(&p), &sets, Some(7)).unwrap();
        assert_eq!(t["qlearning"]["gamma"].as_float(), Some(0.5));
        assert_eq!(t["qlearning"]["hidden"].as_array().unwrap().len(), 2);
        assert_eq!(t["train"].as_str(), Some("data/x.csv"));
        assert_eq!(t["seed"].as_integer(), Some(7));
        let h1 = config_hash("train", &t);
        assert_eq!(h1, config_hash("train", &t.clone()));
        assert_ne!(h1, config_hash("evaluate", &t));
        assert!(load_merged(None, &["novalue".into()], None).is_err());
        assert!(load_merged(None, &["a..b=1".into()], None).is_err());
    }

    #[test]
    fn presets_merge() {
        let user: Table = "gamma = 0.3\n[early_stop]\nenabled = false\n".parse().unwrap();
        let cfg: qimb::agent::TrainingConfig = with_preset(&qimb::agent::TrainingConfig::binary(), Some(&user), "qlearning").unwrap();
        assert_eq!(cfg.gamma, 0.3);
        assert!(!cfg.early_stop.enabled);
        assert_eq!(cfg.early_stop.sensitivity, 0.85);
        assert_eq!(cfg.hidden, vec![100]);
        let bad: Table = "gamma_typo = 0.3\n".parse().unwrap();
        let r: Result<qimb::agent::TrainingConfig, _> = with_preset(&qimb::agent::TrainingConfig::binary(), Some(&bad), "qlearning");
        assert!(r.is_err());
    }
}
