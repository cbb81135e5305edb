use qimb::data::{generate_synthetic, save_snapshot, Covariance, Sidecar, SyntheticSpec};
use serde::Deserialize;

use super::load;
use crate::artifacts::{ensure_dir, Header};
use crate::error::CliError;
use crate::Common;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenerateConfig {
    #[serde(default)]
    seed: u64,
    synthetic: SyntheticSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SyntheticSection {
    n: usize,
    prevalences: Vec<f64>,
    /// Feature count for the simplex layout; defaults to the class count.
    dim: Option<usize>,
    /// Distance between class means in standard deviations.
    separation: Option<f64>,
    /// Explicit class means; replaces the simplex layout.
    means: Option<Vec<Vec<f64>>>,
    covariances: Option<Vec<Covariance>>,
    class_names: Option<Vec<String>>,
}

impl SyntheticSection {
    fn to_spec(&self, seed: u64) -> Result<SyntheticSpec, CliError> {
        if self.n == 0 {
            return Err(CliError::usage("synthetic.n must be positive"));
        }
        let k = self.prevalences.len();
        let mut spec = match &self.means {
            Some(means) => {
                if self.dim.is_some() || self.separation.is_some() {
                    return Err(CliError::usage("synthetic.means excludes dim and separation"));
                }
                let dim = means.first().map_or(0, Vec::len);
                SyntheticSpec {
                    prevalences: self.prevalences.clone(),
                    means: means.clone(),
                    covariances: vec![Covariance::Diagonal(vec![1.0; dim]); means.len()],
                    n: self.n,
                    seed,
                }
            }
            None => SyntheticSpec::simplex(
                &self.prevalences,
                self.dim.unwrap_or(k),
                self.separation.unwrap_or(2.0),
                self.n,
                seed,
            )
            .map_err(|e| CliError::usage(e.to_string()))?,
        };
        if let Some(c) = &self.covariances {
            spec.covariances = c.clone();
        }
        if let Some(names) = &self.class_names {
            if names.len() != k {
                return Err(CliError::usage(format!("synthetic.class_names needs {k} entries")));
            }
        }
        Ok(spec)
    }
}

/// Writes `data.csv` and its sidecar; prints class counts and prevalences.
pub fn generate(common: &Common) -> Result<(), CliError> {
    let loaded = load::<GenerateConfig>("generate", common)?;
    let cfg = &loaded.config;
    let spec = cfg.synthetic.to_spec(cfg.seed)?;
    let mut ds = generate_synthetic(&spec).map_err(|e| CliError::usage(e.to_string()))?;
    if let Some(names) = &cfg.synthetic.class_names {
        ds.class_names = names.clone();
    }

    let header = Header::new("generate", loaded.hash, cfg.seed);
    let mut side = Sidecar::for_dataset(&ds);
    side.provenance = header.to_map();
    ensure_dir(&common.out)?;
    let path = common.out.join("data.csv");
    save_snapshot(&ds, &path, &side, Some(&header.lines()))?;

    println!("wrote {} ({} rows, {} features)", path.display(), ds.len(), ds.dim());
    for (name, count) in ds.class_names.iter().zip(ds.class_counts()) {
        println!("  {name}\t{count}\t{:.4}", count as f64 / ds.len() as f64);
    }
    Ok(())
}
