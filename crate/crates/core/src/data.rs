//! Tabular data: CSV ingestion with one-hot categoricals, train-only median
//! imputation and standardization, prevalence simulation, SMOTE, seeded
//! splits, and synthetic Gaussian class mixtures.
//!
//! Missing values are carried as `NaN` until imputation.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::numkernel::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub feature_names: Vec<String>,
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        features: Matrix,
        labels: Vec<usize>,
        feature_names: Vec<String>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(shape_err("Dataset labels", features.rows(), labels.len()));
        }
        if feature_names.len() != features.cols() {
            return Err(shape_err("Dataset feature names", features.cols(), feature_names.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::Data(format!(
                "label {bad} outside the {} declared classes",
                class_names.len()
            )));
        }
        Ok(Self {
            features,
            labels,
            feature_names,
            class_names,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn has_missing(&self) -> bool {
        self.features.data().iter().any(|v| v.is_nan())
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            feature_names: self.feature_names.clone(),
            class_names: self.class_names.clone(),
        }
    }

    fn with_features(&self, features: Matrix, feature_names: Vec<String>) -> Dataset {
        Dataset {
            features,
            labels: self.labels.clone(),
            feature_names,
            class_names: self.class_names.clone(),
        }
    }

    /// Writes the dataset as delimited text: feature columns then `label`.
    /// Missing values are written as empty cells. Lines of `comment` are
    /// emitted first, each prefixed with `# `.
    pub fn write_csv<W: Write>(&self, out: W, comment: Option<&str>) -> Result<()> {
        let mut out = out;
        if let Some(c) = comment {
            for line in c.lines() {
                writeln!(out, "# {line}")?;
            }
        }
        let mut w = csv::Writer::from_writer(out);
        let mut header = self.feature_names.clone();
        header.push(LABEL_COLUMN.to_string());
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(self.dim() + 1);
        for i in 0..self.len() {
            record.clear();
            record.extend(self.row(i).iter().map(|v| {
                if v.is_nan() {
                    String::new()
                } else {
                    format!("{v}")
                }
            }));
            record.push(self.class_names[self.labels[i]].clone());
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path, comment: Option<&str>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file), comment)
    }
}

/// Name of the label column written by [`Dataset::write_csv`].
pub const LABEL_COLUMN: &str = "label";

/// Column layout of a delimited input file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub feature_columns: Vec<String>,
    pub label_column: String,
    #[serde(default)]
    pub missing_token: String,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    /// Ordered class names. Inferred (numeric-aware sort) when absent.
    #[serde(default)]
    pub classes: Option<Vec<String>>,
    /// Categorical feature columns and their levels; an empty level list is
    /// filled in from the data at load time.
    #[serde(default)]
    pub categorical: BTreeMap<String, Vec<String>>,
}

fn default_delimiter() -> char {
    ','
}

impl CsvSchema {
    pub fn new(feature_columns: Vec<String>, label_column: impl Into<String>) -> Self {
        Self {
            feature_columns,
            label_column: label_column.into(),
            missing_token: String::new(),
            delimiter: ',',
            classes: None,
            categorical: BTreeMap::new(),
        }
    }
}

fn sort_levels(levels: &mut [String]) {
    let numeric: Option<Vec<f64>> = levels.iter().map(|s| s.trim().parse::<f64>().ok()).collect();
    if numeric.is_some() {
        levels.sort_by(|a, b| {
            let x: f64 = a.trim().parse().unwrap();
            let y: f64 = b.trim().parse().unwrap();
            x.total_cmp(&y)
        });
    } else {
        levels.sort();
    }
}

/// Reads delimited text with a header row. Lines starting with `#` are
/// comments. Returns the dataset and the schema with inferred class and
/// categorical levels filled in.
pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<(Dataset, CsvSchema)> {
    if !schema.delimiter.is_ascii() {
        return Err(Error::InvalidConfig("delimiter must be a single ASCII character".into()));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter as u8)
        .comment(Some(b'#'))
        .has_headers(true)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let position = |name: &str| -> Result<usize> {
        header.iter().position(|h| h.trim() == name).ok_or_else(|| {
            Error::Data(format!("column '{name}' declared in the schema is missing from the header"))
        })
    };
    let feature_pos = schema
        .feature_columns
        .iter()
        .map(|c| position(c))
        .collect::<Result<Vec<_>>>()?;
    let label_pos = position(&schema.label_column)?;
    for c in schema.categorical.keys() {
        if !schema.feature_columns.contains(c) {
            return Err(Error::InvalidConfig(format!(
                "categorical column '{c}' is not a feature column"
            )));
        }
    }

    let records = rdr.records().collect::<std::result::Result<Vec<_>, _>>()?;

    let mut resolved = schema.clone();
    for (name, levels) in resolved.categorical.iter_mut() {
        if levels.is_empty() {
            let p = position(name)?;
            let mut found: Vec<String> = records
                .iter()
                .map(|r| r.get(p).unwrap_or("").trim().to_string())
                .filter(|v| *v != schema.missing_token)
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            sort_levels(&mut found);
            *levels = found;
        }
    }
    if resolved.classes.is_none() {
        let mut found: Vec<String> = records
            .iter()
            .map(|r| r.get(label_pos).unwrap_or("").trim().to_string())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        sort_levels(&mut found);
        resolved.classes = Some(found);
    }
    let classes = resolved.classes.clone().unwrap();
    let class_index: HashMap<&str, usize> =
        classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();

    let mut feature_names = Vec::new();
    for c in &schema.feature_columns {
        match resolved.categorical.get(c) {
            Some(levels) => feature_names.extend(levels.iter().map(|l| format!("{c}={l}"))),
            None => feature_names.push(c.clone()),
        }
    }
    let dim = feature_names.len();

    let mut data = Vec::with_capacity(records.len() * dim);
    let mut labels = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        let row = i + 1;
        for (c, &p) in schema.feature_columns.iter().zip(&feature_pos) {
            let cell = rec.get(p).unwrap_or("").trim();
            match resolved.categorical.get(c) {
                Some(levels) => {
                    if cell == schema.missing_token {
                        data.extend(std::iter::repeat_n(f64::NAN, levels.len()));
                    } else {
                        let hit = levels.iter().position(|l| l == cell).ok_or_else(|| Error::Parse {
                            row,
                            column: c.clone(),
                            message: format!("unknown category '{cell}'"),
                        })?;
                        data.extend((0..levels.len()).map(|j| if j == hit { 1.0 } else { 0.0 }));
                    }
                }
                None => {
                    if cell == schema.missing_token {
                        data.push(f64::NAN);
                    } else {
                        let v: f64 = cell.parse().map_err(|_| Error::Parse {
                            row,
                            column: c.clone(),
                            message: format!("cannot parse '{cell}' as a number"),
                        })?;
                        if !v.is_finite() {
                            return Err(Error::Parse {
                                row,
                                column: c.clone(),
                                message: format!("non-finite value '{cell}'"),
                            });
                        }
                        data.push(v);
                    }
                }
            }
        }
        let label = rec.get(label_pos).unwrap_or("").trim();
        let idx = *class_index.get(label).ok_or_else(|| Error::Parse {
            row,
            column: schema.label_column.clone(),
            message: format!("unknown label '{label}'"),
        })?;
        labels.push(idx);
    }
    let features = Matrix::new(labels.len(), dim, data)?;
    Ok((Dataset::new(features, labels, feature_names, classes)?, resolved))
}

pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<(Dataset, CsvSchema)> {
    let file = std::fs::File::open(path)?;
    read_csv(std::io::BufReader::new(file), schema)
}

fn median_of(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Per-feature medians fitted on a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedianImputer {
    pub medians: Vec<f64>,
}

impl MedianImputer {
    pub fn fit(train: &Dataset) -> Result<Self> {
        let medians = (0..train.dim())
            .map(|c| {
                let mut observed: Vec<f64> = (0..train.len())
                    .map(|r| train.features.get(r, c))
                    .filter(|v| !v.is_nan())
                    .collect();
                if observed.is_empty() {
                    return Err(Error::Data(format!(
                        "feature '{}' has no observed values in the training set",
                        train.feature_names[c]
                    )));
                }
                Ok(median_of(&mut observed))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { medians })
    }

    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        if ds.dim() != self.medians.len() {
            return Err(shape_err("MedianImputer::apply", self.medians.len(), ds.dim()));
        }
        let mut features = ds.features.clone();
        for r in 0..features.rows() {
            for (v, m) in features.row_mut(r).iter_mut().zip(&self.medians) {
                if v.is_nan() {
                    *v = *m;
                }
            }
        }
        Ok(ds.with_features(features, ds.feature_names.clone()))
    }
}

/// Fits medians on `train` and fills missing cells in every set with them.
pub fn impute_median(train: &Dataset, others: &[&Dataset]) -> Result<(MedianImputer, Dataset, Vec<Dataset>)> {
    let imputer = MedianImputer::fit(train)?;
    let t = imputer.apply(train)?;
    let o = others.iter().map(|d| imputer.apply(d)).collect::<Result<Vec<_>>>()?;
    Ok((imputer, t, o))
}

/// Training-set means and population standard deviations. Constant
/// features are dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerStats {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// Indices (into the pre-scaling feature list) of retained features.
    pub kept: Vec<usize>,
    /// Names of features dropped for zero variance.
    pub dropped: Vec<String>,
}

impl ScalerStats {
    pub fn fit(train: &Dataset) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Data("cannot fit a scaler on an empty dataset".into()));
        }
        if train.has_missing() {
            return Err(Error::Data("standardize requires imputed data".into()));
        }
        let n = train.len() as f64;
        let mut means = Vec::new();
        let mut stds = Vec::new();
        let mut kept = Vec::new();
        let mut dropped = Vec::new();
        for c in 0..train.dim() {
            let col: Vec<f64> = (0..train.len()).map(|r| train.features.get(r, c)).collect();
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let std = var.sqrt();
            if std > 1e-12 * mean.abs().max(1.0) {
                means.push(mean);
                stds.push(std);
                kept.push(c);
            } else {
                warn!("dropping constant feature '{}'", train.feature_names[c]);
                dropped.push(train.feature_names[c].clone());
            }
        }
        Ok(Self {
            means,
            stds,
            kept,
            dropped,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.kept.len() + self.dropped.len()
    }

    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        if ds.dim() != self.input_dim() {
            return Err(shape_err("ScalerStats::apply", self.input_dim(), ds.dim()));
        }
        let mut features = ds.features.select_cols(&self.kept);
        for r in 0..features.rows() {
            for ((v, m), s) in features.row_mut(r).iter_mut().zip(&self.means).zip(&self.stds) {
                *v = (*v - m) / s;
            }
        }
        let names = self.kept.iter().map(|&c| ds.feature_names[c].clone()).collect();
        Ok(ds.with_features(features, names))
    }
}

pub fn standardize(train: &Dataset, others: &[&Dataset]) -> Result<(ScalerStats, Dataset, Vec<Dataset>)> {
    let stats = ScalerStats::fit(train)?;
    let t = stats.apply(train)?;
    let o = others.iter().map(|d| stats.apply(d)).collect::<Result<Vec<_>>>()?;
    Ok((stats, t, o))
}

/// Keeps every row of `minority_class` and `controls_per_case` times as many
/// uniformly chosen rows from the other classes. Row order is preserved.
pub fn simulate_prevalence<R: Rng + ?Sized>(
    dataset: &Dataset,
    minority_class: usize,
    controls_per_case: usize,
    rng: &mut R,
) -> Result<Dataset> {
    if minority_class >= dataset.n_classes() {
        return Err(Error::InvalidInput(format!("minority class {minority_class} does not exist")));
    }
    let (cases, controls): (Vec<usize>, Vec<usize>) =
        (0..dataset.len()).partition(|&i| dataset.labels[i] == minority_class);
    if cases.is_empty() {
        return Err(Error::Data("no minority rows to build a case-control set from".into()));
    }
    let needed = cases.len() * controls_per_case;
    if needed > controls.len() {
        return Err(Error::Data(format!(
            "need {needed} control rows for 1:{controls_per_case}, only {} available (achievable ratio 1:{})",
            controls.len(),
            controls.len() / cases.len()
        )));
    }
    let chosen = rand::seq::index::sample(rng, controls.len(), needed);
    let mut keep: Vec<usize> = cases;
    keep.extend(chosen.iter().map(|j| controls[j]));
    keep.sort_unstable();
    Ok(dataset.subset(&keep))
}

/// SMOTE oversampling. Every class smaller than
/// `ceil(strategy × majority count)` is topped up to exactly that size with
/// rows `x + u·(x_nn − x)`, where `x` is a random row of the class, `x_nn`
/// one of its `k` nearest same-class neighbours (Euclidean) and
/// `u ~ U[0, 1]`. Synthetic rows are appended after the originals.
pub fn smote<R: Rng + ?Sized>(
    dataset: &Dataset,
    strategy: f64,
    k_neighbors: usize,
    rng: &mut R,
) -> Result<Dataset> {
    if !(strategy > 0.0 && strategy.is_finite()) {
        return Err(Error::InvalidConfig(format!("SMOTE strategy must be positive, got {strategy}")));
    }
    if k_neighbors == 0 {
        return Err(Error::InvalidConfig("SMOTE needs k_neighbors >= 1".into()));
    }
    let counts = dataset.class_counts();
    let majority = majority_class(&counts);
    // Guard against 0.2 * 1000 landing a hair above 200.
    let target = (strategy * counts[majority] as f64 - 1e-9).ceil() as usize;
    let smallest = counts
        .iter()
        .enumerate()
        .filter(|&(c, &n)| c != majority && n > 0)
        .map(|(_, &n)| n)
        .min()
        .ok_or_else(|| Error::Data("SMOTE needs at least one non-majority class".into()))?;
    if target < smallest {
        return Err(Error::InvalidInput(format!(
            "strategy {strategy} targets {target} rows, below the minority count {smallest}"
        )));
    }

    let dim = dataset.dim();
    let mut data = dataset.features.data().to_vec();
    let mut labels = dataset.labels.clone();
    for (class, &count) in counts.iter().enumerate() {
        if class == majority || count == 0 || count >= target {
            continue;
        }
        if count <= k_neighbors {
            return Err(Error::Data(format!(
                "class '{}' has {count} rows; SMOTE with k={k_neighbors} needs more",
                dataset.class_names[class]
            )));
        }
        let members: Vec<usize> = (0..dataset.len()).filter(|&i| dataset.labels[i] == class).collect();
        let neighbours: Vec<Vec<usize>> = members
            .iter()
            .map(|&i| {
                let xi = dataset.row(i);
                let mut d: Vec<(f64, usize)> = members
                    .iter()
                    .filter(|&&j| j != i)
                    .map(|&j| {
                        let dist = xi.iter().zip(dataset.row(j)).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
                        (dist, j)
                    })
                    .collect();
                d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                d.into_iter().take(k_neighbors).map(|(_, j)| j).collect()
            })
            .collect();
        for _ in 0..target - count {
            let m = rng.random_range(0..members.len());
            let nn = neighbours[m][rng.random_range(0..k_neighbors)];
            let u: f64 = rng.random();
            let x = dataset.row(members[m]);
            let y = dataset.row(nn);
            data.extend(x.iter().zip(y).map(|(a, b)| a + u * (b - a)));
            labels.push(class);
        }
    }
    let features = Matrix::new(labels.len(), dim, data)?;
    Dataset::new(features, labels, dataset.feature_names.clone(), dataset.class_names.clone())
}

/// Most frequent class, lowest index on ties.
pub fn majority_class(counts: &[usize]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
    pub seed: u64,
    #[serde(default = "yes")]
    pub stratified: bool,
}

fn yes() -> bool {
    true
}

impl SplitSpec {
    fn validate(&self) -> Result<()> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|r| !(0.0..=1.0).contains(r)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "split ratios must be in [0, 1] and sum to 1, got {parts:?}"
            )));
        }
        if self.train <= 0.0 || self.test < 0.0 {
            return Err(Error::InvalidConfig("the training part must be non-empty".into()));
        }
        Ok(())
    }
}

fn allocate(n: usize, spec: &SplitSpec) -> (usize, usize) {
    let tr = (spec.train * n as f64 + 1e-9).floor() as usize;
    let va = (spec.validation * n as f64 + 1e-9).floor() as usize;
    (tr.min(n), va.min(n - tr.min(n)))
}

/// Seeded train/validation/test partition. Parts keep the original row
/// order. With `stratified`, each class is split separately so per-class
/// proportions stay within one row of the requested ratios.
pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut parts: [Vec<usize>; 3] = Default::default();
    let groups: Vec<Vec<usize>> = if spec.stratified {
        let mut g = vec![Vec::new(); dataset.n_classes()];
        for i in 0..dataset.len() {
            g[dataset.labels[i]].push(i);
        }
        g.retain(|v| !v.is_empty());
        let nonzero_parts = [spec.train, spec.validation, spec.test].iter().filter(|&&r| r > 0.0).count();
        for (c, v) in g.iter().enumerate() {
            if v.len() < nonzero_parts {
                return Err(Error::Data(format!(
                    "class group {c} has {} rows, fewer than the {nonzero_parts} split parts",
                    v.len()
                )));
            }
        }
        g
    } else {
        vec![(0..dataset.len()).collect()]
    };
    for mut group in groups {
        group.shuffle(&mut rng);
        let (tr, va) = allocate(group.len(), spec);
        parts[0].extend_from_slice(&group[..tr]);
        parts[1].extend_from_slice(&group[tr..tr + va]);
        parts[2].extend_from_slice(&group[tr + va..]);
    }
    for (p, ratio) in parts.iter().zip([spec.train, spec.validation, spec.test]) {
        if ratio > 0.0 && p.is_empty() {
            return Err(Error::Data("dataset too small: a requested split part is empty".into()));
        }
    }
    for p in parts.iter_mut() {
        p.sort_unstable();
    }
    Ok((dataset.subset(&parts[0]), dataset.subset(&parts[1]), dataset.subset(&parts[2])))
}

/// Format tag of [`Sidecar`] files.
pub const SIDECAR_FORMAT: &str = "qimb-dataset v1";

/// Schema file written next to a dataset snapshot: everything needed to
/// reread it and to replay its preprocessing on new data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub format: String,
    pub feature_names: Vec<String>,
    pub class_names: Vec<String>,
    pub class_counts: Vec<usize>,
    /// Schema of the raw file the snapshot was derived from.
    #[serde(default)]
    pub source_schema: Option<CsvSchema>,
    #[serde(default)]
    pub imputer: Option<MedianImputer>,
    #[serde(default)]
    pub scaler: Option<ScalerStats>,
    /// Free-form reproduction details (version, config hash, seed).
    #[serde(default)]
    pub provenance: BTreeMap<String, String>,
}

impl Sidecar {
    pub fn for_dataset(ds: &Dataset) -> Self {
        Self {
            format: SIDECAR_FORMAT.to_string(),
            feature_names: ds.feature_names.clone(),
            class_names: ds.class_names.clone(),
            class_counts: ds.class_counts(),
            source_schema: None,
            imputer: None,
            scaler: None,
            provenance: BTreeMap::new(),
        }
    }

    /// Schema that rereads the snapshot this sidecar describes.
    pub fn snapshot_schema(&self) -> CsvSchema {
        let mut s = CsvSchema::new(self.feature_names.clone(), LABEL_COLUMN);
        s.classes = Some(self.class_names.clone());
        s
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Sidecar = serde_json::from_str(text).map_err(|e| Error::Format(format!("sidecar: {e}")))?;
        if s.format != SIDECAR_FORMAT {
            return Err(Error::Format(format!("unsupported sidecar format '{}'", s.format)));
        }
        Ok(s)
    }
}

/// Path of the sidecar belonging to `csv_path`.
pub fn sidecar_path(csv_path: &Path) -> std::path::PathBuf {
    let mut name = csv_path.as_os_str().to_owned();
    name.push(".schema.json");
    name.into()
}

/// Writes `ds` to `path` and its sidecar next to it.
pub fn save_snapshot(ds: &Dataset, path: &Path, sidecar: &Sidecar, comment: Option<&str>) -> Result<()> {
    if sidecar.feature_names != ds.feature_names || sidecar.class_names != ds.class_names {
        return Err(Error::InvalidInput("sidecar does not describe this dataset".into()));
    }
    ds.save_csv(path, comment)?;
    std::fs::write(sidecar_path(path), sidecar.to_json()? + "\n")?;
    Ok(())
}

/// Reads a snapshot written by [`save_snapshot`].
pub fn load_snapshot(path: &Path) -> Result<(Dataset, Sidecar)> {
    let side_path = sidecar_path(path);
    let text = std::fs::read_to_string(&side_path)
        .map_err(|e| Error::Data(format!("cannot read sidecar {}: {e}", side_path.display())))?;
    let sidecar = Sidecar::from_json(&text)?;
    let (ds, _) = load_csv(path, &sidecar.snapshot_schema())?;
    Ok((ds, sidecar))
}

/// Per-class covariance of a Gaussian component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Covariance {
    Diagonal(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub prevalences: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Covariance>,
    pub n: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Unit-variance classes with means `(separation / √2)·e_k`, so every pair
    /// of class means is `separation` standard deviations apart.
    pub fn simplex(prevalences: &[f64], dim: usize, separation: f64, n: usize, seed: u64) -> Result<Self> {
        let k = prevalences.len();
        if dim < k {
            return Err(Error::InvalidConfig(format!(
                "simplex layout needs dimension >= classes ({dim} < {k})"
            )));
        }
        let offset = separation / std::f64::consts::SQRT_2;
        let means = (0..k)
            .map(|c| (0..dim).map(|j| if j == c { offset } else { 0.0 }).collect())
            .collect();
        Ok(Self {
            prevalences: prevalences.to_vec(),
            means,
            covariances: vec![Covariance::Diagonal(vec![1.0; dim]); k],
            n,
            seed,
        })
    }
}

fn cholesky(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        if a[i].len() != n {
            return None;
        }
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = a[i][i] - s;
                if d <= 0.0 || !d.is_finite() {
                    return None;
                }
                l[i][j] = d.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    Some(l)
}

/// Largest accepted deviation of the prevalence sum from 1. Published
/// prevalences are rounded; they are renormalized before sampling.
pub const PREVALENCE_SUM_TOLERANCE: f64 = 0.01;

/// Seeded draws from a Gaussian class mixture. Labels are sampled from the
/// normalized prevalences, features from the matching component.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    let k = spec.prevalences.len();
    if k < 2 {
        return Err(Error::InvalidConfig("need at least two classes".into()));
    }
    if spec.n == 0 {
        return Err(Error::InvalidConfig("sample count must be positive".into()));
    }
    if spec.prevalences.iter().any(|&p| !(p > 0.0)) || (spec.prevalences.iter().sum::<f64>() - 1.0).abs() > PREVALENCE_SUM_TOLERANCE {
        return Err(Error::InvalidConfig(format!(
            "prevalences must be positive and sum to 1, got {:?}",
            spec.prevalences
        )));
    }
    if spec.means.len() != k || spec.covariances.len() != k {
        return Err(Error::InvalidConfig("need one mean and one covariance per class".into()));
    }
    let dim = spec.means[0].len();
    if dim == 0 || spec.means.iter().any(|m| m.len() != dim) {
        return Err(Error::InvalidConfig("class means must share a positive dimension".into()));
    }
    let factors = spec
        .covariances
        .iter()
        .enumerate()
        .map(|(c, cov)| {
            let full = match cov {
                Covariance::Diagonal(d) => {
                    if d.len() != dim {
                        return Err(Error::InvalidConfig(format!("class {c} covariance has wrong size")));
                    }
                    (0..dim)
                        .map(|i| (0..dim).map(|j| if i == j { d[i] } else { 0.0 }).collect())
                        .collect()
                }
                Covariance::Full(m) => {
                    if m.len() != dim {
                        return Err(Error::InvalidConfig(format!("class {c} covariance has wrong size")));
                    }
                    for i in 0..dim {
                        for j in 0..i {
                            if (m[i][j] - m[j][i]).abs() > 1e-12 {
                                return Err(Error::InvalidConfig(format!(
                                    "class {c} covariance is not symmetric"
                                )));
                            }
                        }
                    }
                    m.clone()
                }
            };
            cholesky(&full).ok_or_else(|| {
                Error::InvalidConfig(format!("class {c} covariance is not positive definite"))
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut cumulative = Vec::with_capacity(k);
    let mut acc = 0.0;
    for p in &spec.prevalences {
        acc += p;
        cumulative.push(acc);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut data = Vec::with_capacity(spec.n * dim);
    let mut labels = Vec::with_capacity(spec.n);
    let mut z = vec![0.0; dim];
    for _ in 0..spec.n {
        let u: f64 = rng.random::<f64>() * acc;
        let c = cumulative.iter().position(|&x| u < x).unwrap_or(k - 1);
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        let l = &factors[c];
        for i in 0..dim {
            let s: f64 = (0..=i).map(|j| l[i][j] * z[j]).sum();
            data.push(spec.means[c][i] + s);
        }
        labels.push(c);
    }
    let features = Matrix::new(spec.n, dim, data)?;
    let feature_names = (0..dim).map(|i| format!("x{i}")).collect();
    let class_names = (0..k).map(|c| c.to_string()).collect();
    Dataset::new(features, labels, feature_names, class_names)
}
