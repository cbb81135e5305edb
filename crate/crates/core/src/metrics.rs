//! Evaluation statistics: confusion-matrix scores, AUROC, one-vs-all
//! aggregation, sensitivity-targeted thresholds, the Wilcoxon signed-rank
//! test and percentile bootstrap intervals.
//!
//! Scores that are undefined on the given data (for example sensitivity with
//! no positives present) are `None`, never a silent zero.

use std::fmt::Write as _;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn confusion(predicted: &[usize], truth: &[usize], positive: usize) -> Result<ConfusionCounts> {
    if predicted.len() != truth.len() {
        return Err(shape_err("confusion", truth.len(), predicted.len()));
    }
    if truth.is_empty() {
        return Err(Error::InvalidInput("confusion needs at least one sample".into()));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in predicted.iter().zip(truth) {
        match (p == positive, t == positive) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn sensitivity(c: &ConfusionCounts) -> Option<f64> {
    ratio(c.tp, c.tp + c.fn_)
}

pub fn specificity(c: &ConfusionCounts) -> Option<f64> {
    ratio(c.tn, c.tn + c.fp)
}

pub fn precision(c: &ConfusionCounts) -> Option<f64> {
    ratio(c.tp, c.tp + c.fp)
}

/// `√(sensitivity · precision)`.
pub fn f_measure(c: &ConfusionCounts) -> Option<f64> {
    Some((sensitivity(c)? * precision(c)?).sqrt())
}

/// `√(sensitivity · specificity)`.
pub fn g_mean(c: &ConfusionCounts) -> Option<f64> {
    Some((sensitivity(c)? * specificity(c)?).sqrt())
}

/// Area under the ROC curve via midrank sums (the Mann-Whitney statistic).
pub fn auroc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(shape_err("auroc", positive.len(), scores.len()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("auroc scores".into()));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidInput("auroc needs both classes present".into()));
    }
    let ranks = midranks(scores);
    let rank_sum: f64 = ranks.iter().zip(positive).filter(|(_, &p)| p).map(|(r, _)| r).sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// 1-based ranks with ties sharing the average of their positions.
fn midranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub support: usize,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub g_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OneVsAll {
    pub per_class: Vec<ClassMetrics>,
    /// Classes absent from the truth labels, left out of the summaries.
    pub excluded: Vec<usize>,
    pub mean_sensitivity: f64,
    pub sd_sensitivity: f64,
    pub mean_g: f64,
    pub sd_g: f64,
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Binarizes each class against the rest. Means and population standard
/// deviations are taken over the classes present in `truth`.
pub fn one_vs_all(predicted: &[usize], truth: &[usize], k: usize) -> Result<OneVsAll> {
    if let Some(&bad) = predicted.iter().chain(truth).find(|&&l| l >= k) {
        return Err(Error::InvalidInput(format!("label {bad} outside 0..{k}")));
    }
    let mut per_class = Vec::with_capacity(k);
    let mut excluded = Vec::new();
    for class in 0..k {
        let c = confusion(predicted, truth, class)?;
        let m = ClassMetrics {
            support: c.tp + c.fn_,
            sensitivity: sensitivity(&c),
            specificity: specificity(&c),
            g_mean: g_mean(&c),
        };
        if m.sensitivity.is_none() {
            warn!("class {class} absent from the evaluation labels; excluded from one-vs-all summaries");
            excluded.push(class);
        }
        per_class.push(m);
    }
    let sens: Vec<f64> = per_class.iter().filter_map(|m| m.sensitivity).collect();
    let gs: Vec<f64> = per_class.iter().filter_map(|m| m.g_mean).collect();
    if sens.is_empty() {
        return Err(Error::InvalidInput("no class is present in the labels".into()));
    }
    let (mean_sensitivity, sd_sensitivity) = mean_sd(&sens);
    let (mean_g, sd_g) = if gs.is_empty() { (f64::NAN, f64::NAN) } else { mean_sd(&gs) };
    Ok(OneVsAll {
        per_class,
        excluded,
        mean_sensitivity,
        sd_sensitivity,
        mean_g,
        sd_g,
    })
}

/// Largest threshold whose sensitivity on `(scores, positive)` reaches
/// `target`, with positives predicted when `score >= threshold`. Target 0
/// yields `+∞` (predict no positives).
pub fn threshold_tune(scores: &[f64], positive: &[bool], target: f64) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(shape_err("threshold_tune", positive.len(), scores.len()));
    }
    if !(0.0..=1.0).contains(&target) {
        return Err(Error::InvalidInput(format!("target sensitivity {target} outside [0, 1]")));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("threshold_tune scores".into()));
    }
    let mut pos: Vec<f64> = scores.iter().zip(positive).filter(|(_, &p)| p).map(|(s, _)| *s).collect();
    let n_pos = pos.len();
    if n_pos == 0 || n_pos == scores.len() {
        return Err(Error::InvalidInput("threshold tuning needs both classes present".into()));
    }
    // Fewest positives m whose captured fraction m / P meets the target,
    // computed the same way sensitivity is.
    let m = (0..=n_pos).find(|&m| m as f64 / n_pos as f64 >= target).unwrap_or(n_pos);
    if m == 0 {
        return Ok(f64::INFINITY);
    }
    pos.sort_by(|a, b| b.total_cmp(a));
    Ok(pos[m - 1])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WilcoxonResult {
    /// Sum of ranks of the positive differences `a − b`.
    pub statistic: f64,
    pub p_value: f64,
    /// Number of nonzero differences.
    pub n: usize,
    pub exact: bool,
}

/// Largest sample size tested by exact enumeration.
pub const WILCOXON_EXACT_MAX: usize = 25;

/// Two-sided Wilcoxon signed-rank test on paired samples. Zero differences
/// are dropped and tied magnitudes get midranks. Up to
/// [`WILCOXON_EXACT_MAX`] pairs the null distribution is enumerated exactly;
/// beyond that a tie-corrected normal approximation with continuity
/// correction is used.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(shape_err("wilcoxon_signed_rank", a.len(), b.len()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::NonFinite("wilcoxon differences".into()));
    }
    let n = diffs.len();
    if n == 0 {
        return Err(Error::InvalidInput("all paired differences are zero".into()));
    }
    if n < 6 {
        return Err(Error::InvalidInput(format!(
            "need at least 6 nonzero paired differences, got {n}"
        )));
    }
    let ranks = midranks(&diffs.iter().map(|d| d.abs()).collect::<Vec<_>>());
    let w_plus: f64 = ranks.iter().zip(&diffs).filter(|(_, &d)| d > 0.0).map(|(r, _)| r).sum();
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;

    if n <= WILCOXON_EXACT_MAX {
        // Doubled midranks are integers, so the null distribution of 2W+
        // lives on a small integer lattice.
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let total: usize = doubled.iter().sum();
        let mut dist = vec![0.0f64; total + 1];
        dist[0] = 1.0;
        for &r in &doubled {
            for s in (r..=total).rev() {
                dist[s] += dist[s - r];
            }
        }
        let observed = (2.0 * w_plus).round() as i64;
        let centre2 = total as i64; // 2 * (2 * mean)
        let dev = (2 * observed - centre2).abs();
        let extreme: f64 = (0..=total)
            .filter(|&s| (2 * s as i64 - centre2).abs() >= dev)
            .map(|s| dist[s])
            .sum();
        let p = extreme / 2f64.powi(n as i32);
        return Ok(WilcoxonResult {
            statistic: w_plus,
            p_value: p.min(1.0),
            n,
            exact: true,
        });
    }

    let mut tie_term = 0.0;
    let mut sorted: Vec<f64> = ranks.clone();
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let normal = Normal::standard();
    let p = (2.0 * (1.0 - normal.cdf(z))).min(1.0);
    Ok(WilcoxonResult {
        statistic: w_plus,
        p_value: p,
        n,
        exact: false,
    })
}

/// Redraws allowed per bootstrap replicate before giving up.
pub const BOOTSTRAP_MAX_RETRIES: usize = 1000;

/// Percentile bootstrap 95% interval. `metric` receives the resampled row
/// indices and returns `None` for degenerate resamples, which are redrawn.
pub fn bootstrap_ci<F>(n: usize, metric: F, draws: usize, seed: u64) -> Result<(f64, f64)>
where
    F: Fn(&[usize]) -> Option<f64>,
{
    if draws < 100 {
        return Err(Error::InvalidInput(format!("bootstrap needs at least 100 draws, got {draws}")));
    }
    if n == 0 {
        return Err(Error::InvalidInput("bootstrap over an empty evaluation set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = vec![0usize; n];
    let mut values = Vec::with_capacity(draws);
    for _ in 0..draws {
        let mut value = None;
        for _ in 0..BOOTSTRAP_MAX_RETRIES {
            for slot in idx.iter_mut() {
                *slot = rng.random_range(0..n);
            }
            value = metric(&idx);
            if value.is_some() {
                break;
            }
        }
        values.push(value.ok_or_else(|| {
            Error::InvalidInput("bootstrap resamples are persistently degenerate".into())
        })?);
    }
    values.sort_by(f64::total_cmp);
    Ok((quantile(&values, 0.025), quantile(&values, 0.975)))
}

/// Linear-interpolation quantile of sorted values.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// One line of a metrics report.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub metric: String,
    /// Class the value refers to; `None` for whole-set values.
    pub class: Option<String>,
    pub value: Option<f64>,
    pub ci: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub method: String,
    pub samples: usize,
    pub class_names: Vec<String>,
    /// Positive class for a binary report.
    pub positive_class: Option<usize>,
    pub threshold: Option<f64>,
    pub confusion: Option<ConfusionCounts>,
    pub rows: Vec<MetricRow>,
}

/// Bootstrap settings for report intervals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CiSpec {
    pub draws: usize,
    pub seed: u64,
}

/// Version tag written at the top of the delimited report.
pub const REPORT_FORMAT: &str = "qimb-metrics\tv1";

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

impl MetricsReport {
    pub fn get(&self, metric: &str, class: Option<&str>) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.metric == metric && r.class.as_deref() == class)
    }

    pub fn value(&self, metric: &str) -> Option<f64> {
        self.get(metric, None).and_then(|r| r.value)
    }

    /// Delimited table: a version line, a column header, then one row per
    /// metric. Missing values are `NA`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{REPORT_FORMAT}").unwrap();
        writeln!(out, "method\tmetric\tclass\tvalue\tci_low\tci_high").unwrap();
        let mut line = |metric: &str, class: &str, value: Option<f64>, ci: Option<(f64, f64)>| {
            writeln!(
                out,
                "{}\t{metric}\t{class}\t{}\t{}\t{}",
                self.method,
                fmt_opt(value),
                fmt_opt(ci.map(|c| c.0)),
                fmt_opt(ci.map(|c| c.1)),
            )
            .unwrap();
        };
        line("samples", "", Some(self.samples as f64), None);
        if let Some(t) = self.threshold {
            line("threshold", "", Some(t), None);
        }
        if let Some(c) = &self.confusion {
            for (name, v) in [("tp", c.tp), ("fp", c.fp), ("tn", c.tn), ("fn", c.fn_)] {
                line(name, "", Some(v as f64), None);
            }
        }
        for r in &self.rows {
            line(&r.metric, r.class.as_deref().unwrap_or(""), r.value, r.ci);
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "method: {}", self.method).unwrap();
        writeln!(out, "samples: {}", self.samples).unwrap();
        writeln!(out, "classes: {}", self.class_names.join(", ")).unwrap();
        if let Some(p) = self.positive_class {
            writeln!(out, "positive class: {}", self.class_names[p]).unwrap();
        }
        if let Some(t) = self.threshold {
            writeln!(out, "decision threshold: {t:.6}").unwrap();
        }
        if let Some(c) = &self.confusion {
            writeln!(out, "confusion: tp={} fp={} tn={} fn={}", c.tp, c.fp, c.tn, c.fn_).unwrap();
        }
        let width = self.rows.iter().map(|r| r.metric.len() + r.class.as_ref().map_or(0, |c| c.len() + 3)).max().unwrap_or(0);
        for r in &self.rows {
            let label = match &r.class {
                Some(c) => format!("{} [{c}]", r.metric),
                None => r.metric.clone(),
            };
            let ci = r.ci.map_or(String::new(), |(lo, hi)| format!("  (95% CI {lo:.3}-{hi:.3})"));
            let value = r.value.map_or("undefined".to_string(), |v| format!("{v:.3}"));
            writeln!(out, "  {label:<width$}  {value}{ci}").unwrap();
        }
        out
    }
}

/// Binary report. `positive_scores` are the scores of `positive`;
/// `predicted` the hard labels already decided by the caller.
pub fn binary_report(
    method: &str,
    predicted: &[usize],
    positive_scores: &[f64],
    truth: &[usize],
    class_names: &[String],
    positive: usize,
    threshold: Option<f64>,
    ci: Option<CiSpec>,
) -> Result<MetricsReport> {
    if positive_scores.len() != truth.len() {
        return Err(shape_err("binary_report scores", truth.len(), positive_scores.len()));
    }
    let c = confusion(predicted, truth, positive)?;
    let is_pos: Vec<bool> = truth.iter().map(|&t| t == positive).collect();
    let auc = auroc(positive_scores, &is_pos).ok();
    type Scorer = fn(&ConfusionCounts) -> Option<f64>;
    let scorers: [(&str, Scorer); 5] = [
        ("sensitivity", sensitivity),
        ("specificity", specificity),
        ("precision", precision),
        ("f_measure", f_measure),
        ("g_mean", g_mean),
    ];
    let mut rows = Vec::new();
    for (i, (name, f)) in scorers.iter().enumerate() {
        let ci = match ci {
            Some(spec) => bootstrap_ci(
                truth.len(),
                |idx| {
                    let p: Vec<usize> = idx.iter().map(|&i| predicted[i]).collect();
                    let t: Vec<usize> = idx.iter().map(|&i| truth[i]).collect();
                    f(&confusion(&p, &t, positive).ok()?)
                },
                spec.draws,
                spec.seed.wrapping_add(i as u64),
            )
            .ok(),
            None => None,
        };
        rows.push(MetricRow {
            metric: name.to_string(),
            class: None,
            value: f(&c),
            ci,
        });
    }
    let auc_ci = match (ci, auc) {
        (Some(spec), Some(_)) => bootstrap_ci(
            truth.len(),
            |idx| {
                let s: Vec<f64> = idx.iter().map(|&i| positive_scores[i]).collect();
                let p: Vec<bool> = idx.iter().map(|&i| is_pos[i]).collect();
                auroc(&s, &p).ok()
            },
            spec.draws,
            spec.seed.wrapping_add(scorers.len() as u64),
        )
        .ok(),
        _ => None,
    };
    rows.push(MetricRow {
        metric: "auroc".into(),
        class: None,
        value: auc,
        ci: auc_ci,
    });
    Ok(MetricsReport {
        method: method.to_string(),
        samples: truth.len(),
        class_names: class_names.to_vec(),
        positive_class: Some(positive),
        threshold,
        confusion: Some(c),
        rows,
    })
}

/// Multiclass report: per-class one-vs-all sensitivity, specificity, G-mean
/// and AUROC, their means and population SDs, and overall accuracy.
/// `scores[i]` holds one score per class for sample `i`.
pub fn multiclass_report(
    method: &str,
    predicted: &[usize],
    scores: &[Vec<f64>],
    truth: &[usize],
    class_names: &[String],
) -> Result<MetricsReport> {
    let k = class_names.len();
    if scores.len() != truth.len() {
        return Err(shape_err("multiclass_report scores", truth.len(), scores.len()));
    }
    if let Some(s) = scores.iter().find(|s| s.len() != k) {
        return Err(shape_err("multiclass_report score width", k, s.len()));
    }
    let ova = one_vs_all(predicted, truth, k)?;
    let mut rows = Vec::new();
    let mut aucs = Vec::new();
    for (class, m) in ova.per_class.iter().enumerate() {
        let name = Some(class_names[class].clone());
        let col: Vec<f64> = scores.iter().map(|s| s[class]).collect();
        let is_pos: Vec<bool> = truth.iter().map(|&t| t == class).collect();
        let auc = auroc(&col, &is_pos).ok();
        aucs.extend(auc);
        for (metric, value) in [
            ("support", Some(m.support as f64)),
            ("sensitivity", m.sensitivity),
            ("specificity", m.specificity),
            ("g_mean", m.g_mean),
            ("auroc", auc),
        ] {
            rows.push(MetricRow {
                metric: metric.into(),
                class: name.clone(),
                value,
                ci: None,
            });
        }
    }
    let correct = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    let (auc_mean, auc_sd) = if aucs.is_empty() { (None, None) } else {
        let (m, s) = mean_sd(&aucs);
        (Some(m), Some(s))
    };
    for (metric, value) in [
        ("accuracy", Some(correct as f64 / truth.len() as f64)),
        ("mean_sensitivity", Some(ova.mean_sensitivity)),
        ("sd_sensitivity", Some(ova.sd_sensitivity)),
        ("mean_g_mean", Some(ova.mean_g).filter(|v| !v.is_nan())),
        ("sd_g_mean", Some(ova.sd_g).filter(|v| !v.is_nan())),
        ("mean_auroc", auc_mean),
        ("sd_auroc", auc_sd),
    ] {
        rows.push(MetricRow {
            metric: metric.into(),
            class: None,
            value,
            ci: None,
        });
    }
    Ok(MetricsReport {
        method: method.to_string(),
        samples: truth.len(),
        class_names: class_names.to_vec(),
        positive_class: None,
        threshold: None,
        confusion: None,
        rows,
    })
}
