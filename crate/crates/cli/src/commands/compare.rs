use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use qimb::metrics::{wilcoxon_signed_rank, WilcoxonResult, REPORT_FORMAT};
use serde::Deserialize;

use super::evaluate::score_column;
use super::load;
use crate::artifacts::{ensure_dir, read_header, read_text, tsv_rows, write_file, Header};
use crate::error::CliError;
use crate::Common;

/// Format tag of `compare.tsv`.
pub const COMPARE_FORMAT: &str = "qimb-compare\tv1";

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CompareConfig {
    /// Output directories of two `evaluate` runs.
    a: PathBuf,
    b: PathBuf,
    #[serde(default)]
    seed: u64,
}

struct Evaluation {
    header: BTreeMap<String, String>,
    method: String,
    /// `(metric, class) → value`, in file order.
    rows: Vec<((String, String), Option<f64>)>,
    paired: Option<Vec<(String, f64)>>,
}

fn parse_value(s: &str, path: &Path) -> Result<Option<f64>, CliError> {
    if s == "NA" {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| CliError::data(format!("{}: bad value '{s}'", path.display())))
}

fn read_evaluation(dir: &Path) -> Result<Evaluation, CliError> {
    let path = dir.join("report.tsv");
    let text = read_text(&path)?;
    let header = read_header(&text);
    let rows = tsv_rows(&text);
    if rows.first().map(|r| r.join("\t")) != Some(REPORT_FORMAT.to_string()) {
        return Err(CliError::data(format!("{} is not a metrics report", path.display())));
    }
    let mut method = String::new();
    let mut metrics = Vec::new();
    for r in rows.iter().skip(2) {
        if r.len() != 6 {
            return Err(CliError::data(format!("{}: malformed row", path.display())));
        }
        method = r[0].to_string();
        metrics.push(((r[1].to_string(), r[2].to_string()), parse_value(r[3], &path)?));
    }

    let score_path = dir.join("scores.tsv");
    let paired = if score_path.exists() {
        let text = read_text(&score_path)?;
        let rows = tsv_rows(&text);
        let cols = rows.first().ok_or_else(|| CliError::data("empty scores.tsv"))?;
        let col_of = |class: &str| cols.iter().position(|c| *c == score_column(class));
        let fixed = match header.get("positive_class") {
            Some(p) => Some(col_of(p).ok_or_else(|| CliError::data("scores.tsv lacks the positive class"))?),
            None => None,
        };
        let mut out = Vec::with_capacity(rows.len().saturating_sub(1));
        for r in rows.iter().skip(1) {
            let label = r.get(1).copied().unwrap_or_default();
            let c = match fixed {
                Some(c) => c,
                None => col_of(label).ok_or_else(|| CliError::data(format!("scores.tsv lacks class '{label}'")))?,
            };
            let v = r
                .get(c)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| CliError::data(format!("{}: malformed row", score_path.display())))?;
            out.push((label.to_string(), v));
        }
        Some(out)
    } else {
        None
    };
    Ok(Evaluation {
        header,
        method,
        rows: metrics,
        paired,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |x| format!("{x:.6}"))
}

/// Outcome of the paired test, or why it was not run.
enum Paired {
    Test(WilcoxonResult),
    NoDifference,
    Skipped(String),
}

fn paired_test(a: &Evaluation, b: &Evaluation) -> Result<Paired, CliError> {
    let (Some(pa), Some(pb)) = (&a.paired, &b.paired) else {
        return Ok(Paired::Skipped("paired scores unavailable; metrics-only comparison".into()));
    };
    if pa.len() != pb.len() || pa.iter().zip(pb).any(|(x, y)| x.0 != y.0) {
        return Err(CliError::data("paired scores do not refer to the same samples"));
    }
    let xa: Vec<f64> = pa.iter().map(|p| p.1).collect();
    let xb: Vec<f64> = pb.iter().map(|p| p.1).collect();
    if xa == xb {
        return Ok(Paired::NoDifference);
    }
    Ok(match wilcoxon_signed_rank(&xa, &xb) {
        Ok(r) => Paired::Test(r),
        Err(e) => Paired::Skipped(format!("not computed: {e}")),
    })
}

/// Writes `compare.tsv` and `compare.txt`: metric deltas (b − a) and a
/// Wilcoxon signed-rank test on paired per-sample scores.
pub fn compare(common: &Common) -> Result<(), CliError> {
    let loaded = load::<CompareConfig>("compare", common)?;
    let cfg = &loaded.config;
    let a = read_evaluation(&cfg.a)?;
    let b = read_evaluation(&cfg.b)?;
    let (ha, hb) = (a.header.get("test_sha256"), b.header.get("test_sha256"));
    if ha.is_none() || ha != hb {
        return Err(CliError::data("the two evaluations are not over the same test set"));
    }
    let test_sha = ha.unwrap().clone();
    let b_rows: BTreeMap<_, _> = b.rows.iter().cloned().collect();
    let paired = paired_test(&a, &b)?;

    let header = Header::new("compare", loaded.hash, cfg.seed)
        .with("test_sha256", &test_sha)
        .with("a_method", &a.method)
        .with("b_method", &b.method);
    let mut tsv = header.comment();
    let mut txt = header.comment();
    writeln!(tsv, "{COMPARE_FORMAT}").unwrap();
    writeln!(tsv, "metric\tclass\ta\tb\tdelta").unwrap();
    writeln!(txt, "a: {} ({})\nb: {} ({})\n", a.method, cfg.a.display(), b.method, cfg.b.display()).unwrap();
    writeln!(txt, "{:<28}{:>14}{:>14}{:>14}", "metric", "a", "b", "b - a").unwrap();
    for (key, va) in &a.rows {
        let Some(vb) = b_rows.get(key) else { continue };
        let delta = va.zip(*vb).map(|(x, y)| y - x);
        writeln!(tsv, "{}\t{}\t{}\t{}\t{}", key.0, key.1, fmt_opt(*va), fmt_opt(*vb), fmt_opt(delta)).unwrap();
        let label = if key.1.is_empty() { key.0.clone() } else { format!("{} [{}]", key.0, key.1) };
        writeln!(txt, "{label:<28}{:>14}{:>14}{:>14}", fmt_opt(*va), fmt_opt(*vb), fmt_opt(delta)).unwrap();
    }

    writeln!(tsv, "\ntest\tstatistic\tp_value\tn\texact\tnote").unwrap();
    writeln!(txt).unwrap();
    match &paired {
        Paired::Test(r) => {
            writeln!(tsv, "wilcoxon\t{:.6}\t{:.6}\t{}\t{}\t", r.statistic, r.p_value, r.n, r.exact).unwrap();
            writeln!(
                txt,
                "Wilcoxon signed-rank: W+ = {:.1}, p = {:.4} (n = {}, {})",
                r.statistic,
                r.p_value,
                r.n,
                if r.exact { "exact" } else { "normal approximation" }
            )
            .unwrap();
        }
        Paired::NoDifference => {
            writeln!(tsv, "wilcoxon\tNA\tNA\t0\tNA\tno difference").unwrap();
            writeln!(txt, "Wilcoxon signed-rank: no difference (identical paired scores)").unwrap();
        }
        Paired::Skipped(note) => {
            writeln!(tsv, "wilcoxon\tNA\tNA\tNA\tNA\t{note}").unwrap();
            writeln!(txt, "Wilcoxon signed-rank: {note}").unwrap();
        }
    }

    ensure_dir(&common.out)?;
    write_file(&common.out.join("compare.tsv"), &tsv)?;
    write_file(&common.out.join("compare.txt"), &txt)?;
    print!("{}", txt.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect::<String>());
    Ok(())
}
