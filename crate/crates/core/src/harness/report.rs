use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::config::ReportFormat;
use super::monte_carlo::{summarize, PropensitySummary, RecipeSummary, ReplicationRecord, SimulationReport};
use crate::estimators::Recipe;
use crate::Result;

const METRIC_HEADER: [&str; 14] = [
    "estimator",
    "bias",
    "bias_se",
    "mae",
    "mae_se",
    "rmse",
    "rmse_se",
    "median_ae",
    "median_ae_se",
    "coverage",
    "coverage_se",
    "completed",
    "failures",
    "extremes",
];

fn metric_fields(s: &RecipeSummary) -> Vec<String> {
    let m = [s.bias, s.mae, s.rmse, s.median_ae, s.coverage];
    let mut out = vec![s.recipe.id().to_string()];
    for x in m {
        out.push(x.value.to_string());
        out.push(x.se.to_string());
    }
    out.extend([s.completed.to_string(), s.failures.to_string(), s.extremes.to_string()]);
    out
}

/// Metrics table as CSV, one row per recipe.
pub fn metrics_csv(summaries: &[RecipeSummary]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(METRIC_HEADER)?;
    for s in summaries {
        w.write_record(metric_fields(s))?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("csv output is utf-8"))
}

fn fmt2(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.2}")
    } else {
        "-".into()
    }
}

/// Markdown metrics table: estimator, bias (se), MAE (se), RMSE (se),
/// median AE, coverage, failures and extremes.
pub fn metrics_markdown(summaries: &[RecipeSummary]) -> String {
    let mut out = String::from("| Estimator | Bias | (se) | MAE | (se) | RMSE | (se) | Median AE | Coverage | Failures | Extremes |\n");
    out.push_str("|---|---:|---:|---:|---:|---:|---:|---:|---:|---:|---:|\n");
    for s in summaries {
        let _ = writeln!(
            out,
            "| {} | {} | ({}) | {} | ({}) | {} | ({}) | {} | {} | {} | {} |",
            s.recipe.id(),
            fmt2(s.bias.value),
            fmt2(s.bias.se),
            fmt2(s.mae.value),
            fmt2(s.mae.se),
            fmt2(s.rmse.value),
            fmt2(s.rmse.se),
            fmt2(s.median_ae.value),
            fmt2(s.coverage.value),
            s.failures,
            s.extremes
        );
    }
    out
}

pub fn propensity_markdown(p: &PropensitySummary) -> String {
    let mut out = format!("Propensities of `{}` (mean (se) over replications; median in brackets)\n\n", p.source);
    out.push_str("| Statistic | Mean | (se) | Median |\n|---|---:|---:|---:|\n");
    let rows = [
        ("sd pi", p.sd, p.median.sd),
        ("min pi", p.min, p.median.min),
        ("max pi", p.max, p.median.max),
        ("5% tail mean pi", p.cvar_pi, p.median.cvar_pi),
        ("5% tail mean 1/pi", p.cvar_inv_pi, p.median.cvar_inv_pi),
    ];
    for (name, m, med) in rows {
        let _ = writeln!(out, "| {name} | {:.4} | ({:.4}) | {:.4} |", m.value, m.se, med);
    }
    out
}

pub fn write_raw_csv(path: &Path, raw: &[ReplicationRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if raw.is_empty() {
        // serde writes headers only alongside the first record
        w.write_record([
            "replication",
            "seed",
            "dataset_hash",
            "recipe",
            "status",
            "psi_hat",
            "variance",
            "ci_low",
            "ci_high",
            "truth",
            "max_residual",
            "min_pi",
            "max_inv_pi",
            "message",
        ])?;
    }
    for r in raw {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_raw_csv(path: &Path) -> Result<Vec<ReplicationRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

/// Recipes in order of first appearance.
pub fn recipes_of(raw: &[ReplicationRecord]) -> Vec<Recipe> {
    let mut out: Vec<Recipe> = Vec::new();
    for r in raw {
        if !out.contains(&r.recipe) {
            out.push(r.recipe);
        }
    }
    out
}

/// Rebuilds a report (without propensity statistics) from raw records.
pub fn report_from_raw(name: &str, raw: Vec<ReplicationRecord>, extreme_threshold: f64) -> SimulationReport {
    let recipes = recipes_of(&raw);
    let replications = raw.iter().map(|r| r.replication).max().unwrap_or(0);
    SimulationReport {
        name: name.to_string(),
        replications,
        summaries: summarize(&raw, &recipes, extreme_threshold),
        propensity: None,
        raw,
    }
}

/// Writes `<name>_metrics.{csv,md}` per requested format plus
/// `<name>_raw.csv`, creating `dir` if needed. Returns the written paths.
pub fn render_report(report: &SimulationReport, formats: &[ReportFormat], dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for f in formats {
        let (path, body) = match f {
            ReportFormat::Csv => (dir.join(format!("{}_metrics.csv", report.name)), metrics_csv(&report.summaries)?),
            ReportFormat::Markdown => {
                let mut body = format!("# {} ({} replications)\n\n", report.name, report.replications);
                body.push_str(&metrics_markdown(&report.summaries));
                if let Some(p) = &report.propensity {
                    body.push('\n');
                    body.push_str(&propensity_markdown(p));
                }
                (dir.join(format!("{}_metrics.md", report.name)), body)
            }
        };
        fs::write(&path, body)?;
        written.push(path);
    }
    let raw = dir.join(format!("{}_raw.csv", report.name));
    write_raw_csv(&raw, &report.raw)?;
    written.push(raw);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::monte_carlo::RunStatus;

    fn rec(rep: usize, recipe: Recipe, psi: f64, ok: bool) -> ReplicationRecord {
        ReplicationRecord {
            replication: rep,
            seed: rep as u64,
            dataset_hash: format!("h{rep}"),
            recipe,
            status: if ok { RunStatus::Ok } else { RunStatus::Failed },
            psi_hat: if ok { psi } else { f64::NAN },
            variance: 0.25,
            ci_low: psi - 1.0,
            ci_high: psi + 1.0,
            truth: 210.0,
            max_residual: f64::NAN,
            min_pi: 0.01,
            max_inv_pi: 100.0,
            message: if ok { String::new() } else { "solver failed, budget".into() },
        }
    }

    fn sample() -> Vec<ReplicationRecord> {
        let mut raw = Vec::new();
        for r in 1..=6 {
            raw.push(rec(r, Recipe::Direct, 210.0 + (r as f64).sin() * 3.1, true));
            raw.push(rec(r, Recipe::ClearnerLinear, 209.0 + 1.0 / 3.0 * r as f64, r != 4));
        }
        raw
    }

    #[test]
    fn empty_report_is_header_only() {
        assert_eq!(metrics_csv(&[]).unwrap().lines().count(), 1);
        assert_eq!(metrics_markdown(&[]).lines().count(), 2);
    }

    #[test]
    fn markdown_has_a_row_per_recipe() {
        let rep = report_from_raw("t", sample(), 100.0);
        let md = metrics_markdown(&rep.summaries);
        // header and separator, then one row per recipe
        assert_eq!(md.lines().count(), 2 + 2);
    }

    #[test]
    fn raw_csv_round_trip_reproduces_aggregates() {
        let dir = tempfile::tempdir().unwrap();
        let rep = report_from_raw("t", sample(), 100.0);
        let files = render_report(&rep, &[ReportFormat::Csv, ReportFormat::Markdown], dir.path()).unwrap();
        assert_eq!(files.len(), 3);
        let back = read_raw_csv(&dir.path().join("t_raw.csv")).unwrap();
        assert_eq!(back.len(), rep.raw.len());
        let again = report_from_raw("t", back, 100.0);
        for (a, b) in rep.summaries.iter().zip(&again.summaries) {
            assert_eq!(a.recipe, b.recipe);
            assert_eq!(a.failures, b.failures);
            for (x, y) in [(a.bias, b.bias), (a.mae, b.mae), (a.rmse, b.rmse), (a.coverage, b.coverage)] {
                assert!((x.value - y.value).abs() < 1e-9);
                assert!((x.se - y.se).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn empty_raw_csv_reads_back_empty() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        write_raw_csv(&p, &[]).unwrap();
        assert!(read_raw_csv(&p).unwrap().is_empty());
    }

    #[test]
    fn unwritable_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("occupied");
        fs::write(&file, "x").unwrap();
        let rep = report_from_raw("t", sample(), 100.0);
        assert!(render_report(&rep, &[ReportFormat::Csv], &file.join("sub")).is_err());
    }
}
