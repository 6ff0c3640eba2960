//! Report files: `report.json` holds everything; `summary.csv` has one row
//! per experiment with mean and std per metric; `folds.csv` is the long
//! per-fold table; `subgroups.csv` is written when subgroups were run.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::write_atomic;

use super::{ExperimentReport, MetricSet, SubgroupResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    /// Hash of the configuration that produced the bundle.
    pub fingerprint: String,
    pub experiments: Vec<ExperimentReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub subgroups: Vec<SubgroupResult>,
}

pub const REPORT_JSON: &str = "report.json";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const FOLDS_CSV: &str = "folds.csv";
pub const SUBGROUPS_CSV: &str = "subgroups.csv";

fn csv_bytes(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner()
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))
}

impl ReportBundle {
    pub fn summary_rows(&self) -> Vec<Vec<String>> {
        self.experiments
            .iter()
            .map(|r| {
                let mut row = vec![r.name.clone(), r.n_subjects.to_string(), r.folds.len().to_string()];
                for m in MetricSet::NAMES {
                    let v = r.aggregate.get(m).expect("known metric");
                    row.push(v.mean.to_string());
                    row.push(v.std.to_string());
                }
                row
            })
            .collect()
    }

    pub fn summary_header() -> Vec<String> {
        let mut h = vec!["experiment".to_string(), "n_subjects".into(), "n_folds".into()];
        for m in MetricSet::NAMES {
            h.push(format!("{m}_mean"));
            h.push(format!("{m}_std"));
        }
        h
    }

    /// Human-readable table with `mean ± std` cells.
    pub fn render_table(&self) -> String {
        let mut out = format!("{:<48} {:>15} {:>15} {:>15} {:>15}\n", "experiment", "AUROC", "AUPRC", "PPV@R30", "PPV@R50");
        for r in &self.experiments {
            let cell = |m: &str| {
                let v = r.aggregate.get(m).expect("known metric");
                format!("{:.3} ± {:.3}", v.mean, v.std)
            };
            out.push_str(&format!(
                "{:<48} {:>15} {:>15} {:>15} {:>15}\n",
                r.name,
                cell("auroc"),
                cell("auprc"),
                cell("ppv_at_recall_30"),
                cell("ppv_at_recall_50")
            ));
        }
        if !self.subgroups.is_empty() {
            out.push_str(&format!("\n{:<24} {:>6} {:>6} {:>15}\n", "subgroup", "n", "pos", "AUROC"));
            for s in &self.subgroups {
                let v = s
                    .auroc
                    .map_or_else(|| "undefined".to_string(), |a| format!("{:.3} ± {:.3}", a.mean, a.std));
                out.push_str(&format!("{:<24} {:>6} {:>6} {:>15}\n", s.label, s.n, s.n_positive, v));
            }
        }
        out
    }
}

/// Writes all report files into `dir`.
pub fn write_bundle(dir: &Path, bundle: &ReportBundle) -> Result<()> {
    let mut json = serde_json::to_string_pretty(bundle)?;
    json.push('\n');
    write_atomic(&dir.join(REPORT_JSON), json.as_bytes())?;

    let path = dir.join(SUMMARY_CSV);
    let header = ReportBundle::summary_header();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_atomic(&path, &csv_bytes(&path, &header, bundle.summary_rows())?)?;

    let path = dir.join(FOLDS_CSV);
    let mut rows = Vec::new();
    for r in &bundle.experiments {
        for f in &r.folds {
            let mut row = vec![
                r.name.clone(),
                f.seed.to_string(),
                f.fold.to_string(),
                f.n_valid.to_string(),
                f.n_valid_positive.to_string(),
                f.best_round.to_string(),
            ];
            row.extend(f.metrics.values().iter().map(|v| v.to_string()));
            rows.push(row);
        }
    }
    let mut header = vec!["experiment", "seed", "fold", "n_valid", "n_valid_positive", "best_round"];
    header.extend(MetricSet::NAMES);
    write_atomic(&path, &csv_bytes(&path, &header, rows)?)?;

    if !bundle.subgroups.is_empty() {
        let path = dir.join(SUBGROUPS_CSV);
        let rows = bundle
            .subgroups
            .iter()
            .map(|s| {
                let (m, sd) = s
                    .auroc
                    .map_or((String::from("undefined"), String::new()), |a| (a.mean.to_string(), a.std.to_string()));
                vec![s.label.clone(), s.n.to_string(), s.n_positive.to_string(), m, sd]
            })
            .collect();
        write_atomic(&path, &csv_bytes(&path, &["subgroup", "n", "n_positive", "auroc_mean", "auroc_std"], rows)?)?;
    }
    Ok(())
}

pub fn read_bundle(dir: &Path) -> Result<ReportBundle> {
    let path = dir.join(REPORT_JSON);
    let s = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&s)?)
}
