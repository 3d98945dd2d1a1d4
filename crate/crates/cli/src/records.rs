//! Tab-separated run logs. Each file starts with a fixed header line and is
//! only ever appended to.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use profs_core::evalmetrics::EvalReport;
use profs_core::scheduler::{EvalRecord, StepRecord};

pub fn metrics_header(ks: &[usize]) -> String {
    let mut cols = vec!["k".to_string()];
    cols.extend(ks.iter().map(|k| format!("R@{k}")));
    cols.extend(["nmi", "f1", "inertia"].map(String::from));
    cols.join("\t")
}

pub fn metrics_row(k: u64, report: &EvalReport) -> String {
    let mut cols = vec![k.to_string()];
    cols.extend(report.recall_at.values().map(|r| r.to_string()));
    cols.extend([report.nmi, report.f1, report.kmeans_inertia].map(|v| v.to_string()));
    cols.join("\t")
}

pub const STEPS_HEADER: &str = "step\tk\tinner_step\tloss";

pub fn step_row(r: &StepRecord) -> String {
    format!("{}\t{}\t{}\t{}", r.step, r.k, r.inner_step, r.loss)
}

/// Writes a fresh file with `header` followed by `rows`.
pub fn write_table<I: IntoIterator<Item = String>>(path: &Path, header: &str, rows: I) -> Result<()> {
    let mut f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    writeln!(f, "{header}")?;
    for row in rows {
        writeln!(f, "{row}")?;
    }
    Ok(())
}

/// Appends rows, writing the header first if the file is new; refuses to mix
/// headers.
pub fn append_table(path: &Path, header: &str, rows: &[String]) -> Result<()> {
    if path.exists() {
        let mut first = String::new();
        BufReader::new(File::open(path)?).read_line(&mut first)?;
        if first.trim_end_matches(['\n', '\r']) != header {
            bail!(crate::BadInput(format!(
                "{} has header `{}`, expected `{header}`",
                path.display(),
                first.trim_end()
            )));
        }
        let mut f = OpenOptions::new().append(true).open(path)?;
        for row in rows {
            writeln!(f, "{row}")?;
        }
        Ok(())
    } else {
        write_table(path, header, rows.iter().cloned())
    }
}

pub fn write_metrics(path: &Path, ks: &[usize], evals: &[EvalRecord]) -> Result<()> {
    write_table(path, &metrics_header(ks), evals.iter().map(|e| metrics_row(e.k, &e.report)))
}
