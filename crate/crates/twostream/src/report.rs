//! Rendering of run reports.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use twostream_core::metrics::{EpochLog, RunReport};

use crate::error::{Error, IoContext, Result};

/// Confusion matrix as CSV: header row holds predicted class names, the
/// first column true class names.
pub fn confusion_csv(report: &RunReport) -> String {
    let names = &report.class_names;
    let mut out = String::from("true\\predicted");
    for n in names {
        out.push(',');
        out.push_str(n);
    }
    out.push('\n');
    for (t, name) in names.iter().enumerate() {
        out.push_str(name);
        for p in 0..names.len() {
            let _ = write!(out, ",{}", report.confusion.get(t, p));
        }
        out.push('\n');
    }
    out
}

pub fn epochs_table(epochs: &[EpochLog]) -> String {
    let mut out = String::from("epoch  loss      train_acc\n");
    for e in epochs {
        let _ = writeln!(out, "{:>5}  {:<8.5}  {:.4}", e.epoch, e.loss, e.accuracy);
    }
    out
}

pub fn summary_text(report: &RunReport) -> String {
    let c = &report.confusion;
    let mut out = format!(
        "test accuracy: {:.4} ({} / {})\n",
        report.test_accuracy,
        c.trace(),
        c.total()
    );
    if !report.epochs.is_empty() {
        out.push_str("\nsequence-model training\n");
        out.push_str(&epochs_table(&report.epochs));
    }
    let width = report.class_names.iter().map(String::len).max().unwrap_or(0).max(5);
    out.push_str("\nconfusion (rows: true, columns: predicted)\n");
    let _ = write!(out, "{:width$}", "", width = width);
    for i in 0..c.classes() {
        let _ = write!(out, " {:>5}", i);
    }
    out.push('\n');
    for (t, name) in report.class_names.iter().enumerate() {
        let _ = write!(out, "{:width$}", name, width = width);
        for p in 0..c.classes() {
            let _ = write!(out, " {:>5}", c.get(t, p));
        }
        out.push('\n');
    }
    out
}

pub fn save_report(path: &Path, report: &RunReport) -> Result<()> {
    let text = toml::to_string(report).map_err(|e| Error::format(path, e.to_string()))?;
    fs::write(path, text).at(path)
}

pub fn load_report(path: &Path) -> Result<RunReport> {
    let text = fs::read_to_string(path).at(path)?;
    let report: RunReport = toml::from_str(&text).map_err(|e| Error::format(path, e.message().to_string()))?;
    if report.class_names.len() != report.confusion.classes() {
        return Err(Error::format(path, "class names and confusion matrix disagree"));
    }
    Ok(report)
}

#[derive(serde::Serialize, serde::Deserialize)]
struct EpochFile {
    epochs: Vec<EpochLog>,
}

pub fn save_epochs(path: &Path, epochs: &[EpochLog]) -> Result<()> {
    let text = toml::to_string(&EpochFile { epochs: epochs.to_vec() }).map_err(|e| Error::format(path, e.to_string()))?;
    fs::write(path, text).at(path)
}

pub fn load_epochs(path: &Path) -> Result<Vec<EpochLog>> {
    let text = fs::read_to_string(path).at(path)?;
    let f: EpochFile = toml::from_str(&text).map_err(|e| Error::format(path, e.message().to_string()))?;
    Ok(f.epochs)
}
