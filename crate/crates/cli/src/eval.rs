//! `eval`: prediction file against annotations.

use std::path::Path;

use propnet::geometry::{parse_coordinates, parse_records, record_lines, Point};
use propnet::loss::BatchAttributes;
use propnet::metrics::{ced_text, evaluate, EvalReport, NormSpec};

use crate::{ensure_dir, read_text, write_file, CliError, CliResult};

pub const DEFAULT_THRESHOLD: f64 = 0.1;

/// Prediction rows: leading `2 * n_points` coordinates of each record line.
pub fn read_predictions(path: &Path, n_points: usize) -> CliResult<Vec<Vec<Point>>> {
    let text = read_text(path)?;
    record_lines(&text)
        .map(|(no, line)| parse_coordinates(line, n_points).map_err(|e| CliError::Input(format!("{}:{no}: {e}", path.display()))))
        .collect()
}

pub fn report(preds: &Path, gts: &Path, n_points: usize, norm: &NormSpec, thresholds: &[f64]) -> CliResult<EvalReport> {
    let preds = read_predictions(preds, n_points)?;
    let gts = parse_records(&read_text(gts)?, n_points).map_err(|e| CliError::Input(format!("{}: {e}", gts.display())))?;
    if preds.len() != gts.len() {
        return Err(CliError::Input(format!("record count mismatch: {} predictions vs {} ground-truth records", preds.len(), gts.len())));
    }
    if gts.is_empty() {
        return Err(CliError::Input("no records".into()));
    }
    let subsets = BatchAttributes::from_attributes(gts.iter().map(|g| &g.attributes))?;
    Ok(evaluate(&preds, &gts, norm, thresholds, &subsets)?)
}

/// Prints the report and, when `out_dir` is given, writes `report.tsv` and
/// `ced.txt` there.
pub fn run(preds: &Path, gts: &Path, n_points: usize, norm: &NormSpec, thresholds: &[f64], out_dir: Option<&Path>) -> CliResult<String> {
    let thresholds = if thresholds.is_empty() { vec![DEFAULT_THRESHOLD] } else { thresholds.to_vec() };
    let r = report(preds, gts, n_points, norm, &thresholds)?;
    let tsv = r.to_tsv();
    if let Some(dir) = out_dir {
        ensure_dir(dir)?;
        write_file(&dir.join("report.tsv"), &tsv)?;
        write_file(&dir.join("ced.txt"), ced_text(&r.overall.ced))?;
    }
    Ok(tsv)
}
