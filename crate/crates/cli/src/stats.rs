//! `stats`: per-attribute fractions of an annotation file.

use std::path::Path;

use propnet::geometry::{attribute_fractions, parse_records, Attribute};

use crate::{read_text, CliError, CliResult};

pub fn fractions(annotations: &Path, n_points: usize) -> CliResult<Vec<(Attribute, f64)>> {
    let samples = parse_records(&read_text(annotations)?, n_points).map_err(|e| CliError::Input(format!("{}: {e}", annotations.display())))?;
    if samples.is_empty() {
        return Err(CliError::Input(format!("{}: no records", annotations.display())));
    }
    let f = attribute_fractions(&samples)?;
    Ok(Attribute::ALL.iter().map(|&a| (a, f[a.index()])).collect())
}

pub fn run(annotations: &Path, n_points: usize) -> CliResult<String> {
    let mut out = String::from("attribute\tfraction\n");
    for (a, f) in fractions(annotations, n_points)? {
        out.push_str(&format!("{}\t{f}\n", a.name()));
    }
    Ok(out)
}
