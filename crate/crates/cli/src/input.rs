//! CSV samples: one observation per line, numeric columns, optional header.

use std::path::Path;

use copeq::copula::pseudo_observations;
use copeq::sample::Sample;
use log::warn;

use crate::error::{CliError, CliResult};

pub fn read_sample_csv(path: &Path) -> CliResult<Sample> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("{}: cannot read file: {e}", path.display())))?;
    parse_sample_csv(&text, &path.display().to_string())
}

/// Parses `text`; a first line with any non-numeric cell is taken as a header.
/// Errors name `source` and the 1-based line.
pub fn parse_sample_csv(text: &str, source: &str) -> CliResult<Sample> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut data = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (k, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::Input(format!("{source}: {e}")))?;
        let line = record.position().map_or(k + 1, |p| p.line() as usize);
        if record.iter().all(str::is_empty) {
            continue;
        }
        let parsed: Vec<Option<f64>> = record.iter().map(|c| c.parse::<f64>().ok()).collect();
        if k == 0 && parsed.iter().any(Option::is_none) {
            width = Some(record.len());
            continue;
        }
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(CliError::Input(format!(
                "{source}: line {line} has {} fields, expected {expected}",
                record.len()
            )));
        }
        for (col, (cell, value)) in record.iter().zip(&parsed).enumerate() {
            match value {
                Some(v) if v.is_finite() => data.push(*v),
                _ => {
                    return Err(CliError::Input(format!(
                        "{source}: line {line}, column {}: '{cell}' is not a finite number",
                        col + 1
                    )))
                }
            }
        }
        rows += 1;
    }
    let d = width.unwrap_or(0);
    if rows < 2 || d < 2 {
        return Err(CliError::Input(format!(
            "{source}: need at least 2 rows and 2 columns (got {rows} rows, {d} columns)"
        )));
    }
    let sample = Sample::new(data, rows, d).map_err(|e| CliError::Input(format!("{source}: {e}")))?;
    let ties = pseudo_observations(&sample).tie_count();
    if ties > 0 {
        warn!("{source}: {ties} tied values; tied entries share the maximal rank");
    }
    Ok(sample)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_detected() {
        let s = parse_sample_csv("a,b\n0.1,0.2\n0.3,0.4\n0.5,0.6\n", "t").unwrap();
        assert_eq!((s.n(), s.dim()), (3, 2));
        assert_eq!(s.row(0), &[0.1, 0.2]);
        let s = parse_sample_csv("0.1,0.2\n0.3,0.4\n", "t").unwrap();
        assert_eq!(s.n(), 2);
    }

    #[test]
    fn errors_name_the_line() {
        let e = parse_sample_csv("0.1,0.2\n0.3\n", "x.csv").unwrap_err();
        assert!(matches!(e, CliError::Input(_)));
        assert!(e.to_string().contains("line 2"), "{e}");
        let e = parse_sample_csv("x,y\n0.1,0.2\n0.3,abc\n", "x.csv").unwrap_err();
        assert!(e.to_string().contains("line 3, column 2"), "{e}");
        assert_eq!(e.exit_code(), 2);
        assert!(parse_sample_csv("0.1,0.2\n", "x.csv").is_err());
        assert!(parse_sample_csv("0.1,nan\n0.2,0.3\n", "x.csv").is_err());
    }
}
