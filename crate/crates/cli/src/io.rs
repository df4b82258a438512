//! Dataset ingestion from CSV and small JSON/CSV helpers for measures and
//! covariance matrices.

use std::fs;
use std::path::Path;

use gsf_core::{Dataset, MixingMeasure};

use crate::error::{CliError, Result};

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Parses a rectangular numeric CSV. Rows and columns in errors are
/// 1-based; `header` skips the first line.
pub fn parse_numeric_csv(text: &str, header: bool) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    let mut width: Option<usize> = None;
    for (line_idx, line) in text.lines().enumerate() {
        if header && line_idx == 0 {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let row_no = rows.len() + 1;
        let mut row = Vec::new();
        for (col_idx, field) in line.split(',').enumerate() {
            let value: f64 = field.trim().parse().map_err(|_| CliError::Parse {
                row: row_no,
                col: col_idx + 1,
                reason: format!("`{}` is not a number", field.trim()),
            })?;
            row.push(value);
        }
        if let Some(w) = width {
            if row.len() != w {
                return Err(CliError::RaggedRows {
                    row: row_no,
                    found: row.len(),
                    expected: w,
                });
            }
        } else {
            width = Some(row.len());
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Reads a dataset for the given kernel family. Multinomial counts must be
/// nonnegative integers with a common row sum, inferred from the first row
/// unless `trials` pins it.
pub fn ingest_csv(
    path: &Path,
    kernel_id: &str,
    header: bool,
    trials: Option<u64>,
) -> Result<Dataset> {
    let rows = parse_numeric_csv(&read_to_string(path)?, header)?;
    if rows.is_empty() {
        return Err(CliError::Usage(format!(
            "{}: no data rows",
            path.display()
        )));
    }
    match kernel_id {
        "gaussian" => Ok(Dataset::new(rows, None)?),
        "multinomial" => {
            let m = match trials {
                Some(m) => m as f64,
                None => rows[0].iter().sum(),
            };
            for (i, row) in rows.iter().enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    if v < 0.0 || v.fract() != 0.0 {
                        return Err(CliError::Parse {
                            row: i + 1,
                            col: j + 1,
                            reason: format!("count {v} is not a nonnegative integer"),
                        });
                    }
                }
                let sum: f64 = row.iter().sum();
                if sum != m {
                    return Err(CliError::TrialSumMismatch {
                        row: i + 1,
                        sum,
                        expected: m,
                    });
                }
            }
            Ok(Dataset::new(rows, Some(m as u64))?)
        }
        other => Err(CliError::Usage(format!(
            "unknown kernel `{other}` (expected gaussian or multinomial)"
        ))),
    }
}

/// Writes a dataset as plain CSV (no header).
pub fn dataset_to_csv(dataset: &Dataset) -> String {
    let mut out = String::new();
    for row in &dataset.observations {
        let fields: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// Reads a mixing measure from its JSON form.
pub fn read_measure(path: &Path) -> Result<MixingMeasure> {
    let text = read_to_string(path)?;
    let measure: MixingMeasure =
        serde_json::from_str(&text).map_err(|e| CliError::Json {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
    measure.validate()?;
    Ok(measure)
}

/// Reads a square covariance matrix from CSV.
pub fn read_covariance_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let rows = parse_numeric_csv(&read_to_string(path)?, false)?;
    if rows.is_empty() || rows.iter().any(|r| r.len() != rows.len()) {
        return Err(CliError::Usage(format!(
            "{}: covariance must be a square numeric matrix",
            path.display()
        )));
    }
    Ok(rows)
}

pub fn write_output(path: Option<&Path>, content: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, content).map_err(|source| CliError::Io {
            path: p.display().to_string(),
            source,
        }),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn temp_file(content: &str) -> std::path::PathBuf {
        let mut path = std::env::temp_dir();
        path.push(format!(
            "gsf-io-test-{}-{}.csv",
            std::process::id(),
            content.len()
        ));
        let mut f = fs::File::create(&path).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        path
    }

    #[test]
    fn gaussian_csv_basic() {
        let path = temp_file("0.5,1.0\n-1.0,2.0\n3.5,0.0\n");
        let ds = ingest_csv(&path, "gaussian", false, None).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.observations[2], vec![3.5, 0.0]);
    }

    #[test]
    fn header_skipped_when_flagged() {
        let path = temp_file("x,y\n1.0,2.0\n");
        let ds = ingest_csv(&path, "gaussian", true, None).unwrap();
        assert_eq!(ds.len(), 1);
        assert!(ingest_csv(&path, "gaussian", false, None).is_err());
    }

    #[test]
    fn trial_sum_mismatch_cites_row() {
        let path = temp_file("60,40\n60,40\n60,39\n");
        let err = ingest_csv(&path, "multinomial", false, None).unwrap_err();
        match err {
            CliError::TrialSumMismatch { row, sum, expected } => {
                assert_eq!(row, 3);
                assert_eq!(sum, 99.0);
                assert_eq!(expected, 100.0);
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn parse_error_cites_position() {
        let path = temp_file("1.0,2.0\n1.0,oops\n");
        let err = ingest_csv(&path, "gaussian", false, None).unwrap_err();
        match err {
            CliError::Parse { row, col, .. } => {
                assert_eq!((row, col), (2, 2));
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn ragged_rows_detected() {
        let path = temp_file("1.0,2.0\n1.0\n");
        assert!(matches!(
            ingest_csv(&path, "gaussian", false, None),
            Err(CliError::RaggedRows { row: 2, .. })
        ));
    }
}
