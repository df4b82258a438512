//! Report emission: selected-order histograms as CSV tables (rows are
//! candidate orders, columns are methods) or JSON.

use gsf_core::metrics::SelectionReport;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(CliError::Usage(format!(
                "unknown format `{other}` (expected csv or json)"
            ))),
        }
    }
}

/// CSV table: `K_hat,<method>,...` with per-order selection proportions to
/// three decimals, covering orders 1 up to the largest observed (at least
/// the true order).
pub fn report_to_csv(report: &SelectionReport) -> String {
    let max_order = report
        .methods
        .iter()
        .flat_map(|m| m.counts.iter().map(|(o, _)| *o))
        .max()
        .unwrap_or(report.k0)
        .max(report.k0);
    let mut out = String::from("K_hat");
    for m in &report.methods {
        out.push(',');
        out.push_str(&m.method);
    }
    out.push('\n');
    for order in 1..=max_order {
        out.push_str(&order.to_string());
        for m in &report.methods {
            out.push_str(&format!(",{:.3}", m.proportion(order)));
        }
        out.push('\n');
    }
    out
}

pub fn report_to_string(report: &SelectionReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Csv => Ok(report_to_csv(report)),
        ReportFormat::Json => serde_json::to_string_pretty(report)
            .map(|mut s| {
                s.push('\n');
                s
            })
            .map_err(|e| CliError::Json {
                path: "<report>".into(),
                reason: e.to_string(),
            }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use gsf_core::metrics::aggregate_selection;

    #[test]
    fn csv_layout_single_method_all_correct() {
        let results = vec![("bic".to_string(), 2), ("bic".to_string(), 2)];
        let report = aggregate_selection(&results, 2);
        let csv = report_to_csv(&report);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "K_hat,bic");
        assert_eq!(lines[1], "1,0.000");
        assert_eq!(lines[2], "2,1.000");
    }

    #[test]
    fn json_round_trips() {
        let results = vec![
            ("gsf-scad".to_string(), 2),
            ("gsf-scad".to_string(), 3),
            ("bic".to_string(), 2),
        ];
        let report = aggregate_selection(&results, 2);
        let text = report_to_string(&report, ReportFormat::Json).unwrap();
        let back: SelectionReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, report);
    }
}
