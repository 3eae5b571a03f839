//! Report serialization: JSON lines for machines, an aligned table for people.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::metrics::MetricReport;

pub const DISPLAY_DECIMALS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    #[default]
    Table,
    Machine,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table" => Ok(ReportFormat::Table),
            "machine" => Ok(ReportFormat::Machine),
            other => Err(Error::Format {
                what: "report format",
                message: format!("unknown format {other:?}"),
            }),
        }
    }
}

/// Rounds the shortest decimal representation of `x` to `decimals` places,
/// ties away from zero, so `0.2625` displays as `0.263`.
pub fn round_display(x: f64, decimals: usize) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let repr = format!("{}", x.abs());
    let (int_part, frac_part) = repr.split_once('.').unwrap_or((&repr, ""));
    let mut digits: Vec<u8> = int_part
        .bytes()
        .chain(
            frac_part
                .bytes()
                .chain(std::iter::repeat(b'0'))
                .take(decimals),
        )
        .map(|b| b - b'0')
        .collect();
    let round_up = frac_part
        .as_bytes()
        .get(decimals)
        .is_some_and(|&d| d >= b'5');
    if round_up {
        let mut i = digits.len();
        loop {
            if i == 0 {
                digits.insert(0, 1);
                break;
            }
            i -= 1;
            if digits[i] == 9 {
                digits[i] = 0;
            } else {
                digits[i] += 1;
                break;
            }
        }
    }
    let split = digits.len() - decimals;
    let mut out = String::new();
    if x < 0.0 && digits.iter().any(|&d| d != 0) {
        out.push('-');
    }
    out.extend(digits[..split].iter().map(|d| char::from(b'0' + d)));
    if decimals > 0 {
        out.push('.');
        out.extend(digits[split..].iter().map(|d| char::from(b'0' + d)));
    }
    out
}

fn d3(x: f64) -> String {
    round_display(x, DISPLAY_DECIMALS)
}

/// Reports ordered by (model, dataset).
pub fn sorted(mut reports: Vec<MetricReport>) -> Vec<MetricReport> {
    reports.sort_by(|a, b| {
        (a.model_name.as_str(), a.dataset_name.as_str())
            .cmp(&(b.model_name.as_str(), b.dataset_name.as_str()))
    });
    reports
}

pub const TABLE_COLUMNS: [&str; 8] = ["ECE", "MacroCE", "ICE", "Brier", "Group", "M", "F", "Human"];

/// Aligned table in the column order ECE, MacroCE, ICE, Brier, Gender-ECE
/// (Group, M, F), Human.
pub fn render_table(reports: &[MetricReport]) -> String {
    let model_w = reports
        .iter()
        .map(|r| r.model_name.len())
        .chain([5])
        .max()
        .unwrap_or(5);
    let data_w = reports
        .iter()
        .map(|r| r.dataset_name.len())
        .chain([7])
        .max()
        .unwrap_or(7);
    let mut out = String::new();
    let _ = write!(
        out,
        "{:<model_w$}  {:<data_w$}  {:>6}",
        "Model", "Dataset", "n"
    );
    for c in TABLE_COLUMNS {
        let _ = write!(out, "  {c:>7}");
    }
    out.push('\n');
    for r in reports {
        let g = &r.gender_ece;
        let _ = write!(
            out,
            "{:<model_w$}  {:<data_w$}  {:>6}",
            r.model_name, r.dataset_name, r.n
        );
        for v in [
            r.ece,
            r.macro_ce,
            r.ice,
            r.brier,
            g.group_value,
            g.male_value,
            g.female_value,
            r.human_alignment,
        ] {
            let _ = write!(out, "  {:>7}", d3(v));
        }
        let mut flags = Vec::new();
        if g.degenerate {
            flags.push("one-sided Gender-ECE");
        }
        if r.macro_ce_one_sided {
            flags.push("one-sided MacroCE");
        }
        if !flags.is_empty() {
            let _ = write!(out, "  [{}]", flags.join(", "));
        }
        out.push('\n');
    }
    out
}

/// One JSON object per line, full precision.
pub fn render_machine(reports: &[MetricReport]) -> String {
    let mut out = String::new();
    for r in reports {
        out.push_str(&serde_json::to_string(r).expect("report serializes"));
        out.push('\n');
    }
    out
}

pub fn render(reports: &[MetricReport], format: ReportFormat) -> String {
    match format {
        ReportFormat::Table => render_table(reports),
        ReportFormat::Machine => render_machine(reports),
    }
}

pub fn parse_machine(text: &str) -> Result<Vec<MetricReport>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| Error::Format {
                what: "metric report",
                message: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binning::BinningScheme;
    use crate::metrics::metric_report;
    use crate::records::{Label, ScoredInstance};

    #[test]
    fn rounding() {
        assert_eq!(round_display(0.2625, 3), "0.263");
        assert_eq!(round_display(0.0755, 3), "0.076");
        assert_eq!(round_display(0.1105, 3), "0.111");
        assert_eq!(round_display(0.267, 3), "0.267");
        assert_eq!(round_display(0.09, 3), "0.090");
        assert_eq!(round_display(0.9996, 3), "1.000");
        assert_eq!(round_display(9.9996, 3), "10.000");
        assert_eq!(round_display(0.0, 3), "0.000");
        assert_eq!(round_display(1.0, 3), "1.000");
        assert_eq!(round_display(-0.0004, 3), "0.000");
        assert_eq!(round_display(-0.2625, 3), "-0.263");
        assert_eq!(round_display(0.12345, 0), "0");
        assert_eq!(round_display(1e-7, 3), "0.000");
    }

    fn four() -> Vec<ScoredInstance> {
        [0.95, 0.85, 0.15, 0.30]
            .iter()
            .zip([1u8, 1, 0, 1])
            .enumerate()
            .map(|(i, (&s, y))| {
                ScoredInstance::from_score(format!("i{i}"), s, Label::try_from(y).unwrap(), None)
            })
            .collect()
    }

    #[test]
    fn table_has_rounded_ece() {
        let r = metric_report(&four(), BinningScheme::default(), "gpt-j", "genderlex").unwrap();
        let t = render_table(&[r]);
        let lines: Vec<_> = t.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].contains("MacroCE"));
        assert!(lines[1].contains("0.263"));
        assert!(lines[1].contains("0.750"));
    }

    #[test]
    fn machine_roundtrip_and_order() {
        let a = metric_report(&four(), BinningScheme::default(), "b", "x").unwrap();
        let b = metric_report(&four(), BinningScheme::default(), "a", "y").unwrap();
        let reports = sorted(vec![a, b]);
        assert_eq!(reports[0].model_name, "a");
        let text = render_machine(&reports);
        assert_eq!(parse_machine(&text).unwrap(), reports);
    }
}
