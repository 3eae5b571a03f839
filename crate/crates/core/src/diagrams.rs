//! Reliability-diagram tables (CSV) and SVG rendering.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binning::{compute_bin_stats, BinStats, BinningScheme};
use crate::error::{Error, Result};
use crate::metrics::ece_from_bins;
use crate::records::ScoredInstance;
use crate::report::{round_display, DISPLAY_DECIMALS};

pub const CSV_HEADER: &str = "bin_index,lower,upper,count,mean_conf,accuracy,gap";

/// Colors and geometry of the rendered diagram.
pub mod style {
    pub const ACCURACY_FILL: &str = "#1f5fbf";
    pub const GAP_FILL: &str = "#e03c31";
    pub const GAP_OPACITY: &str = "0.45";
    pub const HISTOGRAM_FILL: &str = "#7f7f7f";
    pub const DIAGONAL_STROKE: &str = "#404040";
    pub const FONT: &str = "sans-serif";

    pub const WIDTH: f64 = 360.0;
    pub const HEIGHT: f64 = 470.0;
    pub const PLOT_LEFT: f64 = 56.0;
    pub const PLOT_TOP: f64 = 20.0;
    pub const PLOT_SIZE: f64 = 280.0;
    pub const HIST_TOP: f64 = 350.0;
    pub const HIST_HEIGHT: f64 = 80.0;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityTable {
    pub scheme: BinningScheme,
    pub rows: Vec<BinStats>,
    pub total_n: usize,
    pub ece_value: f64,
}

pub fn reliability_table(
    instances: &[ScoredInstance],
    scheme: BinningScheme,
) -> Result<ReliabilityTable> {
    let rows = compute_bin_stats(instances, scheme)?;
    Ok(ReliabilityTable {
        scheme,
        ece_value: ece_from_bins(&rows),
        total_n: instances.len(),
        rows,
    })
}

impl ReliabilityTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.index, r.lower, r.upper, r.count, r.mean_conf, r.accuracy, r.gap
            );
        }
        out
    }

    pub fn ece_label(&self) -> String {
        format!("ECE: {}", round_display(self.ece_value, DISPLAY_DECIMALS))
    }
}

fn csv_error(message: String) -> Error {
    Error::Format {
        what: "reliability CSV",
        message,
    }
}

/// Parses the rows written by [`ReliabilityTable::to_csv`].
pub fn parse_csv(text: &str) -> Result<Vec<BinStats>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == CSV_HEADER => {}
        other => return Err(csv_error(format!("unexpected header {other:?}"))),
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 7 {
                return Err(csv_error(format!("row {}: expected 7 columns", i + 1)));
            }
            let num = |k: usize| -> Result<f64> {
                cols[k]
                    .parse()
                    .map_err(|e| csv_error(format!("row {}: column {k}: {e}", i + 1)))
            };
            let int = |k: usize| -> Result<usize> {
                cols[k]
                    .parse()
                    .map_err(|e| csv_error(format!("row {}: column {k}: {e}", i + 1)))
            };
            let count = int(3)?;
            Ok(BinStats {
                index: int(0)?,
                lower: num(1)?,
                upper: num(2)?,
                count,
                mean_conf: num(4)?,
                accuracy: num(5)?,
                gap: num(6)?,
                empty: count == 0,
            })
        })
        .collect()
}

fn px(v: f64) -> String {
    format!("{v:.3}")
}

/// Self-contained SVG: accuracy bars, gap segments, the diagonal, an ECE
/// annotation, and a count histogram underneath. Output depends only on the
/// table.
pub fn render_svg(table: &ReliabilityTable) -> String {
    use style::*;
    let x_of = |v: f64| PLOT_LEFT + v * PLOT_SIZE;
    let y_of = |v: f64| PLOT_TOP + (1.0 - v) * PLOT_SIZE;
    let max_count = table.rows.iter().map(|r| r.count).max().unwrap_or(0).max(1);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="{FONT}" font-size="11">"#,
        w = WIDTH,
        h = HEIGHT
    );
    let _ = writeln!(
        s,
        r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        s,
        r#"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        px(PLOT_LEFT),
        px(PLOT_TOP),
        px(PLOT_SIZE),
        px(PLOT_SIZE)
    );

    s.push_str("<g class=\"accuracy\">\n");
    for r in &table.rows {
        let top = y_of(r.accuracy);
        let _ = writeln!(
            s,
            r#"<rect data-bin="{}" x="{}" y="{}" width="{}" height="{}" fill="{ACCURACY_FILL}" stroke="black" stroke-width="0.5"/>"#,
            r.index,
            px(x_of(r.lower)),
            px(top),
            px((r.upper - r.lower) * PLOT_SIZE),
            px(y_of(0.0) - top)
        );
    }
    s.push_str("</g>\n<g class=\"gap\">\n");
    for r in &table.rows {
        let (lo, hi) = if r.accuracy <= r.mean_conf {
            (r.accuracy, r.mean_conf)
        } else {
            (r.mean_conf, r.accuracy)
        };
        let _ = writeln!(
            s,
            r#"<rect data-bin="{}" x="{}" y="{}" width="{}" height="{}" fill="{GAP_FILL}" fill-opacity="{GAP_OPACITY}" stroke="{GAP_FILL}" stroke-width="0.5"/>"#,
            r.index,
            px(x_of(r.lower)),
            px(y_of(if r.empty { 0.0 } else { hi })),
            px((r.upper - r.lower) * PLOT_SIZE),
            px(if r.empty { 0.0 } else { (hi - lo) * PLOT_SIZE })
        );
    }
    s.push_str("</g>\n");

    let _ = writeln!(
        s,
        r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{DIAGONAL_STROKE}" stroke-dasharray="4 3"/>"#,
        px(x_of(0.0)),
        px(y_of(0.0)),
        px(x_of(1.0)),
        px(y_of(1.0))
    );
    for t in [0.0, 0.5, 1.0] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{t:.1}</text>"#,
            px(x_of(t)),
            px(y_of(0.0) + 14.0)
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{t:.1}</text>"#,
            px(PLOT_LEFT - 4.0),
            px(y_of(t) + 4.0)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">Confidence</text>"#,
        px(x_of(0.5)),
        px(y_of(0.0) + 28.0)
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{y}" text-anchor="middle" transform="rotate(-90 14 {y})">Accuracy</text>"#,
        y = px(y_of(0.5))
    );
    let _ = writeln!(
        s,
        r#"<text class="ece" x="{}" y="{}" text-anchor="end" font-size="13">{}</text>"#,
        px(x_of(1.0) - 6.0),
        px(y_of(0.0) - 8.0),
        table.ece_label()
    );

    s.push_str("<g class=\"histogram\">\n");
    for r in &table.rows {
        let h = r.count as f64 / max_count as f64 * HIST_HEIGHT;
        let _ = writeln!(
            s,
            r#"<rect data-bin="{}" data-count="{}" x="{}" y="{}" width="{}" height="{}" fill="{HISTOGRAM_FILL}" stroke="black" stroke-width="0.5"/>"#,
            r.index,
            r.count,
            px(x_of(r.lower)),
            px(HIST_TOP + HIST_HEIGHT - h),
            px((r.upper - r.lower) * PLOT_SIZE),
            px(h)
        );
    }
    s.push_str("</g>\n");
    let _ = writeln!(
        s,
        r#"<text x="14" y="{y}" text-anchor="middle" transform="rotate(-90 14 {y})">Count</text>"#,
        y = px(HIST_TOP + HIST_HEIGHT / 2.0)
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="end">{max_count}</text>"#,
        px(PLOT_LEFT - 4.0),
        px(HIST_TOP + 4.0)
    );
    s.push_str("</svg>\n");
    s
}

pub fn render_reliability_diagram(table: &ReliabilityTable, path: &Path) -> Result<()> {
    std::fs::write(path, render_svg(table))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::records::Label;

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
    fn table_matches_ece() {
        let t = reliability_table(&four(), BinningScheme::default()).unwrap();
        assert_eq!(t.rows.len(), 10);
        assert_eq!(t.total_n, 4);
        let weighted: f64 = t.rows.iter().map(|r| r.count as f64 / 4.0 * r.gap).sum();
        assert!((weighted - 0.2625).abs() < 1e-12);
        assert!((t.ece_value - weighted).abs() < 1e-12);
        assert_eq!(t.ece_label(), "ECE: 0.263");
    }

    #[test]
    fn perfect_table_has_no_gaps() {
        let data: Vec<_> = [0.0, 1.0, 1.0]
            .iter()
            .zip([0u8, 1, 1])
            .enumerate()
            .map(|(i, (&s, y))| {
                ScoredInstance::from_score(format!("i{i}"), s, Label::try_from(y).unwrap(), None)
            })
            .collect();
        let t = reliability_table(&data, BinningScheme::default()).unwrap();
        assert!(t.rows.iter().all(|r| r.gap == 0.0));
    }

    #[test]
    fn csv_roundtrip() {
        let t = reliability_table(&four(), BinningScheme::default()).unwrap();
        let csv = t.to_csv();
        assert_eq!(csv.lines().count(), 11);
        assert_eq!(parse_csv(&csv).unwrap(), t.rows);
        let json = serde_json::to_string(&t).unwrap();
        assert_eq!(serde_json::from_str::<ReliabilityTable>(&json).unwrap(), t);
        assert!(parse_csv("nope\n").is_err());
    }

    #[test]
    fn svg_contents() {
        let t = reliability_table(&four(), BinningScheme::default()).unwrap();
        let svg = render_svg(&t);
        assert_eq!(svg, render_svg(&t));
        assert!(svg.contains(">ECE: 0.263</text>"));
        assert!(svg.contains("stroke-dasharray"));
        assert!(!svg.contains("href"));
        let counts: usize = svg
            .match_indices("data-count=\"")
            .map(|(i, m)| {
                let rest = &svg[i + m.len()..];
                rest[..rest.find('"').unwrap()].parse::<usize>().unwrap()
            })
            .sum();
        assert_eq!(counts, 4);
        // bin 0 is empty: zero-height accuracy and histogram bars
        assert!(svg.contains(r#"data-bin="0" data-count="0""#));
        assert!(
            svg.contains(r#"data-bin="0" x="56.000" y="300.000" width="28.000" height="0.000""#)
        );
    }

    #[test]
    fn unwritable_path() {
        let t = reliability_table(&four(), BinningScheme::default()).unwrap();
        let err = render_reliability_diagram(&t, Path::new("/nonexistent/dir/x.svg")).unwrap_err();
        assert!(matches!(err, Error::Io(_)));
    }
}
