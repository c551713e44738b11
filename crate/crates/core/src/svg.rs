//! Self-contained SVG reliability diagrams.
//!
//! Output is plain text built with fixed-precision formatting, so identical
//! bins always produce identical bytes.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::ReliabilityBins;

const PANEL: f64 = 240.0;
const MARGIN: f64 = 36.0;
const PLOT: f64 = PANEL - 2.0 * MARGIN;
const HEADER: f64 = 28.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// One diagram panel with its top-left corner at `(x0, y0)`.
fn write_panel(out: &mut String, bins: &ReliabilityBins, title: &str, x0: f64, y0: f64) {
    let px = |v: f64| x0 + MARGIN + v * PLOT;
    let py = |v: f64| y0 + MARGIN + (1.0 - v) * PLOT;
    let bar_w = PLOT / bins.n_bins as f64;

    let _ = writeln!(out, r#"<g class="panel"><title>{}</title>"#, escape(title));
    let _ = writeln!(
        out,
        r##"<rect x="{:.2}" y="{:.2}" width="{PLOT:.2}" height="{PLOT:.2}" fill="#ffffff" stroke="#444444"/>"##,
        px(0.0),
        py(1.0)
    );
    // accuracy bars behind the markers
    for b in bins.non_empty() {
        let acc = b.accuracy.unwrap();
        let _ = writeln!(
            out,
            r##"<rect class="bar" x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#9ecae1"/>"##,
            px(b.lo),
            py(acc),
            bar_w,
            acc * PLOT
        );
    }
    let _ = writeln!(
        out,
        r##"<line class="diagonal" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#888888" stroke-dasharray="4 3"/>"##,
        px(0.0),
        py(0.0),
        px(1.0),
        py(1.0)
    );
    for b in bins.non_empty() {
        let (conf, acc) = (b.confidence.unwrap(), b.accuracy.unwrap());
        let _ = writeln!(
            out,
            r##"<circle class="marker" cx="{:.2}" cy="{:.2}" r="3" fill="#d62728" data-conf="{conf:.6}" data-acc="{acc:.6}" data-count="{}"/>"##,
            px(conf),
            py(acc),
            b.count
        );
    }
    for tick in [0.0, 0.5, 1.0] {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="9" text-anchor="middle">{tick:.1}</text>"#,
            px(tick),
            py(0.0) + 12.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="9" text-anchor="end">{tick:.1}</text>"#,
            px(0.0) - 4.0,
            py(tick) + 3.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">{}</text>"#,
        x0 + PANEL / 2.0,
        y0 + MARGIN - 10.0,
        escape(title)
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" font-size="9" text-anchor="middle">confidence</text>"#,
        x0 + PANEL / 2.0,
        y0 + PANEL - 6.0
    );
    out.push_str("</g>\n");
}

fn document(width: f64, height: f64, body: &str) -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\">\n{body}</svg>\n"
    )
}

pub fn render_reliability_svg(bins: &ReliabilityBins, title: &str) -> String {
    let mut body = String::new();
    write_panel(&mut body, bins, title, 0.0, 0.0);
    document(PANEL, PANEL, &body)
}

pub fn emit_reliability_svg(
    bins: &ReliabilityBins,
    title: &str,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, render_reliability_svg(bins, title)).map_err(|e| Error::io(path, e))
}

/// A grid of panels: one row per config, one column per dataset.
/// `cells[r][c]` is `None` where a config was not run on a dataset.
pub fn render_grid_svg(
    row_labels: &[String],
    col_labels: &[String],
    cells: &[Vec<Option<&ReliabilityBins>>],
) -> String {
    let width = col_labels.len() as f64 * PANEL;
    let height = HEADER + row_labels.len() as f64 * PANEL;
    let mut body = String::new();
    for (c, label) in col_labels.iter().enumerate() {
        let _ = writeln!(
            body,
            r#"<text x="{:.2}" y="{:.2}" font-size="13" font-weight="bold" text-anchor="middle">{}</text>"#,
            c as f64 * PANEL + PANEL / 2.0,
            HEADER - 8.0,
            escape(label)
        );
    }
    for (r, row_label) in row_labels.iter().enumerate() {
        for (c, col_label) in col_labels.iter().enumerate() {
            if let Some(Some(bins)) = cells.get(r).and_then(|row| row.get(c)) {
                let title = format!("{row_label} / {col_label}");
                write_panel(
                    &mut body,
                    bins,
                    &title,
                    c as f64 * PANEL,
                    HEADER + r as f64 * PANEL,
                );
            }
        }
    }
    document(width, height, &body)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{reliability_bins, PredictionSet};

    fn bins(p: &[f64], y: &[u8]) -> ReliabilityBins {
        reliability_bins(&PredictionSet::new(p.to_vec(), y.to_vec()).unwrap(), 40).unwrap()
    }

    #[test]
    fn one_marker_per_non_empty_bin() {
        let b = bins(&[0.1, 0.12, 0.5, 0.95], &[0, 1, 1, 1]);
        let svg = render_reliability_svg(&b, "toy");
        assert_eq!(svg.matches("class=\"marker\"").count(), 3);
        assert!(svg.contains("class=\"diagonal\""));
        assert_eq!(svg, render_reliability_svg(&b, "toy"));
    }

    #[test]
    fn calibrated_markers_sit_on_diagonal() {
        // all-positive at p = 1 and all-negative at p = 0
        let b = bins(&[1.0, 1.0, 0.0], &[1, 1, 0]);
        let svg = render_reliability_svg(&b, "calibrated");
        for line in svg.lines().filter(|l| l.contains("class=\"marker\"")) {
            let attr = |name: &str| -> f64 {
                let start = line.find(&format!("{name}=\"")).unwrap() + name.len() + 2;
                let end = line[start..].find('"').unwrap() + start;
                line[start..end].parse().unwrap()
            };
            assert_eq!(attr("data-conf"), attr("data-acc"));
        }
    }

    #[test]
    fn grid_panel_count() {
        let b = bins(&[0.3], &[0]);
        let rows: Vec<String> = ["Baseline", "C1", "C2"].map(String::from).to_vec();
        let cols: Vec<String> = ["a", "b"].map(String::from).to_vec();
        let cells = vec![vec![Some(&b), Some(&b)]; 3];
        let svg = render_grid_svg(&rows, &cols, &cells);
        assert_eq!(svg.matches("class=\"panel\"").count(), 6);
    }

    #[test]
    fn titles_are_escaped() {
        let b = bins(&[0.3], &[0]);
        assert!(render_reliability_svg(&b, "a<b&c").contains("a&lt;b&amp;c"));
    }
}
