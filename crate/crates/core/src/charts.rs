//! Static SVG charts: heatmaps, bar charts and identity-line scatter plots.

use std::fmt::Write;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ChartError {
    #[error("invalid report: {0}")]
    InvalidReport(String),
}

const CELL: f64 = 44.0;
const MARGIN: f64 = 90.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Linear blend from pale yellow (low) to dark blue (high).
fn color(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let lo = [255.0, 247.0, 188.0];
    let hi = [8.0, 48.0, 107.0];
    let c: Vec<u8> = (0..3).map(|i| (lo[i] + (hi[i] - lo[i]) * t).round() as u8).collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

fn header(out: &mut String, width: f64, height: f64, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="24" font-size="16" text-anchor="middle">{}</text>"#,
        width / 2.0,
        escape(title)
    );
}

/// Heatmap with one labelled cell per entry; `None` cells are drawn grey
/// and labelled `NA`.
pub fn heatmap_svg(
    title: &str,
    row_labels: &[String],
    col_labels: &[String],
    values: &[Vec<Option<f64>>],
) -> Result<String, ChartError> {
    if values.len() != row_labels.len() || values.iter().any(|r| r.len() != col_labels.len()) {
        return Err(ChartError::InvalidReport("heatmap shape does not match its labels".into()));
    }
    let finite: Vec<f64> = values.iter().flatten().flatten().copied().filter(|v| v.is_finite()).collect();
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };

    let width = MARGIN + CELL * col_labels.len() as f64 + 20.0;
    let height = MARGIN + CELL * row_labels.len() as f64 + 20.0;
    let mut out = String::new();
    header(&mut out, width, height, title);
    for (j, label) in col_labels.iter().enumerate() {
        let x = MARGIN + CELL * (j as f64 + 0.5);
        let _ = writeln!(
            out,
            r#"<text x="{x:.1}" y="{:.1}" font-size="10" text-anchor="start" transform="rotate(-45 {x:.1} {:.1})">{}</text>"#,
            MARGIN - 6.0,
            MARGIN - 6.0,
            escape(label)
        );
    }
    for (i, (label, row)) in row_labels.iter().zip(values).enumerate() {
        let y = MARGIN + CELL * i as f64;
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{}</text>"#,
            MARGIN - 6.0,
            y + CELL / 2.0 + 3.0,
            escape(label)
        );
        for (j, v) in row.iter().enumerate() {
            let x = MARGIN + CELL * j as f64;
            let (fill, text, ink) = match v {
                Some(v) if v.is_finite() => {
                    let t = (v - lo) / span;
                    (color(t), format!("{v:.2}"), if t > 0.5 { "white" } else { "black" })
                }
                _ => ("#cccccc".to_string(), "NA".to_string(), "black"),
            };
            let _ = writeln!(
                out,
                r#"<rect class="cell" x="{x:.1}" y="{y:.1}" width="{CELL:.1}" height="{CELL:.1}" fill="{fill}" stroke="white"/>"#
            );
            let _ = writeln!(
                out,
                r#"<text class="value" x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle" fill="{ink}">{text}</text>"#,
                x + CELL / 2.0,
                y + CELL / 2.0 + 3.0
            );
        }
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Vertical bar chart on a `[0, 1]`-style axis spanning `min(0, values)` to
/// `max(1, values)`.
pub fn bar_chart_svg(title: &str, labels: &[String], values: &[f64]) -> Result<String, ChartError> {
    if values.is_empty() {
        return Err(ChartError::InvalidReport("bar chart has no values".into()));
    }
    if labels.len() != values.len() {
        return Err(ChartError::InvalidReport("bar labels do not match values".into()));
    }
    let lo = values.iter().copied().fold(0.0, f64::min);
    let hi = values.iter().copied().fold(1.0, f64::max);
    let (plot_w, plot_h) = (36.0 * values.len() as f64, 240.0);
    let (left, top) = (60.0, 50.0);
    let y_of = |v: f64| top + plot_h * (hi - v) / (hi - lo);
    let mut out = String::new();
    header(&mut out, left + plot_w + 20.0, top + plot_h + 70.0, title);
    for tick in 0..=4 {
        let v = lo + (hi - lo) * tick as f64 / 4.0;
        let y = y_of(v);
        let _ = writeln!(
            out,
            r##"<line x1="{left:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#dddddd"/><text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{v:.2}</text>"##,
            left + plot_w,
            left - 4.0,
            y + 3.0
        );
    }
    for (i, (label, &v)) in labels.iter().zip(values).enumerate() {
        let x = left + 36.0 * i as f64 + 6.0;
        let (y0, y1) = (y_of(v.max(0.0)), y_of(v.min(0.0)));
        let _ = writeln!(
            out,
            r##"<rect class="bar" x="{x:.1}" y="{y0:.1}" width="24.0" height="{:.1}" fill="#2b6cb0"><title>{}: {v:.4}</title></rect>"##,
            y1 - y0,
            escape(label)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle">{}</text>"#,
            x + 12.0,
            top + plot_h + 16.0,
            escape(label)
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Square plot geometry shared by [`scatter_svg`] and its tests.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatterFrame {
    pub left: f64,
    pub top: f64,
    pub size: f64,
    pub lo: f64,
    pub hi: f64,
}

impl ScatterFrame {
    /// Both axes share `[lo, hi]`, padded by 5%.
    pub fn fit(points: &[(f64, f64)]) -> Self {
        let all = points.iter().flat_map(|&(x, y)| [x, y]).filter(|v| v.is_finite());
        let (mut lo, mut hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-9 {
            lo -= 0.5;
            hi += 0.5;
        }
        let pad = 0.05 * (hi - lo);
        Self {
            left: 60.0,
            top: 50.0,
            size: 320.0,
            lo: lo - pad,
            hi: hi + pad,
        }
    }

    pub fn px(&self, x: f64) -> f64 {
        self.left + self.size * (x - self.lo) / (self.hi - self.lo)
    }

    pub fn py(&self, y: f64) -> f64 {
        self.top + self.size * (self.hi - y) / (self.hi - self.lo)
    }
}

/// Scatter of `(x, y)` pairs with a dashed `y = x` identity line.
pub fn scatter_svg(title: &str, x_label: &str, y_label: &str, points: &[(f64, f64)]) -> Result<String, ChartError> {
    if points.is_empty() {
        return Err(ChartError::InvalidReport("scatter has no points".into()));
    }
    let f = ScatterFrame::fit(points);
    let mut out = String::new();
    header(&mut out, f.left + f.size + 30.0, f.top + f.size + 60.0, title);
    let _ = writeln!(
        out,
        r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
        f.left, f.top, f.size, f.size
    );
    let _ = writeln!(
        out,
        r##"<line class="identity" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#888888" stroke-dasharray="6 4"/>"##,
        f.px(f.lo),
        f.py(f.lo),
        f.px(f.hi),
        f.py(f.hi)
    );
    for &(x, y) in points.iter().filter(|(x, y)| x.is_finite() && y.is_finite()) {
        let _ = writeln!(
            out,
            r##"<circle class="point" cx="{:.2}" cy="{:.2}" r="3" fill="#c53030"/>"##,
            f.px(x),
            f.py(y)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">{}</text>"#,
        f.left + f.size / 2.0,
        f.top + f.size + 36.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.1}" font-size="12" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        f.top + f.size / 2.0,
        f.top + f.size / 2.0,
        escape(y_label)
    );
    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn attr(tag: &str, name: &str) -> f64 {
        let key = format!("{name}=\"");
        let start = tag.find(&key).unwrap() + key.len();
        let end = start + tag[start..].find('"').unwrap();
        tag[start..end].parse().unwrap()
    }

    #[test]
    fn two_by_two_heatmap() {
        let labels = vec!["a".to_string(), "b".to_string()];
        let svg = heatmap_svg(
            "m",
            &labels,
            &labels,
            &[vec![Some(1.0), Some(0.85)], vec![Some(0.7), None]],
        )
        .unwrap();
        assert_eq!(svg.matches(r#"class="cell""#).count(), 4);
        assert_eq!(svg.matches(r#"class="value""#).count(), 4);
        for label in ["1.00", "0.85", "0.70", "NA"] {
            assert!(svg.contains(&format!(">{label}</text>")), "{label}");
        }
        assert!(heatmap_svg("m", &labels, &labels, &[vec![Some(1.0)]]).is_err());
    }

    #[test]
    fn empty_bar_chart_is_invalid() {
        assert!(matches!(bar_chart_svg("x", &[], &[]), Err(ChartError::InvalidReport(_))));
        let labels: Vec<String> = (0..12).map(|i| format!("c{i}")).collect();
        let svg = bar_chart_svg("x", &labels, &[0.9; 12]).unwrap();
        assert_eq!(svg.matches(r#"class="bar""#).count(), 12);
    }

    #[test]
    fn diagonal_points_sit_on_the_identity_line() {
        let points: Vec<(f64, f64)> = (0..20).map(|i| (0.6 + 0.017 * i as f64, 0.6 + 0.017 * i as f64)).collect();
        let svg = scatter_svg("p", "a", "b", &points).unwrap();
        let line = svg.lines().find(|l| l.contains(r#"class="identity""#)).unwrap();
        let (x1, y1, x2, y2) = (attr(line, "x1"), attr(line, "y1"), attr(line, "x2"), attr(line, "y2"));
        let circles: Vec<&str> = svg.lines().filter(|l| l.contains(r#"class="point""#)).collect();
        assert_eq!(circles.len(), 20);
        for c in circles {
            let (cx, cy) = (attr(c, "cx"), attr(c, "cy"));
            let on_line = y1 + (y2 - y1) * (cx - x1) / (x2 - x1);
            assert!((cy - on_line).abs() < 0.5, "{cy} vs {on_line}");
        }
    }

    #[test]
    fn labels_are_escaped() {
        let svg = bar_chart_svg("a<b", &["x&y".to_string()], &[0.5]).unwrap();
        assert!(svg.contains("a&lt;b") && svg.contains("x&amp;y"));
    }
}
