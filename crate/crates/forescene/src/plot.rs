//! Minimal SVG emitters for the benchmark and training figures: line plots
//! (difficulty CDF, loss curves) and bar charts (observed-fraction
//! histograms, aggregate metric summaries). Standalone files, no runtime
//! dependencies.

use std::fmt::Write as _;

const W: f64 = 640.0;
const H: f64 = 420.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 60.0;

fn header(title: &str) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = write!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = write!(
        s,
        r#"<text x="{}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn axis_frame(s: &mut String, x_label: &str, y_label: &str) {
    let x0 = MARGIN_L;
    let y0 = H - MARGIN_B;
    let x1 = W - MARGIN_R;
    let y1 = MARGIN_T;
    let _ = write!(
        s,
        r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/><line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#
    );
    let _ = write!(
        s,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        H - 16.0,
        escape(x_label)
    );
    let _ = write!(
        s,
        r#"<text x="18" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 18 {})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

fn tick_labels(s: &mut String, x_min: f64, x_max: f64, y_min: f64, y_max: f64) {
    let y0 = H - MARGIN_B;
    for (frac, v) in [(0.0, x_min), (1.0, x_max)] {
        let x = MARGIN_L + frac * (W - MARGIN_L - MARGIN_R);
        let _ = write!(
            s,
            r#"<text x="{x}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle">{v:.3}</text>"#,
            y0 + 18.0
        );
    }
    for (frac, v) in [(0.0, y_min), (1.0, y_max)] {
        let y = y0 - frac * (H - MARGIN_T - MARGIN_B);
        let _ = write!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="end">{v:.3}</text>"#,
            MARGIN_L - 6.0,
            y + 4.0
        );
    }
}

/// Polyline plot of `(x, y)` points (already sorted by x).
pub fn line_plot(title: &str, x_label: &str, y_label: &str, points: &[(f64, f64)]) -> String {
    let mut s = header(title);
    axis_frame(&mut s, x_label, y_label);
    if !points.is_empty() {
        let x_min = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let x_max = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        let y_min = points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min).min(0.0);
        let y_max = points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        let x_span = (x_max - x_min).max(1e-12);
        let y_span = (y_max - y_min).max(1e-12);
        let px = |x: f64| MARGIN_L + (x - x_min) / x_span * (W - MARGIN_L - MARGIN_R);
        let py = |y: f64| (H - MARGIN_B) - (y - y_min) / y_span * (H - MARGIN_T - MARGIN_B);
        let path: Vec<String> =
            points.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = write!(
            s,
            r##"<polyline points="{}" fill="none" stroke="#1f77b4" stroke-width="2"/>"##,
            path.join(" ")
        );
        tick_labels(&mut s, x_min, x_max, y_min, y_max);
    }
    s.push_str("</svg>");
    s
}

/// Vertical bar chart with one label per bar.
pub fn bar_chart(title: &str, x_label: &str, y_label: &str, bars: &[(String, f64)]) -> String {
    let mut s = header(title);
    axis_frame(&mut s, x_label, y_label);
    if !bars.is_empty() {
        let y_max = bars.iter().map(|b| b.1).fold(f64::NEG_INFINITY, f64::max).max(1e-12);
        let span_x = W - MARGIN_L - MARGIN_R;
        let bw = span_x / bars.len() as f64;
        for (i, (label, v)) in bars.iter().enumerate() {
            let x = MARGIN_L + i as f64 * bw;
            let h = (v / y_max) * (H - MARGIN_T - MARGIN_B);
            let y = (H - MARGIN_B) - h;
            let _ = write!(
                s,
                r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#1f77b4" stroke="white"/>"##,
                x,
                y,
                bw * 0.9,
                h
            );
            let _ = write!(
                s,
                r#"<text x="{:.2}" y="{}" font-family="sans-serif" font-size="9" text-anchor="end" transform="rotate(-45 {:.2} {})">{}</text>"#,
                x + bw * 0.45,
                H - MARGIN_B + 14.0,
                x + bw * 0.45,
                H - MARGIN_B + 14.0,
                escape(label)
            );
        }
        tick_labels(&mut s, 0.0, bars.len() as f64, 0.0, y_max);
    }
    s.push_str("</svg>");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_plot_is_valid_svg_with_points() {
        let svg = line_plot("cdf", "difficulty", "fraction", &[(0.0, 0.0), (0.5, 0.4), (1.0, 1.0)]);
        assert!(svg.starts_with("<svg"));
        assert!(svg.ends_with("</svg>"));
        assert!(svg.contains("polyline"));
    }

    #[test]
    fn bar_chart_handles_empty_and_escapes() {
        let svg = bar_chart("m", "x", "y", &[]);
        assert!(svg.ends_with("</svg>"));
        let svg = bar_chart("a<b", "x", "y", &[("r@<10".into(), 0.5)]);
        assert!(svg.contains("a&lt;b"));
        assert!(svg.contains("r@&lt;10"));
    }
}
