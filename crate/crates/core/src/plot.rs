//! Minimal SVG charts for reports.

use std::fmt::Write;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Horizontal bar chart, one bar per `(label, value)`, values in `[0, max]`.
pub fn bar_chart(title: &str, bars: &[(String, f64)], max: f64) -> String {
    let row_h = 22.0;
    let left = 260.0;
    let width = 720.0;
    let plot_w = width - left - 60.0;
    let height = 50.0 + row_h * bars.len() as f64 + 20.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<text x="10" y="22" font-size="15">{}</text>"#, escape(title));
    let max = if max > 0.0 { max } else { 1.0 };
    for (i, (label, value)) in bars.iter().enumerate() {
        let y = 40.0 + row_h * i as f64;
        let w = (value.max(0.0) / max).min(1.0) * plot_w;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            left - 8.0,
            y + 14.0,
            escape(label)
        );
        let _ = writeln!(s, r##"<rect x="{left}" y="{y:.1}" width="{w:.2}" height="16" fill="#4878a8"/>"##);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.1}">{value:.3}</text>"#, left + w + 4.0, y + 13.0);
    }
    s.push_str("</svg>\n");
    s
}

/// Line chart of several `(name, xs, ys)` series on shared axes.
pub fn line_chart(title: &str, series: &[(String, Vec<f64>, Vec<f64>)]) -> String {
    let (width, height) = (720.0, 420.0);
    let (left, right, top, bottom) = (60.0, 160.0, 40.0, 40.0);
    let xs = series.iter().flat_map(|s| s.1.iter().copied());
    let (x0, x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let y1 = series.iter().flat_map(|s| s.2.iter().copied()).fold(0.0f64, f64::max);
    let sx = |x: f64| left + (x - x0) / (x1 - x0).max(f64::MIN_POSITIVE) * (width - left - right);
    let sy = |y: f64| height - bottom - y / y1.max(f64::MIN_POSITIVE) * (height - top - bottom);
    const COLORS: [&str; 6] = ["#4878a8", "#d0684a", "#5a9e5a", "#8c6bb1", "#c9a227", "#555555"];
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<text x="10" y="22" font-size="15">{}</text>"#, escape(title));
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/>"#,
        height - bottom,
        width - right
    );
    let _ = writeln!(s, r#"<text x="{left}" y="{}">{x0:.4}</text>"#, height - bottom + 16.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{x1:.4}</text>"#, width - right, height - bottom + 16.0);
    for (i, (name, xs, ys)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = xs.iter().zip(ys).map(|(&x, &y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" points="{}"/>"#, pts.join(" "));
        let ly = top + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{ly:.1}" fill="{color}">{}</text>"#,
            width - right + 10.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charts_are_well_formed() {
        let svg = bar_chart("a<b", &[("ip.src".into(), 0.9), ("x".into(), -0.1)], 1.0);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a&lt;b"));
        let svg = line_chart("kde", &[("c0".into(), vec![0.0, 1.0], vec![0.5, 0.5])]);
        assert!(svg.contains("polyline"));
    }
}
