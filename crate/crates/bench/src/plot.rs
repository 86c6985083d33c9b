//! Minimal SVG charts: regret curves with a ±1 std band, and bar charts.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 48.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

/// One curve: per-step mean and standard deviation.
pub struct Series<'a> {
    pub label: &'a str,
    pub mean: &'a [f64],
    pub std: &'a [f64],
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(out: &mut String, title: &str) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = write!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = write!(out, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, (LEFT + W - RIGHT) / 2.0, escape(title));
}

fn axes(out: &mut String, x_label: &str, y_label: &str, y_min: f64, y_max: f64) {
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, H - BOTTOM, TOP);
    let _ = write!(out, r#"<path d="M{x0} {y1} V{y0} H{x1}" fill="none" stroke="black"/>"#);
    for i in 0..=4 {
        let v = y_min + (y_max - y_min) * i as f64 / 4.0;
        let y = y0 - (y0 - y1) * i as f64 / 4.0;
        let _ = write!(out, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, x0 - 6.0, y + 4.0, tick(v));
        let _ = write!(out, r##"<path d="M{x0} {y} H{x1}" stroke="#ddd"/>"##);
    }
    let _ = write!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, H - 10.0, escape(x_label));
    let _ = write!(
        out,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

fn tick(v: f64) -> String {
    if v == 0.0 || (v.abs() >= 0.01 && v.abs() < 1000.0) {
        format!("{v:.3}")
    } else {
        format!("{v:.1e}")
    }
}

fn legend(out: &mut String, labels: &[&str]) {
    for (i, label) in labels.iter().enumerate() {
        let y = TOP + 10.0 + 18.0 * i as f64;
        let x = W - RIGHT + 16.0;
        let _ = write!(out, r#"<rect x="{x}" y="{}" width="12" height="12" fill="{}"/>"#, y - 10.0, PALETTE[i % PALETTE.len()]);
        let _ = write!(out, r#"<text x="{}" y="{y}">{}</text>"#, x + 18.0, escape(label));
    }
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let lo = lo.min(0.0);
    if hi - lo < 1e-12 {
        (lo, lo + 1.0)
    } else {
        (lo, hi)
    }
}

/// Mean curves over steps `0..n`, each with a shaded ±1 std band.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let n = series.iter().map(|s| s.mean.len()).max().unwrap_or(0);
    let (y_min, y_max) = range(series.iter().flat_map(|s| s.mean.iter().zip(s.std).flat_map(|(m, d)| [m - d, m + d])));
    let sx = |i: usize| LEFT + (W - RIGHT - LEFT) * if n > 1 { i as f64 / (n - 1) as f64 } else { 0.5 };
    let sy = |v: f64| (H - BOTTOM) - (H - BOTTOM - TOP) * (v.clamp(y_min, y_max) - y_min) / (y_max - y_min);

    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, x_label, y_label, y_min, y_max);
    for i in 0..n {
        let _ = write!(out, r#"<text x="{}" y="{}" text-anchor="middle">{i}</text>"#, sx(i), H - BOTTOM + 16.0);
    }
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let upper: Vec<String> = s.mean.iter().zip(s.std).enumerate().map(|(i, (m, d))| format!("{:.2},{:.2}", sx(i), sy(m + d))).collect();
        let lower: Vec<String> = s.mean.iter().zip(s.std).enumerate().rev().map(|(i, (m, d))| format!("{:.2},{:.2}", sx(i), sy(m - d))).collect();
        let _ = write!(out, r#"<polygon points="{} {}" fill="{color}" fill-opacity="0.15" stroke="none"/>"#, upper.join(" "), lower.join(" "));
        let line: Vec<String> = s.mean.iter().enumerate().map(|(i, m)| format!("{:.2},{:.2}", sx(i), sy(*m))).collect();
        let _ = write!(out, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, line.join(" "));
    }
    legend(&mut out, &series.iter().map(|s| s.label).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    out
}

/// One bar per `(label, mean, std)` with a ±1 std whisker.
pub fn bar_chart(title: &str, y_label: &str, bars: &[(&str, f64, f64)]) -> String {
    let (y_min, y_max) = range(bars.iter().flat_map(|(_, m, d)| [m - d, m + d]));
    let sy = |v: f64| (H - BOTTOM) - (H - BOTTOM - TOP) * (v.clamp(y_min, y_max) - y_min) / (y_max - y_min);
    let slot = (W - RIGHT - LEFT) / bars.len().max(1) as f64;

    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, "", y_label, y_min, y_max);
    for (i, (label, m, d)) in bars.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let x = LEFT + slot * (i as f64 + 0.2);
        let (top, base) = (sy(m.max(0.0)), sy(m.min(0.0)));
        let _ = write!(out, r#"<rect x="{x:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="{color}"/>"#, slot * 0.6, base - top);
        let cx = x + slot * 0.3;
        let _ = write!(out, r#"<path d="M{cx:.2} {:.2} V{:.2}" stroke="black"/>"#, sy(m - d), sy(m + d));
        let _ = write!(out, r#"<text x="{cx:.2}" y="{}" text-anchor="middle">{}</text>"#, H - BOTTOM + 16.0, escape(label));
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charts_are_closed_svg_documents() {
        let s = line_chart("t", "step", "regret", &[Series { label: "a<b", mean: &[1.0, 0.5, 0.2], std: &[0.1, 0.1, 0.0] }]);
        assert!(s.starts_with("<svg") && s.ends_with("</svg>\n"));
        assert!(s.contains("a&lt;b"));
        assert_eq!(s.matches("<polyline").count(), 1);
        let b = bar_chart("t", "regret", &[("x", 1.0, 0.2), ("y", 0.5, 0.0)]);
        assert_eq!(b.matches("<rect").count(), 3);
    }

    #[test]
    fn degenerate_inputs_still_render() {
        let s = line_chart("t", "", "", &[Series { label: "flat", mean: &[0.0], std: &[0.0] }]);
        assert!(!s.contains("NaN"));
        assert!(!bar_chart("t", "", &[]).contains("NaN"));
    }
}
