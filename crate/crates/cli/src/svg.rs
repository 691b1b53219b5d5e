//! Minimal SVG charts for the report command.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

pub struct Series {
    pub name: String,
    /// `(x, mean, std)`
    pub points: Vec<(f64, f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(out: &mut String, title: &str, x_label: &str, y_label: &str) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">
<rect width="100%" height="100%" fill="white"/>
<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>
<text x="{}" y="{}" text-anchor="middle">{}</text>
<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>
"#,
        (LEFT + W - RIGHT) / 2.0,
        escape(title),
        (LEFT + W - RIGHT) / 2.0,
        H - 12.0,
        escape(x_label),
        (TOP + H - BOTTOM) / 2.0,
        (TOP + H - BOTTOM) / 2.0,
        escape(y_label)
    );
}

fn axes(out: &mut String, x_ticks: &[(f64, String)], sx: impl Fn(f64) -> f64, sy: impl Fn(f64) -> f64) {
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, H - BOTTOM, TOP);
    let _ = writeln!(out, r##"<path d="M{x0},{y1} L{x0},{y0} L{x1},{y0}" stroke="black" fill="none"/>"##);
    for k in 0..=5 {
        let v = k as f64 / 5.0;
        let y = sy(v);
        let _ = writeln!(
            out,
            r##"<line x1="{x0}" y1="{y}" x2="{x1}" y2="{y}" stroke="#ddd"/><text x="{}" y="{}" text-anchor="end">{v:.1}</text>"##,
            x0 - 6.0,
            y + 4.0
        );
    }
    for (v, label) in x_ticks {
        let x = sx(*v);
        let _ = writeln!(
            out,
            r#"<line x1="{x}" y1="{y0}" x2="{x}" y2="{}" stroke="black"/><text x="{x}" y="{}" text-anchor="middle">{}</text>"#,
            y0 + 5.0,
            y0 + 18.0,
            escape(label)
        );
    }
}

fn legend(out: &mut String, names: &[String]) {
    for (i, name) in names.iter().enumerate() {
        let y = TOP + 16.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<rect x="{}" y="{}" width="12" height="12" fill="{}"/><text x="{}" y="{}">{}</text>"#,
            W - RIGHT + 12.0,
            y,
            PALETTE[i % PALETTE.len()],
            W - RIGHT + 30.0,
            y + 10.0,
            escape(name)
        );
    }
}

/// Line chart with `±std` bands; y spans `[0, 1]`.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let xs: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() && hi > lo { (lo, hi) } else { (lo.min(0.0), lo.max(0.0) + 1.0) };
    let sx = |x: f64| LEFT + (x - lo) / (hi - lo) * (W - RIGHT - LEFT);
    let sy = |y: f64| (H - BOTTOM) - y.clamp(0.0, 1.0) * (H - BOTTOM - TOP);
    let mut out = String::new();
    header(&mut out, title, x_label, y_label);
    let mut ticks: Vec<f64> = xs.clone();
    ticks.sort_by(f64::total_cmp);
    ticks.dedup();
    if ticks.len() > 12 {
        let step = ticks.len().div_ceil(12);
        ticks = ticks.into_iter().step_by(step).collect();
    }
    let tick_labels: Vec<(f64, String)> = ticks.into_iter().map(|t| (t, format!("{t}"))).collect();
    axes(&mut out, &tick_labels, sx, sy);
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if s.points.is_empty() {
            continue;
        }
        let upper: Vec<String> = s.points.iter().map(|p| format!("{},{}", sx(p.0), sy(p.1 + p.2))).collect();
        let lower: Vec<String> = s.points.iter().rev().map(|p| format!("{},{}", sx(p.0), sy(p.1 - p.2))).collect();
        let _ = writeln!(
            out,
            r#"<polygon points="{} {}" fill="{color}" fill-opacity="0.15" stroke="none"/>"#,
            upper.join(" "),
            lower.join(" ")
        );
        let line: Vec<String> = s.points.iter().map(|p| format!("{},{}", sx(p.0), sy(p.1))).collect();
        let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, line.join(" "));
        for p in &s.points {
            let _ = writeln!(out, r#"<circle cx="{}" cy="{}" r="3" fill="{color}"/>"#, sx(p.0), sy(p.1));
        }
    }
    legend(&mut out, &series.iter().map(|s| s.name.clone()).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    out
}

/// Grouped bars: one group per label, one bar per series; values in `[0, 1]`.
pub fn bar_chart(title: &str, y_label: &str, groups: &[String], series: &[(String, Vec<f64>)]) -> String {
    let n = groups.len().max(1) as f64;
    let group_w = (W - RIGHT - LEFT) / n;
    let bar_w = group_w * 0.8 / series.len().max(1) as f64;
    let sy = |y: f64| (H - BOTTOM) - y.clamp(0.0, 1.0) * (H - BOTTOM - TOP);
    let mut out = String::new();
    header(&mut out, title, "", y_label);
    let ticks: Vec<(f64, String)> = groups.iter().enumerate().map(|(i, g)| (i as f64, g.clone())).collect();
    axes(&mut out, &ticks, |i| LEFT + group_w * (i + 0.5), sy);
    for (si, (_, values)) in series.iter().enumerate() {
        for (gi, &v) in values.iter().enumerate() {
            let x = LEFT + group_w * gi as f64 + group_w * 0.1 + bar_w * si as f64;
            let _ = writeln!(
                out,
                r#"<rect x="{x}" y="{}" width="{bar_w}" height="{}" fill="{}"/>"#,
                sy(v),
                (H - BOTTOM) - sy(v),
                PALETTE[si % PALETTE.len()]
            );
        }
    }
    legend(&mut out, &series.iter().map(|s| s.0.clone()).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charts_are_well_formed() {
        let s = line_chart("t", "x", "y", &[Series { name: "a<b".into(), points: vec![(0.25, 0.7, 0.1), (1.0, 0.5, 0.0)] }]);
        assert!(s.starts_with("<svg") && s.ends_with("</svg>\n"));
        assert!(s.contains("a&lt;b"));
        let b = bar_chart("g", "acc", &["linear".into()], &[("local".into(), vec![0.9]), ("global".into(), vec![0.4])]);
        assert_eq!(b.matches("<rect x=").count(), 2 + 2);
    }
}
