//! Minimal SVG line charts for prediction overlays and loss curves.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::fsio;

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("invalid plot arguments: {0}")]
    Argument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Renders equal-length series as one polyline each, x being the sample
/// index. Output depends only on the inputs.
pub fn render_line_plot(series: &[Vec<f64>], labels: &[&str], title: &str) -> Result<String, PlotError> {
    let len = match series.first() {
        Some(s) if !s.is_empty() => s.len(),
        _ => return Err(PlotError::Argument("no data to plot".into())),
    };
    if series.iter().any(|s| s.len() != len) {
        return Err(PlotError::Argument("series lengths differ".into()));
    }
    if labels.len() != series.len() {
        return Err(PlotError::Argument(format!(
            "{} labels for {} series",
            labels.len(),
            series.len()
        )));
    }
    let finite = series.iter().flatten().copied().filter(|v| v.is_finite());
    let (mut lo, mut hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if !lo.is_finite() {
        return Err(PlotError::Argument("series contain no finite values".into()));
    }
    if hi - lo < 1e-12 {
        lo -= 1.0;
        hi += 1.0;
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let sx = |i: usize| LEFT + if len > 1 { plot_w * i as f64 / (len - 1) as f64 } else { plot_w / 2.0 };
    let sy = |v: f64| TOP + plot_h * (hi - v) / (hi - lo);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"#,
        LEFT + plot_w / 2.0,
        escape(title)
    );
    // axes
    let _ = writeln!(
        svg,
        r#"<g stroke="black" stroke-width="1"><line x1="{LEFT}" y1="{0}" x2="{1}" y2="{0}"/><line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{0}"/></g>"#,
        TOP + plot_h,
        LEFT + plot_w
    );
    // ticks
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let y = sy(v);
        let _ = writeln!(
            svg,
            r#"<line x1="{:.1}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="black"/><text x="{:.1}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="end">{}</text>"#,
            LEFT - 5.0,
            LEFT - 8.0,
            y + 4.0,
            fmt_tick(v)
        );
        let i = ((len - 1) as f64 * k as f64 / 4.0).round() as usize;
        let x = sx(i);
        let _ = writeln!(
            svg,
            r#"<line x1="{x:.2}" y1="{0:.1}" x2="{x:.2}" y2="{1:.1}" stroke="black"/><text x="{x:.2}" y="{2:.1}" font-family="sans-serif" font-size="11" text-anchor="middle">{i}</text>"#,
            TOP + plot_h,
            TOP + plot_h + 5.0,
            TOP + plot_h + 18.0
        );
    }
    for (k, (s, label)) in series.iter().zip(labels).enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let points: Vec<String> = s
            .iter()
            .enumerate()
            .map(|(i, &v)| format!("{:.2},{:.2}", sx(i), sy(if v.is_finite() { v } else { lo })))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            points.join(" ")
        );
        let ly = TOP + 15.0 + 20.0 * k as f64;
        let lx = LEFT + plot_w + 15.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(label)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn fmt_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

pub fn emit_line_plot(
    series: &[Vec<f64>],
    labels: &[&str],
    title: &str,
    path: impl AsRef<Path>,
) -> Result<(), PlotError> {
    let svg = render_line_plot(series, labels, title)?;
    fsio::write_atomic(path, svg.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn polylines(svg: &str) -> Vec<Vec<(f64, f64)>> {
        svg.lines()
            .filter(|l| l.starts_with("<polyline"))
            .map(|l| {
                let pts = l.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
                pts.split(' ')
                    .map(|p| {
                        let (x, y) = p.split_once(',').unwrap();
                        (x.parse().unwrap(), y.parse().unwrap())
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn constant_series_are_horizontal() {
        let svg = render_line_plot(&[vec![1.0; 10], vec![2.0; 10]], &["a", "b"], "flat").unwrap();
        let lines = polylines(&svg);
        assert_eq!(lines.len(), 2);
        for l in &lines {
            assert!(l.iter().all(|p| p.1 == l[0].1));
        }
        assert_ne!(lines[0][0].1, lines[1][0].1);
    }

    #[test]
    fn deterministic_and_counts_points() {
        let s: Vec<f64> = (0..720).map(|i| (i as f64 * 0.1).sin()).collect();
        let a = render_line_plot(std::slice::from_ref(&s), &["pred"], "overlay").unwrap();
        let b = render_line_plot(&[s], &["pred"], "overlay").unwrap();
        assert_eq!(a, b);
        assert_eq!(polylines(&a)[0].len(), 720);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(render_line_plot(&[], &[], "x").is_err());
        assert!(render_line_plot(&[vec![]], &["a"], "x").is_err());
        assert!(render_line_plot(&[vec![1.0], vec![1.0, 2.0]], &["a", "b"], "x").is_err());
        assert!(render_line_plot(&[vec![1.0]], &[], "x").is_err());
    }

    #[test]
    fn escapes_labels() {
        let svg = render_line_plot(&[vec![0.0, 1.0]], &["a<b"], "t&t").unwrap();
        assert!(svg.contains("a&lt;b"));
        assert!(svg.contains("t&amp;t"));
    }
}
