//! SVG heatmaps and CSV tables.

use std::io::Write;

use ndarray::Array2;

/// Viridis anchor colours at 0, 0.25, 0.5, 0.75, 1.
const VIRIDIS: [(f64, f64, f64); 5] = [
    (68.0, 1.0, 84.0),
    (59.0, 82.0, 139.0),
    (33.0, 145.0, 140.0),
    (94.0, 201.0, 98.0),
    (253.0, 231.0, 37.0),
];

fn colour(x: f64) -> String {
    let x = if x.is_nan() { 0.0 } else { x.clamp(0.0, 1.0) };
    let pos = x * (VIRIDIS.len() - 1) as f64;
    let i = (pos.floor() as usize).min(VIRIDIS.len() - 2);
    let w = pos - i as f64;
    let (a, b) = (VIRIDIS[i], VIRIDIS[i + 1]);
    let mix = |p: f64, q: f64| (p + w * (q - p)).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

/// Finite min and max of an image; `(0, 1)` when nothing is finite.
pub fn finite_range(image: &Array2<f64>) -> (f64, f64) {
    let (lo, hi) = image
        .iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if lo.is_finite() { (lo, hi) } else { (0.0, 1.0) }
}

/// Writes `image` as an SVG heatmap with a colourbar spanning `range`.
pub fn write_heatmap<W: Write>(mut out: W, image: &Array2<f64>, title: &str, range: (f64, f64), units: &str) -> std::io::Result<()> {
    let (rows, cols) = image.dim();
    let cell = (512 / rows.max(cols)).max(1);
    let (w, h) = (cols * cell, rows * cell);
    let bar_x = w + 20;
    let span = if range.1 > range.0 { range.1 - range.0 } else { 1.0 };
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" shape-rendering="crispEdges" font-family="sans-serif" font-size="12">"#,
        w + 110,
        h + 30
    )?;
    writeln!(out, r#"<text x="0" y="14">{title}</text>"#)?;
    writeln!(out, r#"<g transform="translate(0,20)">"#)?;
    for ((i, j), v) in image.indexed_iter() {
        writeln!(
            out,
            r#"<rect x="{}" y="{}" width="{cell}" height="{cell}" fill="{}"/>"#,
            j * cell,
            i * cell,
            colour((v - range.0) / span)
        )?;
    }
    let steps = 64;
    for s in 0..steps {
        let y = h * s / steps;
        let y_next = h * (s + 1) / steps;
        let frac = 1.0 - (s as f64 + 0.5) / steps as f64;
        writeln!(out, r#"<rect x="{bar_x}" y="{y}" width="16" height="{}" fill="{}"/>"#, y_next - y, colour(frac))?;
    }
    writeln!(out, r#"<text x="{}" y="10">{:.4e} {units}</text>"#, bar_x + 20, range.1)?;
    writeln!(out, r#"<text x="{}" y="{}">{:.4e} {units}</text>"#, bar_x + 20, h, range.0)?;
    writeln!(out, "</g>\n</svg>")?;
    Ok(())
}

/// One row of the `metric,value,units` table.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub metric: String,
    pub value: f64,
    pub units: &'static str,
}

impl MetricRow {
    pub fn new(metric: impl Into<String>, value: f64, units: &'static str) -> Self {
        Self { metric: metric.into(), value, units }
    }
}

/// Values print in shortest round-trip form so they reload bit-exactly.
pub fn write_metrics_csv<W: Write>(mut out: W, rows: &[MetricRow]) -> std::io::Result<()> {
    writeln!(out, "metric,value,units")?;
    for r in rows {
        writeln!(out, "{},{},{}", r.metric, r.value, r.units)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn colour_endpoints() {
        assert_eq!(colour(0.0), "#440154");
        assert_eq!(colour(1.0), "#fde725");
        assert_eq!(colour(-3.0), colour(0.0));
        assert_eq!(colour(f64::NAN), colour(0.0));
    }

    #[test]
    fn heatmap_is_wellformed() {
        let img = Array2::from_shape_fn((4, 4), |(i, j)| (i + j) as f64);
        let mut buf = Vec::new();
        write_heatmap(&mut buf, &img, "test", finite_range(&img), "m").unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("<svg"));
        assert!(text.trim_end().ends_with("</svg>"));
        assert_eq!(text.matches("<rect").count(), 16 + 64);
        assert!(text.contains("6.0000e0 m"));
    }

    #[test]
    fn metrics_round_trip() {
        let rows = vec![MetricRow::new("rmse", 0.1 + 0.2, "m"), MetricRow::new("psnr", f64::INFINITY, "dB")];
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("metric,value,units"));
        let v: f64 = lines.next().unwrap().split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(v.to_bits(), (0.1f64 + 0.2).to_bits());
        assert_eq!(lines.next(), Some("psnr,inf,dB"));
        assert_eq!(finite_range(&Array2::from_elem((2, 2), f64::NAN)), (0.0, 1.0));
    }
}
