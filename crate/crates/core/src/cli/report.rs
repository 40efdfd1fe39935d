//! CSV and static-SVG output helpers. CSV is the canonical artifact; SVG is
//! a convenience rendering with no plotting dependency.

use crate::Result;
use std::io::Write;
use std::path::Path;

pub fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

/// Write a CSV with a header. An empty row set is marked explicitly so every
/// file has at least one data line.
pub fn write_csv(path: &Path, header: &str, rows: &[Vec<String>]) -> Result<()> {
    let mut out = String::new();
    out.push_str(header);
    out.push('\n');
    if rows.is_empty() {
        out.push_str("empty\n");
    }
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

/// Square heatmap with per-cell annotations; used for transition matrices.
pub fn heatmap_svg(path: &Path, matrix: &[Vec<f64>], title: &str) -> Result<()> {
    let k = matrix.len();
    let cell = 48;
    let margin = 40;
    let size = margin * 2 + cell * k;
    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\">\n"
    ));
    s.push_str(&format!(
        "<text x=\"{margin}\" y=\"24\" font-family=\"monospace\" font-size=\"14\">{title}</text>\n"
    ));
    for (i, row) in matrix.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let shade = (255.0 * (1.0 - v.clamp(0.0, 1.0))) as u8;
            let x = margin + j * cell;
            let y = margin + i * cell;
            s.push_str(&format!(
                "<rect x=\"{x}\" y=\"{y}\" width=\"{cell}\" height=\"{cell}\" fill=\"rgb({shade},{shade},255)\" stroke=\"black\"/>\n"
            ));
            s.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"middle\">{:.2}</text>\n",
                x + cell / 2,
                y + cell / 2 + 4,
                v
            ));
        }
    }
    s.push_str("</svg>\n");
    std::fs::write(path, s)?;
    Ok(())
}

/// Multi-series line chart; series are `(label, points)` with shared x.
pub fn line_chart_svg(
    path: &Path,
    series: &[(String, Vec<(f64, f64)>)],
    title: &str,
    x_label: &str,
    y_label: &str,
) -> Result<()> {
    let (w, h) = (640.0, 420.0);
    let (ml, mr, mt, mb) = (70.0, 20.0, 40.0, 50.0);
    let palette = [
        "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f",
    ];

    let mut x_max: f64 = 1.0;
    let mut y_min: f64 = 0.0;
    let mut y_max: f64 = 1e-9;
    for (_, pts) in series {
        for &(x, y) in pts {
            x_max = x_max.max(x);
            y_max = y_max.max(y);
            y_min = y_min.min(y);
        }
    }
    let sx = |x: f64| ml + (x / x_max) * (w - ml - mr);
    let sy = |y: f64| h - mb - ((y - y_min) / (y_max - y_min)) * (h - mt - mb);

    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\n"
    ));
    s.push_str(&format!(
        "<text x=\"{ml}\" y=\"24\" font-family=\"monospace\" font-size=\"14\">{title}</text>\n"
    ));
    s.push_str(&format!(
        "<line x1=\"{ml}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        h - mb,
        w - mr,
        h - mb
    ));
    s.push_str(&format!(
        "<line x1=\"{ml}\" y1=\"{mt}\" x2=\"{ml}\" y2=\"{}\" stroke=\"black\"/>\n",
        h - mb
    ));
    s.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"12\" text-anchor=\"middle\">{x_label}</text>\n",
        (ml + w - mr) / 2.0,
        h - 12.0
    ));
    s.push_str(&format!(
        "<text x=\"16\" y=\"{}\" font-family=\"monospace\" font-size=\"12\" transform=\"rotate(-90 16 {})\">{y_label}</text>\n",
        (mt + h - mb) / 2.0,
        (mt + h - mb) / 2.0
    ));
    for (i, (label, pts)) in series.iter().enumerate() {
        let color = palette[i % palette.len()];
        if !pts.is_empty() {
            let d: Vec<String> = pts
                .iter()
                .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            s.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
                d.join(" ")
            ));
        }
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"11\" fill=\"{color}\">{label}</text>\n",
            w - mr - 160.0,
            mt + 14.0 * (i as f64 + 1.0)
        ));
    }
    s.push_str("</svg>\n");
    std::fs::write(path, s)?;
    Ok(())
}

/// Gripper/object traces of a rollout as a simple schematic.
pub fn rollout_svg(path: &Path, states: &[Vec<f64>], title: &str) -> Result<()> {
    let (w, h) = (500.0, 300.0);
    let sx = |x: f64| 20.0 + x * (w - 40.0);
    let sy = |z: f64| h - 20.0 - z / 0.5 * (h - 60.0);
    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\n"
    ));
    s.push_str(&format!(
        "<text x=\"20\" y=\"20\" font-family=\"monospace\" font-size=\"13\">{title}</text>\n"
    ));
    let colors = [("gripper", 0usize, "#333333"), ("red", 6, "#d62728"), ("green", 12, "#2ca02c"), ("blue", 18, "#1f77b4")];
    for (label, off, color) in colors {
        let pts: Vec<String> = states
            .iter()
            .map(|st| format!("{:.1},{:.1}", sx(st[off]), sy(st[off + 1])))
            .collect();
        s.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.2\"/>\n",
            pts.join(" ")
        ));
        let _ = label;
    }
    s.push_str("</svg>\n");
    std::fs::write(path, s)?;
    Ok(())
}
