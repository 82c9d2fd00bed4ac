//! Minimal deterministic SVG line charts for the cumulative metric curves.

use std::io::Write;

use crate::error::Result;

const WIDTH: f64 = 860.0;
const HEIGHT: f64 = 520.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

#[derive(Clone, Debug)]
pub struct Curve {
    pub label: String,
    /// y-values at x = 1..=len.
    pub values: Vec<f64>,
    /// Dashed reference curves are drawn with a dash pattern.
    pub dashed: bool,
}

fn fmt(x: f64) -> String {
    if x == 0.0 {
        "0".to_string()
    } else if x.abs() >= 1000.0 || x.abs() < 0.01 {
        format!("{x:.2e}")
    } else {
        format!("{x:.2}")
    }
}

/// Writes a single chart with shared axes. X is the episode index.
pub fn write_chart<W: Write>(out: &mut W, title: &str, y_label: &str, curves: &[Curve]) -> Result<()> {
    let x_max = curves.iter().map(|c| c.values.len()).max().unwrap_or(1).max(1) as f64;
    let mut y_min = 0.0f64;
    let mut y_max = f64::MIN;
    for c in curves {
        for &v in &c.values {
            y_min = y_min.min(v);
            y_max = y_max.max(v);
        }
    }
    if y_max <= y_min {
        y_max = y_min + 1.0;
    }
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let sx = |k: f64| MARGIN_L + (k - 1.0) / (x_max - 1.0).max(1.0) * plot_w;
    let sy = |v: f64| MARGIN_T + (y_max - v) / (y_max - y_min) * plot_h;

    writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    )?;
    writeln!(out, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>")?;
    writeln!(
        out,
        "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{title}</text>",
        WIDTH / 2.0
    )?;
    // Axes.
    writeln!(
        out,
        "<line x1=\"{MARGIN_L}\" y1=\"{MARGIN_T}\" x2=\"{MARGIN_L}\" y2=\"{}\" stroke=\"black\"/>",
        MARGIN_T + plot_h
    )?;
    writeln!(
        out,
        "<line x1=\"{MARGIN_L}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
        MARGIN_T + plot_h,
        MARGIN_L + plot_w,
        MARGIN_T + plot_h
    )?;
    // Tick labels: min/max on both axes.
    writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{}</text>",
        MARGIN_L - 6.0,
        MARGIN_T + 4.0,
        fmt(y_max)
    )?;
    writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{}</text>",
        MARGIN_L - 6.0,
        MARGIN_T + plot_h + 4.0,
        fmt(y_min)
    )?;
    writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">1</text>",
        MARGIN_L,
        MARGIN_T + plot_h + 18.0
    )?;
    writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{}</text>",
        MARGIN_L + plot_w,
        MARGIN_T + plot_h + 18.0,
        x_max as usize
    )?;
    writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">episode k</text>",
        MARGIN_L + plot_w / 2.0,
        HEIGHT - 12.0
    )?;
    writeln!(
        out,
        "<text x=\"18\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 18 {})\">{y_label}</text>",
        MARGIN_T + plot_h / 2.0,
        MARGIN_T + plot_h / 2.0
    )?;

    for (ci, c) in curves.iter().enumerate() {
        if c.values.is_empty() {
            continue;
        }
        let color = PALETTE[ci % PALETTE.len()];
        let dash = if c.dashed { " stroke-dasharray=\"6,4\"" } else { "" };
        // Thin long series for readable files.
        let stride = (c.values.len() / 2000).max(1);
        let mut d = String::new();
        for (i, &v) in c.values.iter().enumerate() {
            if i % stride != 0 && i != c.values.len() - 1 {
                continue;
            }
            let cmd = if d.is_empty() { 'M' } else { 'L' };
            d.push_str(&format!("{cmd}{:.2},{:.2} ", sx((i + 1) as f64), sy(v)));
        }
        writeln!(
            out,
            "<path d=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"{dash}/>",
            d.trim_end()
        )?;
        let ly = MARGIN_T + 16.0 * ci as f64 + 8.0;
        writeln!(
            out,
            "<line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"{dash}/>",
            MARGIN_L + 12.0,
            MARGIN_L + 40.0
        )?;
        writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>",
            MARGIN_L + 46.0,
            ly + 4.0,
            c.label
        )?;
    }
    writeln!(out, "</svg>")?;
    Ok(())
}
