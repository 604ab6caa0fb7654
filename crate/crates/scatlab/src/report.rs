//! Result emission: CSV tables with reproducible float formatting, JSON
//! reports, and self-contained SVG log-log decay plots.

use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// 17 significant digits: enough to round-trip any f64 exactly.
pub fn fmt_f64(x: f64) -> String {
    if x == 0.0 && x.is_sign_positive() {
        return "0".into();
    }
    format!("{:.16e}", x)
}

/// A rectangular numeric table with named columns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CsvTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn new(columns: &[&str]) -> Self {
        CsvTable {
            columns: columns.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_csv_string())
    }
}

/// Write a string to a file, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut f = fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

/// Serialize a report as pretty JSON (stable field order from the struct).
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("JSON serialization failed: {e}")))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = to_json(value)?;
    s.push('\n');
    write_text(path, &s)
}

/// A log-log scatter of (radius, magnitude) points with an optional fitted
/// power law drawn through them.
#[derive(Debug, Clone)]
pub struct DecayPlot {
    pub title: String,
    pub points: Vec<(f64, f64)>,
    /// ln y = intercept + slope * ln x.
    pub fit: Option<(f64, f64)>,
}

impl DecayPlot {
    pub fn new(title: &str) -> Self {
        DecayPlot {
            title: title.into(),
            points: Vec::new(),
            fit: None,
        }
    }

    /// Render as a standalone SVG document.
    pub fn to_svg(&self) -> String {
        const W: f64 = 640.0;
        const H: f64 = 440.0;
        const ML: f64 = 70.0;
        const MR: f64 = 20.0;
        const MT: f64 = 40.0;
        const MB: f64 = 50.0;
        let pts: Vec<(f64, f64)> = self
            .points
            .iter()
            .filter(|(x, y)| *x > 0.0 && *y > 0.0)
            .map(|&(x, y)| (x.ln(), y.ln()))
            .collect();
        let mut svg = String::new();
        svg.push_str(&format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
             viewBox=\"0 0 {W} {H}\">\n"
        ));
        svg.push_str(&format!(
            "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
             <text x=\"{}\" y=\"24\" font-family=\"monospace\" font-size=\"15\" \
             text-anchor=\"middle\">{}</text>\n",
            W / 2.0,
            xml_escape(&self.title)
        ));
        if pts.is_empty() {
            svg.push_str("<text x=\"40\" y=\"200\" font-family=\"monospace\">no positive data</text>\n</svg>\n");
            return svg;
        }
        let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in &pts {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        let pad = |a: &mut f64, b: &mut f64| {
            let d = (*b - *a).max(1e-9) * 0.05;
            *a -= d;
            *b += d;
        };
        pad(&mut x0, &mut x1);
        pad(&mut y0, &mut y1);
        let sx = move |x: f64| ML + (x - x0) / (x1 - x0) * (W - ML - MR);
        let sy = move |y: f64| H - MB - (y - y0) / (y1 - y0) * (H - MT - MB);
        svg.push_str(&format!(
            "<rect x=\"{ML}\" y=\"{MT}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n",
            W - ML - MR,
            H - MT - MB
        ));
        // Axis labels in natural-log coordinates at the box corners.
        for (lx, ly, v) in [(ML, H - MB + 18.0, x0), (W - MR, H - MB + 18.0, x1)] {
            svg.push_str(&format!(
                "<text x=\"{lx}\" y=\"{ly}\" font-family=\"monospace\" font-size=\"11\" \
                 text-anchor=\"middle\">ln={v:.2}</text>\n"
            ));
        }
        for (ly, v) in [(H - MB, y0), (MT, y1)] {
            svg.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"11\" \
                 text-anchor=\"end\">ln={v:.2}</text>\n",
                ML - 6.0,
                ly + 4.0
            ));
        }
        if let Some((intercept, slope)) = self.fit {
            let ya = intercept + slope * x0;
            let yb = intercept + slope * x1;
            svg.push_str(&format!(
                "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" \
                 stroke=\"#c33\" stroke-width=\"1.5\"/>\n\
                 <text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"13\" \
                 fill=\"#c33\">slope = {:.4}</text>\n",
                sx(x0),
                sy(ya.clamp(y0, y1)),
                sx(x1),
                sy(yb.clamp(y0, y1)),
                ML + 10.0,
                MT + 18.0,
                slope
            ));
        }
        for &(x, y) in &pts {
            svg.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"#226\"/>\n",
                sx(x),
                sy(y)
            ));
        }
        svg.push_str("</svg>\n");
        svg
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_svg())
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
