//! Minimal self-contained SVG line plots for the experiment figures.
//!
//! No plotting dependency: the figures the pipeline emits are passive line
//! charts, so a small hand-rolled SVG writer keeps the artifact hermetic and
//! byte-deterministic.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;

const WIDTH: f64 = 860.0;
const HEIGHT: f64 = 560.0;
const MARGIN_L: f64 = 72.0;
const MARGIN_R: f64 = 24.0;
const MARGIN_T: f64 = 44.0;
const MARGIN_B: f64 = 56.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f",
];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    /// Stroke width; thin strokes suit large spaghetti bundles.
    pub width: f64,
    /// Palette index; series sharing an index share a color.
    pub color: usize,
    /// Whether the series appears in the legend.
    pub in_legend: bool,
}

impl Series {
    pub fn new(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Series {
            label: label.into(),
            points,
            width: 1.6,
            color: 0,
            in_legend: true,
        }
    }

    pub fn color(mut self, idx: usize) -> Self {
        self.color = idx;
        self
    }

    pub fn thin(mut self) -> Self {
        self.width = 0.5;
        self.in_legend = false;
        self
    }
}

pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Log-log axes (used by the decay-rate plots).
    pub log_log: bool,
}

impl LinePlot {
    pub fn new(title: impl Into<String>, x_label: impl Into<String>, y_label: impl Into<String>) -> Self {
        LinePlot {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            series: Vec::new(),
            log_log: false,
        }
    }

    pub fn push(&mut self, s: Series) {
        self.series.push(s);
    }

    fn bounds(&self) -> (f64, f64, f64, f64) {
        let mut xmin = f64::INFINITY;
        let mut xmax = f64::NEG_INFINITY;
        let mut ymin = f64::INFINITY;
        let mut ymax = f64::NEG_INFINITY;
        for s in &self.series {
            for &(x, y) in &s.points {
                let (x, y) = if self.log_log { (x.log10(), y.log10()) } else { (x, y) };
                if x.is_finite() && y.is_finite() {
                    xmin = xmin.min(x);
                    xmax = xmax.max(x);
                    ymin = ymin.min(y);
                    ymax = ymax.max(y);
                }
            }
        }
        if !xmin.is_finite() {
            (0.0, 1.0, 0.0, 1.0)
        } else {
            let xpad = (xmax - xmin).max(1e-12) * 0.03;
            let ypad = (ymax - ymin).max(1e-12) * 0.06;
            (xmin - xpad, xmax + xpad, ymin - ypad, ymax + ypad)
        }
    }

    /// Render the plot as a standalone SVG document.
    pub fn render(&self) -> String {
        let (xmin, xmax, ymin, ymax) = self.bounds();
        let plot_w = WIDTH - MARGIN_L - MARGIN_R;
        let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
        let sx = |x: f64| MARGIN_L + (x - xmin) / (xmax - xmin) * plot_w;
        let sy = |y: f64| MARGIN_T + plot_h - (y - ymin) / (ymax - ymin) * plot_h;

        let mut svg = String::new();
        let _ = writeln!(
            svg,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
        );
        svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");

        // Axes box and ticks.
        let _ = writeln!(
            svg,
            "<rect x=\"{MARGIN_L}\" y=\"{MARGIN_T}\" width=\"{plot_w}\" height=\"{plot_h}\" fill=\"none\" stroke=\"#333\" stroke-width=\"1\"/>"
        );
        for i in 0..=5 {
            let fx = i as f64 / 5.0;
            let xv = xmin + fx * (xmax - xmin);
            let yv = ymin + fx * (ymax - ymin);
            let px = sx(xv);
            let py = sy(yv);
            let x_text = if self.log_log { format!("1e{xv:.1}") } else { format!("{xv:.3}") };
            let y_text = if self.log_log { format!("1e{yv:.1}") } else { format!("{yv:.3}") };
            let _ = writeln!(
                svg,
                "<line x1=\"{px}\" y1=\"{}\" x2=\"{px}\" y2=\"{}\" stroke=\"#ccc\" stroke-width=\"0.5\"/>",
                MARGIN_T,
                MARGIN_T + plot_h
            );
            let _ = writeln!(
                svg,
                "<line x1=\"{MARGIN_L}\" y1=\"{py}\" x2=\"{}\" y2=\"{py}\" stroke=\"#ccc\" stroke-width=\"0.5\"/>",
                MARGIN_L + plot_w
            );
            let _ = writeln!(
                svg,
                "<text x=\"{px}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\" fill=\"#333\">{x_text}</text>",
                MARGIN_T + plot_h + 18.0
            );
            let _ = writeln!(
                svg,
                "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"end\" fill=\"#333\">{y_text}</text>",
                MARGIN_L - 6.0,
                py + 4.0
            );
        }

        for s in &self.series {
            if s.points.is_empty() {
                continue;
            }
            let color = PALETTE[s.color % PALETTE.len()];
            let mut d = String::new();
            let mut first = true;
            for &(x, y) in &s.points {
                let (x, y) = if self.log_log { (x.log10(), y.log10()) } else { (x, y) };
                if !(x.is_finite() && y.is_finite()) {
                    first = true;
                    continue;
                }
                let _ = write!(d, "{}{:.2},{:.2} ", if first { "M" } else { "L" }, sx(x), sy(y));
                first = false;
            }
            let _ = writeln!(
                svg,
                "<path d=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"{}\" stroke-opacity=\"{}\"/>",
                d.trim_end(),
                s.width,
                if s.in_legend { 1.0 } else { 0.55 }
            );
        }

        // Title, axis labels, legend.
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"24\" font-size=\"16\" text-anchor=\"middle\" fill=\"#111\">{}</text>",
            WIDTH / 2.0,
            xml_escape(&self.title)
        );
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\" fill=\"#111\">{}</text>",
            WIDTH / 2.0,
            HEIGHT - 14.0,
            xml_escape(&self.x_label)
        );
        let _ = writeln!(
            svg,
            "<text x=\"18\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\" fill=\"#111\" transform=\"rotate(-90 18 {})\">{}</text>",
            HEIGHT / 2.0,
            HEIGHT / 2.0,
            xml_escape(&self.y_label)
        );
        let mut ly = MARGIN_T + 14.0;
        for s in self.series.iter().filter(|s| s.in_legend) {
            let color = PALETTE[s.color % PALETTE.len()];
            let _ = writeln!(
                svg,
                "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{color}\" stroke-width=\"2\"/>",
                MARGIN_L + 10.0,
                ly - 4.0,
                MARGIN_L + 34.0,
                ly - 4.0
            );
            let _ = writeln!(
                svg,
                "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"#111\">{}</text>",
                MARGIN_L + 40.0,
                ly,
                xml_escape(&s.label)
            );
            ly += 16.0;
        }
        svg.push_str("</svg>\n");
        svg
    }

    pub fn write_svg(&self, file: &Path) -> Result<()> {
        std::fs::write(file, self.render())?;
        Ok(())
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
