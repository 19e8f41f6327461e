//! Minimal self-contained SVG charts for run reports.
//!
//! Hand-rolled on purpose: the plots are presentation-only (every number
//! also lands in a CSV), must render without a display server, and must be
//! byte-identical across runs. All coordinates are formatted with fixed
//! precision so the output is deterministic.

/// One named line or point set.
pub struct Series<'a> {
    pub name: &'a str,
    /// CSS color, e.g. `#d1495b`.
    pub color: &'a str,
    pub points: &'a [(f64, f64)],
}

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 64.0;
const MARGIN_RIGHT: f64 = 24.0;
const MARGIN_TOP: f64 = 46.0;
const MARGIN_BOTTOM: f64 = 58.0;
const N_TICKS: usize = 5;

struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    /// Data ranges over every series, padded so a flat series still spans a
    /// visible band.
    fn fit(series: &[Series<'_>]) -> Frame {
        let mut x_min = f64::INFINITY;
        let mut x_max = f64::NEG_INFINITY;
        let mut y_min = f64::INFINITY;
        let mut y_max = f64::NEG_INFINITY;
        for s in series {
            for &(x, y) in s.points {
                x_min = x_min.min(x);
                x_max = x_max.max(x);
                y_min = y_min.min(y);
                y_max = y_max.max(y);
            }
        }
        if !x_min.is_finite() {
            // No points at all; draw an empty unit frame.
            (x_min, x_max, y_min, y_max) = (0.0, 1.0, 0.0, 1.0);
        }
        if x_max - x_min < 1e-9 {
            x_min -= 0.5;
            x_max += 0.5;
        }
        if y_max - y_min < 1e-9 {
            y_min -= 0.5;
            y_max += 0.5;
        }
        Frame {
            x_min,
            x_max,
            y_min,
            y_max,
        }
    }

    fn to_px_x(&self, x: f64) -> f64 {
        let span = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
        MARGIN_LEFT + (x - self.x_min) / (self.x_max - self.x_min) * span
    }

    fn to_px_y(&self, y: f64) -> f64 {
        let span = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
        // SVG y grows downward.
        HEIGHT - MARGIN_BOTTOM - (y - self.y_min) / (self.y_max - self.y_min) * span
    }

    fn x_ticks(&self) -> Vec<f64> {
        linspace(self.x_min, self.x_max, N_TICKS)
    }

    fn y_ticks(&self) -> Vec<f64> {
        linspace(self.y_min, self.y_max, N_TICKS)
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Shared scaffolding: header, axes, tick marks, labels, title, legend.
fn chart_open(title: &str, x_label: &str, y_label: &str, frame: &Frame, series: &[Series<'_>]) -> String {
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH:.0}\" height=\"{HEIGHT:.0}\" \
         viewBox=\"0 0 {WIDTH:.0} {HEIGHT:.0}\">\n"
    ));
    svg.push_str(&format!(
        "  <rect x=\"0\" y=\"0\" width=\"{WIDTH:.0}\" height=\"{HEIGHT:.0}\" fill=\"#ffffff\"/>\n"
    ));
    svg.push_str(&format!(
        "  <text x=\"{:.2}\" y=\"26\" text-anchor=\"middle\" font-family=\"monospace\" \
         font-size=\"15\" fill=\"#222222\">{}</text>\n",
        WIDTH / 2.0,
        xml_escape(title)
    ));

    // Axes.
    let x0 = MARGIN_LEFT;
    let x1 = WIDTH - MARGIN_RIGHT;
    let y0 = HEIGHT - MARGIN_BOTTOM;
    let y1 = MARGIN_TOP;
    svg.push_str(&format!(
        "  <line x1=\"{x0:.2}\" y1=\"{y0:.2}\" x2=\"{x1:.2}\" y2=\"{y0:.2}\" stroke=\"#333333\" stroke-width=\"1\"/>\n"
    ));
    svg.push_str(&format!(
        "  <line x1=\"{x0:.2}\" y1=\"{y0:.2}\" x2=\"{x0:.2}\" y2=\"{y1:.2}\" stroke=\"#333333\" stroke-width=\"1\"/>\n"
    ));

    // Ticks with grid lines.
    for t in frame.x_ticks() {
        let px = frame.to_px_x(t);
        svg.push_str(&format!(
            "  <line x1=\"{px:.2}\" y1=\"{y0:.2}\" x2=\"{px:.2}\" y2=\"{y1:.2}\" stroke=\"#e4e4e4\" stroke-width=\"1\"/>\n"
        ));
        svg.push_str(&format!(
            "  <line x1=\"{px:.2}\" y1=\"{y0:.2}\" x2=\"{px:.2}\" y2=\"{:.2}\" stroke=\"#333333\" stroke-width=\"1\"/>\n",
            y0 + 5.0
        ));
        svg.push_str(&format!(
            "  <text x=\"{px:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-family=\"monospace\" \
             font-size=\"12\" fill=\"#333333\">{t:.1}</text>\n",
            y0 + 20.0
        ));
    }
    for t in frame.y_ticks() {
        let py = frame.to_px_y(t);
        svg.push_str(&format!(
            "  <line x1=\"{x0:.2}\" y1=\"{py:.2}\" x2=\"{x1:.2}\" y2=\"{py:.2}\" stroke=\"#e4e4e4\" stroke-width=\"1\"/>\n"
        ));
        svg.push_str(&format!(
            "  <line x1=\"{:.2}\" y1=\"{py:.2}\" x2=\"{x0:.2}\" y2=\"{py:.2}\" stroke=\"#333333\" stroke-width=\"1\"/>\n",
            x0 - 5.0
        ));
        svg.push_str(&format!(
            "  <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\" font-family=\"monospace\" \
             font-size=\"12\" fill=\"#333333\">{t:.1}</text>\n",
            x0 - 9.0,
            py + 4.0
        ));
    }

    // Axis labels.
    svg.push_str(&format!(
        "  <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-family=\"monospace\" \
         font-size=\"13\" fill=\"#222222\">{}</text>\n",
        (x0 + x1) / 2.0,
        HEIGHT - 14.0,
        xml_escape(x_label)
    ));
    svg.push_str(&format!(
        "  <text x=\"18\" y=\"{:.2}\" text-anchor=\"middle\" font-family=\"monospace\" \
         font-size=\"13\" fill=\"#222222\" transform=\"rotate(-90 18 {:.2})\">{}</text>\n",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        xml_escape(y_label)
    ));

    // Legend, top-right inside the frame.
    for (i, s) in series.iter().enumerate() {
        let ly = y1 + 14.0 + 18.0 * i as f64;
        let lx = x1 - 170.0;
        svg.push_str(&format!(
            "  <rect x=\"{lx:.2}\" y=\"{:.2}\" width=\"12\" height=\"12\" fill=\"{}\"/>\n",
            ly - 10.0,
            s.color
        ));
        svg.push_str(&format!(
            "  <text x=\"{:.2}\" y=\"{ly:.2}\" font-family=\"monospace\" font-size=\"12\" \
             fill=\"#222222\">{}</text>\n",
            lx + 18.0,
            xml_escape(s.name)
        ));
    }
    svg
}

/// Polyline chart with point markers; one polyline per series.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series<'_>]) -> String {
    let frame = Frame::fit(series);
    let mut svg = chart_open(title, x_label, y_label, &frame, series);
    for s in series {
        if s.points.len() > 1 {
            let pts: Vec<String> = s
                .points
                .iter()
                .map(|&(x, y)| format!("{:.2},{:.2}", frame.to_px_x(x), frame.to_px_y(y)))
                .collect();
            svg.push_str(&format!(
                "  <polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"/>\n",
                pts.join(" "),
                s.color
            ));
        }
        for &(x, y) in s.points {
            svg.push_str(&format!(
                "  <circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{}\"/>\n",
                frame.to_px_x(x),
                frame.to_px_y(y),
                s.color
            ));
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// Scatter chart with a dashed identity line for truth-vs-estimate reading.
pub fn scatter_plot(title: &str, x_label: &str, y_label: &str, series: &[Series<'_>]) -> String {
    let frame = Frame::fit(series);
    let mut svg = chart_open(title, x_label, y_label, &frame, series);

    // y = x reference across the shared span of both axes.
    let lo = frame.x_min.max(frame.y_min);
    let hi = frame.x_max.min(frame.y_max);
    if hi > lo {
        svg.push_str(&format!(
            "  <line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#777777\" \
             stroke-width=\"1\" stroke-dasharray=\"6 4\"/>\n",
            frame.to_px_x(lo),
            frame.to_px_y(lo),
            frame.to_px_x(hi),
            frame.to_px_y(hi)
        ));
    }
    for s in series {
        for &(x, y) in s.points {
            svg.push_str(&format!(
                "  <circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"{}\" fill-opacity=\"0.75\"/>\n",
                frame.to_px_x(x),
                frame.to_px_y(y),
                s.color
            ));
        }
    }
    svg.push_str("</svg>\n");
    svg
}
