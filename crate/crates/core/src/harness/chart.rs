//! Self-contained SVG charts: per-n means with deviation bars on log axes.

use super::FitPoint;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 560.0;
const MARGIN_LEFT: f64 = 80.0;
const MARGIN_RIGHT: f64 = 30.0;
const MARGIN_TOP: f64 = 50.0;
const MARGIN_BOTTOM: f64 = 60.0;

struct LogAxis {
    min: f64,
    max: f64,
    offset: f64,
    span: f64,
    flip: bool,
}

impl LogAxis {
    fn new(values: impl Iterator<Item = f64>, offset: f64, span: f64, flip: bool) -> LogAxis {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for v in values.filter(|v| *v > 0.0) {
            min = min.min(v);
            max = max.max(v);
        }
        if !min.is_finite() {
            min = 1.0;
            max = 10.0;
        }
        if min == max {
            min /= 2.0;
            max *= 2.0;
        }
        LogAxis {
            min: min.ln(),
            max: max.ln(),
            offset,
            span,
            flip,
        }
    }

    fn place(&self, value: f64) -> f64 {
        let clamped = value.max(f64::MIN_POSITIVE);
        let t = (clamped.ln() - self.min) / (self.max - self.min);
        let t = t.clamp(-0.05, 1.05);
        if self.flip {
            self.offset + self.span * (1.0 - t)
        } else {
            self.offset + self.span * t
        }
    }
}

/// Renders points as a log-log scatter with a connecting line and
/// mean ± deviation bars.
pub fn chart_svg(title: &str, y_label: &str, points: &[FitPoint]) -> String {
    let plot_width = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_height = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let x_axis = LogAxis::new(points.iter().map(|p| p.n as f64), MARGIN_LEFT, plot_width, false);
    let y_values = points
        .iter()
        .flat_map(|p| [p.mean, p.mean + p.std_dev, (p.mean - p.std_dev).max(p.mean / 4.0)]);
    let y_axis = LogAxis::new(y_values, MARGIN_TOP, plot_height, true);
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" \
         font-family=\"monospace\" font-size=\"13\">\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{title}</text>\n",
        WIDTH / 2.0
    ));
    let x0 = MARGIN_LEFT;
    let x1 = WIDTH - MARGIN_RIGHT;
    let y0 = HEIGHT - MARGIN_BOTTOM;
    let y1 = MARGIN_TOP;
    svg.push_str(&format!(
        "<line x1=\"{x0:.1}\" y1=\"{y0:.1}\" x2=\"{x1:.1}\" y2=\"{y0:.1}\" stroke=\"black\"/>\n"
    ));
    svg.push_str(&format!(
        "<line x1=\"{x0:.1}\" y1=\"{y0:.1}\" x2=\"{x0:.1}\" y2=\"{y1:.1}\" stroke=\"black\"/>\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">n (log)</text>\n",
        (x0 + x1) / 2.0,
        HEIGHT - 14.0
    ));
    svg.push_str(&format!(
        "<text x=\"18\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {:.1})\">{y_label} (log)</text>\n",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    ));
    let mut path = String::new();
    for (i, p) in points.iter().enumerate() {
        let x = x_axis.place(p.n as f64);
        let y = y_axis.place(p.mean);
        path.push_str(if i == 0 { "M" } else { " L" });
        path.push_str(&format!("{x:.2} {y:.2}"));
        // deviation bar, clipped below to stay on the log scale
        let hi = y_axis.place(p.mean + p.std_dev);
        let lo = y_axis.place((p.mean - p.std_dev).max(p.mean / 4.0));
        svg.push_str(&format!(
            "<line x1=\"{x:.2}\" y1=\"{lo:.2}\" x2=\"{x:.2}\" y2=\"{hi:.2}\" stroke=\"steelblue\"/>\n"
        ));
        svg.push_str(&format!(
            "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"3.5\" fill=\"steelblue\"/>\n"
        ));
        svg.push_str(&format!(
            "<text x=\"{x:.2}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"11\">{}</text>\n",
            y0 + 18.0,
            p.n
        ));
    }
    svg.push_str(&format!(
        "<path d=\"{path}\" fill=\"none\" stroke=\"steelblue\" stroke-width=\"1.5\"/>\n"
    ));
    svg.push_str("</svg>\n");
    svg
}
