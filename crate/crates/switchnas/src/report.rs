//! CSV and SVG report emission.
//!
//! CSVs are the authoritative outputs; the SVGs are plotting conveniences
//! rendered with bare line/scatter primitives so reporting needs no
//! external tooling. Everything here is deterministic: same inputs, same
//! bytes.

/// One series of (x, y) points.
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub color: &'static str,
    /// Draw a polyline through the points (otherwise scatter only).
    pub line: bool,
    /// Dash the polyline (used for Pareto front outlines).
    pub dashed: bool,
}

pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 440.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 24.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 56.0;

pub const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn nice_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(1e-12);
    let raw_step = span / 5.0;
    let mag = 10f64.powf(raw_step.log10().floor());
    let norm = raw_step / mag;
    let step = mag * if norm < 1.5 { 1.0 } else if norm < 3.5 { 2.0 } else if norm < 7.5 { 5.0 } else { 10.0 };
    let start = (lo / step).ceil() * step;
    let mut ticks = Vec::new();
    let mut t = start;
    while t <= hi + 1e-12 {
        ticks.push(t);
        t += step;
    }
    ticks
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if v.abs() >= 1000.0 {
        format!("{v:.0}")
    } else if v.abs() >= 1.0 {
        format!("{v:.2}").trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.3}").trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

impl Plot {
    /// Render the whole plot as an SVG document.
    pub fn render(&self) -> String {
        let all: Vec<(f64, f64)> = self.series.iter().flat_map(|s| s.points.iter().copied()).collect();
        let (mut x_lo, mut x_hi) = all
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.0), hi.max(p.0)));
        let (mut y_lo, mut y_hi) = all
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
        if !x_lo.is_finite() {
            (x_lo, x_hi) = (0.0, 1.0);
        }
        if !y_lo.is_finite() {
            (y_lo, y_hi) = (0.0, 1.0);
        }
        if x_lo == x_hi {
            x_lo -= 0.5;
            x_hi += 0.5;
        }
        if y_lo == y_hi {
            y_lo -= 0.5;
            y_hi += 0.5;
        }
        let pad_x = (x_hi - x_lo) * 0.05;
        let pad_y = (y_hi - y_lo) * 0.05;
        x_lo -= pad_x;
        x_hi += pad_x;
        y_lo -= pad_y;
        y_hi += pad_y;

        let sx = |x: f64| MARGIN_L + (x - x_lo) / (x_hi - x_lo) * (WIDTH - MARGIN_L - MARGIN_R);
        let sy = |y: f64| HEIGHT - MARGIN_B - (y - y_lo) / (y_hi - y_lo) * (HEIGHT - MARGIN_T - MARGIN_B);

        let mut svg = String::new();
        svg.push_str(&format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
        ));
        svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">{}</text>\n",
            WIDTH / 2.0,
            xml_escape(&self.title)
        ));

        // Axes and ticks.
        let axis = format!(
            "<line x1=\"{l}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n<line x1=\"{l}\" y1=\"{t}\" x2=\"{l}\" y2=\"{b}\" stroke=\"black\"/>\n",
            l = MARGIN_L,
            r = WIDTH - MARGIN_R,
            t = MARGIN_T,
            b = HEIGHT - MARGIN_B
        );
        svg.push_str(&axis);
        for t in nice_ticks(x_lo, x_hi) {
            let x = sx(t);
            svg.push_str(&format!(
                "<line x1=\"{x:.1}\" y1=\"{b}\" x2=\"{x:.1}\" y2=\"{b2}\" stroke=\"black\"/>\n<text x=\"{x:.1}\" y=\"{ty}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
                fmt_tick(t),
                b = HEIGHT - MARGIN_B,
                b2 = HEIGHT - MARGIN_B + 5.0,
                ty = HEIGHT - MARGIN_B + 18.0,
            ));
        }
        for t in nice_ticks(y_lo, y_hi) {
            let y = sy(t);
            svg.push_str(&format!(
                "<line x1=\"{l2}\" y1=\"{y:.1}\" x2=\"{l}\" y2=\"{y:.1}\" stroke=\"black\"/>\n<text x=\"{tx}\" y=\"{ty:.1}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
                fmt_tick(t),
                l = MARGIN_L,
                l2 = MARGIN_L - 5.0,
                tx = MARGIN_L - 8.0,
                ty = y + 4.0,
            ));
        }
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n",
            (MARGIN_L + WIDTH - MARGIN_R) / 2.0,
            HEIGHT - 14.0,
            xml_escape(&self.x_label)
        ));
        svg.push_str(&format!(
            "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 16 {})\">{}</text>\n",
            (MARGIN_T + HEIGHT - MARGIN_B) / 2.0,
            (MARGIN_T + HEIGHT - MARGIN_B) / 2.0,
            xml_escape(&self.y_label)
        ));

        // Series.
        for s in &self.series {
            if s.line && s.points.len() > 1 {
                let path: Vec<String> =
                    s.points.iter().map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y))).collect();
                let dash = if s.dashed { " stroke-dasharray=\"6 4\"" } else { "" };
                svg.push_str(&format!(
                    "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"{dash}/>\n",
                    path.join(" "),
                    s.color
                ));
            }
            for &(x, y) in &s.points {
                svg.push_str(&format!(
                    "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"{}\"/>\n",
                    sx(x),
                    sy(y),
                    s.color
                ));
            }
        }

        // Legend.
        let mut ly = MARGIN_T + 4.0;
        for s in &self.series {
            svg.push_str(&format!(
                "<rect x=\"{x}\" y=\"{y}\" width=\"10\" height=\"10\" fill=\"{c}\"/>\n<text x=\"{tx}\" y=\"{ty}\" font-family=\"sans-serif\" font-size=\"11\">{label}</text>\n",
                x = WIDTH - MARGIN_R - 150.0,
                y = ly,
                c = s.color,
                tx = WIDTH - MARGIN_R - 136.0,
                ty = ly + 9.0,
                label = xml_escape(&s.label)
            ));
            ly += 16.0;
        }
        svg.push_str("</svg>\n");
        svg
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
