//! Minimal deterministic SVG line charts.
//!
//! One figure holds vertically stacked panels sharing the time axis; each
//! panel overlays several series as polylines. Coordinates are emitted
//! with fixed two-decimal precision, so figure text is a pure function of
//! the data.

const PANEL_WIDTH: f64 = 640.0;
const PANEL_HEIGHT: f64 = 220.0;
const MARGIN_LEFT: f64 = 64.0;
const MARGIN_RIGHT: f64 = 16.0;
const MARGIN_TOP: f64 = 28.0;
const MARGIN_BOTTOM: f64 = 30.0;

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub values: Vec<f64>,
    pub color: String,
    pub dashed: bool,
}

impl Series {
    pub fn new(label: &str, values: Vec<f64>, color: &str, dashed: bool) -> Self {
        Series { label: label.into(), values, color: color.into(), dashed }
    }
}

#[derive(Debug, Clone)]
pub struct Panel {
    pub title: String,
    pub series: Vec<Series>,
}

fn finite_range(series: &[Series]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for s in series {
        for &v in &s.values {
            if v.is_finite() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    if lo > hi {
        (0.0, 1.0)
    } else if lo == hi {
        (lo - 1.0, hi + 1.0)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

fn panel_svg(panel: &Panel, y_offset: f64, steps: usize) -> String {
    let (lo, hi) = finite_range(&panel.series);
    let plot_w = PANEL_WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = PANEL_HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let x_at = |t: usize| {
        let frac = if steps > 1 { t as f64 / (steps - 1) as f64 } else { 0.5 };
        MARGIN_LEFT + frac * plot_w
    };
    let y_at = |v: f64| y_offset + MARGIN_TOP + (hi - v) / (hi - lo) * plot_h;
    let mut out = String::new();
    out.push_str(&format!(
        "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{plot_w:.2}\" height=\"{plot_h:.2}\" \
         fill=\"none\" stroke=\"#444444\"/>\n",
        MARGIN_LEFT,
        y_offset + MARGIN_TOP
    ));
    out.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"13\" font-family=\"sans-serif\">{}</text>\n",
        MARGIN_LEFT,
        y_offset + MARGIN_TOP - 8.0,
        panel.title
    ));
    out.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" font-family=\"sans-serif\" \
         text-anchor=\"end\">{hi:.3}</text>\n",
        MARGIN_LEFT - 6.0,
        y_offset + MARGIN_TOP + 4.0
    ));
    out.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" font-family=\"sans-serif\" \
         text-anchor=\"end\">{lo:.3}</text>\n",
        MARGIN_LEFT - 6.0,
        y_offset + MARGIN_TOP + plot_h
    ));
    out.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" font-family=\"sans-serif\" \
         text-anchor=\"middle\">t</text>\n",
        MARGIN_LEFT + plot_w / 2.0,
        y_offset + PANEL_HEIGHT - 8.0
    ));
    out.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" font-family=\"sans-serif\" \
         text-anchor=\"end\">{}</text>\n",
        MARGIN_LEFT + plot_w,
        y_offset + PANEL_HEIGHT - 8.0,
        steps.saturating_sub(1)
    ));
    for (si, s) in panel.series.iter().enumerate() {
        let points: Vec<String> = s
            .values
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(t, &v)| format!("{:.2},{:.2}", x_at(t), y_at(v)))
            .collect();
        let dash = if s.dashed { " stroke-dasharray=\"6 3\"" } else { "" };
        out.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"{dash} points=\"{}\"/>\n",
            s.color,
            points.join(" ")
        ));
        let lx = MARGIN_LEFT + plot_w - 120.0;
        let ly = y_offset + MARGIN_TOP + 14.0 + 16.0 * si as f64;
        out.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"{}\" \
             stroke-width=\"1.5\"{dash}/>\n",
            lx,
            ly - 4.0,
            lx + 22.0,
            ly - 4.0,
            s.color
        ));
        out.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" font-family=\"sans-serif\">{}</text>\n",
            lx + 28.0,
            ly,
            s.label
        ));
    }
    out
}

/// Full figure: stacked panels over a shared time axis `0..steps-1`.
pub fn figure(title: &str, panels: &[Panel]) -> String {
    let steps = panels
        .iter()
        .flat_map(|p| p.series.iter().map(|s| s.values.len()))
        .max()
        .unwrap_or(0);
    let height = 22.0 + PANEL_HEIGHT * panels.len() as f64;
    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{PANEL_WIDTH:.0}\" height=\"{height:.0}\" \
         viewBox=\"0 0 {PANEL_WIDTH:.0} {height:.0}\">\n"
    ));
    out.push_str(&format!(
        "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n\
         <text x=\"{:.2}\" y=\"16\" font-size=\"14\" font-family=\"sans-serif\">{title}</text>\n",
        MARGIN_LEFT
    ));
    for (i, panel) in panels.iter().enumerate() {
        out.push_str(&panel_svg(panel, 22.0 + PANEL_HEIGHT * i as f64, steps));
    }
    out.push_str("</svg>\n");
    out
}

/// Figure overlaying true and estimated state components, one panel per
/// component.
pub fn state_overlay(
    title: &str,
    states_true: &[Vec<f64>],
    states_hat: &[Vec<f64>],
) -> String {
    let panels: Vec<Panel> = states_true
        .iter()
        .zip(states_hat)
        .enumerate()
        .map(|(i, (xt, xh))| Panel {
            title: format!("state component {i}"),
            series: vec![
                Series::new("true", xt.clone(), "#1f77b4", false),
                Series::new("estimate", xh.clone(), "#d62728", true),
            ],
        })
        .collect();
    figure(title, &panels)
}
