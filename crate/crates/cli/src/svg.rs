//! Minimal SVG emitters for the two figure kinds the harness produces:
//! line plots for sweeps and heatmaps for coherence maps. Coordinates are
//! written with fixed precision so a rerun reproduces the file exactly.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 72.0;
const MARGIN_RIGHT: f64 = 24.0;
const MARGIN_TOP: f64 = 42.0;
const MARGIN_BOTTOM: f64 = 56.0;

const PALETTE: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

/// Pads a degenerate or empty range so the scale transform stays finite.
fn padded_range(lo: f64, hi: f64) -> (f64, f64) {
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if lo == hi {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

fn tick_label(value: f64) -> String {
    let text = format!("{value:.3}");
    let text = text.trim_end_matches('0').trim_end_matches('.');
    if text.is_empty() || text == "-" {
        "0".into()
    } else {
        text.into()
    }
}

impl LinePlot {
    pub fn render(&self) -> String {
        let finite: Vec<(f64, f64)> = self
            .series
            .iter()
            .flat_map(|s| s.points.iter().copied())
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .collect();
        let (x_lo, x_hi) = padded_range(
            finite.iter().map(|p| p.0).fold(f64::INFINITY, f64::min),
            finite.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max),
        );
        let (y_lo, y_hi) = padded_range(
            finite.iter().map(|p| p.1).fold(f64::INFINITY, f64::min),
            finite.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max),
        );
        let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
        let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
        let to_x = |x: f64| MARGIN_LEFT + (x - x_lo) / (x_hi - x_lo) * plot_w;
        let to_y = |y: f64| MARGIN_TOP + plot_h - (y - y_lo) / (y_hi - y_lo) * plot_h;

        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
        );
        let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="24" font-family="sans-serif" font-size="15" text-anchor="middle">{}</text>"#,
            WIDTH / 2.0,
            escape(&self.title)
        );

        // Axes, ticks, and grid.
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let gx = MARGIN_LEFT + f * plot_w;
            let gy = MARGIN_TOP + plot_h - f * plot_h;
            let xv = x_lo + f * (x_hi - x_lo);
            let yv = y_lo + f * (y_hi - y_lo);
            let _ = writeln!(
                out,
                r#"<line x1="{gx:.2}" y1="{:.2}" x2="{gx:.2}" y2="{:.2}" stroke="#dddddd"/>"#,
                MARGIN_TOP,
                MARGIN_TOP + plot_h
            );
            let _ = writeln!(
                out,
                r#"<line x1="{:.2}" y1="{gy:.2}" x2="{:.2}" y2="{gy:.2}" stroke="#dddddd"/>"#,
                MARGIN_LEFT,
                MARGIN_LEFT + plot_w
            );
            let _ = writeln!(
                out,
                r#"<text x="{gx:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#,
                MARGIN_TOP + plot_h + 18.0,
                tick_label(xv)
            );
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="end">{}</text>"#,
                MARGIN_LEFT - 6.0,
                gy + 4.0,
                tick_label(yv)
            );
        }
        let _ = writeln!(
            out,
            r#"<rect x="{:.2}" y="{:.2}" width="{plot_w:.2}" height="{plot_h:.2}" fill="none" stroke="black"/>"#,
            MARGIN_LEFT, MARGIN_TOP
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="13" text-anchor="middle">{}</text>"#,
            MARGIN_LEFT + plot_w / 2.0,
            HEIGHT - 14.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            out,
            r#"<text x="18" y="{:.2}" font-family="sans-serif" font-size="13" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
            MARGIN_TOP + plot_h / 2.0,
            MARGIN_TOP + plot_h / 2.0,
            escape(&self.y_label)
        );

        // Series polylines; non-finite points break the line into segments.
        for (si, series) in self.series.iter().enumerate() {
            let color = PALETTE[si % PALETTE.len()];
            let mut segment: Vec<String> = Vec::new();
            let mut flush = |seg: &mut Vec<String>, out: &mut String| {
                if seg.len() >= 2 {
                    let _ = writeln!(
                        out,
                        r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.8"/>"#,
                        seg.join(" ")
                    );
                }
                seg.clear();
            };
            for (x, y) in &series.points {
                if x.is_finite() && y.is_finite() {
                    segment.push(format!("{:.2},{:.2}", to_x(*x), to_y(*y)));
                } else {
                    flush(&mut segment, &mut out);
                }
            }
            flush(&mut segment, &mut out);
            for (x, y) in series.points.iter().filter(|(x, y)| x.is_finite() && y.is_finite()) {
                let _ = writeln!(
                    out,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="2.6" fill="{color}"/>"#,
                    to_x(*x),
                    to_y(*y)
                );
            }
            let ly = MARGIN_TOP + 14.0 + 16.0 * si as f64;
            let _ = writeln!(
                out,
                r#"<line x1="{:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="1.8"/>"#,
                MARGIN_LEFT + plot_w - 110.0,
                MARGIN_LEFT + plot_w - 86.0
            );
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11">{}</text>"#,
                MARGIN_LEFT + plot_w - 80.0,
                ly + 4.0,
                escape(&series.label)
            );
        }
        out.push_str("</svg>\n");
        out
    }
}

pub struct HeatMap {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    /// Cell centers along x, one per column.
    pub x: Vec<f64>,
    /// Cell centers along y, one per row.
    pub y: Vec<f64>,
    /// `values[row][col]`, row index matching `y`.
    pub values: Vec<Vec<f64>>,
}

/// Dark blue through teal to yellow, linear in the normalized value.
fn ramp(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let stops = [(13u8, 8u8, 95u8), (56, 136, 190), (253, 231, 55)];
    let (a, b, f) = if t < 0.5 {
        (stops[0], stops[1], t * 2.0)
    } else {
        (stops[1], stops[2], (t - 0.5) * 2.0)
    };
    let mix = |lo: u8, hi: u8| (lo as f64 + (hi as f64 - lo as f64) * f).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

impl HeatMap {
    pub fn render(&self) -> String {
        let rows = self.y.len();
        let cols = self.x.len();
        let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
        let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
        let finite: Vec<f64> = self
            .values
            .iter()
            .flatten()
            .copied()
            .filter(|v| v.is_finite())
            .collect();
        let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = if lo.is_finite() && hi > lo { (lo, hi) } else { (0.0, 1.0) };

        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
        );
        let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="24" font-family="sans-serif" font-size="15" text-anchor="middle">{}</text>"#,
            WIDTH / 2.0,
            escape(&self.title)
        );
        if rows > 0 && cols > 0 {
            let cell_w = plot_w / cols as f64;
            let cell_h = plot_h / rows as f64;
            for (r, row) in self.values.iter().enumerate() {
                for (c, value) in row.iter().enumerate() {
                    let t = if value.is_finite() { (value - lo) / (hi - lo) } else { 0.0 };
                    // Row 0 is drawn at the bottom, like an ascending y axis.
                    let _ = writeln!(
                        out,
                        r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                        MARGIN_LEFT + c as f64 * cell_w,
                        MARGIN_TOP + plot_h - (r + 1) as f64 * cell_h,
                        cell_w + 0.1,
                        cell_h + 0.1,
                        ramp(t)
                    );
                }
            }
            let label = |v: f64| tick_label(v);
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#,
                MARGIN_LEFT,
                MARGIN_TOP + plot_h + 18.0,
                label(self.x[0])
            );
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#,
                MARGIN_LEFT + plot_w,
                MARGIN_TOP + plot_h + 18.0,
                label(self.x[cols - 1])
            );
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="end">{}</text>"#,
                MARGIN_LEFT - 6.0,
                MARGIN_TOP + plot_h,
                label(self.y[0])
            );
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="end">{}</text>"#,
                MARGIN_LEFT - 6.0,
                MARGIN_TOP + 10.0,
                label(self.y[rows - 1])
            );
        }
        let _ = writeln!(
            out,
            r#"<rect x="{:.2}" y="{:.2}" width="{plot_w:.2}" height="{plot_h:.2}" fill="none" stroke="black"/>"#,
            MARGIN_LEFT, MARGIN_TOP
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="13" text-anchor="middle">{}</text>"#,
            MARGIN_LEFT + plot_w / 2.0,
            HEIGHT - 14.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            out,
            r#"<text x="18" y="{:.2}" font-family="sans-serif" font-size="13" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
            MARGIN_TOP + plot_h / 2.0,
            MARGIN_TOP + plot_h / 2.0,
            escape(&self.y_label)
        );
        out.push_str("</svg>\n");
        out
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_plot_renders_points_and_legend() {
        let plot = LinePlot {
            title: "title".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            series: vec![
                Series { label: "a".into(), points: vec![(1.0, 2.0), (2.0, 3.0), (3.0, 2.5)] },
                Series { label: "b".into(), points: vec![(1.0, 1.0), (2.0, 1.5), (3.0, 1.2)] },
            ],
        };
        let svg = plot.render();
        assert!(svg.starts_with("<svg "));
        assert!(svg.ends_with("</svg>\n"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches("<circle").count(), 6);
        assert!(svg.contains(">a</text>") && svg.contains(">b</text>"));
        assert_eq!(svg, plot.render());
    }

    #[test]
    fn nan_points_split_the_polyline() {
        let plot = LinePlot {
            title: String::new(),
            x_label: String::new(),
            y_label: String::new(),
            series: vec![Series {
                label: "s".into(),
                points: vec![(1.0, 1.0), (2.0, 1.1), (3.0, f64::NAN), (4.0, 0.9), (5.0, 1.0)],
            }],
        };
        let svg = plot.render();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches("<circle").count(), 4);
    }

    #[test]
    fn heatmap_draws_one_cell_per_value() {
        let map = HeatMap {
            title: "m".into(),
            x_label: "epoch".into(),
            y_label: "freq".into(),
            x: vec![0.0, 30.0, 60.0],
            y: vec![0.1, 0.2],
            values: vec![vec![0.0, 0.5, 1.0], vec![1.0, 0.2, 0.0]],
        };
        let svg = map.render();
        // 6 cells plus the frame and background rectangles.
        assert_eq!(svg.matches("<rect").count(), 8);
        assert!(svg.contains(&ramp(0.0)) && svg.contains(&ramp(1.0)));
    }

    #[test]
    fn ramp_ends_are_the_configured_stops() {
        assert_eq!(ramp(0.0), "#0d085f");
        assert_eq!(ramp(1.0), "#fde737");
        assert_eq!(ramp(-3.0), ramp(0.0));
        assert_eq!(ramp(9.0), ramp(1.0));
    }
}
