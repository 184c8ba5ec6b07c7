//! Minimal deterministic SVG line plots.

use std::fmt::Write as _;

use zadiff::experiment::{to_db, SweepResult};

use crate::output::Provenance;

const WIDTH: f64 = 820.0;
const HEIGHT: f64 = 520.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 190.0;
const TOP: f64 = 50.0;
const BOTTOM: f64 = 60.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2",
];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    /// Highlighted point drawn as a filled circle.
    pub marker: Option<(f64, f64)>,
}

pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

/// Tick spacing from the 1-2-5 ladder giving at most `max_ticks` intervals.
fn nice_step(span: f64, max_ticks: usize) -> f64 {
    let raw = span.max(1e-12) / max_ticks as f64;
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|&s| s >= raw)
        .unwrap_or(10.0 * mag)
}

fn ticks(lo: f64, hi: f64, max_ticks: usize) -> (f64, f64, Vec<f64>) {
    let step = nice_step(hi - lo, max_ticks);
    let start = (lo / step).floor() * step;
    let end = (hi / step).ceil() * step;
    let count = ((end - start) / step).round() as usize;
    let t = (0..=count).map(|i| start + i as f64 * step).collect();
    (start, end, t)
}

fn label(v: f64) -> String {
    let s = format!("{v:.2}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

impl LinePlot {
    pub fn render(&self, provenance: &Provenance) -> String {
        let all = self.series.iter().flat_map(|s| s.points.iter());
        let (mut x0, mut x1, mut y0, mut y1) = (
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
        );
        for &(x, y) in all.filter(|p| p.0.is_finite() && p.1.is_finite()) {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        if x1 - x0 < 1e-12 {
            (x0, x1) = (x0 - 1.0, x1 + 1.0);
        }
        if y1 - y0 < 1e-9 {
            (y0, y1) = (y0 - 0.5, y1 + 0.5);
        }
        let (x0, x1, xt) = ticks(x0, x1, 10);
        let (y0, y1, yt) = ticks(y0, y1, 10);
        let pw = WIDTH - LEFT - RIGHT;
        let ph = HEIGHT - TOP - BOTTOM;
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;

        let mut svg = String::new();
        writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        )
        .unwrap();
        writeln!(
            svg,
            "<!-- config_sha256={} seed={} -->",
            provenance.config_sha256, provenance.seed
        )
        .unwrap();
        writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
        writeln!(
            svg,
            r#"<text x="{:.1}" y="28" text-anchor="middle" font-size="15">{}</text>"#,
            LEFT + pw / 2.0,
            self.title
        )
        .unwrap();

        for &x in &xt {
            let px = sx(x);
            writeln!(
                svg,
                r##"<line x1="{px:.2}" y1="{TOP:.2}" x2="{px:.2}" y2="{:.2}" stroke="#e0e0e0"/><text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
                TOP + ph,
                TOP + ph + 18.0,
                label(x)
            )
            .unwrap();
        }
        for &y in &yt {
            let py = sy(y);
            writeln!(
                svg,
                r##"<line x1="{LEFT:.2}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="#e0e0e0"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
                LEFT + pw,
                LEFT - 6.0,
                py + 4.0,
                label(y)
            )
            .unwrap();
        }
        writeln!(
            svg,
            r#"<rect x="{LEFT:.2}" y="{TOP:.2}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="black"/>"#
        )
        .unwrap();
        writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            HEIGHT - 15.0,
            self.x_label
        )
        .unwrap();
        writeln!(
            svg,
            r#"<text transform="translate(22 {:.2}) rotate(-90)" text-anchor="middle">{}</text>"#,
            TOP + ph / 2.0,
            self.y_label
        )
        .unwrap();

        for (i, s) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let pts: Vec<String> = s
                .points
                .iter()
                .filter(|p| p.1.is_finite())
                .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            writeln!(
                svg,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.6" points="{}"/>"#,
                pts.join(" ")
            )
            .unwrap();
            if let Some((mx, my)) = s.marker {
                writeln!(
                    svg,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="4.5" fill="{color}" stroke="black"/>"#,
                    sx(mx),
                    sy(my)
                )
                .unwrap();
            }
            let ly = TOP + 12.0 + 20.0 * i as f64;
            let lx = LEFT + pw + 15.0;
            writeln!(
                svg,
                r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
                lx + 24.0,
                lx + 30.0,
                ly + 4.0,
                s.label
            )
            .unwrap();
        }
        svg.push_str("</svg>\n");
        svg
    }
}

/// One curve per attraction value: steady MSD in dB against `N_s`, with the
/// minimizing `N_s` marked.
pub fn sweep_plot(sweep: &SweepResult, provenance: &Provenance) -> String {
    let series = sweep
        .rho_list
        .iter()
        .zip(&sweep.minimizers)
        .map(|(&rho, min)| Series {
            label: format!("rho = {rho:.0e}"),
            points: sweep
                .cells
                .iter()
                .filter(|c| c.rho == rho)
                .map(|c| (c.ns as f64, c.result.steady_msd_db))
                .collect(),
            marker: Some((min.ns_star as f64, min.min_steady_msd_db)),
        })
        .collect();
    LinePlot {
        title: "Steady-state network MSD vs number of sparsity-aware nodes".into(),
        x_label: "N_s".into(),
        y_label: "network MSD (dB)".into(),
        series,
    }
    .render(provenance)
}

/// Learning curve in dB, thinned to at most ~1000 points.
pub fn learning_curve_plot(trace: &[f64], provenance: &Provenance) -> String {
    let stride = (trace.len() / 1000).max(1);
    let points = trace
        .iter()
        .enumerate()
        .step_by(stride)
        .map(|(i, &v)| (i as f64, to_db(v)))
        .collect();
    LinePlot {
        title: "Network MSD learning curve".into(),
        x_label: "iteration".into(),
        y_label: "network MSD (dB)".into(),
        series: vec![Series {
            label: "ensemble mean".into(),
            points,
            marker: None,
        }],
    }
    .render(provenance)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tick_ladder() {
        assert_eq!(nice_step(10.0, 10), 1.0);
        assert_eq!(nice_step(7.0, 10), 1.0);
        assert_eq!(nice_step(30.0, 10), 5.0);
        assert_eq!(nice_step(0.3, 10), 0.05);
        let (lo, hi, t) = ticks(-63.3, -43.5, 10);
        assert_eq!((lo, hi), (-64.0, -42.0));
        assert_eq!(t.len(), 12);
    }

    #[test]
    fn renders_series_and_markers() {
        let p = Provenance {
            config_sha256: "h".into(),
            seed: 1,
        };
        let plot = LinePlot {
            title: "t".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            series: vec![
                Series {
                    label: "a".into(),
                    points: vec![(0.0, -60.0), (3.0, -61.0)],
                    marker: Some((3.0, -61.0)),
                },
                Series {
                    label: "b".into(),
                    points: vec![(0.0, -60.0), (3.0, -59.0)],
                    marker: None,
                },
            ],
        };
        let svg = plot.render(&p);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches("<circle").count(), 1);
        assert!(svg.contains("config_sha256=h"));
        assert_eq!(svg, plot.render(&p));
    }
}
