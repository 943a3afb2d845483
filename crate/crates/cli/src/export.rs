//! CSV, JSON and SVG artifacts of a run.

use std::fmt::Write as _;
use std::path::Path;

use mhect_core::analysis::BoundReport;
use mhect_core::integrate::{fmt_sig17, output_along, Trajectory};
use mhect_core::mhe::EstimationRun;
use mhect_core::sysmodel::{PiecewiseSignal, SystemModel};

use crate::CliResult;

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 48.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Style {
    Line,
    Dashed,
    Markers,
}

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub style: Style,
}

impl Series {
    pub fn new(label: impl Into<String>, points: Vec<(f64, f64)>, style: Style) -> Self {
        Self { label: label.into(), points, style }
    }
}

/// Minimal polyline chart.
#[derive(Debug, Clone)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub series: Vec<Series>,
}

impl Plot {
    pub fn new(title: impl Into<String>, x_label: impl Into<String>) -> Self {
        Self { title: title.into(), x_label: x_label.into(), series: Vec::new() }
    }

    pub fn with(mut self, s: Series) -> Self {
        self.series.push(s);
        self
    }

    fn ranges(&self) -> ((f64, f64), (f64, f64)) {
        let pts = self.series.iter().flat_map(|s| s.points.iter()).filter(|(x, y)| x.is_finite() && y.is_finite());
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in pts {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            return ((0.0, 1.0), (0.0, 1.0));
        }
        let pad = |lo: f64, hi: f64| if hi - lo > 0.0 { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
        let (y0, y1) = pad(y0, y1);
        let dy = 0.05 * (y1 - y0);
        (pad(x0, x1), (y0 - dy, y1 + dy))
    }

    pub fn to_svg(&self) -> String {
        let ((x0, x1), (y0, y1)) = self.ranges();
        let (pw, ph) = (WIDTH - 2.0 * MARGIN, HEIGHT - 2.0 * MARGIN);
        let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * ph;

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#, WIDTH / 2.0, esc(&self.title));
        let _ = writeln!(
            s,
            r#"<rect x="{MARGIN}" y="{MARGIN}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                sx(xv),
                HEIGHT - MARGIN + 14.0,
                tick(xv)
            );
            let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, MARGIN - 4.0, sy(yv) + 4.0, tick(yv));
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            WIDTH / 2.0,
            HEIGHT - 10.0,
            esc(&self.x_label)
        );
        for (k, series) in self.series.iter().enumerate() {
            let color = COLORS[k % COLORS.len()];
            let pts = series.points.iter().filter(|(x, y)| x.is_finite() && y.is_finite());
            match series.style {
                Style::Markers => {
                    for &(x, y) in pts {
                        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="{color}"/>"#, sx(x), sy(y));
                    }
                }
                style => {
                    let coords: Vec<String> = pts.map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
                    let dash = if style == Style::Dashed { r#" stroke-dasharray="5,3""# } else { "" };
                    let _ = writeln!(
                        s,
                        r#"<polyline fill="none" stroke="{color}" stroke-width="1.2"{dash} points="{}"/>"#,
                        coords.join(" ")
                    );
                }
            }
            let ly = MARGIN + 14.0 + 14.0 * k as f64;
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{ly:.1}" text-anchor="end" fill="{color}">{}</text>"#,
                WIDTH - MARGIN - 6.0,
                esc(&series.label)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.1e}")
    } else {
        format!("{v:.2}")
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn signal_points(s: &PiecewiseSignal, i: usize) -> Vec<(f64, f64)> {
    // Two points per piece so the steps stay visible.
    s.values()
        .iter()
        .enumerate()
        .flat_map(|(k, v)| {
            let t = s.t0() + s.dt() * k as f64;
            [(t, v[i]), (t + s.dt(), v[i])]
        })
        .collect()
}

fn trajectory_points(x: &Trajectory, i: usize) -> Vec<(f64, f64)> {
    x.states().iter().enumerate().map(|(k, v)| (x.t0() + x.dt() * k as f64, v[i])).collect()
}

/// Disturbance, sampling times, states against estimates and outputs, and the
/// estimation error.
pub fn run_plots(run: &EstimationRun) -> Vec<(&'static str, Plot)> {
    let mut out = Vec::new();
    let n = run.chi_hat.len();
    if let Some(truth) = &run.truth {
        let mut p = Plot::new("disturbance", "t");
        for i in 0..truth.w.dim() {
            p = p.with(Series::new(format!("w{}", i + 1), signal_points(&truth.w, i), Style::Line));
        }
        out.push(("disturbance.svg", p));
    }

    let mut prev = 0.0;
    let gaps = run
        .sampling
        .times()
        .iter()
        .map(|&t| {
            let g = t - prev;
            prev = t;
            (t, g)
        })
        .collect();
    out.push(("sampling.svg", Plot::new("sampling times (gap to previous)", "t_i").with(Series::new("gap", gaps, Style::Markers))));

    let mut p = Plot::new("states, estimates and outputs", "t");
    for i in 0..n {
        if let Some(truth) = &run.truth {
            p = p.with(Series::new(format!("x{}", i + 1), trajectory_points(&truth.x, i), Style::Line));
        }
        p = p.with(Series::new(format!("x̂{}", i + 1), trajectory_points(&run.estimate, i), Style::Dashed));
    }
    for i in 0..run.y.dim() {
        p = p.with(Series::new(format!("y{}", i + 1), signal_points(&run.y, i), Style::Line));
    }
    out.push(("states.svg", p));

    if let Some(truth) = &run.truth {
        let err = run
            .estimate
            .states()
            .iter()
            .zip(truth.x.states())
            .enumerate()
            .map(|(k, (xh, x))| (run.estimate.t0() + run.estimate.dt() * k as f64, (x - xh).norm()))
            .collect();
        out.push(("error.svg", Plot::new("estimation error |x − x̂|", "t").with(Series::new("error", err, Style::Line))));
    }
    out
}

/// `estimate.csv`, `samples.csv`, `truth.csv` when simulated, `bounds.csv`
/// with a report, and the plots.
pub fn write_run(dir: &Path, run: &EstimationRun, report: Option<&BoundReport>) -> CliResult<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("estimate.csv"), run.estimate_csv())?;
    std::fs::write(dir.join("samples.csv"), run.samples_csv())?;
    if let Some(csv) = run.truth_csv() {
        std::fs::write(dir.join("truth.csv"), csv)?;
    }
    if let Some(rep) = report {
        std::fs::write(dir.join("bounds.csv"), rep.to_csv())?;
    }
    for (name, plot) in run_plots(run) {
        std::fs::write(dir.join(name), plot.to_svg())?;
    }
    Ok(())
}

/// `t,x1..xn,w1..wq,y1..yp` of an open-loop simulation.
pub fn simulation_csv(
    model: &SystemModel,
    x: &Trajectory,
    u: &PiecewiseSignal,
    w: &PiecewiseSignal,
) -> CliResult<String> {
    let y = output_along(model, x, u, w)?;
    let mut out = String::from("t");
    for (name, d) in [("x", model.state_dim()), ("w", model.dist_dim()), ("y", model.output_dim())] {
        for i in 1..=d {
            let _ = write!(out, ",{name}{i}");
        }
    }
    out.push('\n');
    for k in 0..y.len() {
        let t = x.t0() + x.dt() * k as f64;
        out.push_str(&fmt_sig17(t));
        for v in x.states()[k].iter().chain(w.eval(t)?.iter()).chain(y.values()[k].iter()) {
            let _ = write!(out, ",{}", fmt_sig17(*v));
        }
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_has_one_polyline_per_line_series() {
        let p = Plot::new("a < b", "t")
            .with(Series::new("one", vec![(0.0, 1.0), (1.0, 2.0)], Style::Line))
            .with(Series::new("two", vec![(0.0, 0.0), (1.0, f64::NAN)], Style::Dashed))
            .with(Series::new("dots", vec![(0.5, 0.5)], Style::Markers));
        let svg = p.to_svg();
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches("<circle").count(), 1);
        assert!(svg.contains("a &lt; b"));
        assert!(!svg.contains("NaN"));
    }

    #[test]
    fn empty_plot_still_renders() {
        assert!(Plot::new("empty", "t").to_svg().contains("</svg>"));
    }
}
