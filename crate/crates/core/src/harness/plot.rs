//! Static SVG line charts of logged trajectories.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::simlog::{LogRow, SimLog};

const WIDTH: f64 = 900.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 150.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;
/// Longest polyline drawn per series; longer logs are decimated.
const MAX_POINTS: usize = 4000;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Debug, Clone)]
struct Series {
    label: String,
    points: Vec<(f64, f64)>,
    dashed: bool,
}

#[derive(Debug, Clone)]
struct Chart {
    title: String,
    y_label: String,
    log_y: bool,
    series: Vec<Series>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn nice_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut ticks = Vec::new();
    while t <= hi + 1e-9 * span {
        ticks.push(if t.abs() < 1e-12 * span { 0.0 } else { t });
        t += step;
    }
    ticks
}

impl Chart {
    fn new(title: &str, y_label: &str) -> Self {
        Self {
            title: title.into(),
            y_label: y_label.into(),
            log_y: false,
            series: Vec::new(),
        }
    }

    fn add(&mut self, label: impl Into<String>, points: Vec<(f64, f64)>, dashed: bool) {
        self.series.push(Series {
            label: label.into(),
            points,
            dashed,
        });
    }

    fn transformed(&self) -> Vec<Vec<(f64, f64)>> {
        self.series
            .iter()
            .map(|s| {
                let stride = s.points.len().div_ceil(MAX_POINTS).max(1);
                let last = s.points.len().saturating_sub(1);
                s.points
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| i % stride == 0 || *i == last)
                    .filter_map(|(_, &(x, y))| {
                        let y = if self.log_y {
                            (y > 0.0).then(|| y.log10())?
                        } else {
                            y
                        };
                        (x.is_finite() && y.is_finite()).then_some((x, y))
                    })
                    .collect()
            })
            .collect()
    }

    fn render(&self) -> Result<String> {
        let data = self.transformed();
        let all = data.iter().flatten();
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in all {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !(x1 > x0) {
            return Err(Error::EmptyOrDegenerateLog);
        }
        if !(y1 > y0) {
            let pad = if y0 == 0.0 { 1.0 } else { 0.1 * y0.abs() };
            y0 -= pad;
            y1 += pad;
        } else {
            let pad = 0.05 * (y1 - y0);
            y0 -= pad;
            y1 += pad;
        }
        let pw = WIDTH - MARGIN_L - MARGIN_R;
        let ph = HEIGHT - MARGIN_T - MARGIN_B;
        let sx = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| MARGIN_T + (y1 - y) / (y1 - y0) * ph;

        let mut svg = String::new();
        let w = &mut svg;
        // writing into a String cannot fail
        let _ = writeln!(
            w,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(w, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(
            w,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
            MARGIN_L + pw / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            w,
            r#"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );
        for t in nice_ticks(x0, x1) {
            let x = sx(t);
            let _ = writeln!(
                w,
                r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#ddd"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
                MARGIN_T,
                MARGIN_T + ph,
                MARGIN_T + ph + 16.0,
                fmt_tick(t)
            );
        }
        for t in nice_ticks(y0, y1) {
            let y = sy(t);
            let label = if self.log_y { format!("1e{}", fmt_tick(t)) } else { fmt_tick(t) };
            let _ = writeln!(
                w,
                r##"<line x1="{MARGIN_L}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{label}</text>"##,
                MARGIN_L + pw,
                MARGIN_L - 6.0,
                y + 4.0
            );
        }
        let _ = writeln!(
            w,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">t [s]</text>"#,
            MARGIN_L + pw / 2.0,
            HEIGHT - 10.0
        );
        let _ = writeln!(
            w,
            r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
            MARGIN_T + ph / 2.0,
            MARGIN_T + ph / 2.0,
            escape(&self.y_label)
        );
        for (i, (series, pts)) in self.series.iter().zip(&data).enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let dash = if series.dashed { r#" stroke-dasharray="6 4""# } else { "" };
            if !pts.is_empty() {
                let mut coords = String::with_capacity(pts.len() * 16);
                for &(x, y) in pts {
                    let _ = write!(coords, "{:.2},{:.2} ", sx(x), sy(y));
                }
                let _ = writeln!(
                    w,
                    r#"<polyline fill="none" stroke="{color}" stroke-width="1.2"{dash} points="{}"/>"#,
                    coords.trim_end()
                );
            }
            let ly = MARGIN_T + 14.0 + 18.0 * i as f64;
            let lx = MARGIN_L + pw + 12.0;
            let _ = writeln!(
                w,
                r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"{dash}/><text x="{:.2}" y="{:.2}">{}</text>"#,
                lx + 22.0,
                lx + 28.0,
                ly + 4.0,
                escape(&series.label)
            );
        }
        svg.push_str("</svg>\n");
        Ok(svg)
    }

    fn save(&self, path: PathBuf) -> Result<PathBuf> {
        fs::write(&path, self.render()?)?;
        Ok(path)
    }
}

fn fmt_tick(t: f64) -> String {
    let s = format!("{t:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

fn column<F: Fn(&LogRow) -> f64>(rows: &[LogRow], f: F) -> Vec<(f64, f64)> {
    rows.iter().map(|r| (r.t, f(r))).collect()
}

fn check(log: &SimLog) -> Result<()> {
    if log.len() < 2 {
        return Err(Error::EmptyOrDegenerateLog);
    }
    Ok(())
}

/// States, inputs with the saturation bound, and the semilog parameter error.
pub fn plot_adaptive_phase(log: &SimLog, u_max: Option<f64>, out_dir: &Path) -> Result<Vec<PathBuf>> {
    check(log)?;
    fs::create_dir_all(out_dir)?;
    let rows = log.rows();

    let mut states = Chart::new("States", "x");
    for i in 0..log.n_x() {
        states.add(format!("x_p[{}]", i + 1), column(rows, |r| r.x_p[i]), false);
        states.add(format!("x_m[{}]", i + 1), column(rows, |r| r.x_m[i]), true);
        states.add(format!("x_d[{}]", i + 1), column(rows, |r| r.x_d[i]), true);
    }

    let mut inputs = Chart::new("Inputs", "u");
    for i in 0..log.n_u() {
        inputs.add(format!("u[{}]", i + 1), column(rows, |r| r.u[i]), true);
        inputs.add(format!("sat(u)[{}]", i + 1), column(rows, |r| r.u_sat[i]), false);
    }
    if let Some(u_max) = u_max {
        let (t0, t1) = (rows[0].t, rows[rows.len() - 1].t);
        inputs.add("+u_max", vec![(t0, u_max), (t1, u_max)], true);
        inputs.add("-u_max", vec![(t0, -u_max), (t1, -u_max)], true);
    }

    let mut theta = Chart::new("Parameter estimation error", "|Θ̃|");
    theta.log_y = true;
    theta.add("|Θ̃|_F", column(rows, |r| r.theta_err), false);

    Ok(vec![
        states.save(out_dir.join("states.svg"))?,
        inputs.save(out_dir.join("inputs.svg"))?,
        theta.save(out_dir.join("theta_error.svg"))?,
    ])
}

/// Overlays of a receding-horizon run against its oracle. An empty log pair
/// produces no files.
pub fn plot_comparison(mpc: &SimLog, oracle: &SimLog, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if mpc.is_empty() && oracle.is_empty() {
        return Ok(Vec::new());
    }
    check(mpc)?;
    check(oracle)?;
    fs::create_dir_all(out_dir)?;
    let (a, b) = (mpc.rows(), oracle.rows());

    let mut states = Chart::new("Receding horizon vs oracle: states", "x");
    for i in 0..mpc.n_x() {
        states.add(format!("x_p[{}]", i + 1), column(a, |r| r.x_p[i]), false);
        states.add(format!("x_p*[{}]", i + 1), column(b, |r| r.x_p[i]), true);
    }
    let mut inputs = Chart::new("Receding horizon vs oracle: inputs", "u");
    for i in 0..mpc.n_u() {
        inputs.add(format!("u[{}]", i + 1), column(a, |r| r.u_sat[i]), false);
        inputs.add(format!("u*[{}]", i + 1), column(b, |r| r.u_sat[i]), true);
    }
    Ok(vec![
        states.save(out_dir.join("mpc_states.svg"))?,
        inputs.save(out_dir.join("mpc_inputs.svg"))?,
    ])
}

/// All plots for a run; the comparison plots are skipped when no second
/// phase was logged.
pub fn emit_plots(
    log: &SimLog,
    comparison: Option<(&SimLog, &SimLog)>,
    u_max: Option<f64>,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let mut files = plot_adaptive_phase(log, u_max, out_dir)?;
    if let Some((mpc, oracle)) = comparison {
        files.extend(plot_comparison(mpc, oracle, out_dir)?);
    }
    Ok(files)
}
