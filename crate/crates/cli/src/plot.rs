//! Minimal SVG line charts from CSV columns.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{CliError, CliResult};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Linear,
    /// Logarithmic y axis; non-positive values are dropped.
    SemilogY,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotSpec {
    pub title: String,
    /// Column used for x; `None` plots against the row index.
    pub x: Option<String>,
    /// Columns drawn as series; empty means every column except `x`.
    pub series: Vec<String>,
    pub scale: Scale,
    /// SVG path; defaults to the CSV path with an `.svg` extension.
    pub output: Option<PathBuf>,
}

impl PlotSpec {
    pub fn new(title: &str, x: Option<&str>, scale: Scale) -> Self {
        Self {
            title: title.to_owned(),
            x: x.map(str::to_owned),
            series: Vec::new(),
            scale,
            output: None,
        }
    }

    pub fn series(mut self, columns: &[&str]) -> Self {
        self.series = columns.iter().map(|c| (*c).to_owned()).collect();
        self
    }

    pub fn output(mut self, path: impl Into<PathBuf>) -> Self {
        self.output = Some(path.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotOutcome {
    pub svg_path: PathBuf,
    /// Points removed because they were non-finite, or non-positive on a log axis.
    pub dropped: usize,
}

struct Series {
    name: String,
    points: Vec<(f64, f64)>,
}

fn read_table(path: &Path) -> CliResult<(Vec<String>, Vec<Vec<f64>>)> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| CliError::config(format!("cannot open {}: {e}", path.display())))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_owned)
        .collect();
    let mut columns = vec![Vec::new(); header.len()];
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        for (c, field) in record.iter().enumerate() {
            let field = field.trim();
            if field.is_empty() {
                columns[c].push(f64::NAN);
                continue;
            }
            let v = field.parse::<f64>().map_err(|_| {
                CliError::config(format!("{}: row {} column `{}` is not a number: {field}", path.display(), row + 2, header[c]))
            })?;
            columns[c].push(v);
        }
    }
    Ok((header, columns))
}

fn column<'a>(header: &[String], columns: &'a [Vec<f64>], name: &str, path: &Path) -> CliResult<&'a [f64]> {
    header
        .iter()
        .position(|h| h == name)
        .map(|i| columns[i].as_slice())
        .ok_or_else(|| CliError::config(format!("{} has no column `{name}`", path.display())))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn padded_range(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        (lo, hi)
    } else {
        let pad = if lo == 0.0 { 0.5 } else { 0.1 * lo.abs() };
        (lo - pad, hi + pad)
    }
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        "0".to_owned()
    } else if (1e-3..1e4).contains(&v.abs()) {
        format!("{}", (v * 1e4).round() / 1e4)
    } else {
        format!("{v:.2e}")
    }
}

/// Renders the requested columns of `csv_path` as an SVG line chart.
///
/// Empty cells read as missing and are dropped like non-finite values.
pub fn render_plot(csv_path: &Path, spec: &PlotSpec) -> CliResult<PlotOutcome> {
    let (header, columns) = read_table(csv_path)?;
    let rows = columns.first().map_or(0, Vec::len);
    let xs: Vec<f64> = match &spec.x {
        Some(name) => column(&header, &columns, name, csv_path)?.to_vec(),
        None => (0..rows).map(|i| i as f64).collect(),
    };
    let names: Vec<String> = if spec.series.is_empty() {
        header.iter().filter(|h| Some(*h) != spec.x.as_ref()).cloned().collect()
    } else {
        spec.series.clone()
    };
    if names.is_empty() {
        return Err(CliError::config(format!("{} has no columns to plot", csv_path.display())));
    }

    let log = spec.scale == Scale::SemilogY;
    let mut dropped = 0;
    let mut series = Vec::with_capacity(names.len());
    for name in names {
        let ys = column(&header, &columns, &name, csv_path)?;
        let mut points = Vec::with_capacity(ys.len());
        for (&x, &y) in xs.iter().zip(ys) {
            let keep = x.is_finite() && y.is_finite() && (!log || y > 0.0);
            if keep {
                points.push((x, if log { y.log10() } else { y }));
            } else {
                dropped += 1;
            }
        }
        series.push(Series { name, points });
    }

    let all = || series.iter().flat_map(|s| s.points.iter());
    let (x_lo, x_hi) = all().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let (y_lo, y_hi) = all().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
    let ((x_lo, x_hi), (y_lo, y_hi)) = if x_lo.is_finite() {
        let y = if log { (y_lo.floor(), y_hi.ceil()) } else { (y_lo, y_hi) };
        (padded_range(x_lo, x_hi), padded_range(y.0, y.1))
    } else {
        ((0.0, 1.0), (0.0, 1.0))
    };

    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x_lo) / (x_hi - x_lo) * plot_w;
    let sy = |y: f64| TOP + (y_hi - y) / (y_hi - y_lo) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        LEFT + plot_w / 2.0,
        escape(&spec.title)
    );
    let _ = writeln!(
        svg,
        r#"<rect class="frame" x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );

    for k in 0..=4 {
        let x = x_lo + (x_hi - x_lo) * k as f64 / 4.0;
        let px = sx(x);
        let _ = writeln!(
            svg,
            r#"<line x1="{px:.2}" y1="{}" x2="{px:.2}" y2="{}" stroke="black"/><text x="{px:.2}" y="{}" text-anchor="middle">{}</text>"#,
            TOP + plot_h,
            TOP + plot_h + 5.0,
            TOP + plot_h + 20.0,
            tick_label(x)
        );
    }
    let y_ticks: Vec<f64> = if log {
        let (lo, hi) = (y_lo.ceil() as i64, y_hi.floor() as i64);
        let stride = ((hi - lo) / 8 + 1).max(1);
        (lo..=hi).step_by(stride as usize).map(|e| e as f64).collect()
    } else {
        (0..=4).map(|k| y_lo + (y_hi - y_lo) * k as f64 / 4.0).collect()
    };
    for y in y_ticks {
        let py = sy(y);
        let label = if log { format!("1e{}", y as i64) } else { tick_label(y) };
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{py:.2}" x2="{LEFT}" y2="{py:.2}" stroke="black"/><text x="{}" y="{:.2}" text-anchor="end">{label}</text>"#,
            LEFT - 5.0,
            LEFT - 8.0,
            py + 4.0
        );
    }
    if let Some(x) = &spec.x {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            LEFT + plot_w / 2.0,
            HEIGHT - 8.0,
            escape(x)
        );
    }

    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let points: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(
            svg,
            r#"<polyline data-series="{}" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            escape(&s.name),
            points.join(" ")
        );
        let ly = TOP + 10.0 + 18.0 * i as f64;
        let lx = WIDTH - RIGHT + 12.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text class="legend" x="{}" y="{}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(&s.name)
        );
    }
    svg.push_str("</svg>\n");

    let svg_path = spec.output.clone().unwrap_or_else(|| csv_path.with_extension("svg"));
    fs::write(&svg_path, svg).map_err(|e| CliError::io(&svg_path, e))?;
    Ok(PlotOutcome { svg_path, dropped })
}

/// Vertex coordinates of the `polyline` for `series` in an SVG produced by [`render_plot`].
pub fn polyline_points(svg: &str, series: &str) -> Option<Vec<(f64, f64)>> {
    let marker = format!(r#"<polyline data-series="{}""#, escape(series));
    let line = svg.lines().find(|l| l.starts_with(&marker))?;
    let start = line.find(r#"points=""#)? + 8;
    let end = start + line[start..].find('"')?;
    line[start..end]
        .split_whitespace()
        .map(|p| {
            let (x, y) = p.split_once(',')?;
            Some((x.parse().ok()?, y.parse().ok()?))
        })
        .collect()
}
