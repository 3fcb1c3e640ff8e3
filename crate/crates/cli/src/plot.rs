use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use cugro::continual::{read_csv, MetricsRow};

use crate::error::{CliError, CliResult};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN_LEFT: f64 = 64.0;
const MARGIN_RIGHT: f64 = 180.0;
const MARGIN_Y: f64 = 40.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    /// `(phase, value)` in phase order.
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotMetric {
    /// Mean return over the tasks evaluated after each phase.
    MeanReturn,
    /// Mean forgetting over the tasks evaluated after each phase.
    Forgetting,
}

impl PlotMetric {
    fn value(self, row: &MetricsRow) -> f64 {
        match self {
            PlotMetric::MeanReturn => row.mean_return,
            PlotMetric::Forgetting => row.forgetting,
        }
    }

    pub fn file_name(self) -> &'static str {
        match self {
            PlotMetric::MeanReturn => "mean_return.svg",
            PlotMetric::Forgetting => "forgetting.svg",
        }
    }

    fn title(self) -> &'static str {
        match self {
            PlotMetric::MeanReturn => "Average return over seen tasks",
            PlotMetric::Forgetting => "Average forgetting over seen tasks",
        }
    }
}

/// Legend label for a metrics file: its stem, or its directory's name when
/// the stem is the generic `metrics`.
pub fn label_for(path: &Path) -> String {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    if stem == "metrics" {
        if let Some(dir) = path.parent().and_then(|p| p.file_name()) {
            return dir.to_string_lossy().into_owned();
        }
    }
    stem
}

/// One series per run found in `rows`; a file holding several runs gets
/// one series per run, labelled with the run's settings.
pub fn series_from_rows(label: &str, rows: &[MetricsRow], metric: PlotMetric) -> Vec<Series> {
    let mut runs: BTreeMap<String, BTreeMap<u32, Vec<f64>>> = BTreeMap::new();
    for r in rows {
        let run = format!("{} lambda={} beta={} seed={}", r.variant, r.lambda, r.beta, r.seed);
        runs.entry(run)
            .or_default()
            .entry(r.phase)
            .or_default()
            .push(metric.value(r));
    }
    let single = runs.len() == 1;
    runs.into_iter()
        .map(|(run, phases)| Series {
            label: if single {
                label.to_string()
            } else {
                format!("{label} ({run})")
            },
            points: phases
                .into_iter()
                .map(|(p, v)| (p as f64, v.iter().sum::<f64>() / v.len() as f64))
                .collect(),
        })
        .collect()
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn nice_range(lo: f64, hi: f64) -> (f64, f64) {
    if (hi - lo).abs() < 1e-9 {
        let pad = lo.abs().max(1.0) * 0.1;
        return (lo - pad, hi + pad);
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

/// A standalone SVG line chart with one polyline per series.
pub fn render_svg(title: &str, y_label: &str, series: &[Series]) -> String {
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let ys = series.iter().flat_map(|s| s.points.iter().map(|p| p.1));
    let (x_lo, x_hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    let (y_lo, y_hi) = nice_range(
        ys.clone().fold(f64::INFINITY, f64::min),
        ys.fold(f64::NEG_INFINITY, f64::max),
    );
    let (x_lo, x_hi) = if x_hi > x_lo {
        (x_lo, x_hi)
    } else {
        (x_lo - 1.0, x_hi + 1.0)
    };
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - 2.0 * MARGIN_Y;
    let px = |x: f64| MARGIN_LEFT + (x - x_lo) / (x_hi - x_lo) * plot_w;
    let py = |y: f64| MARGIN_Y + (1.0 - (y - y_lo) / (y_hi - y_lo)) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        escape(title)
    );
    let (x0, y0, x1, y1) = (MARGIN_LEFT, MARGIN_Y + plot_h, MARGIN_LEFT + plot_w, MARGIN_Y);
    let _ = writeln!(svg, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(svg, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    let mut phase = x_lo.ceil();
    while phase <= x_hi {
        let x = px(phase);
        let _ = writeln!(
            svg,
            r#"<line x1="{x:.2}" y1="{y0}" x2="{x:.2}" y2="{}" stroke="black"/>"#,
            y0 + 4.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{x:.2}" y="{}" text-anchor="middle">{phase}</text>"#,
            y0 + 18.0
        );
        phase += 1.0;
    }
    for i in 0..=4 {
        let v = y_lo + (y_hi - y_lo) * i as f64 / 4.0;
        let y = py(v);
        let _ = writeln!(
            svg,
            r##"<line x1="{}" y1="{y:.2}" x2="{x1}" y2="{y:.2}" stroke="#dddddd"/>"##,
            x0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{:.2}" text-anchor="end">{v:.2}</text>"#,
            x0 - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">task phase</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 6.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        MARGIN_Y + plot_h / 2.0,
        MARGIN_Y + plot_h / 2.0,
        escape(y_label)
    );
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            points.join(" ")
        );
        for &(x, y) in &s.points {
            let _ = writeln!(
                svg,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                px(x),
                py(y)
            );
        }
        let ly = MARGIN_Y + 10.0 + 18.0 * i as f64;
        let lx = WIDTH - MARGIN_RIGHT + 16.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            lx + 18.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}">{}</text>"#,
            lx + 24.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Reads every metrics file and writes `mean_return.svg` and
/// `forgetting.svg` into `out_dir`.
pub fn plot_files(inputs: &[PathBuf], out_dir: &Path) -> CliResult<Vec<PathBuf>> {
    if inputs.is_empty() {
        return Err(CliError::Usage("plot needs at least one metrics file".into()));
    }
    let mut tables = Vec::with_capacity(inputs.len());
    for path in inputs {
        let rows = read_csv(path).map_err(|e| match e {
            cugro::Error::Table { line, message } => CliError::Core(cugro::Error::Table {
                line,
                message: format!("{}: {message}", path.display()),
            }),
            other => CliError::Core(other),
        })?;
        tables.push((label_for(path), rows));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let mut written = Vec::new();
    for metric in [PlotMetric::MeanReturn, PlotMetric::Forgetting] {
        let series: Vec<Series> = tables
            .iter()
            .flat_map(|(label, rows)| series_from_rows(label, rows, metric))
            .collect();
        let y_label = match metric {
            PlotMetric::MeanReturn => "mean return",
            PlotMetric::Forgetting => "forgetting",
        };
        let path = out_dir.join(metric.file_name());
        std::fs::write(&path, render_svg(metric.title(), y_label, &series)).map_err(|e| CliError::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
