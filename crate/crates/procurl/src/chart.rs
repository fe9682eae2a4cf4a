//! SVG learning-curve charts from metrics CSVs: per metric, the mean over
//! seeds with a ±1 standard-error band, one series per strategy, smoothed
//! over a small window of evaluation snapshots.

use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Clone, Debug)]
pub struct ChartOptions {
    pub out_dir: PathBuf,
    /// Moving-average window over evaluation snapshots (1 = no smoothing).
    pub smooth_window: usize,
}

const METRICS: [(&str, usize); 2] = [("mean_target_return", 2), ("mean_distance_to_target", 3)];
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

#[derive(Clone, Debug)]
struct ParsedRow {
    seed: u64,
    env_steps: u64,
    values: [Option<f64>; 2],
    strategy: String,
}

fn parse_metrics_file(path: &Path) -> Result<Vec<ParsedRow>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read '{}': {e}", path.display())))?;
    let mut lines = text.lines().enumerate();
    let header = lines
        .next()
        .ok_or_else(|| Error::Config(format!("'{}' is empty", path.display())))?
        .1;
    if header != crate::run::METRICS_HEADER {
        return Err(Error::Config(format!(
            "'{}' row 1: unexpected header '{header}'",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        let rowno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::Config(format!(
                "'{}' row {rowno}: expected 6 fields, got {}",
                path.display(),
                fields.len()
            )));
        }
        let bad = |what: &str| {
            Error::Config(format!("'{}' row {rowno}: bad {what}", path.display()))
        };
        let seed: u64 = fields[0].parse().map_err(|_| bad("seed"))?;
        let env_steps: u64 = fields[1].parse().map_err(|_| bad("env_steps"))?;
        let mut values = [None, None];
        for (slot, &(name, col)) in METRICS.iter().enumerate() {
            if fields[col].is_empty() {
                continue;
            }
            let v: f64 = fields[col]
                .parse()
                .map_err(|_| bad(name))?;
            values[slot] = Some(v);
        }
        rows.push(ParsedRow {
            seed,
            env_steps,
            values,
            strategy: fields[4].to_string(),
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug)]
struct Series {
    strategy: String,
    /// Mean env_steps per snapshot ordinal.
    xs: Vec<f64>,
    means: Vec<f64>,
    /// Standard error of the mean (0 with a single seed).
    errs: Vec<f64>,
}

/// Aligns rows by snapshot ordinal within each (strategy, seed) sequence and
/// aggregates across seeds.
fn build_series(rows: &[ParsedRow], metric_slot: usize) -> Vec<Series> {
    let mut by_strategy: BTreeMap<String, BTreeMap<u64, Vec<(u64, f64)>>> = BTreeMap::new();
    for row in rows {
        if let Some(v) = row.values[metric_slot] {
            by_strategy
                .entry(row.strategy.clone())
                .or_default()
                .entry(row.seed)
                .or_default()
                .push((row.env_steps, v));
        }
    }
    let mut out = Vec::new();
    for (strategy, seeds) in by_strategy {
        let n_snapshots = seeds.values().map(|v| v.len()).min().unwrap_or(0);
        if n_snapshots == 0 {
            continue;
        }
        let mut xs = Vec::with_capacity(n_snapshots);
        let mut means = Vec::with_capacity(n_snapshots);
        let mut errs = Vec::with_capacity(n_snapshots);
        let n = seeds.len() as f64;
        for i in 0..n_snapshots {
            let step_mean = seeds.values().map(|v| v[i].0 as f64).sum::<f64>() / n;
            let mean = seeds.values().map(|v| v[i].1).sum::<f64>() / n;
            let err = if seeds.len() > 1 {
                let var = seeds
                    .values()
                    .map(|v| (v[i].1 - mean).powi(2))
                    .sum::<f64>()
                    / (n - 1.0);
                (var / n).sqrt()
            } else {
                0.0
            };
            xs.push(step_mean);
            means.push(mean);
            errs.push(err);
        }
        out.push(Series {
            strategy,
            xs,
            means,
            errs,
        });
    }
    out
}

fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    if window <= 1 {
        return values.to_vec();
    }
    values
        .iter()
        .enumerate()
        .map(|(i, _)| {
            let lo = i.saturating_sub(window - 1);
            let span = &values[lo..=i];
            span.iter().sum::<f64>() / span.len() as f64
        })
        .collect()
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 55.0;

fn render_svg(metric: &str, series: &[Series], window: usize) -> String {
    let smoothed: Vec<(String, Vec<f64>, Vec<f64>, Vec<f64>)> = series
        .iter()
        .map(|s| {
            (
                s.strategy.clone(),
                s.xs.clone(),
                smooth(&s.means, window),
                smooth(&s.errs, window),
            )
        })
        .collect();
    let mut x_max = 0.0f64;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for (_, xs, means, errs) in &smoothed {
        for (i, &x) in xs.iter().enumerate() {
            x_max = x_max.max(x);
            y_min = y_min.min(means[i] - errs[i]);
            y_max = y_max.max(means[i] + errs[i]);
        }
    }
    if !y_min.is_finite() || !y_max.is_finite() {
        y_min = 0.0;
        y_max = 1.0;
    }
    if (y_max - y_min).abs() < 1e-12 {
        y_max = y_min + 1.0;
    }
    let pad = (y_max - y_min) * 0.05;
    y_min -= pad;
    y_max += pad;
    let x_max = x_max.max(1.0);

    let px = |x: f64| MARGIN_L + x / x_max * (WIDTH - MARGIN_L - MARGIN_R);
    let py = |y: f64| HEIGHT - MARGIN_B - (y - y_min) / (y_max - y_min) * (HEIGHT - MARGIN_T - MARGIN_B);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(
        svg,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{metric}</text>"#,
        WIDTH / 2.0
    );
    // Axes.
    let _ = writeln!(
        svg,
        r#"<line x1="{MARGIN_L}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        HEIGHT - MARGIN_B,
        WIDTH - MARGIN_R,
        HEIGHT - MARGIN_B
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{MARGIN_L}" y1="{MARGIN_T}" x2="{MARGIN_L}" y2="{}" stroke="black"/>"#,
        HEIGHT - MARGIN_B
    );
    for k in 0..=5 {
        let xv = x_max * k as f64 / 5.0;
        let x = px(xv);
        let _ = writeln!(
            svg,
            r#"<line x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{}" stroke="black"/>"#,
            HEIGHT - MARGIN_B,
            HEIGHT - MARGIN_B + 5.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{x:.2}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle">{xv:.0}</text>"#,
            HEIGHT - MARGIN_B + 18.0
        );
        let yv = y_min + (y_max - y_min) * k as f64 / 5.0;
        let y = py(yv);
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{y:.2}" x2="{MARGIN_L}" y2="{y:.2}" stroke="black"/>"#,
            MARGIN_L - 5.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="end">{yv:.3}</text>"#,
            MARGIN_L - 8.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="13" text-anchor="middle">env steps</text>"#,
        (MARGIN_L + WIDTH - MARGIN_R) / 2.0,
        HEIGHT - 12.0
    );

    for (k, (strategy, xs, means, errs)) in smoothed.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        // Error band: upper edge forward, lower edge back.
        let mut band = String::new();
        for (i, &x) in xs.iter().enumerate() {
            let _ = write!(band, "{:.2},{:.2} ", px(x), py(means[i] + errs[i]));
        }
        for (i, &x) in xs.iter().enumerate().rev() {
            let _ = write!(band, "{:.2},{:.2} ", px(x), py(means[i] - errs[i]));
        }
        let _ = writeln!(
            svg,
            r#"<polygon points="{}" fill="{color}" fill-opacity="0.15" stroke="none"/>"#,
            band.trim_end()
        );
        let mut line = String::new();
        for (i, &x) in xs.iter().enumerate() {
            let _ = write!(line, "{:.2},{:.2} ", px(x), py(means[i]));
        }
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            line.trim_end()
        );
        // Legend entry.
        let ly = MARGIN_T + 16.0 * k as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{ly:.2}" x2="{}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#,
            WIDTH - MARGIN_R - 150.0,
            WIDTH - MARGIN_R - 120.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{:.2}" font-family="sans-serif" font-size="12">{strategy}</text>"#,
            WIDTH - MARGIN_R - 114.0,
            ly + 4.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Reads one or more metrics CSVs (e.g. one per strategy) and writes one SVG
/// per metric into the output directory. Metrics with no values are skipped
/// with a warning. Returns the written paths.
pub fn emit_charts(csv_paths: &[PathBuf], opts: &ChartOptions) -> Result<Vec<PathBuf>> {
    if csv_paths.is_empty() {
        return Err(Error::Config("no metrics files given".into()));
    }
    let mut rows = Vec::new();
    for path in csv_paths {
        rows.extend(parse_metrics_file(path)?);
    }
    std::fs::create_dir_all(&opts.out_dir)?;
    let mut written = Vec::new();
    for (slot, &(metric, _)) in METRICS.iter().enumerate() {
        let series = build_series(&rows, slot);
        if series.is_empty() {
            log::warn!("metric '{metric}' has no values; chart omitted");
            eprintln!("warning: metric '{metric}' has no values; chart omitted");
            continue;
        }
        let svg = render_svg(metric, &series, opts.smooth_window.max(1));
        let path = opts.out_dir.join(format!("{metric}.svg"));
        std::fs::write(&path, svg)?;
        written.push(path);
    }
    Ok(written)
}
