use std::path::{Path, PathBuf};

use plotters::prelude::*;

use crate::commands::{ABLATION_CSV, FINETUNE_LOG, METRICS_CSV};
use crate::error::{CliError, CliResult};

/// Columns of a numeric CSV. Cells that do not parse become NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| CliError::Usage(format!("{} is empty", path.display())))?
            .split(',')
            .map(str::to_string)
            .collect();
        let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
        Ok(Self { header, rows })
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.header.iter().position(|h| h == name)?;
        Some(
            self.rows
                .iter()
                .map(|r| r.get(i).and_then(|v| v.parse().ok()).unwrap_or(f64::NAN))
                .collect(),
        )
    }
}

fn plot_err(e: impl std::fmt::Display) -> CliError {
    CliError::Plot(e.to_string())
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-6);
    (lo - pad, hi + pad)
}

/// Line chart of `series` against `x`.
fn line_chart(path: &Path, title: &str, x_label: &str, x: &[f64], series: &[(&str, Vec<f64>)]) -> CliResult<()> {
    let root = SVGBackend::new(path, (800, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let (x0, x1) = range(x.iter().copied());
    let (y0, y1) = range(series.iter().flat_map(|(_, v)| v.iter().copied()));
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(56)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc(x_label).draw().map_err(plot_err)?;
    for (i, (name, ys)) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        let pts: Vec<(f64, f64)> = x.iter().copied().zip(ys.iter().copied()).filter(|(_, y)| y.is_finite()).collect();
        chart
            .draw_series(LineSeries::new(pts, color.stroke_width(2)))
            .map_err(plot_err)?
            .label(*name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

/// Grouped bars: one group per class, one bar per series.
fn bar_chart(path: &Path, title: &str, classes: usize, series: &[(String, Vec<f64>)]) -> CliResult<()> {
    let root = SVGBackend::new(path, (800, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(48)
        .build_cartesian_2d(0f64..classes as f64, 0f64..1.05f64)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("class")
        .y_desc("F1")
        .x_labels(classes + 1)
        .x_label_formatter(&|v| format!("{}", v.floor() as usize))
        .draw()
        .map_err(plot_err)?;
    let n = series.len().max(1) as f64;
    let width = 0.8 / n;
    for (i, (name, f1)) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(f1.iter().enumerate().filter(|(_, v)| v.is_finite()).map(|(c, &v)| {
                let left = c as f64 + 0.1 + i as f64 * width;
                Rectangle::new([(left, 0.0), (left + width, v)], color.filled())
            }))
            .map_err(plot_err)?
            .label(name.as_str())
            .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 12, y + 5)], color.filled()));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

/// Per-class F1 from a metric CSV: the rows whose class column is numeric.
fn class_f1(t: &Table) -> Vec<f64> {
    let f1 = t.column("f1").unwrap_or_default();
    t.rows
        .iter()
        .zip(f1)
        .filter(|(r, _)| r.first().is_some_and(|c| c.split(' ').next().is_some_and(|n| n.parse::<usize>().is_ok())))
        .map(|(_, f)| f)
        .collect()
}

/// Render whatever plots the CSVs in `run_dir` support. Returns the files written.
pub fn cmd_plot(run_dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut written = Vec::new();
    let loss = run_dir.join("loss.csv");
    if loss.is_file() {
        let t = Table::read(&loss)?;
        let x = t.column("epoch").unwrap_or_default();
        let series: Vec<(&str, Vec<f64>)> = ["L_G", "L_L", "L_total"]
            .into_iter()
            .filter_map(|c| t.column(c).map(|v| (c, v)))
            .collect();
        let out = run_dir.join("loss.svg");
        line_chart(&out, "pretraining loss", "epoch", &x, &series)?;
        written.push(out);
    }
    let ft = run_dir.join(FINETUNE_LOG);
    if ft.is_file() {
        let t = Table::read(&ft)?;
        let out = run_dir.join("finetune_loss.svg");
        line_chart(&out, "fine-tuning loss", "epoch", &t.column("epoch").unwrap_or_default(), &[("loss", t.column("loss").unwrap_or_default())])?;
        written.push(out);
    }
    let metrics = run_dir.join(METRICS_CSV);
    if metrics.is_file() {
        let f1 = class_f1(&Table::read(&metrics)?);
        let out = run_dir.join("f1.svg");
        bar_chart(&out, "per-class F1", f1.len(), &[("F1".to_string(), f1)])?;
        written.push(out);
    }
    let ablation = run_dir.join(ABLATION_CSV);
    if ablation.is_file() {
        let t = Table::read(&ablation)?;
        let cols: Vec<usize> = (0..t.header.len()).filter(|&i| t.header[i].starts_with("f1_")).collect();
        let series: Vec<(String, Vec<f64>)> = t
            .rows
            .iter()
            .map(|r| {
                let vals = cols.iter().map(|&i| r.get(i).and_then(|v| v.parse().ok()).unwrap_or(f64::NAN)).collect();
                (r.first().cloned().unwrap_or_default(), vals)
            })
            .collect();
        let out = run_dir.join("ablation_f1.svg");
        bar_chart(&out, "per-class F1 by configuration", cols.len(), &series)?;
        written.push(out);
    }
    if written.is_empty() {
        return Err(CliError::Usage(format!(
            "nothing to plot in {}: expected loss.csv, {FINETUNE_LOG}, {METRICS_CSV} or {ABLATION_CSV}",
            run_dir.display()
        )));
    }
    Ok(written)
}
