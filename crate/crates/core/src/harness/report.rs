//! SVG line charts of a training log.

use std::io::BufRead;
use std::path::Path;

use plotters::prelude::*;

use crate::error::{Error, Result};

use super::train::LogLine;

/// Parses a JSON-lines training log, skipping blank lines.
pub fn read_log(reader: impl BufRead) -> Result<Vec<LogLine>> {
    let mut lines = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            lines.push(serde_json::from_str(&line)?);
        }
    }
    Ok(lines)
}

/// `(step, total loss)` for every optimizer step.
pub fn loss_series(log: &[LogLine]) -> Vec<(f64, f64)> {
    log.iter()
        .filter_map(|l| match l {
            LogLine::Step { step, loss, .. } => Some((*step as f64, loss.total)),
            _ => None,
        })
        .collect()
}

/// `(epoch, jitter)` for every epoch that probed jitter.
pub fn jitter_series(log: &[LogLine]) -> Vec<(f64, f64)> {
    log.iter()
        .filter_map(|l| match l {
            LogLine::Epoch { epoch, jitter: Some(j), .. } => Some((*epoch as f64, *j)),
            _ => None,
        })
        .collect()
}

fn bounds(points: &[(f64, f64)]) -> ((f64, f64), (f64, f64)) {
    let fold = |f: fn(&(f64, f64)) -> f64| {
        points.iter().map(f).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    };
    let pad = |(lo, hi): (f64, f64)| {
        if !lo.is_finite() {
            (0.0, 1.0)
        } else if hi - lo < 1e-12 {
            (lo - 0.5, hi + 0.5)
        } else {
            (lo, hi + 0.05 * (hi - lo))
        }
    };
    (pad(fold(|p| p.0)), pad(fold(|p| p.1)))
}

fn draw_err<E: std::error::Error + Send + Sync>(e: DrawingAreaErrorKind<E>) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

fn panel<DB: DrawingBackend>(area: &DrawingArea<DB, plotters::coord::Shift>, title: &str, x_label: &str, points: &[(f64, f64)], color: RGBColor) -> Result<()>
where
    DB::ErrorType: 'static,
{
    let ((x0, x1), (y0, y1)) = bounds(points);
    let mut chart = ChartBuilder::on(area)
        .caption(title, ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(32)
        .y_label_area_size(48)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(draw_err)?;
    chart.configure_mesh().x_desc(x_label).draw().map_err(draw_err)?;
    chart.draw_series(LineSeries::new(points.iter().copied(), &color)).map_err(draw_err)?;
    Ok(())
}

/// Renders the loss curve and, when present, the jitter curve into one SVG document.
pub fn render_svg(log: &[LogLine]) -> Result<String> {
    let loss = loss_series(log);
    let jitter = jitter_series(log);
    let panels = if jitter.is_empty() { 1 } else { 2 };
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (720, 320 * panels)).into_drawing_area();
        root.fill(&WHITE).map_err(draw_err)?;
        let areas = root.split_evenly((panels as usize, 1));
        panel(&areas[0], "training loss", "step", &loss, BLUE)?;
        if panels == 2 {
            panel(&areas[1], "temporal jitter (m)", "epoch", &jitter, RED)?;
        }
        root.present().map_err(draw_err)?;
    }
    Ok(svg)
}

/// Reads the log at `log_path` and writes the chart to `svg_path`.
pub fn write_report(log_path: impl AsRef<Path>, svg_path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::open(log_path)?;
    let log = read_log(std::io::BufReader::new(file))?;
    std::fs::write(svg_path, render_svg(&log)?)?;
    Ok(())
}
