//! Accuracy-vs-sparsity SVG plots from sweep CSVs: one line per series,
//! shaded ±1 std band.

use std::path::Path;

use plotters::prelude::*;

use crate::error::{CliError, CliResult};
use crate::sweep::{read_csv, summarize, Series};

/// Renders `csv` to an SVG at `out` and returns the plotted series.
pub fn emit_plot(csv: &Path, out: &Path) -> CliResult<Vec<Series>> {
    let rows = read_csv(csv)?;
    if rows.is_empty() {
        return Err(CliError::in_file(csv, "no rows to plot"));
    }
    let series = summarize(&rows);
    if series.is_empty() {
        return Err(CliError::in_file(csv, "no successful runs to plot"));
    }
    draw(&series, out).map_err(|e| CliError::io(out, e))?;
    Ok(series)
}

fn x_range(series: &[Series]) -> (f64, f64) {
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.sparsity));
    let (lo, hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
    let pad = if hi > lo { (hi - lo) * 0.05 } else { 0.05 };
    (lo - pad, hi + pad)
}

fn draw(series: &[Series], out: &Path) -> Result<(), Box<dyn std::error::Error>> {
    let root = SVGBackend::new(out, (800, 560)).into_drawing_area();
    root.fill(&WHITE)?;
    let (x0, x1) = x_range(series);
    let mut chart = ChartBuilder::on(&root)
        .caption("Test accuracy vs sparsity", ("sans-serif", 22))
        .margin(16)
        .x_label_area_size(44)
        .y_label_area_size(56)
        .build_cartesian_2d(x0..x1, 0.0..1.0)?;
    chart.configure_mesh().x_desc("sparsity").y_desc("test accuracy").draw()?;
    for (i, s) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        let upper = s.points.iter().map(|p| (p.sparsity, (p.mean + p.std).min(1.0)));
        let lower = s.points.iter().rev().map(|p| (p.sparsity, (p.mean - p.std).max(0.0)));
        chart.draw_series(std::iter::once(Polygon::new(upper.chain(lower).collect::<Vec<_>>(), color.mix(0.2).filled())))?;
        chart
            .draw_series(LineSeries::new(s.points.iter().map(|p| (p.sparsity, p.mean)), color.stroke_width(2)))?
            .label(s.label())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
        chart.draw_series(s.points.iter().map(|p| Circle::new((p.sparsity, p.mean), 3, color.filled())))?;
    }
    chart.configure_series_labels().position(SeriesLabelPosition::LowerLeft).border_style(BLACK).background_style(WHITE).draw()?;
    root.present()?;
    Ok(())
}
