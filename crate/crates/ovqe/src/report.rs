//! CSV tables and SVG plots.

use std::path::Path;

use ovqe_core::metrics::{DeltaPsnr, RdCurves};
use ovqe_core::train::LossRecord;
use plotters::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Serialize)]
struct PsnrRow {
    frame: usize,
    baseline_db: f64,
    enhanced_db: f64,
    delta_db: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BdRateRow {
    pub sequence: String,
    pub anchor: String,
    pub test: String,
    pub bd_rate_percent: f64,
}

#[derive(Debug, Serialize)]
struct RdRow {
    qp: i32,
    bitrate_kbps: f64,
    baseline_db: f64,
    enhanced_db: f64,
}

#[derive(Debug, Serialize)]
struct LossRow {
    step: usize,
    loss: f64,
}

/// Writes `header` then `rows`; the header is present even with no rows.
pub fn write_rows<R: Serialize>(path: &Path, header: &[&str], rows: impl IntoIterator<Item = R>) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| Error::Report(format!("{}: {e}", path.display())))?;
    w.write_record(header).map_err(|e| Error::Report(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Report(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Per-frame table: frame, baseline_db, enhanced_db, delta_db.
pub fn write_psnr_csv(path: &Path, d: &DeltaPsnr) -> Result<()> {
    write_rows(
        path,
        &["frame", "baseline_db", "enhanced_db", "delta_db"],
        d.per_frame.iter().enumerate().map(|(i, &delta)| PsnrRow {
            frame: i,
            baseline_db: d.decoded.per_frame[i],
            enhanced_db: d.enhanced.per_frame[i],
            delta_db: delta,
        }),
    )
}

pub fn write_bdrate_csv(path: &Path, rows: &[BdRateRow]) -> Result<()> {
    write_rows(path, &["sequence", "anchor", "test", "bd_rate_percent"], rows.iter().cloned())
}

pub fn write_rd_csv(path: &Path, c: &RdCurves) -> Result<()> {
    write_rows(
        path,
        &["qp", "bitrate_kbps", "baseline_db", "enhanced_db"],
        (0..c.qps.len()).map(|i| RdRow {
            qp: c.qps[i],
            bitrate_kbps: c.baseline[i].bitrate_kbps,
            baseline_db: c.baseline[i].psnr_db,
            enhanced_db: c.enhanced[i].psnr_db,
        }),
    )
}

pub fn write_loss_csv(path: &Path, losses: &[LossRecord]) -> Result<()> {
    write_rows(path, &["step", "loss"], losses.iter().map(|r| LossRow { step: r.step, loss: r.loss }))
}

/// One named polyline.
pub struct Series<'a> {
    pub label: &'a str,
    pub points: Vec<(f64, f64)>,
}

fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-3);
    (lo - pad, hi + pad)
}

/// Renders `series` as an SVG line chart with markers.
pub fn line_plot(path: &Path, title: &str, x_label: &str, y_label: &str, series: &[Series<'_>]) -> Result<()> {
    let err = |e: &dyn std::fmt::Display| Error::Report(format!("{}: {e}", path.display()));
    let xr = padded_range(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let yr = padded_range(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| err(&e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(16)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(xr.0..xr.1, yr.0..yr.1)
        .map_err(|e| err(&e))?;
    chart.configure_mesh().x_desc(x_label).y_desc(y_label).draw().map_err(|e| err(&e))?;
    for (i, s) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        let pts: Vec<(f64, f64)> = s.points.iter().copied().filter(|p| p.0.is_finite() && p.1.is_finite()).collect();
        chart
            .draw_series(LineSeries::new(pts.clone(), color.stroke_width(2)))
            .map_err(|e| err(&e))?
            .label(s.label)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
        chart.draw_series(pts.iter().map(|&p| Circle::new(p, 3, color.filled()))).map_err(|e| err(&e))?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| err(&e))?;
    root.present().map_err(|e| err(&e))?;
    Ok(())
}

pub fn plot_psnr(path: &Path, title: &str, d: &DeltaPsnr) -> Result<()> {
    let pts = |v: &[f64]| v.iter().enumerate().map(|(i, &y)| (i as f64, y)).collect();
    line_plot(
        path,
        title,
        "frame",
        "PSNR (dB)",
        &[
            Series { label: "baseline", points: pts(&d.decoded.per_frame) },
            Series { label: "enhanced", points: pts(&d.enhanced.per_frame) },
        ],
    )
}

pub fn plot_rd(path: &Path, title: &str, c: &RdCurves) -> Result<()> {
    let pts = |v: &[ovqe_core::metrics::RdPoint]| v.iter().map(|p| (p.bitrate_kbps, p.psnr_db)).collect();
    line_plot(
        path,
        title,
        "bitrate (kbps)",
        "PSNR (dB)",
        &[Series { label: "baseline", points: pts(&c.baseline) }, Series { label: "enhanced", points: pts(&c.enhanced) }],
    )
}

pub fn plot_loss(path: &Path, losses: &[LossRecord]) -> Result<()> {
    line_plot(
        path,
        "training loss",
        "step",
        "Charbonnier loss",
        &[Series { label: "loss", points: losses.iter().map(|r| (r.step as f64, r.loss)).collect() }],
    )
}
