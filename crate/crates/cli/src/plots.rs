//! Plot emission: class mask-density heatmaps, image/GT/prediction overlay
//! grids, and error-percentage histograms with the outlier line.

use std::path::Path;

use image::{ImageBuffer, Rgb, RgbImage};
use ndarray::Array2;
use plotters::prelude::*;

use cxseg_core::error::{Error, Result};
use cxseg_core::metrics::ErrorHistogram;

fn save_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    img.save(path).map_err(|e| Error::Image(e))
}

/// Mask-density heatmap: density 0 → black, 1 → full green.
pub fn write_heatmap(path: &Path, density: &Array2<f32>) -> Result<()> {
    let (h, w) = density.dim();
    let img: RgbImage = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let d = density[(y as usize, x as usize)].clamp(0.0, 1.0);
        Rgb([0, (d * 255.0).round() as u8, 0])
    });
    save_rgb(path, &img)
}

/// One overlay panel: grayscale scan with ground truth tinted green and the
/// prediction tinted red (overlap shows yellow).
fn overlay_panel(
    scan: &Array2<f32>,
    gt: Option<&Array2<u8>>,
    pred: Option<&Array2<u8>>,
) -> RgbImage {
    let (h, w) = scan.dim();
    ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let p = (y as usize, x as usize);
        let base = (scan[p].clamp(0.0, 1.0) * 255.0).round() as u8;
        let mut px = [base, base, base];
        if gt.is_some_and(|m| m[p] == 1) {
            px[1] = px[1].max(200);
        }
        if pred.is_some_and(|m| m[p] == 1) {
            px[0] = px[0].max(200);
        }
        Rgb(px)
    })
}

/// Rows of (scan, ground truth, prediction) rendered as a three-column
/// comparison grid.
pub fn write_overlay_grid(
    path: &Path,
    rows: &[(Array2<f32>, Array2<u8>, Array2<u8>)],
) -> Result<()> {
    let first = rows
        .first()
        .ok_or_else(|| Error::data("overlay grid needs at least one row"))?;
    let (h, w) = first.0.dim();
    let pad = 2u32;
    let cols = 3u32;
    let total_w = cols * (w as u32 + pad) + pad;
    let total_h = rows.len() as u32 * (h as u32 + pad) + pad;
    let mut canvas: RgbImage = ImageBuffer::from_pixel(total_w, total_h, Rgb([30, 30, 30]));
    for (r, (scan, gt, pred)) in rows.iter().enumerate() {
        if scan.dim() != (h, w) {
            return Err(Error::ShapeMismatch {
                expected: format!("{h}x{w}"),
                got: format!("{:?}", scan.dim()),
            });
        }
        let panels = [
            overlay_panel(scan, None, None),
            overlay_panel(scan, Some(gt), None),
            overlay_panel(scan, Some(gt), Some(pred)),
        ];
        for (c, panel) in panels.iter().enumerate() {
            let ox = pad + c as u32 * (w as u32 + pad);
            let oy = pad + r as u32 * (h as u32 + pad);
            image::imageops::replace(&mut canvas, panel, ox as i64, oy as i64);
        }
    }
    save_rgb(path, &canvas)
}

/// Error-percentage histogram with a vertical line at the outlier threshold.
pub fn write_histogram(path: &Path, hist: &ErrorHistogram) -> Result<()> {
    let plot_err = |e: String| Error::Numeric(format!("plot failed: {e}"));
    let max_count = hist.buckets.iter().copied().max().unwrap_or(0).max(1);
    let x_max = (hist.buckets.len() as f64 * hist.bucket_width)
        .max(hist.outlier_threshold * 1.25);

    let root = BitMapBackend::new(path, (640, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(e.to_string()))?;
    let mut chart = ChartBuilder::on(&root)
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(44)
        .caption("Per-image error percentage", ("sans-serif", 18))
        .build_cartesian_2d(0.0..x_max, 0usize..max_count + 1)
        .map_err(|e| plot_err(e.to_string()))?;
    chart
        .configure_mesh()
        .x_desc("% pixels misclassified")
        .y_desc("images")
        .draw()
        .map_err(|e| plot_err(e.to_string()))?;
    chart
        .draw_series(hist.buckets.iter().enumerate().map(|(i, &count)| {
            let x0 = i as f64 * hist.bucket_width;
            let x1 = x0 + hist.bucket_width;
            Rectangle::new([(x0, 0), (x1, count)], BLUE.mix(0.6).filled())
        }))
        .map_err(|e| plot_err(e.to_string()))?;
    chart
        .draw_series(std::iter::once(PathElement::new(
            vec![
                (hist.outlier_threshold, 0),
                (hist.outlier_threshold, max_count + 1),
            ],
            RED.stroke_width(2),
        )))
        .map_err(|e| plot_err(e.to_string()))?;
    root.present().map_err(|e| plot_err(e.to_string()))?;
    Ok(())
}
