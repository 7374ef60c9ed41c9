//! Bounding-box to binary-mask rasterization.

use ndarray::Array2;

use crate::data::types::{AnnotationBox, TargetMask};
use crate::error::{Error, Result};

/// Scale a box from `original_size` (width, height) to a square
/// `target_size` raster and round to the nearest integer pixel grid.
///
/// The result is half-open: `[x_min, x_max) × [y_min, y_max)`.
pub fn scale_box(
    b: &AnnotationBox,
    original_size: (u32, u32),
    target_size: usize,
) -> (i64, i64, i64, i64) {
    let sx = target_size as f64 / original_size.0 as f64;
    let sy = target_size as f64 / original_size.1 as f64;
    let x0 = (b.x_min as f64 * sx).round() as i64;
    let x1 = (b.x_max as f64 * sx).round() as i64;
    let y0 = (b.y_min as f64 * sy).round() as i64;
    let y1 = (b.y_max as f64 * sy).round() as i64;
    (x0, y0, x1, y1)
}

/// Rasterize the union of all finding boxes of one image.
///
/// Coordinates are scaled from the original image size to the target raster,
/// rounded to the nearest integer, and interpreted half-open. No-finding
/// sentinel rows contribute nothing. A box that falls entirely outside the
/// raster after scaling is an error.
pub fn rasterize_mask(
    boxes: &[AnnotationBox],
    original_size: (u32, u32),
    target_size: usize,
) -> Result<TargetMask> {
    if target_size == 0 {
        return Err(Error::config("target_size must be positive"));
    }
    if original_size.0 == 0 || original_size.1 == 0 {
        return Err(Error::data("original_size must be positive"));
    }
    let mut values: Array2<u8> = Array2::zeros((target_size, target_size));
    let n = target_size as i64;
    for b in boxes {
        if b.is_no_finding() {
            continue;
        }
        let (x0, y0, x1, y1) = scale_box(b, original_size, target_size);
        let cx0 = x0.max(0);
        let cy0 = y0.max(0);
        let cx1 = x1.min(n);
        let cy1 = y1.min(n);
        if cx0 >= cx1 || cy0 >= cy1 {
            return Err(Error::data(format!(
                "box ({},{},{},{}) of class {} lies outside the {target_size}px raster after scaling",
                b.x_min, b.y_min, b.x_max, b.y_max, b.class_id
            )));
        }
        for y in cy0..cy1 {
            for x in cx0..cx1 {
                values[(y as usize, x as usize)] = 1;
            }
        }
    }
    Ok(TargetMask { values })
}

/// Rasterize only boxes of one class; used for specialized-model targets.
pub fn rasterize_class_mask(
    boxes: &[AnnotationBox],
    class_id: u8,
    original_size: (u32, u32),
    target_size: usize,
) -> Result<TargetMask> {
    let filtered: Vec<AnnotationBox> = boxes
        .iter()
        .filter(|b| b.class_id == class_id)
        .cloned()
        .collect();
    rasterize_mask(&filtered, original_size, target_size)
}
