//! DICOM ingestion: decode, rescale, invert MONOCHROME1, normalize, resize.

use std::path::Path;

use dicom_core::Tag;
use dicom_object::{open_file, FileDicomObject, InMemDicomObject};
use ndarray::Array2;

use crate::data::types::{ImageRecord, Source};
use crate::error::{Error, Result};

const ROWS: Tag = Tag(0x0028, 0x0010);
const COLUMNS: Tag = Tag(0x0028, 0x0011);
const BITS_ALLOCATED: Tag = Tag(0x0028, 0x0100);
const PIXEL_REPRESENTATION: Tag = Tag(0x0028, 0x0103);
const PHOTOMETRIC_INTERPRETATION: Tag = Tag(0x0028, 0x0004);
const SAMPLES_PER_PIXEL: Tag = Tag(0x0028, 0x0002);
const NUMBER_OF_FRAMES: Tag = Tag(0x0028, 0x0008);
const RESCALE_INTERCEPT: Tag = Tag(0x0028, 0x1052);
const RESCALE_SLOPE: Tag = Tag(0x0028, 0x1053);
const PIXEL_DATA: Tag = Tag(0x7FE0, 0x0010);

fn ingest_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Ingest {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

/// Bilinear resize with pixel-center alignment.
pub fn resize_bilinear(src: &Array2<f32>, target: usize) -> Array2<f32> {
    let (h, w) = src.dim();
    if h == target && w == target {
        return src.clone();
    }
    let sy = h as f32 / target as f32;
    let sx = w as f32 / target as f32;
    Array2::from_shape_fn((target, target), |(ty, tx)| {
        let fy = ((ty as f32 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f32);
        let fx = ((tx as f32 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f32);
        let y0 = fy.floor() as usize;
        let x0 = fx.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let x1 = (x0 + 1).min(w - 1);
        let dy = fy - y0 as f32;
        let dx = fx - x0 as f32;
        src[(y0, x0)] * (1.0 - dy) * (1.0 - dx)
            + src[(y0, x1)] * (1.0 - dy) * dx
            + src[(y1, x0)] * dy * (1.0 - dx)
            + src[(y1, x1)] * dy * dx
    })
}

/// Min-max normalize to `[0, 1]`; a constant image maps to all zeros.
pub fn min_max_normalize(values: &mut Array2<f32>) -> bool {
    let mut lo = f32::INFINITY;
    let mut hi = f32::NEG_INFINITY;
    for &v in values.iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if hi <= lo {
        values.fill(0.0);
        return false;
    }
    let span = hi - lo;
    values.mapv_inplace(|v| (v - lo) / span);
    true
}

fn get_u32(obj: &FileDicomObject<InMemDicomObject>, tag: Tag) -> Option<u32> {
    obj.element(tag).ok().and_then(|e| e.to_int::<u32>().ok())
}

fn get_f64(obj: &FileDicomObject<InMemDicomObject>, tag: Tag) -> Option<f64> {
    obj.element(tag).ok().and_then(|e| e.to_float64().ok())
}

fn get_str(obj: &FileDicomObject<InMemDicomObject>, tag: Tag) -> Option<String> {
    obj.element(tag)
        .ok()
        .and_then(|e| e.to_str().ok().map(|s| s.trim().to_string()))
}

/// Load a single-frame grayscale DICOM, apply rescale slope/intercept,
/// invert MONOCHROME1, min-max normalize to `[0, 1]`, and bilinear-resize
/// to `target_size × target_size`.
pub fn load_and_normalize_scan(path: &Path, target_size: usize) -> Result<ImageRecord> {
    let obj = open_file(path).map_err(|e| ingest_err(path, format!("unreadable DICOM: {e}")))?;

    let samples = get_u32(&obj, SAMPLES_PER_PIXEL).unwrap_or(1);
    if samples != 1 {
        return Err(ingest_err(path, format!("color image (samples per pixel {samples})")));
    }
    let frames = get_u32(&obj, NUMBER_OF_FRAMES).unwrap_or(1);
    if frames != 1 {
        return Err(ingest_err(path, format!("multi-frame image ({frames} frames)")));
    }
    let rows = get_u32(&obj, ROWS).ok_or_else(|| ingest_err(path, "missing Rows"))? as usize;
    let cols = get_u32(&obj, COLUMNS).ok_or_else(|| ingest_err(path, "missing Columns"))? as usize;
    let bits = get_u32(&obj, BITS_ALLOCATED).unwrap_or(16);
    let signed = get_u32(&obj, PIXEL_REPRESENTATION).unwrap_or(0) == 1;
    let photometric = get_str(&obj, PHOTOMETRIC_INTERPRETATION)
        .unwrap_or_else(|| "MONOCHROME2".to_string());
    if photometric != "MONOCHROME1" && photometric != "MONOCHROME2" {
        return Err(ingest_err(path, format!("unsupported photometric {photometric}")));
    }
    let slope = get_f64(&obj, RESCALE_SLOPE).unwrap_or(1.0) as f32;
    let intercept = get_f64(&obj, RESCALE_INTERCEPT).unwrap_or(0.0) as f32;

    let element = obj
        .element(PIXEL_DATA)
        .map_err(|e| ingest_err(path, format!("missing PixelData: {e}")))?;
    let bytes = element
        .to_bytes()
        .map_err(|e| ingest_err(path, format!("undecodable PixelData: {e}")))?;

    let expected = rows * cols * (bits as usize / 8);
    if bytes.len() < expected {
        return Err(ingest_err(
            path,
            format!("PixelData too short: {} < {expected}", bytes.len()),
        ));
    }

    let mut values = Array2::<f32>::zeros((rows, cols));
    for i in 0..rows * cols {
        let raw: f32 = match (bits, signed) {
            (8, false) => bytes[i] as f32,
            (8, true) => bytes[i] as i8 as f32,
            (16, false) => u16::from_le_bytes([bytes[2 * i], bytes[2 * i + 1]]) as f32,
            (16, true) => i16::from_le_bytes([bytes[2 * i], bytes[2 * i + 1]]) as f32,
            _ => return Err(ingest_err(path, format!("unsupported bits allocated {bits}"))),
        };
        values[(i / cols, i % cols)] = slope * raw + intercept;
    }

    if photometric == "MONOCHROME1" {
        // higher stored value means darker; flip so higher = brighter
        values.mapv_inplace(|v| -v);
    }
    min_max_normalize(&mut values);
    let pixels = resize_bilinear(&values, target_size);

    let image_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scan".to_string());
    Ok(ImageRecord {
        image_id,
        pixels,
        original_size: (cols as u32, rows as u32),
        is_positive: false,
        source: Source::Real,
    })
}
