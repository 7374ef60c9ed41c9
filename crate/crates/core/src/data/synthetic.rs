//! Seeded synthetic phantom dataset generator.
//!
//! Each image is a smooth random background. Positive images carry one
//! anomaly class rendered as a class-distinct local pattern inside
//! axis-aligned boxes; the ground-truth mask is the union of those boxes.
//! Every image derives its own RNG stream from the image index, so
//! generation is deterministic and order-independent.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::splits::{make_splits, Splits};
use crate::data::types::{AnnotationBox, ImageRecord, Source, SyntheticSpec, TargetMask};
use crate::data::DatasetItem;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct SyntheticRecord {
    pub item: DatasetItem,
    /// Anomaly class of the image; `None` for negatives.
    pub class: Option<usize>,
}

fn image_rng(spec: &SyntheticSpec, seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ spec.texture_seed.rotate_left(17));
    rng.set_stream(index as u64 + 1);
    rng
}

/// Smooth low-frequency background: a gentle gradient plus gaussian bumps.
fn paint_background(size: usize, rng: &mut ChaCha8Rng) -> Array2<f32> {
    let s = size as f32;
    let base: f32 = rng.gen_range(0.30..0.45);
    let grad: f32 = rng.gen_range(-0.08..0.08);
    let n_bumps = rng.gen_range(3..7);
    let bumps: Vec<(f32, f32, f32, f32)> = (0..n_bumps)
        .map(|_| {
            (
                rng.gen_range(0.0..s),
                rng.gen_range(0.0..s),
                rng.gen_range(s * 0.25..s * 0.6),
                rng.gen_range(-0.12..0.12),
            )
        })
        .collect();
    Array2::from_shape_fn((size, size), |(y, x)| {
        let (xf, yf) = (x as f32, y as f32);
        let mut v = base + grad * (yf / s - 0.5);
        for &(cx, cy, sigma, amp) in &bumps {
            let d2 = (xf - cx).powi(2) + (yf - cy).powi(2);
            v += amp * (-d2 / (2.0 * sigma * sigma)).exp();
        }
        v.clamp(0.12, 0.68)
    })
}

/// Render one anomaly of `class` into `pixels` inside the half-open box.
///
/// Every class is a high-contrast local pattern so "texture unlike the
/// smooth background" is a cue shared across classes, while the pattern
/// itself stays class-specific.
fn paint_anomaly(
    pixels: &mut Array2<f32>,
    class: usize,
    x0: usize,
    y0: usize,
    w: usize,
    h: usize,
    phase: usize,
) {
    let bright = 0.92f32;
    let dark = 0.05f32;
    for y in y0..y0 + h {
        for x in x0..x0 + w {
            let (lx, ly) = (x - x0, y - y0);
            let v = match class % 8 {
                // filled bright ellipse inscribed in the box
                0 => {
                    let nx = (lx as f32 + 0.5) / w as f32 * 2.0 - 1.0;
                    let ny = (ly as f32 + 0.5) / h as f32 * 2.0 - 1.0;
                    if nx * nx + ny * ny <= 1.0 { Some(bright) } else { None }
                }
                // filled dark ellipse
                1 => {
                    let nx = (lx as f32 + 0.5) / w as f32 * 2.0 - 1.0;
                    let ny = (ly as f32 + 0.5) / h as f32 * 2.0 - 1.0;
                    if nx * nx + ny * ny <= 1.0 { Some(dark) } else { None }
                }
                // vertical grating
                2 => Some(if (lx + phase) % 4 < 2 { bright } else { dark }),
                // coarse checkerboard
                3 => Some(if ((lx + phase) / 3 + ly / 3) % 2 == 0 { bright } else { dark }),
                // diagonal grating
                4 => Some(if (lx + ly + phase) % 6 < 3 { bright } else { dark }),
                // bright ring
                5 => {
                    let nx = (lx as f32 + 0.5) / w as f32 * 2.0 - 1.0;
                    let ny = (ly as f32 + 0.5) / h as f32 * 2.0 - 1.0;
                    let r2 = nx * nx + ny * ny;
                    if (0.35..=1.0).contains(&r2) { Some(bright) } else { None }
                }
                // bright plus sign
                6 => {
                    let cx = (lx as f32 + 0.5 - w as f32 / 2.0).abs() / (w as f32 / 2.0);
                    let cy = (ly as f32 + 0.5 - h as f32 / 2.0).abs() / (h as f32 / 2.0);
                    if cx < 0.3 || cy < 0.3 { Some(bright) } else { None }
                }
                // fine horizontal grating
                _ => Some(if (ly + phase) % 4 < 2 { bright } else { dark }),
            };
            if let Some(v) = v {
                pixels[(y, x)] = v;
            }
        }
    }
}

/// Generate the full synthetic dataset for `spec`, deterministic in
/// `(spec, seed)`.
pub fn generate_synthetic_dataset(
    spec: &SyntheticSpec,
    seed: u64,
) -> Result<Vec<SyntheticRecord>> {
    spec.validate(0)?;
    let size = spec.image_size;
    let mut out = Vec::with_capacity(spec.n_images);
    for i in 0..spec.n_images {
        let mut rng = image_rng(spec, seed, i);
        let mut pixels = paint_background(size, &mut rng);
        let n_anomalies = rng.gen_range(spec.anomalies_per_image.0..=spec.anomalies_per_image.1);
        let class = if n_anomalies > 0 {
            Some(rng.gen_range(0..spec.n_classes))
        } else {
            None
        };
        let mut mask = Array2::<u8>::zeros((size, size));
        let mut boxes = Vec::new();
        for _ in 0..n_anomalies {
            let c = class.unwrap();
            let w = rng.gen_range(spec.box_size.0..=spec.box_size.1.min(size));
            let h = rng.gen_range(spec.box_size.0..=spec.box_size.1.min(size));
            let x0 = rng.gen_range(0..=size - w);
            let y0 = rng.gen_range(0..=size - h);
            let phase = rng.gen_range(0..8);
            paint_anomaly(&mut pixels, c, x0, y0, w, h, phase);
            for y in y0..y0 + h {
                for x in x0..x0 + w {
                    mask[(y, x)] = 1;
                }
            }
            boxes.push(AnnotationBox::new(
                c as u8,
                x0 as f32,
                y0 as f32,
                (x0 + w) as f32,
                (y0 + h) as f32,
                "synthetic",
            )?);
        }
        if boxes.is_empty() {
            boxes.push(AnnotationBox::no_finding("synthetic"));
        }
        let image_id = format!("synth_{i:05}");
        let record = ImageRecord {
            image_id,
            pixels,
            original_size: (size as u32, size as u32),
            is_positive: n_anomalies > 0,
            source: Source::Synthetic,
        };
        out.push(SyntheticRecord {
            item: DatasetItem {
                record,
                boxes,
                mask: TargetMask::from_values(mask)?,
            },
            class,
        });
    }
    Ok(out)
}

/// Split manifests for a synthetic dataset honoring the held-out protocol:
/// every image of `held_out_class` goes to the `unseen` list, the rest are
/// split by `ratios`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSplits {
    pub base: Splits,
    pub unseen: Vec<String>,
}

pub fn make_synthetic_splits(
    records: &[SyntheticRecord],
    held_out_class: usize,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<SyntheticSplits> {
    let mut pool = Vec::new();
    let mut unseen = Vec::new();
    for r in records {
        if r.class == Some(held_out_class) {
            unseen.push(r.item.record.image_id.clone());
        } else {
            pool.push(r.item.record.image_id.clone());
        }
    }
    if pool.is_empty() {
        return Err(Error::data("no non-held-out images to split"));
    }
    let base = make_splits(&pool, ratios, seed)?;
    Ok(SyntheticSplits { base, unseen })
}
