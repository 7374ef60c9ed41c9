//! On-disk dataset layout shared by the synthetic and ingestion paths.
//!
//! ```text
//! <dataset>/
//!   images/<id>.png       8-bit grayscale, normalized
//!   masks/<id>.png        8-bit, values exactly {0, 255}
//!   annotations.csv       VinDr-CXR layout
//!   splits.json           {"train": [...], "val": [...], "test": [...], "unseen": [...]}
//!   pairs.csv             image_a,image_b,label
//!   meta.json             image size, per-image original sizes, class labels
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageBuffer, Luma};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::annotations::{group_by_image, parse_annotations, write_annotations};
use crate::data::splits::Splits;
use crate::data::types::{AnnotationBox, ImageRecord, Source, TargetMask};
use crate::data::DatasetItem;
use crate::error::{Error, Result};

pub fn write_image_png(path: &Path, pixels: &Array2<f32>) -> Result<()> {
    let (h, w) = pixels.dim();
    let img: GrayImage = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let v = pixels[(y as usize, x as usize)].clamp(0.0, 1.0);
        Luma([(v * 255.0).round() as u8])
    });
    img.save(path)?;
    Ok(())
}

pub fn read_image_png(path: &Path) -> Result<Array2<f32>> {
    let img = image::open(path)?.into_luma8();
    let (w, h) = img.dimensions();
    Ok(Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
        img.get_pixel(x as u32, y as u32)[0] as f32 / 255.0
    }))
}

pub fn write_mask_png(path: &Path, mask: &TargetMask) -> Result<()> {
    let (h, w) = mask.values.dim();
    let img: GrayImage = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        Luma([mask.values[(y as usize, x as usize)] * 255])
    });
    img.save(path)?;
    Ok(())
}

pub fn read_mask_png(path: &Path) -> Result<TargetMask> {
    let img = image::open(path)?.into_luma8();
    let (w, h) = img.dimensions();
    let values = Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
        u8::from(img.get_pixel(x as u32, y as u32)[0] >= 128)
    });
    TargetMask::from_values(values)
}

/// Probability maps round-trip through 16-bit grayscale PNG.
pub fn write_probability_png(path: &Path, map: &Array2<f32>) -> Result<()> {
    let (h, w) = map.dim();
    let img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let v = map[(y as usize, x as usize)].clamp(0.0, 1.0);
        Luma([(v * 65535.0).round() as u16])
    });
    img.save(path)?;
    Ok(())
}

pub fn read_probability_png(path: &Path) -> Result<Array2<f32>> {
    let img = image::open(path)?.into_luma16();
    let (w, h) = img.dimensions();
    Ok(Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
        img.get_pixel(x as u32, y as u32)[0] as f32 / 65535.0
    }))
}

/// Split manifest with the optional unseen-class list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SplitManifest {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    #[serde(default)]
    pub unseen: Vec<String>,
}

impl SplitManifest {
    pub fn from_splits(base: Splits, unseen: Vec<String>) -> Self {
        SplitManifest {
            train: base.train,
            val: base.val,
            test: base.test,
            unseen,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct DatasetMeta {
    pub image_size: usize,
    /// (width, height) of each source image before normalization.
    #[serde(default)]
    pub original_sizes: BTreeMap<String, (u32, u32)>,
    /// Anomaly class per positive image, when known.
    #[serde(default)]
    pub classes: BTreeMap<String, usize>,
    #[serde(default)]
    pub source: Option<Source>,
}

/// Path helpers for one dataset directory.
#[derive(Debug, Clone)]
pub struct DatasetDir {
    pub root: PathBuf,
}

impl DatasetDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DatasetDir { root: root.into() }
    }

    pub fn images_dir(&self) -> PathBuf {
        self.root.join("images")
    }

    pub fn masks_dir(&self) -> PathBuf {
        self.root.join("masks")
    }

    pub fn image_path(&self, id: &str) -> PathBuf {
        self.images_dir().join(format!("{id}.png"))
    }

    pub fn mask_path(&self, id: &str) -> PathBuf {
        self.masks_dir().join(format!("{id}.png"))
    }

    pub fn annotations_path(&self) -> PathBuf {
        self.root.join("annotations.csv")
    }

    pub fn splits_path(&self) -> PathBuf {
        self.root.join("splits.json")
    }

    pub fn pairs_path(&self) -> PathBuf {
        self.root.join("pairs.csv")
    }

    pub fn meta_path(&self) -> PathBuf {
        self.root.join("meta.json")
    }

    pub fn create_dirs(&self) -> Result<()> {
        for d in [&self.root, &self.images_dir(), &self.masks_dir()] {
            fs::create_dir_all(d).map_err(|e| Error::io(d.clone(), e))?;
        }
        Ok(())
    }

    pub fn write_meta(&self, meta: &DatasetMeta) -> Result<()> {
        let text = serde_json::to_string_pretty(meta)?;
        fs::write(self.meta_path(), text).map_err(|e| Error::io(self.meta_path(), e))
    }

    pub fn read_meta(&self) -> Result<DatasetMeta> {
        let text = fs::read_to_string(self.meta_path())
            .map_err(|e| Error::io(self.meta_path(), e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write_splits(&self, manifest: &SplitManifest) -> Result<()> {
        let text = serde_json::to_string_pretty(manifest)?;
        fs::write(self.splits_path(), text).map_err(|e| Error::io(self.splits_path(), e))
    }

    pub fn read_splits(&self) -> Result<SplitManifest> {
        let text = fs::read_to_string(self.splits_path())
            .map_err(|e| Error::io(self.splits_path(), e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write_annotation_rows(&self, rows: &[(String, AnnotationBox)]) -> Result<()> {
        let file = fs::File::create(self.annotations_path())
            .map_err(|e| Error::io(self.annotations_path(), e))?;
        write_annotations(file, rows)
    }

    /// Save one item: normalized image PNG, mask PNG.
    pub fn write_item(&self, item: &DatasetItem) -> Result<()> {
        write_image_png(&self.image_path(&item.record.image_id), &item.record.pixels)?;
        write_mask_png(&self.mask_path(&item.record.image_id), &item.mask)?;
        Ok(())
    }

    /// Load every annotated image of the dataset.
    pub fn load_items(&self) -> Result<Vec<DatasetItem>> {
        let meta = self.read_meta()?;
        let file = fs::File::open(self.annotations_path())
            .map_err(|e| Error::io(self.annotations_path(), e))?;
        let grouped = group_by_image(parse_annotations(file)?);
        let mut items = Vec::with_capacity(grouped.len());
        for (id, boxes) in grouped {
            let pixels = read_image_png(&self.image_path(&id))?;
            let mask = read_mask_png(&self.mask_path(&id))?;
            if pixels.dim() != mask.values.dim() {
                return Err(Error::data(format!(
                    "image/mask size mismatch for {id}: {:?} vs {:?}",
                    pixels.dim(),
                    mask.values.dim()
                )));
            }
            let is_positive = boxes.iter().any(|b| !b.is_no_finding());
            let size = pixels.nrows();
            let original_size = meta
                .original_sizes
                .get(&id)
                .copied()
                .unwrap_or((size as u32, size as u32));
            items.push(DatasetItem {
                record: ImageRecord {
                    image_id: id,
                    pixels,
                    original_size,
                    is_positive,
                    source: meta.source.unwrap_or(Source::Synthetic),
                },
                boxes,
                mask,
            });
        }
        Ok(items)
    }
}
