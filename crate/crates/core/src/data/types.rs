use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sentinel class id for "no finding" annotation rows.
pub const NO_FINDING_CLASS: u8 = 14;

/// Where a record came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Real,
    Synthetic,
}

/// One normalized grayscale scan plus identity metadata.
#[derive(Debug, Clone)]
pub struct ImageRecord {
    pub image_id: String,
    /// H×W pixel values in `[0, 1]`, H = W = configured input size.
    pub pixels: Array2<f32>,
    /// (width, height) of the source image in pixels, before resizing.
    pub original_size: (u32, u32),
    pub is_positive: bool,
    pub source: Source,
}

impl ImageRecord {
    pub fn input_size(&self) -> usize {
        self.pixels.nrows()
    }
}

/// A radiologist bounding box in original image coordinates.
///
/// `class_id` 14 is the no-finding sentinel and carries no coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationBox {
    pub class_id: u8,
    pub x_min: f32,
    pub y_min: f32,
    pub x_max: f32,
    pub y_max: f32,
    pub rad_id: String,
}

impl AnnotationBox {
    pub fn new(
        class_id: u8,
        x_min: f32,
        y_min: f32,
        x_max: f32,
        y_max: f32,
        rad_id: impl Into<String>,
    ) -> Result<Self> {
        if class_id != NO_FINDING_CLASS && (x_min >= x_max || y_min >= y_max) {
            return Err(Error::data(format!(
                "degenerate box ({x_min},{y_min},{x_max},{y_max}) for class {class_id}"
            )));
        }
        Ok(AnnotationBox {
            class_id,
            x_min,
            y_min,
            x_max,
            y_max,
            rad_id: rad_id.into(),
        })
    }

    pub fn no_finding(rad_id: impl Into<String>) -> Self {
        AnnotationBox {
            class_id: NO_FINDING_CLASS,
            x_min: 0.0,
            y_min: 0.0,
            x_max: 0.0,
            y_max: 0.0,
            rad_id: rad_id.into(),
        }
    }

    pub fn is_no_finding(&self) -> bool {
        self.class_id == NO_FINDING_CLASS
    }
}

/// Binary ground-truth mask, the union of all rasterized boxes of an image.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetMask {
    pub values: Array2<u8>,
}

impl TargetMask {
    pub fn zeros(size: usize) -> Self {
        TargetMask {
            values: Array2::zeros((size, size)),
        }
    }

    pub fn from_values(values: Array2<u8>) -> Result<Self> {
        if values.iter().any(|&v| v > 1) {
            return Err(Error::data("mask values must be binary"));
        }
        Ok(TargetMask { values })
    }

    pub fn count_ones(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }

    pub fn is_empty(&self) -> bool {
        self.values.iter().all(|&v| v == 0)
    }

    pub fn size(&self) -> usize {
        self.values.nrows()
    }
}

/// Two scans plus a similarity label for contrastive training.
///
/// Label 1 pairs two positive scans; label 0 pairs one positive with one
/// negative. Negative-negative pairs are never constructed.
#[derive(Debug, Clone)]
pub struct PairSample {
    pub image_a: String,
    pub image_b: String,
    pub label: u8,
}

/// Parameters of the seeded synthetic phantom dataset generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_images: usize,
    pub image_size: usize,
    pub n_classes: usize,
    pub held_out_class: usize,
    /// Inclusive range of anomaly boxes drawn per image.
    pub anomalies_per_image: (usize, usize),
    /// Inclusive range of box side lengths in pixels.
    pub box_size: (usize, usize),
    pub texture_seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self, unet_depth: usize) -> Result<()> {
        if self.held_out_class >= self.n_classes {
            return Err(Error::config(format!(
                "held_out_class {} must be < n_classes {}",
                self.held_out_class, self.n_classes
            )));
        }
        if self.image_size % (1 << unet_depth) != 0 {
            return Err(Error::config(format!(
                "image_size {} not divisible by 2^{unet_depth}",
                self.image_size
            )));
        }
        if self.anomalies_per_image.0 > self.anomalies_per_image.1 {
            return Err(Error::config("anomalies_per_image range is inverted"));
        }
        if self.box_size.0 > self.box_size.1 || self.box_size.0 == 0 {
            return Err(Error::config("box_size range is invalid"));
        }
        if self.box_size.1 > self.image_size {
            return Err(Error::config(format!(
                "box_size max {} exceeds image_size {}",
                self.box_size.1, self.image_size
            )));
        }
        if self.n_images == 0 {
            return Err(Error::config("n_images must be positive"));
        }
        Ok(())
    }
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_images: 100,
            image_size: 128,
            n_classes: 5,
            held_out_class: 4,
            anomalies_per_image: (0, 2),
            box_size: (16, 40),
            texture_seed: 0,
        }
    }
}
