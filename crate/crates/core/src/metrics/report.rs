//! Dataset-level evaluation and report emission.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::TargetMask;
use crate::error::{Error, Result};
use crate::metrics::{
    categorize, detection_f1, error_histogram, iou, pixel_f1, pixel_mae, ConfusionCategory,
    ConfusionCounts, ErrorHistogram,
};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Binarization threshold on probability maps.
    pub threshold: f32,
    /// Pixel-difference bound for the near-miss TP rule.
    pub tp_diff_threshold: usize,
    /// IoU bound for the remaining gt-nonempty cases.
    pub iou_threshold: f64,
    pub bucket_width: f64,
    pub outlier_threshold: f64,
    /// When false, MAE is computed on the binarized mask instead of the
    /// probability map.
    pub mae_on_probabilities: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            threshold: 0.5,
            tp_diff_threshold: 100,
            iou_threshold: 0.4,
            bucket_width: 0.5,
            outlier_threshold: 4.0,
            mae_on_probabilities: true,
        }
    }
}

/// One prediction to score: ground truth, probability map, class labels.
#[derive(Debug, Clone)]
pub struct EvalSample {
    pub image_id: String,
    pub gt: TargetMask,
    pub probability: Array2<f32>,
    /// Anomaly classes present in the ground truth (disease ids for real
    /// data, shape classes for synthetic).
    pub classes: Vec<u8>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerImageRow {
    pub image_id: String,
    pub mae: f64,
    pub iou: f64,
    pub pixel_f1: f64,
    pub category: ConfusionCategory,
    /// Percentage of misclassified pixels, in [0, 100].
    pub error_pct: f64,
    pub classes: Vec<u8>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Aggregates {
    pub mean_mae: f64,
    pub mean_iou: f64,
    pub mean_pixel_f1: f64,
    pub confusion: ConfusionCounts,
    /// Detection F1 over all images.
    pub detection_f1_all: f64,
    /// Detection F1 over gt-positive images only.
    pub detection_f1_positive: f64,
    pub histogram: ErrorHistogram,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassAggregate {
    pub count: usize,
    pub mean_mae: f64,
    pub mean_iou: f64,
    pub mean_pixel_f1: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    /// Definitional flags a reader needs to interpret the numbers.
    pub conventions: BTreeMap<String, String>,
    pub per_image: Vec<PerImageRow>,
    pub aggregates: Aggregates,
    pub per_class: BTreeMap<String, ClassAggregate>,
}

pub fn threshold_map(probability: &Array2<f32>, threshold: f32) -> Array2<u8> {
    probability.mapv(|v| u8::from(v >= threshold))
}

/// Score every sample and aggregate. Deterministic; aggregation follows
/// input order.
pub fn evaluate_dataset(samples: &[EvalSample], config: &EvalConfig) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::data("cannot evaluate an empty sample list"));
    }
    let mut per_image = Vec::with_capacity(samples.len());
    let mut confusion = ConfusionCounts::default();
    let mut confusion_positive = ConfusionCounts::default();
    let mut error_pcts = Vec::with_capacity(samples.len());

    for s in samples {
        let pred_mask = threshold_map(&s.probability, config.threshold);
        let mae = if config.mae_on_probabilities {
            pixel_mae(&s.gt.values, &s.probability)?
        } else {
            pixel_mae(&s.gt.values, &pred_mask.mapv(|v| v as f32))?
        };
        let iou_v = iou(&s.gt.values, &pred_mask)?;
        let f1_v = pixel_f1(&s.gt.values, &pred_mask)?;
        let cat = categorize(
            &s.gt.values,
            &pred_mask,
            config.tp_diff_threshold,
            config.iou_threshold,
        )?;
        let xor = s
            .gt
            .values
            .iter()
            .zip(pred_mask.iter())
            .filter(|(&a, &b)| a != b)
            .count();
        let error_pct = 100.0 * xor as f64 / s.gt.values.len() as f64;

        confusion.add(cat);
        if !s.gt.is_empty() {
            confusion_positive.add(cat);
        }
        error_pcts.push(error_pct);
        per_image.push(PerImageRow {
            image_id: s.image_id.clone(),
            mae,
            iou: iou_v,
            pixel_f1: f1_v,
            category: cat,
            error_pct,
            classes: s.classes.clone(),
        });
    }

    let n = per_image.len() as f64;
    let aggregates = Aggregates {
        mean_mae: per_image.iter().map(|r| r.mae).sum::<f64>() / n,
        mean_iou: per_image.iter().map(|r| r.iou).sum::<f64>() / n,
        mean_pixel_f1: per_image.iter().map(|r| r.pixel_f1).sum::<f64>() / n,
        confusion,
        detection_f1_all: detection_f1(&confusion),
        detection_f1_positive: detection_f1(&confusion_positive),
        histogram: error_histogram(&error_pcts, config.bucket_width, config.outlier_threshold)?,
    };

    let mut per_class: BTreeMap<String, Vec<&PerImageRow>> = BTreeMap::new();
    for row in &per_image {
        for &c in &row.classes {
            per_class.entry(format!("class_{c}")).or_default().push(row);
        }
    }
    let per_class = per_class
        .into_iter()
        .map(|(k, rows)| {
            let m = rows.len() as f64;
            (
                k,
                ClassAggregate {
                    count: rows.len(),
                    mean_mae: rows.iter().map(|r| r.mae).sum::<f64>() / m,
                    mean_iou: rows.iter().map(|r| r.iou).sum::<f64>() / m,
                    mean_pixel_f1: rows.iter().map(|r| r.pixel_f1).sum::<f64>() / m,
                },
            )
        })
        .collect();

    let mut conventions = BTreeMap::new();
    conventions.insert("both_empty_iou".into(), "1".into());
    conventions.insert("both_empty_pixel_f1".into(), "1".into());
    conventions.insert(
        "mae_input".into(),
        if config.mae_on_probabilities { "probability" } else { "binary" }.into(),
    );
    conventions.insert("tp_diff_threshold".into(), config.tp_diff_threshold.to_string());
    conventions.insert("iou_threshold".into(), config.iou_threshold.to_string());

    Ok(EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        conventions,
        per_image,
        aggregates,
        per_class,
    })
}

impl EvalReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<EvalReport> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Per-image table as CSV.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["image_id", "mae", "iou", "pixel_f1", "category", "error_pct", "classes"])?;
        for r in &self.per_image {
            let classes = r
                .classes
                .iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join("|");
            w.write_record([
                r.image_id.as_str(),
                &format!("{:.10}", r.mae),
                &format!("{:.10}", r.iou),
                &format!("{:.10}", r.pixel_f1),
                &format!("{:?}", r.category),
                &format!("{:.6}", r.error_pct),
                &classes,
            ])?;
        }
        w.flush().map_err(|e| Error::io("<report.csv>", e))?;
        Ok(())
    }
}
