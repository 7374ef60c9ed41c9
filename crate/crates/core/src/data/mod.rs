//! Data pipeline: annotations, rasterization, ingestion, splits, pairs,
//! and the synthetic phantom generator.

pub mod annotations;
pub mod balance;
pub mod dicom;
pub mod io;
pub mod pairs;
pub mod raster;
pub mod splits;
pub mod synthetic;
pub mod types;

pub use annotations::{group_by_image, parse_annotations, write_annotations};
pub use balance::make_balanced_subset;
pub use dicom::load_and_normalize_scan;
pub use pairs::make_pairs;
pub use raster::{rasterize_class_mask, rasterize_mask};
pub use splits::{make_splits, Splits};
pub use synthetic::{generate_synthetic_dataset, make_synthetic_splits, SyntheticRecord};
pub use types::{
    AnnotationBox, ImageRecord, PairSample, Source, SyntheticSpec, TargetMask, NO_FINDING_CLASS,
};

/// One fully-loaded dataset entry: normalized scan, its annotation boxes,
/// and the union ground-truth mask.
#[derive(Debug, Clone)]
pub struct DatasetItem {
    pub record: ImageRecord,
    pub boxes: Vec<AnnotationBox>,
    pub mask: TargetMask,
}
