//! Abnormality localization toolkit for chest X-rays.
//!
//! The crate is organized around the stages of the pipeline:
//!
//! - [`data`] — annotation parsing, mask rasterization, DICOM/PNG ingestion,
//!   dataset splits, pair construction, and a seeded synthetic generator.
//! - [`losses`] — the rectangularizing prediction transform, focal
//!   segmentation loss, and Siamese contrastive loss, with analytic gradients.
//! - [`models`] — U-Net (plain and attention-gated), Siamese pair networks,
//!   and the contrastive-transfer assembly, all on a CPU tensor backend.
//! - [`ensembles`] — max and learned fusion of per-class specialized models.
//! - [`metrics`] — per-image and aggregate evaluation (MAE, IoU, pixel F1,
//!   confusion categorization, error histograms) and report emission.
//! - [`config`] — the experiment configuration file shared by the CLI verbs.

pub mod config;
pub mod data;
pub mod ensembles;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod models;

pub use error::{Error, Result};
