//! Loss functions: the rectangularizing prediction transform, focal
//! segmentation loss, and Siamese contrastive loss.
//!
//! These are the numerical reference implementations, kept in `f64` with
//! analytic gradients so they can be verified against central finite
//! differences. The tensor-backend counterparts used inside training live
//! in [`tensor`] and are tested for value agreement against these.

pub mod contrastive;
pub mod focal;
pub mod rect;
pub mod tensor;

pub use contrastive::{contrastive_loss, contrastive_loss_grad, euclidean_distance};
pub use focal::{focal_loss, rect_focal_loss, rect_focal_loss_grad};
pub use rect::{rect_transform, Sharpness};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Focal loss parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FocalParams {
    /// Class-balance weight on the positive class, in (0, 1).
    pub alpha: f64,
    /// Modulating exponent, >= 0.
    pub gamma: f64,
    /// Probability clamp applied before logs.
    pub epsilon: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        FocalParams {
            alpha: 0.25,
            gamma: 2.0,
            epsilon: 1e-7,
        }
    }
}

impl FocalParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.alpha) || self.alpha == 0.0 {
            return Err(Error::config(format!("alpha must be in (0,1), got {}", self.alpha)));
        }
        if self.gamma < 0.0 {
            return Err(Error::config(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if self.epsilon <= 0.0 {
            return Err(Error::config(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// Contrastive loss parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContrastiveParams {
    /// Margin separating dissimilar pairs.
    pub margin: f64,
}

impl Default for ContrastiveParams {
    fn default() -> Self {
        ContrastiveParams { margin: 1.0 }
    }
}

impl ContrastiveParams {
    pub fn validate(&self) -> Result<()> {
        if self.margin <= 0.0 {
            return Err(Error::config(format!("margin must be > 0, got {}", self.margin)));
        }
        Ok(())
    }
}
