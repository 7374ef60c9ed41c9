//! The rectangularizing prediction transform.
//!
//! A prediction map is reduced to a per-row and a per-column aggregate and
//! rebuilt as their outer product, pulling blob-like responses toward the
//! filled bounding rectangle of the response. With the exact-max aggregate
//! the transform maps any single axis-aligned rectangle to itself; the
//! power-mean aggregate is a smooth, differentiable surrogate that
//! approaches exact max as the sharpness exponent grows.
//!
//! Known limitation of the separable form: a map with several distinct
//! blobs also lights up the spurious row/column intersection rectangles.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Row/column aggregation mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sharpness {
    /// True maximum; not differentiable, intended for post-processing.
    Exact,
    /// Power-mean exponent `p >= 1`; differentiable everywhere on (0,1].
    Power(f64),
}

impl Sharpness {
    fn validate(&self) -> Result<()> {
        match self {
            Sharpness::Exact => Ok(()),
            Sharpness::Power(p) if *p >= 1.0 && p.is_finite() => Ok(()),
            Sharpness::Power(p) => Err(Error::config(format!(
                "sharpness exponent must be finite and >= 1, got {p}"
            ))),
        }
    }
}

fn check_input(pred: &Array2<f64>) -> Result<()> {
    for &v in pred.iter() {
        if !v.is_finite() {
            return Err(Error::Numeric("non-finite value in prediction map".into()));
        }
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Numeric(format!("prediction value {v} outside [0,1]")));
        }
    }
    Ok(())
}

/// Power mean `(mean(x^p))^(1/p)`, clipped to `[0, 1]`.
fn power_mean(values: impl Iterator<Item = f64>, n: usize, p: f64) -> f64 {
    let s: f64 = values.map(|v| v.powf(p)).sum::<f64>() / n as f64;
    s.powf(1.0 / p).clamp(0.0, 1.0)
}

/// Row and column aggregates of a map.
pub(crate) fn aggregates(pred: &Array2<f64>, sharpness: Sharpness) -> (Vec<f64>, Vec<f64>) {
    let (h, w) = pred.dim();
    match sharpness {
        Sharpness::Exact => {
            let rows = (0..h)
                .map(|i| pred.row(i).iter().cloned().fold(0.0, f64::max))
                .collect();
            let cols = (0..w)
                .map(|j| pred.column(j).iter().cloned().fold(0.0, f64::max))
                .collect();
            (rows, cols)
        }
        Sharpness::Power(p) => {
            let rows = (0..h)
                .map(|i| power_mean(pred.row(i).iter().cloned(), w, p))
                .collect();
            let cols = (0..w)
                .map(|j| power_mean(pred.column(j).iter().cloned(), h, p))
                .collect();
            (rows, cols)
        }
    }
}

/// Apply the transform: `out[i][j] = rowagg[i] * colagg[j]`.
pub fn rect_transform(pred: &Array2<f64>, sharpness: Sharpness) -> Result<Array2<f64>> {
    sharpness.validate()?;
    check_input(pred)?;
    let (rows, cols) = aggregates(pred, sharpness);
    let (h, w) = pred.dim();
    Ok(Array2::from_shape_fn((h, w), |(i, j)| rows[i] * cols[j]))
}
