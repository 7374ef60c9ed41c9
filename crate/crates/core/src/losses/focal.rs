//! Focal segmentation loss and its composition with the rectangularizing
//! transform.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::losses::rect::{aggregates, rect_transform, Sharpness};
use crate::losses::FocalParams;

fn check_shapes(target: &Array2<u8>, pred: &Array2<f64>) -> Result<()> {
    if target.dim() != pred.dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", target.dim()),
            got: format!("{:?}", pred.dim()),
        });
    }
    Ok(())
}

fn pixel_loss(y: f64, q: f64, p: &FocalParams) -> f64 {
    -y * p.alpha * (1.0 - q).powf(p.gamma) * q.ln()
        - (1.0 - y) * (1.0 - p.alpha) * q.powf(p.gamma) * (1.0 - q).ln()
}

/// d(pixel loss)/dq at a clamped probability `q`.
fn pixel_loss_dq(y: f64, q: f64, p: &FocalParams) -> f64 {
    let mut d = 0.0;
    if y > 0.0 {
        let mut t = (1.0 - q).powf(p.gamma) / q;
        if p.gamma > 0.0 {
            t -= p.gamma * (1.0 - q).powf(p.gamma - 1.0) * q.ln();
        }
        d += -y * p.alpha * t;
    }
    if y < 1.0 {
        let mut t = -q.powf(p.gamma) / (1.0 - q);
        if p.gamma > 0.0 {
            t += p.gamma * q.powf(p.gamma - 1.0) * (1.0 - q).ln();
        }
        d += -(1.0 - y) * (1.0 - p.alpha) * t;
    }
    d
}

/// Sigmoid focal cross-entropy averaged over all pixels.
///
/// Per pixel: `-y·α(1−q)^γ·ln q − (1−y)(1−α)·q^γ·ln(1−q)` with the
/// prediction clamped to `[ε, 1−ε]` before the logs.
pub fn focal_loss(target: &Array2<u8>, pred: &Array2<f64>, params: &FocalParams) -> Result<f64> {
    params.validate()?;
    check_shapes(target, pred)?;
    let n = pred.len() as f64;
    let mut total = 0.0;
    for (&y, &q) in target.iter().zip(pred.iter()) {
        if !q.is_finite() {
            return Err(Error::Numeric("non-finite prediction in focal loss".into()));
        }
        let q = q.clamp(params.epsilon, 1.0 - params.epsilon);
        total += pixel_loss(y as f64, q, params);
    }
    Ok(total / n)
}

/// Focal loss of the rect-transformed prediction map.
pub fn rect_focal_loss(
    target: &Array2<u8>,
    pred: &Array2<f64>,
    params: &FocalParams,
    sharpness: Sharpness,
) -> Result<f64> {
    let transformed = rect_transform(pred, sharpness)?;
    focal_loss(target, &transformed, params)
}

/// Value and analytic gradient of [`rect_focal_loss`] with respect to the
/// raw prediction map, for a finite power-mean sharpness.
pub fn rect_focal_loss_grad(
    target: &Array2<u8>,
    pred: &Array2<f64>,
    params: &FocalParams,
    sharpness_p: f64,
) -> Result<(f64, Array2<f64>)> {
    params.validate()?;
    check_shapes(target, pred)?;
    let sharpness = Sharpness::Power(sharpness_p);
    let transformed = rect_transform(pred, sharpness)?;
    let value = focal_loss(target, &transformed, params)?;

    let (h, w) = pred.dim();
    let n = (h * w) as f64;
    let (rows, cols) = aggregates(pred, sharpness);

    // dL/dy'_ij, zero where the probability clamp is active
    let mut g = Array2::<f64>::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            let q = transformed[(i, j)];
            if q > params.epsilon && q < 1.0 - params.epsilon {
                g[(i, j)] = pixel_loss_dq(target[(i, j)] as f64, q, params) / n;
            }
        }
    }

    // backprop through the outer product and the power means
    let mut grad = Array2::<f64>::zeros((h, w));
    let p = sharpness_p;
    // dL/dR_i = sum_j g_ij * C_j ; dL/dC_j = sum_i g_ij * R_i
    let dl_dr: Vec<f64> = (0..h)
        .map(|i| (0..w).map(|j| g[(i, j)] * cols[j]).sum())
        .collect();
    let dl_dc: Vec<f64> = (0..w)
        .map(|j| (0..h).map(|i| g[(i, j)] * rows[i]).sum())
        .collect();
    for a in 0..h {
        for b in 0..w {
            let x = pred[(a, b)];
            let mut d = 0.0;
            // dR_a/dx_ab = (1/W) x^(p-1) R_a^(1-p), zero when the row is all zero
            if rows[a] > 0.0 {
                d += dl_dr[a] * x.powf(p - 1.0) * rows[a].powf(1.0 - p) / w as f64;
            }
            if cols[b] > 0.0 {
                d += dl_dc[b] * x.powf(p - 1.0) * cols[b].powf(1.0 - p) / h as f64;
            }
            grad[(a, b)] = d;
        }
    }
    Ok((value, grad))
}
