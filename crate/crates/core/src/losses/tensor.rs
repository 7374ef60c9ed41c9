//! Tensor-backend loss implementations used inside training loops.
//!
//! Values are checked against the `f64` reference implementations in this
//! module's tests; gradients come from the backend's reverse-mode autodiff.

use candle_core::{Tensor, D};

use crate::error::Result;
use crate::losses::{ContrastiveParams, FocalParams};

/// Differentiable rectangularizing transform on an `(N, 1, H, W)` batch.
///
/// Power-mean aggregation over rows and columns, recombined as an outer
/// product.
pub fn rect_transform_t(pred: &Tensor, sharpness_p: f64) -> Result<Tensor> {
    let p = sharpness_p;
    // the floor keeps the power-mean gradient bounded: m^(1/p) has an
    // unbounded derivative as m -> 0, which destabilizes training once
    // background pixels saturate (and x^p underflows f32 below ~1e-4)
    let pred = &pred.clamp(1e-3, 1.0)?;
    let rows = pred
        .powf(p)?
        .mean_keepdim(D::Minus1)?
        .powf(1.0 / p)?
        .clamp(0.0, 1.0)?; // (N,1,H,1)
    let cols = pred
        .powf(p)?
        .mean_keepdim(D::Minus2)?
        .powf(1.0 / p)?
        .clamp(0.0, 1.0)?; // (N,1,1,W)
    Ok(rows.broadcast_mul(&cols)?)
}

/// Exact-max transform for post-processing; not differentiable.
pub fn rect_transform_exact_t(pred: &Tensor) -> Result<Tensor> {
    let rows = pred.max_keepdim(D::Minus1)?;
    let cols = pred.max_keepdim(D::Minus2)?;
    Ok(rows.broadcast_mul(&cols)?)
}

/// Focal loss of a prediction batch against a binary target batch.
pub fn focal_loss_t(target: &Tensor, pred: &Tensor, params: &FocalParams) -> Result<Tensor> {
    let eps = params.epsilon;
    let alpha = params.alpha;
    let gamma = params.gamma;
    let q = pred.clamp(eps, 1.0 - eps)?;
    let one_minus_q = (1.0 - &q)?;
    let pos = (q.log()? * one_minus_q.powf(gamma)?)?.mul(target)?.affine(-alpha, 0.0)?;
    let neg = (one_minus_q.log()? * q.powf(gamma)?)?
        .mul(&(1.0 - target)?)?
        .affine(-(1.0 - alpha), 0.0)?;
    Ok((pos + neg)?.mean_all()?)
}

/// Focal loss after the differentiable rect transform.
pub fn rect_focal_loss_t(
    target: &Tensor,
    pred: &Tensor,
    params: &FocalParams,
    sharpness_p: f64,
) -> Result<Tensor> {
    let transformed = rect_transform_t(pred, sharpness_p)?;
    focal_loss_t(target, &transformed, params)
}

/// Contrastive loss over a batch of embedding pairs.
///
/// `a`, `b`: `(N, D)`; `labels`: `(N)` with 1 = similar.
pub fn contrastive_loss_t(
    a: &Tensor,
    b: &Tensor,
    labels: &Tensor,
    params: &ContrastiveParams,
) -> Result<Tensor> {
    let diff = (a - b)?;
    let d2 = diff.sqr()?.sum(D::Minus1)?; // (N)
    // epsilon inside the sqrt keeps the gradient finite at D = 0
    let d = (&d2 + 1e-12)?.sqrt()?;
    let hinge = (params.margin - &d)?.relu()?;
    let similar = (labels * &d2)?;
    let dissimilar = ((1.0 - labels)? * hinge.sqr()?)?;
    Ok(((similar + dissimilar)? * 0.5)?.mean_all()?)
}

/// Binary cross-entropy on sigmoid scores, clamped like the focal loss.
pub fn bce_t(scores: &Tensor, labels: &Tensor, eps: f64) -> Result<Tensor> {
    let s = scores.clamp(eps, 1.0 - eps)?;
    let pos = (labels * s.log()?)?;
    let neg = ((1.0 - labels)? * (1.0 - &s)?.log()?)?;
    Ok((pos + neg)?.neg()?.mean_all()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::rect::{rect_transform, Sharpness};
    use crate::losses::{contrastive_loss, focal_loss};
    use candle_core::{DType, Device, Var};
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn to_tensor(m: &Array2<f64>) -> Tensor {
        let (h, w) = m.dim();
        let v: Vec<f32> = m.iter().map(|&x| x as f32).collect();
        Tensor::from_vec(v, (1, 1, h, w), &Device::Cpu).unwrap()
    }

    fn mask_tensor(m: &Array2<u8>) -> Tensor {
        let (h, w) = m.dim();
        let v: Vec<f32> = m.iter().map(|&x| x as f32).collect();
        Tensor::from_vec(v, (1, 1, h, w), &Device::Cpu).unwrap()
    }

    #[test]
    fn rect_transform_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = Array2::from_shape_fn((8, 8), |_| rng.gen_range(0.0..1.0));
        let t = rect_transform_t(&to_tensor(&m), 8.0).unwrap();
        let reference = rect_transform(&m, Sharpness::Power(8.0)).unwrap();
        let got: Vec<f32> = t.flatten_all().unwrap().to_vec1().unwrap();
        for (g, r) in got.iter().zip(reference.iter()) {
            assert!((*g as f64 - r).abs() < 1e-5, "{g} vs {r}");
        }
    }

    #[test]
    fn exact_transform_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = Array2::from_shape_fn((8, 8), |_| rng.gen_range(0.0..1.0));
        let t = rect_transform_exact_t(&to_tensor(&m)).unwrap();
        let reference = rect_transform(&m, Sharpness::Exact).unwrap();
        let got: Vec<f32> = t.flatten_all().unwrap().to_vec1().unwrap();
        for (g, r) in got.iter().zip(reference.iter()) {
            assert!((*g as f64 - r).abs() < 1e-6);
        }
    }

    #[test]
    fn focal_loss_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = Array2::from_shape_fn((8, 8), |_| rng.gen_range(0..2u8));
        let m = Array2::from_shape_fn((8, 8), |_| rng.gen_range(0.02..0.98));
        let params = FocalParams::default();
        let reference = focal_loss(&t, &m, &params).unwrap();
        let got = focal_loss_t(&mask_tensor(&t), &to_tensor(&m), &params)
            .unwrap()
            .to_scalar::<f32>()
            .unwrap();
        assert!((got as f64 - reference).abs() < 1e-5, "{got} vs {reference}");
    }

    #[test]
    fn contrastive_matches_reference_and_backprops() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dev = Device::Cpu;
        for label in [0u8, 1] {
            let a: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let params = ContrastiveParams::default();
            let reference = contrastive_loss(&a, &b, label, &params).unwrap();

            let av = Var::from_tensor(
                &Tensor::from_vec(a.iter().map(|&x| x as f32).collect::<Vec<f32>>(), (1, 16), &dev)
                    .unwrap(),
            )
            .unwrap();
            let bt =
                Tensor::from_vec(b.iter().map(|&x| x as f32).collect::<Vec<f32>>(), (1, 16), &dev)
                    .unwrap();
            let lt = Tensor::from_vec(vec![label as f32], (1,), &dev).unwrap();
            let loss = contrastive_loss_t(av.as_tensor(), &bt, &lt, &params).unwrap();
            let got = loss.to_scalar::<f32>().unwrap();
            assert!((got as f64 - reference).abs() < 1e-5);

            let grads = loss.backward().unwrap();
            let g = grads.get(av.as_tensor()).expect("gradient for a");
            let gv: Vec<f32> = g.flatten_all().unwrap().to_vec1().unwrap();
            assert!(gv.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn zero_distance_similar_pair_has_finite_gradient() {
        let dev = Device::Cpu;
        let av = Var::from_tensor(&Tensor::zeros((1, 8), DType::F32, &dev).unwrap()).unwrap();
        let bt = Tensor::zeros((1, 8), DType::F32, &dev).unwrap();
        let lt = Tensor::from_vec(vec![1f32], (1,), &dev).unwrap();
        let loss =
            contrastive_loss_t(av.as_tensor(), &bt, &lt, &ContrastiveParams::default()).unwrap();
        let grads = loss.backward().unwrap();
        let g: Vec<f32> = grads
            .get(av.as_tensor())
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1()
            .unwrap();
        assert!(g.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn bce_matches_hand_formula() {
        let dev = Device::Cpu;
        let s = Tensor::from_vec(vec![0.9f32, 0.2], (2,), &dev).unwrap();
        let y = Tensor::from_vec(vec![1f32, 0.0], (2,), &dev).unwrap();
        let got = bce_t(&s, &y, 1e-7).unwrap().to_scalar::<f32>().unwrap();
        let expected = (-(0.9f64.ln()) - (0.8f64.ln())) / 2.0;
        assert!((got as f64 - expected).abs() < 1e-6);
    }
}
