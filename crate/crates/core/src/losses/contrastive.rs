//! Siamese contrastive loss on embedding pairs.

use crate::error::{Error, Result};
use crate::losses::ContrastiveParams;

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("embedding length {}", a.len()),
            got: format!("{}", b.len()),
        });
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite embedding value".into()));
    }
    Ok(())
}

/// Euclidean distance between two embeddings.
pub fn euclidean_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    check_lengths(a, b)?;
    Ok(a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// `L = ½·y·D² + ½·(1−y)·max(0, φ−D)²` with label 1 meaning similar.
pub fn contrastive_loss(
    a: &[f64],
    b: &[f64],
    label: u8,
    params: &ContrastiveParams,
) -> Result<f64> {
    params.validate()?;
    if label > 1 {
        return Err(Error::data(format!("pair label must be 0 or 1, got {label}")));
    }
    let d = euclidean_distance(a, b)?;
    let y = label as f64;
    let hinge = (params.margin - d).max(0.0);
    Ok(0.5 * y * d * d + 0.5 * (1.0 - y) * hinge * hinge)
}

/// Value plus analytic gradients with respect to both embeddings.
pub fn contrastive_loss_grad(
    a: &[f64],
    b: &[f64],
    label: u8,
    params: &ContrastiveParams,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let value = contrastive_loss(a, b, label, params)?;
    let d = euclidean_distance(a, b)?;
    let y = label as f64;
    // dL/da_i = y (a_i - b_i) - (1-y) max(0, φ-D) (a_i - b_i) / D
    let scale = if d > 0.0 {
        y - (1.0 - y) * (params.margin - d).max(0.0) / d
    } else {
        // at D = 0 the similar term has zero gradient; the hinge term is
        // nonsmooth there and we take the zero subgradient
        0.0
    };
    let grad_a: Vec<f64> = a.iter().zip(b.iter()).map(|(x, z)| scale * (x - z)).collect();
    let grad_b: Vec<f64> = grad_a.iter().map(|g| -g).collect();
    Ok((value, grad_a, grad_b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_embeddings_have_zero_distance() {
        let a = vec![1.0, -2.0, 3.0];
        assert_eq!(euclidean_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn pythagorean_distance() {
        assert_eq!(euclidean_distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
    }

    #[test]
    fn random_pair_matches_elementwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a: Vec<f64> = (0..128).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let b: Vec<f64> = (0..128).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut acc = 0.0;
        for i in 0..128 {
            acc += (a[i] - b[i]).powi(2);
        }
        let oracle = acc.sqrt();
        assert!((euclidean_distance(&a, &b).unwrap() - oracle).abs() < 1e-9);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        assert!(euclidean_distance(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn similar_identical_pair_scores_zero() {
        let a = vec![0.5; 8];
        let p = ContrastiveParams::default();
        assert_eq!(contrastive_loss(&a, &a, 1, &p).unwrap(), 0.0);
    }

    #[test]
    fn dissimilar_beyond_margin_scores_zero() {
        let p = ContrastiveParams { margin: 1.0 };
        let loss = contrastive_loss(&[0.0, 0.0], &[3.0, 4.0], 0, &p).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn hand_computed_values() {
        let p = ContrastiveParams { margin: 1.0 };
        // label 0, D = 0.5 -> 0.5 * 0.5^2 = 0.125
        let l0 = contrastive_loss(&[0.0], &[0.5], 0, &p).unwrap();
        assert!((l0 - 0.125).abs() < 1e-12);
        // label 1, D = 2 -> 0.5 * 4 = 2
        let l1 = contrastive_loss(&[0.0], &[2.0], 1, &p).unwrap();
        assert!((l1 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_label_is_rejected() {
        assert!(contrastive_loss(&[0.0], &[1.0], 2, &ContrastiveParams::default()).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = ContrastiveParams { margin: 1.0 };
        for label in [0u8, 1u8] {
            let a: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (_, ga, gb) = contrastive_loss_grad(&a, &b, label, &p).unwrap();
            let h = 1e-6;
            for i in 0..16 {
                let mut ap = a.clone();
                ap[i] += h;
                let mut am = a.clone();
                am[i] -= h;
                let fd = (contrastive_loss(&ap, &b, label, &p).unwrap()
                    - contrastive_loss(&am, &b, label, &p).unwrap())
                    / (2.0 * h);
                let denom = fd.abs().max(ga[i].abs()).max(1e-8);
                assert!(((ga[i] - fd) / denom).abs() < 1e-4);
                let mut bp = b.clone();
                bp[i] += h;
                let mut bm = b.clone();
                bm[i] -= h;
                let fdb = (contrastive_loss(&a, &bp, label, &p).unwrap()
                    - contrastive_loss(&a, &bm, label, &p).unwrap())
                    / (2.0 * h);
                let denomb = fdb.abs().max(gb[i].abs()).max(1e-8);
                assert!(((gb[i] - fdb) / denomb).abs() < 1e-4);
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn loss_is_never_negative(
            a in proptest::collection::vec(-3.0f64..3.0, 8),
            b in proptest::collection::vec(-3.0f64..3.0, 8),
            label in 0u8..2,
        ) {
            let l = contrastive_loss(&a, &b, label, &ContrastiveParams::default()).unwrap();
            proptest::prop_assert!(l >= 0.0);
        }
    }
}
