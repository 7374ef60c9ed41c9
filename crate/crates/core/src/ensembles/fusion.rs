//! Learned model ensemble: stack specialized-model prediction maps and
//! train the small fusion network to combine them.

use ndarray::Array2;

use crate::data::{ImageRecord, TargetMask};
use crate::error::{Error, Result};
use crate::losses::FocalParams;
use crate::models::{train_fusion, FusionConfig, History, ModelHandle, TrainConfig};

/// Run every specialized model on one scan, producing the K-channel stack
/// the fusion network consumes.
pub fn prediction_stack(
    specialists: &[ModelHandle],
    image: &ImageRecord,
) -> Result<Vec<Array2<f32>>> {
    if specialists.is_empty() {
        return Err(Error::data("model ensemble needs at least one specialist"));
    }
    specialists.iter().map(|m| m.predict_map(image)).collect()
}

/// Train the fusion network over labeled scans, using the (frozen)
/// specialized models as feature producers.
pub fn train_model_ensemble(
    specialists: &[ModelHandle],
    train: &[(ImageRecord, TargetMask)],
    val: &[(ImageRecord, TargetMask)],
    hidden: usize,
    focal: &FocalParams,
    cfg: &TrainConfig,
    init_seed: u64,
) -> Result<(ModelHandle, History)> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::data("fusion training needs non-empty train and val sets"));
    }
    let input_size = train[0].0.input_size();
    let config = FusionConfig {
        k: specialists.len(),
        hidden,
        input_size,
    };
    let fusion = ModelHandle::build_fusion(&config, init_seed)?;

    let stacks = |items: &[(ImageRecord, TargetMask)]| -> Result<Vec<(Vec<Array2<f32>>, TargetMask)>> {
        items
            .iter()
            .map(|(r, m)| Ok((prediction_stack(specialists, r)?, m.clone())))
            .collect()
    };
    let train_stacks = stacks(train)?;
    let val_stacks = stacks(val)?;
    let history = train_fusion(&fusion, &train_stacks, &val_stacks, focal, cfg)?;
    Ok((fusion, history))
}

/// Fused probability map for one scan.
pub fn apply_model_ensemble(
    specialists: &[ModelHandle],
    fusion: &ModelHandle,
    image: &ImageRecord,
) -> Result<Array2<f32>> {
    let stack = prediction_stack(specialists, image)?;
    let net = fusion.as_fusion()?;
    if stack.len() != net.config.k {
        return Err(Error::ShapeMismatch {
            expected: format!("{} specialists", net.config.k),
            got: format!("{}", stack.len()),
        });
    }
    let (h, w) = stack[0].dim();
    let mut data = Vec::with_capacity(stack.len() * h * w);
    for map in &stack {
        data.extend(map.iter().copied());
    }
    let x = candle_core::Tensor::from_vec(data, (1, stack.len(), h, w), &candle_core::Device::Cpu)?;
    let y = net.forward(&x)?;
    crate::models::handle::tensor_to_map(&y.squeeze(0)?.squeeze(0)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Source;
    use crate::models::UNetConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn record(rng: &mut ChaCha8Rng, id: &str) -> ImageRecord {
        ImageRecord {
            image_id: id.to_string(),
            pixels: Array2::from_shape_fn((16, 16), |_| rng.gen_range(0.0..1.0f32)),
            original_size: (16, 16),
            is_positive: true,
            source: Source::Synthetic,
        }
    }

    fn tiny_unet(seed: u64) -> ModelHandle {
        ModelHandle::build_unet(
            &UNetConfig {
                input_size: 16,
                depth: 2,
                base_filters: 2,
                attention: false,
                in_channels: 1,
                bottleneck_extra: 0,
            },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn ensemble_round_trip() {
        let specialists = vec![tiny_unet(1), tiny_unet(2)];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let items: Vec<_> = (0..4)
            .map(|i| {
                let r = record(&mut rng, &format!("s{i}"));
                let mut m = Array2::zeros((16, 16));
                m.slice_mut(ndarray::s![4..10, 4..10]).fill(1u8);
                (r, TargetMask::from_values(m).unwrap())
            })
            .collect();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 2,
            patience: 5,
            ..TrainConfig::default()
        };
        let (fusion, history) = train_model_ensemble(
            &specialists,
            &items,
            &items,
            4,
            &FocalParams::default(),
            &cfg,
            7,
        )
        .unwrap();
        assert_eq!(history.train_loss.len(), 2);
        let map = apply_model_ensemble(&specialists, &fusion, &items[0].0).unwrap();
        assert_eq!(map.dim(), (16, 16));
        assert!(map.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn empty_specialist_list_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = record(&mut rng, "a");
        assert!(prediction_stack(&[], &r).is_err());
    }
}
