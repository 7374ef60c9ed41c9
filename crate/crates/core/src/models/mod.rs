//! Network architectures and training: attention U-Nets, Siamese pair
//! networks, the contrastive-transfer assembly, and the fusion ensemble net.

pub mod fusion;
pub mod handle;
pub mod layers;
pub mod siamese;
pub mod train;
pub mod transfer;
pub mod unet;

pub use fusion::{FusionConfig, FusionNet};
pub use handle::{Arch, Fingerprint, ModelHandle};
pub use siamese::{Siamese, SiameseConfig, SiameseVariant};
pub use train::{
    pair_accuracy, segmentation_loss, train_fusion, train_segmentation, train_siamese, History,
    ResolvedPair, TrainConfig,
};
pub use transfer::{TransferConfig, TransferNet, FROZEN_PREFIX};
pub use unet::{UNet, UNetConfig};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Source, TargetMask};
    use crate::losses::{ContrastiveParams, FocalParams};
    use crate::models::handle::image_batch;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use tempfile::TempDir;

    fn small_unet(attention: bool) -> UNetConfig {
        UNetConfig {
            input_size: 16,
            depth: 2,
            base_filters: 2,
            attention,
            in_channels: 1,
            bottleneck_extra: 0,
        }
    }

    fn random_record(rng: &mut ChaCha8Rng, size: usize, id: &str) -> crate::data::ImageRecord {
        let pixels = Array2::from_shape_fn((size, size), |_| rng.gen_range(0.0..1.0f32));
        crate::data::ImageRecord {
            image_id: id.to_string(),
            pixels,
            original_size: (size as u32, size as u32),
            is_positive: true,
            source: Source::Synthetic,
        }
    }

    #[test]
    fn unet_output_shape_matches_input() {
        let model = ModelHandle::build_unet(&small_unet(false), 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = random_record(&mut rng, 16, "a");
        let map = model.predict_map(&r).unwrap();
        assert_eq!(map.dim(), (16, 16));
        assert!(map.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn unet_batched_forward_matches_single() {
        let model = ModelHandle::build_unet(&small_unet(true), 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r1 = random_record(&mut rng, 16, "a");
        let r2 = random_record(&mut rng, 16, "b");
        let x = image_batch(&[&r1.pixels, &r2.pixels]).unwrap();
        let net = model.as_unet().unwrap();
        let batched = net.forward(&x).unwrap();
        let single = model.predict_map(&r2).unwrap();
        let row: Vec<f32> = batched
            .narrow(0, 1, 1)
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1()
            .unwrap();
        for (b, s) in row.iter().zip(single.iter()) {
            assert!((b - s).abs() < 1e-6);
        }
    }

    #[test]
    fn attention_adds_parameters_and_gates_every_level() {
        let plain = ModelHandle::build_unet(&small_unet(false), 3).unwrap();
        let gated = ModelHandle::build_unet(&small_unet(true), 3).unwrap();
        assert!(gated.param_count() > plain.param_count());
        assert_eq!(gated.as_unet().unwrap().gate_count(), 2);
        assert_eq!(plain.as_unet().unwrap().gate_count(), 0);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = random_record(&mut rng, 16, "a");
        let x = image_batch(&[&r.pixels]).unwrap();
        let coeffs = gated.as_unet().unwrap().attention_coefficients(&x).unwrap();
        assert_eq!(coeffs.len(), 2);
        for c in &coeffs {
            let v: Vec<f32> = c.flatten_all().unwrap().to_vec1().unwrap();
            assert!(v.iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
    }

    #[test]
    fn deterministic_init_from_seed() {
        let a = ModelHandle::build_unet(&small_unet(false), 11).unwrap();
        let b = ModelHandle::build_unet(&small_unet(false), 11).unwrap();
        let c = ModelHandle::build_unet(&small_unet(false), 12).unwrap();
        let av = a.var_values().unwrap();
        let bv = b.var_values().unwrap();
        let cv = c.var_values().unwrap();
        assert_eq!(av, bv);
        assert_ne!(av, cv);
    }

    fn small_siamese(variant: SiameseVariant) -> SiameseConfig {
        SiameseConfig {
            variant,
            embed_dim: 8,
            input_size: 16,
            base_filters: 2,
            ..SiameseConfig::default()
        }
    }

    #[test]
    fn siamese_branches_are_weight_tied() {
        // one branch serves both inputs, so identical inputs embed
        // bit-identically and the parameter list has a single branch
        for variant in [SiameseVariant::CompactEmbedding, SiameseVariant::FullMap] {
            let model = ModelHandle::build_siamese(&small_siamese(variant), 5).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let r = random_record(&mut rng, 16, "a");
            let x = image_batch(&[&r.pixels]).unwrap();
            let net = model.as_siamese().unwrap();
            let e1: Vec<f32> = net.embed(&x).unwrap().flatten_all().unwrap().to_vec1().unwrap();
            let e2: Vec<f32> = net.embed(&x).unwrap().flatten_all().unwrap().to_vec1().unwrap();
            assert_eq!(e1, e2);
            let branches = model
                .vars()
                .iter()
                .filter(|(n, _)| n.starts_with("branch."))
                .count();
            assert!(branches > 0);
            assert!(model.vars().iter().all(|(n, _)| {
                n.starts_with("branch.") || n.starts_with("head.")
            }));
        }
    }

    #[test]
    fn symmetric_head_score_is_order_invariant() {
        let model =
            ModelHandle::build_siamese(&small_siamese(SiameseVariant::CompactEmbedding), 5)
                .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_record(&mut rng, 16, "a");
        let b = random_record(&mut rng, 16, "b");
        let xa = image_batch(&[&a.pixels]).unwrap();
        let xb = image_batch(&[&b.pixels]).unwrap();
        let net = model.as_siamese().unwrap();
        let (_, _, s_ab) = net.forward_pair(&xa, &xb).unwrap();
        let (_, _, s_ba) = net.forward_pair(&xb, &xa).unwrap();
        let v_ab: Vec<f32> = s_ab.to_vec1().unwrap();
        let v_ba: Vec<f32> = s_ba.to_vec1().unwrap();
        assert!((v_ab[0] - v_ba[0]).abs() < 1e-6);
    }

    #[test]
    fn transfer_assembly_copies_and_freezes_branch() {
        let siamese =
            ModelHandle::build_siamese(&small_siamese(SiameseVariant::CompactEmbedding), 9)
                .unwrap();
        let base = UNetConfig {
            input_size: 16,
            depth: 2,
            base_filters: 2,
            attention: false,
            in_channels: 1,
            bottleneck_extra: 0,
        };
        let transfer = ModelHandle::assemble_transfer(&siamese, &base, 10).unwrap();

        // every frozen var equals the trained siamese value
        let source: std::collections::HashMap<String, Vec<f32>> =
            siamese.var_values().unwrap().into_iter().collect();
        let frozen = transfer.frozen_values().unwrap();
        assert!(!frozen.is_empty());
        for (name, values) in &frozen {
            let orig = name.strip_prefix(FROZEN_PREFIX).unwrap();
            assert_eq!(&source[orig], values, "mismatch in {name}");
        }
        // and none of them appears in the trainable set
        let trainable = transfer.trainable_vars().len();
        assert_eq!(trainable, transfer.vars().len() - frozen.len());
    }

    #[test]
    fn frozen_branch_is_untouched_by_training() {
        let siamese =
            ModelHandle::build_siamese(&small_siamese(SiameseVariant::CompactEmbedding), 9)
                .unwrap();
        let base = UNetConfig {
            input_size: 16,
            depth: 2,
            base_filters: 2,
            attention: false,
            in_channels: 1,
            bottleneck_extra: 0,
        };
        let transfer = ModelHandle::assemble_transfer(&siamese, &base, 10).unwrap();
        let before = transfer.frozen_values().unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let items: Vec<_> = (0..4)
            .map(|i| {
                let r = random_record(&mut rng, 16, &format!("s{i}"));
                let mut m = Array2::zeros((16, 16));
                m.slice_mut(ndarray::s![4..8, 4..8]).fill(1u8);
                (r, TargetMask::from_values(m).unwrap())
            })
            .collect();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 2,
            patience: 10,
            ..TrainConfig::default()
        };
        train_segmentation(
            &transfer,
            &items,
            &items,
            &FocalParams::default(),
            8.0,
            &cfg,
        )
        .unwrap();
        let after = transfer.frozen_values().unwrap();
        assert_eq!(before, after, "frozen parameters moved during training");
    }

    #[test]
    fn transfer_forward_both_variants() {
        for variant in [SiameseVariant::CompactEmbedding, SiameseVariant::FullMap] {
            let siamese = ModelHandle::build_siamese(&small_siamese(variant), 9).unwrap();
            let base = UNetConfig {
                input_size: 16,
                depth: 2,
                base_filters: 2,
                attention: false,
                in_channels: 1,
                bottleneck_extra: 0,
            };
            let transfer = ModelHandle::assemble_transfer(&siamese, &base, 10).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let r = random_record(&mut rng, 16, "a");
            let map = transfer.predict_map(&r).unwrap();
            assert_eq!(map.dim(), (16, 16));
            assert!(map.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn overfit_single_rectangle() {
        // training on one tiny example must drive the loss sharply down
        let model = ModelHandle::build_unet(&small_unet(false), 21).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let r = random_record(&mut rng, 16, "a");
        let mut m = Array2::zeros((16, 16));
        m.slice_mut(ndarray::s![2..10, 3..12]).fill(1u8);
        let items = vec![(r, TargetMask::from_values(m).unwrap())];
        let cfg = TrainConfig {
            epochs: 120,
            batch_size: 1,
            learning_rate: 3e-3,
            patience: 120,
            ..TrainConfig::default()
        };
        let history =
            train_segmentation(&model, &items, &items, &FocalParams::default(), 8.0, &cfg).unwrap();
        let first = history.train_loss[0];
        let last = *history.train_loss.last().unwrap();
        assert!(
            last < 0.5 * first,
            "loss did not drop: {first} -> {last}"
        );
    }

    #[test]
    fn training_is_seed_deterministic() {
        let mut runs = Vec::new();
        for _ in 0..2 {
            let model = ModelHandle::build_unet(&small_unet(false), 21).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            let items: Vec<_> = (0..3)
                .map(|i| {
                    let r = random_record(&mut rng, 16, &format!("s{i}"));
                    let mut m = Array2::zeros((16, 16));
                    m.slice_mut(ndarray::s![2..6, 2..6]).fill(1u8);
                    (r, TargetMask::from_values(m).unwrap())
                })
                .collect();
            let cfg = TrainConfig {
                epochs: 3,
                batch_size: 2,
                seed: 42,
                patience: 10,
                ..TrainConfig::default()
            };
            let history =
                train_segmentation(&model, &items, &items, &FocalParams::default(), 8.0, &cfg)
                    .unwrap();
            runs.push((history.train_loss.clone(), model.var_values().unwrap()));
        }
        assert_eq!(runs[0].0, runs[1].0);
        assert_eq!(runs[0].1, runs[1].1);
    }

    #[test]
    fn checkpoint_round_trip_preserves_everything() {
        let siamese =
            ModelHandle::build_siamese(&small_siamese(SiameseVariant::CompactEmbedding), 9)
                .unwrap();
        let base = UNetConfig {
            input_size: 16,
            depth: 2,
            base_filters: 2,
            attention: true,
            in_channels: 1,
            bottleneck_extra: 0,
        };
        let transfer = ModelHandle::assemble_transfer(&siamese, &base, 10).unwrap();
        let dir = TempDir::new().unwrap();
        transfer.save(dir.path(), "transfer").unwrap();
        let loaded = ModelHandle::load(dir.path(), "transfer").unwrap();
        assert_eq!(loaded.fingerprint, transfer.fingerprint);
        assert_eq!(loaded.frozen_names(), transfer.frozen_names());
        assert_eq!(loaded.var_values().unwrap(), transfer.var_values().unwrap());

        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let r = random_record(&mut rng, 16, "a");
        let m1 = transfer.predict_map(&r).unwrap();
        let m2 = loaded.predict_map(&r).unwrap();
        assert_eq!(m1, m2);
    }

    #[test]
    fn missing_checkpoint_is_a_dependency_error() {
        let dir = TempDir::new().unwrap();
        match ModelHandle::load(dir.path(), "nope") {
            Err(crate::error::Error::MissingDependency(_)) => {}
            Err(other) => panic!("expected missing-dependency error, got {other}"),
            Ok(_) => panic!("expected missing-dependency error, got a model"),
        }
    }

    #[test]
    fn predict_mask_thresholds_and_rectangularizes() {
        let model = ModelHandle::build_unet(&small_unet(false), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let r = random_record(&mut rng, 16, "a");
        let (map, mask) = model.predict_mask(&r, 0.5, false).unwrap();
        for (p, m) in map.iter().zip(mask.values.iter()) {
            assert_eq!(*m == 1, *p >= 0.5);
        }
        // exact rect post-processing makes the map separable: each value is
        // the product of its row max and column max
        let (rect, _) = model.predict_mask(&r, 0.5, true).unwrap();
        for i in 0..16 {
            for j in 0..16 {
                let row_max = (0..16).map(|k| map[[i, k]]).fold(f32::MIN, f32::max);
                let col_max = (0..16).map(|k| map[[k, j]]).fold(f32::MIN, f32::max);
                assert!((rect[[i, j]] - row_max * col_max).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn siamese_training_learns_trivial_pairs() {
        // bright-vs-dark pairs: similar = same brightness regime
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut make = |bright: bool, id: &str| {
            let base = if bright { 0.8 } else { 0.2 };
            let pixels =
                Array2::from_shape_fn((16, 16), |_| base + rng.gen_range(-0.05..0.05f32));
            crate::data::ImageRecord {
                image_id: id.to_string(),
                pixels,
                original_size: (16, 16),
                is_positive: false,
                source: Source::Synthetic,
            }
        };
        let mut pairs = Vec::new();
        for i in 0..12 {
            let same = i % 2 == 0;
            let first_bright = i % 4 < 2;
            pairs.push(ResolvedPair {
                a: make(first_bright, &format!("a{i}")),
                b: make(first_bright == same, &format!("b{i}")),
                label: same as u8,
            });
        }
        let model =
            ModelHandle::build_siamese(&small_siamese(SiameseVariant::CompactEmbedding), 15)
                .unwrap();
        let cfg = TrainConfig {
            epochs: 30,
            batch_size: 4,
            learning_rate: 3e-3,
            patience: 30,
            target_accuracy: Some(1.0),
            ..TrainConfig::default()
        };
        let history =
            train_siamese(&model, &pairs, &pairs, &ContrastiveParams::default(), &cfg).unwrap();
        let final_acc = *history.val_accuracy.last().unwrap();
        assert!(final_acc >= 0.9, "pair accuracy stayed at {final_acc}");
    }

    #[test]
    fn fusion_learns_to_pick_the_informative_channel() {
        // channel 0 carries the target, channel 1 is noise
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let mut items = Vec::new();
        for _ in 0..6 {
            let mut m = Array2::zeros((16, 16));
            let x0 = rng.gen_range(0..8);
            let y0 = rng.gen_range(0..8);
            m.slice_mut(ndarray::s![y0..y0 + 6, x0..x0 + 6]).fill(1u8);
            let signal = Array2::from_shape_fn((16, 16), |(i, j)| {
                if m[[i, j]] == 1 {
                    rng.gen_range(0.7..0.95f32)
                } else {
                    rng.gen_range(0.05..0.3f32)
                }
            });
            let noise = Array2::from_shape_fn((16, 16), |_| rng.gen_range(0.0..1.0f32));
            items.push((vec![signal, noise], TargetMask::from_values(m).unwrap()));
        }
        let model = ModelHandle::build_fusion(
            &FusionConfig {
                k: 2,
                hidden: 4,
                input_size: 16,
            },
            17,
        )
        .unwrap();
        let cfg = TrainConfig {
            epochs: 15,
            batch_size: 3,
            learning_rate: 3e-3,
            patience: 15,
            ..TrainConfig::default()
        };
        let history =
            train_fusion(&model, &items, &items, &FocalParams::default(), &cfg).unwrap();
        let first = history.train_loss[0];
        let last = *history.train_loss.last().unwrap();
        assert!(last < first, "fusion loss did not improve: {first} -> {last}");
    }

    #[test]
    fn nan_learning_rate_is_rejected() {
        let cfg = TrainConfig {
            learning_rate: f64::NAN,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn early_stopping_restores_best_epoch() {
        let model = ModelHandle::build_unet(&small_unet(false), 21).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let train_items: Vec<_> = (0..2)
            .map(|i| {
                let r = random_record(&mut rng, 16, &format!("t{i}"));
                let mut m = Array2::zeros((16, 16));
                m.slice_mut(ndarray::s![2..6, 2..6]).fill(1u8);
                (r, TargetMask::from_values(m).unwrap())
            })
            .collect();
        let cfg = TrainConfig {
            epochs: 6,
            batch_size: 2,
            patience: 2,
            ..TrainConfig::default()
        };
        let history = train_segmentation(
            &model,
            &train_items,
            &train_items,
            &FocalParams::default(),
            8.0,
            &cfg,
        )
        .unwrap();
        assert!(history.best_epoch < history.val_loss.len());
        // restored weights reproduce the best recorded validation loss
        let restored = segmentation_loss(&model, &train_items, &FocalParams::default(), 8.0, 2)
            .unwrap();
        let best = history
            .val_loss
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        assert!((restored - best).abs() < 1e-9, "{restored} vs {best}");
    }

    #[test]
    fn mismatched_input_size_is_rejected() {
        let model = ModelHandle::build_unet(&small_unet(false), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let r = random_record(&mut rng, 32, "a");
        assert!(model.predict_map(&r).is_err());
    }

    #[test]
    fn transfer_rejects_non_siamese_source() {
        let unet = ModelHandle::build_unet(&small_unet(false), 3).unwrap();
        let base = small_unet(false);
        assert!(ModelHandle::assemble_transfer(&unet, &base, 4).is_err());
    }

    #[test]
    fn full_map_transfer_uses_two_input_channels() {
        let cfg = TransferConfig::derive(
            &small_siamese(SiameseVariant::FullMap),
            &small_unet(false),
        )
        .unwrap();
        assert_eq!(cfg.unet.in_channels, 2);
        assert_eq!(cfg.unet.bottleneck_extra, 0);
        let compact = TransferConfig::derive(
            &small_siamese(SiameseVariant::CompactEmbedding),
            &small_unet(false),
        )
        .unwrap();
        assert_eq!(compact.unet.in_channels, 1);
        assert_eq!(compact.unet.bottleneck_extra, 1);
    }
}
