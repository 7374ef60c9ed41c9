//! Seeded mini-batch training loops with validation tracking, patience-based
//! early stopping, and best-checkpoint restore.

use std::path::Path;

use candle_core::{Device, Tensor};
use candle_nn::optim::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ImageRecord, TargetMask};
use crate::error::{Error, Result};
use crate::losses::tensor::{bce_t, contrastive_loss_t, rect_focal_loss_t};
use crate::losses::{ContrastiveParams, FocalParams};
use crate::models::handle::{image_batch, mask_batch, ModelHandle};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Stop as soon as validation pair accuracy reaches this value
    /// (Siamese training only).
    #[serde(default)]
    pub target_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 8,
            learning_rate: 1e-3,
            seed: 0,
            patience: 5,
            target_accuracy: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch_size must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config(format!(
                "learning rate must be a positive finite number, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Per-epoch loss curves of one training run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct History {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Pair classification accuracy per epoch; empty for segmentation runs.
    pub val_accuracy: Vec<f64>,
    /// Epoch whose weights the handle holds after training (0-based).
    pub best_epoch: usize,
}

impl History {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)
            .map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn make_optimizer(model: &ModelHandle, lr: f64) -> Result<AdamW> {
    let vars = model.trainable_vars();
    if vars.is_empty() {
        return Err(Error::model("no trainable parameters"));
    }
    Ok(AdamW::new(
        vars,
        ParamsAdamW {
            lr,
            ..Default::default()
        },
    )?)
}

fn check_finite(loss: f64, epoch: usize) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::Numeric(format!(
            "loss became non-finite at epoch {epoch}; aborting training"
        )));
    }
    Ok(())
}

/// Tracks the best validation loss and restores those weights at the end.
struct BestTracker {
    best_loss: f64,
    best_epoch: usize,
    snapshot: Vec<(String, Vec<f32>)>,
    stale: usize,
}

impl BestTracker {
    fn new(model: &ModelHandle) -> Result<Self> {
        Ok(BestTracker {
            best_loss: f64::INFINITY,
            best_epoch: 0,
            snapshot: model.var_values()?,
            stale: 0,
        })
    }

    /// Record this epoch; returns true when patience is exhausted.
    fn observe(&mut self, model: &ModelHandle, epoch: usize, val_loss: f64, patience: usize) -> Result<bool> {
        if val_loss < self.best_loss {
            self.best_loss = val_loss;
            self.best_epoch = epoch;
            self.snapshot = model.var_values()?;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        Ok(self.stale >= patience)
    }

    fn restore(&self, model: &ModelHandle) -> Result<()> {
        model.set_var_values(&self.snapshot)
    }
}

/// Train a segmentation-shaped handle (specialized, supermodel, or transfer)
/// with the rectangularizing focal loss.
pub fn train_segmentation(
    model: &ModelHandle,
    train: &[(ImageRecord, TargetMask)],
    val: &[(ImageRecord, TargetMask)],
    focal: &FocalParams,
    sharpness_p: f64,
    cfg: &TrainConfig,
) -> Result<History> {
    cfg.validate()?;
    focal.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::data("segmentation training needs non-empty train and val sets"));
    }
    let mut opt = make_optimizer(model, cfg.learning_rate)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = History::default();
    let mut tracker = BestTracker::new(model)?;

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let images: Vec<&ndarray::Array2<f32>> =
                chunk.iter().map(|&i| &train[i].0.pixels).collect();
            let masks: Vec<&TargetMask> = chunk.iter().map(|&i| &train[i].1).collect();
            let x = image_batch(&images)?;
            let y = mask_batch(&masks)?;
            let pred = model.forward_batch(&x)?;
            let loss = rect_focal_loss_t(&y, &pred, focal, sharpness_p)?;
            let loss_val = loss.to_scalar::<f32>()? as f64;
            check_finite(loss_val, epoch)?;
            opt.backward_step(&loss)?;
            epoch_loss += loss_val;
            batches += 1;
        }
        history.train_loss.push(epoch_loss / batches as f64);

        let val_loss = segmentation_loss(model, val, focal, sharpness_p, cfg.batch_size)?;
        check_finite(val_loss, epoch)?;
        history.val_loss.push(val_loss);
        if tracker.observe(model, epoch, val_loss, cfg.patience)? {
            break;
        }
    }
    tracker.restore(model)?;
    history.best_epoch = tracker.best_epoch;
    Ok(history)
}

/// Mean rect-focal loss of a handle over a labeled set (no weight updates).
pub fn segmentation_loss(
    model: &ModelHandle,
    items: &[(ImageRecord, TargetMask)],
    focal: &FocalParams,
    sharpness_p: f64,
    batch_size: usize,
) -> Result<f64> {
    let mut total = 0.0;
    let mut batches = 0usize;
    for chunk in items.chunks(batch_size.max(1)) {
        let images: Vec<&ndarray::Array2<f32>> = chunk.iter().map(|(r, _)| &r.pixels).collect();
        let masks: Vec<&TargetMask> = chunk.iter().map(|(_, m)| m).collect();
        let x = image_batch(&images)?.detach();
        let y = mask_batch(&masks)?;
        let pred = model.forward_batch(&x)?;
        total += rect_focal_loss_t(&y, &pred, focal, sharpness_p)?.to_scalar::<f32>()? as f64;
        batches += 1;
    }
    Ok(total / batches.max(1) as f64)
}

/// One resolved training pair: two scans plus a similarity label (1 = same
/// abnormality class or both normal).
pub struct ResolvedPair {
    pub a: ImageRecord,
    pub b: ImageRecord,
    pub label: u8,
}

fn pair_batches(
    pairs: &[ResolvedPair],
    order: &[usize],
    batch_size: usize,
) -> Result<Vec<(Tensor, Tensor, Tensor)>> {
    let mut out = Vec::new();
    for chunk in order.chunks(batch_size) {
        let a: Vec<&ndarray::Array2<f32>> = chunk.iter().map(|&i| &pairs[i].a.pixels).collect();
        let b: Vec<&ndarray::Array2<f32>> = chunk.iter().map(|&i| &pairs[i].b.pixels).collect();
        let labels: Vec<f32> = chunk.iter().map(|&i| pairs[i].label as f32).collect();
        out.push((
            image_batch(&a)?,
            image_batch(&b)?,
            Tensor::from_vec(labels, (chunk.len(),), &Device::Cpu)?,
        ));
    }
    Ok(out)
}

/// Pair classification accuracy at a 0.5 score threshold.
pub fn pair_accuracy(model: &ModelHandle, pairs: &[ResolvedPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::data("pair accuracy needs at least one pair"));
    }
    let net = model.as_siamese()?;
    let order: Vec<usize> = (0..pairs.len()).collect();
    let mut correct = 0usize;
    for (a, b, labels) in pair_batches(pairs, &order, 16)? {
        let (_, _, score) = net.forward_pair(&a.detach(), &b.detach())?;
        let scores: Vec<f32> = score.to_vec1()?;
        let truth: Vec<f32> = labels.to_vec1()?;
        correct += scores
            .iter()
            .zip(&truth)
            .filter(|(s, t)| (**s >= 0.5) == (**t >= 0.5))
            .count();
    }
    Ok(correct as f64 / pairs.len() as f64)
}

/// Train a Siamese handle on labeled pairs with the combined
/// classification + contrastive objective.
pub fn train_siamese(
    model: &ModelHandle,
    train: &[ResolvedPair],
    val: &[ResolvedPair],
    contrastive: &ContrastiveParams,
    cfg: &TrainConfig,
) -> Result<History> {
    cfg.validate()?;
    contrastive.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::data("siamese training needs non-empty train and val pair sets"));
    }
    let net = model.as_siamese()?;
    let bce_w = net.config.bce_weight;
    let con_w = net.config.contrastive_weight;
    let mut opt = make_optimizer(model, cfg.learning_rate)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = History::default();
    let mut tracker = BestTracker::new(model)?;

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for (a, b, labels) in pair_batches(train, &order, cfg.batch_size)? {
            let (ea, eb, score) = net.forward_pair(&a, &b)?;
            let mut loss = (bce_t(&score, &labels, 1e-7)? * bce_w)?;
            if con_w > 0.0 {
                loss = (loss + (contrastive_loss_t(&ea, &eb, &labels, contrastive)? * con_w)?)?;
            }
            let loss_val = loss.to_scalar::<f32>()? as f64;
            check_finite(loss_val, epoch)?;
            opt.backward_step(&loss)?;
            epoch_loss += loss_val;
            batches += 1;
        }
        history.train_loss.push(epoch_loss / batches as f64);

        let val_order: Vec<usize> = (0..val.len()).collect();
        let mut val_loss = 0.0;
        let mut val_batches = 0usize;
        for (a, b, labels) in pair_batches(val, &val_order, cfg.batch_size)? {
            let (ea, eb, score) = net.forward_pair(&a.detach(), &b.detach())?;
            let mut loss = (bce_t(&score, &labels, 1e-7)? * bce_w)?;
            if con_w > 0.0 {
                loss = (loss + (contrastive_loss_t(&ea, &eb, &labels, contrastive)? * con_w)?)?;
            }
            val_loss += loss.to_scalar::<f32>()? as f64;
            val_batches += 1;
        }
        let val_loss = val_loss / val_batches as f64;
        check_finite(val_loss, epoch)?;
        history.val_loss.push(val_loss);
        let accuracy = pair_accuracy(model, val)?;
        history.val_accuracy.push(accuracy);

        let stop = tracker.observe(model, epoch, val_loss, cfg.patience)?;
        if let Some(target) = cfg.target_accuracy {
            if accuracy >= target {
                // good enough; keep the current weights
                tracker.best_epoch = epoch;
                tracker.snapshot = model.var_values()?;
                break;
            }
        }
        if stop {
            break;
        }
    }
    tracker.restore(model)?;
    history.best_epoch = tracker.best_epoch;
    Ok(history)
}

/// Train the fusion network on stacked specialized-model prediction maps.
///
/// Each sample pairs a `(K, H, W)` stack of probability maps with the
/// ground-truth mask.
pub fn train_fusion(
    model: &ModelHandle,
    train: &[(Vec<ndarray::Array2<f32>>, TargetMask)],
    val: &[(Vec<ndarray::Array2<f32>>, TargetMask)],
    focal: &FocalParams,
    cfg: &TrainConfig,
) -> Result<History> {
    cfg.validate()?;
    focal.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::data("fusion training needs non-empty train and val sets"));
    }
    let net = model.as_fusion()?;
    let k = net.config.k;
    let mut opt = make_optimizer(model, cfg.learning_rate)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = History::default();
    let mut tracker = BestTracker::new(model)?;

    let batch = |chunk: &[usize], items: &[(Vec<ndarray::Array2<f32>>, TargetMask)]| -> Result<(Tensor, Tensor)> {
        let (h, w) = items[chunk[0]].1.values.dim();
        let mut data = Vec::with_capacity(chunk.len() * k * h * w);
        for &i in chunk {
            let (stack, _) = &items[i];
            if stack.len() != k {
                return Err(Error::ShapeMismatch {
                    expected: format!("{k} maps per stack"),
                    got: format!("{}", stack.len()),
                });
            }
            for map in stack {
                data.extend(map.iter().copied());
            }
        }
        let x = Tensor::from_vec(data, (chunk.len(), k, h, w), &Device::Cpu)?;
        let masks: Vec<&TargetMask> = chunk.iter().map(|&i| &items[i].1).collect();
        Ok((x, mask_batch(&masks)?))
    };

    let eval_loss = |items: &[(Vec<ndarray::Array2<f32>>, TargetMask)]| -> Result<f64> {
        let order: Vec<usize> = (0..items.len()).collect();
        let mut total = 0.0;
        let mut n = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let (x, y) = batch(chunk, items)?;
            let pred = model.forward_batch(&x.detach())?;
            total += crate::losses::tensor::focal_loss_t(&y, &pred, focal)?.to_scalar::<f32>()?
                as f64;
            n += 1;
        }
        Ok(total / n.max(1) as f64)
    };

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let (x, y) = batch(chunk, train)?;
            let pred = model.forward_batch(&x)?;
            let loss = crate::losses::tensor::focal_loss_t(&y, &pred, focal)?;
            let loss_val = loss.to_scalar::<f32>()? as f64;
            check_finite(loss_val, epoch)?;
            opt.backward_step(&loss)?;
            epoch_loss += loss_val;
            batches += 1;
        }
        history.train_loss.push(epoch_loss / batches as f64);
        let val_loss = eval_loss(val)?;
        check_finite(val_loss, epoch)?;
        history.val_loss.push(val_loss);
        if tracker.observe(model, epoch, val_loss, cfg.patience)? {
            break;
        }
    }
    tracker.restore(model)?;
    history.best_epoch = tracker.best_epoch;
    Ok(history)
}
