//! Opaque trained-model handle: architecture fingerprint, parameter
//! registry, frozen set, and checkpoint I/O.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use candle_core::{Device, Tensor, Var};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ImageRecord, TargetMask};
use crate::error::{Error, Result};
use crate::losses::tensor::rect_transform_exact_t;
use crate::metrics::report::threshold_map;
use crate::models::fusion::{FusionConfig, FusionNet};
use crate::models::layers::ParamBuilder;
use crate::models::siamese::{Siamese, SiameseConfig};
use crate::models::transfer::{TransferConfig, TransferNet, FROZEN_PREFIX};
use crate::models::unet::{UNet, UNetConfig};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "arch", rename_all = "snake_case")]
pub enum Arch {
    Unet(UNetConfig),
    Siamese(SiameseConfig),
    Transfer(TransferConfig),
    Fusion(FusionConfig),
}

/// Uniquely determines the layer graph of a handle.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Fingerprint {
    #[serde(flatten)]
    pub arch: Arch,
    pub param_count: usize,
    pub init_seed: u64,
}

pub(crate) enum Network {
    Unet(UNet),
    Siamese(Siamese),
    Transfer(TransferNet),
    Fusion(FusionNet),
}

pub struct ModelHandle {
    pub fingerprint: Fingerprint,
    pub(crate) network: Network,
    vars: Vec<(String, Var)>,
    frozen: BTreeSet<String>,
}

fn count_params(vars: &[(String, Var)]) -> usize {
    vars.iter().map(|(_, v)| v.elem_count()).sum()
}

impl ModelHandle {
    pub fn build_unet(config: &UNetConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pb = ParamBuilder::new(&mut rng);
        let net = UNet::build(config, &mut pb)?;
        let vars = pb.into_vars();
        Ok(ModelHandle {
            fingerprint: Fingerprint {
                arch: Arch::Unet(config.clone()),
                param_count: count_params(&vars),
                init_seed: seed,
            },
            network: Network::Unet(net),
            vars,
            frozen: BTreeSet::new(),
        })
    }

    pub fn build_siamese(config: &SiameseConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pb = ParamBuilder::new(&mut rng);
        let net = Siamese::build(config, &mut pb)?;
        let vars = pb.into_vars();
        Ok(ModelHandle {
            fingerprint: Fingerprint {
                arch: Arch::Siamese(config.clone()),
                param_count: count_params(&vars),
                init_seed: seed,
            },
            network: Network::Siamese(net),
            vars,
            frozen: BTreeSet::new(),
        })
    }

    pub fn build_fusion(config: &FusionConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pb = ParamBuilder::new(&mut rng);
        let net = FusionNet::build(config, &mut pb)?;
        let vars = pb.into_vars();
        Ok(ModelHandle {
            fingerprint: Fingerprint {
                arch: Arch::Fusion(config.clone()),
                param_count: count_params(&vars),
                init_seed: seed,
            },
            network: Network::Fusion(net),
            vars,
            frozen: BTreeSet::new(),
        })
    }

    /// Assemble the transfer model: rebuild the trained Siamese branch
    /// under the frozen prefix, copy its weights, and mark them frozen.
    pub fn assemble_transfer(
        siamese: &ModelHandle,
        base_unet: &UNetConfig,
        seed: u64,
    ) -> Result<Self> {
        let siamese_cfg = match &siamese.fingerprint.arch {
            Arch::Siamese(cfg) => cfg.clone(),
            other => {
                return Err(Error::model(format!(
                    "transfer assembly needs a siamese checkpoint, got {other:?}"
                )))
            }
        };
        let config = TransferConfig::derive(&siamese_cfg, base_unet)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pb = ParamBuilder::new(&mut rng);
        let net = TransferNet::build(&config, &mut pb)?;
        let vars = pb.into_vars();

        let mut handle = ModelHandle {
            fingerprint: Fingerprint {
                arch: Arch::Transfer(config),
                param_count: count_params(&vars),
                init_seed: seed,
            },
            network: Network::Transfer(net),
            vars,
            frozen: BTreeSet::new(),
        };
        // copy trained branch weights under the frozen prefix
        let source: HashMap<&str, &Var> =
            siamese.vars.iter().map(|(n, v)| (n.as_str(), v)).collect();
        for (name, var) in &handle.vars {
            if let Some(orig) = name.strip_prefix(FROZEN_PREFIX) {
                let src = source.get(orig).ok_or_else(|| {
                    Error::model(format!("missing source parameter {orig} in siamese handle"))
                })?;
                var.set(src.as_tensor())?;
                handle.frozen.insert(name.clone());
            }
        }
        if handle.frozen.is_empty() {
            return Err(Error::model("transfer assembly produced an empty frozen set"));
        }
        Ok(handle)
    }

    pub fn param_count(&self) -> usize {
        self.fingerprint.param_count
    }

    pub fn vars(&self) -> &[(String, Var)] {
        &self.vars
    }

    pub fn frozen_names(&self) -> &BTreeSet<String> {
        &self.frozen
    }

    /// Parameters the optimizer may update.
    pub fn trainable_vars(&self) -> Vec<Var> {
        self.vars
            .iter()
            .filter(|(n, _)| !self.frozen.contains(n))
            .map(|(_, v)| v.clone())
            .collect()
    }

    /// Snapshot of the frozen parameter values, for bitwise comparison.
    pub fn frozen_values(&self) -> Result<Vec<(String, Vec<f32>)>> {
        let mut out = Vec::new();
        for (name, var) in &self.vars {
            if self.frozen.contains(name) {
                out.push((name.clone(), var.flatten_all()?.to_vec1::<f32>()?));
            }
        }
        Ok(out)
    }

    /// Snapshot of all parameter values keyed by name.
    pub fn var_values(&self) -> Result<Vec<(String, Vec<f32>)>> {
        self.vars
            .iter()
            .map(|(n, v)| Ok((n.clone(), v.flatten_all()?.to_vec1::<f32>()?)))
            .collect()
    }

    /// Restore parameter values captured by [`Self::var_values`].
    pub fn set_var_values(&self, values: &[(String, Vec<f32>)]) -> Result<()> {
        let map: HashMap<&str, &Var> = self.vars.iter().map(|(n, v)| (n.as_str(), v)).collect();
        for (name, data) in values {
            let var = map
                .get(name.as_str())
                .ok_or_else(|| Error::model(format!("unknown parameter {name}")))?;
            let t = Tensor::from_vec(data.clone(), var.shape(), &Device::Cpu)?;
            var.set(&t)?;
        }
        Ok(())
    }

    /// Forward one normalized image through a segmentation-shaped network.
    pub fn predict_map(&self, image: &ImageRecord) -> Result<Array2<f32>> {
        let size = self.input_size()?;
        if image.input_size() != size {
            return Err(Error::ShapeMismatch {
                expected: format!("{size}x{size} input"),
                got: format!("{0}x{0}", image.input_size()),
            });
        }
        let x = image_batch(&[&image.pixels])?;
        let y = match &self.network {
            Network::Unet(net) => net.forward(&x)?,
            Network::Transfer(net) => net.forward(&x)?,
            Network::Siamese(_) => {
                return Err(Error::model("a siamese handle does not predict masks"))
            }
            Network::Fusion(_) => {
                return Err(Error::model("fusion handles consume stacks, not single scans"))
            }
        };
        tensor_to_map(&y.squeeze(0)?.squeeze(0)?)
    }

    /// Probability map plus thresholded binary mask, optionally with the
    /// exact rectangularizing transform applied as post-processing.
    pub fn predict_mask(
        &self,
        image: &ImageRecord,
        threshold: f32,
        exact_rect: bool,
    ) -> Result<(Array2<f32>, TargetMask)> {
        if !(0.0..1.0).contains(&threshold) || threshold <= 0.0 {
            return Err(Error::config(format!("threshold must be in (0,1), got {threshold}")));
        }
        let mut map = self.predict_map(image)?;
        if exact_rect {
            let t = map_to_tensor(&map)?;
            map = tensor_to_map(&rect_transform_exact_t(&t)?.squeeze(0)?.squeeze(0)?)?;
        }
        let mask = TargetMask::from_values(threshold_map(&map, threshold))?;
        Ok((map, mask))
    }

    /// Batched segmentation forward, `(N, C, H, W)` → `(N, 1, H, W)`.
    pub fn forward_batch(&self, x: &Tensor) -> Result<Tensor> {
        match &self.network {
            Network::Unet(net) => net.forward(x),
            Network::Transfer(net) => net.forward(x),
            Network::Fusion(net) => net.forward(x),
            Network::Siamese(_) => Err(Error::model("siamese handles are trained on pairs")),
        }
    }

    pub fn input_size(&self) -> Result<usize> {
        Ok(match &self.fingerprint.arch {
            Arch::Unet(c) => c.input_size,
            Arch::Siamese(c) => c.input_size,
            Arch::Transfer(c) => c.unet.input_size,
            Arch::Fusion(c) => c.input_size,
        })
    }

    pub fn as_siamese(&self) -> Result<&Siamese> {
        match &self.network {
            Network::Siamese(s) => Ok(s),
            _ => Err(Error::model("handle is not a siamese network")),
        }
    }

    pub fn as_fusion(&self) -> Result<&FusionNet> {
        match &self.network {
            Network::Fusion(f) => Ok(f),
            _ => Err(Error::model("handle is not a fusion network")),
        }
    }

    pub fn as_unet(&self) -> Result<&UNet> {
        match &self.network {
            Network::Unet(u) => Ok(u),
            _ => Err(Error::model("handle is not a U-Net")),
        }
    }

    // --- checkpoint I/O ---

    pub fn checkpoint_paths(dir: &Path, name: &str) -> (PathBuf, PathBuf) {
        (
            dir.join(format!("{name}.safetensors")),
            dir.join(format!("{name}.fingerprint.json")),
        )
    }

    pub fn save(&self, dir: &Path, name: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (weights_path, sidecar_path) = Self::checkpoint_paths(dir, name);
        let tensors: HashMap<String, Tensor> = self
            .vars
            .iter()
            .map(|(n, v)| (n.clone(), v.as_tensor().clone()))
            .collect();
        candle_core::safetensors::save(&tensors, &weights_path)?;
        let sidecar = CheckpointSidecar {
            fingerprint: self.fingerprint.clone(),
            frozen: self.frozen.iter().cloned().collect(),
        };
        std::fs::write(&sidecar_path, serde_json::to_string_pretty(&sidecar)?)
            .map_err(|e| Error::io(&sidecar_path, e))
    }

    pub fn load(dir: &Path, name: &str) -> Result<Self> {
        let (weights_path, sidecar_path) = Self::checkpoint_paths(dir, name);
        if !weights_path.exists() || !sidecar_path.exists() {
            return Err(Error::MissingDependency(format!(
                "checkpoint {name} not found under {}",
                dir.display()
            )));
        }
        let text = std::fs::read_to_string(&sidecar_path).map_err(|e| Error::io(&sidecar_path, e))?;
        let sidecar: CheckpointSidecar = serde_json::from_str(&text)?;
        let mut handle = match &sidecar.fingerprint.arch {
            Arch::Unet(c) => Self::build_unet(c, sidecar.fingerprint.init_seed)?,
            Arch::Siamese(c) => Self::build_siamese(c, sidecar.fingerprint.init_seed)?,
            Arch::Fusion(c) => Self::build_fusion(c, sidecar.fingerprint.init_seed)?,
            Arch::Transfer(c) => {
                let mut rng = ChaCha8Rng::seed_from_u64(sidecar.fingerprint.init_seed);
                let mut pb = ParamBuilder::new(&mut rng);
                let net = TransferNet::build(c, &mut pb)?;
                let vars = pb.into_vars();
                ModelHandle {
                    fingerprint: Fingerprint {
                        arch: Arch::Transfer(c.clone()),
                        param_count: count_params(&vars),
                        init_seed: sidecar.fingerprint.init_seed,
                    },
                    network: Network::Transfer(net),
                    vars,
                    frozen: BTreeSet::new(),
                }
            }
        };
        let tensors = candle_core::safetensors::load(&weights_path, &Device::Cpu)?;
        for (name, var) in &handle.vars {
            let t = tensors
                .get(name)
                .ok_or_else(|| Error::model(format!("checkpoint missing parameter {name}")))?;
            var.set(t)?;
        }
        handle.frozen = sidecar.frozen.into_iter().collect();
        handle.fingerprint = sidecar.fingerprint;
        Ok(handle)
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointSidecar {
    fingerprint: Fingerprint,
    frozen: Vec<String>,
}

/// Stack H×W maps into an `(N, 1, H, W)` tensor.
pub fn image_batch(images: &[&Array2<f32>]) -> Result<Tensor> {
    let (h, w) = images[0].dim();
    let mut data = Vec::with_capacity(images.len() * h * w);
    for img in images {
        if img.dim() != (h, w) {
            return Err(Error::ShapeMismatch {
                expected: format!("{h}x{w}"),
                got: format!("{:?}", img.dim()),
            });
        }
        data.extend(img.iter().copied());
    }
    Ok(Tensor::from_vec(data, (images.len(), 1, h, w), &Device::Cpu)?)
}

/// Stack binary masks as float targets, `(N, 1, H, W)`.
pub fn mask_batch(masks: &[&TargetMask]) -> Result<Tensor> {
    let (h, w) = masks[0].values.dim();
    let mut data = Vec::with_capacity(masks.len() * h * w);
    for m in masks {
        data.extend(m.values.iter().map(|&v| v as f32));
    }
    Ok(Tensor::from_vec(data, (masks.len(), 1, h, w), &Device::Cpu)?)
}

pub fn map_to_tensor(map: &Array2<f32>) -> Result<Tensor> {
    let (h, w) = map.dim();
    Ok(Tensor::from_vec(
        map.iter().copied().collect::<Vec<f32>>(),
        (1, 1, h, w),
        &Device::Cpu,
    )?)
}

pub fn tensor_to_map(t: &Tensor) -> Result<Array2<f32>> {
    let (h, w) = t.dims2()?;
    let v: Vec<f32> = t.flatten_all()?.to_vec1()?;
    Ok(Array2::from_shape_vec((h, w), v).map_err(|e| Error::Numeric(e.to_string()))?)
}
