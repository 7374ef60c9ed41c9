//! Siamese pair networks: two weight-tied branches plus a similarity head.

use candle_core::Tensor;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::layers::{
    check_input_size, max_pool2, sigmoid, Conv2d, Linear, ParamBuilder,
};
use crate::models::unet::{UNet, UNetConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiameseVariant {
    /// Convolutional branch ending in a compact dense embedding.
    CompactEmbedding,
    /// U-Net branch producing a full-resolution single-channel map.
    FullMap,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SiameseConfig {
    pub variant: SiameseVariant,
    /// Embedding length for the compact variant.
    pub embed_dim: usize,
    pub input_size: usize,
    pub base_filters: usize,
    /// Weight of the sigmoid-head classification term.
    #[serde(default = "default_weight")]
    pub bce_weight: f64,
    /// Weight of the branch-embedding contrastive term.
    #[serde(default = "default_weight")]
    pub contrastive_weight: f64,
    /// Symmetric head fusion (|e1 - e2|). When false, the branches are
    /// concatenated as-is and the score is order-sensitive.
    #[serde(default = "default_true")]
    pub symmetric_head: bool,
}

fn default_true() -> bool {
    true
}

fn default_weight() -> f64 {
    1.0
}

impl Default for SiameseConfig {
    fn default() -> Self {
        SiameseConfig {
            variant: SiameseVariant::CompactEmbedding,
            embed_dim: 128,
            input_size: 128,
            base_filters: 8,
            bce_weight: 1.0,
            contrastive_weight: 1.0,
            symmetric_head: true,
        }
    }
}

impl SiameseConfig {
    /// Downsampling steps of the compact branch; bounded so the coarsest
    /// grid keeps at least 8 px.
    pub fn compact_levels(&self) -> usize {
        let mut levels = 0usize;
        let mut s = self.input_size;
        while s > 8 && levels < 4 {
            s /= 2;
            levels += 1;
        }
        levels
    }

    pub fn embedding_len(&self) -> usize {
        match self.variant {
            SiameseVariant::CompactEmbedding => self.embed_dim,
            SiameseVariant::FullMap => self.input_size * self.input_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_input_size(self.input_size, self.compact_levels().max(3))?;
        if self.embed_dim == 0 {
            return Err(Error::config("embed_dim must be positive"));
        }
        if self.bce_weight < 0.0 || self.contrastive_weight < 0.0 {
            return Err(Error::config("loss weights must be >= 0"));
        }
        Ok(())
    }
}

enum Branch {
    Compact {
        convs: Vec<Conv2d>,
        project: Linear,
    },
    FullMap(Box<UNet>),
}

pub struct Siamese {
    pub config: SiameseConfig,
    branch: Branch,
    head: Linear,
}

impl Siamese {
    pub fn new(
        config: &SiameseConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Self, Vec<(String, candle_core::Var)>)> {
        config.validate()?;
        let mut pb = ParamBuilder::new(rng);
        let net = Self::build(config, &mut pb)?;
        Ok((net, pb.into_vars()))
    }

    pub(crate) fn build(config: &SiameseConfig, pb: &mut ParamBuilder) -> Result<Self> {
        pb.push_prefix("branch");
        let branch = match config.variant {
            SiameseVariant::CompactEmbedding => {
                let levels = config.compact_levels();
                let f = config.base_filters;
                let mut convs = Vec::with_capacity(levels);
                let mut in_c = 1;
                for i in 0..levels {
                    let out_c = f << i;
                    convs.push(Conv2d::new(pb, &format!("conv{i}"), in_c, out_c, 3, 1)?);
                    in_c = out_c;
                }
                let spatial = config.input_size >> levels;
                let flat = in_c * spatial * spatial;
                let project = Linear::new(pb, "project", flat, config.embed_dim)?;
                Branch::Compact { convs, project }
            }
            SiameseVariant::FullMap => {
                let unet_cfg = UNetConfig {
                    input_size: config.input_size,
                    depth: 3,
                    base_filters: config.base_filters,
                    attention: false,
                    in_channels: 1,
                    bottleneck_extra: 0,
                };
                Branch::FullMap(Box::new(UNet::build(&unet_cfg, pb)?))
            }
        };
        pb.pop_prefix();
        let head = Linear::new(
            pb,
            "head",
            if config.symmetric_head {
                config.embedding_len()
            } else {
                2 * config.embedding_len()
            },
            1,
        )?;
        Ok(Siamese {
            config: config.clone(),
            branch,
            head,
        })
    }

    /// Branch embedding of one image batch, shape `(N, D)`.
    pub fn embed(&self, x: &Tensor) -> Result<Tensor> {
        match &self.branch {
            Branch::Compact { convs, project } => {
                let mut h = x.clone();
                for conv in convs {
                    h = max_pool2(&conv.forward(&h)?.relu()?)?;
                }
                let (n, c, hh, ww) = h.dims4()?;
                project.forward(&h.reshape((n, c * hh * ww))?)
            }
            Branch::FullMap(unet) => {
                let map = unet.forward(x)?;
                let (n, c, hh, ww) = map.dims4()?;
                Ok(map.reshape((n, c * hh * ww))?)
            }
        }
    }

    /// Similarity score in `[0, 1]` for a batch of pairs.
    pub fn score(&self, embed_a: &Tensor, embed_b: &Tensor) -> Result<Tensor> {
        let fused = if self.config.symmetric_head {
            (embed_a - embed_b)?.abs()?
        } else {
            Tensor::cat(&[embed_a, embed_b], 1)?
        };
        let logit = self.head.forward(&fused)?;
        Ok(sigmoid(&logit)?.squeeze(1)?)
    }

    /// Full pair forward: embeddings plus similarity score.
    pub fn forward_pair(&self, a: &Tensor, b: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        let ea = self.embed(a)?;
        let eb = self.embed(b)?;
        let score = self.score(&ea, &eb)?;
        Ok((ea, eb, score))
    }
}
