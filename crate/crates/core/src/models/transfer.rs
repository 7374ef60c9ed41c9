//! Contrastive-transfer assembly: a frozen Siamese branch feeding a U-Net.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::layers::{Linear, ParamBuilder};
use crate::models::siamese::{Siamese, SiameseConfig, SiameseVariant};
use crate::models::unet::{UNet, UNetConfig};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TransferConfig {
    pub siamese: SiameseConfig,
    pub unet: UNetConfig,
}

impl TransferConfig {
    /// Derive the fused U-Net configuration from a base segmentation config
    /// and the Siamese variant.
    pub fn derive(siamese: &SiameseConfig, base_unet: &UNetConfig) -> Result<Self> {
        if siamese.input_size != base_unet.input_size {
            return Err(Error::model(format!(
                "siamese input size {} does not match U-Net input size {}",
                siamese.input_size, base_unet.input_size
            )));
        }
        let mut unet = base_unet.clone();
        match siamese.variant {
            SiameseVariant::FullMap => {
                // feature map is concatenated with the scan channel-wise
                unet.in_channels = 2;
                unet.bottleneck_extra = 0;
            }
            SiameseVariant::CompactEmbedding => {
                // embedding is projected onto the bottleneck grid
                unet.in_channels = 1;
                unet.bottleneck_extra = 1;
            }
        }
        unet.validate()?;
        Ok(TransferConfig {
            siamese: siamese.clone(),
            unet,
        })
    }

    fn bottleneck_size(&self) -> usize {
        self.unet.input_size >> self.unet.depth
    }
}

pub struct TransferNet {
    pub config: TransferConfig,
    /// Frozen feature extractor; its parameters carry the
    /// `frozen_branch.` prefix and are excluded from optimization.
    frozen_branch: Siamese,
    /// Projection of the compact embedding onto the bottleneck grid.
    project: Option<Linear>,
    unet: UNet,
}

/// Parameter-name prefix of the frozen feature extractor.
pub const FROZEN_PREFIX: &str = "frozen_branch.";

impl TransferNet {
    pub(crate) fn build(config: &TransferConfig, pb: &mut ParamBuilder) -> Result<Self> {
        pb.push_prefix("frozen_branch");
        let frozen_branch = Siamese::build(&config.siamese, pb)?;
        pb.pop_prefix();
        let project = match config.siamese.variant {
            SiameseVariant::CompactEmbedding => {
                let grid = config.bottleneck_size();
                Some(Linear::new(
                    pb,
                    "project",
                    config.siamese.embed_dim,
                    grid * grid,
                )?)
            }
            SiameseVariant::FullMap => None,
        };
        pb.push_prefix("seg");
        let unet = UNet::build(&config.unet, pb)?;
        pb.pop_prefix();
        Ok(TransferNet {
            config: config.clone(),
            frozen_branch,
            project,
            unet,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        // the branch is frozen; detach so no gradient work is done for it
        let embedding = self.frozen_branch.embed(x)?.detach();
        match self.config.siamese.variant {
            SiameseVariant::FullMap => {
                let s = self.config.unet.input_size;
                let n = x.dims4()?.0;
                let fmap = embedding.reshape((n, 1, s, s))?;
                let fused = Tensor::cat(&[x, &fmap], 1)?;
                self.unet.forward_with(&fused, None)
            }
            SiameseVariant::CompactEmbedding => {
                let grid = self.config.bottleneck_size();
                let n = x.dims4()?.0;
                let proj = self
                    .project
                    .as_ref()
                    .expect("compact transfer always has a projection")
                    .forward(&embedding)?
                    .relu()?
                    .reshape((n, 1, grid, grid))?;
                self.unet.forward_with(x, Some(&proj))
            }
        }
    }
}
