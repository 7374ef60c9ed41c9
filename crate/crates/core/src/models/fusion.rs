//! Small convolutional fusion network for the learned model ensemble:
//! K stacked prediction maps in, one fused probability map out.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::layers::{sigmoid, Conv2d, ParamBuilder};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FusionConfig {
    /// Number of input channels (one per specialized model).
    pub k: usize,
    pub hidden: usize,
    pub input_size: usize,
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::config("fusion requires at least one input channel"));
        }
        if self.hidden == 0 {
            return Err(Error::config("hidden channel count must be positive"));
        }
        Ok(())
    }
}

pub struct FusionNet {
    pub config: FusionConfig,
    c1: Conv2d,
    c2: Conv2d,
    head: Conv2d,
}

impl FusionNet {
    pub(crate) fn build(config: &FusionConfig, pb: &mut ParamBuilder) -> Result<Self> {
        config.validate()?;
        let c1 = Conv2d::new(pb, "c1", config.k, config.hidden, 3, 1)?;
        let c2 = Conv2d::new(pb, "c2", config.hidden, config.hidden, 3, 1)?;
        let head = Conv2d::new(pb, "head", config.hidden, 1, 1, 0)?;
        Ok(FusionNet {
            config: config.clone(),
            c1,
            c2,
            head,
        })
    }

    /// `(N, K, H, W)` stack of prediction maps → `(N, 1, H, W)` fused map.
    pub fn forward(&self, stack: &Tensor) -> Result<Tensor> {
        let (_, k, _, _) = stack.dims4()?;
        if k != self.config.k {
            return Err(Error::ShapeMismatch {
                expected: format!("{} stack channels", self.config.k),
                got: format!("{k}"),
            });
        }
        let h = self.c1.forward(stack)?.relu()?;
        let h = self.c2.forward(&h)?.relu()?;
        sigmoid(&self.head.forward(&h)?)
    }
}
