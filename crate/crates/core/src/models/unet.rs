//! U-Net encoder-decoder with optional attention-gated skip connections.

use candle_core::Tensor;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::layers::{
    check_input_size, max_pool2, sigmoid, AttentionGate, Conv2d, ConvTranspose2d, DoubleConv,
    ParamBuilder,
};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct UNetConfig {
    pub input_size: usize,
    /// Number of encoder levels (downsampling steps).
    pub depth: usize,
    pub base_filters: usize,
    pub attention: bool,
    /// Input channels; 1 for plain scans, 2 when a feature map is fused in.
    #[serde(default = "default_in_channels")]
    pub in_channels: usize,
    /// Extra channels concatenated at the bottleneck (compact transfer fusion).
    #[serde(default)]
    pub bottleneck_extra: usize,
}

fn default_in_channels() -> usize {
    1
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig {
            input_size: 512,
            depth: 4,
            base_filters: 16,
            attention: false,
            in_channels: 1,
            bottleneck_extra: 0,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        check_input_size(self.input_size, self.depth)?;
        if self.depth == 0 {
            return Err(Error::config("depth must be at least 1"));
        }
        if self.base_filters == 0 {
            return Err(Error::config("base_filters must be at least 1"));
        }
        if self.in_channels == 0 {
            return Err(Error::config("in_channels must be at least 1"));
        }
        Ok(())
    }
}

struct DecoderLevel {
    up: ConvTranspose2d,
    gate: Option<AttentionGate>,
    conv: DoubleConv,
}

pub struct UNet {
    pub config: UNetConfig,
    encoders: Vec<DoubleConv>,
    bottleneck: DoubleConv,
    decoders: Vec<DecoderLevel>,
    head: Conv2d,
}

impl UNet {
    pub fn new(config: &UNetConfig, rng: &mut ChaCha8Rng) -> Result<(Self, Vec<(String, candle_core::Var)>)> {
        config.validate()?;
        let mut pb = ParamBuilder::new(rng);
        let net = Self::build(config, &mut pb)?;
        Ok((net, pb.into_vars()))
    }

    pub(crate) fn build(config: &UNetConfig, pb: &mut ParamBuilder) -> Result<Self> {
        let f = config.base_filters;
        let d = config.depth;
        let mut encoders = Vec::with_capacity(d);
        let mut in_c = config.in_channels;
        for i in 0..d {
            let out_c = f << i;
            encoders.push(DoubleConv::new(pb, &format!("enc{i}"), in_c, out_c)?);
            in_c = out_c;
        }
        let bottleneck = DoubleConv::new(
            pb,
            "bottleneck",
            (f << (d - 1)) + config.bottleneck_extra,
            f << d,
        )?;
        let mut decoders = Vec::with_capacity(d);
        for i in (0..d).rev() {
            let skip_c = f << i;
            let up_in = if i == d - 1 { f << d } else { f << (i + 1) };
            let up = ConvTranspose2d::new(pb, &format!("dec{i}.up"), up_in, skip_c, 2, 2)?;
            let gate = if config.attention {
                Some(AttentionGate::new(
                    pb,
                    &format!("dec{i}.attn"),
                    skip_c,
                    skip_c,
                    (skip_c / 2).max(1),
                )?)
            } else {
                None
            };
            let conv = DoubleConv::new(pb, &format!("dec{i}.conv"), skip_c * 2, skip_c)?;
            decoders.push(DecoderLevel { up, gate, conv });
        }
        let head = Conv2d::new(pb, "head", f, 1, 1, 0)?;
        Ok(UNet {
            config: config.clone(),
            encoders,
            bottleneck,
            decoders,
            head,
        })
    }

    /// Forward pass; `bottleneck_extra` must be supplied iff the config
    /// declares extra bottleneck channels.
    pub fn forward_with(&self, x: &Tensor, bottleneck_extra: Option<&Tensor>) -> Result<Tensor> {
        let (_, c, h, w) = x.dims4()?;
        if c != self.config.in_channels || h != self.config.input_size || w != self.config.input_size
        {
            return Err(Error::ShapeMismatch {
                expected: format!(
                    "(N, {}, {}, {})",
                    self.config.in_channels, self.config.input_size, self.config.input_size
                ),
                got: format!("(N, {c}, {h}, {w})"),
            });
        }
        let mut skips = Vec::with_capacity(self.config.depth);
        let mut h = x.clone();
        for enc in &self.encoders {
            let s = enc.forward(&h)?;
            skips.push(s.clone());
            h = max_pool2(&s)?;
        }
        if let Some(extra) = bottleneck_extra {
            if self.config.bottleneck_extra == 0 {
                return Err(Error::model("bottleneck extra supplied to a plain U-Net"));
            }
            h = Tensor::cat(&[&h, extra], 1)?;
        } else if self.config.bottleneck_extra != 0 {
            return Err(Error::model("missing bottleneck extra input"));
        }
        h = self.bottleneck.forward(&h)?;
        for (level, skip) in self.decoders.iter().zip(skips.iter().rev()) {
            let up = level.up.forward(&h)?;
            let skip = match &level.gate {
                Some(gate) => gate.forward(&up, skip)?,
                None => skip.clone(),
            };
            h = level.conv.forward(&Tensor::cat(&[&up, &skip], 1)?)?;
        }
        sigmoid(&self.head.forward(&h)?)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_with(x, None)
    }

    /// Attention coefficients per decoder level for an input batch; empty
    /// for a plain U-Net.
    pub fn attention_coefficients(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut skips = Vec::new();
        let mut h = x.clone();
        for enc in &self.encoders {
            let s = enc.forward(&h)?;
            skips.push(s.clone());
            h = max_pool2(&s)?;
        }
        h = self.bottleneck.forward(&h)?;
        let mut coeffs = Vec::new();
        for (level, skip) in self.decoders.iter().zip(skips.iter().rev()) {
            let up = level.up.forward(&h)?;
            let skip_used = match &level.gate {
                Some(gate) => {
                    coeffs.push(gate.coefficients(&up, skip)?);
                    gate.forward(&up, skip)?
                }
                None => skip.clone(),
            };
            h = level.conv.forward(&Tensor::cat(&[&up, &skip_used], 1)?)?;
        }
        Ok(coeffs)
    }

    pub fn gate_count(&self) -> usize {
        self.decoders.iter().filter(|d| d.gate.is_some()).count()
    }
}
