//! Minimal trainable layers on the tensor backend.
//!
//! Parameters are created through [`ParamBuilder`], which seeds every
//! initialization from a caller-provided RNG and registers each `Var`
//! under a unique name so checkpointing and freezing can address them.

use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub struct ParamBuilder<'a> {
    pub device: Device,
    rng: &'a mut ChaCha8Rng,
    prefix: Vec<String>,
    vars: Vec<(String, Var)>,
}

impl<'a> ParamBuilder<'a> {
    pub fn new(rng: &'a mut ChaCha8Rng) -> Self {
        ParamBuilder {
            device: Device::Cpu,
            rng,
            prefix: Vec::new(),
            vars: Vec::new(),
        }
    }

    pub fn push_prefix(&mut self, p: impl Into<String>) {
        self.prefix.push(p.into());
    }

    pub fn pop_prefix(&mut self) {
        self.prefix.pop();
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix.join("."))
        }
    }

    /// Box-Muller normal draw; avoids backend RNG so runs are seedable.
    fn normal(&mut self, std: f32) -> f32 {
        let u1: f32 = self.rng.gen_range(f32::EPSILON..1.0);
        let u2: f32 = self.rng.gen_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f32::consts::PI * u2).cos() * std
    }

    fn tensor(&mut self, shape: &[usize], std: f32) -> Result<Var> {
        let n: usize = shape.iter().product();
        let data: Vec<f32> = (0..n).map(|_| self.normal(std)).collect();
        let t = Tensor::from_vec(data, shape, &self.device)?;
        Ok(Var::from_tensor(&t)?)
    }

    fn register(&mut self, name: &str, var: Var) -> Var {
        self.vars.push((self.full_name(name), var.clone()));
        var
    }

    pub fn weight(&mut self, name: &str, shape: &[usize], fan_in: usize) -> Result<Var> {
        let std = (2.0 / fan_in as f32).sqrt();
        let v = self.tensor(shape, std)?;
        Ok(self.register(name, v))
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<Var> {
        let v = Var::zeros(shape, DType::F32, &self.device)?;
        Ok(self.register(name, v))
    }

    pub fn into_vars(self) -> Vec<(String, Var)> {
        self.vars
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Var,
    pub bias: Var,
    pub padding: usize,
    pub stride: usize,
}

impl Conv2d {
    pub fn new(
        pb: &mut ParamBuilder,
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        padding: usize,
    ) -> Result<Self> {
        pb.push_prefix(name);
        let weight = pb.weight("weight", &[out_c, in_c, kernel, kernel], in_c * kernel * kernel)?;
        let bias = pb.zeros("bias", &[out_c])?;
        pb.pop_prefix();
        Ok(Conv2d {
            weight,
            bias,
            padding,
            stride: 1,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(self.weight.as_tensor(), self.padding, self.stride, 1, 1)?;
        let out_c = self.bias.dims1()?;
        Ok(y.broadcast_add(&self.bias.reshape((1, out_c, 1, 1))?)?)
    }
}

#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub weight: Var,
    pub bias: Var,
    pub stride: usize,
}

impl ConvTranspose2d {
    pub fn new(
        pb: &mut ParamBuilder,
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
    ) -> Result<Self> {
        pb.push_prefix(name);
        let weight = pb.weight("weight", &[in_c, out_c, kernel, kernel], in_c * kernel * kernel)?;
        let bias = pb.zeros("bias", &[out_c])?;
        pb.pop_prefix();
        Ok(ConvTranspose2d {
            weight,
            bias,
            stride,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv_transpose2d(self.weight.as_tensor(), 0, 0, self.stride, 1)?;
        let out_c = self.bias.dims1()?;
        Ok(y.broadcast_add(&self.bias.reshape((1, out_c, 1, 1))?)?)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Var,
    pub bias: Var,
}

impl Linear {
    pub fn new(pb: &mut ParamBuilder, name: &str, in_f: usize, out_f: usize) -> Result<Self> {
        pb.push_prefix(name);
        let weight = pb.weight("weight", &[out_f, in_f], in_f)?;
        let bias = pb.zeros("bias", &[out_f])?;
        pb.pop_prefix();
        Ok(Linear { weight, bias })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(&self.weight.as_tensor().t()?)?.broadcast_add(self.bias.as_tensor())?)
    }
}

/// Two 3×3 conv + ReLU blocks.
#[derive(Debug, Clone)]
pub struct DoubleConv {
    c1: Conv2d,
    c2: Conv2d,
}

impl DoubleConv {
    pub fn new(pb: &mut ParamBuilder, name: &str, in_c: usize, out_c: usize) -> Result<Self> {
        pb.push_prefix(name);
        let c1 = Conv2d::new(pb, "conv1", in_c, out_c, 3, 1)?;
        let c2 = Conv2d::new(pb, "conv2", out_c, out_c, 3, 1)?;
        pb.pop_prefix();
        Ok(DoubleConv { c1, c2 })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.c1.forward(x)?.relu()?;
        Ok(self.c2.forward(&h)?.relu()?)
    }
}

/// Additive attention gate on a skip connection.
///
/// Produces coefficients in `[0, 1]` that multiplicatively modulate the
/// skip features, driven by the coarser decoder (gating) features.
#[derive(Debug, Clone)]
pub struct AttentionGate {
    wg: Conv2d,
    wx: Conv2d,
    psi: Conv2d,
}

impl AttentionGate {
    pub fn new(
        pb: &mut ParamBuilder,
        name: &str,
        gate_c: usize,
        skip_c: usize,
        inter_c: usize,
    ) -> Result<Self> {
        pb.push_prefix(name);
        let wg = Conv2d::new(pb, "gate_proj", gate_c, inter_c, 1, 0)?;
        let wx = Conv2d::new(pb, "skip_proj", skip_c, inter_c, 1, 0)?;
        let psi = Conv2d::new(pb, "psi", inter_c, 1, 1, 0)?;
        pb.pop_prefix();
        Ok(AttentionGate { wg, wx, psi })
    }

    /// Attention coefficients, shape `(N, 1, H, W)`, values in `[0, 1]`.
    pub fn coefficients(&self, gate: &Tensor, skip: &Tensor) -> Result<Tensor> {
        let g = self.wg.forward(gate)?;
        let x = self.wx.forward(skip)?;
        let a = (g + x)?.relu()?;
        Ok(candle_nn::ops::sigmoid(&self.psi.forward(&a)?)?)
    }

    pub fn forward(&self, gate: &Tensor, skip: &Tensor) -> Result<Tensor> {
        let coeff = self.coefficients(gate, skip)?;
        Ok(skip.broadcast_mul(&coeff)?)
    }
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::sigmoid(x)?)
}

pub fn max_pool2(x: &Tensor) -> Result<Tensor> {
    Ok(x.max_pool2d(2)?)
}

pub fn check_input_size(input_size: usize, depth: usize) -> Result<()> {
    if input_size == 0 || input_size % (1 << depth) != 0 {
        return Err(Error::config(format!(
            "input_size {input_size} not divisible by 2^{depth}"
        )));
    }
    Ok(())
}
