//! Parameterized building blocks shared by the encoder, bottleneck and decoder.

use candle_core::{Module, Result as TResult, Tensor};

use super::ops;
use super::params::Init;
use crate::error::Result;

const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pad: usize,
}

impl Conv2d {
    /// Square kernel `k`, "same" padding.
    pub fn new(init: &mut Init, cin: usize, cout: usize, k: usize, bias: bool) -> Result<Self> {
        let fan_in = cin * k * k;
        let weight = init.fan_in_uniform("weight", &[cout, cin, k, k], fan_in)?;
        let bias = if bias {
            Some(init.fan_in_uniform("bias", &[cout], fan_in)?)
        } else {
            None
        };
        Ok(Conv2d {
            weight,
            bias,
            pad: k / 2,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }
}

impl Module for Conv2d {
    fn forward(&self, x: &Tensor) -> TResult<Tensor> {
        ops::conv2d(x, &self.weight, self.bias.as_ref(), self.pad)
    }
}

#[derive(Debug, Clone)]
pub struct GroupNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    groups: usize,
}

impl GroupNorm {
    pub fn new(init: &mut Init, channels: usize) -> Result<Self> {
        Ok(GroupNorm {
            gamma: init.constant("gamma", &[channels], 1.0)?,
            beta: init.constant("beta", &[channels], 0.0)?,
            groups: ops::default_groups(channels),
        })
    }
}

impl Module for GroupNorm {
    fn forward(&self, x: &Tensor) -> TResult<Tensor> {
        ops::group_norm(x, self.groups, &self.gamma, &self.beta, NORM_EPS)
    }
}

/// 3x3 convolution, group normalization, SiLU.
#[derive(Debug, Clone)]
pub struct ConvNormAct {
    conv: Conv2d,
    norm: GroupNorm,
}

impl ConvNormAct {
    pub fn new(init: &mut Init, cin: usize, cout: usize) -> Result<Self> {
        Ok(ConvNormAct {
            conv: Conv2d::new(&mut init.pp("conv"), cin, cout, 3, false)?,
            norm: GroupNorm::new(&mut init.pp("norm"), cout)?,
        })
    }
}

impl Module for ConvNormAct {
    fn forward(&self, x: &Tensor) -> TResult<Tensor> {
        self.norm.forward(&self.conv.forward(x)?)?.silu()
    }
}

/// Two 3x3 conv/norm layers with an identity or 1x1-projection shortcut.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    conv1: ConvNormAct,
    conv2: Conv2d,
    norm2: GroupNorm,
    shortcut: Option<Conv2d>,
}

impl ResidualBlock {
    pub fn new(init: &mut Init, cin: usize, cout: usize) -> Result<Self> {
        let shortcut = if cin != cout {
            Some(Conv2d::new(&mut init.pp("shortcut"), cin, cout, 1, false)?)
        } else {
            None
        };
        Ok(ResidualBlock {
            conv1: ConvNormAct::new(&mut init.pp("block1"), cin, cout)?,
            conv2: Conv2d::new(&mut init.pp("block2.conv"), cout, cout, 3, false)?,
            norm2: GroupNorm::new(&mut init.pp("block2.norm"), cout)?,
            shortcut,
        })
    }
}

impl Module for ResidualBlock {
    fn forward(&self, x: &Tensor) -> TResult<Tensor> {
        let h = self.norm2.forward(&self.conv2.forward(&self.conv1.forward(x)?)?)?;
        let skip = match &self.shortcut {
            Some(s) => s.forward(x)?,
            None => x.clone(),
        };
        (h + skip)?.silu()
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Linear {
    pub fn new(init: &mut Init, din: usize, dout: usize, bias: bool) -> Result<Self> {
        let weight = init.fan_in_uniform("weight", &[dout, din], din)?;
        let bias = if bias {
            Some(init.fan_in_uniform("bias", &[dout], din)?)
        } else {
            None
        };
        Ok(Linear { weight, bias })
    }
}

impl Module for Linear {
    fn forward(&self, x: &Tensor) -> TResult<Tensor> {
        ops::linear(x, &self.weight, self.bias.as_ref())
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl LayerNorm {
    pub fn new(init: &mut Init, dim: usize) -> Result<Self> {
        Ok(LayerNorm {
            gamma: init.constant("gamma", &[dim], 1.0)?,
            beta: init.constant("beta", &[dim], 0.0)?,
        })
    }
}

impl Module for LayerNorm {
    fn forward(&self, x: &Tensor) -> TResult<Tensor> {
        ops::layer_norm(x, &self.gamma, &self.beta, NORM_EPS)
    }
}

/// Two-layer perceptron with GELU, used inside transformer blocks.
#[derive(Debug, Clone)]
pub struct Mlp {
    fc1: Linear,
    fc2: Linear,
}

impl Mlp {
    pub fn new(init: &mut Init, dim: usize, hidden: usize) -> Result<Self> {
        Ok(Mlp {
            fc1: Linear::new(&mut init.pp("fc1"), dim, hidden, true)?,
            fc2: Linear::new(&mut init.pp("fc2"), hidden, dim, true)?,
        })
    }
}

impl Module for Mlp {
    fn forward(&self, x: &Tensor) -> TResult<Tensor> {
        self.fc2.forward(&self.fc1.forward(x)?.gelu()?)
    }
}
