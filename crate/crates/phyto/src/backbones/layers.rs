//! Building blocks shared by the architectures.

use candle_core::{Tensor, Var, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{Init, Scope};
use crate::Result;

/// Forward-pass mode. Training mode uses batch statistics, updates running
/// statistics and samples dropout masks from a seeded stream.
pub struct Pass {
    train: bool,
    rng: ChaCha8Rng,
}

impl Pass {
    pub fn eval() -> Self {
        Self { train: false, rng: ChaCha8Rng::seed_from_u64(0) }
    }

    pub fn train(seed: u64) -> Self {
        Self { train: true, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    /// Same randomness, inference behaviour.
    pub fn frozen(&mut self) -> Pass {
        Pass { train: false, rng: self.rng.clone() }
    }

    /// Inverted dropout on any tensor shape.
    pub fn dropout(&mut self, x: &Tensor, p: f32) -> Result<Tensor> {
        if !self.train || p == 0.0 {
            return Ok(x.clone());
        }
        let keep = 1.0 - p;
        let mask: Vec<f32> =
            (0..x.elem_count()).map(|_| if self.rng.random::<f32>() < keep { 1.0 / keep } else { 0.0 }).collect();
        let mask = Tensor::from_vec(mask, x.shape(), x.device())?;
        Ok(x.mul(&mask)?)
    }

    /// Drops whole samples of a residual branch (`(B, ...)` input).
    pub fn stochastic_depth(&mut self, x: &Tensor, p: f32) -> Result<Tensor> {
        if !self.train || p == 0.0 {
            return Ok(x.clone());
        }
        let keep = 1.0 - p;
        let b = x.dim(0)?;
        let mask: Vec<f32> = (0..b).map(|_| if self.rng.random::<f32>() < keep { 1.0 / keep } else { 0.0 }).collect();
        let mut shape = vec![1; x.rank()];
        shape[0] = b;
        let mask = Tensor::from_vec(mask, shape, x.device())?;
        Ok(x.broadcast_mul(&mask)?)
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Var,
    bias: Option<Var>,
    stride: usize,
    padding: usize,
    groups: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct ConvOpts {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    pub bias: bool,
    pub init: Init,
}

impl Default for ConvOpts {
    fn default() -> Self {
        Self { stride: 1, padding: 0, groups: 1, bias: false, init: Init::KaimingFanOut }
    }
}

impl Conv2d {
    pub fn new(s: &Scope, cin: usize, cout: usize, kernel: usize, o: ConvOpts) -> Result<Self> {
        let weight = s.weight("weight", &[cout, cin / o.groups, kernel, kernel], o.init)?;
        let bias = if o.bias { Some(s.weight("bias", &[cout], Init::Const(0.0))?) } else { None };
        Ok(Self { weight, bias, stride: o.stride, padding: o.padding, groups: o.groups })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(self.weight.as_tensor(), self.padding, self.stride, 1, self.groups)?;
        match &self.bias {
            Some(b) => Ok(y.broadcast_add(&b.as_tensor().reshape((1, (), 1, 1))?)?),
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    weight: Var,
    bias: Var,
    running_mean: Var,
    running_var: Var,
    eps: f64,
    momentum: f64,
}

impl BatchNorm2d {
    pub fn new(s: &Scope, channels: usize) -> Result<Self> {
        Ok(Self {
            weight: s.weight("weight", &[channels], Init::Const(1.0))?,
            bias: s.weight("bias", &[channels], Init::Const(0.0))?,
            running_mean: s.buffer("running_mean", &[channels], 0.0)?,
            running_var: s.buffer("running_var", &[channels], 1.0)?,
            eps: 1e-5,
            momentum: 0.1,
        })
    }

    pub fn forward(&self, x: &Tensor, pass: &Pass) -> Result<Tensor> {
        let c = x.dim(1)?;
        let w = self.weight.as_tensor().reshape((1, c, 1, 1))?;
        let b = self.bias.as_tensor().reshape((1, c, 1, 1))?;
        if pass.is_train() {
            let n = x.elem_count() / c;
            let mean = x.mean_keepdim((0, 2, 3))?;
            let centered = x.broadcast_sub(&mean)?;
            let var = centered.sqr()?.mean_keepdim((0, 2, 3))?;
            let y = centered.broadcast_div(&(&var + self.eps)?.sqrt()?)?;

            let m = self.momentum;
            let unbias = if n > 1 { n as f64 / (n - 1) as f64 } else { 1.0 };
            let mean = mean.detach().flatten_all()?;
            let var = (var.detach().flatten_all()? * unbias)?;
            self.running_mean.set(&((self.running_mean.as_tensor() * (1.0 - m))? + (mean * m)?)?)?;
            self.running_var.set(&((self.running_var.as_tensor() * (1.0 - m))? + (var * m)?)?)?;
            Ok(y.broadcast_mul(&w)?.broadcast_add(&b)?)
        } else {
            let rm = self.running_mean.as_tensor().reshape((1, c, 1, 1))?;
            let rv = self.running_var.as_tensor().reshape((1, c, 1, 1))?;
            let scale = w.broadcast_div(&(rv + self.eps)?.sqrt()?)?;
            Ok(x.broadcast_sub(&rm)?.broadcast_mul(&scale)?.broadcast_add(&b)?)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Act {
    None,
    Relu,
    Silu,
}

impl Act {
    pub fn apply(self, x: Tensor) -> Result<Tensor> {
        Ok(match self {
            Act::None => x,
            Act::Relu => x.relu()?,
            Act::Silu => x.silu()?,
        })
    }
}

/// Convolution, batch norm, activation; stored as `<prefix>.0` / `<prefix>.1`
/// or under explicit names, depending on the architecture.
#[derive(Debug, Clone)]
pub struct ConvBn {
    conv: Conv2d,
    bn: BatchNorm2d,
    act: Act,
}

impl ConvBn {
    pub fn new(conv: Conv2d, bn: BatchNorm2d, act: Act) -> Self {
        Self { conv, bn, act }
    }

    /// torchvision `Conv2dNormActivation` naming (`.0` conv, `.1` norm) with
    /// "same" padding.
    pub fn sequential(
        s: &Scope,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        groups: usize,
        act: Act,
    ) -> Result<Self> {
        let opts = ConvOpts { stride, padding: (kernel - 1) / 2, groups, ..Default::default() };
        Ok(Self { conv: Conv2d::new(&s.pp(0), cin, cout, kernel, opts)?, bn: BatchNorm2d::new(&s.pp(1), cout)?, act })
    }

    pub fn forward(&self, x: &Tensor, pass: &Pass) -> Result<Tensor> {
        self.act.apply(self.bn.forward(&self.conv.forward(x)?, pass)?)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Var,
    bias: Var,
}

impl Linear {
    /// Weight and bias uniform in `[-1/sqrt(in), 1/sqrt(in)]`.
    pub fn new(s: &Scope, cin: usize, cout: usize) -> Result<Self> {
        let init = Init::UniformFanIn { fan_in: cin };
        Ok(Self { weight: s.weight("weight", &[cout, cin], init)?, bias: s.weight("bias", &[cout], init)? })
    }

    pub fn out_dim(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn in_dim(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(&self.weight.as_tensor().t()?)?.broadcast_add(self.bias.as_tensor())?)
    }
}

/// 3x3 stride-2 max pooling with one pixel of padding. Only valid after a
/// ReLU: zero padding then equals the usual `-inf` padding.
///
/// Built as the maximum over the nine shifted, stride-2 views of the input,
/// which keeps it differentiable.
pub fn max_pool_3x3_s2_after_relu(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let (ho, wo) = ((h - 1) / 2 + 1, (w - 1) / 2 + 1);
    // one pixel in front, two behind: every view below stays in bounds
    let x = x.pad_with_zeros(2, 1, 2)?.pad_with_zeros(3, 1, 2)?;
    let mut out: Option<Tensor> = None;
    for dy in 0..3 {
        let rows = x.narrow(2, dy, 2 * ho)?.reshape((b, c, ho, 2, w + 3))?.narrow(3, 0, 1)?;
        for dx in 0..3 {
            let v = rows.narrow(4, dx, 2 * wo)?.reshape((b, c, ho, wo, 2))?.narrow(4, 0, 1)?;
            let v = v.reshape((b, c, ho, wo))?;
            out = Some(match out {
                None => v,
                Some(m) => m.maximum(&v)?,
            });
        }
    }
    Ok(out.expect("nine views"))
}

/// Adaptive average pooling to 1x1 followed by flattening: `(B, C)`.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    Ok(x.mean(D::Minus1)?.mean(D::Minus1)?)
}
