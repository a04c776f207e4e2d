//! ResNet and ResNeXt feature extractors (torchvision layout and names).

use candle_core::Tensor;

use super::layers::{global_avg_pool, max_pool_3x3_s2_after_relu, BatchNorm2d, Conv2d, ConvOpts, Pass};
use super::params::Scope;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Basic,
    Bottleneck,
}

#[derive(Debug, Clone, Copy)]
pub struct ResNetConfig {
    pub block: BlockKind,
    pub layers: [usize; 4],
    pub groups: usize,
    pub width_per_group: usize,
}

impl ResNetConfig {
    pub const RESNET18: Self = Self { block: BlockKind::Basic, layers: [2, 2, 2, 2], groups: 1, width_per_group: 64 };
    pub const RESNET50: Self =
        Self { block: BlockKind::Bottleneck, layers: [3, 4, 6, 3], groups: 1, width_per_group: 64 };
    pub const RESNET152: Self =
        Self { block: BlockKind::Bottleneck, layers: [3, 8, 36, 3], groups: 1, width_per_group: 64 };
    /// 32 groups of width 4.
    pub const RESNEXT50_32X4D: Self =
        Self { block: BlockKind::Bottleneck, layers: [3, 4, 6, 3], groups: 32, width_per_group: 4 };

    fn expansion(&self) -> usize {
        match self.block {
            BlockKind::Basic => 1,
            BlockKind::Bottleneck => 4,
        }
    }

    pub fn feature_dim(&self) -> usize {
        512 * self.expansion()
    }
}

#[derive(Debug, Clone)]
struct Block {
    convs: Vec<(Conv2d, BatchNorm2d)>,
    downsample: Option<(Conv2d, BatchNorm2d)>,
}

impl Block {
    fn new(s: &Scope, cfg: &ResNetConfig, inplanes: usize, planes: usize, stride: usize) -> Result<Self> {
        let out = planes * cfg.expansion();
        let conv_bn = |i: usize, cin: usize, cout: usize, k: usize, opts: ConvOpts| -> Result<(Conv2d, BatchNorm2d)> {
            Ok((
                Conv2d::new(&s.pp(format!("conv{i}")), cin, cout, k, opts)?,
                BatchNorm2d::new(&s.pp(format!("bn{i}")), cout)?,
            ))
        };
        let convs = match cfg.block {
            BlockKind::Basic => vec![
                conv_bn(1, inplanes, planes, 3, ConvOpts { stride, padding: 1, ..Default::default() })?,
                conv_bn(2, planes, planes, 3, ConvOpts { padding: 1, ..Default::default() })?,
            ],
            BlockKind::Bottleneck => {
                let width = planes * cfg.width_per_group / 64 * cfg.groups;
                vec![
                    conv_bn(1, inplanes, width, 1, ConvOpts::default())?,
                    conv_bn(
                        2,
                        width,
                        width,
                        3,
                        ConvOpts { stride, padding: 1, groups: cfg.groups, ..Default::default() },
                    )?,
                    conv_bn(3, width, out, 1, ConvOpts::default())?,
                ]
            }
        };
        let downsample = if stride != 1 || inplanes != out {
            let d = s.pp("downsample");
            Some((
                Conv2d::new(&d.pp(0), inplanes, out, 1, ConvOpts { stride, ..Default::default() })?,
                BatchNorm2d::new(&d.pp(1), out)?,
            ))
        } else {
            None
        };
        Ok(Self { convs, downsample })
    }

    fn forward(&self, x: &Tensor, pass: &Pass) -> Result<Tensor> {
        let mut y = x.clone();
        let last = self.convs.len() - 1;
        for (i, (conv, bn)) in self.convs.iter().enumerate() {
            y = bn.forward(&conv.forward(&y)?, pass)?;
            if i != last {
                y = y.relu()?;
            }
        }
        let identity = match &self.downsample {
            Some((conv, bn)) => bn.forward(&conv.forward(x)?, pass)?,
            None => x.clone(),
        };
        Ok((y + identity)?.relu()?)
    }
}

#[derive(Debug, Clone)]
pub struct ResNet {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    stages: Vec<Vec<Block>>,
}

impl ResNet {
    /// Builds everything except `fc`.
    pub fn new(s: &Scope, cfg: ResNetConfig) -> Result<Self> {
        let conv1 = Conv2d::new(&s.pp("conv1"), 3, 64, 7, ConvOpts { stride: 2, padding: 3, ..Default::default() })?;
        let bn1 = BatchNorm2d::new(&s.pp("bn1"), 64)?;
        let mut inplanes = 64;
        let mut stages = Vec::new();
        for (i, (&n, planes)) in cfg.layers.iter().zip([64, 128, 256, 512]).enumerate() {
            let layer = s.pp(format!("layer{}", i + 1));
            let stride = if i == 0 { 1 } else { 2 };
            let mut blocks = Vec::with_capacity(n);
            for j in 0..n {
                blocks.push(Block::new(&layer.pp(j), &cfg, inplanes, planes, if j == 0 { stride } else { 1 })?);
                inplanes = planes * cfg.expansion();
            }
            stages.push(blocks);
        }
        Ok(Self { conv1, bn1, stages })
    }

    /// `(B, 3, H, W)` to pooled `(B, feature_dim)` features.
    pub fn forward(&self, x: &Tensor, pass: &Pass) -> Result<Tensor> {
        let mut x = self.bn1.forward(&self.conv1.forward(x)?, pass)?.relu()?;
        x = max_pool_3x3_s2_after_relu(&x)?;
        for stage in &self.stages {
            for block in stage {
                x = block.forward(&x, pass)?;
            }
        }
        global_avg_pool(&x)
    }
}
