//! DenseNet-121 feature extractor (torchvision layout and names).

use candle_core::Tensor;

use super::layers::{global_avg_pool, max_pool_3x3_s2_after_relu, BatchNorm2d, Conv2d, ConvOpts, Pass};
use super::params::{Init, Scope};
use crate::Result;

const GROWTH: usize = 32;
const BN_SIZE: usize = 4;
const BLOCKS: [usize; 4] = [6, 12, 24, 16];
const INIT_FEATURES: usize = 64;

pub const FEATURE_DIM: usize = 1024;

fn conv(s: &Scope, cin: usize, cout: usize, k: usize, opts: ConvOpts) -> Result<Conv2d> {
    Conv2d::new(s, cin, cout, k, ConvOpts { init: Init::KaimingFanIn, ..opts })
}

#[derive(Debug, Clone)]
struct DenseLayer {
    norm1: BatchNorm2d,
    conv1: Conv2d,
    norm2: BatchNorm2d,
    conv2: Conv2d,
}

impl DenseLayer {
    fn new(s: &Scope, cin: usize) -> Result<Self> {
        let mid = BN_SIZE * GROWTH;
        Ok(Self {
            norm1: BatchNorm2d::new(&s.pp("norm1"), cin)?,
            conv1: conv(&s.pp("conv1"), cin, mid, 1, ConvOpts::default())?,
            norm2: BatchNorm2d::new(&s.pp("norm2"), mid)?,
            conv2: conv(&s.pp("conv2"), mid, GROWTH, 3, ConvOpts { padding: 1, ..Default::default() })?,
        })
    }

    fn forward(&self, x: &Tensor, pass: &Pass) -> Result<Tensor> {
        let y = self.conv1.forward(&self.norm1.forward(x, pass)?.relu()?)?;
        self.conv2.forward(&self.norm2.forward(&y, pass)?.relu()?)
    }
}

#[derive(Debug, Clone)]
struct Transition {
    norm: BatchNorm2d,
    conv: Conv2d,
}

#[derive(Debug, Clone)]
pub struct DenseNet {
    conv0: Conv2d,
    norm0: BatchNorm2d,
    blocks: Vec<Vec<DenseLayer>>,
    transitions: Vec<Transition>,
    norm5: BatchNorm2d,
}

impl DenseNet {
    /// Builds `features.*`; the classifier is added by the caller.
    pub fn new(s: &Scope) -> Result<Self> {
        let f = s.pp("features");
        let conv0 =
            conv(&f.pp("conv0"), 3, INIT_FEATURES, 7, ConvOpts { stride: 2, padding: 3, ..Default::default() })?;
        let norm0 = BatchNorm2d::new(&f.pp("norm0"), INIT_FEATURES)?;
        let mut channels = INIT_FEATURES;
        let mut blocks = Vec::new();
        let mut transitions = Vec::new();
        for (i, &n) in BLOCKS.iter().enumerate() {
            let b = f.pp(format!("denseblock{}", i + 1));
            let mut layers = Vec::with_capacity(n);
            for j in 0..n {
                layers.push(DenseLayer::new(&b.pp(format!("denselayer{}", j + 1)), channels + j * GROWTH)?);
            }
            channels += n * GROWTH;
            blocks.push(layers);
            if i + 1 != BLOCKS.len() {
                let t = f.pp(format!("transition{}", i + 1));
                transitions.push(Transition {
                    norm: BatchNorm2d::new(&t.pp("norm"), channels)?,
                    conv: conv(&t.pp("conv"), channels, channels / 2, 1, ConvOpts::default())?,
                });
                channels /= 2;
            }
        }
        debug_assert_eq!(channels, FEATURE_DIM);
        let norm5 = BatchNorm2d::new(&f.pp("norm5"), channels)?;
        Ok(Self { conv0, norm0, blocks, transitions, norm5 })
    }

    pub fn forward(&self, x: &Tensor, pass: &Pass) -> Result<Tensor> {
        let x = self.norm0.forward(&self.conv0.forward(x)?, pass)?.relu()?;
        let mut x = max_pool_3x3_s2_after_relu(&x)?;
        for (i, block) in self.blocks.iter().enumerate() {
            let mut features = vec![x];
            for layer in block {
                let input = Tensor::cat(&features, 1)?;
                features.push(layer.forward(&input, pass)?);
            }
            x = Tensor::cat(&features, 1)?;
            if let Some(t) = self.transitions.get(i) {
                let y = t.conv.forward(&t.norm.forward(&x, pass)?.relu()?)?;
                x = y.avg_pool2d_with_stride(2, 2)?;
            }
        }
        global_avg_pool(&self.norm5.forward(&x, pass)?.relu()?)
    }
}

/// Maps legacy torchvision keys (`denselayer1.norm.1.weight`) to the current
/// names (`denselayer1.norm1.weight`).
pub fn remap_legacy_key(key: &str) -> String {
    if !key.contains("denselayer") {
        return key.to_string();
    }
    let mut out = key.to_string();
    for layer in ["norm", "relu", "conv"] {
        for i in ["1", "2"] {
            out = out.replace(&format!(".{layer}.{i}."), &format!(".{layer}{i}."));
        }
    }
    out
}
