//! EfficientNet-B0 feature extractor (torchvision layout and names).

use candle_core::Tensor;

use super::layers::{global_avg_pool, Act, Conv2d, ConvBn, ConvOpts, Pass};
use super::params::Scope;
use crate::Result;

pub const FEATURE_DIM: usize = 1280;
/// Dropout in front of the classifier.
pub const HEAD_DROPOUT: f32 = 0.2;
const STOCHASTIC_DEPTH: f32 = 0.2;

/// `(expand_ratio, kernel, stride, in, out, layers)` per stage.
const STAGES: [(usize, usize, usize, usize, usize, usize); 7] = [
    (1, 3, 1, 32, 16, 1),
    (6, 3, 2, 16, 24, 2),
    (6, 5, 2, 24, 40, 2),
    (6, 3, 2, 40, 80, 3),
    (6, 5, 1, 80, 112, 3),
    (6, 5, 2, 112, 192, 4),
    (6, 3, 1, 192, 320, 1),
];

#[derive(Debug, Clone)]
struct SqueezeExcite {
    fc1: Conv2d,
    fc2: Conv2d,
}

impl SqueezeExcite {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let s = x.mean_keepdim((2, 3))?;
        let s = self.fc1.forward(&s)?.silu()?;
        let s = candle_nn::ops::sigmoid(&self.fc2.forward(&s)?)?;
        Ok(x.broadcast_mul(&s)?)
    }
}

#[derive(Debug, Clone)]
struct MbConv {
    expand: Option<ConvBn>,
    depthwise: ConvBn,
    se: SqueezeExcite,
    project: ConvBn,
    residual: bool,
    drop_prob: f32,
}

impl MbConv {
    fn new(
        s: &Scope,
        expand_ratio: usize,
        kernel: usize,
        stride: usize,
        cin: usize,
        cout: usize,
        drop_prob: f32,
    ) -> Result<Self> {
        let block = s.pp("block");
        let expanded = cin * expand_ratio;
        let mut idx = 0;
        let mut next = || {
            idx += 1;
            block.pp(idx - 1)
        };
        let expand =
            if expanded != cin { Some(ConvBn::sequential(&next(), cin, expanded, 1, 1, 1, Act::Silu)?) } else { None };
        let depthwise = ConvBn::sequential(&next(), expanded, expanded, kernel, stride, expanded, Act::Silu)?;
        let se_scope = next();
        let squeeze = (cin / 4).max(1);
        let se = SqueezeExcite {
            fc1: Conv2d::new(&se_scope.pp("fc1"), expanded, squeeze, 1, ConvOpts { bias: true, ..Default::default() })?,
            fc2: Conv2d::new(&se_scope.pp("fc2"), squeeze, expanded, 1, ConvOpts { bias: true, ..Default::default() })?,
        };
        let project = ConvBn::sequential(&next(), expanded, cout, 1, 1, 1, Act::None)?;
        Ok(Self { expand, depthwise, se, project, residual: stride == 1 && cin == cout, drop_prob })
    }

    fn forward(&self, x: &Tensor, pass: &mut Pass) -> Result<Tensor> {
        let mut y = match &self.expand {
            Some(e) => e.forward(x, pass)?,
            None => x.clone(),
        };
        y = self.depthwise.forward(&y, pass)?;
        y = self.se.forward(&y)?;
        y = self.project.forward(&y, pass)?;
        if self.residual {
            y = (pass.stochastic_depth(&y, self.drop_prob)? + x)?;
        }
        Ok(y)
    }
}

#[derive(Debug, Clone)]
pub struct EfficientNet {
    stem: ConvBn,
    blocks: Vec<MbConv>,
    top: ConvBn,
}

impl EfficientNet {
    /// Builds `features.*`; the classifier (`classifier.1`) is added by the
    /// caller.
    pub fn new(s: &Scope) -> Result<Self> {
        let f = s.pp("features");
        let stem = ConvBn::sequential(&f.pp(0), 3, 32, 3, 2, 1, Act::Silu)?;
        let total: usize = STAGES.iter().map(|s| s.5).sum();
        let mut blocks = Vec::with_capacity(total);
        for (i, &(expand, kernel, stride, cin, cout, layers)) in STAGES.iter().enumerate() {
            let stage = f.pp(i + 1);
            for j in 0..layers {
                let (cin, stride) = if j == 0 { (cin, stride) } else { (cout, 1) };
                let drop = STOCHASTIC_DEPTH * blocks.len() as f32 / total as f32;
                blocks.push(MbConv::new(&stage.pp(j), expand, kernel, stride, cin, cout, drop)?);
            }
        }
        let top = ConvBn::sequential(&f.pp(8), 320, FEATURE_DIM, 1, 1, 1, Act::Silu)?;
        Ok(Self { stem, blocks, top })
    }

    pub fn forward(&self, x: &Tensor, pass: &mut Pass) -> Result<Tensor> {
        let mut x = self.stem.forward(x, pass)?;
        for b in &self.blocks {
            x = b.forward(&x, pass)?;
        }
        global_avg_pool(&self.top.forward(&x, pass)?)
    }
}
