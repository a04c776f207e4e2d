//! Registry of ImageNet CNN backbones with a replaceable classifier head.
//!
//! Parameter names follow the torchvision state dicts so that published
//! checkpoints load without translation. The classifier head is exactly the
//! final affine layer (`fc`, `classifier` or `classifier.1`); everything else
//! belongs to the backbone.

pub mod checkpoint;
pub mod densenet;
pub mod efficientnet;
pub mod layers;
pub mod params;
pub mod resnet;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use candle_core::{DType, Device, Tensor, Var};
use serde::{Deserialize, Serialize};

use self::densenet::DenseNet;
use self::efficientnet::EfficientNet;
use self::layers::{Linear, Pass};
use self::params::{Builder, Fill, Group, ModelState, ParamStore};
use self::resnet::{ResNet, ResNetConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneName {
    Resnet18,
    Resnet50,
    Resnet152,
    /// ResNeXt-50 32x4d.
    Resnext50,
    Densenet121,
    EfficientnetB0,
}

impl BackboneName {
    pub const ALL: [BackboneName; 6] = [
        BackboneName::Resnet18,
        BackboneName::Resnet50,
        BackboneName::Resnet152,
        BackboneName::Resnext50,
        BackboneName::Densenet121,
        BackboneName::EfficientnetB0,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BackboneName::Resnet18 => "resnet18",
            BackboneName::Resnet50 => "resnet50",
            BackboneName::Resnet152 => "resnet152",
            BackboneName::Resnext50 => "resnext50",
            BackboneName::Densenet121 => "densenet121",
            BackboneName::EfficientnetB0 => "efficientnet_b0",
        }
    }

    /// Name as printed in result tables.
    pub fn display_name(self) -> &'static str {
        match self {
            BackboneName::Resnet18 => "ResNet-18",
            BackboneName::Resnet50 => "ResNet-50",
            BackboneName::Resnet152 => "ResNet-152",
            BackboneName::Resnext50 => "ResNeXt-50",
            BackboneName::Densenet121 => "DenseNet-121",
            BackboneName::EfficientnetB0 => "EfficientNet-B0",
        }
    }

    /// Width of the pooled features entering the head.
    pub fn feature_dim(self) -> usize {
        match self {
            BackboneName::Resnet18 => ResNetConfig::RESNET18.feature_dim(),
            BackboneName::Resnet50 => ResNetConfig::RESNET50.feature_dim(),
            BackboneName::Resnet152 => ResNetConfig::RESNET152.feature_dim(),
            BackboneName::Resnext50 => ResNetConfig::RESNEXT50_32X4D.feature_dim(),
            BackboneName::Densenet121 => densenet::FEATURE_DIM,
            BackboneName::EfficientnetB0 => efficientnet::FEATURE_DIM,
        }
    }

    /// State-dict prefix of the classification layer.
    pub fn head_prefix(self) -> &'static str {
        match self {
            BackboneName::Densenet121 => "classifier",
            BackboneName::EfficientnetB0 => "classifier.1",
            _ => "fc",
        }
    }

    fn head_dropout(self) -> f32 {
        match self {
            BackboneName::EfficientnetB0 => efficientnet::HEAD_DROPOUT,
            _ => 0.0,
        }
    }

    /// File name of the published torchvision ImageNet checkpoint.
    pub fn weights_file(self) -> &'static str {
        match self {
            BackboneName::Resnet18 => "resnet18-f37072fd.pth",
            BackboneName::Resnet50 => "resnet50-0676ba61.pth",
            BackboneName::Resnet152 => "resnet152-394f9c45.pth",
            BackboneName::Resnext50 => "resnext50_32x4d-7cdf4587.pth",
            BackboneName::Densenet121 => "densenet121-a639ec97.pth",
            BackboneName::EfficientnetB0 => "efficientnet_b0_rwightman-7f5810bc.pth",
        }
    }

    pub fn weights_url(self) -> String {
        format!("https://download.pytorch.org/models/{}", self.weights_file())
    }

    pub fn registry_listing() -> String {
        Self::ALL.map(Self::as_str).join(", ")
    }
}

impl fmt::Display for BackboneName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackboneName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let squash = |t: &str| t.to_ascii_lowercase().replace(['-', '_', ' '], "");
        let key = match squash(s).as_str() {
            "resnext5032x4d" => "resnext50".to_string(),
            other => other.to_string(),
        };
        Self::ALL
            .into_iter()
            .find(|b| squash(b.as_str()) == key)
            .ok_or_else(|| Error::UnknownBackbone { name: s.to_string(), available: Self::registry_listing() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub name: BackboneName,
    pub pretrained: bool,
}

impl BackboneSpec {
    pub fn feature_dim(&self) -> usize {
        self.name.feature_dim()
    }
}

/// Where backbone values come from.
#[derive(Debug, Clone)]
pub struct BuildOptions {
    pub device: Device,
    /// Seed for random backbone initialization (`pretrained = false`).
    pub init_seed: u64,
    /// Directory holding the published checkpoints (`pretrained = true`).
    pub weights_dir: Option<PathBuf>,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self { device: Device::Cpu, init_seed: 0, weights_dir: None }
    }
}

#[derive(Debug, Clone)]
#[allow(clippy::enum_variant_names)]
enum Network {
    ResNet(ResNet),
    DenseNet(DenseNet),
    EfficientNet(EfficientNet),
}

/// A backbone plus a `num_classes`-way affine head.
#[derive(Debug, Clone)]
pub struct ClassifierModel {
    spec: BackboneSpec,
    num_classes: usize,
    store: ParamStore,
    net: Network,
    head: Linear,
    backbone_trainable: bool,
    head_trainable: bool,
    device: Device,
}

fn build_network(name: BackboneName, builder: &Builder) -> Result<Network> {
    let root = builder.root(Group::Backbone);
    Ok(match name {
        BackboneName::Resnet18 => Network::ResNet(ResNet::new(&root, ResNetConfig::RESNET18)?),
        BackboneName::Resnet50 => Network::ResNet(ResNet::new(&root, ResNetConfig::RESNET50)?),
        BackboneName::Resnet152 => Network::ResNet(ResNet::new(&root, ResNetConfig::RESNET152)?),
        BackboneName::Resnext50 => Network::ResNet(ResNet::new(&root, ResNetConfig::RESNEXT50_32X4D)?),
        BackboneName::Densenet121 => Network::DenseNet(DenseNet::new(&root)?),
        BackboneName::EfficientnetB0 => Network::EfficientNet(EfficientNet::new(&root)?),
    })
}

fn build_head(name: BackboneName, num_classes: usize, head_seed: u64, device: &Device) -> Result<(Linear, ParamStore)> {
    let builder = Builder::new(device.clone(), Fill::Random, head_seed);
    let head = Linear::new(&builder.root(Group::Head).pp(name.head_prefix()), name.feature_dim(), num_classes)?;
    Ok((head, builder.finish()))
}

/// Builds `spec` with a freshly initialized `num_classes`-way head seeded by
/// `head_seed`. Pretrained backbones are read from `opts.weights_dir`.
pub fn build_classifier(
    spec: BackboneSpec,
    num_classes: usize,
    head_seed: u64,
    opts: &BuildOptions,
) -> Result<ClassifierModel> {
    if num_classes < 2 {
        return Err(Error::Model(format!("need at least 2 classes, got {num_classes}")));
    }
    let fill = if spec.pretrained { Fill::Zeros } else { Fill::Random };
    let builder = Builder::new(opts.device.clone(), fill, opts.init_seed);
    let net = build_network(spec.name, &builder)?;
    let mut store = builder.finish();
    if spec.pretrained {
        let dir = opts.weights_dir.as_deref().unwrap_or(Path::new("weights"));
        load_pretrained(spec.name, &store, dir)?;
    }
    let (head, head_store) = build_head(spec.name, num_classes, head_seed, &opts.device)?;
    store.merge(head_store)?;
    Ok(ClassifierModel {
        spec,
        num_classes,
        store,
        net,
        head,
        backbone_trainable: true,
        head_trainable: true,
        device: opts.device.clone(),
    })
}

/// Path of the cached published checkpoint: a `.safetensors` conversion is
/// preferred over the original `.pth`.
pub fn pretrained_path(name: BackboneName, dir: &Path) -> PathBuf {
    let st = dir.join(format!("{}.safetensors", name.as_str()));
    if st.exists() {
        st
    } else {
        dir.join(name.weights_file())
    }
}

fn load_pretrained(name: BackboneName, store: &ParamStore, dir: &Path) -> Result<()> {
    let path = pretrained_path(name, dir);
    let fail = |reason: String| Error::Weights {
        backbone: name.to_string(),
        path: path.clone(),
        url: name.weights_url(),
        reason,
    };
    if !path.exists() {
        return Err(fail("file not found".into()));
    }
    let tensors: Vec<(String, Tensor)> = if path.extension().is_some_and(|e| e == "safetensors") {
        candle_core::safetensors::load(&path, &Device::Cpu).map_err(|e| fail(e.to_string()))?.into_iter().collect()
    } else {
        candle_core::pickle::read_all(&path).map_err(|e| fail(e.to_string()))?
    };
    let head = format!("{}.", name.head_prefix());
    let tensors: Vec<(String, Tensor)> = tensors
        .into_iter()
        .map(|(k, t)| (densenet::remap_legacy_key(&k), t))
        .filter(|(k, _)| !k.starts_with(&head) && !k.ends_with("num_batches_tracked"))
        .collect();
    store.assign(tensors.iter().map(|(k, t)| (k.as_str(), t)), Some(Group::Backbone)).map_err(|e| fail(e.to_string()))
}

impl ClassifierModel {
    pub fn spec(&self) -> BackboneSpec {
        self.spec
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn backbone_trainable(&self) -> bool {
        self.backbone_trainable
    }

    pub fn head_trainable(&self) -> bool {
        self.head_trainable
    }

    /// Head output dimension.
    pub fn head_dims(&self) -> (usize, usize) {
        (self.head.out_dim(), self.head.in_dim())
    }

    /// Replaces the head with a fresh `num_classes`-way layer. Backbone tensors
    /// are untouched.
    pub fn replace_head(&mut self, num_classes: usize, head_seed: u64) -> Result<()> {
        if num_classes < 2 {
            return Err(Error::Model(format!("need at least 2 classes, got {num_classes}")));
        }
        let (head, head_store) = build_head(self.spec.name, num_classes, head_seed, &self.device)?;
        self.store.remove_group(Group::Head);
        self.store.merge(head_store)?;
        self.head = head;
        self.num_classes = num_classes;
        Ok(())
    }

    /// Selects which groups the optimizer may update. A frozen backbone also
    /// runs in inference mode and is cut from the gradient graph.
    pub fn set_trainability(&mut self, backbone: bool, head: bool) -> Result<()> {
        if !backbone && !head {
            return Err(Error::Model("both parameter groups frozen; nothing to optimize".into()));
        }
        self.backbone_trainable = backbone;
        self.head_trainable = head;
        Ok(())
    }

    /// Weights the optimizer should update under the current trainability.
    pub fn trainable_weights(&self) -> Vec<Var> {
        let mut vars = Vec::new();
        if self.backbone_trainable {
            vars.extend(self.store.weights(Group::Backbone));
        }
        if self.head_trainable {
            vars.extend(self.store.weights(Group::Head));
        }
        vars
    }

    pub fn parameter_digest(&self, group: Group) -> Result<String> {
        self.store.digest(group)
    }

    /// Pooled backbone features, `(B, feature_dim)`.
    pub fn features(&self, x: &Tensor, pass: &mut Pass) -> Result<Tensor> {
        match &self.net {
            Network::ResNet(n) => n.forward(x, pass),
            Network::DenseNet(n) => n.forward(x, pass),
            Network::EfficientNet(n) => n.forward(x, pass),
        }
    }

    /// Applies the head (with its dropout, if any) to pooled features.
    pub fn classify(&self, features: &Tensor, pass: &mut Pass) -> Result<Tensor> {
        let x = pass.dropout(features, self.spec.name.head_dropout())?;
        self.head.forward(&x)
    }

    /// Backbone features as seen by the head under the current trainability:
    /// a frozen backbone runs in inference mode and its output is detached.
    pub fn head_input(&self, x: &Tensor, pass: &mut Pass) -> Result<Tensor> {
        if self.backbone_trainable {
            self.features(x, pass)
        } else {
            Ok(self.features(x, &mut Pass::eval())?.detach())
        }
    }

    /// `(B, 3, H, W)` to logits `(B, num_classes)`.
    pub fn forward(&self, x: &Tensor, pass: &mut Pass) -> Result<Tensor> {
        let f = self.head_input(x, pass)?;
        self.classify(&f, pass)
    }

    /// Arg-max class per sample in inference mode.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let logits = self.forward(x, &mut Pass::eval())?;
        Ok(logits.argmax(1)?.to_dtype(DType::U32)?.to_vec1::<u32>()?.into_iter().map(|v| v as usize).collect())
    }

    pub fn snapshot(&self) -> Result<ModelState> {
        self.store.snapshot()
    }

    pub fn restore(&self, state: &ModelState) -> Result<()> {
        self.store.restore(state)
    }
}
