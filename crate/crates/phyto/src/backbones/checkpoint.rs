//! Model checkpoints: every tensor plus a JSON metadata block, stored as
//! safetensors. Byte output is deterministic for identical model state.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{Device, Tensor};
use phyto_core::LabelSpace;
use safetensors::tensor::{Dtype, TensorView};
use serde::{Deserialize, Serialize};

use super::{build_classifier, BackboneSpec, BuildOptions, ClassifierModel};
use crate::data::{write_atomic, Normalization};
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "phyto-checkpoint/1";
const META_KEY: &str = "phyto";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: String,
    pub backbone: BackboneSpec,
    pub labels: LabelSpace,
    /// Hash of the experiment configuration that produced the weights.
    pub config_hash: String,
    /// Input resolution and normalization the weights were trained with.
    pub image_size: usize,
    pub normalization: Normalization,
    pub epoch: usize,
    pub val_accuracy: f64,
}

/// Serializes all tensors of `model` with `meta`.
pub fn to_bytes(model: &ClassifierModel, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    if meta.labels.len() != model.num_classes() {
        return Err(Error::Model(format!(
            "checkpoint lists {} labels but the head has {} outputs",
            meta.labels.len(),
            model.num_classes()
        )));
    }
    let mut raw: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::with_capacity(model.store().len());
    for (name, p) in model.store().iter() {
        let values = p.var.as_tensor().flatten_all()?.to_vec1::<f32>()?;
        let bytes = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        raw.push((name.to_string(), p.var.dims().to_vec(), bytes));
    }
    let views = raw
        .iter()
        .map(|(n, shape, bytes)| {
            TensorView::new(Dtype::F32, shape.clone(), bytes)
                .map(|v| (n.as_str(), v))
                .map_err(|e| Error::Model(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let metadata = HashMap::from([(META_KEY.to_string(), serde_json::to_string(meta)?)]);
    safetensors::serialize(views, Some(metadata)).map_err(|e| Error::Model(e.to_string()))
}

pub fn save(path: &Path, model: &ClassifierModel, meta: &CheckpointMeta) -> Result<()> {
    write_atomic(path, &to_bytes(model, meta)?)
}

/// Reads only the metadata block.
pub fn read_meta(path: &Path) -> Result<CheckpointMeta> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_meta(path, &bytes)
}

fn parse_meta(path: &Path, bytes: &[u8]) -> Result<CheckpointMeta> {
    let fail = |message: String| Error::Checkpoint { path: path.to_path_buf(), message };
    let (_, header) = safetensors::SafeTensors::read_metadata(bytes).map_err(|e| fail(e.to_string()))?;
    let json = header
        .metadata()
        .as_ref()
        .and_then(|m| m.get(META_KEY))
        .ok_or_else(|| fail("no metadata block; not written by this tool".into()))?;
    let meta: CheckpointMeta = serde_json::from_str(json).map_err(|e| fail(e.to_string()))?;
    if meta.format != CHECKPOINT_FORMAT {
        return Err(fail(format!("unsupported format `{}`", meta.format)));
    }
    Ok(meta)
}

/// Rebuilds the classifier stored at `path`.
pub fn load(path: &Path, device: &Device) -> Result<(ClassifierModel, CheckpointMeta)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let meta = parse_meta(path, &bytes)?;
    let fail = |message: String| Error::Checkpoint { path: path.to_path_buf(), message };
    let spec = BackboneSpec { pretrained: false, ..meta.backbone };
    let opts = BuildOptions { device: device.clone(), ..Default::default() };
    let mut model = build_classifier(spec, meta.labels.len(), 0, &opts)?;
    model.spec = meta.backbone;
    let tensors = candle_core::safetensors::load_buffer(&bytes, device).map_err(|e| fail(e.to_string()))?;
    let mut sorted: Vec<(&String, &Tensor)> = tensors.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(b.0));
    if sorted.len() != model.store().len() {
        return Err(fail(format!("holds {} tensors, model has {}", sorted.len(), model.store().len())));
    }
    model.store().assign(sorted.into_iter().map(|(k, t)| (k.as_str(), t)), None).map_err(|e| fail(e.to_string()))?;
    Ok((model, meta))
}
