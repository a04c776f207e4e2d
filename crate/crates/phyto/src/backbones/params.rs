//! Named parameter storage with backbone/head grouping.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt;

use candle_core::{DType, Device, Tensor, Var};
use phyto_core::digest::{digest, NamedValues};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Backbone,
    Head,
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Group::Backbone => "backbone",
            Group::Head => "head",
        })
    }
}

/// Weights are optimized; buffers (batch-norm running statistics) are not.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Buffer,
}

#[derive(Debug, Clone)]
pub struct Param {
    pub var: Var,
    pub kind: ParamKind,
    pub group: Group,
}

/// Every tensor of a model, keyed by its torchvision state-dict name.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

/// Detached copy of all tensor values, used to keep the best epoch in memory.
#[derive(Debug, Clone)]
pub struct ModelState(pub BTreeMap<String, Tensor>);

impl ParamStore {
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self, group: Group) -> Vec<&str> {
        self.iter().filter(|(_, p)| p.group == group).map(|(n, _)| n).collect()
    }

    /// Trainable weight tensors of `group`.
    pub fn weights(&self, group: Group) -> Vec<Var> {
        self.params
            .values()
            .filter(|p| p.group == group && p.kind == ParamKind::Weight)
            .map(|p| p.var.clone())
            .collect()
    }

    /// Number of scalar values in `group`'s weights.
    pub fn weight_count(&self, group: Group) -> usize {
        self.params
            .values()
            .filter(|p| p.group == group && p.kind == ParamKind::Weight)
            .map(|p| p.var.elem_count())
            .sum()
    }

    /// Content hash over every tensor of `group` (weights and buffers) in
    /// name order.
    pub fn digest(&self, group: Group) -> Result<String> {
        let mut owned = Vec::new();
        for (name, p) in self.iter().filter(|(_, p)| p.group == group) {
            let values = p.var.as_tensor().flatten_all()?.to_vec1::<f32>()?;
            owned.push((name, p.var.dims().to_vec(), values));
        }
        Ok(digest(owned.iter().map(|(name, shape, values)| NamedValues { name, shape, values })))
    }

    pub fn snapshot(&self) -> Result<ModelState> {
        let mut out = BTreeMap::new();
        for (name, p) in &self.params {
            out.insert(name.clone(), p.var.as_tensor().copy()?);
        }
        Ok(ModelState(out))
    }

    /// Removes every tensor of `group`.
    pub fn remove_group(&mut self, group: Group) {
        self.params.retain(|_, p| p.group != group);
    }

    /// Adds all tensors of `other`; names must not collide.
    pub fn merge(&mut self, other: ParamStore) -> Result<()> {
        for (name, p) in other.params {
            if self.params.contains_key(&name) {
                return Err(Error::Model(format!("parameter `{name}` defined twice")));
            }
            self.params.insert(name, p);
        }
        Ok(())
    }

    pub fn restore(&self, state: &ModelState) -> Result<()> {
        self.assign(state.0.iter().map(|(k, v)| (k.as_str(), v)), None)
    }

    /// Copies `tensors` into the store. Every name must exist with the same
    /// shape. When `required` is set, every parameter of that group must be
    /// provided.
    pub fn assign<'a>(
        &self,
        tensors: impl IntoIterator<Item = (&'a str, &'a Tensor)>,
        required: Option<Group>,
    ) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for (name, t) in tensors {
            let p = self.params.get(name).ok_or_else(|| Error::Model(format!("unexpected tensor `{name}`")))?;
            if p.var.dims() != t.dims() {
                return Err(Error::Model(format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    t.dims(),
                    p.var.dims()
                )));
            }
            p.var.set(&t.to_dtype(DType::F32)?.to_device(p.var.device())?.contiguous()?)?;
            seen.insert(name);
        }
        if let Some(group) = required {
            if let Some(missing) = self.names(group).into_iter().find(|n| !seen.contains(n)) {
                return Err(Error::Model(format!("missing tensor `{missing}`")));
            }
        }
        Ok(())
    }
}

/// Initialization rule for a freshly created weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// He normal with `fan_out = dims[0] * receptive field`.
    KaimingFanOut,
    /// He normal with `fan_in = dims[1] * receptive field`.
    KaimingFanIn,
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    UniformFanIn {
        fan_in: usize,
    },
    Const(f32),
}

/// Whether new tensors are sampled or left at zero (to be overwritten by
/// pretrained values).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fill {
    Random,
    Zeros,
}

/// Collects parameters while a network is being constructed.
pub struct Builder {
    device: Device,
    fill: Fill,
    rng: RefCell<ChaCha8Rng>,
    params: RefCell<BTreeMap<String, Param>>,
}

impl Builder {
    pub fn new(device: Device, fill: Fill, seed: u64) -> Self {
        Self { device, fill, rng: RefCell::new(ChaCha8Rng::seed_from_u64(seed)), params: RefCell::default() }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn root(&self, group: Group) -> Scope<'_> {
        Scope { builder: self, prefix: String::new(), group }
    }

    pub fn finish(self) -> ParamStore {
        ParamStore { params: self.params.into_inner() }
    }

    fn insert(&self, name: String, shape: &[usize], init: Init, kind: ParamKind, group: Group) -> Result<Var> {
        let n: usize = shape.iter().product();
        let values: Vec<f32> = match (self.fill, init) {
            (_, Init::Const(v)) => vec![v; n],
            (Fill::Zeros, _) => vec![0.0; n],
            (Fill::Random, Init::UniformFanIn { fan_in }) => {
                let bound = 1.0 / (fan_in as f32).sqrt();
                let mut rng = self.rng.borrow_mut();
                (0..n).map(|_| rng.random_range(-bound..bound)).collect()
            }
            (Fill::Random, Init::KaimingFanOut | Init::KaimingFanIn) => {
                let receptive: usize = shape.iter().skip(2).product();
                let fan = if init == Init::KaimingFanOut { shape[0] } else { shape[1] } * receptive;
                let std = (2.0 / fan as f32).sqrt();
                let normal = Normal::new(0.0, std).expect("positive std");
                let mut rng = self.rng.borrow_mut();
                (0..n).map(|_| normal.sample(&mut *rng)).collect()
            }
        };
        let var = Var::from_tensor(&Tensor::from_vec(values, shape, &self.device)?)?;
        let prev = self.params.borrow_mut().insert(name.clone(), Param { var: var.clone(), kind, group });
        if prev.is_some() {
            return Err(Error::Model(format!("parameter `{name}` defined twice")));
        }
        Ok(var)
    }
}

/// A dotted name prefix inside a [`Builder`].
#[derive(Clone)]
pub struct Scope<'a> {
    builder: &'a Builder,
    prefix: String,
    group: Group,
}

impl<'a> Scope<'a> {
    pub fn pp(&self, part: impl fmt::Display) -> Scope<'a> {
        let prefix = if self.prefix.is_empty() { part.to_string() } else { format!("{}.{part}", self.prefix) };
        Scope { builder: self.builder, prefix, group: self.group }
    }

    fn full(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn weight(&self, name: &str, shape: &[usize], init: Init) -> Result<Var> {
        self.builder.insert(self.full(name), shape, init, ParamKind::Weight, self.group)
    }

    pub fn buffer(&self, name: &str, shape: &[usize], value: f32) -> Result<Var> {
        self.builder.insert(self.full(name), shape, Init::Const(value), ParamKind::Buffer, self.group)
    }

    pub fn device(&self) -> &Device {
        self.builder.device()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_tracks_values_per_group() {
        let b = Builder::new(Device::Cpu, Fill::Random, 1);
        let root = b.root(Group::Backbone);
        let w = root.pp("conv").weight("weight", &[4, 2, 3, 3], Init::KaimingFanOut).unwrap();
        root.pp("bn").buffer("running_var", &[4], 1.0).unwrap();
        b.root(Group::Head).pp("fc").weight("weight", &[3, 4], Init::UniformFanIn { fan_in: 4 }).unwrap();
        let store = b.finish();
        let d0 = store.digest(Group::Backbone).unwrap();
        let h0 = store.digest(Group::Head).unwrap();
        assert_eq!(d0, store.clone().digest(Group::Backbone).unwrap());
        let bumped = (w.as_tensor().clone() + 1e-3).unwrap();
        w.set(&bumped).unwrap();
        assert_ne!(store.digest(Group::Backbone).unwrap(), d0);
        assert_eq!(store.digest(Group::Head).unwrap(), h0);
        assert_eq!(store.names(Group::Backbone), ["bn.running_var", "conv.weight"]);
        assert_eq!(store.weights(Group::Backbone).len(), 1);
        assert_eq!(store.weight_count(Group::Head), 12);
    }

    #[test]
    fn snapshot_restores_values() {
        let b = Builder::new(Device::Cpu, Fill::Random, 2);
        let w = b.root(Group::Head).weight("w", &[5], Init::UniformFanIn { fan_in: 5 }).unwrap();
        let store = b.finish();
        let snap = store.snapshot().unwrap();
        let before = store.digest(Group::Head).unwrap();
        w.set(&Tensor::zeros(5, DType::F32, &Device::Cpu).unwrap()).unwrap();
        assert_ne!(store.digest(Group::Head).unwrap(), before);
        store.restore(&snap).unwrap();
        assert_eq!(store.digest(Group::Head).unwrap(), before);
    }

    #[test]
    fn assign_checks_names_and_shapes() {
        let b = Builder::new(Device::Cpu, Fill::Zeros, 0);
        b.root(Group::Backbone).weight("a", &[2], Init::KaimingFanIn).unwrap();
        b.root(Group::Backbone).weight("b", &[2], Init::KaimingFanIn).unwrap();
        let store = b.finish();
        let t = Tensor::ones(2, DType::F32, &Device::Cpu).unwrap();
        let wrong = Tensor::ones(3, DType::F32, &Device::Cpu).unwrap();
        assert!(store.assign([("a", &t)], Some(Group::Backbone)).is_err());
        assert!(store.assign([("a", &wrong)], None).is_err());
        assert!(store.assign([("zzz", &t)], None).is_err());
        store.assign([("a", &t), ("b", &t)], Some(Group::Backbone)).unwrap();
    }
}
