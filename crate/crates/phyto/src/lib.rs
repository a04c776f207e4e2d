//! Experiment toolkit for classifying phytoplankton genera from microscopy
//! images with ImageNet-pretrained CNN backbones.
//!
//! The crate wires the pure algorithms of [`phyto_core`] to the filesystem and
//! to a tensor engine:
//!
//! * [`data`] discovers a directory-per-class corpus, writes manifests and
//!   stratified split files, and decodes/normalizes images.
//! * [`backbones`] builds ResNet, ResNeXt, DenseNet and EfficientNet
//!   classifiers with a replaced head, and reads/writes checkpoints.
//! * [`train`] runs linear probing, fine-tuning or the two-stage combined
//!   schedule with Adam and best-on-validation checkpoint selection.
//! * [`runner`] turns declarative configs into runs and sweeps.
//! * [`report`] renders comparison tables, CSV files and PNG figures.

pub mod backbones;
pub mod data;
pub mod error;
pub mod optim;
pub mod report;
pub mod runner;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
pub use phyto_core as core;
