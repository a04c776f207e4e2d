//! Pure algorithms behind the phytoplankton transfer-learning toolkit.
//!
//! Everything here works on plain data (labels, counts, schedules, raw
//! parameter values) and needs only `alloc`. File formats, image decoding,
//! the tensor engine and the CLI live in the `phyto` crate.
#![no_std]
#![forbid(unsafe_code)]
extern crate alloc;

pub mod digest;
pub mod error;
pub mod format;
pub mod labels;
pub mod metrics;
pub mod split;
pub mod strategy;

pub use error::{Error, Result};
pub use labels::LabelSpace;
pub use metrics::{ConfusionMatrix, MetricsReport, PerClassCounts};
pub use split::{stratified_split, Split, SplitAssignment, SplitRatios};
pub use strategy::{
    make_strategy, select_best_checkpoint, CheckpointRef, EpochRecord, StageSpec, StrategyKind, StrategySpec,
    TrainingLog,
};
