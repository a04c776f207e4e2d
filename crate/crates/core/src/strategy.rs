//! Transfer-learning schedules, per-epoch logs and best-checkpoint selection.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    /// Backbone frozen, only the classifier head is trained.
    LinearProbe,
    /// Backbone and head trained together.
    FineTune,
    /// Linear probing, then fine-tuning at a second learning rate.
    Combined,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 3] = [StrategyKind::LinearProbe, StrategyKind::FineTune, StrategyKind::Combined];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::LinearProbe => "linear_probe",
            StrategyKind::FineTune => "fine_tune",
            StrategyKind::Combined => "combined",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidStrategy(format!("unknown strategy `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub epochs: usize,
    pub initial_lr: f64,
    pub backbone_trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySpec {
    kind: StrategyKind,
    stages: Vec<StageSpec>,
}

impl StrategySpec {
    /// Validates the stage layout required by `kind`.
    pub fn new(kind: StrategyKind, stages: Vec<StageSpec>) -> Result<Self> {
        for s in &stages {
            if s.epochs == 0 {
                return Err(Error::InvalidStrategy("stage with 0 epochs".into()));
            }
            if !(s.initial_lr.is_finite() && s.initial_lr > 0.0) {
                return Err(Error::InvalidStrategy(format!("learning rate must be positive, got {}", s.initial_lr)));
            }
        }
        let layout: Vec<bool> = stages.iter().map(|s| s.backbone_trainable).collect();
        let ok = match kind {
            StrategyKind::LinearProbe => layout == [false],
            StrategyKind::FineTune => layout == [true],
            StrategyKind::Combined => layout == [false, true],
        };
        if !ok {
            return Err(Error::InvalidStrategy(format!("{kind} cannot have backbone_trainable stages {layout:?}")));
        }
        Ok(Self { kind, stages })
    }

    pub fn kind(&self) -> StrategyKind {
        self.kind
    }

    pub fn stages(&self) -> &[StageSpec] {
        &self.stages
    }

    pub fn total_epochs(&self) -> usize {
        self.stages.iter().map(|s| s.epochs).sum()
    }

    /// Stage index (0-based) that runs the 1-based `epoch`.
    pub fn stage_of(&self, epoch: usize) -> Option<usize> {
        if epoch == 0 {
            return None;
        }
        let mut end = 0;
        for (i, s) in self.stages.iter().enumerate() {
            end += s.epochs;
            if epoch <= end {
                return Some(i);
            }
        }
        None
    }

    pub fn lr_at(&self, epoch: usize) -> Option<f64> {
        self.stage_of(epoch).map(|i| self.stages[i].initial_lr)
    }
}

/// Builds the stage list for a strategy.
///
/// `linear_probe` and `fine_tune` take exactly one learning rate and run one
/// stage of `total_epochs`. `combined` takes two rates and splits the budget
/// in half (the second stage receives the odd epoch).
pub fn make_strategy(kind: StrategyKind, total_epochs: usize, lrs: &[f64]) -> Result<StrategySpec> {
    let stage = |epochs, initial_lr, backbone_trainable| StageSpec { epochs, initial_lr, backbone_trainable };
    let stages = match (kind, lrs) {
        (StrategyKind::LinearProbe, &[lr]) => vec![stage(total_epochs, lr, false)],
        (StrategyKind::FineTune, &[lr]) => vec![stage(total_epochs, lr, true)],
        (StrategyKind::Combined, &[lr1, lr2]) => {
            if total_epochs < 2 {
                return Err(Error::InvalidStrategy("combined needs at least 2 epochs".into()));
            }
            let first = total_epochs / 2;
            vec![stage(first, lr1, false), stage(total_epochs - first, lr2, true)]
        }
        (StrategyKind::Combined, _) => {
            return Err(Error::InvalidStrategy(format!("combined needs two learning rates, got {}", lrs.len())))
        }
        (_, _) => return Err(Error::InvalidStrategy(format!("{kind} needs one learning rate, got {}", lrs.len()))),
    };
    StrategySpec::new(kind, stages)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based, contiguous across stages.
    pub epoch: usize,
    /// 0-based stage index.
    pub stage: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    pub wall_clock_minutes: f64,
}

impl TrainingLog {
    pub fn validate(&self) -> Result<()> {
        for (i, r) in self.epochs.iter().enumerate() {
            if r.epoch != i + 1 {
                return Err(Error::InvalidLog(format!("epoch {} at position {}", r.epoch, i)));
            }
            if !(0.0..=1.0).contains(&r.val_accuracy) {
                return Err(Error::InvalidLog(format!("validation accuracy {} outside [0, 1]", r.val_accuracy)));
            }
        }
        if self.wall_clock_minutes.is_nan() || self.wall_clock_minutes <= 0.0 {
            return Err(Error::InvalidLog("wall clock must be positive".into()));
        }
        Ok(())
    }

    /// Epoch with maximal validation accuracy, earliest on ties.
    pub fn best_epoch(&self) -> Option<&EpochRecord> {
        self.epochs.iter().fold(None, |best: Option<&EpochRecord>, r| match best {
            Some(b) if b.val_accuracy >= r.val_accuracy => Some(b),
            _ => Some(r),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRef {
    pub path: String,
    pub epoch: usize,
    pub val_accuracy: f64,
}

/// Argmax of validation accuracy over `checkpoints`, smallest epoch on ties.
/// Checkpoints whose epoch is not in `log` are ignored.
pub fn select_best_checkpoint<'a>(log: &TrainingLog, checkpoints: &'a [CheckpointRef]) -> Option<&'a CheckpointRef> {
    checkpoints.iter().filter(|c| log.epochs.iter().any(|r| r.epoch == c.epoch)).fold(
        None,
        |best: Option<&CheckpointRef>, c| match best {
            Some(b) if b.val_accuracy > c.val_accuracy || (b.val_accuracy == c.val_accuracy && b.epoch <= c.epoch) => {
                Some(b)
            }
            _ => Some(c),
        },
    )
}
