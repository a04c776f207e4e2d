//! Training engine shared by the three strategies: one loop over stages, each
//! stage fixing which parameter groups Adam may update.

use std::path::{Path, PathBuf};
use std::time::Instant;

use candle_core::{DType, Device, Tensor};
use phyto_core::{CheckpointRef, ConfusionMatrix, EpochRecord, LabelSpace, StrategySpec, TrainingLog};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbones::checkpoint::{self, CheckpointMeta};
use crate::backbones::layers::Pass;
use crate::backbones::params::{Group, ModelState};
use crate::backbones::ClassifierModel;
use crate::data::{ImageSet, Normalization};
use crate::optim::Adam;
use crate::{Error, Result};

/// Batch size used for inference-only passes (validation, feature caching).
pub const EVAL_BATCH: usize = 32;

pub const BEST_CHECKPOINT: &str = "best.safetensors";
pub const LAST_CHECKPOINT: &str = "last.safetensors";

/// Where and how per-epoch checkpoints are written.
#[derive(Debug, Clone)]
pub struct CheckpointSink {
    pub dir: PathBuf,
    pub labels: LabelSpace,
    pub config_hash: String,
    pub image_size: usize,
    pub normalization: Normalization,
}

impl CheckpointSink {
    pub fn meta(&self, model: &ClassifierModel, epoch: usize, val_accuracy: f64) -> CheckpointMeta {
        CheckpointMeta {
            format: checkpoint::CHECKPOINT_FORMAT.into(),
            backbone: model.spec(),
            labels: self.labels.clone(),
            config_hash: self.config_hash.clone(),
            image_size: self.image_size,
            normalization: self.normalization,
            epoch,
            val_accuracy,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub batch_size: usize,
    pub seed: u64,
    /// Multiplicative per-epoch learning-rate decay inside a stage. `None`
    /// keeps each stage's rate constant.
    pub lr_decay: Option<f64>,
    pub checkpoints: Option<CheckpointSink>,
}

impl TrainOptions {
    pub fn new(batch_size: usize, seed: u64) -> Self {
        Self { batch_size, seed, lr_decay: None, checkpoints: None }
    }
}

/// Backbone/head digests observed at the boundaries of one stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageDigest {
    pub stage: usize,
    pub backbone_trainable: bool,
    pub backbone_before: String,
    pub backbone_after: String,
    pub head_after: String,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: TrainingLog,
    pub best: CheckpointRef,
    pub stages: Vec<StageDigest>,
}

/// Runs `f` and returns its value with the elapsed monotonic time in minutes.
pub fn measure_wall_clock<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let start = Instant::now();
    let value = f()?;
    Ok((value, phyto_core::format::minutes(start.elapsed().as_secs_f64())))
}

/// Learning rate used in the `epoch_in_stage`-th (1-based) epoch of a stage.
pub fn stage_lr(initial: f64, decay: Option<f64>, epoch_in_stage: usize) -> f64 {
    match decay {
        Some(g) => initial * g.powi(epoch_in_stage as i32 - 1),
        None => initial,
    }
}

/// Shuffled sample order for `epoch`; depends only on `seed` and `epoch`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

fn pass_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Trains `model` under `strategy` and leaves it holding the weights of the
/// epoch with the highest validation accuracy (earliest on ties).
pub fn train(
    model: &mut ClassifierModel,
    strategy: &StrategySpec,
    train_set: &ImageSet,
    val_set: &ImageSet,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    if train_set.is_empty() {
        return Err(Error::Training("training set is empty".into()));
    }
    if val_set.is_empty() {
        return Err(Error::Training("validation set is empty; best-epoch selection is impossible".into()));
    }
    if opts.batch_size == 0 {
        return Err(Error::Training("batch_size must be at least 1".into()));
    }
    if let Some(sink) = &opts.checkpoints {
        std::fs::create_dir_all(&sink.dir).map_err(|e| Error::io(&sink.dir, e))?;
    }
    let ((epochs, best, stages), minutes) =
        measure_wall_clock(|| run_stages(model, strategy, train_set, val_set, opts))?;
    let (best_record, best_state) = best.expect("at least one epoch ran");
    model.restore(&best_state)?;
    let path = match &opts.checkpoints {
        Some(sink) => sink.dir.join(BEST_CHECKPOINT).display().to_string(),
        None => String::from("<memory>"),
    };
    let log = TrainingLog { epochs, wall_clock_minutes: minutes.max(f64::MIN_POSITIVE) };
    log.validate()?;
    Ok(TrainOutcome {
        best: CheckpointRef { path, epoch: best_record.epoch, val_accuracy: best_record.val_accuracy },
        log,
        stages,
    })
}

type StageResult = (Vec<EpochRecord>, Option<(EpochRecord, ModelState)>, Vec<StageDigest>);

fn run_stages(
    model: &mut ClassifierModel,
    strategy: &StrategySpec,
    train_set: &ImageSet,
    val_set: &ImageSet,
    opts: &TrainOptions,
) -> Result<StageResult> {
    let device = model.device().clone();
    let mut records = Vec::with_capacity(strategy.total_epochs());
    let mut best: Option<(EpochRecord, ModelState)> = None;
    let mut digests = Vec::new();
    let mut epoch = 0;
    for (stage_idx, stage) in strategy.stages().iter().enumerate() {
        let stage_no = stage_idx + 1;
        model.set_trainability(stage.backbone_trainable, true)?;
        let backbone_before = model.parameter_digest(Group::Backbone)?;
        // A frozen backbone is a fixed function of the input, so its features
        // are computed once per stage.
        let cached = if stage.backbone_trainable {
            None
        } else {
            Some((features_of(model, train_set, &device)?, features_of(model, val_set, &device)?))
        };
        let mut opt = Adam::new(model.trainable_weights(), stage.initial_lr)?;
        for e in 1..=stage.epochs {
            epoch += 1;
            let lr = stage_lr(stage.initial_lr, opts.lr_decay, e);
            opt.set_learning_rate(lr);
            let (loss, train_acc) =
                train_epoch(model, &mut opt, train_set, cached.as_ref().map(|c| &c.0), opts, epoch, lr, &device)?;
            let val_acc = match &cached {
                Some((_, val_features)) => accuracy_from_features(model, val_features, val_set.labels())?,
                None => evaluate(model, val_set, EVAL_BATCH)?.accuracy()?,
            };
            let record = EpochRecord {
                epoch,
                stage: stage_no,
                lr,
                train_loss: loss,
                train_accuracy: train_acc,
                val_accuracy: val_acc,
            };
            log::info!(
                "epoch {epoch}/{} stage {stage_no} lr {lr:e} loss {loss:.4} train_acc {train_acc:.4} val_acc {val_acc:.4}",
                strategy.total_epochs()
            );
            let improved = best.as_ref().is_none_or(|(b, _)| val_acc > b.val_accuracy);
            if improved {
                best = Some((record.clone(), model.snapshot()?));
            }
            if let Some(sink) = &opts.checkpoints {
                let meta = sink.meta(model, epoch, val_acc);
                checkpoint::save(&sink.dir.join(LAST_CHECKPOINT), model, &meta)?;
                if improved {
                    checkpoint::save(&sink.dir.join(BEST_CHECKPOINT), model, &meta)?;
                }
            }
            records.push(record);
        }
        digests.push(StageDigest {
            stage: stage_no,
            backbone_trainable: stage.backbone_trainable,
            backbone_before,
            backbone_after: model.parameter_digest(Group::Backbone)?,
            head_after: model.parameter_digest(Group::Head)?,
        });
    }
    Ok((records, best, digests))
}

#[allow(clippy::too_many_arguments)]
fn train_epoch(
    model: &ClassifierModel,
    opt: &mut Adam,
    set: &ImageSet,
    cached: Option<&Tensor>,
    opts: &TrainOptions,
    epoch: usize,
    lr: f64,
    device: &Device,
) -> Result<(f64, f64)> {
    let order = epoch_order(set.len(), opts.seed, epoch);
    let mut pass = Pass::train(pass_seed(opts.seed, epoch));
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for (b, idx) in order.chunks(opts.batch_size).enumerate() {
        let labels = set.batch_labels(idx, device)?;
        let logits = match cached {
            Some(features) => {
                let rows = Tensor::from_vec(idx.iter().map(|&i| i as u32).collect(), idx.len(), device)?;
                model.classify(&features.index_select(&rows, 0)?, &mut pass)?
            }
            None => model.forward(&set.batch(idx, device)?, &mut pass)?,
        };
        let loss = candle_nn::loss::cross_entropy(&logits, &labels)?;
        let value = loss.to_scalar::<f32>()? as f64;
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: b + 1, lr });
        }
        opt.backward_step(&loss)?;
        loss_sum += value * idx.len() as f64;
        correct += count_correct(&logits, &labels)?;
    }
    Ok((loss_sum / set.len() as f64, correct as f64 / set.len() as f64))
}

fn count_correct(logits: &Tensor, labels: &Tensor) -> Result<usize> {
    let hits = logits.argmax(1)?.eq(labels)?.to_dtype(DType::U32)?.sum_all()?.to_scalar::<u32>()?;
    Ok(hits as usize)
}

/// Inference-mode backbone features of every sample, `(N, feature_dim)`.
fn features_of(model: &ClassifierModel, set: &ImageSet, device: &Device) -> Result<Tensor> {
    let idx: Vec<usize> = (0..set.len()).collect();
    let mut parts = Vec::new();
    for chunk in idx.chunks(EVAL_BATCH) {
        parts.push(model.features(&set.batch(chunk, device)?, &mut Pass::eval())?.detach());
    }
    Ok(Tensor::cat(&parts, 0)?)
}

fn accuracy_from_features(model: &ClassifierModel, features: &Tensor, labels: &[usize]) -> Result<f64> {
    let logits = model.classify(features, &mut Pass::eval())?;
    let truth = Tensor::from_vec(labels.iter().map(|&l| l as u32).collect(), labels.len(), features.device())?;
    Ok(count_correct(&logits, &truth)? as f64 / labels.len() as f64)
}

/// Inference-mode predictions for every sample of `set`, in set order.
pub fn predict(model: &ClassifierModel, set: &ImageSet, batch_size: usize) -> Result<Vec<usize>> {
    let idx: Vec<usize> = (0..set.len()).collect();
    let mut out = Vec::with_capacity(set.len());
    for chunk in idx.chunks(batch_size.max(1)) {
        out.extend(model.predict(&set.batch(chunk, model.device())?)?);
    }
    Ok(out)
}

pub fn evaluate(model: &ClassifierModel, set: &ImageSet, batch_size: usize) -> Result<ConfusionMatrix> {
    let pred = predict(model, set, batch_size)?;
    Ok(ConfusionMatrix::from_labels(set.labels(), &pred, model.num_classes())?)
}

/// Best and last checkpoint paths inside `dir`.
pub fn checkpoint_paths(dir: &Path) -> (PathBuf, PathBuf) {
    (dir.join(BEST_CHECKPOINT), dir.join(LAST_CHECKPOINT))
}
