//! Declarative experiments: one config file describes one training run;
//! sweeps vary a single axis of a base config.

use std::cell::Cell;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use candle_core::Device;
use phyto_core::digest::sha256_hex;
use phyto_core::{
    make_strategy, CheckpointRef, ConfusionMatrix, LabelSpace, MetricsReport, Split, SplitRatios, StrategyKind,
    StrategySpec, TrainingLog,
};
use serde::{Deserialize, Serialize};

use crate::backbones::checkpoint;
use crate::backbones::{build_classifier, BackboneName, BackboneSpec, BuildOptions};
use crate::data::{build_manifest, write_atomic, AccessLog, ImageSet, Normalization, RecordsFile, IMAGE_SIZE};
use crate::report;
use crate::train::{self, CheckpointSink, StageDigest, TrainOptions, EVAL_BATCH};
use crate::{Error, Result};

pub const ENV_DATA_ROOT: &str = "PHYTO_DATA_ROOT";
pub const ENV_WEIGHTS_DIR: &str = "PHYTO_WEIGHTS_DIR";

/// Smallest input side every registered backbone accepts.
pub const MIN_IMAGE_SIZE: usize = 32;

fn default_epochs() -> usize {
    100
}

fn default_true() -> bool {
    true
}

fn default_image_size() -> usize {
    IMAGE_SIZE
}

fn default_mean() -> [f32; 3] {
    Normalization::default().mean
}

fn default_std() -> [f32; 3] {
    Normalization::default().std
}

/// Everything that determines one run. Serialized as a flat TOML table;
/// unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data_root: PathBuf,
    #[serde(default)]
    pub split_ratios: SplitRatios,
    #[serde(default)]
    pub split_seed: u64,
    pub backbone: BackboneName,
    #[serde(default = "default_true")]
    pub pretrained: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights_dir: Option<PathBuf>,
    pub strategy: StrategyKind,
    #[serde(default = "default_epochs")]
    pub total_epochs: usize,
    pub learning_rates: Vec<f64>,
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default = "default_image_size")]
    pub image_size: usize,
    #[serde(default = "default_mean")]
    pub norm_mean: [f32; 3],
    #[serde(default = "default_std")]
    pub norm_std: [f32; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr_decay: Option<f64>,
}

/// Path overrides given on the command line; they win over the environment.
#[derive(Debug, Clone, Default)]
pub struct PathOverrides {
    pub data_root: Option<PathBuf>,
    pub weights_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_epochs == 0 {
            return Err(Error::Config("total_epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.image_size < MIN_IMAGE_SIZE {
            return Err(Error::Config(format!("image_size must be at least {MIN_IMAGE_SIZE}")));
        }
        if let Some(g) = self.lr_decay {
            if !(g > 0.0 && g <= 1.0) {
                return Err(Error::Config(format!("lr_decay must lie in (0, 1], got {g}")));
            }
        }
        self.normalization().validate()?;
        self.strategy_spec()?;
        Ok(())
    }

    pub fn strategy_spec(&self) -> Result<StrategySpec> {
        make_strategy(self.strategy, self.total_epochs, &self.learning_rates)
            .map_err(|e| Error::Config(format!("strategy: {e}")))
    }

    pub fn normalization(&self) -> Normalization {
        Normalization { mean: self.norm_mean, std: self.norm_std }
    }

    pub fn backbone_spec(&self) -> BackboneSpec {
        BackboneSpec { name: self.backbone, pretrained: self.pretrained }
    }

    /// SHA-256 of the canonical JSON form; any field change alters it.
    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(&serde_json::to_vec(self)?))
    }

    /// Applies environment then command-line path overrides, in that order.
    pub fn apply_overrides(&mut self, env: impl Fn(&str) -> Option<String>, cli: &PathOverrides) {
        if let Some(v) = env(ENV_DATA_ROOT).filter(|v| !v.is_empty()) {
            self.data_root = v.into();
        }
        if let Some(v) = env(ENV_WEIGHTS_DIR).filter(|v| !v.is_empty()) {
            self.weights_dir = Some(v.into());
        }
        if let Some(v) = &cli.data_root {
            self.data_root = v.clone();
        }
        if let Some(v) = &cli.weights_dir {
            self.weights_dir = Some(v.clone());
        }
        if let Some(v) = &cli.output_dir {
            self.output_dir = v.clone();
        }
    }

    /// A commented template with the default values filled in.
    pub fn template() -> &'static str {
        include_str!("../configs/template.toml")
    }
}

/// Where the run executed; timings are only comparable on equal hardware.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hardware {
    pub device: String,
    pub accelerator: bool,
    pub cpu_threads: usize,
    pub os: String,
    pub arch: String,
}

impl Hardware {
    pub fn detect(device: &Device) -> Self {
        Self {
            device: match device {
                Device::Cpu => "cpu".into(),
                other => format!("{other:?}").to_lowercase(),
            },
            accelerator: !device.is_cpu(),
            cpu_threads: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
        }
    }
}

/// Compute device: the first CUDA device when built with `cuda`, else CPU.
pub fn default_device() -> Result<Device> {
    #[cfg(feature = "cuda")]
    {
        Ok(Device::cuda_if_available(0)?)
    }
    #[cfg(not(feature = "cuda"))]
    {
        Ok(Device::Cpu)
    }
}

/// Counts proving the test split stayed untouched until final evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataAudit {
    pub train_images: usize,
    pub val_images: usize,
    pub test_images: usize,
    /// Test decodes plus test batch reads observed before evaluation began.
    pub test_reads_before_evaluation: usize,
}

pub const RUN_RESULT_FORMAT: &str = "phyto-run/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub format: String,
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub labels: LabelSpace,
    pub log: TrainingLog,
    pub best: CheckpointRef,
    pub test: MetricsReport,
    pub confusion: ConfusionMatrix,
    pub wall_clock_minutes: f64,
    pub hardware: Hardware,
    pub stages: Vec<StageDigest>,
    pub audit: DataAudit,
}

impl RunResult {
    /// Reads a persisted result and checks its stored hash against the
    /// stored config.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let r: Self = serde_json::from_str(&text)?;
        if r.format != RUN_RESULT_FORMAT {
            return Err(Error::Report(format!("{}: unsupported format `{}`", path.display(), r.format)));
        }
        let actual = r.config.hash()?;
        if actual != r.config_hash {
            return Err(Error::Report(format!(
                "{}: config hash mismatch (stored {}, computed {actual})",
                path.display(),
                r.config_hash
            )));
        }
        Ok(r)
    }

    pub fn best_val_accuracy(&self) -> f64 {
        self.best.val_accuracy
    }
}

/// Files written into a run's output directory.
pub mod files {
    pub const CONFIG: &str = "config.toml";
    pub const STATUS: &str = "status.json";
    pub const SPLIT: &str = "split.jsonl";
    pub const TRAINING_LOG: &str = "training_log.jsonl";
    pub const CHECKPOINTS: &str = "checkpoints";
    pub const CONFUSION: &str = "confusion_matrix.csv";
    pub const METRICS: &str = "metrics.json";
    pub const RESULT: &str = "run_result.json";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStage {
    Config,
    Manifest,
    Split,
    Model,
    Data,
    Train,
    Evaluate,
    Persist,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunState {
    Running,
    Failed,
    Completed,
}

/// Contents of `status.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStatus {
    pub state: RunState,
    pub stage: RunStage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunStatus {
    pub fn read(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(files::STATUS);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

struct StatusFile {
    path: PathBuf,
    stage: Cell<RunStage>,
}

impl StatusFile {
    fn write(&self, state: RunState, error: Option<String>) -> Result<()> {
        let status = RunStatus { state, stage: self.stage.get(), error };
        write_atomic(&self.path, serde_json::to_string_pretty(&status)?.as_bytes())
    }

    fn enter(&self, stage: RunStage) -> Result<()> {
        self.stage.set(stage);
        log::info!("stage {}", serde_json::to_string(&stage)?.trim_matches('"'));
        self.write(RunState::Running, None)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn write_training_log(path: &Path, log: &TrainingLog) -> Result<()> {
    let mut out = String::new();
    for r in &log.epochs {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// Trains, selects the best epoch on validation data and evaluates it once on
/// the test split. Progress and failures are recorded in `status.json` under
/// `config.output_dir`, naming the stage that failed.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunResult> {
    let out = &config.output_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let status = StatusFile { path: out.join(files::STATUS), stage: Cell::new(RunStage::Config) };
    match execute(config, &status) {
        Ok(result) => {
            status.write(RunState::Completed, None)?;
            Ok(result)
        }
        Err(e) => {
            log::error!("run failed during {:?}: {e}", status.stage.get());
            status.write(RunState::Failed, Some(e.to_string()))?;
            Err(e)
        }
    }
}

fn execute(config: &ExperimentConfig, status: &StatusFile) -> Result<RunResult> {
    let out = &config.output_dir;
    status.enter(RunStage::Config)?;
    config.validate()?;
    let strategy = config.strategy_spec()?;
    let config_hash = config.hash()?;
    write_atomic(&out.join(files::CONFIG), config.to_toml()?.as_bytes())?;
    let device = default_device()?;

    status.enter(RunStage::Manifest)?;
    let manifest = build_manifest(&config.data_root)?;

    status.enter(RunStage::Split)?;
    let split = manifest.split(config.split_ratios, config.split_seed)?;
    RecordsFile { manifest: manifest.clone(), split: Some(split.clone()) }.write(&out.join(files::SPLIT))?;
    let labels = manifest.label_space.clone();

    status.enter(RunStage::Model)?;
    let opts = BuildOptions { device: device.clone(), init_seed: config.seed, weights_dir: config.weights_dir.clone() };
    let mut model = build_classifier(config.backbone_spec(), labels.len(), config.seed, &opts)?;

    status.enter(RunStage::Data)?;
    let access = Arc::new(AccessLog::default());
    let norm = config.normalization();
    let load =
        |which: Split| ImageSet::load(&manifest, split.ids(which), which, config.image_size, norm, access.clone());
    let train_set = load(Split::Train)?;
    let val_set = load(Split::Val)?;

    status.enter(RunStage::Train)?;
    let sink = CheckpointSink {
        dir: out.join(files::CHECKPOINTS),
        labels: labels.clone(),
        config_hash: config_hash.clone(),
        image_size: config.image_size,
        normalization: norm,
    };
    let train_opts = TrainOptions {
        batch_size: config.batch_size,
        seed: config.seed,
        lr_decay: config.lr_decay,
        checkpoints: Some(sink),
    };
    let outcome = train::train(&mut model, &strategy, &train_set, &val_set, &train_opts)?;
    write_training_log(&out.join(files::TRAINING_LOG), &outcome.log)?;

    status.enter(RunStage::Evaluate)?;
    let test_reads_before_evaluation = access.touched(Split::Test);
    let (best_model, meta) = checkpoint::load(Path::new(&outcome.best.path), &device)?;
    if meta.epoch != outcome.best.epoch || meta.config_hash != config_hash {
        return Err(Error::Checkpoint {
            path: outcome.best.path.clone().into(),
            message: "best checkpoint does not match the selected epoch".into(),
        });
    }
    let test_set = load(Split::Test)?;
    let confusion = if test_set.is_empty() {
        return Err(Error::Dataset("test split is empty".into()));
    } else {
        train::evaluate(&best_model, &test_set, EVAL_BATCH)?
    };
    let test = MetricsReport::from_matrix(&confusion, &labels)?;
    log::info!("test accuracy {:.4} on {} images", test.accuracy, test.samples);

    status.enter(RunStage::Persist)?;
    report::write_confusion_csv(&out.join(files::CONFUSION), &confusion, &labels)?;
    write_json(&out.join(files::METRICS), &test)?;
    let result = RunResult {
        format: RUN_RESULT_FORMAT.into(),
        config: config.clone(),
        config_hash,
        labels,
        wall_clock_minutes: outcome.log.wall_clock_minutes,
        log: outcome.log,
        best: outcome.best,
        test,
        confusion,
        hardware: Hardware::detect(&device),
        stages: outcome.stages,
        audit: DataAudit {
            train_images: train_set.len(),
            val_images: val_set.len(),
            test_images: test_set.len(),
            test_reads_before_evaluation,
        },
    };
    write_json(&out.join(files::RESULT), &result)?;
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    BatchSize,
    StrategyLr,
    Backbone,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::BatchSize => "batch_size",
            SweepAxis::StrategyLr => "strategy_lr",
            SweepAxis::Backbone => "backbone",
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "batch_size" => Ok(SweepAxis::BatchSize),
            "strategy_lr" => Ok(SweepAxis::StrategyLr),
            "backbone" => Ok(SweepAxis::Backbone),
            other => Err(Error::Config(format!("unknown sweep axis `{other}` (batch_size, strategy_lr, backbone)"))),
        }
    }
}

/// One point on a sweep axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "axis", rename_all = "snake_case")]
pub enum AxisValue {
    BatchSize { batch_size: usize },
    StrategyLr { strategy: StrategyKind, learning_rates: Vec<f64> },
    Backbone { backbone: BackboneName },
}

impl AxisValue {
    /// Parses `8`, `fine_tune:1e-4`, `combined:1e-3/1e-4` or `resnet50`.
    pub fn parse(axis: SweepAxis, text: &str) -> Result<Self> {
        let text = text.trim();
        let bad = |why: String| Error::Config(format!("invalid {axis} value `{text}`: {why}"));
        match axis {
            SweepAxis::BatchSize => match text.parse::<usize>() {
                Ok(b) if b >= 1 => Ok(AxisValue::BatchSize { batch_size: b }),
                _ => Err(bad("expected a positive integer".into())),
            },
            SweepAxis::StrategyLr => {
                let (kind, lrs) =
                    text.split_once(':').ok_or_else(|| bad("expected `<strategy>:<lr>[/<lr>]`".into()))?;
                let strategy: StrategyKind = kind.parse().map_err(|e: phyto_core::Error| bad(e.to_string()))?;
                let learning_rates = lrs
                    .split('/')
                    .map(|v| v.trim().parse::<f64>().map_err(|e| bad(e.to_string())))
                    .collect::<Result<Vec<_>>>()?;
                Ok(AxisValue::StrategyLr { strategy, learning_rates })
            }
            SweepAxis::Backbone => Ok(AxisValue::Backbone { backbone: text.parse()? }),
        }
    }

    pub fn axis(&self) -> SweepAxis {
        match self {
            AxisValue::BatchSize { .. } => SweepAxis::BatchSize,
            AxisValue::StrategyLr { .. } => SweepAxis::StrategyLr,
            AxisValue::Backbone { .. } => SweepAxis::Backbone,
        }
    }

    pub fn apply(&self, config: &mut ExperimentConfig) {
        match self {
            AxisValue::BatchSize { batch_size } => config.batch_size = *batch_size,
            AxisValue::StrategyLr { strategy, learning_rates } => {
                config.strategy = *strategy;
                config.learning_rates = learning_rates.clone();
            }
            AxisValue::Backbone { backbone } => config.backbone = *backbone,
        }
    }

    /// Short label used in tables and directory names.
    pub fn label(&self) -> String {
        match self {
            AxisValue::BatchSize { batch_size } => batch_size.to_string(),
            AxisValue::StrategyLr { strategy, learning_rates } => {
                let lrs: Vec<String> = learning_rates.iter().map(|l| format!("{l}")).collect();
                format!("{strategy}:{}", lrs.join("/"))
            }
            AxisValue::Backbone { backbone } => backbone.to_string(),
        }
    }

    fn dir_name(&self) -> String {
        let label: String =
            self.label().chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '_' }).collect();
        format!("{}-{label}", self.axis())
    }

    fn sort_key(&self) -> (usize, usize) {
        match self {
            AxisValue::BatchSize { batch_size } => (*batch_size, 0),
            AxisValue::Backbone { backbone } => (BackboneName::ALL.iter().position(|b| b == backbone).unwrap_or(0), 0),
            AxisValue::StrategyLr { .. } => (0, 0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub base: ExperimentConfig,
    pub axis: SweepAxis,
    pub values: Vec<AxisValue>,
    /// Runs per value; repeat `r` uses run seed `base.seed + r`.
    pub repeats: usize,
}

impl SweepSpec {
    pub fn new(base: ExperimentConfig, axis: SweepAxis, values: &[&str], repeats: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Config("a sweep needs at least one value".into()));
        }
        if repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        let values = values.iter().map(|v| AxisValue::parse(axis, v)).collect::<Result<Vec<_>>>()?;
        let spec = Self { base, axis, values, repeats };
        for (_, cfg) in spec.configs() {
            cfg.validate()?;
        }
        Ok(spec)
    }

    /// Values in table order: numeric for batch sizes, registry order for
    /// backbones, as given for strategy/learning-rate rows.
    pub fn ordered_values(&self) -> Vec<AxisValue> {
        let mut v = self.values.clone();
        v.sort_by_key(|a| a.sort_key());
        v
    }

    /// `(value, repeat)` with the derived config of every run.
    pub fn configs(&self) -> Vec<((AxisValue, usize), ExperimentConfig)> {
        let mut out = Vec::new();
        for value in self.ordered_values() {
            for r in 0..self.repeats {
                let mut cfg = self.base.clone();
                value.apply(&mut cfg);
                cfg.seed = self.base.seed.wrapping_add(r as u64);
                let dir = if self.repeats == 1 { value.dir_name() } else { format!("{}-rep{r}", value.dir_name()) };
                cfg.output_dir = self.base.output_dir.join(dir);
                out.push(((value.clone(), r), cfg));
            }
        }
        out
    }
}

/// Outcome of one sweep run; failures keep their message instead of a result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub value: AxisValue,
    pub label: String,
    pub repeat: usize,
    pub run_dir: PathBuf,
    pub error: Option<String>,
    pub best_val_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub wall_clock_minutes: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub axis: SweepAxis,
    pub base_config_hash: String,
    pub entries: Vec<SweepEntry>,
}

pub const SWEEP_SUMMARY: &str = "sweep.json";

/// Runs every configuration of `spec` in order. A failing run is recorded and
/// the sweep continues. Writes `sweep.json` plus comparison tables into
/// `spec.base.output_dir`.
pub fn run_sweep(spec: &SweepSpec) -> Result<(SweepSummary, Vec<RunResult>)> {
    let root = &spec.base.output_dir;
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut entries = Vec::new();
    let mut results = Vec::new();
    for ((value, repeat), cfg) in spec.configs() {
        log::info!("sweep {} = {} (repeat {repeat})", spec.axis, value.label());
        let entry = match run_experiment(&cfg) {
            Ok(r) => {
                let e = SweepEntry {
                    label: value.label(),
                    value,
                    repeat,
                    run_dir: cfg.output_dir.clone(),
                    error: None,
                    best_val_accuracy: Some(r.best.val_accuracy),
                    test_accuracy: Some(r.test.accuracy),
                    wall_clock_minutes: Some(r.wall_clock_minutes),
                };
                results.push(r);
                e
            }
            Err(err) => SweepEntry {
                label: value.label(),
                value,
                repeat,
                run_dir: cfg.output_dir.clone(),
                error: Some(err.to_string()),
                best_val_accuracy: None,
                test_accuracy: None,
                wall_clock_minutes: None,
            },
        };
        entries.push(entry);
    }
    let summary = SweepSummary { axis: spec.axis, base_config_hash: spec.base.hash()?, entries };
    write_json(&root.join(SWEEP_SUMMARY), &summary)?;
    let table = report::sweep_table(&summary);
    report::write_table(&table, &root.join("sweep_table.txt"), &root.join("sweep_table.csv"))?;
    Ok((summary, results))
}

/// Metrics of a stored checkpoint on one split of a records file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub checkpoint: PathBuf,
    pub split: Split,
    pub metrics: MetricsReport,
    pub confusion: ConfusionMatrix,
}

/// Split file next to a run's checkpoint directory.
pub fn records_for_checkpoint(checkpoint: &Path) -> Option<PathBuf> {
    let run_dir = checkpoint.parent()?.parent()?;
    let p = run_dir.join(files::SPLIT);
    p.exists().then_some(p)
}

pub fn evaluate_checkpoint(checkpoint_path: &Path, split: Split, records: Option<&Path>) -> Result<Evaluation> {
    let records_path = match records {
        Some(p) => p.to_path_buf(),
        None => records_for_checkpoint(checkpoint_path).ok_or_else(|| {
            Error::Config(format!("no {} found next to {}; pass --records", files::SPLIT, checkpoint_path.display()))
        })?,
    };
    let rec = RecordsFile::read(&records_path)?;
    let assignment =
        rec.split.as_ref().ok_or_else(|| Error::Dataset(format!("{} has no split", records_path.display())))?;
    let device = default_device()?;
    let (model, meta) = checkpoint::load(checkpoint_path, &device)?;
    if meta.labels != rec.manifest.label_space {
        return Err(Error::Checkpoint {
            path: checkpoint_path.to_path_buf(),
            message: "label space differs from the records file".into(),
        });
    }
    let set = ImageSet::load(
        &rec.manifest,
        assignment.ids(split),
        split,
        meta.image_size,
        meta.normalization,
        Arc::default(),
    )?;
    if set.is_empty() {
        return Err(Error::Dataset(format!("{split} split is empty")));
    }
    let confusion = train::evaluate(&model, &set, EVAL_BATCH)?;
    let metrics = MetricsReport::from_matrix(&confusion, &meta.labels)?;
    Ok(Evaluation { checkpoint: checkpoint_path.to_path_buf(), split, metrics, confusion })
}
