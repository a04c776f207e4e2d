use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use phyto::core::format::percent;
use phyto::core::{MetricsReport, Split, SplitRatios};
use phyto::data::{build_manifest, describe, RecordsFile};
use phyto::runner::{self, ExperimentConfig, PathOverrides, SweepAxis, SweepSpec};
use phyto::synthetic::{self, SyntheticSpec};
use phyto::{report, Error, Result};

#[global_allocator]
static ALLOC: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(name = "phyto", version, about = "Train and evaluate CNN classifiers for phytoplankton microscopy images")]
struct Cli {
    /// Log level filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Overrides {
    /// Dataset root; overrides the config file and PHYTO_DATA_ROOT.
    #[arg(long)]
    data_root: Option<PathBuf>,
    /// Pretrained weight cache; overrides the config file and PHYTO_WEIGHTS_DIR.
    #[arg(long)]
    weights_dir: Option<PathBuf>,
    /// Output directory; overrides the config file.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Scan a class-per-directory corpus and write a stratified split file.
    Split {
        #[arg(long)]
        data_root: Option<PathBuf>,
        /// Train, validation and test fractions.
        #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.7, 0.15, 0.15])]
        ratios: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one experiment described by a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run one experiment per value of an axis.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// batch_size, strategy_lr or backbone.
        #[arg(long)]
        axis: String,
        /// Comma-separated values, e.g. `4,8,16` or `fine_tune:0.0001,combined:0.001/0.0001`.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Seeded runs per value.
        #[arg(long, default_value_t = 1)]
        repeats: usize,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Evaluate a checkpoint on one split of its run's split file.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Split file; defaults to the one written next to the checkpoint's run.
        #[arg(long)]
        records: Option<PathBuf>,
        /// Directory for metrics.json and confusion_matrix.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render tables and figures for every run under a directory.
    Report {
        #[arg(long)]
        runs: PathBuf,
        /// Defaults to `<runs>/report`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic colored-shapes corpus for smoke tests.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = synthetic::MAX_CLASSES)]
        classes: usize,
        #[arg(long, default_value_t = 50)]
        per_class: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print a commented config file.
    ConfigTemplate,
}

fn env_var(key: &str) -> Option<String> {
    std::env::var(key).ok()
}

fn load_config(path: &Path, o: &Overrides) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    let cli = PathOverrides {
        data_root: o.data_root.clone(),
        weights_dir: o.weights_dir.clone(),
        output_dir: o.output_dir.clone(),
    };
    cfg.apply_overrides(env_var, &cli);
    cfg.validate()?;
    Ok(cfg)
}

fn print_metrics(m: &MetricsReport) {
    println!("accuracy           {}%", percent(m.accuracy, 2));
    println!("precision (macro)  {}%", percent(m.macro_precision, 2));
    println!("recall (macro)     {}%", percent(m.macro_recall, 2));
    println!("precision (weight) {}%", percent(m.weighted_precision, 2));
    println!("recall (weight)    {}%", percent(m.weighted_recall, 2));
    println!("samples            {}", m.samples);
    let width = m.per_class.iter().map(|c| c.class.len()).max().unwrap_or(5).max(5);
    println!("\n{:width$}  {:>9}  {:>9}  {:>9}  {:>7}", "class", "accuracy", "precision", "recall", "support");
    for c in &m.per_class {
        let acc = c.accuracy.map(|a| percent(a, 2)).unwrap_or_else(|| report::MISSING.into());
        println!(
            "{:width$}  {:>9}  {:>9}  {:>9}  {:>7}",
            c.class,
            acc,
            percent(c.precision, 2),
            percent(c.recall, 2),
            c.support
        );
    }
    for c in &m.zero_division {
        println!("warning: `{c}` was never predicted; its precision is reported as 0");
    }
    for c in &m.missing_classes {
        println!("warning: `{c}` has no samples; its accuracy is undefined");
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Split { data_root, ratios, seed, out } => {
            let root = data_root
                .or_else(|| env_var(runner::ENV_DATA_ROOT).map(PathBuf::from))
                .ok_or_else(|| Error::Config(format!("pass --data-root or set {}", runner::ENV_DATA_ROOT)))?;
            let ratios = SplitRatios::new(ratios[0], ratios[1], ratios[2])?;
            let manifest = build_manifest(&root)?;
            let split = manifest.split(ratios, seed)?;
            print!("{}", describe(&manifest, Some(&split)));
            RecordsFile { manifest, split: Some(split) }.write(&out)?;
            println!("wrote {}", out.display());
        }
        Command::Train { config, overrides } => {
            let cfg = load_config(&config, &overrides)?;
            let r = runner::run_experiment(&cfg)?;
            println!("best epoch {} (validation accuracy {}%)", r.best.epoch, percent(r.best.val_accuracy, 2));
            println!("training time {} min", phyto::core::format::fixed(r.wall_clock_minutes, 2));
            print_metrics(&r.test);
            println!("\nresults in {}", cfg.output_dir.display());
        }
        Command::Sweep { config, axis, values, repeats, overrides } => {
            let cfg = load_config(&config, &overrides)?;
            let axis: SweepAxis = axis.parse()?;
            let values: Vec<&str> = values.iter().map(String::as_str).collect();
            let spec = SweepSpec::new(cfg, axis, &values, repeats)?;
            let (summary, _) = runner::run_sweep(&spec)?;
            print!("{}", report::render_table(&report::sweep_table(&summary))?.text);
            let failed = summary.entries.iter().filter(|e| e.error.is_some()).count();
            if failed > 0 {
                println!("{failed} of {} runs failed", summary.entries.len());
            }
        }
        Command::Evaluate { checkpoint, split, records, out } => {
            let split: Split =
                split.parse().map_err(|()| Error::Config(format!("unknown split `{split}` (train, val, test)")))?;
            let ev = runner::evaluate_checkpoint(&checkpoint, split, records.as_deref())?;
            println!("{} on the {split} split", checkpoint.display());
            print_metrics(&ev.metrics);
            if let Some(dir) = out {
                let labels = phyto::backbones::checkpoint::read_meta(&checkpoint)?.labels;
                report::write_confusion_csv(&dir.join(runner::files::CONFUSION), &ev.confusion, &labels)?;
                let json = serde_json::to_string_pretty(&ev)? + "\n";
                phyto::data::write_atomic(&dir.join(runner::files::METRICS), json.as_bytes())?;
            }
        }
        Command::Report { runs, out } => {
            let out = out.unwrap_or_else(|| runs.join("report"));
            let s = report::report_runs(&runs, &out)?;
            println!("{} completed, {} failed or incomplete runs", s.completed, s.failed);
            for f in &s.files {
                println!("wrote {}", f.display());
            }
        }
        Command::Synth { out, classes, per_class, size, seed } => {
            let spec = SyntheticSpec { classes, per_class, size, seed };
            let labels = synthetic::write_tree(&spec, &out)?;
            println!("wrote {} classes x {per_class} images to {}", labels.len(), out.display());
        }
        Command::ConfigTemplate => print!("{}", ExperimentConfig::template()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).format_timestamp_secs().init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
