use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use satl_core::data::{generate_synthetic, load_directory, read_pack, write_pack, DatasetIndex, Manifest, StylePreset, SynthConfig};
use satl_core::io::{self, Access};
use satl_core::metrics::{roc_svg, write_metrics_csv, write_roc_csv, MetricsReport, RocCurve};
use satl_core::models::{compose_adapted, Checkpoint, ClassifierModel, VaeModel};
use satl_core::pipeline::{adapt_target, evaluate, run_direction, train_source, DirectionConfig, STRATEGY_WITH, STRATEGY_WITHOUT};
use satl_core::verify::{check_scope, Scope};
use satl_core::Error;
use satl_tensor::gradcheck::GradCheckOptions;
use satl_tensor::Prng;

use crate::config::{RunConfig, SEED_ENV};
use crate::exit::VerificationFailed;

/// When set, every file the command reads, writes or lists is appended to
/// this path as `<access>\t<path>` lines.
pub const TRACE_ENV: &str = "SATL_FS_TRACE";

#[derive(Debug, Parser)]
#[command(name = "satl", version, about = "Source-free adaptation of an image classifier by variational reconstruction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Source,
    #[value(name = "shiftA")]
    ShiftA,
    #[value(name = "shiftB")]
    ShiftB,
    Skewed,
}

impl From<Preset> for StylePreset {
    fn from(p: Preset) -> StylePreset {
        match p {
            Preset::Source => StylePreset::Source,
            Preset::ShiftA => StylePreset::ShiftA,
            Preset::ShiftB => StylePreset::ShiftB,
            Preset::Skewed => StylePreset::Skewed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum CheckScope {
    Ops,
    Losses,
    Model,
    All,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic fundus-like dataset pack.
    GenData {
        /// Output pack file.
        #[arg(long)]
        out: PathBuf,
        /// Number of images.
        #[arg(long, default_value_t = 600)]
        n: usize,
        /// Fraction of positives [default: 0.1 for skewed, else 0.5].
        #[arg(long)]
        pos_ratio: Option<f64>,
        /// Simulated acquisition site.
        #[arg(long, value_enum, default_value_t = Preset::Source)]
        style_preset: Preset,
        /// Image height and width in pixels.
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// Cup-to-disc ratio above which an image is positive.
        #[arg(long, default_value_t = 0.5)]
        cdr_threshold: f64,
        /// Random seed [default: $SATL_SEED, else 0].
        #[arg(long)]
        seed: Option<u64>,
        /// Also write a JSON manifest of ids, labels and ratios.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Train a source classifier on labeled data, keeping the best validation epoch.
    TrainSource {
        /// Labeled pack, or a directory of PPM images with labels.csv.
        #[arg(long)]
        data: PathBuf,
        /// Run configuration (TOML) [default: built-in published settings].
        #[arg(long)]
        config: Option<PathBuf>,
        /// Where to write the classifier checkpoint.
        #[arg(long)]
        out_checkpoint: PathBuf,
        /// Per-epoch training log (CSV).
        #[arg(long)]
        log: Option<PathBuf>,
        /// Overrides the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Fill the log's wall-time column, which makes logs differ between runs.
        #[arg(long)]
        log_seconds: bool,
    },
    /// Adapt a source classifier's encoder to unlabeled target images.
    Adapt {
        /// Classifier checkpoint from train-source.
        #[arg(long)]
        source_checkpoint: PathBuf,
        /// Target images (pack or directory); labels, if any, are ignored.
        #[arg(long)]
        target_data: PathBuf,
        /// Run configuration (TOML) [default: built-in published settings].
        #[arg(long)]
        config: Option<PathBuf>,
        /// Where to write the adapted VAE checkpoint.
        #[arg(long)]
        out_checkpoint: PathBuf,
        /// Per-epoch loss log (CSV).
        #[arg(long)]
        log: Option<PathBuf>,
        /// Overrides the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Fill the log's wall-time column.
        #[arg(long)]
        log_seconds: bool,
    },
    /// Evaluate a classifier, or a classifier recomposed with an adapted encoder.
    Eval {
        /// Classifier checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Adapted VAE checkpoint whose encoder replaces the classifier's.
        #[arg(long)]
        adapted_encoder: Option<PathBuf>,
        /// Labeled evaluation data (pack or directory).
        #[arg(long)]
        data: PathBuf,
        /// Run configuration, for the decision threshold.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Metrics CSV output.
        #[arg(long)]
        out_metrics: PathBuf,
        /// ROC CSV output.
        #[arg(long)]
        out_roc: PathBuf,
        /// Optional ROC plot (SVG).
        #[arg(long)]
        svg: Option<PathBuf>,
        /// Direction label written to the metrics CSV.
        #[arg(long, default_value = "eval")]
        direction: String,
    },
    /// Train on source data, adapt to target data and compare both models on the target.
    RunDirection {
        /// Labeled source data (pack or directory).
        #[arg(long)]
        source_data: PathBuf,
        /// Labeled target data; labels are used for evaluation only.
        #[arg(long)]
        target_data: PathBuf,
        /// Run configuration (TOML) [default: built-in published settings].
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out_dir: PathBuf,
        /// Direction label [default: <source stem>-><target stem>].
        #[arg(long)]
        name: Option<String>,
        /// Overrides the configured seeds.
        #[arg(long)]
        seed: Option<u64>,
        /// Fill the logs' wall-time column.
        #[arg(long)]
        log_seconds: bool,
    },
    /// Compare analytic gradients with central finite differences in 64-bit.
    Gradcheck {
        /// Ops, losses, whole models, or all three.
        #[arg(long, value_enum, default_value_t = CheckScope::All)]
        scope: CheckScope,
        /// First seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of consecutive seeds.
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        /// Maximum relative error.
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        /// Scale the backward pass of the named op, to exercise the checker.
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
}

pub fn run(cli: Cli) -> Result<()> {
    let trace = std::env::var_os(TRACE_ENV).map(PathBuf::from);
    if trace.is_some() {
        io::start_trace();
    }
    let result = dispatch(cli.command);
    if let Some(path) = trace {
        let lines: String = io::take_trace()
            .into_iter()
            .map(|(access, p)| {
                let kind = match access {
                    Access::Read => "read",
                    Access::Write => "write",
                    Access::List => "list",
                };
                format!("{kind}\t{}\n", p.display())
            })
            .collect();
        std::fs::write(&path, lines).with_context(|| format!("writing access trace {}", path.display()))?;
    }
    result
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::GenData {
            out,
            n,
            pos_ratio,
            style_preset,
            size,
            cdr_threshold,
            seed,
            manifest,
        } => {
            let preset = StylePreset::from(style_preset);
            let cfg = SynthConfig {
                n,
                pos_ratio: pos_ratio.unwrap_or(preset.default_pos_ratio()),
                style: preset.style(),
                image_size: (size, size),
                cdr_threshold,
                domain_tag: preset.name().into(),
            };
            let ds = generate_synthetic(&cfg, &Prng::new(env_seed(seed)?))?;
            write_pack(&out, &ds)?;
            if let Some(path) = manifest {
                let json = serde_json::to_string_pretty(&Manifest::of(&ds)).expect("manifest serializes");
                io::write(&path, json.as_bytes())?;
            }
            let (neg, pos) = ds.class_counts().expect("synthetic data is labeled");
            println!("wrote {} ({} images: {pos} positive, {neg} negative)", out.display(), ds.len());
        }
        Command::TrainSource {
            data,
            config,
            out_checkpoint,
            log,
            seed,
            log_seconds,
        } => {
            let cfg = load_config(config.as_deref(), seed)?;
            let ds = load_data(&data, (cfg.image_size, cfg.image_size))?;
            let run = train_source(&ds, &cfg.encoder, &cfg.source)?;
            run.model.to_checkpoint(run.meta).save(&out_checkpoint)?;
            if let Some(path) = log {
                run.log.write(&path, log_seconds)?;
            }
            println!(
                "best validation accuracy {:.4} at epoch {}; wrote {}",
                run.meta.best_val_accuracy,
                run.meta.epoch,
                out_checkpoint.display()
            );
        }
        Command::Adapt {
            source_checkpoint,
            target_data,
            config,
            out_checkpoint,
            log,
            seed,
            log_seconds,
        } => {
            let cfg = load_config(config.as_deref(), seed)?;
            let source = load_classifier(&source_checkpoint, &cfg, config.is_some())?;
            let target = load_data(&target_data, input_size(&source))?.without_labels();
            let run = adapt_target(&source, &target, &cfg.adapt)?;
            run.vae.to_checkpoint(run.meta).save(&out_checkpoint)?;
            if let Some(path) = log {
                run.log.write(&path, log_seconds)?;
            }
            if let (Some(first), Some(last)) = (run.log.records.first(), run.log.records.last()) {
                println!("loss {:.5} -> {:.5}", first.total_loss, last.total_loss);
            }
            println!("wrote {}", out_checkpoint.display());
        }
        Command::Eval {
            checkpoint,
            adapted_encoder,
            data,
            config,
            out_metrics,
            out_roc,
            svg,
            direction,
        } => {
            let cfg = load_config(config.as_deref(), None)?;
            let source = load_classifier(&checkpoint, &cfg, config.is_some())?;
            let (model, strategy) = match adapted_encoder {
                Some(path) => {
                    let vae = VaeModel::from_checkpoint(&Checkpoint::load(&path)?, Some(source.config()))?;
                    (compose_adapted(&source, &vae)?, STRATEGY_WITH)
                }
                None => (source, STRATEGY_WITHOUT),
            };
            let ds = load_data(&data, input_size(&model))?;
            let (report, roc) = evaluate(&model, &ds, &direction, strategy, cfg.threshold)?;
            write_metrics_csv(&out_metrics, std::slice::from_ref(&report))?;
            write_roc_csv(&out_roc, &roc)?;
            if let Some(path) = svg {
                let plot = roc_svg(&direction, &[(strategy, &roc, report.auc)]);
                io::write(&path, plot.as_bytes())?;
            }
            println!("{strategy}: {} / AUC {:.3}", report.summary(), report.auc);
        }
        Command::RunDirection {
            source_data,
            target_data,
            config,
            out_dir,
            name,
            seed,
            log_seconds,
        } => {
            let cfg = load_config(config.as_deref(), seed)?;
            let source_ds = load_data(&source_data, (cfg.image_size, cfg.image_size))?;
            let target_ds = load_data(&target_data, (cfg.image_size, cfg.image_size))?;
            let name = name.unwrap_or_else(|| format!("{}->{}", stem(&source_data), stem(&target_data)));
            let direction = DirectionConfig {
                name: name.clone(),
                encoder: cfg.encoder.clone(),
                source: cfg.source.clone(),
                adapt: cfg.adapt.clone(),
                threshold: cfg.threshold,
            };
            let out = run_direction(&source_ds, &target_ds, &direction)?;
            io::create_dir_all(&out_dir)?;
            let c = &out.comparison;
            out.source.model.to_checkpoint(out.source.meta).save(&out_dir.join("source.ckpt"))?;
            c.adapt.vae.to_checkpoint(c.adapt.meta).save(&out_dir.join("adapted.ckpt"))?;
            out.source.log.write(&out_dir.join("train.csv"), log_seconds)?;
            c.adapt.log.write(&out_dir.join("adapt.csv"), log_seconds)?;
            write_direction_reports(&out_dir, &name, &c.without, &c.with)?;
            println!("{name}");
            for (report, _) in [&c.without, &c.with] {
                println!("  {:<9} {} / AUC {:.3}", report.strategy, report.summary(), report.auc);
            }
            if out.head_digests.0 != out.head_digests.1 {
                return Err(VerificationFailed("classifier head changed during adaptation".into()).into());
            }
        }
        Command::Gradcheck {
            scope,
            seed,
            seeds,
            tol,
            inject_fault,
        } => gradcheck(scope, seed, seeds, tol, inject_fault.as_deref())?,
    }
    Ok(())
}

fn write_direction_reports(
    dir: &Path,
    name: &str,
    without: &(MetricsReport, RocCurve),
    with: &(MetricsReport, RocCurve),
) -> Result<()> {
    write_metrics_csv(&dir.join("metrics.csv"), &[without.0.clone(), with.0.clone()])?;
    write_roc_csv(&dir.join("roc_wo.csv"), &without.1)?;
    write_roc_csv(&dir.join("roc_w.csv"), &with.1)?;
    let plot = roc_svg(
        name,
        &[
            (STRATEGY_WITHOUT, &without.1, without.0.auc),
            (STRATEGY_WITH, &with.1, with.0.auc),
        ],
    );
    io::write(&dir.join("roc.svg"), plot.as_bytes())?;
    Ok(())
}

fn gradcheck(scope: CheckScope, seed: u64, seeds: u64, tol: f64, fault: Option<&str>) -> Result<()> {
    let opts = GradCheckOptions {
        tolerance: tol,
        ..GradCheckOptions::default()
    };
    let scopes: &[Scope] = match scope {
        CheckScope::Ops => &[Scope::Ops],
        CheckScope::Losses => &[Scope::Losses],
        CheckScope::Model => &[Scope::Model],
        CheckScope::All => &[Scope::Ops, Scope::Losses, Scope::Model],
    };
    let mut failed = Vec::new();
    for &s in scopes {
        // name -> (worst relative error, failing seeds)
        let mut summary: BTreeMap<String, (f64, Vec<u64>)> = BTreeMap::new();
        let mut order = Vec::new();
        for k in seed..seed + seeds {
            for r in check_scope(s, k, &opts, fault)? {
                if !summary.contains_key(&r.name) {
                    order.push(r.name.clone());
                }
                let e = summary.entry(r.name.clone()).or_insert((0.0, Vec::new()));
                e.0 = e.0.max(r.max_relative_error);
                if !r.passed {
                    e.1.push(k);
                }
            }
        }
        for name in order {
            let (worst, bad) = &summary[&name];
            let status = if bad.is_empty() { "PASS" } else { "FAIL" };
            println!("{status} {name:<26} seeds={seeds} max_rel_err={worst:.3e}");
            if !bad.is_empty() {
                failed.push(format!("{name} (seeds {bad:?})"));
            }
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(VerificationFailed(failed.join(", ")).into())
    }
}

fn env_seed(flag: Option<u64>) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => Ok(v
            .trim()
            .parse()
            .map_err(|_| Error::config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?),
        Err(_) => Ok(0),
    }
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load_or_default(path)?;
    cfg.resolve_seeds(seed)?;
    Ok(cfg)
}

/// With an explicit config the checkpoint must match its architecture;
/// otherwise the checkpoint's own architecture is used.
fn load_classifier(path: &Path, cfg: &RunConfig, explicit: bool) -> Result<ClassifierModel> {
    let expected = explicit.then_some(&cfg.encoder);
    Ok(ClassifierModel::from_checkpoint(&Checkpoint::load(path)?, expected)?)
}

fn input_size(model: &ClassifierModel) -> (usize, usize) {
    let (_, h, w) = model.config().input_shape;
    (h, w)
}

/// A pack file, or a directory of PPM images with an optional `labels.csv`.
fn load_data(path: &Path, (h, w): (usize, usize)) -> Result<DatasetIndex> {
    let ds = if path.is_dir() {
        let csv = path.join("labels.csv");
        load_directory(path, csv.is_file().then_some(csv.as_path()), (h, w))?
    } else {
        read_pack(path)?
    };
    if ds.is_empty() {
        return Err(Error::DegenerateData(format!("{} holds no images", path.display())).into());
    }
    if let Some(shape) = ds.image_shape() {
        if shape != (3, h, w) {
            return Err(Error::Shape(format!(
                "{} holds {}x{}x{} images but the model expects 3x{h}x{w}",
                path.display(),
                shape.0,
                shape.1,
                shape.2
            ))
            .into());
        }
    }
    Ok(ds)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}
