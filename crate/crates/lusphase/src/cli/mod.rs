//! Command-line orchestration of the pipeline.
//!
//! Subcommands: `lpe`, `enhance`, `frst`, `featurize`, `split`, `train`,
//! `evaluate`, `crossval`, `report`. Exit codes: 0 on success, 1 on
//! validation errors (flags, config, manifest), 2 on runtime failures.
//! Progress goes to stderr; machine-readable output goes to files only.

mod config;
mod runner;

pub use config::{FoldSection, PathsSection, RunConfig, TrainSection};
pub use runner::{evaluate_fold, log_to_csv, predictions_over, train_fold, LogRow};

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::data::{build_manifest, featurize_all, subject_kfold, FeatureManifest, FoldPlan};
use crate::enhance::enhanced_pair;
use crate::frst::{frst_transform, Polarity};
use crate::imgcore::{load_image, save_image, GrayImage, ImageFormat};
use crate::metrics::{aggregate_folds, MetricReport};
use crate::net::{load_checkpoint, save_checkpoint, FeatureKind, FusionMode};
use crate::phasefilt::local_phase_energy;
use crate::{Error, Result};

use config::write_run_record;

#[derive(Parser)]
#[command(
    name = "lusphase",
    version,
    about = "Local-phase lung ultrasound filtering and multi-scale residual CNN classification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// TOML configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Global seed all randomness derives from.
    #[arg(long)]
    seed: Option<u64>,
    /// Bound on per-image worker threads (0 = all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Extract local phase energy images (PFM per input).
    Lpe {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "out")]
        output: PathBuf,
        #[arg(long)]
        scales: Option<usize>,
        #[arg(long)]
        lambda0: Option<f64>,
        #[arg(long)]
        multiplier: Option<f64>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        order: Option<f64>,
    },
    /// Compute the two attenuation-corrected enhanced images per input.
    Enhance {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "out")]
        output: PathBuf,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        epsilon: Option<f64>,
        /// Echogenicity fractions, e.g. 0.6,0.9
        #[arg(long)]
        betas: Option<String>,
    },
    /// Apply the fast radial symmetry transform to each input image.
    Frst {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "out")]
        output: PathBuf,
        /// Voting radii, e.g. 2,4,6,8,10
        #[arg(long)]
        radii: Option<String>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        polarity: Option<String>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Run the full feature chain for every manifest row.
    Featurize {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long = "out")]
        output: PathBuf,
        #[arg(long)]
        crop: Option<usize>,
        #[arg(long)]
        side: Option<usize>,
    },
    /// Plan a subject-disjoint k-fold split.
    Split {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long = "out")]
        output: PathBuf,
    },
    /// Train one fold's model from precomputed features.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        fold: usize,
        #[arg(long = "out")]
        output: PathBuf,
        #[arg(long)]
        fusion: Option<String>,
        /// Comma-separated feature list, e.g. us,e1,e2
        #[arg(long)]
        inputs: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        lr_scale: Option<f64>,
        #[arg(long)]
        share_weights: bool,
    },
    /// Evaluate a checkpoint on one fold's test partition.
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        fold: usize,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "out")]
        output: PathBuf,
    },
    /// Featurize, split, train and evaluate all folds, then aggregate.
    Crossval {
        #[command(flatten)]
        common: CommonArgs,
        /// Frame directory; falls back to `paths.input_dir` in the config.
        #[arg(long = "in")]
        input: Option<PathBuf>,
        /// Manifest CSV; falls back to `paths.manifest` in the config.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Output directory; falls back to `paths.output_dir` in the config.
        #[arg(long = "out")]
        output: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        crop: Option<usize>,
        #[arg(long)]
        side: Option<usize>,
        #[arg(long)]
        fusion: Option<String>,
        #[arg(long)]
        inputs: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        lr_scale: Option<f64>,
        #[arg(long)]
        share_weights: bool,
    },
    /// Aggregate per-fold metric files into one report.
    Report {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "out")]
        output: PathBuf,
    },
}

/// Entry point: parses `std::env::args` and returns the process exit code.
pub fn run() -> i32 {
    run_from(std::env::args_os())
}

/// Testable entry point over explicit arguments.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    let common = match &command {
        Command::Lpe { common, .. }
        | Command::Enhance { common, .. }
        | Command::Frst { common, .. }
        | Command::Featurize { common, .. }
        | Command::Split { common, .. }
        | Command::Train { common, .. }
        | Command::Evaluate { common, .. }
        | Command::Crossval { common, .. }
        | Command::Report { common, .. } => common.clone(),
    };
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(jobs) = common.jobs {
        cfg.jobs = jobs;
    }
    if cfg.jobs > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| execute(command, cfg))
    } else {
        execute(command, cfg)
    }
}

fn execute(command: Command, mut cfg: RunConfig) -> Result<()> {
    match command {
        Command::Lpe {
            input,
            output,
            scales,
            lambda0,
            multiplier,
            alpha,
            order,
            ..
        } => {
            let phase = &mut cfg.featurize.phase;
            apply(scales, &mut phase.num_scales);
            apply(lambda0, &mut phase.center_wavelength);
            apply(multiplier, &mut phase.scale_multiplier);
            apply(alpha, &mut phase.shape_alpha);
            apply(order, &mut phase.bandwidth_order);
            cfg.featurize.phase.validate()?;
            run_image_stage(&input, &output, "lpe", &cfg, |img, cfg| {
                let lpe = local_phase_energy(img, &cfg.featurize.phase)?;
                Ok(vec![("lpe", lpe)])
            })
        }
        Command::Enhance {
            input,
            output,
            eta,
            delta,
            epsilon,
            betas,
            ..
        } => {
            let section = &mut cfg.featurize.enhance;
            apply(eta, &mut section.eta);
            apply(delta, &mut section.delta);
            apply(epsilon, &mut section.epsilon);
            if let Some(spec) = betas {
                section.beta_fractions = parse_pair(&spec)?;
            }
            cfg.featurize.enhance.validate()?;
            run_image_stage(&input, &output, "enhance", &cfg, |img, cfg| {
                let (e1, e2) = enhanced_pair(img, &cfg.featurize.enhance)?;
                Ok(vec![("e1", e1), ("e2", e2)])
            })
        }
        Command::Frst {
            input,
            output,
            radii,
            alpha,
            polarity,
            threshold,
            ..
        } => {
            let section = &mut cfg.featurize.frst;
            if let Some(spec) = radii {
                section.radii = parse_radii(&spec)?;
            }
            apply(alpha, &mut section.radial_strictness);
            apply(threshold, &mut section.gradient_threshold);
            if let Some(p) = polarity {
                section.polarity = parse_polarity(&p)?;
            }
            run_image_stage(&input, &output, "frst", &cfg, |img, cfg| {
                let s = frst_transform(img, &cfg.featurize.frst)?;
                Ok(vec![("s", s)])
            })
        }
        Command::Featurize {
            input,
            manifest,
            output,
            crop,
            side,
            ..
        } => {
            apply(crop, &mut cfg.featurize.crop_side);
            if let Some(side) = side {
                cfg.featurize.network_side = side;
                cfg.model.image_side = side;
            }
            let samples = build_manifest(&input, &manifest)?;
            fs::create_dir_all(&output).map_err(|e| Error::io(&output, e))?;
            let featurized = featurize_all(&samples, &cfg.featurize, &output)?;
            eprintln!(
                "featurized {} samples into {}",
                featurized.samples.len(),
                output.display()
            );
            write_run_record(
                &output,
                "featurize",
                &cfg,
                serde_json::json!({
                    "in": input,
                    "manifest": manifest,
                }),
            )
        }
        Command::Split {
            manifest,
            input,
            k,
            output,
            ..
        } => {
            apply(k, &mut cfg.folds.k);
            let samples = build_manifest(&input, &manifest)?;
            let plan = subject_kfold(&samples, cfg.folds.k, cfg.seed)?;
            plan.verify(&samples)?;
            write_plan(&plan, &output)?;
            if let Some(dir) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
                write_run_record(
                    dir,
                    "split",
                    &cfg,
                    serde_json::json!({ "manifest": manifest, "in": input, "plan": output }),
                )?;
            }
            eprintln!(
                "planned {} folds over {} subjects",
                plan.k,
                plan.assignments.len()
            );
            Ok(())
        }
        Command::Train {
            features,
            plan,
            fold,
            output,
            fusion,
            inputs,
            epochs,
            batch,
            lr,
            lr_scale,
            share_weights,
            ..
        } => {
            apply_fusion_flags(&mut cfg, fusion, inputs, share_weights)?;
            apply(epochs, &mut cfg.train.epochs);
            apply(batch, &mut cfg.train.batch_size);
            apply(lr, &mut cfg.train.learning_rate);
            apply(lr_scale, &mut cfg.train.lr_scale);
            let manifest = FeatureManifest::load(&features)?;
            adopt_manifest_side(&mut cfg, &manifest);
            cfg.validate()?;
            let plan = read_plan(&plan)?;
            plan.verify(&manifest.samples)?;
            fs::create_dir_all(&output).map_err(|e| Error::io(&output, e))?;
            let (mut model, log) = train_fold(&manifest.samples, &plan, fold, &cfg)?;
            let ckpt_path = output.join(format!("fold_{fold}.ckpt"));
            save_checkpoint(&mut model, &ckpt_path)?;
            let log_path = output.join(format!("fold_{fold}_train_log.csv"));
            fs::write(&log_path, log_to_csv(&log)).map_err(|e| Error::io(&log_path, e))?;
            write_run_record(
                &output,
                "train",
                &cfg,
                serde_json::json!({
                    "features": features,
                    "plan": plan_to_json(&plan),
                    "fold": fold,
                }),
            )?;
            eprintln!(
                "trained fold {fold}: {} steps, checkpoint at {}",
                model.step_count(),
                ckpt_path.display()
            );
            Ok(())
        }
        Command::Evaluate {
            features,
            plan,
            fold,
            checkpoint,
            output,
            ..
        } => {
            let manifest = FeatureManifest::load(&features)?;
            adopt_manifest_side(&mut cfg, &manifest);
            let plan = read_plan(&plan)?;
            let mut model = load_checkpoint(&checkpoint)?;
            // The checkpoint's fusion layout is authoritative for batching.
            cfg.fusion = model.fusion().clone();
            cfg.model = model.config().clone();
            cfg.featurize.network_side = model.config().image_side;
            let report = evaluate_fold(&mut model, &manifest.samples, &plan, fold, &cfg)?;
            fs::create_dir_all(&output).map_err(|e| Error::io(&output, e))?;
            write_fold_report(&output, fold, &report)?;
            write_run_record(
                &output,
                "evaluate",
                &cfg,
                serde_json::json!({
                    "features": features,
                    "fold": fold,
                    "checkpoint": checkpoint,
                }),
            )?;
            eprintln!("fold {fold}: accuracy {:.2}%", report.accuracy * 100.0);
            Ok(())
        }
        Command::Crossval {
            input,
            manifest,
            output,
            k,
            crop,
            side,
            fusion,
            inputs,
            epochs,
            batch,
            lr,
            lr_scale,
            share_weights,
            ..
        } => {
            apply(k, &mut cfg.folds.k);
            apply(crop, &mut cfg.featurize.crop_side);
            if let Some(side) = side {
                cfg.featurize.network_side = side;
                cfg.model.image_side = side;
            }
            apply_fusion_flags(&mut cfg, fusion, inputs, share_weights)?;
            apply(epochs, &mut cfg.train.epochs);
            apply(batch, &mut cfg.train.batch_size);
            apply(lr, &mut cfg.train.learning_rate);
            apply(lr_scale, &mut cfg.train.lr_scale);
            cfg.validate()?;
            let input = resolve_path(input, &cfg.paths.input_dir, "--in / paths.input_dir")?;
            let manifest =
                resolve_path(manifest, &cfg.paths.manifest, "--manifest / paths.manifest")?;
            let output = resolve_path(output, &cfg.paths.output_dir, "--out / paths.output_dir")?;
            run_crossval(&cfg, &input, &manifest, &output)
        }
        Command::Report { input, output, .. } => {
            let reports = collect_fold_reports(&input)?;
            if reports.is_empty() {
                return Err(Error::Config(format!(
                    "no fold metric files under {}",
                    input.display()
                )));
            }
            let mean = aggregate_folds(&reports)?;
            let csv = render_report_csv(&reports, &mean);
            fs::write(&output, csv).map_err(|e| Error::io(&output, e))?;
            eprintln!(
                "aggregated {} folds: mean accuracy {:.2}%",
                reports.len(),
                mean.accuracy * 100.0
            );
            Ok(())
        }
    }
}

fn apply<T>(flag: Option<T>, slot: &mut T) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn resolve_path(
    flag: Option<PathBuf>,
    fallback: &Option<PathBuf>,
    name: &str,
) -> Result<PathBuf> {
    flag.or_else(|| fallback.clone())
        .ok_or_else(|| Error::Config(format!("{name} is required")))
}

fn apply_fusion_flags(
    cfg: &mut RunConfig,
    fusion: Option<String>,
    inputs: Option<String>,
    share_weights: bool,
) -> Result<()> {
    if let Some(mode) = fusion {
        cfg.fusion.mode = FusionMode::parse(&mode)?;
    }
    if let Some(list) = inputs {
        cfg.fusion.inputs = list
            .split(',')
            .map(FeatureKind::parse)
            .collect::<Result<Vec<_>>>()?;
    }
    if share_weights {
        cfg.fusion.weight_sharing = true;
    }
    Ok(())
}

fn adopt_manifest_side(cfg: &mut RunConfig, manifest: &FeatureManifest) {
    if cfg.featurize.network_side != manifest.network_side {
        eprintln!(
            "note: adopting feature side {} from the feature manifest",
            manifest.network_side
        );
        cfg.featurize.network_side = manifest.network_side;
        cfg.model.image_side = manifest.network_side;
    }
}

fn parse_pair(spec: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(Error::Config(format!(
            "expected two comma-separated values, got '{spec}'"
        )));
    }
    let a = parts[0]
        .parse()
        .map_err(|_| Error::Config(format!("invalid number '{}'", parts[0])))?;
    let b = parts[1]
        .parse()
        .map_err(|_| Error::Config(format!("invalid number '{}'", parts[1])))?;
    Ok((a, b))
}

fn parse_radii(spec: &str) -> Result<Vec<usize>> {
    spec.split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("invalid radius '{s}'")))
        })
        .collect()
}

fn parse_polarity(spec: &str) -> Result<Polarity> {
    match spec.trim().to_ascii_lowercase().as_str() {
        "bright" => Ok(Polarity::Bright),
        "dark" => Ok(Polarity::Dark),
        "both" => Ok(Polarity::Both),
        other => Err(Error::Config(format!(
            "unknown polarity '{other}' (expected bright, dark or both)"
        ))),
    }
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "pgm" | "pfm"))
                .unwrap_or(false)
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Config(format!(
            "no PNG/PGM/PFM inputs under {}",
            dir.display()
        )));
    }
    Ok(files)
}

fn stem_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into())
}

/// Runs a per-image filter stage over a directory, writing one PFM per
/// produced raster with the stage suffix appended to the input stem.
fn run_image_stage(
    input: &Path,
    output: &Path,
    stage: &str,
    cfg: &RunConfig,
    op: impl Fn(&GrayImage, &RunConfig) -> Result<Vec<(&'static str, GrayImage)>> + Sync,
) -> Result<()> {
    let files = list_images(input)?;
    fs::create_dir_all(output).map_err(|e| Error::io(output, e))?;
    files.par_iter().try_for_each(|file| -> Result<()> {
        let img = load_image(file)?;
        let results = op(&img, cfg)?;
        for (suffix, raster) in results {
            let out_path = output.join(format!("{}_{suffix}.pfm", stem_of(file)));
            save_image(&raster, &out_path, ImageFormat::Pfm)?;
        }
        Ok(())
    })?;
    write_run_record(
        output,
        stage,
        cfg,
        serde_json::json!({ "in": input, "images": files.len() }),
    )?;
    eprintln!(
        "{stage}: processed {} images into {}",
        files.len(),
        output.display()
    );
    Ok(())
}

fn write_plan(plan: &FoldPlan, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(plan)
        .map_err(|e| Error::Format(format!("plan encode: {e}")))?;
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

fn read_plan(path: &Path) -> Result<FoldPlan> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn plan_to_json(plan: &FoldPlan) -> serde_json::Value {
    serde_json::json!({ "k": plan.k, "seed": plan.seed })
}

fn write_fold_report(dir: &Path, fold: usize, report: &MetricReport) -> Result<()> {
    let json_path = dir.join(format!("fold_{fold}_metrics.json"));
    let json = serde_json::to_string_pretty(report)
        .map_err(|e| Error::Format(format!("report encode: {e}")))?;
    fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
    let csv_path = dir.join(format!("fold_{fold}_metrics.csv"));
    let csv = format!(
        "{}\n{}\n",
        MetricReport::csv_header(),
        report.csv_row(&fold.to_string())
    );
    fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))
}

fn render_report_csv(reports: &[MetricReport], mean: &MetricReport) -> String {
    let mut out = String::from(MetricReport::csv_header());
    out.push('\n');
    for (fold, report) in reports.iter().enumerate() {
        out.push_str(&report.csv_row(&fold.to_string()));
        out.push('\n');
    }
    out.push_str(&mean.csv_row("mean"));
    out.push('\n');
    out
}

fn collect_fold_reports(dir: &Path) -> Result<Vec<MetricReport>> {
    let mut found: Vec<(usize, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        let name = entry.file_name().to_string_lossy().into_owned();
        if path.is_dir() {
            if let Some(fold) = name.strip_prefix("fold_").and_then(|s| s.parse().ok()) {
                let metrics = path.join("metrics.json");
                if metrics.is_file() {
                    found.push((fold, metrics));
                }
            }
        } else if let Some(fold) = name
            .strip_prefix("fold_")
            .and_then(|s| s.strip_suffix("_metrics.json"))
            .and_then(|s| s.parse().ok())
        {
            found.push((fold, path));
        }
    }
    found.sort_by_key(|(fold, _)| *fold);
    found
        .into_iter()
        .map(|(_, path)| {
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            serde_json::from_slice(&bytes)
                .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
        })
        .collect()
}

fn run_crossval(cfg: &RunConfig, input: &Path, manifest: &Path, output: &Path) -> Result<()> {
    let samples = build_manifest(input, manifest)?;
    fs::create_dir_all(output).map_err(|e| Error::io(output, e))?;
    let features_dir = output.join("features");
    let featurized = featurize_all(&samples, &cfg.featurize, &features_dir)?;
    eprintln!("featurized {} samples", featurized.samples.len());

    let plan = subject_kfold(&featurized.samples, cfg.folds.k, cfg.seed)?;
    plan.verify(&featurized.samples)?;
    write_plan(&plan, &output.join("plan.json"))?;

    let mut reports = Vec::with_capacity(plan.k);
    for fold in 0..plan.k {
        eprintln!("fold {fold}: training");
        let (mut model, log) = train_fold(&featurized.samples, &plan, fold, cfg)?;
        let fold_dir = output.join(format!("fold_{fold}"));
        fs::create_dir_all(&fold_dir).map_err(|e| Error::io(&fold_dir, e))?;
        save_checkpoint(&mut model, fold_dir.join("checkpoint.ckpt"))?;
        let log_path = fold_dir.join("train_log.csv");
        fs::write(&log_path, log_to_csv(&log)).map_err(|e| Error::io(&log_path, e))?;
        let report = evaluate_fold(&mut model, &featurized.samples, &plan, fold, cfg)?;
        let json_path = fold_dir.join("metrics.json");
        let json = serde_json::to_string_pretty(&report)
            .map_err(|e| Error::Format(format!("report encode: {e}")))?;
        fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
        eprintln!("fold {fold}: accuracy {:.2}%", report.accuracy * 100.0);
        reports.push(report);
    }

    let mean = aggregate_folds(&reports)?;
    let report_path = output.join("report.csv");
    fs::write(&report_path, render_report_csv(&reports, &mean))
        .map_err(|e| Error::io(&report_path, e))?;
    let json_path = output.join("report.json");
    let json = serde_json::to_string_pretty(&serde_json::json!({
        "folds": reports,
        "mean": mean,
    }))
    .map_err(|e| Error::Format(format!("report encode: {e}")))?;
    fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
    write_run_record(
        output,
        "crossval",
        cfg,
        serde_json::json!({ "in": input, "manifest": manifest }),
    )?;
    eprintln!("mean accuracy {:.2}%", mean.accuracy * 100.0);
    Ok(())
}
