//! Implementation of the `oamil` command-line tool.

pub mod args;
pub mod manifest;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::json;

use oamil::data::{generate_scenes, read_annotations, split_indices, write_annotations, Provenance};
use oamil::detector::{load_checkpoint, save_checkpoint, Checkpoint};
use oamil::eval::{evaluate, write_metrics_csv, MetricsRecord};
use oamil::experiment::{run_id, sweep, SweepSpec};
use oamil::gradcheck::{gradient_check, FD_STEP};
use oamil::noise::{mean_annotation_iou, perturb_dataset, NoiseSpec};
use oamil::trainer::{train, Mode};
use oamil::Error;

pub use args::{Cli, Command};
pub use manifest::RunManifest;

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_FORMAT: u8 = 4;
pub const EXIT_CONFIG: u8 = 5;
pub const EXIT_DIVERGED: u8 = 6;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Manifest(_) => EXIT_FORMAT,
            CliError::Core(e) => match e {
                Error::Io { .. } => EXIT_IO,
                Error::Format { .. }
                | Error::MissingScene { .. }
                | Error::InvalidBox { .. }
                | Error::UnusableBounds { .. }
                | Error::NonPositiveSize { .. } => EXIT_FORMAT,
                Error::Config(_)
                | Error::InvalidNoiseLevel(_)
                | Error::InfeasibleLayout { .. }
                | Error::OutOfRange { .. }
                | Error::NonFiniteFeature { .. }
                | Error::NegativeBag => EXIT_CONFIG,
                Error::Diverged { .. } => EXIT_DIVERGED,
            },
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn to_json(v: impl serde::Serialize) -> serde_json::Value {
    serde_json::to_value(v).expect("configuration types serialize to JSON")
}

/// Resolved configuration, default manifest location and output files.
fn plan(cmd: &Command) -> Result<(serde_json::Value, Option<PathBuf>, Vec<PathBuf>)> {
    Ok(match cmd {
        Command::GenSynth(a) => {
            let layout = a.layout.spec();
            layout.validate()?;
            let config = json!({"layout": to_json(&layout), "scenes": a.layout.scenes, "seed": a.seed});
            (config, Some(sibling(&a.out, ".manifest")), vec![a.out.clone()])
        }
        Command::InjectNoise(a) => {
            let spec = NoiseSpec::new(a.r, a.seed)?;
            (to_json(spec), Some(sibling(&a.out, ".manifest")), vec![a.out.clone()])
        }
        Command::Train(a) => {
            let cfg = a.train.config(a.mode, a.seed);
            cfg.validate()?;
            let outputs = vec![a.out.join("model.ckpt"), a.out.join("train_log.csv")];
            (to_json(&cfg), Some(a.out.join("manifest.txt")), outputs)
        }
        Command::Eval(a) => (to_json(a.spec()), Some(sibling(&a.out, ".manifest")), vec![a.out.clone()]),
        Command::Sweep(a) => {
            let spec = sweep_spec(a);
            spec.validate()?;
            (to_json(&spec), Some(sibling(&a.out, ".manifest")), vec![a.out.clone()])
        }
        Command::Gradcheck(a) => (
            json!({"seed": a.seed, "configurations": a.configurations, "fd_step": FD_STEP}),
            None,
            Vec::new(),
        ),
        Command::Rerun(_) => unreachable!("reruns are resolved before planning"),
    })
}

fn sweep_spec(a: &args::SweepArgs) -> SweepSpec {
    SweepSpec {
        modes: a.modes.clone(),
        r_levels: a.r_levels.clone(),
        seeds: a.seeds,
        scenes: a.layout.scenes,
        layout: a.layout.spec(),
        train: a.train.config(Mode::OaIe, 0),
    }
}

/// Run a command, writing its manifest first. Returns the text to print.
pub fn execute(cmd: &Command, manifest: Option<&Path>) -> Result<String> {
    if let Command::Rerun(r) = cmd {
        let m = RunManifest::read(&r.manifest)?;
        if m.tool_version != env!("CARGO_PKG_VERSION") {
            log::warn!(
                "manifest was written by version {}, running {}",
                m.tool_version,
                env!("CARGO_PKG_VERSION")
            );
        }
        return execute(&m.command, Some(&r.manifest));
    }
    let (config, default_manifest, outputs) = plan(cmd)?;
    for dir in outputs.iter().filter_map(|p| p.parent()).filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    if let Some(path) = manifest.map(Path::to_path_buf).or(default_manifest) {
        RunManifest::new(cmd.clone(), config, outputs).write(&path)?;
    }
    run(cmd)
}

fn run(cmd: &Command) -> Result<String> {
    let mut msg = String::new();
    match cmd {
        Command::GenSynth(a) => {
            let ds = generate_scenes(a.layout.scenes, &a.layout.spec(), a.seed)?;
            write_annotations(&ds, &a.out)?;
            let _ = writeln!(
                msg,
                "wrote {} scenes with {} annotations to {}",
                ds.images.len(),
                ds.annotation_count(),
                a.out.display()
            );
        }
        Command::InjectNoise(a) => {
            let clean = read_annotations(&a.input)?;
            let noisy = perturb_dataset(&clean, &NoiseSpec::new(a.r, a.seed)?)?;
            write_annotations(&noisy, &a.out)?;
            let _ = writeln!(
                msg,
                "perturbed {} boxes (r={}, seed={}); mean IoU(noisy, input) = {}",
                noisy.annotation_count(),
                a.r,
                a.seed,
                mean_annotation_iou(&noisy, &clean)?
            );
        }
        Command::Train(a) => {
            let ds = read_annotations(&a.data)?;
            let cfg = a.train.config(a.mode, a.seed);
            let (det, log) = train(&ds, &cfg)?;
            let r = match ds.provenance {
                Provenance::Noisy { r, .. } => r,
                Provenance::Clean => 0.0,
            };
            let mut ckpt = Checkpoint::new(det);
            ckpt.meta.insert("mode".into(), a.mode.to_string());
            ckpt.meta.insert("seed".into(), a.seed.to_string());
            ckpt.meta.insert("noise_r".into(), r.to_string());
            ckpt.meta.insert("val_fraction".into(), cfg.val_fraction.to_string());
            ckpt.meta.insert("run_id".into(), run_id(a.mode, r, a.seed));
            save_checkpoint(&ckpt, a.out.join("model.ckpt"))?;
            log.write_csv(a.out.join("train_log.csv"))?;
            let last = log.epochs.last().map(|e| e.loss.total).unwrap_or(f64::NAN);
            let _ = writeln!(
                msg,
                "trained {} for {} epochs on {} scenes; final loss {last:.6}; wrote {}",
                a.mode,
                cfg.epochs,
                log.train_indices.len(),
                a.out.display()
            );
        }
        Command::Eval(a) => {
            let ckpt = load_checkpoint(&a.model)?;
            let ds = read_annotations(&a.data)?;
            if ckpt.detector.num_classes() != ds.num_classes() {
                return Err(Error::Config(format!(
                    "checkpoint has {} classes but the dataset has {}",
                    ckpt.detector.num_classes(),
                    ds.num_classes()
                ))
                .into());
            }
            let meta = |k: &str| ckpt.meta.get(k).cloned();
            let seed: u64 = meta("seed").and_then(|s| s.parse().ok()).unwrap_or(0);
            let indices = match a.split {
                args::Split::All => None,
                args::Split::Val => {
                    let vf = meta("val_fraction")
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| CliError::Usage("checkpoint records no split; use --split all".into()))?;
                    Some(split_indices(ds.images.len(), vf, seed).1)
                }
            };
            let report = evaluate(&ckpt.detector, &ds, indices.as_deref(), &a.spec())?;
            let noise_r = match ds.provenance {
                Provenance::Noisy { r, .. } => r,
                Provenance::Clean => meta("noise_r").and_then(|s| s.parse().ok()).unwrap_or(0.0),
            };
            let row = MetricsRecord {
                run_id: meta("run_id").unwrap_or_else(|| {
                    a.model
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_default()
                }),
                mode: meta("mode").unwrap_or_else(|| "unknown".into()),
                noise_r,
                seed,
                map50: report.map50,
                cls_acc: report.diagnostic.cls_acc,
                loc_prec: report.diagnostic.loc_prec,
            };
            write_metrics_csv(std::slice::from_ref(&row), &a.out)?;
            let _ = writeln!(
                msg,
                "mAP@0.5 {:.4}  cls_acc {:.4}  loc_prec {:.4}",
                row.map50, row.cls_acc, row.loc_prec
            );
        }
        Command::Sweep(a) => {
            let spec = sweep_spec(a);
            let rows = match a.jobs {
                Some(n) => rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .map_err(|e| CliError::Usage(format!("--jobs: {e}")))?
                    .install(|| sweep(&spec))?,
                None => sweep(&spec)?,
            };
            write_metrics_csv(&rows, &a.out)?;
            let _ = writeln!(msg, "wrote {} runs to {}", rows.len(), a.out.display());
        }
        Command::Gradcheck(a) => {
            let report = gradient_check(a.seed, a.configurations)?;
            let _ = writeln!(
                msg,
                "max relative error {:e} over {} configurations ({} coordinates)",
                report.max_relative_error, report.configurations, report.coordinates
            );
        }
        Command::Rerun(_) => unreachable!(),
    }
    Ok(msg)
}
