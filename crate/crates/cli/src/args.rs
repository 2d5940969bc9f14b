use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use oamil::data::LayoutSpec;
use oamil::detector::ProposalSpec;
use oamil::eval::EvalSpec;
use oamil::mil::OaMilConfig;
use oamil::noise::NoiseSpec;
use oamil::trainer::{Mode, TrainConfig};

#[derive(Parser, Debug)]
#[command(name = "oamil", version, about = "Object-aware MIL detection experiments on synthetic scenes")]
pub struct Cli {
    /// Manifest path; defaults to a file next to the primary output.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    /// Raise log verbosity (repeatable).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Generate synthetic scenes with clean annotations.
    GenSynth(GenSynthArgs),
    /// Perturb every box of an annotation file.
    InjectNoise(InjectNoiseArgs),
    /// Train a detector.
    Train(TrainArgs),
    /// Score a checkpoint against clean scene geometry.
    Eval(EvalArgs),
    /// Train and evaluate over a grid of modes, noise levels and seeds.
    Sweep(SweepArgs),
    /// Compare analytic and finite-difference gradients.
    Gradcheck(GradcheckArgs),
    /// Repeat a run recorded in a manifest.
    #[serde(skip)]
    Rerun(RerunArgs),
}

fn positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(n) => Ok(n),
        Err(e) => Err(e.to_string()),
    }
}

fn noise_level(s: &str) -> Result<f64, String> {
    let r: f64 = s.parse().map_err(|e| format!("{e}"))?;
    NoiseSpec::new(r, 0).map(|_| r).map_err(|e| e.to_string())
}

fn mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: oamil::Error| e.to_string())
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutArgs {
    #[arg(long, default_value_t = 250, value_parser = positive)]
    pub scenes: usize,
    #[arg(long, default_value_t = 3, value_parser = positive)]
    pub classes: usize,
    #[arg(long, default_value_t = 128)]
    pub width: u32,
    #[arg(long, default_value_t = 128)]
    pub height: u32,
    #[arg(long, default_value_t = 1)]
    pub min_objects: usize,
    #[arg(long, default_value_t = 4)]
    pub max_objects: usize,
    #[arg(long, default_value_t = 16.0)]
    pub min_size: f64,
    #[arg(long, default_value_t = 48.0)]
    pub max_size: f64,
    #[arg(long, default_value_t = 0.1)]
    pub max_pair_iou: f64,
    #[arg(long, default_value_t = 200)]
    pub max_attempts: usize,
}

impl LayoutArgs {
    pub fn spec(&self) -> LayoutSpec {
        LayoutSpec {
            width: self.width,
            height: self.height,
            min_objects: self.min_objects,
            max_objects: self.max_objects,
            num_classes: self.classes,
            min_size: self.min_size,
            max_size: self.max_size,
            max_pair_iou: self.max_pair_iou,
            max_attempts: self.max_attempts,
        }
    }
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSynthArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub layout: LayoutArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectNoiseArgs {
    #[arg(long = "in")]
    #[serde(rename = "in")]
    pub input: PathBuf,
    #[arg(long, value_parser = noise_level)]
    pub r: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Training hyperparameters, one flag per configuration field.
#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainFlags {
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 8, value_parser = positive)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.004)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 0.0)]
    pub init_scale: f64,
    /// Score the selector with the classifier weights.
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    pub shared: bool,
    #[arg(long, default_value_t = 0.2)]
    pub val_fraction: f64,
    #[arg(long)]
    pub track_val_map: bool,
    #[arg(long, default_value_t = 7.5)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0.85)]
    pub theta: f64,
    #[arg(long, default_value_t = 4)]
    pub n_extend: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.5)]
    pub label_iou: f64,
    #[arg(long, default_value_t = 0.5)]
    pub assign_iou: f64,
    #[arg(long, default_value_t = 16)]
    pub negative_bag_size: usize,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 32)]
    pub per_object: usize,
    #[arg(long, default_value_t = 0.3)]
    pub jitter: f64,
    #[arg(long, default_value_t = 32)]
    pub negatives: usize,
}

impl TrainFlags {
    pub fn config(&self, mode: Mode, seed: u64) -> TrainConfig {
        TrainConfig {
            mode,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            seed,
            init_scale: self.init_scale,
            shared: self.shared,
            val_fraction: self.val_fraction,
            track_val_map: self.track_val_map,
            mil: OaMilConfig {
                gamma: self.gamma,
                theta: self.theta,
                n_extend: self.n_extend,
                lambda: self.lambda,
                label_iou: self.label_iou,
                assign_iou: self.assign_iou,
                negative_bag_size: self.negative_bag_size,
                beta: self.beta,
            },
            proposals: ProposalSpec {
                per_object: self.per_object,
                jitter: self.jitter,
                negatives: self.negatives,
                ..ProposalSpec::default()
            },
            eval: EvalSpec::default(),
        }
    }
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "+oa-ie", value_parser = mode)]
    pub mode: Mode,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for the checkpoint and training log.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub train: TrainFlags,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    /// Every image in the file.
    All,
    /// The held-out scenes of the checkpoint's training run.
    Val,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Split::Val)]
    pub split: Split,
    #[arg(long, default_value_t = 0.5)]
    pub iou_threshold: f64,
    #[arg(long, default_value_t = 0.05)]
    pub score_threshold: f64,
    #[arg(long, default_value_t = 0.5)]
    pub nms_iou: f64,
    #[arg(long, default_value_t = 100)]
    pub max_detections: usize,
    #[arg(long, default_value_t = 0.5)]
    pub diagnostic_confidence: f64,
}

impl EvalArgs {
    pub fn spec(&self) -> EvalSpec {
        let mut spec = EvalSpec {
            iou_threshold: self.iou_threshold,
            diagnostic_confidence: self.diagnostic_confidence,
            ..EvalSpec::default()
        };
        spec.inference.score_threshold = self.score_threshold;
        spec.inference.nms_iou = self.nms_iou;
        spec.inference.max_detections = self.max_detections;
        spec
    }
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepArgs {
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.3,0.4", value_parser = noise_level)]
    pub r_levels: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "naive,+oa-ie", value_parser = mode)]
    pub modes: Vec<Mode>,
    /// Number of seeds per cell, counting from 0.
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    pub seeds: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads; defaults to one per core.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    pub layout: LayoutArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub train: TrainFlags,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20, value_parser = positive)]
    pub configurations: usize,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerunArgs {
    pub manifest: PathBuf,
}
