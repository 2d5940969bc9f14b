//! SGD-with-momentum training of the desk-scale detector under the five
//! supervision modes.

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{split_indices, AnnotatedDataset, LabeledBox};
use crate::detector::{propose_with, score_and_regress, LossBreakdown, LossBundle, ProposalSpec, ToyDetector, Weights};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalSpec};
use crate::geometry::BBox;
use crate::mil::{assemble_bundle, build_bags, extend_bags, Bag, BagFamily, OaMilConfig, TargetRule};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mode {
    /// Classifier and regressor trained directly on the annotations.
    #[serde(rename = "naive")]
    Naive,
    /// Adds the selector hinge loss; the target is the selected instance.
    #[serde(rename = "is-loss-only")]
    IsLossOnly,
    /// Target is the object-aware merge of selection and annotation.
    #[serde(rename = "+oa-is")]
    OaIs,
    /// Object-aware merge plus bag extension.
    #[serde(rename = "+oa-ie")]
    OaIe,
    /// Naive supervision on the clean scene geometry.
    #[serde(rename = "clean-oracle")]
    CleanOracle,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::Naive, Mode::IsLossOnly, Mode::OaIs, Mode::OaIe, Mode::CleanOracle];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Naive => "naive",
            Mode::IsLossOnly => "is-loss-only",
            Mode::OaIs => "+oa-is",
            Mode::OaIe => "+oa-ie",
            Mode::CleanOracle => "clean-oracle",
        }
    }

    pub fn recipe(self, n_extend: usize) -> Recipe {
        let (selector_loss, target, extensions) = match self {
            Mode::Naive | Mode::CleanOracle => (false, TargetRule::Annotation, 0),
            Mode::IsLossOnly => (true, TargetRule::Selected, 0),
            Mode::OaIs => (true, TargetRule::ObjectAware, 0),
            Mode::OaIe => (true, TargetRule::ObjectAware, n_extend),
        };
        Recipe {
            selector_loss,
            target,
            extensions,
            clean_supervision: self == Mode::CleanOracle,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode `{s}` (expected one of naive, is-loss-only, +oa-is, +oa-ie, clean-oracle)")))
    }
}

/// The loss components a mode switches on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Recipe {
    pub selector_loss: bool,
    pub target: TargetRule,
    pub extensions: usize,
    /// Train on the scene geometry instead of the annotations.
    pub clean_supervision: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: Mode,
    pub epochs: usize,
    /// Scenes per gradient step.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Half-width of the uniform weight initialization.
    pub init_scale: f64,
    /// Evaluate the selector with the classifier weights.
    pub shared: bool,
    pub val_fraction: f64,
    /// Record validation mAP after every epoch.
    pub track_val_map: bool,
    pub mil: OaMilConfig,
    pub proposals: ProposalSpec,
    pub eval: EvalSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: Mode::OaIe,
            epochs: 20,
            batch_size: 8,
            learning_rate: 0.004,
            momentum: 0.9,
            seed: 0,
            init_scale: 0.0,
            shared: true,
            val_fraction: 0.2,
            track_val_map: false,
            mil: OaMilConfig::default(),
            proposals: ProposalSpec::default(),
            eval: EvalSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("validation fraction must lie in [0, 1)");
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return bad("init scale must be non-negative");
        }
        self.mil.validate()
    }

    pub fn recipe(&self) -> Recipe {
        self.mode.recipe(self.mil.n_extend)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean over the epoch's gradient steps of the batch-averaged loss.
    pub loss: LossBreakdown,
    pub val_map50: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

pub const TRAIN_LOG_HEADER: &str = "epoch,total_loss,selector,classifier,generator,val_map50";

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(TRAIN_LOG_HEADER);
        s.push('\n');
        for e in &self.epochs {
            let val = e.val_map50.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                e.epoch, e.loss.total, e.loss.selector, e.loss.classifier, e.loss.generator, val
            );
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Train with the components of `cfg.mode`.
pub fn train(ds: &AnnotatedDataset, cfg: &TrainConfig) -> Result<(ToyDetector, TrainLog)> {
    train_with_recipe(ds, cfg, cfg.recipe())
}

/// Train with an explicit component recipe; `cfg.mode` is ignored.
pub fn train_with_recipe(ds: &AnnotatedDataset, cfg: &TrainConfig, recipe: Recipe) -> Result<(ToyDetector, TrainLog)> {
    cfg.validate()?;
    let num_classes = ds.num_classes();
    if num_classes == 0 {
        return Err(Error::Config("dataset has no categories".into()));
    }
    let (train_idx, val_idx) = split_indices(ds.images.len(), cfg.val_fraction, cfg.seed);
    if train_idx.is_empty() {
        return Err(Error::Config("no training scenes after the validation split".into()));
    }
    let supervision: Vec<Vec<LabeledBox>> = (0..ds.images.len())
        .map(|i| {
            ds.images[i].scene()?;
            if recipe.clean_supervision {
                ds.clean_boxes(i)
            } else {
                ds.labeled_boxes(i)
            }
        })
        .collect::<Result<_>>()?;

    let mut init_rng = rng::stream(cfg.seed, rng::TAG_INIT, 0);
    let mut det = ToyDetector::random(num_classes, cfg.shared, cfg.init_scale, &mut init_rng);
    let mut velocity = Weights::zeros(num_classes);
    let mut log = TrainLog {
        epochs: Vec::with_capacity(cfg.epochs),
        train_indices: train_idx.clone(),
        val_indices: val_idx.clone(),
    };

    let mut iteration = 0usize;
    let mut visit = 0u64;
    for epoch in 0..cfg.epochs {
        let mut order = train_idx.clone();
        order.shuffle(&mut rng::stream(cfg.seed, rng::TAG_SHUFFLE, epoch as u64));
        let mut sum = LossBreakdown::default();
        let mut steps = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let first_visit = visit;
            visit += batch.len() as u64;
            let parts: Vec<LossBundle> = batch
                .par_iter()
                .enumerate()
                .map(|(p, &i)| scene_bundle(ds, i, &supervision[i], &det, cfg, recipe, first_visit + p as u64))
                .collect::<Result<_>>()?;
            let mut bundle = LossBundle {
                lambda: cfg.mil.lambda,
                beta: cfg.mil.beta,
                ..Default::default()
            };
            for part in parts {
                bundle.merge(part);
            }
            let (loss, mut grad) = det.gradients(&bundle);
            let scale = 1.0 / batch.len() as f64;
            if !loss.total.is_finite() {
                return Err(Error::Diverged { iteration });
            }
            for g in grad.iter_mut() {
                *g *= scale;
            }
            sgd_step(&mut det.weights, &mut velocity, &grad, cfg.learning_rate, cfg.momentum);
            if !det.weights.is_finite() {
                return Err(Error::Diverged { iteration });
            }
            sum.selector += loss.selector * scale;
            sum.classifier += loss.classifier * scale;
            sum.generator += loss.generator * scale;
            sum.total += loss.total * scale;
            steps += 1;
            iteration += 1;
        }
        let n = steps.max(1) as f64;
        let loss = LossBreakdown {
            selector: sum.selector / n,
            classifier: sum.classifier / n,
            generator: sum.generator / n,
            total: sum.total / n,
        };
        log::debug!("epoch {epoch}: loss {:.5}", loss.total);
        let val_map50 = if cfg.track_val_map && !val_idx.is_empty() {
            Some(evaluate(&det, ds, Some(&val_idx), &cfg.eval)?.map50)
        } else {
            None
        };
        log.epochs.push(EpochRecord { epoch, loss, val_map50 });
    }
    Ok((det, log))
}

/// `v <- momentum * v + grad; w <- w - lr * v`.
pub fn sgd_step(weights: &mut Weights, velocity: &mut Weights, grad: &Weights, lr: f64, momentum: f64) {
    let g = grad.to_vec();
    for ((w, v), g) in weights.iter_mut().zip(velocity.iter_mut()).zip(g) {
        *v = momentum * *v + g;
        *w -= lr * *v;
    }
}

/// Families and negative bags of one scene under the current detector.
pub fn scene_bags(
    ds: &AnnotatedDataset,
    index: usize,
    annotations: &[LabeledBox],
    det: &ToyDetector,
    cfg: &TrainConfig,
    recipe: Recipe,
    visit: u64,
) -> Result<(Vec<BagFamily>, Vec<Bag>)> {
    let scene = ds.images[index].scene()?;
    let gt: Vec<BBox> = annotations.iter().map(|a| a.bbox).collect();
    let mut prop_rng = rng::stream(cfg.seed, rng::TAG_PROPOSAL, visit);
    let mut proposals = propose_with(scene, &gt, &cfg.proposals, &mut prop_rng)?;
    score_and_regress(det, &mut proposals.candidates, &scene.bounds)?;
    let bags = build_bags(scene, &proposals.candidates, annotations, &cfg.mil);
    let mut ext_rng = rng::stream(cfg.seed, rng::TAG_EXTENSION, visit);
    let mut families = Vec::new();
    let mut negatives = Vec::new();
    for bag in bags {
        if bag.is_positive() {
            families.push(extend_bags(
                &bag,
                det,
                scene,
                recipe.extensions,
                recipe.target,
                &cfg.mil,
                &cfg.proposals,
                &mut ext_rng,
            )?);
        } else {
            negatives.push(bag);
        }
    }
    Ok((families, negatives))
}

fn scene_bundle(
    ds: &AnnotatedDataset,
    index: usize,
    annotations: &[LabeledBox],
    det: &ToyDetector,
    cfg: &TrainConfig,
    recipe: Recipe,
    visit: u64,
) -> Result<LossBundle> {
    let (families, negatives) = scene_bags(ds, index, annotations, det, cfg, recipe, visit)?;
    Ok(assemble_bundle(&families, &negatives, det.num_classes(), &cfg.mil, recipe.selector_loss))
}
