use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Candidate;
use crate::data::Scene;
use crate::error::Result;
use crate::geometry::BBox;
use crate::noise::{perturb_box, NoiseDeltas};
use crate::rng;

/// Training-time candidate sampling around annotated boxes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalSpec {
    /// Jittered candidates per annotated box.
    pub per_object: usize,
    /// Half-width of the uniform shift/scale jitter.
    pub jitter: f64,
    /// Background candidates per scene.
    pub negatives: usize,
    pub negative_min_size: f64,
    pub negative_max_size: f64,
    /// Background candidates must stay below this IoU with every annotated box.
    pub negative_max_iou: f64,
    /// Sampling attempts per requested background candidate.
    pub max_attempts: usize,
}

impl Default for ProposalSpec {
    fn default() -> Self {
        ProposalSpec {
            per_object: 32,
            jitter: 0.3,
            negatives: 32,
            negative_min_size: 8.0,
            negative_max_size: 64.0,
            negative_max_iou: 0.1,
            max_attempts: 50,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Proposals {
    /// For each annotated box in order: the box itself, then its jittered
    /// copies. Background candidates follow.
    pub candidates: Vec<Candidate>,
    /// Requested background candidates that could not be placed.
    pub missing_negatives: usize,
}

pub fn propose(scene: &Scene, noisy_gt: &[BBox], spec: &ProposalSpec, seed: u64) -> Result<Proposals> {
    let mut rng = rng::stream(seed, rng::TAG_PROPOSAL, 0);
    propose_with(scene, noisy_gt, spec, &mut rng)
}

pub fn propose_with<R: Rng + ?Sized>(
    scene: &Scene,
    noisy_gt: &[BBox],
    spec: &ProposalSpec,
    rng: &mut R,
) -> Result<Proposals> {
    let mut candidates = Vec::with_capacity(noisy_gt.len() * (spec.per_object + 1) + spec.negatives);
    for gt in noisy_gt {
        candidates.push(Candidate::new(scene, *gt));
        for b in jitter_boxes(gt, &scene.bounds, spec.per_object, spec.jitter, rng)? {
            candidates.push(Candidate::new(scene, b));
        }
    }
    let negatives = sample_background(&scene.bounds, noisy_gt, spec, rng);
    let missing_negatives = spec.negatives - negatives.len();
    if missing_negatives > 0 {
        log::warn!("placed {} of {} background candidates", negatives.len(), spec.negatives);
    }
    candidates.extend(negatives.into_iter().map(|b| Candidate::new(scene, b)));
    Ok(Proposals {
        candidates,
        missing_negatives,
    })
}

/// `count` copies of `center` perturbed by U(-magnitude, magnitude) shift
/// and scale, clipped to `bounds`.
pub(crate) fn jitter_boxes<R: Rng + ?Sized>(
    center: &BBox,
    bounds: &BBox,
    count: usize,
    magnitude: f64,
    rng: &mut R,
) -> Result<Vec<BBox>> {
    (0..count)
        .map(|_| {
            let d = NoiseDeltas::draw(rng, magnitude);
            perturb_box(center, &d)?.clip(bounds, 1.0)
        })
        .collect()
}

fn sample_background<R: Rng + ?Sized>(
    bounds: &BBox,
    noisy_gt: &[BBox],
    spec: &ProposalSpec,
    rng: &mut R,
) -> Vec<BBox> {
    let max_side = spec
        .negative_max_size
        .min(bounds.width())
        .min(bounds.height());
    let min_side = spec.negative_min_size.min(max_side);
    let mut out = Vec::with_capacity(spec.negatives);
    let mut attempts = spec.negatives * spec.max_attempts;
    while out.len() < spec.negatives && attempts > 0 {
        attempts -= 1;
        let w = rng.random_range(min_side..=max_side);
        let h = rng.random_range(min_side..=max_side);
        let x = bounds.x1 + rng.random_range(0.0..=bounds.width() - w);
        let y = bounds.y1 + rng.random_range(0.0..=bounds.height() - h);
        let b = BBox::new(x, y, x + w, y + h);
        if noisy_gt.iter().all(|g| g.iou(&b) < spec.negative_max_iou) {
            out.push(b);
        }
    }
    out
}

/// Dense anchors for inference: one box per stride cell, size and aspect ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSpec {
    pub stride: f64,
    pub sizes: Vec<f64>,
    /// Width / height.
    pub aspect_ratios: Vec<f64>,
}

impl Default for AnchorSpec {
    fn default() -> Self {
        AnchorSpec {
            stride: 8.0,
            sizes: vec![16.0, 24.0, 32.0, 48.0],
            aspect_ratios: vec![0.5, 1.0, 2.0],
        }
    }
}

pub fn anchor_grid(bounds: &BBox, spec: &AnchorSpec) -> Vec<BBox> {
    let nx = (bounds.width() / spec.stride).floor() as usize;
    let ny = (bounds.height() / spec.stride).floor() as usize;
    let mut out = Vec::with_capacity(nx * ny * spec.sizes.len() * spec.aspect_ratios.len());
    for j in 0..ny {
        for i in 0..nx {
            let cx = bounds.x1 + (i as f64 + 0.5) * spec.stride;
            let cy = bounds.y1 + (j as f64 + 0.5) * spec.stride;
            for &s in &spec.sizes {
                for &ar in &spec.aspect_ratios {
                    let (w, h) = (s * ar.sqrt(), s / ar.sqrt());
                    let b = BBox::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0);
                    // an in-bounds anchor never fails to clip
                    if let Ok(c) = b.clip(bounds, 1.0) {
                        out.push(c);
                    }
                }
            }
        }
    }
    out
}
