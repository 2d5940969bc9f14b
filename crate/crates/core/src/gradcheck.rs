//! Finite-difference verification of the analytic loss gradients.

use rand::Rng;
use serde::Serialize;

use crate::data::{generate_scenes, LayoutSpec};
use crate::detector::{LossBundle, ToyDetector, Weights};
use crate::error::Result;
use crate::mil::{assemble_bundle, OaMilConfig};
use crate::noise::{perturb_dataset, NoiseSpec};
use crate::rng;
use crate::trainer::{scene_bags, Mode, TrainConfig};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Gradients smaller than this are compared in absolute rather than
/// relative terms.
pub const RELATIVE_FLOOR: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub configurations: usize,
    pub coordinates: usize,
    pub max_relative_error: f64,
    /// Every configuration had selector, classifier and generator terms.
    pub all_terms_covered: bool,
}

/// Compare analytic and central-difference gradients for every weight.
/// Returns the largest relative error.
pub fn check_bundle(det: &ToyDetector, bundle: &LossBundle, step: f64) -> f64 {
    let (_, grad) = det.gradients(bundle);
    let analytic = effective_gradient(det, &grad);
    let base = det.weights.to_vec();
    let c = det.num_classes();
    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate() {
        let eval = |delta: f64| {
            let mut w = base.clone();
            w[i] += delta;
            let probe = ToyDetector {
                weights: Weights::from_slice(c, &w),
                shared: det.shared,
            };
            probe.loss(bundle).total
        };
        let numeric = (eval(step) - eval(-step)) / (2.0 * step);
        worst = worst.max(relative_error(a, numeric));
    }
    worst
}

/// With shared heads the selector rows are unused, so their true partial
/// derivatives are zero regardless of what the gradient container holds.
fn effective_gradient(det: &ToyDetector, grad: &Weights) -> Vec<f64> {
    let mut g = grad.clone();
    if det.shared {
        for row in &mut g.selector {
            row.fill(0.0);
        }
    }
    g.to_vec()
}

/// A random detector and a loss bundle assembled by the real bag pipeline
/// on a small noisy scene.
pub fn random_case(seed: u64, index: u64) -> Result<(ToyDetector, LossBundle)> {
    let mut r = rng::stream(seed, rng::TAG_GRADCHECK, index);
    let classes = r.random_range(1..=3);
    let layout = LayoutSpec {
        width: 64,
        height: 64,
        min_objects: 1,
        max_objects: 2,
        num_classes: classes,
        min_size: 12.0,
        max_size: 28.0,
        ..LayoutSpec::default()
    };
    let scene_seed = r.random::<u64>();
    let clean = generate_scenes(1, &layout, scene_seed)?;
    let ds = perturb_dataset(&clean, &NoiseSpec::new(r.random_range(0.0..0.4), scene_seed)?)?;
    let shared = r.random_bool(0.5);
    let det = ToyDetector::random(classes, shared, 0.5, &mut r);
    let mode = [Mode::Naive, Mode::IsLossOnly, Mode::OaIs, Mode::OaIe][r.random_range(0..4)];
    let cfg = TrainConfig {
        mode,
        seed: scene_seed,
        mil: OaMilConfig {
            n_extend: r.random_range(0..=2),
            lambda: r.random_range(0.01..1.0),
            ..OaMilConfig::default()
        },
        proposals: crate::detector::ProposalSpec {
            per_object: 6,
            negatives: 6,
            ..Default::default()
        },
        ..TrainConfig::default()
    };
    let ann = ds.labeled_boxes(0)?;
    let (families, negatives) = scene_bags(&ds, 0, &ann, &det, &cfg, cfg.recipe(), 0)?;
    let bundle = assemble_bundle(&families, &negatives, classes, &cfg.mil, true);
    Ok((det, bundle))
}

/// Run `configurations` random cases.
pub fn gradient_check(seed: u64, configurations: usize) -> Result<GradCheckReport> {
    let mut report = GradCheckReport {
        configurations,
        coordinates: 0,
        max_relative_error: 0.0,
        all_terms_covered: true,
    };
    for i in 0..configurations {
        let (det, bundle) = random_case(seed, i as u64)?;
        report.all_terms_covered &= !bundle.selector_groups.is_empty()
            && !bundle.classifier_terms.is_empty()
            && !bundle.generator_terms.is_empty();
        report.coordinates += det.weights.len();
        report.max_relative_error = report.max_relative_error.max(check_bundle(&det, &bundle, FD_STEP));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let report = gradient_check(1, 20).unwrap();
        assert!(report.all_terms_covered);
        assert!(report.max_relative_error <= 1e-4, "{report:?}");
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(2.0, 2.0), 0.0);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
        assert!((relative_error(0.0, 1e-9) - 1e-5).abs() < 1e-18);
    }
}
