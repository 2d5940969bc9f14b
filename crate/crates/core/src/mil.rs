//! Object-aware multiple instance learning.
//!
//! Every annotated object is a positive bag whose instances are candidate
//! boxes assigned to it, with the (possibly inaccurate) annotation itself at
//! index 0. Background candidates form negative bags. Training picks the
//! most positive instance of each positive bag, merges it with the
//! annotation through the bounded weight `phi`, optionally re-proposes new
//! bags around the merged box, and uses the final merged box as the target
//! for instance labels and box regression.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{LabeledBox, Scene};
use crate::detector::{
    score_and_regress, smooth_l1, Candidate, ClassifierTerm, GeneratorTerm, LossBreakdown, LossBundle,
    ProposalSpec, SelectorGroup, ToyDetector,
};
use crate::error::{Error, Result};
use crate::geometry::BBox;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OaMilConfig {
    /// Exponent of the selection weight.
    pub gamma: f64,
    /// Cap on the selection weight.
    pub theta: f64,
    /// Number of bag extension rounds.
    pub n_extend: usize,
    /// Weight of the selector hinge loss.
    pub lambda: f64,
    /// Instances at or above this IoU with the merged box are positive.
    pub label_iou: f64,
    /// Candidates at or above this IoU with an annotation join its bag.
    pub assign_iou: f64,
    pub negative_bag_size: usize,
    /// Smooth-L1 transition point.
    pub beta: f64,
}

impl Default for OaMilConfig {
    fn default() -> Self {
        OaMilConfig {
            gamma: 7.5,
            theta: 0.85,
            n_extend: 4,
            lambda: 0.1,
            label_iou: 0.5,
            assign_iou: 0.5,
            negative_bag_size: 16,
            beta: 1.0,
        }
    }
}

impl OaMilConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be positive");
        }
        // theta = 0 is allowed: it collapses the merge onto the annotation
        if !(0.0..=1.0).contains(&self.theta) {
            return bad("theta must lie in [0, 1]");
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be positive");
        }
        if !(0.0..=1.0).contains(&self.label_iou) || !(0.0..=1.0).contains(&self.assign_iou) {
            return bad("IoU thresholds must lie in [0, 1]");
        }
        if self.negative_bag_size == 0 {
            return bad("negative bags need at least one instance");
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad("beta must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BagLabel {
    Positive,
    Negative,
}

impl BagLabel {
    pub fn sign(self) -> f64 {
        match self {
            BagLabel::Positive => 1.0,
            BagLabel::Negative => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    pub label: BagLabel,
    pub instances: Vec<Candidate>,
    /// The annotation (stage 0) or the previous stage's merged box.
    /// Present exactly for positive bags.
    pub anchor_gt: Option<BBox>,
    pub class_id: Option<usize>,
    pub stage: usize,
}

impl Bag {
    pub fn positive(anchor: BBox, class_id: usize, instances: Vec<Candidate>, stage: usize) -> Self {
        Bag {
            label: BagLabel::Positive,
            instances,
            anchor_gt: Some(anchor),
            class_id: Some(class_id),
            stage,
        }
    }

    pub fn negative(instances: Vec<Candidate>) -> Self {
        Bag {
            label: BagLabel::Negative,
            instances,
            anchor_gt: None,
            class_id: None,
            stage: 0,
        }
    }

    pub fn is_positive(&self) -> bool {
        self.label == BagLabel::Positive
    }

    /// Per-instance selector scores: at the bag's class for positive bags,
    /// the largest class score for negative bags.
    pub fn selector_scores(&self) -> Vec<f64> {
        self.instances
            .iter()
            .map(|c| match self.class_id {
                Some(k) => c.selector_scores[k],
                None => c.selector_scores.iter().copied().fold(f64::MIN, f64::max),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionResult {
    /// Index of the most positive instance.
    pub index: usize,
    /// Merged training target.
    pub b_star: BBox,
    /// Weight on the selected instance in the merge.
    pub weight: f64,
}

/// How the training target of a positive bag is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TargetRule {
    /// The annotation itself.
    Annotation,
    /// The most positive instance.
    Selected,
    /// Bounded merge of the most positive instance and the annotation.
    ObjectAware,
}

/// Group candidates into bags.
///
/// Each annotation becomes a positive bag holding the annotation box at
/// index 0 followed by every candidate whose best-IoU annotation it is at
/// IoU >= `cfg.assign_iou` (ties to the lowest annotation index). Exact
/// copies of the annotation box are not repeated. Remaining candidates are
/// split, in order, into negative bags of at most `cfg.negative_bag_size`.
pub fn build_bags(scene: &Scene, candidates: &[Candidate], noisy_gt: &[LabeledBox], cfg: &OaMilConfig) -> Vec<Bag> {
    let mut positives: Vec<Bag> = noisy_gt
        .iter()
        .map(|gt| {
            let own = candidates
                .iter()
                .find(|c| c.bbox == gt.bbox)
                .cloned()
                .unwrap_or_else(|| Candidate::new(scene, gt.bbox));
            Bag::positive(gt.bbox, gt.class_id, vec![own], 0)
        })
        .collect();
    let mut leftovers = Vec::new();
    for c in candidates {
        let mut best: Option<(usize, f64)> = None;
        for (i, gt) in noisy_gt.iter().enumerate() {
            let iou = c.bbox.iou(&gt.bbox);
            if best.is_none_or(|(_, b)| iou > b) {
                best = Some((i, iou));
            }
        }
        match best {
            Some((i, iou)) if iou >= cfg.assign_iou => {
                if c.bbox != noisy_gt[i].bbox {
                    positives[i].instances.push(c.clone());
                }
            }
            _ => leftovers.push(c.clone()),
        }
    }
    let mut bags = positives;
    for chunk in leftovers.chunks(cfg.negative_bag_size) {
        bags.push(Bag::negative(chunk.to_vec()));
    }
    bags
}

/// Index of the highest score, lowest index on ties.
pub fn select_most_positive(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Bounded exponential weight `min(x^gamma, theta)` for `x` in [0, 1].
pub fn phi(x: f64, gamma: f64, theta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::OutOfRange { value: x });
    }
    Ok(x.powf(gamma).min(theta))
}

/// Merge instance `index` of a positive bag with the bag's anchor box:
/// `phi(s) * b + (1 - phi(s)) * anchor` per corner, where `s` is the
/// instance's selector score from `scores`.
pub fn oa_select(bag: &Bag, index: usize, scores: &[f64], cfg: &OaMilConfig) -> Result<SelectionResult> {
    let anchor = bag.anchor_gt.ok_or(Error::NegativeBag)?;
    let weight = phi(scores[index], cfg.gamma, cfg.theta)?;
    Ok(SelectionResult {
        index,
        b_star: bag.instances[index].bbox.lerp(&anchor, weight),
        weight,
    })
}

/// Select and form the target of one positive bag under `rule`.
pub fn select_target(bag: &Bag, rule: TargetRule, cfg: &OaMilConfig) -> Result<SelectionResult> {
    let anchor = bag.anchor_gt.ok_or(Error::NegativeBag)?;
    let scores = bag.selector_scores();
    let index = select_most_positive(&scores);
    match rule {
        TargetRule::Annotation => Ok(SelectionResult {
            index,
            b_star: anchor,
            weight: 0.0,
        }),
        TargetRule::Selected => Ok(SelectionResult {
            index,
            b_star: bag.instances[index].bbox,
            weight: 1.0,
        }),
        TargetRule::ObjectAware => oa_select(bag, index, &scores, cfg),
    }
}

/// A positive bag with its extension stages and final target.
#[derive(Debug, Clone)]
pub struct BagFamily {
    /// Stages `0..=n_extend`; stage `k + 1` is built around stage `k`'s target.
    pub stages: Vec<Bag>,
    /// Target from the last stage.
    pub selection: SelectionResult,
}

impl BagFamily {
    pub fn initial(&self) -> &Bag {
        &self.stages[0]
    }
}

/// Recursively extend a scored positive bag `rounds` times.
///
/// Stage `k + 1` holds stage `k`'s merged box followed by
/// `spec.per_object` jittered copies of it, scored by `det`. The returned
/// selection is the last stage's target. Negative bags are never extended.
#[allow(clippy::too_many_arguments)]
pub fn extend_bags<R: Rng + ?Sized>(
    bag: &Bag,
    det: &ToyDetector,
    scene: &Scene,
    rounds: usize,
    rule: TargetRule,
    cfg: &OaMilConfig,
    spec: &ProposalSpec,
    rng: &mut R,
) -> Result<BagFamily> {
    let class_id = bag.class_id.ok_or(Error::NegativeBag)?;
    let mut selection = select_target(bag, rule, cfg)?;
    let mut stages = vec![bag.clone()];
    for k in 1..=rounds {
        let anchor = selection.b_star;
        let boxes = crate::detector::jitter_boxes(&anchor, &scene.bounds, spec.per_object, spec.jitter, rng)?;
        let mut instances: Vec<Candidate> = std::iter::once(anchor)
            .chain(boxes)
            .map(|b| Candidate::new(scene, b))
            .collect();
        score_and_regress(det, &mut instances, &scene.bounds)?;
        let next = Bag::positive(anchor, class_id, instances, k);
        selection = select_target(&next, rule, cfg)?;
        stages.push(next);
    }
    Ok(BagFamily { stages, selection })
}

/// `max(0, 1 - y * (2 * max(scores) - 1))`.
pub fn hinge(label: BagLabel, scores: &[f64]) -> f64 {
    let best = scores.iter().copied().fold(f64::MIN, f64::max);
    (1.0 - label.sign() * (2.0 * best - 1.0)).max(0.0)
}

/// Hinge loss summed over every bag given (all stages of a family plus
/// negative bags).
pub fn selector_loss<'a>(bags: impl IntoIterator<Item = &'a Bag>) -> f64 {
    bags.into_iter()
        .map(|b| hinge(b.label, &b.selector_scores()))
        .sum()
}

/// +1 for instances of a positive bag with IoU >= `threshold` against the
/// target, -1 otherwise.
pub fn label_instances(bag: &Bag, b_star: Option<&BBox>, threshold: f64) -> Vec<f64> {
    bag.instances
        .iter()
        .map(|c| match (bag.label, b_star) {
            (BagLabel::Positive, Some(t)) if c.bbox.iou(t) >= threshold => 1.0,
            _ => -1.0,
        })
        .collect()
}

/// Binary log-loss `-sum ln(y * (g - 1/2) + 1/2)`.
pub fn classifier_loss(labels: &[f64], scores: &[f64]) -> f64 {
    labels
        .iter()
        .zip(scores)
        .map(|(&y, &g)| -(y * (g - 0.5) + 0.5).ln())
        .sum()
}

/// Classifier loss of a bag over every class: instances take their label at
/// the bag's class and -1 at all other classes.
pub fn bag_classifier_loss(bag: &Bag, labels: &[f64]) -> f64 {
    let n = bag.instances.first().map_or(0, |c| c.classifier_scores.len());
    (0..n)
        .map(|k| {
            let y: Vec<f64> = labels
                .iter()
                .map(|&l| if Some(k) == bag.class_id { l } else { -1.0 })
                .collect();
            let g: Vec<f64> = bag.instances.iter().map(|c| c.classifier_scores[k]).collect();
            classifier_loss(&y, &g)
        })
        .sum()
}

/// Smooth-L1 regression loss of a positive bag toward `b_star`, over its
/// positively labelled instances. Negative bags contribute 0.
pub fn generator_loss(bag: &Bag, labels: &[f64], b_star: &BBox, beta: f64) -> f64 {
    let Some(k) = bag.class_id.filter(|_| bag.is_positive()) else {
        return 0.0;
    };
    bag.instances
        .iter()
        .zip(labels)
        .filter(|(_, &y)| y > 0.0)
        .map(|(c, _)| {
            let target = b_star.encode(&c.bbox).to_array();
            let pred = c.deltas[k].to_array();
            pred.iter().zip(target).map(|(p, t)| smooth_l1(p - t, beta)).sum::<f64>()
        })
        .sum()
}

/// The joint objective: `lambda * selector + classifier + generator`.
///
/// The selector sums over every stage of every family and over negative
/// bags; classifier and generator terms use stage 0 only.
pub fn total_loss(families: &[BagFamily], negatives: &[Bag], cfg: &OaMilConfig) -> LossBreakdown {
    let mut out = LossBreakdown::default();
    for f in families {
        out.selector += selector_loss(&f.stages);
        let bag = f.initial();
        let labels = label_instances(bag, Some(&f.selection.b_star), cfg.label_iou);
        out.classifier += bag_classifier_loss(bag, &labels);
        out.generator += generator_loss(bag, &labels, &f.selection.b_star, cfg.beta);
    }
    for bag in negatives {
        out.selector += selector_loss(std::iter::once(bag));
        let labels = label_instances(bag, None, cfg.label_iou);
        out.classifier += bag_classifier_loss(bag, &labels);
    }
    out.total = cfg.lambda * out.selector + out.classifier + out.generator;
    out
}

/// Freeze families and negative bags into a loss bundle for the gradient
/// step. With `selector` false the hinge terms are left out.
pub fn assemble_bundle(
    families: &[BagFamily],
    negatives: &[Bag],
    num_classes: usize,
    cfg: &OaMilConfig,
    selector: bool,
) -> LossBundle {
    let mut bundle = LossBundle {
        lambda: cfg.lambda,
        beta: cfg.beta,
        ..Default::default()
    };

    let push_group = |bundle: &mut LossBundle, bag: &Bag| -> Vec<usize> {
        let start = bundle.features.len();
        bundle.features.extend(bag.instances.iter().map(|c| c.features));
        let ids: Vec<usize> = (start..bundle.features.len()).collect();
        if selector {
            let members = match bag.class_id {
                Some(k) => ids.iter().map(|&i| (i, k)).collect(),
                None => ids
                    .iter()
                    .flat_map(|&i| (0..num_classes).map(move |k| (i, k)))
                    .collect(),
            };
            bundle.selector_groups.push(SelectorGroup {
                label: bag.label.sign(),
                members,
            });
        }
        ids
    };

    for f in families {
        let bag = f.initial();
        let ids = push_group(&mut bundle, bag);
        let labels = label_instances(bag, Some(&f.selection.b_star), cfg.label_iou);
        let k = bag.class_id.expect("family stages are positive bags");
        for ((&i, c), &y) in ids.iter().zip(&bag.instances).zip(&labels) {
            for class in 0..num_classes {
                bundle.classifier_terms.push(ClassifierTerm {
                    feature: i,
                    class,
                    label: if class == k { y } else { -1.0 },
                });
            }
            if y > 0.0 {
                bundle.generator_terms.push(GeneratorTerm {
                    feature: i,
                    class: k,
                    target: f.selection.b_star.encode(&c.bbox).to_array(),
                });
            }
        }
        for stage in &f.stages[1..] {
            push_group(&mut bundle, stage);
        }
    }
    for bag in negatives {
        let ids = push_group(&mut bundle, bag);
        for &i in &ids {
            for class in 0..num_classes {
                bundle.classifier_terms.push(ClassifierTerm {
                    feature: i,
                    class,
                    label: -1.0,
                });
            }
        }
    }
    bundle
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FEATURE_DIM;
    use approx::assert_abs_diff_eq;

    fn cand(b: BBox, score: f64) -> Candidate {
        Candidate {
            bbox: b,
            features: [0.0; FEATURE_DIM],
            selector_scores: vec![score],
            classifier_scores: vec![score],
            deltas: vec![Default::default()],
            regressed: vec![b],
        }
    }

    fn scene() -> Scene {
        Scene::new(100.0, 100.0, 0.1)
    }

    fn lb(b: BBox, class_id: usize) -> LabeledBox {
        LabeledBox { bbox: b, class_id }
    }

    #[test]
    fn single_object_bag_holds_everything() {
        let gt = BBox::new(10.0, 10.0, 30.0, 30.0);
        let cands: Vec<_> = [
            gt,
            BBox::new(11.0, 10.0, 31.0, 30.0),
            BBox::new(10.0, 12.0, 30.0, 31.0),
        ]
        .into_iter()
        .map(|b| cand(b, 0.5))
        .collect();
        let bags = build_bags(&scene(), &cands, &[lb(gt, 0)], &OaMilConfig::default());
        assert_eq!(bags.len(), 1);
        assert_eq!(bags[0].instances.len(), 3);
        assert_eq!(bags[0].instances[0].bbox, gt);
        assert_eq!(bags[0].anchor_gt, Some(gt));
    }

    #[test]
    fn candidate_goes_to_best_annotation_only() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        let b = BBox::new(2.0, 0.0, 12.0, 10.0);
        let c = BBox::new(1.5, 0.0, 11.5, 10.0);
        assert!(c.iou(&b) > c.iou(&a) && c.iou(&a) >= 0.5);
        let bags = build_bags(&scene(), &[cand(c, 0.5)], &[lb(a, 0), lb(b, 0)], &OaMilConfig::default());
        assert_eq!(bags[0].instances.len(), 1);
        assert_eq!(bags[1].instances.len(), 2);
        assert_eq!(bags[1].instances[1].bbox, c);
    }

    #[test]
    fn background_only_scene_gives_negative_bags() {
        let cands: Vec<_> = (0..40)
            .map(|i| cand(BBox::new(i as f64, 0.0, i as f64 + 5.0, 5.0), 0.5))
            .collect();
        let bags = build_bags(&scene(), &cands, &[], &OaMilConfig::default());
        assert_eq!(bags.len(), 3);
        assert!(bags.iter().all(|b| !b.is_positive() && b.anchor_gt.is_none()));
        assert_eq!(bags.iter().map(|b| b.instances.len()).collect::<Vec<_>>(), vec![16, 16, 8]);
    }

    #[test]
    fn argmax_examples() {
        assert_eq!(select_most_positive(&[0.2, 0.9, 0.5]), 1);
        assert_eq!(select_most_positive(&[0.7, 0.7]), 0);
        assert_eq!(select_most_positive(&[0.3]), 0);
    }

    #[test]
    fn phi_examples() {
        assert_eq!(phi(0.0, 7.5, 0.85).unwrap(), 0.0);
        assert_eq!(phi(1.0, 7.5, 0.85).unwrap(), 0.85);
        // 0.9^7.5 to 30 digits: 0.453752280539336793755742475720
        assert_abs_diff_eq!(phi(0.9, 7.5, 0.85).unwrap(), 0.453_752_280_539_336_8, epsilon = 1e-15);
        assert!(phi(1.01, 7.5, 0.85).is_err());
        assert!(phi(-0.01, 7.5, 0.85).is_err());
    }

    #[test]
    fn oa_select_examples() {
        let cfg = OaMilConfig::default();
        let z = BBox::new(2.0, 2.0, 6.0, 6.0);
        let b = BBox::new(0.0, 0.0, 4.0, 4.0);
        let bag = Bag::positive(z, 0, vec![cand(z, 0.0), cand(b, 0.0)], 0);
        let r = oa_select(&bag, 1, &[0.0, 0.0], &cfg).unwrap();
        assert_eq!(r.b_star, z);
        let r = oa_select(&bag, 1, &[0.0, 1.0], &cfg).unwrap();
        let want = [0.85 * 0.0 + 0.15 * 2.0, 0.85 * 0.0 + 0.15 * 2.0, 0.85 * 4.0 + 0.15 * 6.0, 0.85 * 4.0 + 0.15 * 6.0];
        for (g, w) in r.b_star.to_array().iter().zip(want) {
            assert_abs_diff_eq!(*g, w, epsilon = 1e-12);
        }
        // weight 0.5: gamma = 1, theta = 1, score 0.5
        let half = OaMilConfig {
            gamma: 1.0,
            theta: 1.0,
            ..cfg.clone()
        };
        let r = oa_select(&bag, 1, &[0.0, 0.5], &half).unwrap();
        assert_eq!(r.b_star, BBox::new(1.0, 1.0, 5.0, 5.0));
        let neg = Bag::negative(vec![cand(b, 0.5)]);
        assert!(matches!(oa_select(&neg, 0, &[0.5], &cfg), Err(Error::NegativeBag)));
    }

    #[test]
    fn hinge_examples() {
        assert_eq!(hinge(BagLabel::Positive, &[0.3, 1.0]), 0.0);
        assert_abs_diff_eq!(hinge(BagLabel::Positive, &[0.6, 0.1]), 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(hinge(BagLabel::Negative, &[0.6, 0.1]), 1.2, epsilon = 1e-12);
    }

    #[test]
    fn labels_inclusive_at_threshold() {
        let t = BBox::new(0.0, 0.0, 2.0, 1.0);
        let half = BBox::new(0.0, 0.0, 1.0, 1.0); // IoU exactly 0.5
        let below = BBox::new(0.0, 0.0, 0.98, 1.0); // IoU 0.49
        assert_eq!(half.iou(&t), 0.5);
        assert_abs_diff_eq!(below.iou(&t), 0.49, epsilon = 1e-12);
        let bag = Bag::positive(t, 0, vec![cand(half, 0.5), cand(below, 0.5)], 0);
        assert_eq!(label_instances(&bag, Some(&t), 0.5), vec![1.0, -1.0]);
        let neg = Bag::negative(vec![cand(t, 0.9)]);
        assert_eq!(label_instances(&neg, Some(&t), 0.5), vec![-1.0]);
    }

    #[test]
    fn classifier_loss_examples() {
        assert!(classifier_loss(&[1.0], &[1.0 - 1e-12]) < 1e-11);
        assert_abs_diff_eq!(classifier_loss(&[1.0], &[0.5]), std::f64::consts::LN_2, epsilon = 1e-15);
        assert_abs_diff_eq!(classifier_loss(&[-1.0], &[0.5]), std::f64::consts::LN_2, epsilon = 1e-15);
        assert_abs_diff_eq!(classifier_loss(&[-1.0], &[0.2]), -(0.8f64).ln(), epsilon = 1e-15);
    }

    #[test]
    fn generator_loss_examples() {
        let b = BBox::new(0.0, 0.0, 10.0, 10.0);
        let neg = Bag::negative(vec![cand(b, 0.5)]);
        assert_eq!(generator_loss(&neg, &[1.0], &b, 1.0), 0.0);
        let mut c = cand(b, 0.5);
        let target = BBox::new(1.0, 0.0, 11.0, 10.0);
        c.deltas = vec![target.encode(&b)];
        let bag = Bag::positive(b, 0, vec![c.clone()], 0);
        assert_eq!(generator_loss(&bag, &[1.0], &target, 1.0), 0.0);
        c.deltas[0].dx += 0.5;
        let bag = Bag::positive(b, 0, vec![c], 0);
        assert_abs_diff_eq!(generator_loss(&bag, &[1.0], &target, 1.0), 0.125, epsilon = 1e-12);
        assert_eq!(generator_loss(&bag, &[-1.0], &target, 1.0), 0.0);
    }

    #[test]
    fn total_loss_arithmetic() {
        let cfg = OaMilConfig {
            lambda: 0.1,
            ..Default::default()
        };
        let parts = LossBreakdown {
            selector: 2.0,
            classifier: 1.0,
            generator: 0.5,
            total: 0.0,
        };
        let total = cfg.lambda * parts.selector + parts.classifier + parts.generator;
        assert_abs_diff_eq!(total, 1.7, epsilon = 1e-12);
        assert_eq!(total_loss(&[], &[], &cfg).total, 0.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_box() -> impl Strategy<Value = BBox> {
            (0.0..80.0f64, 0.0..80.0f64, 0.5..40.0f64, 0.5..40.0f64)
                .prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h))
        }

        fn arb_bag() -> impl Strategy<Value = (Bag, Option<BBox>)> {
            (
                any::<bool>(),
                prop::collection::vec((arb_box(), 0.0..1.0f64), 1..=6),
                arb_box(),
            )
                .prop_map(|(pos, inst, target)| {
                    let instances = inst.into_iter().map(|(b, s)| cand(b, s)).collect();
                    if pos {
                        (Bag::positive(target, 0, instances, 0), Some(target))
                    } else {
                        (Bag::negative(instances), None)
                    }
                })
        }

        proptest! {
            #[test]
            fn phi_is_monotone_and_bounded(a in 0.0..=1.0f64, b in 0.0..=1.0f64, gamma in 0.1..20.0f64, theta in 0.0..=1.0f64) {
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                let (pl, ph) = (phi(lo, gamma, theta).unwrap(), phi(hi, gamma, theta).unwrap());
                prop_assert!(pl <= ph);
                prop_assert!((0.0..=theta).contains(&ph));
                prop_assert_eq!(phi(0.0, gamma, theta).unwrap(), 0.0);
                prop_assert_eq!(phi(1.0, gamma, theta).unwrap(), theta.min(1.0));
            }

            #[test]
            fn merge_stays_in_convex_hull(b in arb_box(), z in arb_box(), s in 0.0..=1.0f64) {
                let cfg = OaMilConfig::default();
                let bag = Bag::positive(z, 0, vec![cand(b, s)], 0);
                let r = oa_select(&bag, 0, &[s], &cfg).unwrap();
                for ((m, p), q) in r.b_star.to_array().iter().zip(b.to_array()).zip(z.to_array()) {
                    prop_assert!(*m >= p.min(q) && *m <= p.max(q));
                }
                // the same merge in center form
                let w = r.weight;
                let (bc, zc) = (b.to_center(), z.to_center());
                let mc = r.b_star.to_center();
                for (m, (p, q)) in [mc.cx, mc.cy, mc.w, mc.h].iter().zip([(bc.cx, zc.cx), (bc.cy, zc.cy), (bc.w, zc.w), (bc.h, zc.h)]) {
                    prop_assert!((m - (w * p + (1.0 - w) * q)).abs() <= 1e-9);
                }
            }

            #[test]
            fn argmax_invariant_under_increasing_maps(scores in prop::collection::vec(0.0..1.0f64, 1..12)) {
                let j = select_most_positive(&scores);
                let mapped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
                prop_assert_eq!(select_most_positive(&mapped), j);
                let cubed: Vec<f64> = scores.iter().map(|s| s * s * s).collect();
                prop_assert_eq!(select_most_positive(&cubed), j);
            }

            #[test]
            fn selector_loss_and_labels_match_enumeration((bag, target) in arb_bag(), thr in 0.0..=1.0f64) {
                // oracle: evaluate every instance directly
                let y = bag.label.sign();
                let mut best = f64::MIN;
                for c in &bag.instances {
                    best = best.max(c.selector_scores[0]);
                }
                let expected = (1.0 - y * (2.0 * best - 1.0)).max(0.0);
                prop_assert_eq!(selector_loss(std::iter::once(&bag)), expected);
                let labels = label_instances(&bag, target.as_ref(), thr);
                for (c, l) in bag.instances.iter().zip(&labels) {
                    let want = match target {
                        Some(t) if y > 0.0 && c.bbox.iou(&t) >= thr => 1.0,
                        _ => -1.0,
                    };
                    prop_assert_eq!(*l, want);
                }
            }

            #[test]
            fn collapsed_merge_targets_the_annotation(z in arb_box(), others in prop::collection::vec((arb_box(), 0.0..1.0f64), 0..6)) {
                let cfg = OaMilConfig { theta: 0.0, n_extend: 0, ..Default::default() };
                let mut instances = vec![cand(z, 0.3)];
                instances.extend(others.into_iter().map(|(b, s)| cand(b, s)));
                let bag = Bag::positive(z, 0, instances, 0);
                let oa = select_target(&bag, TargetRule::ObjectAware, &cfg).unwrap();
                let naive = select_target(&bag, TargetRule::Annotation, &cfg).unwrap();
                prop_assert_eq!(oa.b_star, naive.b_star);
            }
        }
    }
}
