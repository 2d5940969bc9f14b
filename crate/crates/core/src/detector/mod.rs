//! The desk-scale detector.
//!
//! Three heads read the same scene feature vector:
//! - the instance selector `f`, one sigmoid-linear unit per class,
//! - the instance classifier `g`, same shape as `f`,
//! - the instance generator, a linear map to four box deltas per class.
//!
//! With `shared` set, `f` is evaluated with the classifier weights and its
//! gradient flows into them.

mod checkpoint;
mod loss;
mod proposals;

use rand::Rng;

use crate::data::{scene_features, Features, Scene, FEATURE_DIM};
use crate::error::{Error, Result};
use crate::geometry::{BBox, BoxDeltas};

pub use checkpoint::{load_checkpoint, parse_checkpoint, save_checkpoint, Checkpoint};
pub use loss::{smooth_l1, ClassifierTerm, GeneratorTerm, LossBreakdown, LossBundle, SelectorGroup};
pub(crate) use proposals::jitter_boxes;
pub use proposals::{anchor_grid, propose, propose_with, AnchorSpec, ProposalSpec, Proposals};

/// Logits are clamped to this magnitude so scores stay strictly inside (0, 1).
pub const LOGIT_CLAMP: f64 = 30.0;

/// Minimum side length of decoded boxes after clipping.
pub const DECODE_MIN_SIZE: f64 = 1.0;

pub type Row = [f64; FEATURE_DIM];

pub fn dot(w: &Row, x: &Features) -> f64 {
    w.iter().zip(x).map(|(a, b)| a * b).sum()
}

pub fn sigmoid(z: f64) -> f64 {
    let z = z.clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
    1.0 / (1.0 + (-z).exp())
}

/// Weight tensors of the three heads. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub selector: Vec<Row>,
    pub classifier: Vec<Row>,
    pub generator: Vec<[Row; 4]>,
}

impl Weights {
    pub fn zeros(num_classes: usize) -> Self {
        Weights {
            selector: vec![[0.0; FEATURE_DIM]; num_classes],
            classifier: vec![[0.0; FEATURE_DIM]; num_classes],
            generator: vec![[[0.0; FEATURE_DIM]; 4]; num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.len()
    }

    pub fn len(&self) -> usize {
        self.num_classes() * FEATURE_DIM * 6
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major flattening: selector, classifier, then generator.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend(self.selector.iter().flatten());
        v.extend(self.classifier.iter().flatten());
        v.extend(self.generator.iter().flatten().flatten());
        v
    }

    pub fn from_slice(num_classes: usize, v: &[f64]) -> Self {
        let mut w = Weights::zeros(num_classes);
        assert_eq!(v.len(), w.len(), "weight vector length");
        let mut it = v.iter().copied();
        for slot in w
            .selector
            .iter_mut()
            .flatten()
            .chain(w.classifier.iter_mut().flatten())
            .chain(w.generator.iter_mut().flatten().flatten())
        {
            *slot = it.next().unwrap();
        }
        w
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.selector
            .iter_mut()
            .flatten()
            .chain(self.classifier.iter_mut().flatten())
            .chain(self.generator.iter_mut().flatten().flatten())
    }

    pub fn is_finite(&self) -> bool {
        self.to_vec().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDetector {
    pub weights: Weights,
    pub shared: bool,
}

impl ToyDetector {
    pub fn new(num_classes: usize, shared: bool) -> Self {
        ToyDetector {
            weights: Weights::zeros(num_classes),
            shared,
        }
    }

    /// Uniform random weights in `[-scale, scale]`.
    pub fn random<R: Rng + ?Sized>(num_classes: usize, shared: bool, scale: f64, rng: &mut R) -> Self {
        let mut det = ToyDetector::new(num_classes, shared);
        for w in det.weights.iter_mut() {
            *w = rng.random_range(-scale..=scale);
        }
        det
    }

    pub fn num_classes(&self) -> usize {
        self.weights.num_classes()
    }

    fn selector_rows(&self) -> &[Row] {
        if self.shared {
            &self.weights.classifier
        } else {
            &self.weights.selector
        }
    }

    pub fn selector_logit(&self, class: usize, x: &Features) -> f64 {
        dot(&self.selector_rows()[class], x).clamp(-LOGIT_CLAMP, LOGIT_CLAMP)
    }

    pub fn classifier_logit(&self, class: usize, x: &Features) -> f64 {
        dot(&self.weights.classifier[class], x).clamp(-LOGIT_CLAMP, LOGIT_CLAMP)
    }

    pub fn selector_score(&self, class: usize, x: &Features) -> f64 {
        sigmoid(self.selector_logit(class, x))
    }

    pub fn classifier_score(&self, class: usize, x: &Features) -> f64 {
        sigmoid(self.classifier_logit(class, x))
    }

    pub fn deltas(&self, class: usize, x: &Features) -> BoxDeltas {
        let g = &self.weights.generator[class];
        BoxDeltas::from_array([dot(&g[0], x), dot(&g[1], x), dot(&g[2], x), dot(&g[3], x)])
    }
}

/// A candidate box with its features and (after scoring) per-class outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub bbox: BBox,
    pub features: Features,
    pub selector_scores: Vec<f64>,
    pub classifier_scores: Vec<f64>,
    /// Raw generator output per class, before decoding.
    pub deltas: Vec<BoxDeltas>,
    pub regressed: Vec<BBox>,
}

impl Candidate {
    pub fn new(scene: &Scene, bbox: BBox) -> Self {
        Candidate {
            bbox,
            features: scene_features(scene, &bbox),
            selector_scores: Vec::new(),
            classifier_scores: Vec::new(),
            deltas: Vec::new(),
            regressed: Vec::new(),
        }
    }

    pub fn is_scored(&self) -> bool {
        !self.classifier_scores.is_empty()
    }
}

/// Fill selector/classifier scores and regressed boxes for every candidate.
/// Regressed boxes are clipped to `bounds`.
pub fn score_and_regress(det: &ToyDetector, candidates: &mut [Candidate], bounds: &BBox) -> Result<()> {
    for c in candidates.iter_mut() {
        score_one(det, c, bounds)?;
    }
    Ok(())
}

pub(crate) fn score_one(det: &ToyDetector, c: &mut Candidate, bounds: &BBox) -> Result<()> {
    if let Some(index) = c.features.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteFeature { index });
    }
    let n = det.num_classes();
    c.selector_scores = (0..n).map(|k| det.selector_score(k, &c.features)).collect();
    c.classifier_scores = (0..n).map(|k| det.classifier_score(k, &c.features)).collect();
    c.deltas = (0..n).map(|k| det.deltas(k, &c.features)).collect();
    c.regressed = c
        .deltas
        .iter()
        .map(|d| c.bbox.decode(d).clip(bounds, DECODE_MIN_SIZE))
        .collect::<Result<_>>()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;

    fn scene() -> Scene {
        Scene::new(64.0, 64.0, 0.05).with_object(BBox::new(10.0, 12.0, 30.0, 40.0), 0, 0.9)
    }

    #[test]
    fn zero_weights_give_half_scores_and_identity_boxes() {
        let s = scene();
        let det = ToyDetector::new(2, false);
        let mut cands = vec![
            Candidate::new(&s, BBox::new(8.0, 8.0, 28.0, 36.0)),
            Candidate::new(&s, BBox::new(40.0, 40.0, 60.0, 60.0)),
        ];
        score_and_regress(&det, &mut cands, &s.bounds).unwrap();
        for c in &cands {
            assert!(c.selector_scores.iter().all(|&v| v == 0.5));
            assert!(c.classifier_scores.iter().all(|&v| v == 0.5));
            assert!(c.regressed.iter().all(|b| *b == c.bbox));
        }
    }

    #[test]
    fn shared_flag_aliases_selector_to_classifier() {
        let s = scene();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let det = ToyDetector::random(3, true, 0.5, &mut rng);
        let mut cands: Vec<_> = (0..20)
            .map(|i| Candidate::new(&s, BBox::new(i as f64, 5.0, i as f64 + 20.0, 35.0)))
            .collect();
        score_and_regress(&det, &mut cands, &s.bounds).unwrap();
        for c in &cands {
            assert_eq!(c.selector_scores, c.classifier_scores);
        }
    }

    #[test]
    fn hand_set_weights_match_hand_evaluation() {
        // two informative features (candidate coverage, object coverage) + bias
        let mut det = ToyDetector::new(1, false);
        det.weights.selector[0][0] = 1.5;
        det.weights.selector[0][1] = -0.5;
        det.weights.selector[0][15] = 0.25;
        det.weights.classifier[0][0] = -2.0;
        det.weights.classifier[0][1] = 3.0;
        let mut x = [0.0; FEATURE_DIM];
        x[0] = 0.4;
        x[1] = 0.8;
        x[15] = 1.0;
        let f = 1.0 / (1.0 + (-(1.5 * 0.4 - 0.5 * 0.8 + 0.25f64)).exp());
        let g = 1.0 / (1.0 + (-(-2.0 * 0.4 + 3.0 * 0.8f64)).exp());
        assert_abs_diff_eq!(det.selector_score(0, &x), f, epsilon = 1e-12);
        assert_abs_diff_eq!(det.classifier_score(0, &x), g, epsilon = 1e-12);
    }

    #[test]
    fn scores_strictly_inside_unit_interval() {
        let mut det = ToyDetector::new(1, false);
        det.weights.classifier[0][15] = 1e6;
        det.weights.selector[0][15] = -1e6;
        let mut x = [0.0; FEATURE_DIM];
        x[15] = 1.0;
        let (g, f) = (det.classifier_score(0, &x), det.selector_score(0, &x));
        assert!(g > 0.0 && g < 1.0);
        assert!(f > 0.0 && f < 1.0);
    }

    #[test]
    fn non_finite_feature_rejected() {
        let s = scene();
        let det = ToyDetector::new(1, false);
        let mut c = Candidate::new(&s, BBox::new(0.0, 0.0, 10.0, 10.0));
        c.features[3] = f64::NAN;
        let err = score_and_regress(&det, std::slice::from_mut(&mut c), &s.bounds).unwrap_err();
        assert!(matches!(err, Error::NonFiniteFeature { index: 3 }));
    }

    #[test]
    fn weights_flatten_round_trip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let det = ToyDetector::random(2, false, 1.0, &mut rng);
        let v = det.weights.to_vec();
        assert_eq!(v.len(), det.weights.len());
        assert_eq!(Weights::from_slice(2, &v), det.weights);
    }
}
