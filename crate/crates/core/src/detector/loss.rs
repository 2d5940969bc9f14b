//! Frozen per-iteration loss terms and their analytic gradients.
//!
//! Bag memberships, instance labels and regression targets are fixed when
//! the bundle is assembled, so the loss is a smooth function of the weights
//! apart from the max inside each hinge group.

use super::{dot, sigmoid, ToyDetector, Weights, LOGIT_CLAMP};
use crate::data::Features;

/// One hinge term `max(0, 1 - y * (2 * max_m f_m - 1))` over `members`,
/// each a `(feature index, class)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectorGroup {
    pub label: f64,
    pub members: Vec<(usize, usize)>,
}

/// Binary log-loss on the classifier score of one instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierTerm {
    pub feature: usize,
    pub class: usize,
    /// +1 or -1.
    pub label: f64,
}

/// Smooth-L1 between predicted deltas and `target`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorTerm {
    pub feature: usize,
    pub class: usize,
    pub target: [f64; 4],
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossBundle {
    pub features: Vec<Features>,
    pub selector_groups: Vec<SelectorGroup>,
    pub classifier_terms: Vec<ClassifierTerm>,
    pub generator_terms: Vec<GeneratorTerm>,
    /// Weight of the selector hinge terms.
    pub lambda: f64,
    /// Smooth-L1 transition point.
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    /// Unweighted hinge sum; the total adds `lambda` times this.
    pub selector: f64,
    pub classifier: f64,
    pub generator: f64,
    pub total: f64,
}

impl LossBundle {
    pub fn merge(&mut self, other: LossBundle) {
        let offset = self.features.len();
        self.features.extend(other.features);
        self.selector_groups.extend(other.selector_groups.into_iter().map(|mut g| {
            for m in &mut g.members {
                m.0 += offset;
            }
            g
        }));
        self.classifier_terms
            .extend(other.classifier_terms.into_iter().map(|mut t| {
                t.feature += offset;
                t
            }));
        self.generator_terms
            .extend(other.generator_terms.into_iter().map(|mut t| {
                t.feature += offset;
                t
            }));
    }
}

pub fn smooth_l1(e: f64, beta: f64) -> f64 {
    let a = e.abs();
    if a < beta {
        0.5 * a * a / beta
    } else {
        a - 0.5 * beta
    }
}

fn smooth_l1_grad(e: f64, beta: f64) -> f64 {
    if e.abs() < beta {
        e / beta
    } else {
        e.signum()
    }
}

/// `-ln(sigmoid(z))` for label +1 and `-ln(1 - sigmoid(z))` for label -1.
fn log_loss(z: f64, label: f64) -> f64 {
    let m = if label > 0.0 { -z } else { z };
    // softplus(m)
    if m > 0.0 {
        m + (-m).exp().ln_1p()
    } else {
        m.exp().ln_1p()
    }
}

fn clamped(z: f64) -> (f64, bool) {
    if z.abs() > LOGIT_CLAMP {
        (z.clamp(-LOGIT_CLAMP, LOGIT_CLAMP), false)
    } else {
        (z, true)
    }
}

fn axpy(row: &mut [f64], a: f64, x: &Features) {
    for (r, v) in row.iter_mut().zip(x) {
        *r += a * v;
    }
}

impl ToyDetector {
    pub fn loss(&self, bundle: &LossBundle) -> LossBreakdown {
        self.evaluate(bundle, None)
    }

    /// Loss and its gradient with respect to every weight. With `shared`
    /// set, selector gradients land in the classifier rows.
    pub fn gradients(&self, bundle: &LossBundle) -> (LossBreakdown, Weights) {
        let mut grad = Weights::zeros(self.num_classes());
        let loss = self.evaluate(bundle, Some(&mut grad));
        (loss, grad)
    }

    fn evaluate(&self, bundle: &LossBundle, mut grad: Option<&mut Weights>) -> LossBreakdown {
        let x = &bundle.features;
        let mut out = LossBreakdown::default();

        for group in &bundle.selector_groups {
            let mut best: Option<(usize, usize, f64)> = None;
            for &(i, c) in &group.members {
                let z = dot(self.selector_row(c), &x[i]);
                if best.is_none_or(|(_, _, bz)| z > bz) {
                    best = Some((i, c, z));
                }
            }
            let Some((i, c, z)) = best else { continue };
            let (zc, live) = clamped(z);
            let s = sigmoid(zc);
            let margin = 1.0 - group.label * (2.0 * s - 1.0);
            if margin > 0.0 {
                out.selector += margin;
                if let (Some(g), true) = (grad.as_deref_mut(), live) {
                    let dz = -2.0 * group.label * s * (1.0 - s) * bundle.lambda;
                    let row = if self.shared {
                        &mut g.classifier[c]
                    } else {
                        &mut g.selector[c]
                    };
                    axpy(row, dz, &x[i]);
                }
            }
        }

        for t in &bundle.classifier_terms {
            let z = dot(&self.weights.classifier[t.class], &x[t.feature]);
            let (zc, live) = clamped(z);
            out.classifier += log_loss(zc, t.label);
            if let (Some(g), true) = (grad.as_deref_mut(), live) {
                let s = sigmoid(zc);
                let dz = if t.label > 0.0 { s - 1.0 } else { s };
                axpy(&mut g.classifier[t.class], dz, &x[t.feature]);
            }
        }

        for t in &bundle.generator_terms {
            let rows = &self.weights.generator[t.class];
            for k in 0..4 {
                let e = dot(&rows[k], &x[t.feature]) - t.target[k];
                out.generator += smooth_l1(e, bundle.beta);
                if let Some(g) = grad.as_deref_mut() {
                    axpy(&mut g.generator[t.class][k], smooth_l1_grad(e, bundle.beta), &x[t.feature]);
                }
            }
        }

        out.total = bundle.lambda * out.selector + out.classifier + out.generator;
        out
    }

    fn selector_row(&self, class: usize) -> &super::Row {
        if self.shared {
            &self.weights.classifier[class]
        } else {
            &self.weights.selector[class]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FEATURE_DIM;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_features(rng: &mut ChaCha8Rng) -> Features {
        let mut f = [0.0; FEATURE_DIM];
        for v in f.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        f[FEATURE_DIM - 1] = 1.0;
        f
    }

    #[test]
    fn smooth_l1_half_error() {
        assert_abs_diff_eq!(smooth_l1(0.5, 1.0), 0.125, epsilon = 1e-15);
        assert_abs_diff_eq!(smooth_l1(-2.0, 1.0), 1.5, epsilon = 1e-15);
    }

    #[test]
    fn single_positive_log_loss_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let det = ToyDetector::random(1, false, 0.4, &mut rng);
        let x = random_features(&mut rng);
        let bundle = LossBundle {
            features: vec![x],
            classifier_terms: vec![ClassifierTerm {
                feature: 0,
                class: 0,
                label: 1.0,
            }],
            lambda: 0.1,
            beta: 1.0,
            ..Default::default()
        };
        let (loss, grad) = det.gradients(&bundle);
        let g = det.classifier_score(0, &x);
        assert_abs_diff_eq!(loss.classifier, -g.ln(), epsilon = 1e-12);
        for k in 0..FEATURE_DIM {
            assert_abs_diff_eq!(grad.classifier[0][k], (g - 1.0) * x[k], epsilon = 1e-12);
        }
        assert!(grad.selector[0].iter().all(|&v| v == 0.0));
        assert!(grad.generator[0].iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn perfect_regression_has_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let det = ToyDetector::random(2, false, 0.4, &mut rng);
        let x = random_features(&mut rng);
        let d = det.deltas(1, &x).to_array();
        let bundle = LossBundle {
            features: vec![x],
            generator_terms: vec![GeneratorTerm {
                feature: 0,
                class: 1,
                target: d,
            }],
            lambda: 0.1,
            beta: 1.0,
            ..Default::default()
        };
        let (loss, grad) = det.gradients(&bundle);
        assert_eq!(loss.total, 0.0);
        assert!(grad.to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn merge_offsets_feature_indices() {
        let x = [0.0; FEATURE_DIM];
        let mk = || LossBundle {
            features: vec![x, x],
            selector_groups: vec![SelectorGroup {
                label: 1.0,
                members: vec![(1, 0)],
            }],
            classifier_terms: vec![ClassifierTerm {
                feature: 1,
                class: 0,
                label: -1.0,
            }],
            generator_terms: vec![GeneratorTerm {
                feature: 0,
                class: 0,
                target: [0.0; 4],
            }],
            lambda: 0.1,
            beta: 1.0,
        };
        let mut a = mk();
        a.merge(mk());
        assert_eq!(a.features.len(), 4);
        assert_eq!(a.selector_groups[1].members, vec![(3, 0)]);
        assert_eq!(a.classifier_terms[1].feature, 3);
        assert_eq!(a.generator_terms[1].feature, 2);
    }
}
