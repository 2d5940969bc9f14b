//! Box-noise simulation by random shift and scale.
//!
//! Each box draws `(dx, dy, dw, dh)` from U(-r, r), in that order, and is
//! mapped to center `(cx + dx*w, cy + dy*h)` and size `((1+dw)*w, (1+dh)*h)`.
//! Boxes are visited in file order from a single ChaCha8 stream, then
//! clipped to the image with a 1 pixel minimum size.

use serde::{Deserialize, Serialize};

use crate::data::{AnnotatedDataset, Provenance};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::rng;

pub const NOISE_MIN_SIZE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub r: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(r: f64, seed: u64) -> Result<Self> {
        let spec = NoiseSpec { r, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.r) {
            return Err(Error::InvalidNoiseLevel(self.r));
        }
        Ok(())
    }
}

/// Shift/scale deltas for one box.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NoiseDeltas {
    pub dx: f64,
    pub dy: f64,
    pub dw: f64,
    pub dh: f64,
}

impl NoiseDeltas {
    pub fn draw<R: rand::Rng + ?Sized>(rng: &mut R, r: f64) -> Self {
        NoiseDeltas {
            dx: rng::symmetric(rng, r),
            dy: rng::symmetric(rng, r),
            dw: rng::symmetric(rng, r),
            dh: rng::symmetric(rng, r),
        }
    }
}

/// Shift and scale one box. Evaluated directly on the corners so zero
/// deltas return the input bit-for-bit.
pub fn perturb_box(b: &BBox, d: &NoiseDeltas) -> Result<BBox> {
    if d.dw <= -1.0 || d.dh <= -1.0 {
        return Err(Error::NonPositiveSize { dw: d.dw, dh: d.dh });
    }
    let (w, h) = (b.width(), b.height());
    let (sx, sy) = (d.dx * w, d.dy * h);
    let (gx, gy) = (d.dw * w / 2.0, d.dh * h / 2.0);
    BBox::try_new(b.x1 + sx - gx, b.y1 + sy - gy, b.x2 + sx + gx, b.y2 + sy + gy)
}

/// Same map on a COCO `[x, y, w, h]` record.
fn perturb_xywh(v: [f64; 4], d: &NoiseDeltas) -> [f64; 4] {
    let [x, y, w, h] = v;
    [
        x + d.dx * w - d.dw * w / 2.0,
        y + d.dy * h - d.dh * h / 2.0,
        w + d.dw * w,
        h + d.dh * h,
    ]
}

/// Perturb every annotation box of `ds`. The input is left untouched.
pub fn perturb_dataset(ds: &AnnotatedDataset, spec: &NoiseSpec) -> Result<AnnotatedDataset> {
    spec.validate()?;
    let mut rng = rng::stream(spec.seed, rng::TAG_NOISE, 0);
    let mut out = ds.clone();
    for img in &mut out.images {
        let bounds = img.bounds();
        for a in &mut img.annotations {
            let deltas = NoiseDeltas::draw(&mut rng, spec.r);
            if deltas.dw <= -1.0 || deltas.dh <= -1.0 {
                return Err(Error::NonPositiveSize { dw: deltas.dw, dh: deltas.dh });
            }
            let raw = perturb_xywh(a.bbox, &deltas);
            let [x, y, w, h] = raw;
            let noisy = BBox::from_xywh(x, y, w, h)?;
            let clipped = noisy.clip(&bounds, NOISE_MIN_SIZE)?;
            if clipped == noisy {
                a.bbox = raw;
                if a.extra.contains_key("area") {
                    a.extra.insert("area".into(), (w * h).into());
                }
            } else {
                a.set_box(&clipped);
            }
        }
    }
    out.provenance = Provenance::Noisy {
        r: spec.r,
        seed: spec.seed,
    };
    Ok(out)
}

/// Mean IoU between corresponding annotations of two datasets with the
/// same structure.
pub fn mean_annotation_iou(a: &AnnotatedDataset, b: &AnnotatedDataset) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    if a.images.len() != b.images.len() {
        return Err(Error::Config("datasets differ in image count".into()));
    }
    for (ia, ib) in a.images.iter().zip(&b.images) {
        if ia.annotations.len() != ib.annotations.len() {
            return Err(Error::Config(format!("image {} annotation counts differ", ia.id)));
        }
        for (x, y) in ia.annotations.iter().zip(&ib.annotations) {
            sum += x.to_box()?.iou(&y.to_box()?);
            n += 1;
        }
    }
    Ok(if n == 0 { 1.0 } else { sum / n as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_scenes, LayoutSpec, Scene};
    use approx::assert_abs_diff_eq;

    fn assert_center(b: &BBox, want: [f64; 4]) {
        let c = b.to_center();
        for (got, want) in [c.cx, c.cy, c.w, c.h].iter().zip(want) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn perturb_box_examples() {
        let b = BBox::new(8.0, 8.0, 12.0, 12.0);
        assert_eq!(perturb_box(&b, &NoiseDeltas::default()).unwrap(), b);
        let d = NoiseDeltas { dx: 0.1, dy: -0.1, dw: 0.2, dh: -0.2 };
        assert_center(&perturb_box(&b, &d).unwrap(), [10.4, 9.6, 4.8, 3.2]);
        let d = NoiseDeltas { dx: 0.4, dy: 0.4, dw: 0.4, dh: 0.4 };
        assert_center(&perturb_box(&b, &d).unwrap(), [11.6, 11.6, 5.6, 5.6]);
    }

    #[test]
    fn collapsing_scale_rejected() {
        let b = BBox::new(0.0, 0.0, 4.0, 4.0);
        let d = NoiseDeltas { dw: -1.0, ..Default::default() };
        assert!(matches!(perturb_box(&b, &d), Err(Error::NonPositiveSize { .. })));
    }

    #[test]
    fn noise_level_validated() {
        assert!(NoiseSpec::new(0.5, 0).is_err());
        assert!(NoiseSpec::new(-0.1, 0).is_err());
        assert!(NoiseSpec::new(0.4, 0).is_ok());
    }

    #[test]
    fn zero_noise_is_identity() {
        let ds = generate_scenes(10, &LayoutSpec::default(), 1).unwrap();
        let out = perturb_dataset(&ds, &NoiseSpec::new(0.0, 5).unwrap()).unwrap();
        for (a, b) in ds.images.iter().zip(&out.images) {
            assert_eq!(a.annotations, b.annotations);
        }
        assert_eq!(out.provenance, Provenance::Noisy { r: 0.0, seed: 5 });
    }

    #[test]
    fn same_seed_same_output_and_input_untouched() {
        let ds = generate_scenes(10, &LayoutSpec::default(), 1).unwrap();
        let before = ds.clone();
        let spec = NoiseSpec::new(0.3, 8).unwrap();
        let a = perturb_dataset(&ds, &spec).unwrap();
        let b = perturb_dataset(&ds, &spec).unwrap();
        assert_eq!(
            crate::data::to_json_string(&a).unwrap(),
            crate::data::to_json_string(&b).unwrap()
        );
        assert_eq!(ds, before);
        for img in &a.images {
            for ann in &img.annotations {
                assert!(img.bounds().contains(&ann.to_box().unwrap()));
            }
        }
    }

    /// SplitMix64-driven Monte-Carlo estimate, independent of the ChaCha path.
    fn monte_carlo_mean_iou(r: f64, draws: usize, mut state: u64) -> f64 {
        let mut next = || {
            state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            z ^= z >> 31;
            ((z >> 11) as f64 / (1u64 << 53) as f64) * 2.0 * r - r
        };
        let mut sum = 0.0;
        for _ in 0..draws {
            let (dx, dy, dw, dh) = (next(), next(), next(), next());
            // unit box centered at the origin against its perturbation
            let (w, h) = (1.0 + dw, 1.0 + dh);
            let ix = ((0.5f64).min(dx + w / 2.0) - (-0.5f64).max(dx - w / 2.0)).max(0.0);
            let iy = ((0.5f64).min(dy + h / 2.0) - (-0.5f64).max(dy - h / 2.0)).max(0.0);
            let inter = ix * iy;
            sum += inter / (1.0 + w * h - inter);
        }
        sum / draws as f64
    }

    #[test]
    fn mean_iou_matches_monte_carlo_oracle() {
        let size = 10.0;
        let mut scene = Scene::new(200.0, 200.0, 0.0);
        let b = BBox::new(95.0, 95.0, 95.0 + size, 95.0 + size);
        scene = scene.with_object(b, 0, 0.9);
        let one = AnnotatedDataset::from_scenes(vec![scene], 1);
        let mut ds = one.clone();
        let template = one.images[0].clone();
        ds.images = (0..10_000)
            .map(|i| {
                let mut img = template.clone();
                img.id = i + 1;
                img
            })
            .collect();
        let noisy = perturb_dataset(&ds, &NoiseSpec::new(0.4, 21).unwrap()).unwrap();
        let got = mean_annotation_iou(&ds, &noisy).unwrap();
        let oracle = monte_carlo_mean_iou(0.4, 200_000, 77);
        assert!((got - oracle).abs() < 0.01, "got {got}, oracle {oracle}");
    }
}
