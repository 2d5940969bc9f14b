//! Axis-aligned box arithmetic.
//!
//! Boxes are stored in corner form `(x1, y1, x2, y2)` in continuous pixel
//! coordinates. The center form `(cx, cy, w, h)` is derived on demand.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest log-scale delta accepted when decoding, so `exp` cannot overflow.
pub const MAX_LOG_DELTA: f64 = 4.135166556742356; // ln(1000 / 16)

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

/// Center parameterization of a box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CenterBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

/// Which parameterization a raw 4-vector is in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoxForm {
    Corner,
    Center,
}

/// Regression deltas in the center-offset / log-size encoding.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BoxDeltas {
    pub dx: f64,
    pub dy: f64,
    pub dw: f64,
    pub dh: f64,
}

impl BoxDeltas {
    pub fn to_array(self) -> [f64; 4] {
        [self.dx, self.dy, self.dw, self.dh]
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        BoxDeltas {
            dx: v[0],
            dy: v[1],
            dw: v[2],
            dh: v[3],
        }
    }
}

impl BBox {
    /// Panics if the corners are out of order or non-finite; see [`BBox::try_new`].
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        match Self::try_new(x1, y1, x2, y2) {
            Ok(b) => b,
            Err(e) => panic!("{e}"),
        }
    }

    pub fn try_new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let finite = x1.is_finite() && y1.is_finite() && x2.is_finite() && y2.is_finite();
        if !finite || x1 > x2 || y1 > y2 {
            return Err(Error::InvalidBox { x1, y1, x2, y2 });
        }
        Ok(BBox { x1, y1, x2, y2 })
    }

    /// Box from a COCO-style `[x, y, w, h]` record.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        Self::try_new(x, y, x + w, y + h)
    }

    pub fn from_center(c: CenterBox) -> Result<Self> {
        let (hw, hh) = (c.w / 2.0, c.h / 2.0);
        Self::try_new(c.cx - hw, c.cy - hh, c.cx + hw, c.cy + hh)
    }

    pub fn to_center(&self) -> CenterBox {
        CenterBox {
            cx: self.cx(),
            cy: self.cy(),
            w: self.width(),
            h: self.height(),
        }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn cx(&self) -> f64 {
        (self.x1 + self.x2) / 2.0
    }

    pub fn cy(&self) -> f64 {
        (self.y1 + self.y2) / 2.0
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn is_degenerate(&self) -> bool {
        self.area() <= 0.0
    }

    pub fn contains(&self, other: &BBox) -> bool {
        other.x1 >= self.x1 && other.y1 >= self.y1 && other.x2 <= self.x2 && other.y2 <= self.y2
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w > 0.0 && h > 0.0 {
            w * h
        } else {
            0.0
        }
    }

    /// Intersection over union.
    ///
    /// A zero-area box has IoU 0 with everything except an identical
    /// zero-area box, for which the IoU is 1.
    pub fn iou(&self, other: &BBox) -> f64 {
        if self.is_degenerate() || other.is_degenerate() {
            return if self == other { 1.0 } else { 0.0 };
        }
        let inter = self.intersection_area(other);
        if inter <= 0.0 {
            return 0.0;
        }
        let union = self.area() + other.area() - inter;
        (inter / union).clamp(0.0, 1.0)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox {
            x1: self.x1 + dx,
            y1: self.y1 + dy,
            x2: self.x2 + dx,
            y2: self.y2 + dy,
        }
    }

    /// Uniform scaling about the origin; `factor` must be positive.
    pub fn scale(&self, factor: f64) -> BBox {
        BBox {
            x1: self.x1 * factor,
            y1: self.y1 * factor,
            x2: self.x2 * factor,
            y2: self.y2 * factor,
        }
    }

    /// Clamp into `bounds`, then widen any side shorter than `min_size`
    /// about its center and slide it back inside the bounds.
    ///
    /// Fails when the bounds themselves are narrower than `min_size`.
    pub fn clip(&self, bounds: &BBox, min_size: f64) -> Result<BBox> {
        if bounds.width() < min_size || bounds.height() < min_size {
            return Err(Error::UnusableBounds {
                width: bounds.width(),
                height: bounds.height(),
                min_size,
            });
        }
        let (x1, x2) = clip_span(self.x1, self.x2, bounds.x1, bounds.x2, min_size);
        let (y1, y2) = clip_span(self.y1, self.y2, bounds.y1, bounds.y2, min_size);
        Ok(BBox { x1, y1, x2, y2 })
    }

    /// Convex combination `alpha * self + (1 - alpha) * other`, per corner.
    pub fn lerp(&self, other: &BBox, alpha: f64) -> BBox {
        // clamped so rounding never leaves the segment; alpha = 0 returns `other` exactly
        let mix = |a: f64, b: f64| (b + alpha * (a - b)).clamp(a.min(b), a.max(b));
        BBox {
            x1: mix(self.x1, other.x1),
            y1: mix(self.y1, other.y1),
            x2: mix(self.x2, other.x2),
            y2: mix(self.y2, other.y2),
        }
    }

    /// Regression target that maps `anchor` onto `self`.
    pub fn encode(&self, anchor: &BBox) -> BoxDeltas {
        let a = anchor.to_center();
        let t = self.to_center();
        BoxDeltas {
            dx: (t.cx - a.cx) / a.w,
            dy: (t.cy - a.cy) / a.h,
            dw: (t.w / a.w).ln(),
            dh: (t.h / a.h).ln(),
        }
    }

    /// Apply `deltas` to this box as an anchor. Log-size deltas are capped
    /// at [`MAX_LOG_DELTA`]. Zero deltas return the anchor unchanged.
    pub fn decode(&self, deltas: &BoxDeltas) -> BBox {
        let (w, h) = (self.width(), self.height());
        let (sx, sy) = (deltas.dx * w, deltas.dy * h);
        // half of the size change on each side
        let gx = (w * deltas.dw.min(MAX_LOG_DELTA).exp() - w) / 2.0;
        let gy = (h * deltas.dh.min(MAX_LOG_DELTA).exp() - h) / 2.0;
        BBox {
            x1: self.x1 + sx - gx,
            y1: self.y1 + sy - gy,
            x2: self.x2 + sx + gx,
            y2: self.y2 + sy + gy,
        }
    }
}

fn clip_span(lo: f64, hi: f64, min: f64, max: f64, min_size: f64) -> (f64, f64) {
    let mut a = lo.clamp(min, max);
    let mut b = hi.clamp(min, max);
    // rounding slack so a widened span is not widened again
    if b - a < min_size - 1e-12 * min_size.max(1.0) {
        let mid = (a + b) / 2.0;
        a = mid - min_size / 2.0;
        b = mid + min_size / 2.0;
        if a < min {
            a = min;
            b = min + min_size;
        } else if b > max {
            b = max;
            a = max - min_size;
        }
    }
    (a, b)
}

/// Reparameterize a raw 4-vector between corner and center form.
pub fn convert(v: [f64; 4], from: BoxForm, to: BoxForm) -> [f64; 4] {
    match (from, to) {
        (BoxForm::Corner, BoxForm::Center) => {
            let [x1, y1, x2, y2] = v;
            [(x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1]
        }
        (BoxForm::Center, BoxForm::Corner) => {
            let [cx, cy, w, h] = v;
            [cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0]
        }
        _ => v,
    }
}
