use crate::geometry::BBox;

use super::Scene;

pub const FEATURE_DIM: usize = 16;

pub const FEATURE_NAMES: [&str; FEATURE_DIM] = [
    "candidate_covered",
    "object_covered",
    "mean_intensity",
    "level_0.0",
    "level_0.2",
    "level_0.4",
    "level_0.6",
    "level_0.8",
    "level_1.0",
    "offset_x1",
    "offset_y1",
    "offset_x2",
    "offset_y2",
    "log_width",
    "log_height",
    "bias",
];

pub type Features = [f64; FEATURE_DIM];

const SIZE_FLOOR: f64 = 1e-3;

/// Soft intensity histogram: Gaussian bins at 0, 0.2, ..., 1.
pub const LEVEL_BINS: usize = 6;
const LEVEL_WIDTH: f64 = 0.1;

fn level_histogram(level: f64) -> [f64; LEVEL_BINS] {
    std::array::from_fn(|b| {
        let z = (level - b as f64 / (LEVEL_BINS - 1) as f64) / LEVEL_WIDTH;
        (-0.5 * z * z).exp()
    })
}

/// Geometric and photometric statistics of `candidate` within `scene`.
///
/// Statistics refer to the best-overlapping object (max IoU, lowest index on
/// ties). When no object overlaps the candidate, coverage and edge offsets
/// are zero and the intensity histogram describes the background. Overlapping
/// objects add their intensity above background to the mean intensity.
pub fn scene_features(scene: &Scene, candidate: &BBox) -> Features {
    let w = candidate.width().max(SIZE_FLOOR);
    let h = candidate.height().max(SIZE_FLOOR);
    let area = candidate.area();

    let mut best: Option<(usize, f64)> = None;
    let mut mean = scene.background;
    for (i, o) in scene.objects.iter().enumerate() {
        let inter = candidate.intersection_area(&o.bbox);
        if area > 0.0 {
            mean += (o.intensity - scene.background) * inter / area;
        }
        let iou = candidate.iou(&o.bbox);
        if iou > 0.0 && best.is_none_or(|(_, b)| iou > b) {
            best = Some((i, iou));
        }
    }

    let mut f = [0.0; FEATURE_DIM];
    let mut level = scene.background;
    if let Some((i, _)) = best {
        let obj = &scene.objects[i];
        let o = &obj.bbox;
        let inter = candidate.intersection_area(o);
        level = obj.intensity;
        f[0] = inter / area;
        f[1] = inter / o.area();
        f[9] = (o.x1 - candidate.x1) / w;
        f[10] = (o.y1 - candidate.y1) / h;
        f[11] = (o.x2 - candidate.x2) / w;
        f[12] = (o.y2 - candidate.y2) / h;
    }
    f[2] = mean;
    f[3..3 + LEVEL_BINS].copy_from_slice(&level_histogram(level));
    f[13] = (w / scene.bounds.width()).ln();
    f[14] = (h / scene.bounds.height()).ln();
    f[15] = 1.0;
    f
}
