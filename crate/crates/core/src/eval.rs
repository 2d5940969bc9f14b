//! Detection inference, greedy NMS, AP@IoU and the classification versus
//! localization diagnostic. Ground truth is always the clean scene geometry.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{AnnotatedDataset, LabeledBox, Scene};
use crate::detector::{anchor_grid, score_and_regress, AnchorSpec, Candidate, ToyDetector};
use crate::error::{Error, Result};
use crate::geometry::BBox;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub class_id: usize,
    pub confidence: f64,
    pub scene_id: usize,
}

/// Greedy per-class suppression. Detections are visited by descending
/// confidence, ties by input order; the survivors come back in that order.
pub fn nms(detections: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| detections[b].confidence.total_cmp(&detections[a].confidence).then(a.cmp(&b)));
    let mut kept: Vec<Detection> = Vec::new();
    for i in order {
        let d = detections[i];
        let clash = kept.iter().any(|k| {
            k.class_id == d.class_id && k.scene_id == d.scene_id && k.bbox.iou(&d.bbox) > iou_threshold
        });
        if !clash {
            kept.push(d);
        }
    }
    kept
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApReport {
    /// `None` for classes with neither ground truth nor detections.
    pub per_class: Vec<Option<f64>>,
    pub map: f64,
}

/// VOC-style average precision with all-points interpolation.
///
/// `ground_truth[s]` holds the clean boxes of scene `s`; detections refer
/// to scenes by `scene_id`. A detection is a true positive when its
/// best-IoU ground truth of the same class reaches `iou_threshold` and has
/// not been claimed by a more confident detection.
pub fn average_precision(
    detections: &[Detection],
    ground_truth: &[Vec<LabeledBox>],
    num_classes: usize,
    iou_threshold: f64,
) -> ApReport {
    let per_class: Vec<Option<f64>> = (0..num_classes)
        .map(|k| class_ap(detections, ground_truth, k, iou_threshold))
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let map = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    ApReport { per_class, map }
}

fn class_ap(detections: &[Detection], ground_truth: &[Vec<LabeledBox>], class: usize, thr: f64) -> Option<f64> {
    let n_pos: usize = ground_truth
        .iter()
        .map(|g| g.iter().filter(|b| b.class_id == class).count())
        .sum();
    let mut dets: Vec<&Detection> = detections.iter().filter(|d| d.class_id == class).collect();
    if n_pos == 0 {
        return if dets.is_empty() { None } else { Some(0.0) };
    }
    dets.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    let mut claimed: Vec<Vec<bool>> = ground_truth.iter().map(|g| vec![false; g.len()]).collect();
    let tp: Vec<bool> = dets
        .iter()
        .map(|d| {
            let gts = &ground_truth[d.scene_id];
            let mut best: Option<(usize, f64)> = None;
            for (j, g) in gts.iter().enumerate().filter(|(_, g)| g.class_id == class) {
                let iou = d.bbox.iou(&g.bbox);
                if best.is_none_or(|(_, b)| iou > b) {
                    best = Some((j, iou));
                }
            }
            match best {
                Some((j, iou)) if iou >= thr && !claimed[d.scene_id][j] => {
                    claimed[d.scene_id][j] = true;
                    true
                }
                _ => false,
            }
        })
        .collect();

    let mut precision = Vec::with_capacity(tp.len());
    let mut recall = Vec::with_capacity(tp.len());
    let mut hits = 0usize;
    for (i, &t) in tp.iter().enumerate() {
        hits += t as usize;
        precision.push(hits as f64 / (i + 1) as f64);
        recall.push(hits as f64 / n_pos as f64);
    }
    // precision envelope, right to left
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    Some(ap)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceSpec {
    pub anchors: AnchorSpec,
    /// Detections below this classifier score are dropped before NMS.
    pub score_threshold: f64,
    pub nms_iou: f64,
    pub max_detections: usize,
}

impl Default for InferenceSpec {
    fn default() -> Self {
        InferenceSpec {
            anchors: AnchorSpec::default(),
            score_threshold: 0.05,
            nms_iou: 0.5,
            max_detections: 100,
        }
    }
}

/// Run the detector over a dense anchor grid on one scene.
pub fn detect(det: &ToyDetector, scene: &Scene, spec: &InferenceSpec, scene_id: usize) -> Result<Vec<Detection>> {
    let mut cands: Vec<Candidate> = anchor_grid(&scene.bounds, &spec.anchors)
        .into_iter()
        .map(|b| Candidate::new(scene, b))
        .collect();
    score_and_regress(det, &mut cands, &scene.bounds)?;
    let mut raw = Vec::new();
    for c in &cands {
        for (k, &s) in c.classifier_scores.iter().enumerate() {
            if s >= spec.score_threshold {
                raw.push(Detection {
                    bbox: c.regressed[k],
                    class_id: k,
                    confidence: s,
                    scene_id,
                });
            }
        }
    }
    let mut kept = nms(&raw, spec.nms_iou);
    kept.truncate(spec.max_detections);
    Ok(kept)
}

/// Fractions of clean objects that are classified and localized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClsLoc {
    /// Best-IoU confident detection overlaps at IoU >= 0.1 and has the right class.
    pub cls_acc: f64,
    /// Some confident detection reaches IoU >= 0.75, any class.
    pub loc_prec: f64,
}

pub const CLS_MATCH_IOU: f64 = 0.1;
pub const LOC_PRECISE_IOU: f64 = 0.75;

pub fn cls_loc(detections: &[Detection], ground_truth: &[Vec<LabeledBox>], min_confidence: f64) -> ClsLoc {
    let mut total = 0usize;
    let mut cls = 0usize;
    let mut loc = 0usize;
    for (s, gts) in ground_truth.iter().enumerate() {
        let dets: Vec<&Detection> = detections
            .iter()
            .filter(|d| d.scene_id == s && d.confidence >= min_confidence)
            .collect();
        for g in gts {
            total += 1;
            let mut best: Option<(&Detection, f64)> = None;
            for d in &dets {
                let iou = d.bbox.iou(&g.bbox);
                if best.is_none_or(|(_, b)| iou > b) {
                    best = Some((d, iou));
                }
            }
            if let Some((d, iou)) = best {
                if iou >= CLS_MATCH_IOU && d.class_id == g.class_id {
                    cls += 1;
                }
                if iou >= LOC_PRECISE_IOU {
                    loc += 1;
                }
            }
        }
    }
    if total == 0 {
        return ClsLoc { cls_acc: 0.0, loc_prec: 0.0 };
    }
    ClsLoc {
        cls_acc: cls as f64 / total as f64,
        loc_prec: loc as f64 / total as f64,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSpec {
    pub inference: InferenceSpec,
    pub iou_threshold: f64,
    /// Confidence floor for the classification/localization diagnostic.
    pub diagnostic_confidence: f64,
}

impl Default for EvalSpec {
    fn default() -> Self {
        EvalSpec {
            inference: InferenceSpec::default(),
            iou_threshold: 0.5,
            diagnostic_confidence: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub ap: ApReport,
    pub map50: f64,
    pub diagnostic: ClsLoc,
}

/// Evaluate on the images at `indices` (all images when `None`) against
/// their clean scene geometry.
pub fn evaluate(det: &ToyDetector, ds: &AnnotatedDataset, indices: Option<&[usize]>, spec: &EvalSpec) -> Result<EvalReport> {
    let all: Vec<usize>;
    let indices = match indices {
        Some(ix) => ix,
        None => {
            all = (0..ds.images.len()).collect();
            &all
        }
    };
    let per_scene: Vec<(Vec<Detection>, Vec<LabeledBox>)> = indices
        .par_iter()
        .enumerate()
        .map(|(s, &i)| {
            let scene = ds.images[i].scene()?;
            Ok((detect(det, scene, &spec.inference, s)?, ds.clean_boxes(i)?))
        })
        .collect::<Result<_>>()?;
    let (dets, gts): (Vec<_>, Vec<_>) = per_scene.into_iter().unzip();
    let dets: Vec<Detection> = dets.into_iter().flatten().collect();
    let ap = average_precision(&dets, &gts, ds.num_classes(), spec.iou_threshold);
    Ok(EvalReport {
        map50: ap.map,
        ap,
        diagnostic: cls_loc(&dets, &gts, spec.diagnostic_confidence),
    })
}

/// Mean over clean objects of the best IoU reached by any detection of the
/// object's class (0 when there is none).
pub fn mean_best_iou(det: &ToyDetector, ds: &AnnotatedDataset, indices: &[usize], spec: &InferenceSpec) -> Result<f64> {
    let per_scene: Vec<Vec<f64>> = indices
        .par_iter()
        .map(|&i| {
            let dets = detect(det, ds.images[i].scene()?, spec, 0)?;
            Ok(ds
                .clean_boxes(i)?
                .iter()
                .map(|g| {
                    dets.iter()
                        .filter(|d| d.class_id == g.class_id)
                        .map(|d| d.bbox.iou(&g.bbox))
                        .fold(0.0, f64::max)
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let all: Vec<f64> = per_scene.into_iter().flatten().collect();
    Ok(if all.is_empty() { 0.0 } else { all.iter().sum::<f64>() / all.len() as f64 })
}

/// One row of the metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub run_id: String,
    pub mode: String,
    pub noise_r: f64,
    pub seed: u64,
    pub map50: f64,
    pub cls_acc: f64,
    pub loc_prec: f64,
}

pub const METRICS_HEADER: &str = "run_id,mode,noise_r,seed,map50,cls_acc,loc_prec";

pub fn metrics_csv(rows: &[MetricsRecord]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.run_id, r.mode, r.noise_r, r.seed, r.map50, r.cls_acc, r.loc_prec
        );
    }
    s
}

pub fn write_metrics_csv(rows: &[MetricsRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, metrics_csv(rows)).map_err(|e| Error::io(path, e))
}

pub fn parse_metrics_csv(text: &str, origin: &str) -> Result<Vec<MetricsRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::format(format!("{origin}:1"), "unexpected metrics header"));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(n, l)| {
            let bad = |m: &str| Error::format(format!("{origin}:{}", n + 2), m.to_string());
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 7 {
                return Err(bad("expected 7 columns"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
            Ok(MetricsRecord {
                run_id: f[0].to_string(),
                mode: f[1].to_string(),
                noise_r: num(f[2])?,
                seed: f[3].parse().map_err(|_| bad("bad seed"))?,
                map50: num(f[4])?,
                cls_acc: num(f[5])?,
                loc_prec: num(f[6])?,
            })
        })
        .collect()
}
