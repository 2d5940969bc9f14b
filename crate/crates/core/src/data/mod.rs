//! Synthetic scenes and annotation datasets.
//!
//! A scene is a geometric abstraction of an image: a background level and a
//! set of flat-intensity rectangles. No pixels are ever rasterized; every
//! photometric statistic is computed from rectangle overlaps.

mod coco;
mod features;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::rng;

pub use coco::{read_annotations, read_annotations_str, to_json_string, write_annotations};
pub use features::{scene_features, Features, FEATURE_DIM, FEATURE_NAMES};

/// Objects must be at least this many pixels on each side.
pub const MIN_OBJECT_SIZE: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    #[serde(rename = "box")]
    pub bbox: BBox,
    /// Index into the dataset's category list.
    pub class_id: usize,
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub bounds: BBox,
    pub objects: Vec<SceneObject>,
    pub background: f64,
}

impl Scene {
    pub fn new(width: f64, height: f64, background: f64) -> Self {
        Scene {
            bounds: BBox::new(0.0, 0.0, width, height),
            objects: Vec::new(),
            background,
        }
    }

    pub fn with_object(mut self, bbox: BBox, class_id: usize, intensity: f64) -> Self {
        self.objects.push(SceneObject {
            bbox,
            class_id,
            intensity,
        });
        self
    }

    /// Check the scene invariants: objects inside bounds, at least
    /// [`MIN_OBJECT_SIZE`] on each side and clearly brighter than the background.
    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.2).contains(&self.background) {
            return Err(Error::Config(format!(
                "background intensity {} outside [0, 0.2)",
                self.background
            )));
        }
        for (i, o) in self.objects.iter().enumerate() {
            if !self.bounds.contains(&o.bbox)
                || o.bbox.width() < MIN_OBJECT_SIZE
                || o.bbox.height() < MIN_OBJECT_SIZE
            {
                return Err(Error::Config(format!("object {i} violates the size/bounds rule")));
            }
            if !(o.intensity > self.background + 0.3 && o.intensity <= 1.0) {
                return Err(Error::Config(format!(
                    "object {i} intensity {} not above background + 0.3",
                    o.intensity
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub id: u64,
    pub name: String,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub id: u64,
    pub category_id: u64,
    /// COCO `[x, y, w, h]`, kept verbatim so files round-trip bit-exactly.
    pub bbox: [f64; 4],
    pub extra: Map<String, Value>,
}

impl Annotation {
    pub fn to_box(&self) -> Result<BBox> {
        let [x, y, w, h] = self.bbox;
        BBox::from_xywh(x, y, w, h)
    }

    pub fn set_box(&mut self, b: &BBox) {
        self.bbox = [b.x1, b.y1, b.width(), b.height()];
        if self.extra.contains_key("area") {
            self.extra.insert("area".into(), Value::from(b.area()));
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub id: u64,
    pub width: u32,
    pub height: u32,
    /// Present for synthetic data; absent for ingested real annotation files.
    pub scene: Option<Scene>,
    pub annotations: Vec<Annotation>,
    pub extra: Map<String, Value>,
}

impl ImageRecord {
    pub fn bounds(&self) -> BBox {
        BBox::new(0.0, 0.0, self.width as f64, self.height as f64)
    }

    pub fn scene(&self) -> Result<&Scene> {
        self.scene
            .as_ref()
            .ok_or(Error::MissingScene { image_id: self.id })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Provenance {
    Clean,
    Noisy { r: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedDataset {
    pub images: Vec<ImageRecord>,
    pub categories: Vec<Category>,
    pub provenance: Provenance,
    /// Unrecognized top-level keys, carried through unchanged.
    pub extra: Map<String, Value>,
}

/// An annotation resolved against its image: box plus category index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledBox {
    pub bbox: BBox,
    pub class_id: usize,
}

impl AnnotatedDataset {
    pub fn empty() -> Self {
        AnnotatedDataset {
            images: Vec::new(),
            categories: Vec::new(),
            provenance: Provenance::Clean,
            extra: Map::new(),
        }
    }

    pub fn default_categories(num_classes: usize) -> Vec<Category> {
        (0..num_classes)
            .map(|c| Category {
                id: c as u64 + 1,
                name: format!("class_{c}"),
                extra: Map::new(),
            })
            .collect()
    }

    /// Dataset whose annotations are exactly the scene objects.
    pub fn from_scenes(scenes: Vec<Scene>, num_classes: usize) -> Self {
        let categories = Self::default_categories(num_classes);
        let mut next_ann = 1u64;
        let images = scenes
            .into_iter()
            .enumerate()
            .map(|(i, scene)| {
                let annotations = scene
                    .objects
                    .iter()
                    .map(|o| {
                        let mut a = Annotation {
                            id: next_ann,
                            category_id: categories[o.class_id].id,
                            bbox: [0.0; 4],
                            extra: Map::new(),
                        };
                        a.set_box(&o.bbox);
                        next_ann += 1;
                        a
                    })
                    .collect();
                ImageRecord {
                    id: i as u64 + 1,
                    width: scene.bounds.width() as u32,
                    height: scene.bounds.height() as u32,
                    scene: Some(scene),
                    annotations,
                    extra: Map::new(),
                }
            })
            .collect();
        AnnotatedDataset {
            images,
            categories,
            provenance: Provenance::Clean,
            extra: Map::new(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.categories.len()
    }

    pub fn annotation_count(&self) -> usize {
        self.images.iter().map(|i| i.annotations.len()).sum()
    }

    pub fn class_index(&self, category_id: u64) -> Option<usize> {
        self.categories.iter().position(|c| c.id == category_id)
    }

    /// Annotations of image `index` as boxes with category indices.
    pub fn labeled_boxes(&self, index: usize) -> Result<Vec<LabeledBox>> {
        let img = &self.images[index];
        img.annotations
            .iter()
            .map(|a| {
                let class_id = self.class_index(a.category_id).ok_or_else(|| {
                    Error::format(
                        format!("annotation {}", a.id),
                        format!("unknown category id {}", a.category_id),
                    )
                })?;
                Ok(LabeledBox {
                    bbox: a.to_box()?,
                    class_id,
                })
            })
            .collect()
    }

    /// Clean object boxes of image `index`, taken from its scene.
    pub fn clean_boxes(&self, index: usize) -> Result<Vec<LabeledBox>> {
        Ok(self.images[index]
            .scene()?
            .objects
            .iter()
            .map(|o| LabeledBox {
                bbox: o.bbox,
                class_id: o.class_id,
            })
            .collect())
    }

    /// Copy holding only the images at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        AnnotatedDataset {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            categories: self.categories.clone(),
            provenance: self.provenance,
            extra: self.extra.clone(),
        }
    }

    /// Reset annotations to the scene geometry.
    pub fn with_clean_annotations(&self) -> Result<Self> {
        let mut out = self.clone();
        for img in &mut out.images {
            let scene = img.scene()?.clone();
            if scene.objects.len() != img.annotations.len() {
                return Err(Error::format(
                    format!("image {}", img.id),
                    "annotation count differs from scene object count",
                ));
            }
            for (a, o) in img.annotations.iter_mut().zip(&scene.objects) {
                a.set_box(&o.bbox);
            }
        }
        out.provenance = Provenance::Clean;
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutSpec {
    pub width: u32,
    pub height: u32,
    pub min_objects: usize,
    pub max_objects: usize,
    pub num_classes: usize,
    pub min_size: f64,
    pub max_size: f64,
    /// Largest IoU allowed between two objects of a scene.
    pub max_pair_iou: f64,
    /// Placement retries per object before giving up.
    pub max_attempts: usize,
}

impl Default for LayoutSpec {
    fn default() -> Self {
        LayoutSpec {
            width: 128,
            height: 128,
            min_objects: 1,
            max_objects: 4,
            num_classes: 3,
            min_size: 16.0,
            max_size: 48.0,
            max_pair_iou: 0.1,
            max_attempts: 200,
        }
    }
}

impl LayoutSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.num_classes == 0 {
            return bad("layout needs at least one class");
        }
        if self.min_objects > self.max_objects {
            return bad("min_objects exceeds max_objects");
        }
        if self.min_size < MIN_OBJECT_SIZE || self.min_size > self.max_size {
            return bad("object size range must satisfy 4 <= min_size <= max_size");
        }
        if self.max_size > self.width.min(self.height) as f64 {
            return bad("max_size exceeds the image extent");
        }
        if !(0.0..=1.0).contains(&self.max_pair_iou) {
            return bad("max_pair_iou must lie in [0, 1]");
        }
        Ok(())
    }

    /// Nominal appearance level of a class, spread over [0.55, 1].
    pub fn class_level(&self, class_id: usize) -> f64 {
        if self.num_classes == 1 {
            0.8
        } else {
            0.55 + 0.4 * class_id as f64 / (self.num_classes - 1) as f64
        }
    }
}

/// Generate `count` random scenes with clean annotations.
pub fn generate_scenes(count: usize, layout: &LayoutSpec, seed: u64) -> Result<AnnotatedDataset> {
    if count == 0 {
        return Err(Error::Config("scene count must be at least 1".into()));
    }
    layout.validate()?;
    let scenes = (0..count)
        .map(|i| generate_scene(i, layout, seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(AnnotatedDataset::from_scenes(scenes, layout.num_classes))
}

fn generate_scene(index: usize, layout: &LayoutSpec, seed: u64) -> Result<Scene> {
    let mut rng = rng::stream(seed, rng::TAG_LAYOUT, index as u64);
    let (w, h) = (layout.width as f64, layout.height as f64);
    let background = rng.random_range(0.0..0.2);
    let mut scene = Scene::new(w, h, background);
    let n = rng.random_range(layout.min_objects..=layout.max_objects);
    for _ in 0..n {
        let mut placed = false;
        for _ in 0..layout.max_attempts {
            let bw = rng.random_range(layout.min_size..=layout.max_size);
            let bh = rng.random_range(layout.min_size..=layout.max_size);
            let x = rng.random_range(0.0..=w - bw);
            let y = rng.random_range(0.0..=h - bh);
            let b = BBox::new(x, y, x + bw, y + bh);
            if scene
                .objects
                .iter()
                .all(|o| o.bbox.iou(&b) <= layout.max_pair_iou)
            {
                let class_id = rng.random_range(0..layout.num_classes);
                let intensity =
                    (layout.class_level(class_id) + rng.random_range(-0.04..0.04)).min(1.0);
                scene = scene.with_object(b, class_id, intensity);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::InfeasibleLayout { scene: index });
        }
    }
    Ok(scene)
}

/// Seed-stable train/validation split of `n` items. Returns sorted index lists.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = rng::stream(seed, rng::TAG_SPLIT, 0);
    idx.shuffle(&mut rng);
    let n_val = ((n as f64) * val_fraction).round() as usize;
    let mut val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}
