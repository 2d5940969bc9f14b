//! COCO-style annotation JSON subset.
//!
//! Recognized keys: `images` (`id`, `width`, `height`), `annotations`
//! (`id`, `image_id`, `category_id`, `bbox` as `[x, y, w, h]`) and
//! `categories` (`id`, `name`). Synthetic scenes travel in an extra
//! per-image `scene` object and dataset provenance in a top-level
//! `provenance` object. Any other key is carried through unchanged.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{AnnotatedDataset, Annotation, Category, ImageRecord, Provenance, Scene, SceneObject};
use crate::error::{Error, Result};
use crate::geometry::BBox;

#[derive(Serialize, Deserialize)]
struct CocoFile {
    images: Vec<CocoImage>,
    annotations: Vec<CocoAnnotation>,
    #[serde(default)]
    categories: Vec<Category>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<Provenance>,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

#[derive(Serialize, Deserialize)]
struct CocoImage {
    id: u64,
    width: u32,
    height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scene: Option<CocoScene>,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

#[derive(Serialize, Deserialize)]
struct CocoScene {
    background: f64,
    objects: Vec<SceneObject>,
}

#[derive(Serialize, Deserialize)]
struct CocoAnnotation {
    id: u64,
    image_id: u64,
    category_id: u64,
    bbox: [f64; 4],
    #[serde(flatten)]
    extra: Map<String, Value>,
}

pub fn read_annotations(path: impl AsRef<Path>) -> Result<AnnotatedDataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    read_annotations_str(&text, &path.display().to_string())
}

/// Parse a dataset from JSON text; `origin` labels error messages.
pub fn read_annotations_str(text: &str, origin: &str) -> Result<AnnotatedDataset> {
    let file: CocoFile = serde_json::from_str(text).map_err(|e| {
        Error::format(
            format!("{origin}:{}:{}", e.line(), e.column()),
            e.to_string(),
        )
    })?;
    from_file(file, origin)
}

pub fn write_annotations(ds: &AnnotatedDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = to_json_string(ds)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn to_json_string(ds: &AnnotatedDataset) -> Result<String> {
    let file = to_file(ds);
    let mut text = serde_json::to_string_pretty(&file)
        .map_err(|e| Error::format("<dataset>", e.to_string()))?;
    text.push('\n');
    Ok(text)
}

fn from_file(file: CocoFile, origin: &str) -> Result<AnnotatedDataset> {
    let mut index = HashMap::new();
    let mut categories_seen = HashMap::new();
    for (i, c) in file.categories.iter().enumerate() {
        if categories_seen.insert(c.id, i).is_some() {
            return Err(Error::format(
                format!("{origin}: categories[{i}]"),
                format!("duplicate category id {}", c.id),
            ));
        }
    }
    let mut images = Vec::with_capacity(file.images.len());
    for (i, img) in file.images.into_iter().enumerate() {
        let at = format!("{origin}: images[{i}]");
        if index.insert(img.id, images.len()).is_some() {
            return Err(Error::format(at, format!("duplicate image id {}", img.id)));
        }
        let scene = match img.scene {
            Some(s) => {
                let scene = Scene {
                    bounds: BBox::new(0.0, 0.0, img.width as f64, img.height as f64),
                    objects: s.objects,
                    background: s.background,
                };
                for (k, o) in scene.objects.iter().enumerate() {
                    BBox::try_new(o.bbox.x1, o.bbox.y1, o.bbox.x2, o.bbox.y2).map_err(|e| {
                        Error::format(format!("{at}.scene.objects[{k}]"), e.to_string())
                    })?;
                    if o.class_id >= file.categories.len() {
                        return Err(Error::format(
                            format!("{at}.scene.objects[{k}]"),
                            format!("class index {} has no category", o.class_id),
                        ));
                    }
                }
                Some(scene)
            }
            None => None,
        };
        images.push(ImageRecord {
            id: img.id,
            width: img.width,
            height: img.height,
            scene,
            annotations: Vec::new(),
            extra: img.extra,
        });
    }
    for (i, a) in file.annotations.into_iter().enumerate() {
        let at = format!("{origin}: annotations[{i}] (id {})", a.id);
        let Some(&slot) = index.get(&a.image_id) else {
            return Err(Error::format(at, format!("unknown image id {}", a.image_id)));
        };
        if !categories_seen.contains_key(&a.category_id) {
            return Err(Error::format(at, format!("unknown category id {}", a.category_id)));
        }
        let [x, y, w, h] = a.bbox;
        if !(w >= 0.0 && h >= 0.0) || !(x.is_finite() && y.is_finite()) {
            return Err(Error::format(at, format!("invalid bbox {:?}", a.bbox)));
        }
        images[slot].annotations.push(Annotation {
            id: a.id,
            category_id: a.category_id,
            bbox: a.bbox,
            extra: a.extra,
        });
    }
    Ok(AnnotatedDataset {
        images,
        categories: file.categories,
        provenance: file.provenance.unwrap_or(Provenance::Clean),
        extra: file.extra,
    })
}

fn to_file(ds: &AnnotatedDataset) -> CocoFile {
    let mut annotations = Vec::with_capacity(ds.annotation_count());
    let images = ds
        .images
        .iter()
        .map(|img| {
            annotations.extend(img.annotations.iter().map(|a| CocoAnnotation {
                id: a.id,
                image_id: img.id,
                category_id: a.category_id,
                bbox: a.bbox,
                extra: a.extra.clone(),
            }));
            CocoImage {
                id: img.id,
                width: img.width,
                height: img.height,
                scene: img.scene.as_ref().map(|s| CocoScene {
                    background: s.background,
                    objects: s.objects.clone(),
                }),
                extra: img.extra.clone(),
            }
        })
        .collect();
    CocoFile {
        images,
        annotations,
        categories: ds.categories.clone(),
        provenance: Some(ds.provenance),
        extra: ds.extra.clone(),
    }
}
