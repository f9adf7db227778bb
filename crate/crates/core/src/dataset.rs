//! Canonical in-memory data model and COCO-compatible persistence.
//!
//! A [`Dataset`] holds images, ground-truth annotations, the category table,
//! and one [`VerificationRecord`] per image. Verification records carry the
//! per-image sets of positively verified (confirmed present, exhaustively
//! annotated) and negatively verified (confirmed absent) categories; every
//! other category is simply unknown on that image. When no verification
//! sidecar is supplied, each image defaults to the maximally sparse reading:
//! positive = its annotated categories, negative = empty.
//!
//! Datasets are immutable after construction and fully validated by
//! [`Dataset::new`], so transforming operations rebuild and re-check.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

pub type ImageId = u64;
pub type CategoryId = u64;
pub type AnnotationId = u64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Category {
    pub id: CategoryId,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRecord {
    pub image_id: ImageId,
    pub width: u32,
    pub height: u32,
    pub file_name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub annotation_id: AnnotationId,
    pub image_id: ImageId,
    pub category_id: CategoryId,
    pub bbox: BBox,
}

/// Human verification outcome for one image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerificationRecord {
    pub image_id: ImageId,
    pub positive: BTreeSet<CategoryId>,
    pub negative: BTreeSet<CategoryId>,
}

/// Validated, immutable dataset. Constructed via [`Dataset::new`] or the
/// loaders below; primary collections are kept sorted by id so that
/// serialization is canonical.
#[derive(Debug, Clone)]
pub struct Dataset {
    categories: Vec<Category>,
    images: Vec<ImageRecord>,
    annotations: Vec<Annotation>,
    verifications: BTreeMap<ImageId, VerificationRecord>,
    anns_by_image: BTreeMap<ImageId, Vec<usize>>,
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.categories == other.categories
            && self.images == other.images
            && self.annotations == other.annotations
            && self.verifications == other.verifications
    }
}

impl Dataset {
    /// Validates referential integrity and verification consistency.
    ///
    /// Images without a verification record get the default one (positive =
    /// annotated categories, negative = empty). An annotation of a category
    /// that is not positively verified on its image, or is negatively
    /// verified there, is an integrity error.
    pub fn new(
        categories: Vec<Category>,
        images: Vec<ImageRecord>,
        annotations: Vec<Annotation>,
        verifications: Vec<VerificationRecord>,
    ) -> Result<Self> {
        let mut categories = categories;
        categories.sort_by_key(|c| c.id);
        let mut category_ids = BTreeSet::new();
        let mut category_names = BTreeSet::new();
        for c in &categories {
            if c.id == 0 {
                return Err(Error::Integrity(format!(
                    "category '{}' has id 0; ids must be strictly positive",
                    c.name
                )));
            }
            if !category_ids.insert(c.id) {
                return Err(Error::Integrity(format!("duplicate category id {}", c.id)));
            }
            if !category_names.insert(c.name.clone()) {
                return Err(Error::Integrity(format!(
                    "duplicate category name '{}'",
                    c.name
                )));
            }
        }

        let mut images = images;
        images.sort_by_key(|im| im.image_id);
        let mut image_ids = BTreeSet::new();
        for im in &images {
            if !image_ids.insert(im.image_id) {
                return Err(Error::Integrity(format!(
                    "duplicate image id {}",
                    im.image_id
                )));
            }
        }
        let image_dims: BTreeMap<ImageId, (f64, f64)> = images
            .iter()
            .map(|im| (im.image_id, (im.width as f64, im.height as f64)))
            .collect();

        let mut annotations = annotations;
        annotations.sort_by_key(|a| a.annotation_id);
        let mut ann_ids = BTreeSet::new();
        for a in &annotations {
            if !ann_ids.insert(a.annotation_id) {
                return Err(Error::Integrity(format!(
                    "duplicate annotation id {}",
                    a.annotation_id
                )));
            }
            if !category_ids.contains(&a.category_id) {
                return Err(Error::Integrity(format!(
                    "annotation {} references unknown category {}",
                    a.annotation_id, a.category_id
                )));
            }
            let Some(&(w, h)) = image_dims.get(&a.image_id) else {
                return Err(Error::Integrity(format!(
                    "annotation {} references unknown image {}",
                    a.annotation_id, a.image_id
                )));
            };
            if a.bbox.x_min < 0.0 || a.bbox.y_min < 0.0 || a.bbox.x_max > w || a.bbox.y_max > h {
                return Err(Error::Integrity(format!(
                    "annotation {} box extends outside image {} bounds",
                    a.annotation_id, a.image_id
                )));
            }
        }

        let mut annotated: BTreeMap<ImageId, BTreeSet<CategoryId>> = BTreeMap::new();
        for a in &annotations {
            annotated.entry(a.image_id).or_default().insert(a.category_id);
        }

        let mut verification_map: BTreeMap<ImageId, VerificationRecord> = BTreeMap::new();
        for v in verifications {
            if !image_ids.contains(&v.image_id) {
                return Err(Error::Integrity(format!(
                    "verification record references unknown image {}",
                    v.image_id
                )));
            }
            if verification_map.contains_key(&v.image_id) {
                return Err(Error::Integrity(format!(
                    "duplicate verification record for image {}",
                    v.image_id
                )));
            }
            for c in v.positive.iter().chain(v.negative.iter()) {
                if !category_ids.contains(c) {
                    return Err(Error::Integrity(format!(
                        "verification for image {} references unknown category {}",
                        v.image_id, c
                    )));
                }
            }
            if let Some(c) = v.positive.intersection(&v.negative).next() {
                return Err(Error::Integrity(format!(
                    "category {} is both positively and negatively verified on image {}",
                    c, v.image_id
                )));
            }
            verification_map.insert(v.image_id, v);
        }
        for &id in &image_ids {
            let anns = annotated.get(&id).cloned().unwrap_or_default();
            match verification_map.get(&id) {
                Some(v) => {
                    if let Some(c) = anns.iter().find(|c| !v.positive.contains(c)) {
                        let polarity = if v.negative.contains(c) {
                            "negatively verified"
                        } else {
                            "not positively verified"
                        };
                        return Err(Error::Integrity(format!(
                            "image {id} has an annotation of category {c} which is {polarity} there"
                        )));
                    }
                }
                None => {
                    verification_map.insert(
                        id,
                        VerificationRecord {
                            image_id: id,
                            positive: anns,
                            negative: BTreeSet::new(),
                        },
                    );
                }
            }
        }

        let mut anns_by_image: BTreeMap<ImageId, Vec<usize>> = BTreeMap::new();
        for (idx, a) in annotations.iter().enumerate() {
            anns_by_image.entry(a.image_id).or_default().push(idx);
        }

        Ok(Dataset {
            categories,
            images,
            annotations,
            verifications: verification_map,
            anns_by_image,
        })
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    pub fn images(&self) -> &[ImageRecord] {
        &self.images
    }

    pub fn annotations(&self) -> &[Annotation] {
        &self.annotations
    }

    pub fn image(&self, id: ImageId) -> Option<&ImageRecord> {
        self.images
            .binary_search_by_key(&id, |im| im.image_id)
            .ok()
            .map(|i| &self.images[i])
    }

    pub fn has_category(&self, id: CategoryId) -> bool {
        self.categories
            .binary_search_by_key(&id, |c| c.id)
            .is_ok()
    }

    pub fn category_by_name(&self, name: &str) -> Option<&Category> {
        self.categories.iter().find(|c| c.name == name)
    }

    /// Verification record; present for every known image.
    pub fn verification(&self, image: ImageId) -> Option<&VerificationRecord> {
        self.verifications.get(&image)
    }

    pub fn annotations_on(&self, image: ImageId) -> impl Iterator<Item = &Annotation> {
        self.anns_by_image
            .get(&image)
            .into_iter()
            .flatten()
            .map(move |&i| &self.annotations[i])
    }

    /// Ids of images carrying at least one annotation of `category`.
    pub fn images_with_category(&self, category: CategoryId) -> BTreeSet<ImageId> {
        self.annotations
            .iter()
            .filter(|a| a.category_id == category)
            .map(|a| a.image_id)
            .collect()
    }
}

/// Scored detection from a pretrained model.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub image_id: ImageId,
    pub category_id: CategoryId,
    pub bbox: BBox,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectionSet {
    pub detections: Vec<Detection>,
}

impl DetectionSet {
    /// Validates scores and id references against `dataset`.
    pub fn new(detections: Vec<Detection>, dataset: &Dataset) -> Result<Self> {
        for (i, d) in detections.iter().enumerate() {
            if !(0.0..=1.0).contains(&d.score) {
                return Err(Error::Integrity(format!(
                    "detection {} has score {} outside [0, 1]",
                    i, d.score
                )));
            }
            if dataset.image(d.image_id).is_none() {
                return Err(Error::Integrity(format!(
                    "detection {} references unknown image {}",
                    i, d.image_id
                )));
            }
            if !dataset.has_category(d.category_id) {
                return Err(Error::Integrity(format!(
                    "detection {} references unknown category {}",
                    i, d.category_id
                )));
            }
        }
        Ok(DetectionSet { detections })
    }

    pub fn on_image(&self, image: ImageId) -> impl Iterator<Item = &Detection> {
        self.detections.iter().filter(move |d| d.image_id == image)
    }
}

// ---------------------------------------------------------------------------
// COCO-format JSON interchange
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct CocoRoot {
    images: Vec<CocoImage>,
    annotations: Vec<CocoAnnotation>,
    categories: Vec<CocoCategory>,
}

#[derive(Serialize, Deserialize)]
struct CocoImage {
    id: ImageId,
    width: u32,
    height: u32,
    #[serde(default)]
    file_name: String,
}

#[derive(Serialize, Deserialize)]
struct CocoAnnotation {
    id: AnnotationId,
    image_id: ImageId,
    category_id: CategoryId,
    /// `[x, y, width, height]` in pixels.
    bbox: [f64; 4],
}

#[derive(Serialize, Deserialize)]
struct CocoCategory {
    id: CategoryId,
    name: String,
}

#[derive(Serialize, Deserialize)]
struct VerificationFile {
    verifications: Vec<VerificationEntry>,
}

#[derive(Serialize, Deserialize)]
struct VerificationEntry {
    image_id: ImageId,
    positive: Vec<CategoryId>,
    negative: Vec<CategoryId>,
}

#[derive(Deserialize)]
struct CocoResult {
    image_id: ImageId,
    category_id: CategoryId,
    bbox: [f64; 4],
    score: f64,
}

/// A loaded dataset plus any non-fatal ingestion warnings (currently only
/// out-of-bounds boxes that were clipped).
#[derive(Debug)]
pub struct LoadedDataset {
    pub dataset: Dataset,
    pub warnings: Vec<String>,
}

fn parse_coco(root: CocoRoot, verifications: Vec<VerificationRecord>) -> Result<LoadedDataset> {
    let categories: Vec<Category> = root
        .categories
        .into_iter()
        .map(|c| Category {
            id: c.id,
            name: c.name,
        })
        .collect();
    let images: Vec<ImageRecord> = root
        .images
        .into_iter()
        .map(|im| ImageRecord {
            image_id: im.id,
            width: im.width,
            height: im.height,
            file_name: im.file_name,
        })
        .collect();
    let dims: BTreeMap<ImageId, (f64, f64)> = images
        .iter()
        .map(|im| (im.image_id, (im.width as f64, im.height as f64)))
        .collect();

    let mut warnings = Vec::new();
    let mut annotations = Vec::with_capacity(root.annotations.len());
    for a in root.annotations {
        let [x, y, w, h] = a.bbox;
        let bbox = BBox::from_xywh(x, y, w, h).map_err(|e| {
            Error::Integrity(format!("annotation {}: {e}", a.id))
        })?;
        let bbox = match dims.get(&a.image_id) {
            Some(&(iw, ih)) => {
                let clipped = bbox.clip_to(iw, ih);
                if clipped != bbox {
                    warnings.push(format!(
                        "annotation {} on image {} clipped to image bounds",
                        a.id, a.image_id
                    ));
                }
                clipped
            }
            // Leave the dangling reference for Dataset::new to report.
            None => bbox,
        };
        annotations.push(Annotation {
            annotation_id: a.id,
            image_id: a.image_id,
            category_id: a.category_id,
            bbox,
        });
    }

    let dataset = Dataset::new(categories, images, annotations, verifications)?;
    Ok(LoadedDataset { dataset, warnings })
}

/// Loads a COCO-format annotation file plus an optional verification sidecar.
pub fn load_dataset(
    annotation_path: &Path,
    verification_path: Option<&Path>,
) -> Result<LoadedDataset> {
    let text =
        fs::read_to_string(annotation_path).map_err(|e| Error::io(annotation_path, e))?;
    let root: CocoRoot = serde_json::from_str(&text)
        .map_err(|e| Error::parse(annotation_path, e.to_string()))?;

    let verifications = match verification_path {
        Some(p) => {
            let vtext = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let vfile: VerificationFile =
                serde_json::from_str(&vtext).map_err(|e| Error::parse(p, e.to_string()))?;
            vfile
                .verifications
                .into_iter()
                .map(|v| VerificationRecord {
                    image_id: v.image_id,
                    positive: v.positive.into_iter().collect(),
                    negative: v.negative.into_iter().collect(),
                })
                .collect()
        }
        None => Vec::new(),
    };

    parse_coco(root, verifications)
}

/// Canonical COCO JSON for `dataset` (sorted records, stable field order).
pub fn to_coco_json(dataset: &Dataset) -> String {
    let root = CocoRoot {
        images: dataset
            .images()
            .iter()
            .map(|im| CocoImage {
                id: im.image_id,
                width: im.width,
                height: im.height,
                file_name: im.file_name.clone(),
            })
            .collect(),
        annotations: dataset
            .annotations()
            .iter()
            .map(|a| CocoAnnotation {
                id: a.annotation_id,
                image_id: a.image_id,
                category_id: a.category_id,
                bbox: a.bbox.to_xywh(),
            })
            .collect(),
        categories: dataset
            .categories()
            .iter()
            .map(|c| CocoCategory {
                id: c.id,
                name: c.name.clone(),
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&root).expect("serializable");
    s.push('\n');
    s
}

/// Canonical verification sidecar JSON for `dataset`.
pub fn to_verification_json(dataset: &Dataset) -> String {
    let file = VerificationFile {
        verifications: dataset
            .images()
            .iter()
            .filter_map(|im| dataset.verification(im.image_id))
            .map(|v| VerificationEntry {
                image_id: v.image_id,
                positive: v.positive.iter().copied().collect(),
                negative: v.negative.iter().copied().collect(),
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&file).expect("serializable");
    s.push('\n');
    s
}

/// Writes `annotations.json` and `verifications.json` into `out_dir`.
/// Load followed by save is the identity on canonical files.
pub fn save_dataset(dataset: &Dataset, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let ann_path = out_dir.join("annotations.json");
    fs::write(&ann_path, to_coco_json(dataset)).map_err(|e| Error::io(&ann_path, e))?;
    let ver_path = out_dir.join("verifications.json");
    fs::write(&ver_path, to_verification_json(dataset)).map_err(|e| Error::io(&ver_path, e))?;
    Ok(())
}

fn detections_from_results(results: Vec<CocoResult>, dataset: &Dataset) -> Result<DetectionSet> {
    let mut detections = Vec::with_capacity(results.len());
    for (i, r) in results.into_iter().enumerate() {
        let [x, y, w, h] = r.bbox;
        let bbox = BBox::from_xywh(x, y, w, h)
            .map_err(|e| Error::Integrity(format!("detection {i}: {e}")))?;
        detections.push(Detection {
            image_id: r.image_id,
            category_id: r.category_id,
            bbox,
            score: r.score,
        });
    }
    DetectionSet::new(detections, dataset)
}

/// Loads a COCO results-format JSON list of detections.
pub fn load_detections(path: &Path, dataset: &Dataset) -> Result<DetectionSet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let results: Vec<CocoResult> =
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
    detections_from_results(results, dataset)
}

/// Parses detections from an in-memory COCO results JSON string.
pub fn parse_detections(json: &str, dataset: &Dataset) -> Result<DetectionSet> {
    let results: Vec<CocoResult> =
        serde_json::from_str(json).map_err(|e| Error::Integrity(format!("parse error: {e}")))?;
    detections_from_results(results, dataset)
}
