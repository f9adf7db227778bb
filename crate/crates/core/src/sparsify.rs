//! Sparse-dataset construction by per-category random deletion.
//!
//! For each category, every image containing it is independently selected
//! with probability `alpha`; all annotations of that category in selected
//! images are removed and the category leaves the image's positive set. The
//! category is deliberately *not* added to the negative set: a deleted
//! category is present-but-unverified, which is the condition the sampling
//! regimes target. Surviving categories keep their full per-image annotation
//! sets, so per-image exhaustiveness is preserved.
//!
//! Each Bernoulli draw is keyed by `(seed, category, image)`, so the output
//! is reproducible regardless of iteration order.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Annotation, CategoryId, Dataset, ImageId};
use crate::error::{Error, Result};
use crate::rng::{stream, KeyedRng};

/// Record of everything a sparsification run removed; feeds the oracle
/// baselines.
#[derive(Debug, Clone, PartialEq)]
pub struct DeletionRecord {
    pub alpha: f64,
    pub seed: u64,
    /// Selected `(image, category)` pairs, sorted.
    pub deleted: Vec<(ImageId, CategoryId)>,
    pub deleted_annotations: Vec<Annotation>,
}

impl DeletionRecord {
    pub fn deleted_on(&self, image: ImageId) -> impl Iterator<Item = &Annotation> {
        self.deleted_annotations
            .iter()
            .filter(move |a| a.image_id == image)
    }
}

/// Deletes each (category, image-containing-it) pair with probability `alpha`.
pub fn sparsify(dataset: &Dataset, alpha: f64, seed: u64) -> Result<(Dataset, DeletionRecord)> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!(
            "alpha must be in [0, 1], got {alpha}"
        )));
    }
    let rng = KeyedRng::new(seed);

    let mut selected: BTreeSet<(ImageId, CategoryId)> = BTreeSet::new();
    for category in dataset.categories() {
        for image in dataset.images_with_category(category.id) {
            if rng.bernoulli(alpha, stream::SPARSIFY, &[category.id, image]) {
                selected.insert((image, category.id));
            }
        }
    }

    let mut kept = Vec::new();
    let mut deleted_annotations = Vec::new();
    for a in dataset.annotations() {
        if selected.contains(&(a.image_id, a.category_id)) {
            deleted_annotations.push(a.clone());
        } else {
            kept.push(a.clone());
        }
    }

    let verifications = dataset
        .images()
        .iter()
        .filter_map(|im| dataset.verification(im.image_id))
        .map(|v| {
            let mut v = v.clone();
            v.positive
                .retain(|c| !selected.contains(&(v.image_id, *c)));
            v
        })
        .collect();

    let sparse = Dataset::new(
        dataset.categories().to_vec(),
        dataset.images().to_vec(),
        kept,
        verifications,
    )?;
    let record = DeletionRecord {
        alpha,
        seed,
        deleted: selected.into_iter().collect(),
        deleted_annotations,
    };
    Ok((sparse, record))
}

/// Mean boxes per image and mean distinct annotated categories per image.
/// Images with no annotations count in the denominator. `None` when the
/// dataset has no images.
pub fn sparsity_stats(dataset: &Dataset) -> Option<(f64, f64)> {
    let n_images = dataset.images().len();
    if n_images == 0 {
        return None;
    }
    let n_boxes = dataset.annotations().len();
    let distinct_total: usize = dataset
        .images()
        .iter()
        .map(|im| {
            dataset
                .annotations_on(im.image_id)
                .map(|a| a.category_id)
                .collect::<BTreeSet<_>>()
                .len()
        })
        .sum();
    Some((
        n_boxes as f64 / n_images as f64,
        distinct_total as f64 / n_images as f64,
    ))
}

// ---------------------------------------------------------------------------
// DeletionRecord file format
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct DeletionFile {
    alpha: f64,
    seed: u64,
    deleted: Vec<DeletedPair>,
    deleted_annotations: Vec<DeletedAnnotation>,
}

#[derive(Serialize, Deserialize)]
struct DeletedPair {
    image_id: ImageId,
    category_id: CategoryId,
}

#[derive(Serialize, Deserialize)]
struct DeletedAnnotation {
    id: u64,
    image_id: ImageId,
    category_id: CategoryId,
    bbox: [f64; 4],
}

pub fn deletion_record_to_json(record: &DeletionRecord) -> String {
    let file = DeletionFile {
        alpha: record.alpha,
        seed: record.seed,
        deleted: record
            .deleted
            .iter()
            .map(|&(image_id, category_id)| DeletedPair {
                image_id,
                category_id,
            })
            .collect(),
        deleted_annotations: record
            .deleted_annotations
            .iter()
            .map(|a| DeletedAnnotation {
                id: a.annotation_id,
                image_id: a.image_id,
                category_id: a.category_id,
                bbox: a.bbox.to_xywh(),
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&file).expect("serializable");
    s.push('\n');
    s
}

pub fn load_deletion_record(path: &Path) -> Result<DeletionRecord> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: DeletionFile =
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
    let mut deleted_annotations = Vec::with_capacity(file.deleted_annotations.len());
    for a in file.deleted_annotations {
        let [x, y, w, h] = a.bbox;
        deleted_annotations.push(Annotation {
            annotation_id: a.id,
            image_id: a.image_id,
            category_id: a.category_id,
            bbox: crate::geometry::BBox::from_xywh(x, y, w, h)
                .map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    message: format!("deleted annotation {}: {e}", a.id),
                })?,
        });
    }
    let deleted: Vec<(ImageId, CategoryId)> = file
        .deleted
        .iter()
        .map(|p| (p.image_id, p.category_id))
        .collect();
    let pair_set: BTreeSet<_> = deleted.iter().copied().collect();
    for a in &deleted_annotations {
        if !pair_set.contains(&(a.image_id, a.category_id)) {
            return Err(Error::Integrity(format!(
                "deleted annotation {} has no matching (image, category) pair",
                a.annotation_id
            )));
        }
    }
    Ok(DeletionRecord {
        alpha: file.alpha,
        seed: file.seed,
        deleted,
        deleted_annotations,
    })
}
