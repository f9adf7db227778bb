//! Shared oracles and random-instance generators for the integration suites.
//!
//! The algorithm oracles are literal transcriptions of the sampling
//! algorithms' nested loops and stay independent of the library's optimized
//! paths; the numeric oracles use exact integer arithmetic.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::rngs::StdRng;
use rand::Rng;

use sparseanno_core::dataset::{
    Annotation, Category, CategoryId, Dataset, Detection, DetectionSet, ImageRecord,
    VerificationRecord,
};
use sparseanno_core::geometry::{aiou, iou, BBox};
use sparseanno_core::partstats::PartSubjectMap;

// ---------------------------------------------------------------------------
// Literal transcriptions of the two sampling algorithms
// ---------------------------------------------------------------------------

/// Part-aware sampling, written exactly as the nested-loop formulation:
/// for every proposal and every ground truth, when the proposal is contained
/// in the ground truth above tau and the ground truth's category has mapped
/// parts, every unverified part category joins the proposal's ignore set.
pub fn algorithm1_literal(
    proposals: &[BBox],
    gt_boxes: &[BBox],
    gt_labels: &[CategoryId],
    verified: &BTreeSet<CategoryId>,
    part_map: &BTreeMap<CategoryId, Vec<CategoryId>>,
    tau: f64,
) -> Vec<BTreeSet<CategoryId>> {
    let mut ignore: Vec<BTreeSet<CategoryId>> = vec![BTreeSet::new(); proposals.len()];
    for i in 0..proposals.len() {
        for j in 0..gt_boxes.len() {
            if aiou(&proposals[i], &gt_boxes[j]) > tau && part_map.contains_key(&gt_labels[j]) {
                for p in &part_map[&gt_labels[j]] {
                    if !verified.contains(p) {
                        ignore[i].insert(*p);
                    }
                }
            }
        }
    }
    ignore
}

/// Pseudo-label-guided sampling, written exactly as the two-phase
/// formulation: filter the detections (score threshold, verified label,
/// high overlap with any ground truth), then mark every proposal
/// overlapping a surviving detection.
#[allow(clippy::too_many_arguments)]
pub fn algorithm2_literal(
    proposals: &[BBox],
    gt_boxes: &[BBox],
    verified: &BTreeSet<CategoryId>,
    det_boxes: &[BBox],
    det_labels: &[CategoryId],
    det_scores: &[f64],
    thresholds: &BTreeMap<CategoryId, f64>,
    gt_iou: f64,
    roi_iou: f64,
) -> Vec<BTreeSet<CategoryId>> {
    let mut surviving: Vec<usize> = Vec::new();
    'dets: for k in 0..det_boxes.len() {
        let threshold = thresholds
            .get(&det_labels[k])
            .copied()
            .unwrap_or(f64::INFINITY);
        if det_scores[k] < threshold || verified.contains(&det_labels[k]) {
            continue;
        }
        for g in gt_boxes {
            if iou(g, &det_boxes[k]) > gt_iou {
                continue 'dets;
            }
        }
        surviving.push(k);
    }

    let mut ignore: Vec<BTreeSet<CategoryId>> = vec![BTreeSet::new(); proposals.len()];
    for i in 0..proposals.len() {
        for &k in &surviving {
            if iou(&proposals[i], &det_boxes[k]) > roi_iou {
                ignore[i].insert(det_labels[k]);
            }
        }
    }
    ignore
}

// ---------------------------------------------------------------------------
// Random single-image instances for the oracle-equivalence suites
// ---------------------------------------------------------------------------

pub struct RandomInstance {
    pub dataset: Dataset,
    pub proposals: Vec<BBox>,
    pub gt_boxes: Vec<BBox>,
    pub gt_labels: Vec<CategoryId>,
    pub verified: BTreeSet<CategoryId>,
    pub part_map_raw: BTreeMap<CategoryId, Vec<CategoryId>>,
    pub part_map: PartSubjectMap,
    pub detections: DetectionSet,
    pub det_boxes: Vec<BBox>,
    pub det_labels: Vec<CategoryId>,
    pub det_scores: Vec<f64>,
    pub thresholds: BTreeMap<CategoryId, f64>,
}

pub const INSTANCE_IMAGE: u64 = 1;

fn random_box(rng: &mut StdRng) -> BBox {
    let x0 = rng.random_range(0..80) as f64;
    let y0 = rng.random_range(0..80) as f64;
    let w = rng.random_range(2..=20) as f64;
    let h = rng.random_range(2..=20) as f64;
    BBox::new(x0, y0, (x0 + w).min(100.0), (y0 + h).min(100.0)).unwrap()
}

fn jittered(rng: &mut StdRng, b: &BBox) -> BBox {
    let w = b.x_max - b.x_min;
    let h = b.y_max - b.y_min;
    let mut d = |s: f64| rng.random_range(-0.2..0.2) * s;
    let x0 = (b.x_min + d(w)).clamp(0.0, 99.0);
    let y0 = (b.y_min + d(h)).clamp(0.0, 99.0);
    let x1 = (b.x_max + d(w)).clamp(x0, 100.0);
    let y1 = (b.y_max + d(h)).clamp(y0, 100.0);
    BBox::new(x0, y0, x1, y1).unwrap()
}

pub fn random_instance(rng: &mut StdRng) -> RandomInstance {
    let n_categories = rng.random_range(2..=8) as u64;
    let categories: Vec<Category> = (1..=n_categories)
        .map(|id| Category {
            id,
            name: format!("c{id}"),
        })
        .collect();
    let image = ImageRecord {
        image_id: INSTANCE_IMAGE,
        width: 100,
        height: 100,
        file_name: "i.png".into(),
    };

    let n_gt = rng.random_range(0..=10);
    let mut gt_boxes = Vec::new();
    let mut gt_labels = Vec::new();
    let mut annotations = Vec::new();
    for a in 0..n_gt {
        let b = random_box(rng);
        let cat = rng.random_range(1..=n_categories);
        gt_boxes.push(b);
        gt_labels.push(cat);
        annotations.push(Annotation {
            annotation_id: a as u64 + 1,
            image_id: INSTANCE_IMAGE,
            category_id: cat,
            bbox: b,
        });
    }

    let annotated: BTreeSet<u64> = gt_labels.iter().copied().collect();
    let mut positive = annotated.clone();
    let mut negative = BTreeSet::new();
    for c in 1..=n_categories {
        if positive.contains(&c) {
            continue;
        }
        if rng.random_bool(0.3) {
            positive.insert(c);
        } else if rng.random_bool(0.3) {
            negative.insert(c);
        }
    }
    let verified: BTreeSet<u64> = positive.union(&negative).copied().collect();

    let mut part_map_raw: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
    for s in 1..=n_categories {
        if !rng.random_bool(0.4) {
            continue;
        }
        let mut parts: BTreeSet<u64> = BTreeSet::new();
        for _ in 0..rng.random_range(1..=3) {
            let p = rng.random_range(1..=n_categories);
            if p != s {
                parts.insert(p);
            }
        }
        if !parts.is_empty() {
            part_map_raw.insert(s, parts.into_iter().collect());
        }
    }
    let part_map = PartSubjectMap::new(part_map_raw.clone()).unwrap();

    let n_proposals = rng.random_range(0..=20);
    let proposals: Vec<BBox> = (0..n_proposals)
        .map(|_| {
            if !gt_boxes.is_empty() && rng.random_bool(0.5) {
                let idx = rng.random_range(0..gt_boxes.len());
                jittered(rng, &gt_boxes[idx])
            } else {
                random_box(rng)
            }
        })
        .collect();

    let n_dets = rng.random_range(0..=10);
    let mut det_boxes = Vec::new();
    let mut det_labels = Vec::new();
    let mut det_scores = Vec::new();
    for _ in 0..n_dets {
        let b = if !gt_boxes.is_empty() && rng.random_bool(0.4) {
            let idx = rng.random_range(0..gt_boxes.len());
            jittered(rng, &gt_boxes[idx])
        } else {
            random_box(rng)
        };
        det_boxes.push(b);
        det_labels.push(rng.random_range(1..=n_categories));
        det_scores.push(rng.random_range(0..=20) as f64 * 0.05);
    }

    let mut thresholds = BTreeMap::new();
    for c in 1..=n_categories {
        if rng.random_bool(0.7) {
            let t = if rng.random_bool(0.1) {
                f64::INFINITY
            } else {
                rng.random_range(0..=20) as f64 * 0.05
            };
            thresholds.insert(c, t);
        }
    }

    let dataset = Dataset::new(
        categories,
        vec![image],
        annotations,
        vec![VerificationRecord {
            image_id: INSTANCE_IMAGE,
            positive,
            negative,
        }],
    )
    .unwrap();
    let detections = DetectionSet::new(
        det_boxes
            .iter()
            .zip(&det_labels)
            .zip(&det_scores)
            .map(|((b, &c), &s)| Detection {
                image_id: INSTANCE_IMAGE,
                category_id: c,
                bbox: *b,
                score: s,
            })
            .collect(),
        &dataset,
    )
    .unwrap();

    RandomInstance {
        dataset,
        proposals,
        gt_boxes,
        gt_labels,
        verified,
        part_map_raw,
        part_map,
        detections,
        det_boxes,
        det_labels,
        det_scores,
        thresholds,
    }
}

// ---------------------------------------------------------------------------
// Exact rational geometry oracle
// ---------------------------------------------------------------------------

/// Integer-coordinate box, `[x0, y0, x1, y1]`.
pub type IntBox = [i64; 4];

fn int_area(b: IntBox) -> i128 {
    (b[2] - b[0]) as i128 * (b[3] - b[1]) as i128
}

fn int_intersection(a: IntBox, b: IntBox) -> i128 {
    let w = (a[2].min(b[2]) - a[0].max(b[0])).max(0) as i128;
    let h = (a[3].min(b[3]) - a[1].max(b[1])).max(0) as i128;
    w * h
}

/// Exact IoU as a (numerator, denominator) pair; denominator 0 encodes the
/// zero-union case whose defined value is 0.
pub fn iou_rational(a: IntBox, b: IntBox) -> (i128, i128) {
    let inter = int_intersection(a, b);
    let union = int_area(a) + int_area(b) - inter;
    (inter, union)
}

/// Exact asymmetric IoU as a (numerator, denominator) pair.
pub fn aiou_rational(a: IntBox, b: IntBox) -> (i128, i128) {
    (int_intersection(a, b), int_area(a))
}

pub fn rational_to_f64((num, den): (i128, i128)) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn int_box_to_bbox(b: IntBox) -> BBox {
    BBox::new(b[0] as f64, b[1] as f64, b[2] as f64, b[3] as f64).unwrap()
}

pub fn random_int_box(rng: &mut StdRng) -> IntBox {
    let x0 = rng.random_range(-1000..1000);
    let y0 = rng.random_range(-1000..1000);
    let w = rng.random_range(0..500);
    let h = rng.random_range(0..500);
    [x0, y0, x0 + w, y0 + h]
}

// ---------------------------------------------------------------------------
// Brute-force average precision
// ---------------------------------------------------------------------------

/// All-thresholds AP oracle. Operating points are taken at every distinct
/// score; the envelope is recomputed per recall by a full scan.
pub fn ap_brute_force(scored_flags: &[(f64, bool)], n_gt: usize) -> f64 {
    assert!(n_gt > 0);
    let mut thresholds: Vec<f64> = scored_flags.iter().map(|&(s, _)| s).collect();
    thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    thresholds.dedup();

    let mut points: Vec<(f64, f64)> = Vec::new();
    for &t in &thresholds {
        let mut tp = 0usize;
        let mut total = 0usize;
        for &(s, flag) in scored_flags {
            if s >= t {
                total += 1;
                if flag {
                    tp += 1;
                }
            }
        }
        if total > 0 {
            points.push((tp as f64 / n_gt as f64, tp as f64 / total as f64));
        }
    }

    let mut recalls: Vec<f64> = points.iter().map(|&(r, _)| r).collect();
    recalls.sort_by(|a, b| a.partial_cmp(b).unwrap());
    recalls.dedup();

    let mut ap = 0.0;
    let mut prev = 0.0;
    for &r in &recalls {
        let envelope = points
            .iter()
            .filter(|&&(pr, _)| pr >= r)
            .map(|&(_, pp)| pp)
            .fold(0.0f64, f64::max);
        ap += (r - prev) * envelope;
        prev = r;
    }
    ap
}

// ---------------------------------------------------------------------------
// Brute-force part statistics
// ---------------------------------------------------------------------------

/// Double-loop transcription of the inclusion ratio over co-occurring
/// images. Returns `None` when no part box lives in a co-occurring image.
pub fn included_brute_force(
    dataset: &Dataset,
    part: CategoryId,
    subject: CategoryId,
    tau: f64,
) -> Option<f64> {
    let mut part_images = BTreeSet::new();
    let mut subject_images = BTreeSet::new();
    for a in dataset.annotations() {
        if a.category_id == part {
            part_images.insert(a.image_id);
        }
        if a.category_id == subject {
            subject_images.insert(a.image_id);
        }
    }
    let mut n_part = 0usize;
    let mut n_inc = 0usize;
    for a in dataset.annotations() {
        if a.category_id != part
            || !part_images.contains(&a.image_id)
            || !subject_images.contains(&a.image_id)
        {
            continue;
        }
        n_part += 1;
        let mut contained = false;
        for s in dataset.annotations() {
            if s.category_id == subject
                && s.image_id == a.image_id
                && aiou(&a.bbox, &s.bbox) > tau
            {
                contained = true;
            }
        }
        if contained {
            n_inc += 1;
        }
    }
    if n_part == 0 {
        None
    } else {
        Some(n_inc as f64 / n_part as f64)
    }
}

/// Double-loop transcription of the co-occurrence ratio.
pub fn co_occur_brute_force(
    dataset: &Dataset,
    part: CategoryId,
    subject: CategoryId,
) -> Option<f64> {
    let mut part_images = BTreeSet::new();
    let mut subject_images = BTreeSet::new();
    for a in dataset.annotations() {
        if a.category_id == part {
            part_images.insert(a.image_id);
        }
        if a.category_id == subject {
            subject_images.insert(a.image_id);
        }
    }
    if subject_images.is_empty() {
        return None;
    }
    let both = part_images.intersection(&subject_images).count();
    Some(both as f64 / subject_images.len() as f64)
}

/// Random multi-image dataset for the statistics oracle suite
/// (<= 10 images, <= 20 boxes).
pub fn random_mini_dataset(rng: &mut StdRng) -> Dataset {
    let n_categories = rng.random_range(2..=5) as u64;
    let n_images = rng.random_range(1..=10) as u64;
    let n_boxes = rng.random_range(0..=20);
    let categories = (1..=n_categories)
        .map(|id| Category {
            id,
            name: format!("c{id}"),
        })
        .collect();
    let images = (1..=n_images)
        .map(|id| ImageRecord {
            image_id: id,
            width: 100,
            height: 100,
            file_name: format!("{id}.png"),
        })
        .collect();
    let annotations = (0..n_boxes)
        .map(|k| Annotation {
            annotation_id: k as u64 + 1,
            image_id: rng.random_range(1..=n_images),
            category_id: rng.random_range(1..=n_categories),
            bbox: random_box(rng),
        })
        .collect();
    Dataset::new(categories, images, annotations, vec![]).unwrap()
}
