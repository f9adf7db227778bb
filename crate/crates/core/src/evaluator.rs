//! Detection evaluation and score-threshold calibration.
//!
//! Matching is greedy per image and category: detections in descending score
//! order claim the highest-IoU unmatched ground truth at or above the IoU
//! threshold. Average precision integrates the precision envelope over the
//! recall points of the score-threshold operating curve (one operating point
//! per distinct score, so tied scores move together), and mmAP averages AP
//! over categories with ground truth and the ten IoU thresholds
//! 0.50, 0.55, ..., 0.95.
//!
//! Calibration picks, per category, the minimum observed score threshold
//! whose precision reaches `min_precision`; categories that never reach it
//! get +inf and contribute no pseudo labels downstream.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{AnnotationId, CategoryId, Dataset, DetectionSet, ImageId};
use crate::error::{Error, Result};
use crate::geometry::iou;
use crate::rng::{stream, KeyedRng};

/// One matched detection. `input_index` is the detection's position in the
/// original list and breaks score ties deterministically.
#[derive(Debug, Clone, PartialEq)]
pub struct DetMatch {
    pub image_id: ImageId,
    pub score: f64,
    pub is_true_positive: bool,
    pub matched_gt: Option<AnnotationId>,
    pub input_index: usize,
}

/// Match outcome per category: detections sorted by descending score (ties by
/// input order) plus the category's ground-truth count.
#[derive(Debug, Clone, Default)]
pub struct CategoryMatches {
    pub detections: Vec<DetMatch>,
    pub n_gt: usize,
}

/// Detections matched against ground truth at one IoU threshold.
#[derive(Debug, Clone)]
pub struct MatchResult {
    pub iou_thresh: f64,
    per_category: BTreeMap<CategoryId, CategoryMatches>,
}

impl MatchResult {
    pub fn category(&self, id: CategoryId) -> Option<&CategoryMatches> {
        self.per_category.get(&id)
    }

    pub fn categories(&self) -> impl Iterator<Item = (&CategoryId, &CategoryMatches)> {
        self.per_category.iter()
    }
}

/// Greedy matching of detections to ground truth, per image and category.
/// Each ground truth is claimed by at most one detection; an IoU tie between
/// candidates goes to the lowest annotation id.
pub fn match_detections(
    detections: &DetectionSet,
    dataset: &Dataset,
    iou_thresh: f64,
) -> Result<MatchResult> {
    if !(iou_thresh > 0.0 && iou_thresh < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "iou_thresh must be in (0, 1), got {iou_thresh}"
        )));
    }

    let mut per_category: BTreeMap<CategoryId, CategoryMatches> = dataset
        .categories()
        .iter()
        .map(|c| (c.id, CategoryMatches::default()))
        .collect();
    for a in dataset.annotations() {
        per_category
            .entry(a.category_id)
            .or_default()
            .n_gt += 1;
    }

    let mut groups: BTreeMap<(ImageId, CategoryId), Vec<usize>> = BTreeMap::new();
    for (idx, d) in detections.detections.iter().enumerate() {
        groups.entry((d.image_id, d.category_id)).or_default().push(idx);
    }

    for ((image, category), mut indices) in groups {
        indices.sort_by(|&a, &b| {
            let da = &detections.detections[a];
            let db = &detections.detections[b];
            db.score.partial_cmp(&da.score).unwrap().then(a.cmp(&b))
        });
        let gts: Vec<(AnnotationId, crate::geometry::BBox)> = dataset
            .annotations_on(image)
            .filter(|a| a.category_id == category)
            .map(|a| (a.annotation_id, a.bbox))
            .collect();
        let mut claimed: BTreeSet<AnnotationId> = BTreeSet::new();

        for idx in indices {
            let det = &detections.detections[idx];
            let mut best: Option<(f64, AnnotationId)> = None;
            for &(gt_id, gt_box) in &gts {
                if claimed.contains(&gt_id) {
                    continue;
                }
                let overlap = iou(&det.bbox, &gt_box);
                if overlap < iou_thresh {
                    continue;
                }
                let better = match best {
                    None => true,
                    // Strict > keeps the lowest gt id on equal IoU because
                    // gts are iterated in ascending annotation id.
                    Some((best_iou, _)) => overlap > best_iou,
                };
                if better {
                    best = Some((overlap, gt_id));
                }
            }
            let (is_tp, matched_gt) = match best {
                Some((_, gt_id)) => {
                    claimed.insert(gt_id);
                    (true, Some(gt_id))
                }
                None => (false, None),
            };
            per_category
                .entry(category)
                .or_default()
                .detections
                .push(DetMatch {
                    image_id: image,
                    score: det.score,
                    is_true_positive: is_tp,
                    matched_gt,
                    input_index: idx,
                });
        }
    }

    for matches in per_category.values_mut() {
        matches.detections.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap()
                .then(a.input_index.cmp(&b.input_index))
        });
    }

    Ok(MatchResult {
        iou_thresh,
        per_category,
    })
}

/// Precision of a category's detections with score at or above `t`.
/// `None` when no detection qualifies.
pub fn precision_at(result: &MatchResult, category: CategoryId, t: f64) -> Option<f64> {
    let matches = result.category(category)?;
    let mut tp = 0usize;
    let mut total = 0usize;
    for d in &matches.detections {
        if d.score >= t {
            total += 1;
            if d.is_true_positive {
                tp += 1;
            }
        }
    }
    if total == 0 {
        None
    } else {
        Some(tp as f64 / total as f64)
    }
}

/// Per-category score thresholds; +inf disables a category.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdTable {
    pub min_precision: f64,
    pub thresholds: BTreeMap<CategoryId, f64>,
}

impl ThresholdTable {
    pub fn get(&self, category: CategoryId) -> f64 {
        self.thresholds
            .get(&category)
            .copied()
            .unwrap_or(f64::INFINITY)
    }
}

/// Minimum observed score threshold per category whose precision reaches
/// `min_precision`. Candidate thresholds are the distinct detection scores;
/// precision is piecewise constant between them, so nothing is lost.
pub fn calibrate(result: &MatchResult, min_precision: f64) -> Result<ThresholdTable> {
    if !(min_precision > 0.0 && min_precision <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "min_precision must be in (0, 1], got {min_precision}"
        )));
    }
    let mut thresholds = BTreeMap::new();
    for (&category, matches) in result.categories() {
        let mut candidates: Vec<f64> = matches.detections.iter().map(|d| d.score).collect();
        candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
        candidates.dedup();
        let chosen = candidates
            .into_iter()
            .find(|&t| precision_at(result, category, t).is_some_and(|p| p >= min_precision))
            .unwrap_or(f64::INFINITY);
        thresholds.insert(category, chosen);
    }
    Ok(ThresholdTable {
        min_precision,
        thresholds,
    })
}

/// Average precision for one category: envelope-interpolated area under the
/// precision/recall curve over all distinct recall points. `None` when the
/// category has no ground truth.
pub fn average_precision(result: &MatchResult, category: CategoryId) -> Option<f64> {
    let matches = result.category(category)?;
    if matches.n_gt == 0 {
        return None;
    }
    // One operating point per distinct score: detections tied on score enter
    // together, as they would under any real score threshold.
    let mut points: Vec<(f64, f64)> = Vec::new();
    let mut tp = 0usize;
    let mut fp = 0usize;
    let dets = &matches.detections;
    let mut i = 0;
    while i < dets.len() {
        let score = dets[i].score;
        while i < dets.len() && dets[i].score == score {
            if dets[i].is_true_positive {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((
            tp as f64 / matches.n_gt as f64,
            tp as f64 / (tp + fp) as f64,
        ));
    }

    // Precision envelope from the right, then integrate recall increments.
    let mut env = vec![0.0f64; points.len()];
    let mut running = 0.0f64;
    for (k, &(_, precision)) in points.iter().enumerate().rev() {
        running = running.max(precision);
        env[k] = running;
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (k, &(recall, _)) in points.iter().enumerate() {
        ap += (recall - prev_recall) * env[k];
        prev_recall = recall;
    }
    Some(ap)
}

/// The ten COCO-style IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn coco_iou_thresholds() -> Vec<f64> {
    (0..10).map(|i| 0.5 + 0.05 * i as f64).collect()
}

/// Mean AP over the requested categories (those with ground truth) and the
/// ten IoU thresholds. `subset = None` means all categories. Returns 0 when
/// nothing is evaluable.
pub fn mmap_subset(
    detections: &DetectionSet,
    dataset: &Dataset,
    subset: Option<&BTreeSet<CategoryId>>,
) -> Result<f64> {
    let thresholds = coco_iou_thresholds();
    let results: Vec<MatchResult> = thresholds
        .par_iter()
        .map(|&t| match_detections(detections, dataset, t))
        .collect::<Result<_>>()?;

    let mut aps = Vec::new();
    for result in &results {
        for (&category, matches) in result.categories() {
            if matches.n_gt == 0 {
                continue;
            }
            if subset.is_some_and(|s| !s.contains(&category)) {
                continue;
            }
            if let Some(ap) = average_precision(result, category) {
                aps.push(ap);
            }
        }
    }
    if aps.is_empty() {
        return Ok(0.0);
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

/// COCO-style mmAP over every category with ground truth.
pub fn mmap(detections: &DetectionSet, dataset: &Dataset) -> Result<f64> {
    mmap_subset(detections, dataset, None)
}

/// mAP at each score threshold after dropping detections below it.
pub fn threshold_sweep(
    detections: &DetectionSet,
    dataset: &Dataset,
    score_thresholds: &[f64],
    subset: Option<&BTreeSet<CategoryId>>,
) -> Result<Vec<(f64, f64)>> {
    if score_thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument(
            "score thresholds must be sorted ascending".into(),
        ));
    }
    score_thresholds
        .iter()
        .map(|&t| {
            let filtered = DetectionSet {
                detections: detections
                    .detections
                    .iter()
                    .filter(|d| d.score >= t)
                    .cloned()
                    .collect(),
            };
            Ok((t, mmap_subset(&filtered, dataset, subset)?))
        })
        .collect()
}

/// TSV rendering of a threshold sweep.
pub fn sweep_tsv(rows: &[(f64, f64)]) -> String {
    let mut out = String::from("threshold\tmap\n");
    for &(t, v) in rows {
        out.push_str(&format!("{t:.6}\t{v:.6}\n"));
    }
    out
}

/// Deterministic image split by keyed hash: an image lands on the training
/// side when its draw is below `train_fraction`. Used to withhold data for
/// calibration.
pub fn split_dataset(
    dataset: &Dataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::InvalidArgument(format!(
            "train_fraction must be in [0, 1], got {train_fraction}"
        )));
    }
    let rng = KeyedRng::new(seed);
    let train_ids: BTreeSet<ImageId> = dataset
        .images()
        .iter()
        .map(|im| im.image_id)
        .filter(|&id| rng.uniform(stream::SPLIT, &[id]) < train_fraction)
        .collect();

    let build = |keep: &dyn Fn(ImageId) -> bool| -> Result<Dataset> {
        Dataset::new(
            dataset.categories().to_vec(),
            dataset
                .images()
                .iter()
                .filter(|im| keep(im.image_id))
                .cloned()
                .collect(),
            dataset
                .annotations()
                .iter()
                .filter(|a| keep(a.image_id))
                .cloned()
                .collect(),
            dataset
                .images()
                .iter()
                .filter(|im| keep(im.image_id))
                .filter_map(|im| dataset.verification(im.image_id))
                .cloned()
                .collect(),
        )
    };
    let train = build(&|id| train_ids.contains(&id))?;
    let withheld = build(&|id| !train_ids.contains(&id))?;
    Ok((train, withheld))
}

// ---------------------------------------------------------------------------
// ThresholdTable file format
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ThresholdValue {
    Finite(f64),
    Symbol(String),
}

#[derive(Serialize, Deserialize)]
struct ThresholdFile {
    min_precision: f64,
    thresholds: BTreeMap<CategoryId, ThresholdValue>,
}

pub fn threshold_table_to_json(table: &ThresholdTable) -> String {
    let file = ThresholdFile {
        min_precision: table.min_precision,
        thresholds: table
            .thresholds
            .iter()
            .map(|(&c, &v)| {
                let value = if v.is_finite() {
                    ThresholdValue::Finite(v)
                } else {
                    ThresholdValue::Symbol("inf".to_string())
                };
                (c, value)
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&file).expect("serializable");
    s.push('\n');
    s
}

pub fn load_threshold_table(path: &Path) -> Result<ThresholdTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ThresholdFile =
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
    let mut thresholds = BTreeMap::new();
    for (c, v) in file.thresholds {
        let value = match v {
            ThresholdValue::Finite(x) => x,
            ThresholdValue::Symbol(s) if s == "inf" => f64::INFINITY,
            ThresholdValue::Symbol(s) => {
                return Err(Error::parse(path, format!("bad threshold value '{s}'")));
            }
        };
        thresholds.insert(c, value);
    }
    Ok(ThresholdTable {
        min_precision: file.min_precision,
        thresholds,
    })
}
