//! Tri-state label assignment for RoI proposals.
//!
//! Every regime produces or edits an [`AssignmentMatrix`]: one label in
//! `{-1, 0, +1}` per (proposal, category) pair, a non-negative loss weight,
//! and a provenance code explaining the entry. The baseline assignment marks
//! a proposal positive for a category when it overlaps a ground truth of that
//! category at or above `fg_iou`, and negative otherwise; that negative
//! default is exactly where missing annotations turn into false negatives.
//!
//! The ignore regimes only ever convert -1 entries to 0:
//!
//! - part-aware: proposals contained (aiou > tau) in a ground truth whose
//!   category has mapped part categories get those parts ignored when the
//!   parts are unverified on the image;
//! - pseudo-label-guided: detections of a pretrained model that survive the
//!   score threshold, verified-label and ground-truth-overlap filters mark
//!   overlapping proposals as ignored for the detected category;
//! - oracle-ignore: uses the deletion record to ignore entries overlapping
//!   deleted ground truth (an upper-bound baseline, not a deployable method).
//!
//! Oracle-positive instead relabels entries overlapping deleted ground truth
//! as positive, and overlap-based soft weighting down-weights negatives by
//! their distance from annotated boxes. Regimes compose in a fixed order:
//! base, then oracle-positive, then ignores, then weights.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::dataset::{CategoryId, Dataset, DetectionSet, ImageId};
use crate::error::{Error, Result};
use crate::geometry::{aiou, iou, BBox};
use crate::partstats::PartSubjectMap;
use crate::sparsify::DeletionRecord;

/// RoI proposals for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalSet {
    pub image_id: ImageId,
    pub proposals: Vec<BBox>,
}

/// Why an entry holds its label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Reason {
    #[serde(rename = "matched")]
    Matched,
    #[serde(rename = "background")]
    Background,
    #[serde(rename = "verified-negative")]
    VerifiedNegative,
    #[serde(rename = "ignored-by-part")]
    IgnoredByPart,
    #[serde(rename = "ignored-by-pseudo")]
    IgnoredByPseudo,
    #[serde(rename = "ignored-by-oracle")]
    IgnoredByOracle,
}

/// N x C tri-state label matrix with per-entry weights and provenance.
/// Columns follow the dataset's category table in ascending id order.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentMatrix {
    image_id: ImageId,
    categories: Vec<CategoryId>,
    n_proposals: usize,
    labels: Vec<i8>,
    weights: Vec<f64>,
    provenance: Vec<Reason>,
}

impl AssignmentMatrix {
    /// Assembles a matrix from raw row-major parts, validating shapes, label
    /// range and provenance consistency. Used by importers and test
    /// harnesses; the assignment operations build matrices internally.
    pub fn from_parts(
        image_id: ImageId,
        categories: Vec<CategoryId>,
        labels: Vec<i8>,
        weights: Vec<f64>,
        provenance: Vec<Reason>,
    ) -> Result<Self> {
        if categories.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Integrity(
                "matrix categories must be strictly ascending".into(),
            ));
        }
        let c = categories.len();
        if c == 0 && !labels.is_empty() {
            return Err(Error::Integrity("labels present but no categories".into()));
        }
        let n = labels.len().checked_div(c).unwrap_or(0);
        let matrix = AssignmentMatrix {
            image_id,
            categories,
            n_proposals: n,
            labels,
            weights,
            provenance,
        };
        matrix.validate()?;
        Ok(matrix)
    }

    pub fn image_id(&self) -> ImageId {
        self.image_id
    }

    pub fn n_proposals(&self) -> usize {
        self.n_proposals
    }

    pub fn categories(&self) -> &[CategoryId] {
        &self.categories
    }

    fn idx(&self, proposal: usize, column: usize) -> usize {
        proposal * self.categories.len() + column
    }

    pub fn label(&self, proposal: usize, column: usize) -> i8 {
        self.labels[self.idx(proposal, column)]
    }

    pub fn weight(&self, proposal: usize, column: usize) -> f64 {
        self.weights[self.idx(proposal, column)]
    }

    pub fn reason(&self, proposal: usize, column: usize) -> Reason {
        self.provenance[self.idx(proposal, column)]
    }

    pub fn column_of(&self, category: CategoryId) -> Option<usize> {
        self.categories.binary_search(&category).ok()
    }

    pub fn labels_flat(&self) -> &[i8] {
        &self.labels
    }

    pub fn weights_flat(&self) -> &[f64] {
        &self.weights
    }

    /// Ignored categories per proposal, for comparison against the plain
    /// ignore-set formulation of the sampling algorithms.
    pub fn ignore_sets(&self) -> Vec<BTreeSet<CategoryId>> {
        (0..self.n_proposals)
            .map(|i| {
                self.categories
                    .iter()
                    .enumerate()
                    .filter(|&(c, _)| self.label(i, c) == 0)
                    .map(|(_, &id)| id)
                    .collect()
            })
            .collect()
    }

    /// Internal consistency: labels in {-1, 0, 1}, weights finite and
    /// non-negative, and provenance agreeing with the label it annotates.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_proposals * self.categories.len();
        if self.labels.len() != n || self.weights.len() != n || self.provenance.len() != n {
            return Err(Error::Integrity("assignment matrix shape mismatch".into()));
        }
        for k in 0..n {
            let label = self.labels[k];
            let w = self.weights[k];
            if !w.is_finite() || w < 0.0 {
                return Err(Error::Integrity(format!("entry {k} has bad weight {w}")));
            }
            let ok = match self.provenance[k] {
                Reason::Matched => label == 1,
                Reason::Background | Reason::VerifiedNegative => label == -1,
                Reason::IgnoredByPart | Reason::IgnoredByPseudo | Reason::IgnoredByOracle => {
                    label == 0
                }
            };
            if !ok {
                return Err(Error::Integrity(format!(
                    "entry {k}: label {label} inconsistent with provenance {:?}",
                    self.provenance[k]
                )));
            }
        }
        Ok(())
    }
}

fn verified_union(dataset: &Dataset, image: ImageId) -> BTreeSet<CategoryId> {
    match dataset.verification(image) {
        Some(v) => v.positive.union(&v.negative).copied().collect(),
        None => BTreeSet::new(),
    }
}

/// Baseline assignment: positive at IoU >= `fg_iou` against same-category
/// ground truth, negative otherwise. Unannotated objects become false
/// negatives here; that is what the other regimes repair.
pub fn base_assign(
    proposals: &ProposalSet,
    dataset: &Dataset,
    fg_iou: f64,
) -> Result<AssignmentMatrix> {
    if !(fg_iou > 0.0 && fg_iou < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "fg_iou must be in (0, 1), got {fg_iou}"
        )));
    }
    if dataset.image(proposals.image_id).is_none() {
        return Err(Error::Integrity(format!(
            "unknown image {}",
            proposals.image_id
        )));
    }
    let categories: Vec<CategoryId> = dataset.categories().iter().map(|c| c.id).collect();
    let negative = dataset
        .verification(proposals.image_id)
        .map(|v| v.negative.clone())
        .unwrap_or_default();

    let mut gt_by_category: BTreeMap<CategoryId, Vec<BBox>> = BTreeMap::new();
    for a in dataset.annotations_on(proposals.image_id) {
        gt_by_category.entry(a.category_id).or_default().push(a.bbox);
    }

    let n = proposals.proposals.len();
    let c = categories.len();
    let mut labels = vec![-1i8; n * c];
    let mut provenance = vec![Reason::Background; n * c];
    for (i, r) in proposals.proposals.iter().enumerate() {
        for (col, &cat) in categories.iter().enumerate() {
            let k = i * c + col;
            let matched = gt_by_category
                .get(&cat)
                .is_some_and(|boxes| boxes.iter().any(|b| iou(r, b) >= fg_iou));
            if matched {
                labels[k] = 1;
                provenance[k] = Reason::Matched;
            } else if negative.contains(&cat) {
                provenance[k] = Reason::VerifiedNegative;
            }
        }
    }

    Ok(AssignmentMatrix {
        image_id: proposals.image_id,
        categories,
        n_proposals: n,
        labels,
        weights: vec![1.0; n * c],
        provenance,
    })
}

/// Part-aware ignoring. For every proposal contained in a ground truth of a
/// mapped subject category (aiou > `tau`), every part category of that
/// subject that is not verified on the image has its entry ignored. Only
/// -1 entries change.
pub fn part_aware_ignore(
    matrix: &AssignmentMatrix,
    proposals: &ProposalSet,
    dataset: &Dataset,
    part_map: &PartSubjectMap,
    tau: f64,
) -> Result<AssignmentMatrix> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "tau must be in (0, 1], got {tau}"
        )));
    }
    let verified = verified_union(dataset, proposals.image_id);

    // Subjects worth testing: mapped category, with at least one unverified
    // part that actually is a matrix column.
    let mut subjects: Vec<(BBox, Vec<usize>)> = Vec::new();
    for a in dataset.annotations_on(proposals.image_id) {
        if let Some(parts) = part_map.parts_of(a.category_id) {
            let columns: Vec<usize> = parts
                .iter()
                .filter(|p| !verified.contains(p))
                .filter_map(|&p| matrix.column_of(p))
                .collect();
            if !columns.is_empty() {
                subjects.push((a.bbox, columns));
            }
        }
    }

    let mut out = matrix.clone();
    for (i, r) in proposals.proposals.iter().enumerate() {
        for (subject_box, columns) in &subjects {
            if aiou(r, subject_box) > tau {
                for &col in columns {
                    let k = out.idx(i, col);
                    if out.labels[k] == -1 {
                        out.labels[k] = 0;
                        out.provenance[k] = Reason::IgnoredByPart;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Pseudo-label-guided ignoring. Detections survive when their score reaches
/// the per-category threshold, their category is unverified on the image, and
/// they overlap no ground truth above `gt_iou`. Each surviving pseudo label
/// ignores its category on proposals overlapping it above `roi_iou`.
/// Categories missing from `thresholds` are treated as +inf (never survive).
pub fn pseudo_ignore(
    matrix: &AssignmentMatrix,
    proposals: &ProposalSet,
    dataset: &Dataset,
    detections: &DetectionSet,
    thresholds: &BTreeMap<CategoryId, f64>,
    gt_iou: f64,
    roi_iou: f64,
) -> Result<AssignmentMatrix> {
    for (name, v) in [("gt_iou", gt_iou), ("roi_iou", roi_iou)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "{name} must be in (0, 1), got {v}"
            )));
        }
    }
    let verified = verified_union(dataset, proposals.image_id);
    let gt_boxes: Vec<BBox> = dataset
        .annotations_on(proposals.image_id)
        .map(|a| a.bbox)
        .collect();

    let survivors: Vec<(BBox, usize)> = detections
        .on_image(proposals.image_id)
        .filter(|d| {
            let threshold = thresholds
                .get(&d.category_id)
                .copied()
                .unwrap_or(f64::INFINITY);
            d.score >= threshold && !verified.contains(&d.category_id)
        })
        .filter(|d| gt_boxes.iter().all(|g| iou(g, &d.bbox) <= gt_iou))
        .filter_map(|d| matrix.column_of(d.category_id).map(|col| (d.bbox, col)))
        .collect();

    let mut out = matrix.clone();
    for (i, r) in proposals.proposals.iter().enumerate() {
        for (pseudo_box, col) in &survivors {
            if iou(r, pseudo_box) > roi_iou {
                let k = out.idx(i, *col);
                if out.labels[k] == -1 {
                    out.labels[k] = 0;
                    out.provenance[k] = Reason::IgnoredByPseudo;
                }
            }
        }
    }
    Ok(out)
}

/// Oracle baseline: ignores entries overlapping deleted ground truth above
/// `iou_thresh`. Requires the deletion record from the sparsifier run that
/// produced the dataset the matrix was assigned against.
pub fn oracle_ignore(
    matrix: &AssignmentMatrix,
    proposals: &ProposalSet,
    record: &DeletionRecord,
    iou_thresh: f64,
) -> Result<AssignmentMatrix> {
    if !(iou_thresh > 0.0 && iou_thresh < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "iou_thresh must be in (0, 1), got {iou_thresh}"
        )));
    }
    let mut out = matrix.clone();
    for a in record.deleted_on(proposals.image_id) {
        let Some(col) = matrix.column_of(a.category_id) else {
            return Err(Error::Integrity(format!(
                "deletion record category {} not in assignment matrix",
                a.category_id
            )));
        };
        for (i, r) in proposals.proposals.iter().enumerate() {
            if iou(r, &a.bbox) > iou_thresh {
                let k = out.idx(i, col);
                if out.labels[k] == -1 {
                    out.labels[k] = 0;
                    out.provenance[k] = Reason::IgnoredByOracle;
                }
            }
        }
    }
    Ok(out)
}

/// Oracle baseline: relabels entries meeting the foreground criterion against
/// deleted ground truth as positive. No oversampling around the recovered
/// boxes is performed.
pub fn oracle_positive(
    matrix: &AssignmentMatrix,
    proposals: &ProposalSet,
    record: &DeletionRecord,
    fg_iou: f64,
) -> Result<AssignmentMatrix> {
    if !(fg_iou > 0.0 && fg_iou < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "fg_iou must be in (0, 1), got {fg_iou}"
        )));
    }
    let mut out = matrix.clone();
    for a in record.deleted_on(proposals.image_id) {
        let Some(col) = matrix.column_of(a.category_id) else {
            return Err(Error::Integrity(format!(
                "deletion record category {} not in assignment matrix",
                a.category_id
            )));
        };
        for (i, r) in proposals.proposals.iter().enumerate() {
            if iou(r, &a.bbox) >= fg_iou {
                let k = out.idx(i, col);
                out.labels[k] = 1;
                out.provenance[k] = Reason::Matched;
            }
        }
    }
    Ok(out)
}

/// Overlap-based soft weighting of negative entries. A proposal's negatives
/// are weighted by a monotone map of its best IoU against any annotated
/// ground truth: `w(o) = clamp(w_min + (1 - w_min) * o / fg_iou, w_min, 1)`,
/// so isolated proposals get `w_min` and proposals at or above `fg_iou`
/// keep full weight.
pub fn soft_weights(
    matrix: &AssignmentMatrix,
    proposals: &ProposalSet,
    dataset: &Dataset,
    w_min: f64,
    fg_iou: f64,
) -> Result<AssignmentMatrix> {
    if !(0.0..=1.0).contains(&w_min) {
        return Err(Error::InvalidArgument(format!(
            "w_min must be in [0, 1], got {w_min}"
        )));
    }
    if !(fg_iou > 0.0 && fg_iou < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "fg_iou must be in (0, 1), got {fg_iou}"
        )));
    }
    let gt_boxes: Vec<BBox> = dataset
        .annotations_on(proposals.image_id)
        .map(|a| a.bbox)
        .collect();

    let mut out = matrix.clone();
    for (i, r) in proposals.proposals.iter().enumerate() {
        let best = gt_boxes
            .iter()
            .map(|g| iou(r, g))
            .fold(0.0f64, f64::max);
        let w = (w_min + (1.0 - w_min) * best / fg_iou).clamp(w_min, 1.0);
        for col in 0..out.categories.len() {
            let k = out.idx(i, col);
            if out.labels[k] == -1 {
                out.weights[k] = w;
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// JSON export / import
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct MatrixFile {
    image_id: ImageId,
    proposals: Vec<[f64; 4]>,
    labels: Vec<Vec<i8>>,
    weights: Vec<Vec<f64>>,
    provenance: Vec<Vec<Reason>>,
}

/// Per-image export; matrix columns follow ascending category id, as
/// documented in the README.
pub fn matrix_to_json_value(
    matrix: &AssignmentMatrix,
    proposals: &ProposalSet,
) -> serde_json::Value {
    let c = matrix.categories.len();
    let rows = |flat: &[i8]| -> Vec<Vec<i8>> {
        flat.chunks(c.max(1)).map(|r| r.to_vec()).collect()
    };
    let file = MatrixFile {
        image_id: matrix.image_id,
        proposals: proposals
            .proposals
            .iter()
            .map(|b| [b.x_min, b.y_min, b.x_max, b.y_max])
            .collect(),
        labels: if c == 0 {
            vec![Vec::new(); matrix.n_proposals]
        } else {
            rows(&matrix.labels)
        },
        weights: if c == 0 {
            vec![Vec::new(); matrix.n_proposals]
        } else {
            matrix.weights.chunks(c).map(|r| r.to_vec()).collect()
        },
        provenance: if c == 0 {
            vec![Vec::new(); matrix.n_proposals]
        } else {
            matrix.provenance.chunks(c).map(|r| r.to_vec()).collect()
        },
    };
    serde_json::to_value(file).expect("serializable")
}

/// Rebuilds a matrix and its proposals from the per-image export value. The
/// export format does not carry category ids, so columns come back numbered
/// 1..=C; labels, weights and provenance are preserved exactly, which is all
/// downstream loss evaluation needs.
pub fn matrix_from_json_value(
    value: &serde_json::Value,
) -> Result<(AssignmentMatrix, ProposalSet)> {
    let file: MatrixFile = serde_json::from_value(value.clone())
        .map_err(|e| Error::Integrity(format!("bad assignment matrix JSON: {e}")))?;
    let n = file.labels.len();
    let c = file.labels.first().map_or(0, |row| row.len());
    if file.proposals.len() != n
        || file.weights.len() != n
        || file.provenance.len() != n
        || file.labels.iter().any(|r| r.len() != c)
        || file.weights.iter().any(|r| r.len() != c)
        || file.provenance.iter().any(|r| r.len() != c)
    {
        return Err(Error::Integrity(
            "assignment matrix JSON has ragged or mismatched rows".into(),
        ));
    }
    let proposals = ProposalSet {
        image_id: file.image_id,
        proposals: file
            .proposals
            .iter()
            .map(|&[x0, y0, x1, y1]| BBox::new(x0, y0, x1, y1))
            .collect::<Result<_>>()?,
    };
    let matrix = AssignmentMatrix {
        image_id: file.image_id,
        categories: (1..=c as CategoryId).collect(),
        n_proposals: n,
        labels: file.labels.into_iter().flatten().collect(),
        weights: file.weights.into_iter().flatten().collect(),
        provenance: file.provenance.into_iter().flatten().collect(),
    };
    matrix.validate()?;
    Ok((matrix, proposals))
}
