//! Synthetic nested part/subject scenes and a toy linear scorer.
//!
//! The generator places one subject instance per configured subject category
//! in each image, with part instances at fixed relative positions inside it.
//! Each part category is independently verified per image with a configured
//! probability; unverified part annotations are dropped from the sparse
//! dataset but kept in the complete one, reproducing the damage pattern of a
//! sparsely annotated dataset while the ground truth stays available for
//! oracle measurements.
//!
//! The toy scorer is a per-category linear model over hand-crafted features
//! that include a (noisy) planted overlap indicator per category, so classes
//! are separable by construction and any score difference between regimes is
//! attributable to label assignment alone. Proposals are jittered ground
//! truth boxes plus an equal number of random background boxes, mimicking a
//! region proposal network without implementing one.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::assign::{
    base_assign, part_aware_ignore, pseudo_ignore, AssignmentMatrix, ProposalSet,
};
use crate::dataset::{
    Annotation, Category, CategoryId, Dataset, Detection, DetectionSet, ImageRecord,
    VerificationRecord,
};
use crate::defaults;
use crate::error::{Error, Result};
use crate::evaluator::{calibrate, match_detections, split_dataset};
use crate::geometry::{iou, BBox};
use crate::partstats::PartSubjectMap;
use crate::rng::{derive_seed, stream, KeyedRng};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartLayout {
    pub category: CategoryId,
    /// Box inside the subject, in the subject's unit coordinates.
    pub rel_box: [f64; 4],
    /// Probability that this part category is verified on a given image.
    pub verify_prob: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubjectLayout {
    pub category: CategoryId,
    pub parts: Vec<PartLayout>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneConfig {
    pub n_images: usize,
    pub width: u32,
    pub height: u32,
    pub subjects: Vec<SubjectLayout>,
    /// Proposal jitter as a fraction of box size.
    pub jitter: f64,
    pub seed: u64,
}

impl SceneConfig {
    /// One subject with two interior parts, verified half the time. Part
    /// boxes keep enough margin that jittered proposals stay inside the
    /// subject.
    pub fn example(seed: u64) -> Self {
        SceneConfig {
            n_images: 40,
            width: 128,
            height: 128,
            subjects: vec![SubjectLayout {
                category: 1,
                parts: vec![
                    PartLayout {
                        category: 2,
                        rel_box: [0.15, 0.15, 0.45, 0.45],
                        verify_prob: 0.5,
                    },
                    PartLayout {
                        category: 3,
                        rel_box: [0.55, 0.55, 0.85, 0.85],
                        verify_prob: 0.5,
                    },
                ],
            }],
            jitter: 0.1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_images == 0 || self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument(
                "scene config needs at least one image and a non-empty canvas".into(),
            ));
        }
        if !(0.0..=0.4).contains(&self.jitter) {
            return Err(Error::InvalidArgument(format!(
                "jitter must be in [0, 0.4], got {}",
                self.jitter
            )));
        }
        let mut seen = BTreeSet::new();
        for s in &self.subjects {
            if !seen.insert(s.category) {
                return Err(Error::InvalidArgument(format!(
                    "category {} appears twice in the scene config",
                    s.category
                )));
            }
            for p in &s.parts {
                if !seen.insert(p.category) {
                    return Err(Error::InvalidArgument(format!(
                        "category {} appears twice in the scene config",
                        p.category
                    )));
                }
                let [x0, y0, x1, y1] = p.rel_box;
                let inside = (0.0..=1.0).contains(&x0)
                    && (0.0..=1.0).contains(&y1)
                    && x1 <= 1.0
                    && y0 >= 0.0
                    && x0 < x1
                    && y0 < y1;
                if !inside {
                    return Err(Error::InvalidArgument(format!(
                        "part {} rel_box must be a proper box inside [0,1]^2",
                        p.category
                    )));
                }
                if !(0.0..=1.0).contains(&p.verify_prob) {
                    return Err(Error::InvalidArgument(format!(
                        "part {} verify_prob outside [0, 1]",
                        p.category
                    )));
                }
            }
        }
        Ok(())
    }

    /// The generating part map: every configured subject with all its parts.
    pub fn true_part_map(&self) -> PartSubjectMap {
        let entries = self
            .subjects
            .iter()
            .filter(|s| !s.parts.is_empty())
            .map(|s| (s.category, s.parts.iter().map(|p| p.category).collect()))
            .collect();
        PartSubjectMap::new(entries).expect("validated config yields a valid map")
    }

    pub fn part_categories(&self) -> BTreeSet<CategoryId> {
        self.subjects
            .iter()
            .flat_map(|s| s.parts.iter().map(|p| p.category))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedScenes {
    /// Annotations with unverified part categories dropped.
    pub sparse: Dataset,
    /// Every placed instance, for oracle measurement.
    pub complete: Dataset,
    pub proposals: Vec<ProposalSet>,
}

fn jitter_box(b: &BBox, amount: f64, rng: &KeyedRng, keys: [u64; 2]) -> BBox {
    let w = b.x_max - b.x_min;
    let h = b.y_max - b.y_min;
    let d = |k: u64| rng.uniform_in(-amount, amount, stream::SCENE_JITTER, &[keys[0], keys[1], k]);
    BBox {
        x_min: b.x_min + d(0) * w,
        y_min: b.y_min + d(1) * h,
        x_max: b.x_max + d(2) * w,
        y_max: b.y_max + d(3) * h,
    }
}

/// Generates the sparse dataset, the proposal sets, and the complete dataset.
/// Deterministic in `cfg.seed`.
pub fn generate_scenes(cfg: &SceneConfig) -> Result<GeneratedScenes> {
    cfg.validate()?;
    let rng = KeyedRng::new(cfg.seed);
    let (width, height) = (cfg.width as f64, cfg.height as f64);

    let mut categories: Vec<Category> = Vec::new();
    for s in &cfg.subjects {
        categories.push(Category {
            id: s.category,
            name: format!("subject{}", s.category),
        });
        for p in &s.parts {
            categories.push(Category {
                id: p.category,
                name: format!("part{}", p.category),
            });
        }
    }

    let mut images = Vec::new();
    let mut complete_anns = Vec::new();
    let mut sparse_anns = Vec::new();
    let mut verifications = Vec::new();
    let mut proposals = Vec::new();
    let mut next_ann = 1u64;

    for image_idx in 0..cfg.n_images {
        let image_id = image_idx as u64 + 1;
        images.push(ImageRecord {
            image_id,
            width: cfg.width,
            height: cfg.height,
            file_name: format!("scene{image_id}.png"),
        });
        let mut positive: BTreeSet<CategoryId> = BTreeSet::new();
        let mut gt_boxes: Vec<BBox> = Vec::new();

        for (subject_idx, s) in cfg.subjects.iter().enumerate() {
            let si = subject_idx as u64;
            let u = |k: u64, lo: f64, hi: f64| {
                rng.uniform_in(lo, hi, stream::SCENE_LAYOUT, &[image_id, si, k])
            };
            let sw = width * u(0, 0.3, 0.5);
            let sh = height * u(1, 0.3, 0.5);
            let sx = u(2, 0.0, 1.0) * (width - sw);
            let sy = u(3, 0.0, 1.0) * (height - sh);
            let subject_box = BBox::new(sx, sy, sx + sw, sy + sh)?;

            complete_anns.push(Annotation {
                annotation_id: next_ann,
                image_id,
                category_id: s.category,
                bbox: subject_box,
            });
            sparse_anns.push(complete_anns.last().unwrap().clone());
            next_ann += 1;
            positive.insert(s.category);
            gt_boxes.push(subject_box);

            for p in &s.parts {
                let [rx0, ry0, rx1, ry1] = p.rel_box;
                let part_box = BBox::new(
                    sx + rx0 * sw,
                    sy + ry0 * sh,
                    sx + rx1 * sw,
                    sy + ry1 * sh,
                )?;
                let ann = Annotation {
                    annotation_id: next_ann,
                    image_id,
                    category_id: p.category,
                    bbox: part_box,
                };
                next_ann += 1;
                let verified =
                    rng.bernoulli(p.verify_prob, stream::SCENE_VERIFY, &[image_id, p.category]);
                if verified {
                    sparse_anns.push(ann.clone());
                    positive.insert(p.category);
                }
                complete_anns.push(ann);
                gt_boxes.push(part_box);
            }
        }

        verifications.push(VerificationRecord {
            image_id,
            positive,
            negative: BTreeSet::new(),
        });

        let mut boxes: Vec<BBox> = gt_boxes
            .iter()
            .enumerate()
            .map(|(k, b)| {
                jitter_box(b, cfg.jitter, &rng, [image_id, k as u64]).clip_to(width, height)
            })
            .collect();
        for k in 0..gt_boxes.len() {
            let u = |j: u64, lo: f64, hi: f64| {
                rng.uniform_in(lo, hi, stream::SCENE_BACKGROUND, &[image_id, k as u64, j])
            };
            let bw = width * u(0, 0.05, 0.25);
            let bh = height * u(1, 0.05, 0.25);
            let bx = u(2, 0.0, 1.0) * (width - bw);
            let by = u(3, 0.0, 1.0) * (height - bh);
            boxes.push(BBox::new(bx, by, bx + bw, by + bh)?);
        }
        proposals.push(ProposalSet {
            image_id,
            proposals: boxes,
        });
    }

    let complete = Dataset::new(
        categories.clone(),
        images.clone(),
        complete_anns,
        Vec::new(),
    )?;
    let sparse = Dataset::new(categories, images, sparse_anns, verifications)?;
    Ok(GeneratedScenes {
        sparse,
        complete,
        proposals,
    })
}

/// False-negative entries of one assignment matrix against the complete
/// ground truth: `(count, negatives)` where `count` is the number of -1
/// entries whose proposal overlaps a complete-dataset ground truth of that
/// category at IoU >= `fg_iou`, and `negatives` is the total -1 entries.
pub fn false_negative_counts(
    matrix: &AssignmentMatrix,
    complete: &Dataset,
    proposals: &ProposalSet,
    fg_iou: f64,
) -> Result<(usize, usize)> {
    if matrix.image_id() != proposals.image_id
        || matrix.n_proposals() != proposals.proposals.len()
    {
        return Err(Error::InvalidArgument(
            "assignment matrix and proposal set are misaligned".into(),
        ));
    }
    if complete.image(proposals.image_id).is_none() {
        return Err(Error::Integrity(format!(
            "image {} missing from the complete dataset",
            proposals.image_id
        )));
    }
    let mut false_negatives = 0usize;
    let mut negatives = 0usize;
    for (i, r) in proposals.proposals.iter().enumerate() {
        for (col, &cat) in matrix.categories().iter().enumerate() {
            if matrix.label(i, col) != -1 {
                continue;
            }
            negatives += 1;
            let hit = complete
                .annotations_on(proposals.image_id)
                .filter(|a| a.category_id == cat)
                .any(|a| iou(r, &a.bbox) >= fg_iou);
            if hit {
                false_negatives += 1;
            }
        }
    }
    Ok((false_negatives, negatives))
}

/// Fraction of -1 entries that are false negatives against the complete
/// dataset. Zero when the matrix has no negative entries.
pub fn false_negative_rate(
    matrix: &AssignmentMatrix,
    complete: &Dataset,
    proposals: &ProposalSet,
    fg_iou: f64,
) -> Result<f64> {
    let (fn_count, negatives) = false_negative_counts(matrix, complete, proposals, fg_iou)?;
    if negatives == 0 {
        Ok(0.0)
    } else {
        Ok(fn_count as f64 / negatives as f64)
    }
}

// ---------------------------------------------------------------------------
// Toy scorer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToyTrainConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    /// Amplitude of the uniform noise added to overlap indicator features.
    pub feature_noise: f64,
}

impl Default for ToyTrainConfig {
    fn default() -> Self {
        ToyTrainConfig {
            learning_rate: 2.0,
            iterations: 300,
            feature_noise: 0.1,
        }
    }
}

/// Per-category linear scorer over the hand-crafted proposal features.
#[derive(Debug, Clone)]
pub struct ToyScorer {
    categories: Vec<CategoryId>,
    n_features: usize,
    /// C x d, row-major.
    weights: Vec<f64>,
}

impl ToyScorer {
    pub fn categories(&self) -> &[CategoryId] {
        &self.categories
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn logit(&self, column: usize, features: &[f64]) -> f64 {
        let row = &self.weights[column * self.n_features..(column + 1) * self.n_features];
        row.iter().zip(features).map(|(w, f)| w * f).sum()
    }

    pub fn probability(&self, category: CategoryId, features: &[f64]) -> Option<f64> {
        let column = self.categories.binary_search(&category).ok()?;
        let x = self.logit(column, features);
        Some(1.0 / (1.0 + (-x).exp()))
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Features: bias, normalized center offsets, log relative area, and one
/// noisy overlap indicator per category computed against the complete ground
/// truth. The indicators make categories linearly separable so regime
/// differences come from labels, not representation.
#[allow(clippy::too_many_arguments)]
fn features(
    bbox: &BBox,
    width: f64,
    height: f64,
    complete: &Dataset,
    image: u64,
    categories: &[CategoryId],
    rng: &KeyedRng,
    noise: f64,
    key: [u64; 2],
) -> Vec<f64> {
    let mut out = Vec::with_capacity(4 + categories.len());
    let cx = 0.5 * (bbox.x_min + bbox.x_max) / width - 0.5;
    let cy = 0.5 * (bbox.y_min + bbox.y_max) / height - 0.5;
    out.push(1.0);
    out.push(cx);
    out.push(cy);
    out.push((bbox.area() / (width * height)).max(1e-6).ln() / 10.0);
    for (ci, &cat) in categories.iter().enumerate() {
        let hit = complete
            .annotations_on(image)
            .filter(|a| a.category_id == cat)
            .any(|a| iou(bbox, &a.bbox) >= 0.5);
        let eta = rng.uniform_in(
            -noise,
            noise,
            stream::SCENE_FEATURE_NOISE,
            &[key[0], key[1], ci as u64],
        );
        out.push(if hit { 1.0 } else { 0.0 } + eta);
    }
    out
}

/// Trains the linear scorer by full-batch gradient descent on the tri-state
/// classification loss induced by `assignments`. Deterministic; errors on a
/// non-finite loss.
pub fn train_toy_scorer(
    complete: &Dataset,
    proposals: &[ProposalSet],
    assignments: &[AssignmentMatrix],
    cfg: &ToyTrainConfig,
    seed: u64,
) -> Result<(ToyScorer, f64)> {
    if proposals.len() != assignments.len() {
        return Err(Error::InvalidArgument(
            "proposals and assignments differ in length".into(),
        ));
    }
    let categories: Vec<CategoryId> = complete.categories().iter().map(|c| c.id).collect();
    let rng = KeyedRng::new(seed);
    let n_features = 4 + categories.len();

    // Precompute features and flatten the labeled entries.
    struct Row {
        features: Vec<f64>,
        column: usize,
        label: i8,
        weight: f64,
    }
    let mut rows: Vec<Row> = Vec::new();
    for (p, m) in proposals.iter().zip(assignments) {
        if m.image_id() != p.image_id || m.n_proposals() != p.proposals.len() {
            return Err(Error::InvalidArgument(
                "assignment matrix and proposal set are misaligned".into(),
            ));
        }
        if m.categories() != categories.as_slice() {
            return Err(Error::InvalidArgument(
                "assignment categories do not match the dataset".into(),
            ));
        }
        let image = complete.image(p.image_id).ok_or_else(|| {
            Error::Integrity(format!("image {} missing from complete dataset", p.image_id))
        })?;
        let (w, h) = (image.width as f64, image.height as f64);
        for (i, b) in p.proposals.iter().enumerate() {
            let f = features(
                b,
                w,
                h,
                complete,
                p.image_id,
                &categories,
                &rng,
                cfg.feature_noise,
                [p.image_id, i as u64],
            );
            for col in 0..categories.len() {
                let label = m.label(i, col);
                if label != 0 {
                    rows.push(Row {
                        features: f.clone(),
                        column: col,
                        label,
                        weight: m.weight(i, col),
                    });
                }
            }
        }
    }

    let mut scorer = ToyScorer {
        weights: vec![0.0; categories.len() * n_features],
        categories,
        n_features,
    };

    let n_labeled = rows.len();
    let mut last_loss = 0.0;
    for _ in 0..cfg.iterations {
        if n_labeled == 0 {
            break;
        }
        let mut grad = vec![0.0f64; scorer.weights.len()];
        let mut loss = 0.0f64;
        for row in &rows {
            let x = scorer.logit(row.column, &row.features);
            let p = sigmoid(x);
            let (entry_loss, factor) = if row.label == 1 {
                ((-x).max(0.0) + (-x.abs()).exp().ln_1p(), p - 1.0)
            } else {
                (x.max(0.0) + (-x.abs()).exp().ln_1p(), p)
            };
            loss += row.weight * entry_loss;
            let g = row.weight * factor;
            let base = row.column * n_features;
            for (j, f) in row.features.iter().enumerate() {
                grad[base + j] += g * f;
            }
        }
        if !loss.is_finite() {
            return Err(Error::InvalidArgument(
                "toy training diverged to a non-finite loss".into(),
            ));
        }
        last_loss = loss / n_labeled as f64;
        let scale = cfg.learning_rate / n_labeled as f64;
        for (w, g) in scorer.weights.iter_mut().zip(&grad) {
            *w -= scale * g;
        }
    }
    Ok((scorer, last_loss))
}

// ---------------------------------------------------------------------------
// Regime experiment
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Baseline,
    PartAware,
    Pseudo,
}

impl Regime {
    pub fn name(&self) -> &'static str {
        match self {
            Regime::Baseline => "baseline",
            Regime::PartAware => "part-aware",
            Regime::Pseudo => "pseudo",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Regime::Baseline),
            "part-aware" => Ok(Regime::PartAware),
            "pseudo" => Ok(Regime::Pseudo),
            other => Err(Error::InvalidArgument(format!(
                "unknown regime '{other}' (expected baseline, part-aware or pseudo)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RegimeReport {
    pub regime: String,
    pub seed: u64,
    /// Mean predicted probability on every held-out true part instance.
    pub mean_prob_parts: f64,
    /// Mean over the subset whose category is unverified on its image; this
    /// is where regimes differ, since verified parts keep their labels.
    pub mean_prob_unannotated_parts: f64,
    pub mean_prob_background: f64,
    pub n_part_regions: usize,
    pub n_unannotated_part_regions: usize,
    pub n_background_regions: usize,
    pub false_negative_rate: f64,
    pub final_loss: f64,
}

/// Simulated pretrained model: a jittered detection per complete ground
/// truth with a high score, plus low-scored false detections on background.
fn simulate_detections(scenes: &GeneratedScenes, seed: u64) -> Result<DetectionSet> {
    let rng = KeyedRng::new(derive_seed(seed, 0xDE7EC7));
    let mut detections = Vec::new();
    for a in scenes.complete.annotations() {
        let b = jitter_box(&a.bbox, 0.05, &rng, [a.annotation_id, 0]);
        let image = scenes.complete.image(a.image_id).expect("image exists");
        detections.push(Detection {
            image_id: a.image_id,
            category_id: a.category_id,
            bbox: b.clip_to(image.width as f64, image.height as f64),
            score: rng.uniform_in(0.6, 1.0, stream::SCENE_BACKGROUND, &[a.annotation_id, 7]),
        });
    }
    // One low-quality false detection per image and category.
    for im in scenes.complete.images() {
        for (ci, c) in scenes.complete.categories().iter().enumerate() {
            let u = |k: u64, lo: f64, hi: f64| {
                rng.uniform_in(lo, hi, stream::SCENE_BACKGROUND, &[im.image_id, ci as u64, k])
            };
            let w = im.width as f64 * u(0, 0.05, 0.2);
            let h = im.height as f64 * u(1, 0.05, 0.2);
            let x = u(2, 0.0, 1.0) * (im.width as f64 - w);
            let y = u(3, 0.0, 1.0) * (im.height as f64 - h);
            detections.push(Detection {
                image_id: im.image_id,
                category_id: c.id,
                bbox: BBox::new(x, y, x + w, y + h)?,
                score: u(4, 0.0, 0.7),
            });
        }
    }
    DetectionSet::new(detections, &scenes.complete)
}

fn assignments_for_regime(
    regime: Regime,
    scenes: &GeneratedScenes,
    part_map: &PartSubjectMap,
    seed: u64,
) -> Result<Vec<AssignmentMatrix>> {
    let base: Vec<AssignmentMatrix> = scenes
        .proposals
        .iter()
        .map(|p| base_assign(p, &scenes.sparse, defaults::FG_IOU))
        .collect::<Result<_>>()?;
    match regime {
        Regime::Baseline => Ok(base),
        Regime::PartAware => scenes
            .proposals
            .iter()
            .zip(&base)
            .map(|(p, m)| part_aware_ignore(m, p, &scenes.sparse, part_map, defaults::TAU))
            .collect(),
        Regime::Pseudo => {
            let detections = simulate_detections(scenes, seed)?;
            // Calibrate on a withheld split of the sparse data, as the score
            // thresholds would be obtained in practice.
            let (_, withheld) =
                split_dataset(&scenes.sparse, defaults::SPLIT_TRAIN_FRACTION, seed)?;
            let withheld_dets = DetectionSet {
                detections: detections
                    .detections
                    .iter()
                    .filter(|d| withheld.image(d.image_id).is_some())
                    .cloned()
                    .collect(),
            };
            let mr = match_detections(&withheld_dets, &withheld, defaults::FG_IOU)?;
            let table = calibrate(&mr, defaults::MIN_PRECISION)?;
            scenes
                .proposals
                .iter()
                .zip(&base)
                .map(|(p, m)| {
                    pseudo_ignore(
                        m,
                        p,
                        &scenes.sparse,
                        &detections,
                        &table.thresholds,
                        defaults::GT_IOU,
                        defaults::ROI_IOU,
                    )
                })
                .collect()
        }
    }
}

/// Runs one regime end to end for one seed: generate scenes, assign labels,
/// train the toy scorer, and evaluate it on freshly generated held-out
/// scenes. Returns the per-regime report.
pub fn run_regime(
    cfg: &SceneConfig,
    train_cfg: &ToyTrainConfig,
    regime: Regime,
) -> Result<RegimeReport> {
    let scenes = generate_scenes(cfg)?;
    let part_map = cfg.true_part_map();
    let assignments = assignments_for_regime(regime, &scenes, &part_map, cfg.seed)?;

    let mut fn_total = 0usize;
    let mut neg_total = 0usize;
    for (p, m) in scenes.proposals.iter().zip(&assignments) {
        let (f, n) = false_negative_counts(m, &scenes.complete, p, defaults::FG_IOU)?;
        fn_total += f;
        neg_total += n;
    }

    let (scorer, final_loss) = train_toy_scorer(
        &scenes.complete,
        &scenes.proposals,
        &assignments,
        train_cfg,
        cfg.seed,
    )?;

    // Held-out scenes from an independent seed.
    let eval_cfg = SceneConfig {
        seed: derive_seed(cfg.seed, 0xE7A1),
        ..cfg.clone()
    };
    let eval = generate_scenes(&eval_cfg)?;
    let rng = KeyedRng::new(eval_cfg.seed);
    let categories: Vec<CategoryId> = eval.complete.categories().iter().map(|c| c.id).collect();
    let part_categories = cfg.part_categories();

    let mut part_sum = 0.0;
    let mut n_parts = 0usize;
    let mut unannotated_sum = 0.0;
    let mut n_unannotated = 0usize;
    let mut bg_sum = 0.0;
    let mut n_bg = 0usize;
    for im in eval.complete.images() {
        let (w, h) = (im.width as f64, im.height as f64);
        let verified = eval
            .sparse
            .verification(im.image_id)
            .map(|v| v.positive.clone())
            .unwrap_or_default();
        for a in eval.complete.annotations_on(im.image_id) {
            if !part_categories.contains(&a.category_id) {
                continue;
            }
            let f = features(
                &a.bbox,
                w,
                h,
                &eval.complete,
                im.image_id,
                &categories,
                &rng,
                train_cfg.feature_noise,
                // Sentinel high bit keeps evaluation keys disjoint from any
                // proposal index used during training.
                [im.image_id, (1 << 32) + a.annotation_id],
            );
            let p = scorer.probability(a.category_id, &f).expect("known category");
            part_sum += p;
            n_parts += 1;
            if !verified.contains(&a.category_id) {
                unannotated_sum += p;
                n_unannotated += 1;
            }
        }
        // Background probes: boxes that overlap no ground truth.
        for k in 0..4u64 {
            let u = |j: u64, lo: f64, hi: f64| {
                rng.uniform_in(lo, hi, stream::SCENE_BACKGROUND, &[im.image_id, (2 << 32) + k, j])
            };
            let bw = w * u(0, 0.05, 0.2);
            let bh = h * u(1, 0.05, 0.2);
            let x = u(2, 0.0, 1.0) * (w - bw);
            let y = u(3, 0.0, 1.0) * (h - bh);
            let probe = BBox::new(x, y, x + bw, y + bh)?;
            let clear = eval
                .complete
                .annotations_on(im.image_id)
                .all(|a| iou(&probe, &a.bbox) < 0.1);
            if !clear {
                continue;
            }
            let f = features(
                &probe,
                w,
                h,
                &eval.complete,
                im.image_id,
                &categories,
                &rng,
                train_cfg.feature_noise,
                [im.image_id, (3 << 32) + k],
            );
            for &c in &part_categories {
                bg_sum += scorer.probability(c, &f).expect("known category");
                n_bg += 1;
            }
        }
    }

    Ok(RegimeReport {
        regime: regime.name().to_string(),
        seed: cfg.seed,
        mean_prob_parts: if n_parts == 0 { 0.0 } else { part_sum / n_parts as f64 },
        mean_prob_unannotated_parts: if n_unannotated == 0 {
            0.0
        } else {
            unannotated_sum / n_unannotated as f64
        },
        mean_prob_background: if n_bg == 0 { 0.0 } else { bg_sum / n_bg as f64 },
        n_part_regions: n_parts,
        n_unannotated_part_regions: n_unannotated,
        n_background_regions: n_bg,
        false_negative_rate: if neg_total == 0 {
            0.0
        } else {
            fn_total as f64 / neg_total as f64
        },
        final_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config_with_verify(prob: f64, n_images: usize, seed: u64) -> SceneConfig {
        let mut cfg = SceneConfig::example(seed);
        cfg.n_images = n_images;
        for s in &mut cfg.subjects {
            for p in &mut s.parts {
                p.verify_prob = prob;
            }
        }
        cfg
    }

    #[test]
    fn verify_prob_one_makes_sparse_equal_complete() {
        let cfg = config_with_verify(1.0, 10, 3);
        let g = generate_scenes(&cfg).unwrap();
        assert_eq!(g.sparse.annotations(), g.complete.annotations());
    }

    #[test]
    fn verify_prob_zero_drops_all_parts() {
        let cfg = config_with_verify(0.0, 10, 3);
        let g = generate_scenes(&cfg).unwrap();
        assert!(g
            .sparse
            .annotations()
            .iter()
            .all(|a| a.category_id == 1));
        // Subjects are all still present.
        assert_eq!(g.sparse.annotations().len(), 10);
        assert_eq!(g.complete.annotations().len(), 30);
    }

    #[test]
    fn verify_prob_half_drops_about_half() {
        let cfg = config_with_verify(0.5, 200, 5);
        let g = generate_scenes(&cfg).unwrap();
        let complete_parts = g
            .complete
            .annotations()
            .iter()
            .filter(|a| a.category_id != 1)
            .count();
        let sparse_parts = g
            .sparse
            .annotations()
            .iter()
            .filter(|a| a.category_id != 1)
            .count();
        let ratio = sparse_parts as f64 / complete_parts as f64;
        assert!((ratio - 0.5).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = config_with_verify(0.5, 20, 11);
        let a = generate_scenes(&cfg).unwrap();
        let b = generate_scenes(&cfg).unwrap();
        assert_eq!(a.sparse, b.sparse);
        assert_eq!(a.complete, b.complete);
        assert_eq!(a.proposals, b.proposals);
    }

    #[test]
    fn fnr_zero_when_nothing_missing() {
        let cfg = config_with_verify(1.0, 10, 3);
        let g = generate_scenes(&cfg).unwrap();
        for p in &g.proposals {
            let m = base_assign(p, &g.sparse, 0.5).unwrap();
            assert_eq!(false_negative_rate(&m, &g.complete, p, 0.5).unwrap(), 0.0);
        }
    }

    #[test]
    fn fnr_positive_under_baseline_with_missing_parts() {
        let cfg = config_with_verify(0.0, 10, 3);
        let g = generate_scenes(&cfg).unwrap();
        let mut total_fn = 0;
        for p in &g.proposals {
            let m = base_assign(p, &g.sparse, 0.5).unwrap();
            let (f, _) = false_negative_counts(&m, &g.complete, p, 0.5).unwrap();
            total_fn += f;
        }
        assert!(total_fn > 0);
    }

    #[test]
    fn part_aware_never_raises_fnr() {
        let cfg = config_with_verify(0.5, 15, 9);
        let g = generate_scenes(&cfg).unwrap();
        let map = cfg.true_part_map();
        for p in &g.proposals {
            let base = base_assign(p, &g.sparse, 0.5).unwrap();
            let pa = part_aware_ignore(&base, p, &g.sparse, &map, 0.9).unwrap();
            let (f_base, _) = false_negative_counts(&base, &g.complete, p, 0.5).unwrap();
            let (f_pa, _) = false_negative_counts(&pa, &g.complete, p, 0.5).unwrap();
            assert!(f_pa <= f_base);
        }
    }

    #[test]
    fn all_ignored_training_leaves_weights_at_init() {
        // Verify nothing, map everything: every part entry that could carry
        // gradient is ignored, subject entries still train; so build an
        // assignment where literally everything is ignored by constructing
        // zero proposals.
        let cfg = config_with_verify(0.5, 4, 2);
        let g = generate_scenes(&cfg).unwrap();
        let empty_proposals: Vec<ProposalSet> = g
            .proposals
            .iter()
            .map(|p| ProposalSet {
                image_id: p.image_id,
                proposals: vec![],
            })
            .collect();
        let assignments: Vec<AssignmentMatrix> = empty_proposals
            .iter()
            .map(|p| base_assign(p, &g.sparse, 0.5).unwrap())
            .collect();
        let (scorer, _) = train_toy_scorer(
            &g.complete,
            &empty_proposals,
            &assignments,
            &ToyTrainConfig::default(),
            2,
        )
        .unwrap();
        assert!(scorer.weights().iter().all(|&w| w == 0.0));
    }

    #[test]
    fn fully_annotated_baseline_separates_parts_from_background() {
        let cfg = config_with_verify(1.0, 30, 4);
        let report = run_regime(&cfg, &ToyTrainConfig::default(), Regime::Baseline).unwrap();
        // Full verification means no unannotated part regions, but the
        // scorer must still rank true part regions above background.
        assert_eq!(report.n_unannotated_part_regions, 0);
        assert!(report.n_part_regions > 0);
        assert!(
            report.mean_prob_parts > report.mean_prob_background,
            "parts {} vs background {}",
            report.mean_prob_parts,
            report.mean_prob_background
        );
    }

    #[test]
    fn directional_part_aware_beats_baseline() {
        let cfg = config_with_verify(0.5, 30, 13);
        let train = ToyTrainConfig::default();
        let base = run_regime(&cfg, &train, Regime::Baseline).unwrap();
        let pa = run_regime(&cfg, &train, Regime::PartAware).unwrap();
        assert!(base.n_unannotated_part_regions > 0);
        assert!(
            pa.mean_prob_unannotated_parts > base.mean_prob_unannotated_parts,
            "part-aware {} vs baseline {}",
            pa.mean_prob_unannotated_parts,
            base.mean_prob_unannotated_parts
        );
        assert!(pa.false_negative_rate <= base.false_negative_rate);
    }

    #[test]
    fn pseudo_regime_runs_end_to_end() {
        let cfg = config_with_verify(0.5, 20, 21);
        let report = run_regime(&cfg, &ToyTrainConfig::default(), Regime::Pseudo).unwrap();
        assert!(report.mean_prob_unannotated_parts.is_finite());
        assert!(report.n_background_regions > 0);
    }

    #[test]
    fn regime_parse_round_trip() {
        for r in [Regime::Baseline, Regime::PartAware, Regime::Pseudo] {
            assert_eq!(Regime::parse(r.name()).unwrap(), r);
        }
        assert!(Regime::parse("nope").is_err());
    }

    #[test]
    fn config_validation_rejects_bad_rel_boxes() {
        let mut cfg = SceneConfig::example(0);
        cfg.subjects[0].parts[0].rel_box = [0.5, 0.5, 0.4, 0.9];
        assert!(cfg.validate().is_err());
        let mut cfg2 = SceneConfig::example(0);
        cfg2.subjects[0].parts[0].rel_box = [0.5, 0.5, 1.4, 0.9];
        assert!(cfg2.validate().is_err());
        let mut cfg3 = SceneConfig::example(0);
        cfg3.subjects[0].parts[0].verify_prob = 1.5;
        assert!(cfg3.validate().is_err());
    }
}
