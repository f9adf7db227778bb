//! Part/subject co-occurrence statistics and the part map derived from them.
//!
//! For a (part, subject) category pair the `included` ratio measures how often
//! a part box is contained (aiou above a threshold) in some subject box of the
//! same image, counted only over images that carry annotations of both
//! categories. The `co-occur` ratio measures how often subject images also
//! carry part annotations at all; a low value on a pair with high inclusion is
//! the signature of missing part annotations.
//!
//! Ratios with an empty domain are reported as `None`, never as 0, so an
//! unmeasurable pair cannot be silently vetoed when deriving a part map.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Deserialize;

use crate::dataset::{CategoryId, Dataset};
use crate::error::{Error, Result};
use crate::geometry::aiou;

/// Mapping from a subject category to the ordered list of its part categories.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PartSubjectMap {
    entries: BTreeMap<CategoryId, Vec<CategoryId>>,
}

impl PartSubjectMap {
    pub fn new(entries: BTreeMap<CategoryId, Vec<CategoryId>>) -> Result<Self> {
        for (subject, parts) in &entries {
            if parts.is_empty() {
                return Err(Error::Integrity(format!(
                    "subject {subject} has an empty part list"
                )));
            }
            if parts.contains(subject) {
                return Err(Error::Integrity(format!(
                    "category {subject} is listed as its own part"
                )));
            }
        }
        Ok(PartSubjectMap { entries })
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn parts_of(&self, subject: CategoryId) -> Option<&[CategoryId]> {
        self.entries.get(&subject).map(|v| v.as_slice())
    }

    /// `(subject, part)` pairs ordered by subject id, then part list order.
    pub fn pairs(&self) -> impl Iterator<Item = (CategoryId, CategoryId)> + '_ {
        self.entries
            .iter()
            .flat_map(|(&s, parts)| parts.iter().map(move |&p| (s, p)))
    }

    /// Checks every category id against the dataset's table.
    pub fn validate_against(&self, dataset: &Dataset) -> Result<()> {
        for (s, parts) in &self.entries {
            for c in std::iter::once(s).chain(parts.iter()) {
                if !dataset.has_category(*c) {
                    return Err(Error::Integrity(format!(
                        "part map references unknown category {c}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Statistics for one (subject, part) pair. `included` and `co_occur` are
/// `None` when their denominators are empty.
#[derive(Debug, Clone, PartialEq)]
pub struct PairStats {
    pub subject: CategoryId,
    pub part: CategoryId,
    pub included: Option<f64>,
    pub co_occur: Option<f64>,
    pub n_part_boxes: usize,
    pub n_subject_images: usize,
}

/// Fraction of part boxes contained in a subject box of the same image, over
/// images annotated with both categories. `None` when no part box exists in
/// a co-occurring image.
pub fn included_ratio(
    dataset: &Dataset,
    part: CategoryId,
    subject: CategoryId,
    tau: f64,
) -> Result<(Option<f64>, usize)> {
    if part == subject {
        return Err(Error::InvalidArgument(format!(
            "part and subject must differ, both are {part}"
        )));
    }
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "tau must be in (0, 1], got {tau}"
        )));
    }
    for c in [part, subject] {
        if !dataset.has_category(c) {
            return Err(Error::Integrity(format!("unknown category {c}")));
        }
    }

    let part_images = dataset.images_with_category(part);
    let subject_images = dataset.images_with_category(subject);
    let both: BTreeSet<_> = part_images.intersection(&subject_images).copied().collect();

    let mut n_part_boxes = 0usize;
    let mut n_included = 0usize;
    for &image in &both {
        let subject_boxes: Vec<_> = dataset
            .annotations_on(image)
            .filter(|a| a.category_id == subject)
            .map(|a| a.bbox)
            .collect();
        for a in dataset.annotations_on(image) {
            if a.category_id != part {
                continue;
            }
            n_part_boxes += 1;
            if subject_boxes.iter().any(|s| aiou(&a.bbox, s) > tau) {
                n_included += 1;
            }
        }
    }

    if n_part_boxes == 0 {
        Ok((None, 0))
    } else {
        Ok((Some(n_included as f64 / n_part_boxes as f64), n_part_boxes))
    }
}

/// Fraction of subject images that also carry a part annotation.
/// `None` when the subject appears in no image.
pub fn co_occur_ratio(
    dataset: &Dataset,
    part: CategoryId,
    subject: CategoryId,
) -> Result<(Option<f64>, usize)> {
    for c in [part, subject] {
        if !dataset.has_category(c) {
            return Err(Error::Integrity(format!("unknown category {c}")));
        }
    }
    let part_images = dataset.images_with_category(part);
    let subject_images = dataset.images_with_category(subject);
    let n_subject = subject_images.len();
    if n_subject == 0 {
        return Ok((None, 0));
    }
    let n_both = part_images.intersection(&subject_images).count();
    Ok((Some(n_both as f64 / n_subject as f64), n_subject))
}

/// One [`PairStats`] per pair of `map`, ordered by subject id then part id.
/// Pairs are computed in parallel; the merged output order is deterministic.
pub fn stats_report(dataset: &Dataset, map: &PartSubjectMap, tau: f64) -> Result<Vec<PairStats>> {
    map.validate_against(dataset)?;
    let mut pairs: Vec<(CategoryId, CategoryId)> = map.pairs().collect();
    pairs.sort();
    pairs
        .par_iter()
        .map(|&(subject, part)| {
            let (included, n_part_boxes) = included_ratio(dataset, part, subject, tau)?;
            let (co_occur, n_subject_images) = co_occur_ratio(dataset, part, subject)?;
            Ok(PairStats {
                subject,
                part,
                included,
                co_occur,
                n_part_boxes,
                n_subject_images,
            })
        })
        .collect()
}

/// Keeps pairs with `included > min_included` and `co_occur < max_co_occur`.
/// Pairs with an undefined ratio are excluded.
pub fn derive_part_map(
    stats: &[PairStats],
    min_included: f64,
    max_co_occur: f64,
) -> PartSubjectMap {
    let mut entries: BTreeMap<CategoryId, Vec<CategoryId>> = BTreeMap::new();
    for s in stats {
        let (Some(included), Some(co_occur)) = (s.included, s.co_occur) else {
            continue;
        };
        if included > min_included && co_occur < max_co_occur {
            entries.entry(s.subject).or_default().push(s.part);
        }
    }
    for parts in entries.values_mut() {
        parts.sort();
        parts.dedup();
    }
    // Entries built from kept pairs are never empty or self-referential.
    PartSubjectMap { entries }
}

fn fmt_ratio(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.6}"),
        None => "NA".to_string(),
    }
}

/// TSV rendering of a stats report, one row per pair. Undefined ratios are
/// written as `NA`.
pub fn report_tsv(stats: &[PairStats]) -> String {
    let mut out = String::from("subject\tpart\tincluded\tco_occur\tn_part_boxes\tn_subject_images\n");
    for s in stats {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            s.subject,
            s.part,
            fmt_ratio(s.included),
            fmt_ratio(s.co_occur),
            s.n_part_boxes,
            s.n_subject_images
        )
        .expect("write to string");
    }
    out
}

// ---------------------------------------------------------------------------
// Part-map file
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
struct PartMapFile {
    part_map: Vec<PartMapEntry>,
}

#[derive(Deserialize)]
struct PartMapEntry {
    subject: NameOrId,
    parts: Vec<NameOrId>,
}

/// Categories in part-map files may be given by numeric id or by name.
#[derive(Deserialize)]
#[serde(untagged)]
enum NameOrId {
    Id(CategoryId),
    Name(String),
}

impl NameOrId {
    fn resolve(&self, dataset: &Dataset) -> Result<CategoryId> {
        match self {
            NameOrId::Id(id) => {
                if dataset.has_category(*id) {
                    Ok(*id)
                } else {
                    Err(Error::Integrity(format!(
                        "part map references unknown category id {id}"
                    )))
                }
            }
            NameOrId::Name(name) => dataset
                .category_by_name(name)
                .map(|c| c.id)
                .ok_or_else(|| {
                    Error::Integrity(format!("part map references unknown category '{name}'"))
                }),
        }
    }
}

/// Loads a curated part map, resolving category names through the dataset.
pub fn load_part_map(path: &Path, dataset: &Dataset) -> Result<PartSubjectMap> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: PartMapFile =
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
    let mut entries: BTreeMap<CategoryId, Vec<CategoryId>> = BTreeMap::new();
    for entry in file.part_map {
        let subject = entry.subject.resolve(dataset)?;
        let parts = entry
            .parts
            .iter()
            .map(|p| p.resolve(dataset))
            .collect::<Result<Vec<_>>>()?;
        entries.entry(subject).or_default().extend(parts);
    }
    for parts in entries.values_mut() {
        parts.sort();
        parts.dedup();
    }
    PartSubjectMap::new(entries)
}
