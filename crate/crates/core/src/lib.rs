//! Toolkit for constructing detector training labels on sparsely annotated
//! datasets.
//!
//! Sparse datasets verify only a subset of categories per image, so a naive
//! trainer treats unannotated objects as background and learns from false
//! negatives. This crate provides the machinery to avoid that:
//!
//! - [`geometry`]: box arithmetic, including the asymmetric IoU used to test
//!   containment of part boxes inside subject boxes.
//! - [`dataset`]: COCO-compatible data model with per-image verification
//!   records (positively / negatively verified categories).
//! - [`partstats`]: inclusion and co-occurrence statistics over part/subject
//!   category pairs, and derivation of a part map from them.
//! - [`sparsify`]: per-category random annotation deletion with a full
//!   deletion record for oracle baselines.
//! - [`assign`]: tri-state label assignment (+1 / -1 / ignored) under six
//!   regimes: baseline, part-aware, pseudo-label-guided, oracle-ignore,
//!   oracle-positive, and overlap-based soft weighting.
//! - [`signal`]: the sigmoid cross-entropy classification loss over tri-state
//!   labels, with its exact gradient.
//! - [`evaluator`]: detection matching, AP/mmAP, per-category score-threshold
//!   calibration, and threshold sweeps.
//! - [`scenesim`]: synthetic nested part/subject scenes plus a toy linear
//!   scorer for desk-scale directional experiments.
//!
//! All randomness is counter-based (see [`rng`]) so every pipeline is
//! reproducible from a single seed, independent of iteration order.

pub mod assign;
pub mod dataset;
pub mod defaults;
pub mod error;
pub mod evaluator;
pub mod geometry;
pub mod partstats;
pub mod rng;
pub mod scenesim;
pub mod signal;
pub mod sparsify;

pub use error::{Error, Result};
pub use geometry::BBox;
