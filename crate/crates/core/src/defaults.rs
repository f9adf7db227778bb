//! Default hyperparameters, shared by the library and the CLI.

/// Containment threshold on aiou for both the inclusion statistic and
/// part-aware ignoring.
pub const TAU: f64 = 0.9;

/// Foreground IoU threshold for assigning a proposal to a ground truth.
pub const FG_IOU: f64 = 0.5;

/// Pseudo labels overlapping any ground truth above this IoU are discarded
/// as likely misclassified annotated instances.
pub const GT_IOU: f64 = 0.8;

/// Proposals overlapping a surviving pseudo label above this IoU have that
/// category ignored.
pub const ROI_IOU: f64 = 0.5;

/// Minimum per-category precision a score threshold must achieve during
/// calibration.
pub const MIN_PRECISION: f64 = 0.5;

/// Floor of the overlap-based soft weighting function.
pub const SOFT_W_MIN: f64 = 0.25;

/// IoU threshold at which oracle-ignore suppresses entries overlapping
/// deleted ground truth.
pub const ORACLE_IOU: f64 = 0.5;

/// Fraction of images kept on the training side of the calibration split.
pub const SPLIT_TRAIN_FRACTION: f64 = 0.8;
