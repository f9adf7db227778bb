//! Classification loss over tri-state labels.
//!
//! Per entry the loss is the binary sigmoid cross entropy: `-log p` for a
//! positive label, `-log(1 - p)` for a negative one, and exactly 0 for an
//! ignored entry, where `p = sigmoid(logit)`. Ignored entries contribute
//! neither loss nor gradient, which is the mechanism every sampling regime
//! relies on. Evaluation uses the softplus form, stable for any logit.

use crate::assign::AssignmentMatrix;
use crate::error::{Error, Result};

/// Classification logits for `n` proposals over `c` categories, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    n: usize,
    c: usize,
    logits: Vec<f64>,
}

impl ScoreMatrix {
    pub fn new(n: usize, c: usize, logits: Vec<f64>) -> Result<Self> {
        if logits.len() != n * c {
            return Err(Error::InvalidArgument(format!(
                "expected {} logits for a {n}x{c} matrix, got {}",
                n * c,
                logits.len()
            )));
        }
        if let Some(x) = logits.iter().find(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite logit {x}")));
        }
        Ok(ScoreMatrix { n, c, logits })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n, self.c)
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn probability(&self, k: usize) -> f64 {
        sigmoid(self.logits[k])
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

/// `log(1 + exp(x))` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Loss, unweighted per-entry values, and the gradient of the weighted total
/// with respect to each logit.
#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub total: f64,
    pub per_entry: Vec<f64>,
    pub gradient: Vec<f64>,
}

/// Evaluates the loss of `scores` under `assignment` labels and weights.
///
/// `per_entry` holds the unweighted entry losses; `total` is the weighted sum
/// in fixed row-major order; `gradient[k]` is `weight * (p - 1)` for positive
/// entries, `weight * p` for negative ones, and 0 for ignored ones.
pub fn classification_loss(
    scores: &ScoreMatrix,
    assignment: &AssignmentMatrix,
) -> Result<LossResult> {
    let (n, c) = scores.shape();
    if n != assignment.n_proposals() || c != assignment.categories().len() {
        return Err(Error::InvalidArgument(format!(
            "shape mismatch: scores {n}x{c}, assignment {}x{}",
            assignment.n_proposals(),
            assignment.categories().len()
        )));
    }
    let labels = assignment.labels_flat();
    let weights = assignment.weights_flat();
    let logits = scores.logits();

    let mut per_entry = vec![0.0; n * c];
    let mut gradient = vec![0.0; n * c];
    let mut total = 0.0;
    for k in 0..n * c {
        let x = logits[k];
        match labels[k] {
            1 => {
                // -log p = softplus(-x)
                per_entry[k] = softplus(-x);
                gradient[k] = weights[k] * (sigmoid(x) - 1.0);
            }
            -1 => {
                // -log(1 - p) = softplus(x)
                per_entry[k] = softplus(x);
                gradient[k] = weights[k] * sigmoid(x);
            }
            _ => {}
        }
        total += weights[k] * per_entry[k];
    }

    Ok(LossResult {
        total,
        per_entry,
        gradient,
    })
}

/// Compares the analytic gradient against central finite differences of the
/// total and returns the maximum relative error over entries. Entries where
/// both sides vanish contribute zero.
pub fn gradient_check(
    scores: &ScoreMatrix,
    assignment: &AssignmentMatrix,
    step: f64,
) -> Result<f64> {
    if step <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "step must be positive, got {step}"
        )));
    }
    let (n, c) = scores.shape();
    let analytic = classification_loss(scores, assignment)?.gradient;

    let mut max_rel = 0.0f64;
    for k in 0..n * c {
        let mut plus = scores.logits().to_vec();
        plus[k] += step;
        let mut minus = scores.logits().to_vec();
        minus[k] -= step;
        let f_plus = classification_loss(&ScoreMatrix::new(n, c, plus)?, assignment)?.total;
        let f_minus = classification_loss(&ScoreMatrix::new(n, c, minus)?, assignment)?.total;
        let numeric = (f_plus - f_minus) / (2.0 * step);
        let denom = analytic[k].abs().max(numeric.abs()).max(1e-8);
        max_rel = max_rel.max((analytic[k] - numeric).abs() / denom);
    }
    Ok(max_rel)
}
