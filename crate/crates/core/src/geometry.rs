//! Axis-aligned box arithmetic.
//!
//! Boxes are corner-form `(x_min, y_min, x_max, y_max)` in continuous pixel
//! coordinates; there is no "+1" pixel correction anywhere. Besides the
//! symmetric IoU this module provides the asymmetric IoU
//! `aiou(a, b) = area(a ∩ b) / area(a)`, which is 1 exactly when `a` is
//! contained in `b` up to measure zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned rectangle in pixel coordinates, corner form.
///
/// Invariants: `x_min <= x_max`, `y_min <= y_max`, all coordinates finite.
/// Zero-area boxes are permitted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let coords = [x_min, y_min, x_max, y_max];
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "box coordinates must be finite, got [{x_min}, {y_min}, {x_max}, {y_max}]"
            )));
        }
        if x_max < x_min || y_max < y_min {
            return Err(Error::InvalidArgument(format!(
                "box corners out of order: [{x_min}, {y_min}, {x_max}, {y_max}]"
            )));
        }
        Ok(BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    /// Converts a COCO-style `[x, y, width, height]` record.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        BBox::new(x, y, x + w, y + h)
    }

    pub fn to_xywh(&self) -> [f64; 4] {
        [
            self.x_min,
            self.y_min,
            self.x_max - self.x_min,
            self.y_max - self.y_min,
        ]
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = (self.x_max.min(other.x_max) - self.x_min.max(other.x_min)).max(0.0);
        let h = (self.y_max.min(other.y_max) - self.y_min.max(other.y_min)).max(0.0);
        w * h
    }

    /// Clamps the box to `[0, width] x [0, height]`. The result is still a
    /// valid box; a box entirely outside the image collapses to zero area on
    /// the nearest edge.
    pub fn clip_to(&self, width: f64, height: f64) -> BBox {
        let x_min = self.x_min.clamp(0.0, width);
        let x_max = self.x_max.clamp(0.0, width).max(x_min);
        let y_min = self.y_min.clamp(0.0, height);
        let y_max = self.y_max.clamp(0.0, height).max(y_min);
        BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }
}

/// Intersection over union. Returns 0 when the union has zero area.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Asymmetric IoU: `area(a ∩ b) / area(a)`.
///
/// Returns 0 when `area(a)` is zero, so degenerate annotations never trigger
/// an ignore (every downstream threshold is a strict `>`).
pub fn aiou(a: &BBox, b: &BBox) -> f64 {
    let denom = a.area();
    if denom <= 0.0 {
        0.0
    } else {
        a.intersection_area(b) / denom
    }
}
