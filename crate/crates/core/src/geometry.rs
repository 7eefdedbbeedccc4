//! Axis-aligned rectangle arithmetic.
//!
//! Any ratio whose denominator is zero evaluates to 0. A degenerate or fully
//! occluded ground truth can therefore never lift a sample to positive.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Corner-form rectangle in pixel coordinates, `x1 <= x2` and `y1 <= y2`.
///
/// Zero-area boxes are allowed. Serialized as `[x1, y1, x2, y2]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    /// Builds a box, panicking on NaN/inf or inverted corners.
    /// Use [`BBox::try_new`] for untrusted input.
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        match Self::try_new(x1, y1, x2, y2) {
            Ok(b) => b,
            Err(e) => panic!("{e}"),
        }
    }

    pub fn try_new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let invalid = |reason| Error::InvalidBox {
            x1,
            y1,
            x2,
            y2,
            reason,
        };
        if !(x1.is_finite() && y1.is_finite() && x2.is_finite() && y2.is_finite()) {
            return Err(invalid("non-finite coordinate"));
        }
        if x1 > x2 || y1 > y2 {
            return Err(invalid("inverted corners"));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    /// Box from center and size (`w`, `h` >= 0).
    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        Self::try_new(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)
    }

    #[inline]
    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    #[inline]
    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    #[inline]
    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))
    }

    #[inline]
    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn is_degenerate(&self) -> bool {
        self.width() <= 0.0 || self.height() <= 0.0
    }

    /// Overlap rectangle, `None` when the boxes do not share positive area.
    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let x1 = self.x1.max(other.x1);
        let y1 = self.y1.max(other.y1);
        let x2 = self.x2.min(other.x2);
        let y2 = self.y2.min(other.y2);
        (x2 > x1 && y2 > y1).then_some(BBox { x1, y1, x2, y2 })
    }

    /// `other` lies inside `self` (boundaries may touch).
    pub fn contains(&self, other: &BBox) -> bool {
        self.x1 <= other.x1 && self.y1 <= other.y1 && other.x2 <= self.x2 && other.y2 <= self.y2
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox {
            x1: self.x1 + dx,
            y1: self.y1 + dy,
            x2: self.x2 + dx,
            y2: self.y2 + dy,
        }
    }

    /// Scales every coordinate about the origin; `s` must be positive.
    pub fn scale(&self, s: f64) -> BBox {
        debug_assert!(s > 0.0);
        BBox {
            x1: self.x1 * s,
            y1: self.y1 * s,
            x2: self.x2 * s,
            y2: self.y2 * s,
        }
    }

    /// Clamps the box into `[0, width] x [0, height]`.
    pub fn clip(&self, width: f64, height: f64) -> BBox {
        let cx = |v: f64| v.clamp(0.0, width);
        let cy = |v: f64| v.clamp(0.0, height);
        BBox {
            x1: cx(self.x1),
            y1: cy(self.y1),
            x2: cx(self.x2),
            y2: cy(self.y2),
        }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        BBox::try_new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.to_array()
    }
}

pub fn area(b: &BBox) -> f64 {
    b.area()
}

/// Area of overlap; exactly 0 for disjoint or touching boxes.
pub fn intersect_area(a: &BBox, b: &BBox) -> f64 {
    let w = a.x2.min(b.x2) - a.x1.max(b.x1);
    let h = a.y2.min(b.y2) - a.y1.max(b.y1);
    if w <= 0.0 || h <= 0.0 {
        0.0
    } else {
        w * h
    }
}

/// Intersection over union, 0 when the union is empty.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = intersect_area(a, b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Full-body box, visible-part box and the exact visible area.
///
/// `vis_area` may be smaller than `visible.area()` when the unoccluded region
/// is not itself a rectangle; `visible` is then its tight bounding box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GroundTruthRecord", into = "GroundTruthRecord")]
pub struct GroundTruth {
    pub full: BBox,
    pub visible: BBox,
    pub vis_area: f64,
}

#[derive(Serialize, Deserialize)]
struct GroundTruthRecord {
    full: BBox,
    visible: BBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vis_area: Option<f64>,
}

impl TryFrom<GroundTruthRecord> for GroundTruth {
    type Error = Error;

    fn try_from(r: GroundTruthRecord) -> Result<Self> {
        match r.vis_area {
            Some(a) => GroundTruth::with_vis_area(r.full, r.visible, a),
            None => GroundTruth::new(r.full, r.visible),
        }
    }
}

impl From<GroundTruth> for GroundTruthRecord {
    fn from(g: GroundTruth) -> Self {
        GroundTruthRecord {
            full: g.full,
            visible: g.visible,
            vis_area: Some(g.vis_area),
        }
    }
}

impl GroundTruth {
    /// Ground truth whose visible region is exactly the `visible` rectangle.
    pub fn new(full: BBox, visible: BBox) -> Result<Self> {
        Self::with_vis_area(full, visible, visible.area())
    }

    pub fn with_vis_area(full: BBox, visible: BBox, vis_area: f64) -> Result<Self> {
        if !full.contains(&visible) {
            return Err(Error::InvalidGroundTruth(format!(
                "visible box {:?} not inside full box {:?}",
                visible.to_array(),
                full.to_array()
            )));
        }
        let slack = 1e-9 * visible.area().max(1.0);
        if !vis_area.is_finite() || vis_area < 0.0 || vis_area > visible.area() + slack {
            return Err(Error::InvalidGroundTruth(format!(
                "visible area {vis_area} outside [0, {}]",
                visible.area()
            )));
        }
        Ok(Self {
            full,
            visible,
            vis_area: vis_area.min(visible.area()),
        })
    }

    /// A fully visible ground truth.
    pub fn unoccluded(full: BBox) -> Self {
        Self {
            full,
            visible: full,
            vis_area: full.area(),
        }
    }

    pub fn height(&self) -> f64 {
        self.full.height()
    }

    /// `1 - vis_area / area(full)` in `[0, 1]`; a zero-area full box counts
    /// as fully occluded.
    pub fn occlusion(&self) -> f64 {
        let full = self.full.area();
        let visible_fraction = if full > 0.0 {
            self.vis_area / full
        } else {
            0.0
        };
        (1.0 - visible_fraction).clamp(0.0, 1.0)
    }
}

/// Fraction of the ground truth's visible box covered by `roi`.
pub fn vis_ratio(roi: &BBox, gt: &GroundTruth) -> f64 {
    let visible = gt.visible.area();
    if visible <= 0.0 {
        return 0.0;
    }
    (intersect_area(roi, &gt.visible) / visible).clamp(0.0, 1.0)
}
