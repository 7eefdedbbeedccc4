//! R-CNN style box deltas and their sign classes.
//!
//! ```text
//! tx = (gcx - pcx) / pw    ty = (gcy - pcy) / ph
//! tw = ln(gw / pw)         th = ln(gh / ph)
//! ```
//!
//! No dataset-level mean/std normalization is applied to the deltas.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

/// Normalized offsets of center x, center y, log-width and log-height.
/// Serialized as `[tx, ty, tw, th]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoxDeltas {
    pub tx: f64,
    pub ty: f64,
    pub tw: f64,
    pub th: f64,
}

impl BoxDeltas {
    pub const ZERO: BoxDeltas = BoxDeltas {
        tx: 0.0,
        ty: 0.0,
        tw: 0.0,
        th: 0.0,
    };

    pub fn new(tx: f64, ty: f64, tw: f64, th: f64) -> Self {
        Self { tx, ty, tw, th }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.tx, self.ty, self.tw, self.th]
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

impl From<[f64; 4]> for BoxDeltas {
    fn from(v: [f64; 4]) -> Self {
        Self::from_array(v)
    }
}

impl From<BoxDeltas> for [f64; 4] {
    fn from(d: BoxDeltas) -> Self {
        d.to_array()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Neg,
    Pos,
}

impl Sign {
    /// `Neg` for `v <= 0` (zero included), `Pos` otherwise.
    #[inline]
    pub fn of(v: f64) -> Sign {
        if v <= 0.0 {
            Sign::Neg
        } else {
            Sign::Pos
        }
    }

    /// Column of this class in a `[minus, plus]` pair.
    #[inline]
    pub fn index(self) -> usize {
        match self {
            Sign::Neg => 0,
            Sign::Pos => 1,
        }
    }
}

/// Sign class per dimension, ordered x, y, w, h.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SignTargets(pub [Sign; 4]);

impl SignTargets {
    pub fn x(&self) -> Sign {
        self.0[0]
    }
    pub fn y(&self) -> Sign {
        self.0[1]
    }
    pub fn w(&self) -> Sign {
        self.0[2]
    }
    pub fn h(&self) -> Sign {
        self.0[3]
    }
}

fn check_size(b: &BBox) -> Result<()> {
    if b.is_degenerate() {
        Err(Error::DegenerateBox)
    } else {
        Ok(())
    }
}

pub fn encode(roi: &BBox, gt: &BBox) -> Result<BoxDeltas> {
    check_size(roi)?;
    check_size(gt)?;
    let (pcx, pcy) = roi.center();
    let (gcx, gcy) = gt.center();
    let (pw, ph) = (roi.width(), roi.height());
    Ok(BoxDeltas {
        tx: (gcx - pcx) / pw,
        ty: (gcy - pcy) / ph,
        tw: (gt.width() / pw).ln(),
        th: (gt.height() / ph).ln(),
    })
}

/// Inverse of [`encode`]. Fails on non-finite deltas or when the decoded box
/// overflows.
pub fn decode(roi: &BBox, d: &BoxDeltas) -> Result<BBox> {
    check_size(roi)?;
    if !d.is_finite() {
        return Err(Error::NonFinite("box deltas"));
    }
    let (pcx, pcy) = roi.center();
    let (pw, ph) = (roi.width(), roi.height());
    let cx = pcx + d.tx * pw;
    let cy = pcy + d.ty * ph;
    let w = pw * d.tw.exp();
    let h = ph * d.th.exp();
    BBox::from_center(cx, cy, w, h).map_err(|_| Error::NonFinite("decoded box"))
}

pub fn sign_targets(t_star: &BoxDeltas) -> SignTargets {
    SignTargets(t_star.to_array().map(Sign::of))
}
