//! Greedy non-maximum suppression.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::{iou, BBox};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub score: f64,
}

impl Detection {
    pub fn new(bbox: BBox, score: f64) -> Result<Self> {
        if !score.is_finite() {
            return Err(Error::NonFinite("detection score"));
        }
        Ok(Self { bbox, score })
    }
}

/// Indices of the kept detections, highest score first.
///
/// A candidate is suppressed when its IoU with an already kept box is
/// strictly greater than `iou_thresh`. Equal scores keep input order.
pub fn nms_indices(dets: &[Detection], iou_thresh: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    // stable: equal scores stay in input order
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));

    let mut keep: Vec<usize> = Vec::new();
    for i in order {
        let b = &dets[i].bbox;
        if keep.iter().all(|&k| iou(&dets[k].bbox, b) <= iou_thresh) {
            keep.push(i);
        }
    }
    keep
}

pub fn nms(dets: &[Detection], iou_thresh: f64) -> Vec<Detection> {
    nms_indices(dets, iou_thresh)
        .into_iter()
        .map(|i| dets[i])
        .collect()
}

/// Applies [`nms`] independently to every image.
pub fn nms_batch(images: &[Vec<Detection>], iou_thresh: f64, exec: Exec) -> Vec<Vec<Detection>> {
    exec.map(images, |d| nms(d, iou_thresh))
}
