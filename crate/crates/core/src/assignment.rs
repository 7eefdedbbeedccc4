//! Positive/negative labelling of RoIs by visible IoU.
//!
//! Each RoI is matched to the ground truth with the highest plain IoU (ties go
//! to the lowest index). The match's IoU is then multiplied by the decay of
//! the RoI's visible ratio against that ground truth, and the product is
//! compared with the threshold.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::decay::DecaySpec;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::{iou, vis_ratio, BBox, GroundTruth};
use crate::synth::Scene;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssignmentConfig {
    pub decay: DecaySpec,
    pub threshold: f64,
}

impl AssignmentConfig {
    pub fn new(decay: DecaySpec, threshold: f64) -> Result<Self> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "assignment threshold {threshold} outside (0, 1)"
            )));
        }
        Ok(Self { decay, threshold })
    }

    /// Same threshold, no decay: plain IoU assignment.
    pub fn baseline(&self) -> Self {
        Self {
            decay: DecaySpec::None,
            threshold: self.threshold,
        }
    }
}

impl Default for AssignmentConfig {
    fn default() -> Self {
        Self {
            decay: DecaySpec::default(),
            threshold: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssignmentRecord {
    pub roi_index: usize,
    pub matched_gt: Option<usize>,
    pub iou_ori: f64,
    pub vis_ratio: f64,
    pub iou_vis: f64,
    pub label: Label,
}

impl AssignmentRecord {
    pub fn is_positive(&self) -> bool {
        self.label == Label::Positive
    }
}

/// Index and IoU of the best-overlapping ground truth, if any overlaps.
pub fn best_match(roi: &BBox, gts: &[GroundTruth]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (j, gt) in gts.iter().enumerate() {
        let v = iou(roi, &gt.full);
        if v > 0.0 && best.is_none_or(|(_, b)| v > b) {
            best = Some((j, v));
        }
    }
    best
}

pub fn assign(rois: &[BBox], gts: &[GroundTruth], cfg: &AssignmentConfig) -> Vec<AssignmentRecord> {
    rois.iter()
        .enumerate()
        .map(|(roi_index, roi)| match best_match(roi, gts) {
            Some((j, iou_ori)) => {
                let ratio = vis_ratio(roi, &gts[j]);
                let iou_vis = iou_ori * cfg.decay.eval(ratio);
                AssignmentRecord {
                    roi_index,
                    matched_gt: Some(j),
                    iou_ori,
                    vis_ratio: ratio,
                    iou_vis,
                    label: if iou_vis >= cfg.threshold {
                        Label::Positive
                    } else {
                        Label::Negative
                    },
                }
            }
            None => AssignmentRecord {
                roi_index,
                matched_gt: None,
                iou_ori: 0.0,
                vis_ratio: 0.0,
                iou_vis: 0.0,
                label: Label::Negative,
            },
        })
        .collect()
}

/// Runs [`assign`] on every scene, preserving scene order.
pub fn assign_scenes(
    scenes: &[Scene],
    cfg: &AssignmentConfig,
    exec: Exec,
) -> Vec<Vec<AssignmentRecord>> {
    exec.map(scenes, |s| assign(&s.rois, &s.gts, cfg))
}

pub fn count_positives(records: &[AssignmentRecord]) -> usize {
    records.iter().filter(|r| r.is_positive()).count()
}

/// One point of the positive-sample scatter (visible ratio vs. best IoU).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionRow {
    pub vis_ratio: f64,
    pub iou_ori: f64,
    pub kept_decay: bool,
    pub kept_baseline: bool,
}

impl DistributionRow {
    /// Positive under plain IoU but rejected once decayed.
    pub fn is_discarded(&self) -> bool {
        self.kept_baseline && !self.kept_decay
    }
}

/// Pairs decayed and baseline records row by row.
pub fn distribution_dump(
    records: &[AssignmentRecord],
    baseline: &[AssignmentRecord],
) -> Result<Vec<DistributionRow>> {
    if records.len() != baseline.len() {
        return Err(Error::LengthMismatch {
            what: "decayed vs baseline assignment records",
            left: records.len(),
            right: baseline.len(),
        });
    }
    Ok(records
        .iter()
        .zip(baseline)
        .map(|(r, b)| DistributionRow {
            vis_ratio: r.vis_ratio,
            iou_ori: r.iou_ori,
            kept_decay: r.is_positive(),
            kept_baseline: b.is_positive(),
        })
        .collect())
}

/// Writes rows as CSV with header `vis_ratio,iou_ori,kept_decay,kept_baseline`.
pub fn write_distribution_csv<W: Write>(rows: &[DistributionRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    w.write_record(["vis_ratio", "iou_ori", "kept_decay", "kept_baseline"])?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
