//! Log-average miss rate (MR^-2) and occlusion-defined evaluation subsets.
//!
//! Per image, detections are matched greedily in descending score order to
//! the unmatched in-subset ground truth of highest IoU (at least
//! `match_iou`). A detection that instead overlaps an out-of-subset ground
//! truth is ignored. Everything else is a false positive.
//!
//! The miss-rate/FPPI curve is then sampled at nine FPPI references
//! log-spaced over `[1e-2, 1]`. Each reference takes the lowest miss rate
//! reached at an FPPI not above it. MR^-2 is the geometric mean of the nine
//! samples.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::{iou, GroundTruth};
use crate::nms::Detection;
use crate::synth::{DetectionSet, Scene};

/// Default IoU for a detection to match a ground truth.
pub const MATCH_IOU: f64 = 0.5;

/// Floor applied to miss rates before taking logs.
pub const MISS_FLOOR: f64 = 1e-10;

/// Ground truths with `height > min_height` and occlusion in
/// `(occ_low, occ_high]` are evaluated. When `occ_low` is 0 the interval is
/// closed on the left, so unoccluded people are included.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetSpec {
    pub name: String,
    pub min_height: f64,
    pub occ_low: f64,
    pub occ_high: f64,
}

impl SubsetSpec {
    pub fn new(name: &str, min_height: f64, occ_low: f64, occ_high: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&occ_low) || !(occ_low..=1.0).contains(&occ_high) {
            return Err(Error::InvalidConfig(format!(
                "subset `{name}` needs 0 <= occ_low <= occ_high <= 1"
            )));
        }
        if !min_height.is_finite() || min_height < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "subset `{name}` needs min_height >= 0"
            )));
        }
        Ok(Self {
            name: name.to_string(),
            min_height,
            occ_low,
            occ_high,
        })
    }

    /// height > 50, occlusion <= 0.35
    pub fn reasonable() -> Self {
        Self::new("reasonable", 50.0, 0.0, 0.35).unwrap()
    }

    /// height > 50, 0.10 < occlusion <= 0.35
    pub fn partial() -> Self {
        Self::new("partial", 50.0, 0.10, 0.35).unwrap()
    }

    /// height > 50, occlusion <= 0.10
    pub fn bare() -> Self {
        Self::new("bare", 50.0, 0.0, 0.10).unwrap()
    }

    /// height > 50, occlusion > 0.35
    pub fn heavy() -> Self {
        Self::new("heavy", 50.0, 0.35, 1.0).unwrap()
    }

    /// The four standard subsets in report order.
    pub fn standard() -> [Self; 4] {
        [
            Self::reasonable(),
            Self::heavy(),
            Self::partial(),
            Self::bare(),
        ]
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "reasonable" => Some(Self::reasonable()),
            "partial" => Some(Self::partial()),
            "bare" => Some(Self::bare()),
            "heavy" => Some(Self::heavy()),
            _ => None,
        }
    }

    pub fn contains(&self, gt: &GroundTruth) -> bool {
        let occ = gt.occlusion();
        let above_low = occ > self.occ_low || (self.occ_low == 0.0 && occ >= 0.0);
        gt.height() > self.min_height && above_low && occ <= self.occ_high
    }
}

/// Splits ground-truth indices into (evaluated, ignored).
pub fn subset_filter(gts: &[GroundTruth], spec: &SubsetSpec) -> (Vec<usize>, Vec<usize>) {
    (0..gts.len()).partition(|&i| spec.contains(&gts[i]))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetLabel {
    TruePositive,
    FalsePositive,
    Ignored,
}

/// Matching outcome for one image. `det_labels` follows the input order of
/// the detections.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageMatch {
    pub scores: Vec<f64>,
    pub det_labels: Vec<DetLabel>,
    pub gt_in_subset: Vec<bool>,
    pub gt_matched: Vec<bool>,
}

impl ImageMatch {
    pub fn num_gt(&self) -> usize {
        self.gt_in_subset.iter().filter(|&&b| b).count()
    }
}

pub fn match_detections(
    dets: &[Detection],
    gts: &[GroundTruth],
    subset: &SubsetSpec,
    match_iou: f64,
) -> ImageMatch {
    let gt_in_subset: Vec<bool> = gts.iter().map(|g| subset.contains(g)).collect();
    let mut gt_matched = vec![false; gts.len()];
    let mut det_labels = vec![DetLabel::FalsePositive; dets.len()];

    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));

    for d in order {
        let bbox = &dets[d].bbox;
        let mut best: Option<(usize, f64)> = None;
        let mut hits_ignored = false;
        for (j, gt) in gts.iter().enumerate() {
            let v = iou(bbox, &gt.full);
            if v < match_iou {
                continue;
            }
            if !gt_in_subset[j] {
                hits_ignored = true;
            } else if !gt_matched[j] && best.is_none_or(|(_, b)| v > b) {
                best = Some((j, v));
            }
        }
        det_labels[d] = match best {
            Some((j, _)) => {
                gt_matched[j] = true;
                DetLabel::TruePositive
            }
            None if hits_ignored => DetLabel::Ignored,
            None => DetLabel::FalsePositive,
        };
    }

    ImageMatch {
        scores: dets.iter().map(|d| d.score).collect(),
        det_labels,
        gt_in_subset,
        gt_matched,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub fppi: f64,
    pub miss_rate: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub num_images: usize,
    pub num_gt: usize,
    pub num_det: usize,
    pub num_tp: usize,
    pub num_fp: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub mr2: f64,
    /// Operating points from the strictest threshold (no detections) down to
    /// the loosest.
    pub curve: Vec<CurvePoint>,
    /// Miss rate sampled at each of [`reference_fppi`].
    pub reference_miss: Vec<f64>,
    pub counts: Counts,
}

/// The nine FPPI references `10^(-2 + i/4)`, `i = 0..=8`.
pub fn reference_fppi() -> [f64; 9] {
    std::array::from_fn(|i| 10f64.powf(-2.0 + 0.25 * i as f64))
}

/// Geometric mean of miss rates floored at [`MISS_FLOOR`]; 0 when every
/// sample sits on the floor.
pub fn log_average(miss: &[f64]) -> f64 {
    if miss.iter().all(|&m| m <= MISS_FLOOR) {
        return 0.0;
    }
    let mean = miss.iter().map(|&m| m.max(MISS_FLOOR).ln()).sum::<f64>() / miss.len() as f64;
    mean.exp()
}

pub fn mr2(images: &[ImageMatch]) -> Result<EvalResult> {
    if images.is_empty() {
        return Err(Error::Empty("evaluation images"));
    }
    let num_gt: usize = images.iter().map(ImageMatch::num_gt).sum();
    if num_gt == 0 {
        return Err(Error::NoGroundTruth);
    }
    let num_images = images.len() as f64;

    let mut scored: Vec<(f64, bool)> = images
        .iter()
        .flat_map(|m| m.scores.iter().zip(&m.det_labels))
        .filter_map(|(&s, &l)| match l {
            DetLabel::TruePositive => Some((s, true)),
            DetLabel::FalsePositive => Some((s, false)),
            DetLabel::Ignored => None,
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut curve = vec![CurvePoint {
        fppi: 0.0,
        miss_rate: 1.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < scored.len() {
        let s = scored[i].0;
        while i < scored.len() && scored[i].0 == s {
            if scored[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        curve.push(CurvePoint {
            fppi: fp as f64 / num_images,
            miss_rate: 1.0 - tp as f64 / num_gt as f64,
        });
    }

    let reference_miss: Vec<f64> = reference_fppi()
        .iter()
        .map(|&r| {
            curve
                .iter()
                .filter(|p| p.fppi <= r)
                .map(|p| p.miss_rate)
                .fold(f64::INFINITY, f64::min)
        })
        .collect();

    Ok(EvalResult {
        mr2: log_average(&reference_miss),
        curve,
        reference_miss,
        counts: Counts {
            num_images: images.len(),
            num_gt,
            num_det: tp + fp,
            num_tp: tp,
            num_fp: fp,
        },
    })
}

/// Matches every scene against its detections and computes MR^-2.
///
/// Scenes without a detection entry count as images with no detections.
/// Detection sets naming an image that is not among `scenes` are an error.
pub fn evaluate(
    scenes: &[Scene],
    dets: &[DetectionSet],
    subset: &SubsetSpec,
    match_iou: f64,
    exec: Exec,
) -> Result<EvalResult> {
    let mut by_id: HashMap<&str, Vec<&DetectionSet>> = HashMap::new();
    for set in dets {
        by_id.entry(set.image_id.as_str()).or_default().push(set);
    }
    for id in by_id.keys() {
        if !scenes.iter().any(|s| s.image_id == *id) {
            return Err(Error::UnknownImage(id.to_string()));
        }
    }
    let matches = exec.map(scenes, |scene| {
        let image_dets: Vec<Detection> = by_id
            .get(scene.image_id.as_str())
            .map(|sets| sets.iter().flat_map(|s| s.dets.iter().copied()).collect())
            .unwrap_or_default();
        match_detections(&image_dets, &scene.gts, subset, match_iou)
    });
    mr2(&matches)
}
