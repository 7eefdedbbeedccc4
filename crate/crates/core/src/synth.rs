//! Seeded generator of crowded pedestrian scenes.
//!
//! Pedestrians are placed one after another; a later pedestrian is nearer
//! to the camera and occludes every earlier one it overlaps. The visible
//! region of a pedestrian is its full box minus the union of all nearer
//! boxes. Its exact area is computed on the compressed coordinate grid, and
//! the tight bounding box of that region becomes the visible box.
//!
//! Pedestrian boxes have integer pixel coordinates. RoIs are Gaussian
//! jittered copies of the ground truths (with a log-normally distributed
//! jitter scale per RoI, so proposal quality varies) plus uniformly placed
//! negatives.
//!
//! Scene `i` draws from ChaCha stream `i` of the configured seed, so scenes
//! can be generated in any order or in parallel with identical output.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::{intersect_area, iou, BBox, GroundTruth};
use crate::nms::Detection;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub seed: u64,
    /// Inclusive range of pedestrians attempted per scene.
    pub num_peds: (usize, usize),
    /// Image width and height in pixels.
    pub image_size: (f64, f64),
    /// Range of full-body heights in pixels.
    pub height_range: (f64, f64),
    /// Width / height of a pedestrian box.
    pub aspect_ratio: f64,
    /// Probability that a pedestrian is placed overlapping an earlier one.
    /// At 0 every pedestrian is placed clear of all others.
    pub overlap_intensity: f64,
    pub rois_per_gt: usize,
    /// Median jitter std, as a fraction of box size.
    pub roi_jitter: f64,
    /// Log-space std of the per-RoI jitter scale.
    pub jitter_spread: f64,
    pub negatives_per_scene: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            num_peds: (4, 10),
            image_size: (1024.0, 512.0),
            height_range: (40.0, 220.0),
            aspect_ratio: 0.41,
            overlap_intensity: 0.5,
            rois_per_gt: 12,
            roi_jitter: 0.08,
            jitter_spread: 0.8,
            negatives_per_scene: 16,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        let (w, h) = self.image_size;
        let (hmin, hmax) = self.height_range;
        if self.num_peds.0 > self.num_peds.1 {
            return bad("num_peds range is inverted");
        }
        if !(w.is_finite() && h.is_finite() && w >= 1.0 && h >= 1.0) {
            return bad("image size must be at least 1x1");
        }
        if !(hmin >= 2.0 && hmin <= hmax && hmax <= h) {
            return bad("height_range must satisfy 2 <= min <= max <= image height");
        }
        if !(self.aspect_ratio > 0.0 && (hmax * self.aspect_ratio).round() <= w) {
            return bad("aspect_ratio must be positive and fit the image width");
        }
        if !(0.0..=1.0).contains(&self.overlap_intensity) {
            return bad("overlap_intensity must lie in [0, 1]");
        }
        if !(self.roi_jitter >= 0.0 && self.roi_jitter.is_finite()) {
            return bad("roi_jitter must be >= 0");
        }
        if !(self.jitter_spread >= 0.0 && self.jitter_spread.is_finite()) {
            return bad("jitter_spread must be >= 0");
        }
        Ok(())
    }
}

/// One image: ground truths and candidate RoIs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub image_id: String,
    pub gts: Vec<GroundTruth>,
    pub rois: Vec<BBox>,
    /// `[width, height]`; optional in files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_size: Option<[f64; 2]>,
}

impl Scene {
    /// Declared image size, or the extent of every box in the scene.
    pub fn extent(&self) -> (f64, f64) {
        if let Some([w, h]) = self.image_size {
            return (w, h);
        }
        let boxes = self
            .gts
            .iter()
            .map(|g| g.full)
            .chain(self.rois.iter().copied());
        boxes.fold((1.0, 1.0), |(w, h), b| (w.max(b.x2), h.max(b.y2)))
    }
}

/// Scored detections of one image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionSet {
    pub image_id: String,
    pub dets: Vec<Detection>,
}

pub fn image_id(index: usize) -> String {
    format!("scene_{index:06}")
}

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[inline]
fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Exact visible area of `full` once `occluders` are painted over it, and
/// the tight bounding box of what remains.
///
/// A fully hidden box yields area 0 and a zero-size box at `full`'s top-left
/// corner.
pub fn visible_region(full: &BBox, occluders: &[BBox]) -> (BBox, f64) {
    let clipped: Vec<BBox> = occluders
        .iter()
        .filter_map(|o| o.intersection(full))
        .collect();
    if clipped.is_empty() {
        return (*full, full.area());
    }
    let mut xs: Vec<f64> = vec![full.x1, full.x2];
    let mut ys: Vec<f64> = vec![full.y1, full.y2];
    for c in &clipped {
        xs.extend([c.x1, c.x2]);
        ys.extend([c.y1, c.y2]);
    }
    for v in [&mut xs, &mut ys] {
        v.sort_by(f64::total_cmp);
        v.dedup();
    }

    let mut area = 0.0;
    let mut tight: Option<BBox> = None;
    for xw in xs.windows(2) {
        let cx = 0.5 * (xw[0] + xw[1]);
        for yw in ys.windows(2) {
            let cy = 0.5 * (yw[0] + yw[1]);
            let covered = clipped
                .iter()
                .any(|c| cx > c.x1 && cx < c.x2 && cy > c.y1 && cy < c.y2);
            if covered {
                continue;
            }
            area += (xw[1] - xw[0]) * (yw[1] - yw[0]);
            tight = Some(match tight {
                None => BBox::new(xw[0], yw[0], xw[1], yw[1]),
                Some(t) => BBox::new(
                    t.x1.min(xw[0]),
                    t.y1.min(yw[0]),
                    t.x2.max(xw[1]),
                    t.y2.max(yw[1]),
                ),
            });
        }
    }
    match tight {
        Some(t) => (t, area),
        None => (BBox::new(full.x1, full.y1, full.x1, full.y1), 0.0),
    }
}

/// Ground truths for boxes in depth order (later entries are nearer).
pub fn occlude(boxes: &[BBox]) -> Vec<GroundTruth> {
    boxes
        .iter()
        .enumerate()
        .map(|(i, full)| {
            let (visible, area) = visible_region(full, &boxes[i + 1..]);
            GroundTruth::with_vis_area(*full, visible, area)
                .expect("visible region lies inside the full box")
        })
        .collect()
}

fn place_pedestrians(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Vec<BBox> {
    const ATTEMPTS: usize = 100;
    let (img_w, img_h) = cfg.image_size;
    let n = rng.random_range(cfg.num_peds.0..=cfg.num_peds.1);
    let mut placed: Vec<BBox> = Vec::with_capacity(n);
    for _ in 0..n {
        let h = rng
            .random_range(cfg.height_range.0..=cfg.height_range.1)
            .round();
        let w = (h * cfg.aspect_ratio).round().max(1.0);
        let max_x = (img_w - w).floor().max(0.0);
        let max_y = (img_h - h).floor().max(0.0);

        if !placed.is_empty() && rng.random_bool(cfg.overlap_intensity) {
            let anchor = placed[rng.random_range(0..placed.len())];
            let (acx, _) = anchor.center();
            let cx = acx + rng.random_range(-0.8..0.8) * anchor.width();
            let bottom = anchor.y2 + rng.random_range(-0.15..0.15) * anchor.height();
            let x1 = (cx - 0.5 * w).round().clamp(0.0, max_x);
            let y1 = (bottom - h).round().clamp(0.0, max_y);
            placed.push(BBox::new(x1, y1, x1 + w, y1 + h));
            continue;
        }
        for _ in 0..ATTEMPTS {
            let x1 = rng.random_range(0.0..=max_x).round();
            let y1 = rng.random_range(0.0..=max_y).round();
            let cand = BBox::new(x1, y1, x1 + w, y1 + h);
            if placed.iter().all(|p| intersect_area(p, &cand) == 0.0) {
                placed.push(cand);
                break;
            }
        }
    }
    placed
}

/// Gaussian jitter of `b` with relative std `scale`, clipped to the image.
/// `None` when clipping leaves less than one pixel in either direction.
fn jitter(b: &BBox, scale: f64, size: (f64, f64), rng: &mut ChaCha8Rng) -> Option<BBox> {
    let (cx, cy) = b.center();
    let (w, h) = (b.width(), b.height());
    let ncx = cx + normal(rng) * scale * w;
    let ncy = cy + normal(rng) * scale * h;
    let nw = w * (normal(rng) * scale).exp();
    let nh = h * (normal(rng) * scale).exp();
    let out = BBox::from_center(ncx, ncy, nw, nh)
        .ok()?
        .clip(size.0, size.1);
    (out.width() >= 1.0 && out.height() >= 1.0).then_some(out)
}

fn random_box(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> BBox {
    let (img_w, img_h) = cfg.image_size;
    let h = rng.random_range(cfg.height_range.0..=cfg.height_range.1);
    let w = (h * cfg.aspect_ratio).max(1.0);
    let x1 = rng.random_range(0.0..=(img_w - w).max(0.0));
    let y1 = rng.random_range(0.0..=(img_h - h).max(0.0));
    BBox::new(x1, y1, x1 + w, y1 + h)
}

/// Scene number `index` of the sequence defined by `cfg`.
pub fn generate_scene(cfg: &SceneConfig, index: usize) -> Scene {
    let mut rng = stream_rng(cfg.seed, index as u64);
    let boxes = place_pedestrians(cfg, &mut rng);
    let gts = occlude(&boxes);

    let mut rois = Vec::with_capacity(gts.len() * cfg.rois_per_gt + cfg.negatives_per_scene);
    for g in &gts {
        for _ in 0..cfg.rois_per_gt {
            let scale = cfg.roi_jitter * (cfg.jitter_spread * normal(&mut rng)).exp();
            if let Some(r) = jitter(&g.full, scale, cfg.image_size, &mut rng) {
                rois.push(r);
            }
        }
    }
    for _ in 0..cfg.negatives_per_scene {
        rois.push(random_box(cfg, &mut rng));
    }

    Scene {
        image_id: image_id(index),
        gts,
        rois,
        image_size: Some([cfg.image_size.0, cfg.image_size.1]),
    }
}

pub fn generate(cfg: &SceneConfig, n_scenes: usize) -> Result<Vec<Scene>> {
    generate_with(cfg, n_scenes, Exec::default())
}

pub fn generate_with(cfg: &SceneConfig, n_scenes: usize, exec: Exec) -> Result<Vec<Scene>> {
    cfg.validate()?;
    Ok(exec.map_range(n_scenes, |i| generate_scene(cfg, i)))
}

/// Miss probability as a linear function of occlusion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MissCurve {
    pub at_visible: f64,
    pub at_occluded: f64,
}

impl MissCurve {
    pub fn constant(p: f64) -> Self {
        Self {
            at_visible: p,
            at_occluded: p,
        }
    }

    pub fn eval(&self, occlusion: f64) -> f64 {
        let o = occlusion.clamp(0.0, 1.0);
        (self.at_visible + (self.at_occluded - self.at_visible) * o).clamp(0.0, 1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    /// Localization jitter std of true detections, relative to box size.
    pub noise: f64,
    pub miss_prob: MissCurve,
    /// False positives added to every image.
    pub false_positives: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            noise: 0.05,
            miss_prob: MissCurve {
                at_visible: 0.05,
                at_occluded: 0.8,
            },
            false_positives: 2,
        }
    }
}

/// Simulated detector output for one scene.
///
/// Each ground truth is detected with probability `1 - miss_prob(occlusion)`
/// as a jittered copy scored by its IoU with the truth. False positives are
/// pedestrian-shaped boxes at uniform positions with scores below 0.9.
pub fn simulate_detections(scene: &Scene, cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Vec<Detection> {
    let (img_w, img_h) = scene.extent();
    let mut dets = Vec::new();
    for g in &scene.gts {
        let miss = cfg.miss_prob.eval(g.occlusion());
        if rng.random::<f64>() < miss {
            continue;
        }
        let b = if cfg.noise > 0.0 {
            jitter(&g.full, cfg.noise, (img_w, img_h), rng).unwrap_or(g.full)
        } else {
            g.full
        };
        let score = (0.5 + 0.5 * iou(&b, &g.full)) * rng.random_range(0.8..=1.0);
        dets.push(Detection { bbox: b, score });
    }
    for _ in 0..cfg.false_positives {
        let h = rng.random_range(0.08..0.4) * img_h;
        let w = (0.41 * h).min(img_w);
        let x1 = rng.random_range(0.0..=(img_w - w));
        let y1 = rng.random_range(0.0..=(img_h - h));
        let score = rng.random_range(0.0..0.9);
        dets.push(Detection {
            bbox: BBox::new(x1, y1, x1 + w, y1 + h),
            score,
        });
    }
    dets
}

/// Simulates every scene; scene `i` uses stream `i` of `cfg.seed`.
pub fn simulate_all(scenes: &[Scene], cfg: &SimConfig, exec: Exec) -> Vec<DetectionSet> {
    exec.map_indexed(scenes, |i, scene| {
        let mut rng = stream_rng(cfg.seed, i as u64);
        DetectionSet {
            image_id: scene.image_id.clone(),
            dets: simulate_detections(scene, cfg, &mut rng),
        }
    })
}
