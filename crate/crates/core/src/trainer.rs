//! Toy detector head trained by full-batch gradient descent.
//!
//! Every RoI is described by a small feature vector:
//!
//! * bias;
//! * RoI center and size divided by the image size;
//! * noisy cues of the regression target `encode(roi, gt)` of the
//!   best-overlapping ground truth (pure noise when nothing overlaps);
//! * noisy cues of the RoI's plain IoU and visible ratio;
//! * Gaussian noise channels.
//!
//! Three independent linear maps read the features: class logits (2), box
//! deltas (4) and sign logits (4 x 2). Features other than the bias are
//! standardized with statistics of the training split. The last 20% of the
//! scenes are held out for the report.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::assignment::{assign, AssignmentConfig};
use crate::boxcodec::{decode, encode, sign_targets, BoxDeltas, SignTargets};
use crate::error::{Error, Result};
use crate::evalmr::{evaluate, SubsetSpec, MATCH_IOU};
use crate::exec::Exec;
use crate::geometry::BBox;
use crate::losses::{
    box_loss, cls_loss, refine, sign_loss, softmax2, ClassLabel, ClassLogits, LossConfig,
    SignLogits, SignProbs,
};
use crate::nms::{nms, Detection};
use crate::synth::{DetectionSet, Scene};

pub const HOLDOUT_FRACTION: f64 = 0.2;

/// IoU threshold of the NMS step in the held-out detection pipeline.
pub const NMS_IOU: f64 = 0.5;

/// Default step size as a multiple of `1 / L`, where `L` bounds the curvature
/// of the configured objective. Any multiple below 2 decreases the loss.
pub const LR_SCALE: f64 = 1.2;

const BASE_FEATURES: usize = 11;
const POWER_ITERATIONS: usize = 200;
const INIT_STD: f64 = 0.01;
const FEATURE_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub loss: LossConfig,
    pub assign: AssignmentConfig,
    /// Fixed step size; `None` picks `LR_SCALE / L` from the training data.
    pub lr: Option<f64>,
    pub epochs: usize,
    pub seed: u64,
    /// Std of the Gaussian noise on the geometric cue features.
    pub cue_noise: f64,
    pub noise_channels: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossConfig::default(),
            assign: AssignmentConfig::default(),
            lr: None,
            epochs: 1500,
            seed: 0,
            cue_noise: 0.05,
            noise_channels: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        LossConfig::new(self.loss.gamma, self.loss.sigma, self.loss.eta)?;
        AssignmentConfig::new(self.assign.decay, self.assign.threshold)?;
        if let Some(lr) = self.lr {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(Error::InvalidConfig(format!("lr {lr} must be > 0")));
            }
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if !(self.cue_noise.is_finite() && self.cue_noise >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "cue_noise {} must be >= 0",
                self.cue_noise
            )));
        }
        Ok(())
    }

    pub fn num_features(&self) -> usize {
        BASE_FEATURES + self.noise_channels
    }
}

/// Weights of the three linear maps, row-major `[output][feature]`, plus the
/// standardization applied to raw features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyHead {
    pub cls: Vec<[f64; 2]>,
    pub reg: Vec<[f64; 4]>,
    pub sign: Vec<[[f64; 2]; 4]>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ToyHead {
    fn init(d: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = || INIT_STD * normal(&mut rng);
        let cls = (0..d).map(|_| [w(), w()]).collect();
        let reg = (0..d).map(|_| [w(), w(), w(), w()]).collect();
        let sign = (0..d)
            .map(|_| std::array::from_fn(|_| [w(), w()]))
            .collect();
        Self {
            cls,
            reg,
            sign,
            mean: vec![0.0; d],
            std: vec![1.0; d],
        }
    }

    fn standardize(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }

    fn cls_logits(&self, x: &[f64]) -> ClassLogits {
        let mut out = [0.0; 2];
        for (xi, w) in x.iter().zip(&self.cls) {
            out[0] += xi * w[0];
            out[1] += xi * w[1];
        }
        out
    }

    fn deltas(&self, x: &[f64]) -> BoxDeltas {
        let mut out = [0.0; 4];
        for (xi, w) in x.iter().zip(&self.reg) {
            for k in 0..4 {
                out[k] += xi * w[k];
            }
        }
        BoxDeltas::from_array(out)
    }

    fn sign_logits(&self, x: &[f64]) -> SignLogits {
        let mut out = [[0.0; 2]; 4];
        for (xi, w) in x.iter().zip(&self.sign) {
            for k in 0..4 {
                out[k][0] += xi * w[k][0];
                out[k][1] += xi * w[k][1];
            }
        }
        out
    }

    fn is_finite(&self) -> bool {
        self.cls.iter().flatten().all(|v| v.is_finite())
            && self.reg.iter().flatten().all(|v| v.is_finite())
            && self.sign.iter().flatten().flatten().all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub cls: f64,
    #[serde(rename = "box")]
    pub box_: f64,
    pub sign: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Step size actually used.
    pub lr: f64,
    /// Loss on the training split before each update.
    pub epochs: Vec<EpochLoss>,
    pub train_samples: usize,
    pub train_positives: usize,
    pub heldout_positives: usize,
    /// Mean `|t - t*|` over held-out positives and the four dimensions.
    pub loc_error: f64,
    /// Same, after scaling each delta by the probability of its direction.
    pub loc_error_refined: f64,
    /// Fraction of held-out positive dimensions whose sign is predicted right.
    pub sign_accuracy: f64,
}

impl TrainReport {
    pub fn final_loss(&self) -> EpochLoss {
        *self.epochs.last().expect("at least one epoch")
    }
}

/// One RoI prepared for training.
#[derive(Clone, Debug)]
struct Sample {
    features: Vec<f64>,
    label: ClassLabel,
    target: Option<BoxDeltas>,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn scene_samples(scene: &Scene, index: usize, cfg: &TrainConfig) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ FEATURE_SALT);
    rng.set_stream(index as u64);
    let (img_w, img_h) = scene.extent();
    let records = assign(&scene.rois, &scene.gts, &cfg.assign);
    scene
        .rois
        .iter()
        .zip(&records)
        .map(|(roi, rec)| {
            let exact = rec
                .matched_gt
                .and_then(|j| encode(roi, &scene.gts[j].full).ok());
            let (cx, cy) = roi.center();
            let mut f = Vec::with_capacity(cfg.num_features());
            f.extend([
                1.0,
                cx / img_w,
                cy / img_h,
                roi.width() / img_w,
                roi.height() / img_h,
            ]);
            let cue = exact.unwrap_or(BoxDeltas::ZERO).to_array();
            for c in cue {
                f.push(c + cfg.cue_noise * normal(&mut rng));
            }
            f.push(rec.iou_ori + cfg.cue_noise * normal(&mut rng));
            f.push(rec.vis_ratio + cfg.cue_noise * normal(&mut rng));
            for _ in 0..cfg.noise_channels {
                f.push(normal(&mut rng));
            }
            let positive = rec.is_positive() && exact.is_some();
            Sample {
                features: f,
                label: if positive {
                    ClassLabel::Pedestrian
                } else {
                    ClassLabel::Background
                },
                target: if positive { exact } else { None },
            }
        })
        .collect()
}

/// Splits scene indices into training and held-out parts.
pub fn split(n_scenes: usize) -> Result<(std::ops::Range<usize>, std::ops::Range<usize>)> {
    let held = ((n_scenes as f64) * HOLDOUT_FRACTION).round().max(1.0) as usize;
    if n_scenes < 2 || held >= n_scenes {
        return Err(Error::InvalidConfig(format!(
            "need at least 2 scenes to hold some out, got {n_scenes}"
        )));
    }
    let cut = n_scenes - held;
    Ok((0..cut, cut..n_scenes))
}

fn fit_standardization(head: &mut ToyHead, samples: &[Sample]) {
    let d = head.mean.len();
    let n = samples.len() as f64;
    for j in 1..d {
        let m = samples.iter().map(|s| s.features[j]).sum::<f64>() / n;
        let v = samples
            .iter()
            .map(|s| (s.features[j] - m).powi(2))
            .sum::<f64>()
            / n;
        head.mean[j] = m;
        head.std[j] = if v > 0.0 { v.sqrt() } else { 1.0 };
    }
}

struct Batch {
    x: Vec<Vec<f64>>,
    labels: Vec<ClassLabel>,
    pos: Vec<usize>,
    targets: Vec<BoxDeltas>,
    signs: Vec<SignTargets>,
}

impl Batch {
    fn new(head: &ToyHead, samples: &[Sample]) -> Self {
        let x: Vec<Vec<f64>> = samples
            .iter()
            .map(|s| head.standardize(&s.features))
            .collect();
        let labels = samples.iter().map(|s| s.label).collect();
        let pos: Vec<usize> = (0..samples.len())
            .filter(|&i| samples[i].target.is_some())
            .collect();
        let targets: Vec<BoxDeltas> = pos.iter().map(|&i| samples[i].target.unwrap()).collect();
        let signs = targets.iter().map(sign_targets).collect();
        Self {
            x,
            labels,
            pos,
            targets,
            signs,
        }
    }
}

/// Largest eigenvalue of `sum x x^T / n` over the selected rows.
fn gram_lambda_max<'a>(rows: impl Iterator<Item = &'a Vec<f64>>, d: usize) -> f64 {
    let mut gram = vec![0.0; d * d];
    let mut n = 0usize;
    for x in rows {
        n += 1;
        for i in 0..d {
            for j in 0..d {
                gram[i * d + j] += x[i] * x[j];
            }
        }
    }
    if n == 0 {
        return 0.0;
    }
    gram.iter_mut().for_each(|g| *g /= n as f64);
    let mut v = vec![1.0 / (d as f64).sqrt(); d];
    let mut lambda = 0.0;
    for _ in 0..POWER_ITERATIONS {
        let w: Vec<f64> = (0..d)
            .map(|i| (0..d).map(|j| gram[i * d + j] * v[j]).sum())
            .collect();
        let norm = w.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = norm;
        v = w.into_iter().map(|a| a / norm).collect();
    }
    lambda
}

/// `LR_SCALE / L` for the objective of `loss` on `batch`.
///
/// The heads are independent, so `L` is the largest of the per-head bounds:
/// `eta sigma^2 lambda_pos` for the box loss, `lambda_all / 2` for the class
/// loss and `gamma lambda_pos / 2` for the sign loss, with `lambda` the top
/// eigenvalue of the relevant feature second-moment matrix.
fn safe_lr(batch: &Batch, loss: &LossConfig) -> f64 {
    let d = batch.x[0].len();
    let all = gram_lambda_max(batch.x.iter(), d);
    let pos = gram_lambda_max(batch.pos.iter().map(|&i| &batch.x[i]), d);
    let l = (loss.eta * loss.sigma * loss.sigma * pos)
        .max(0.5 * all)
        .max(0.5 * loss.gamma * pos);
    LR_SCALE / l
}

/// Loss of `head` on `batch` and, if `grad` is given, its gradient.
fn objective(
    head: &ToyHead,
    batch: &Batch,
    loss: &LossConfig,
    grad: Option<&mut ToyHead>,
) -> Result<EpochLoss> {
    let logits: Vec<ClassLogits> = batch.x.iter().map(|x| head.cls_logits(x)).collect();
    let cls = cls_loss(&logits, &batch.labels)?;
    let pred: Vec<BoxDeltas> = batch
        .pos
        .iter()
        .map(|&i| head.deltas(&batch.x[i]))
        .collect();
    let bx = box_loss(&pred, &batch.targets, loss)?;
    let sign_logits: Vec<SignLogits> = batch
        .pos
        .iter()
        .map(|&i| head.sign_logits(&batch.x[i]))
        .collect();
    let probs: Vec<SignProbs> = sign_logits.iter().map(SignProbs::from_logits).collect();
    let sg = sign_loss(&probs, &batch.signs, batch.pos.len(), loss)?;

    if let Some(g) = grad {
        g.cls.iter_mut().for_each(|w| *w = [0.0; 2]);
        g.reg.iter_mut().for_each(|w| *w = [0.0; 4]);
        g.sign.iter_mut().for_each(|w| *w = [[0.0; 2]; 4]);
        for (x, gl) in batch.x.iter().zip(&cls.grad) {
            for (xi, w) in x.iter().zip(g.cls.iter_mut()) {
                w[0] += xi * gl[0];
                w[1] += xi * gl[1];
            }
        }
        for ((&i, gb), gs) in batch.pos.iter().zip(&bx.grad).zip(&sg.grad) {
            for (j, xi) in batch.x[i].iter().enumerate() {
                for k in 0..4 {
                    g.reg[j][k] += xi * gb[k];
                    g.sign[j][k][0] += xi * gs[k][0];
                    g.sign[j][k][1] += xi * gs[k][1];
                }
            }
        }
    }
    Ok(EpochLoss {
        cls: cls.loss,
        box_: bx.loss,
        sign: sg.loss,
        total: cls.loss + bx.loss + sg.loss,
    })
}

fn step(head: &mut ToyHead, grad: &ToyHead, lr: f64) {
    for (w, g) in head.cls.iter_mut().zip(&grad.cls) {
        for k in 0..2 {
            w[k] -= lr * g[k];
        }
    }
    for (w, g) in head.reg.iter_mut().zip(&grad.reg) {
        for k in 0..4 {
            w[k] -= lr * g[k];
        }
    }
    for (w, g) in head.sign.iter_mut().zip(&grad.sign) {
        for k in 0..4 {
            w[k][0] -= lr * g[k][0];
            w[k][1] -= lr * g[k][1];
        }
    }
}

fn samples_of(scenes: &[Scene], range: std::ops::Range<usize>, cfg: &TrainConfig) -> Vec<Sample> {
    let offset = range.start;
    Exec::default()
        .map_indexed(&scenes[range], |i, s| scene_samples(s, offset + i, cfg))
        .into_iter()
        .flatten()
        .collect()
}

/// Trains on the first 80% of `scenes` and reports on the rest.
pub fn train(scenes: &[Scene], cfg: &TrainConfig) -> Result<TrainReport> {
    train_head(scenes, cfg).map(|(_, r)| r)
}

/// Like [`train`], also returning the trained head.
pub fn train_head(scenes: &[Scene], cfg: &TrainConfig) -> Result<(ToyHead, TrainReport)> {
    cfg.validate()?;
    let (train_range, held_range) = split(scenes.len())?;
    let train_samples = samples_of(scenes, train_range, cfg);
    let held_samples = samples_of(scenes, held_range, cfg);

    let mut head = ToyHead::init(cfg.num_features(), cfg.seed);
    fit_standardization(&mut head, &train_samples);
    let batch = Batch::new(&head, &train_samples);
    if batch.pos.is_empty() {
        return Err(Error::NoPositives);
    }
    let held = Batch::new(&head, &held_samples);
    if held.pos.is_empty() {
        return Err(Error::NoPositives);
    }

    let lr = cfg.lr.unwrap_or_else(|| safe_lr(&batch, &cfg.loss));
    let mut grad = head.clone();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let l = objective(&head, &batch, &cfg.loss, Some(&mut grad))?;
        if !l.total.is_finite() {
            return Err(Error::Diverged {
                epoch,
                loss: l.total,
            });
        }
        epochs.push(l);
        step(&mut head, &grad, lr);
        if !head.is_finite() {
            return Err(Error::Diverged {
                epoch,
                loss: f64::NAN,
            });
        }
    }

    let mut abs_err = 0.0;
    let mut abs_err_refined = 0.0;
    let mut correct = 0usize;
    for (&i, (t, s)) in held.pos.iter().zip(held.targets.iter().zip(&held.signs)) {
        let x = &held.x[i];
        let d = head.deltas(x);
        let probs = SignProbs::from_logits(&head.sign_logits(x));
        let r = refine(&d, &probs);
        let guess = probs.argmax();
        for k in 0..4 {
            abs_err += (d.to_array()[k] - t.to_array()[k]).abs();
            abs_err_refined += (r.to_array()[k] - t.to_array()[k]).abs();
            correct += usize::from(guess.0[k] == s.0[k]);
        }
    }
    let dims = (4 * held.pos.len()) as f64;
    let report = TrainReport {
        lr,
        epochs,
        train_samples: train_samples.len(),
        train_positives: batch.pos.len(),
        heldout_positives: held.pos.len(),
        loc_error: abs_err / dims,
        loc_error_refined: abs_err_refined / dims,
        sign_accuracy: correct as f64 / dims,
    };
    Ok((head, report))
}

/// Scored, NMS-filtered detections of the held-out scenes.
///
/// Each RoI's box is `decode(roi, deltas)` clipped to the image, with the
/// deltas optionally refined first; its score is the pedestrian probability.
pub fn heldout_detections(
    head: &ToyHead,
    scenes: &[Scene],
    cfg: &TrainConfig,
    refined: bool,
) -> Result<Vec<DetectionSet>> {
    let (_, held_range) = split(scenes.len())?;
    let indices: Vec<usize> = held_range.collect();
    Exec::default().try_map(&indices, |&i| -> Result<DetectionSet> {
        let scene = &scenes[i];
        let (img_w, img_h) = scene.extent();
        let samples = scene_samples(scene, i, cfg);
        let mut dets = Vec::with_capacity(samples.len());
        for (roi, s) in scene.rois.iter().zip(&samples) {
            let x = head.standardize(&s.features);
            let mut d = head.deltas(&x);
            if refined {
                d = refine(&d, &SignProbs::from_logits(&head.sign_logits(&x)));
            }
            let b: BBox = decode(roi, &d)?.clip(img_w, img_h);
            if b.is_degenerate() {
                continue;
            }
            let score = softmax2(head.cls_logits(&x))[1];
            dets.push(Detection::new(b, score)?);
        }
        Ok(DetectionSet {
            image_id: scene.image_id.clone(),
            dets: nms(&dets, NMS_IOU),
        })
    })
}

/// MR^-2 on the reasonable subset of the held-out scenes.
pub fn heldout_mr2(
    head: &ToyHead,
    scenes: &[Scene],
    cfg: &TrainConfig,
    refined: bool,
) -> Result<f64> {
    let (_, held_range) = split(scenes.len())?;
    let dets = heldout_detections(head, scenes, cfg, refined)?;
    let r = evaluate(
        &scenes[held_range],
        &dets,
        &SubsetSpec::reasonable(),
        MATCH_IOU,
        Exec::default(),
    )?;
    Ok(r.mr2)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub row: String,
    pub gamma: f64,
    pub sigma: f64,
    pub eta: f64,
    pub refine: bool,
    pub loc_error: f64,
    pub sign_accuracy: f64,
    pub mr2: f64,
}

/// Sign-loss weight used by the sign rows when `base` has none.
pub const ABLATION_GAMMA: f64 = 0.1;

/// Baseline, inflated box-loss rows, and the sign-loss rows.
///
/// Every row shares the seed, epochs and step size. Without a fixed `lr` in
/// `base`, the step size chosen for the baseline row is reused by the others.
pub fn ablation(scenes: &[Scene], base: &TrainConfig) -> Result<Vec<AblationRow>> {
    let gamma = if base.loss.gamma > 0.0 {
        base.loss.gamma
    } else {
        ABLATION_GAMMA
    };
    let (sigma, eta) = (base.loss.sigma, base.loss.eta);
    let runs: [(&str, f64, f64, f64); 6] = [
        ("baseline", 0.0, sigma, eta),
        ("sigma=3", 0.0, 3.0, eta),
        ("sigma=5", 0.0, 5.0, eta),
        ("eta=2", 0.0, sigma, 2.0),
        ("eta=3", 0.0, sigma, 3.0),
        ("+sign loss", gamma, sigma, eta),
    ];
    let mut out = Vec::with_capacity(runs.len() + 1);
    let mut lr = base.lr;
    for (name, gamma, sigma, eta) in runs {
        let mut cfg = *base;
        cfg.loss = LossConfig::new(gamma, sigma, eta)?;
        cfg.lr = lr;
        let (head, report) = train_head(scenes, &cfg)?;
        lr = Some(report.lr);
        let variants: &[bool] = if gamma > 0.0 {
            &[false, true]
        } else {
            &[false]
        };
        for &refined in variants {
            out.push(AblationRow {
                row: if refined {
                    format!("{name} & refining")
                } else {
                    name.to_string()
                },
                gamma,
                sigma,
                eta,
                refine: refined,
                loc_error: if refined {
                    report.loc_error_refined
                } else {
                    report.loc_error
                },
                sign_accuracy: report.sign_accuracy,
                mr2: heldout_mr2(&head, scenes, &cfg, refined)?,
            });
        }
    }
    Ok(out)
}

pub fn write_ablation_csv<W: std::io::Write>(rows: &[AblationRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
