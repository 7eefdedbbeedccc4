//! Central finite-difference checks of the analytic loss gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::boxcodec::{sign_targets, BoxDeltas};
use crate::error::Result;
use crate::losses::{
    box_loss, cls_loss, sign_loss, ClassLabel, ClassLogits, LossConfig, SignLogits, SignProbs,
};

/// Finite-difference step.
pub const STEP: f64 = 1e-5;

/// Denominator floor of the relative error, so that components whose true
/// value is ~0 are judged on absolute error instead.
pub const REL_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub instances: usize,
    pub cls_max_rel_err: f64,
    pub box_max_rel_err: f64,
    pub sign_max_rel_err: f64,
}

impl GradCheckReport {
    pub fn max(&self) -> f64 {
        self.cls_max_rel_err
            .max(self.box_max_rel_err)
            .max(self.sign_max_rel_err)
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Max relative error between `grad` and the central difference of `f`
/// around `x`.
pub fn check<F>(x: &[f64], grad: &[f64], mut f: F) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(x.len(), grad.len());
    let mut probe = x.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        probe[i] = x[i] + STEP;
        let up = f(&probe);
        probe[i] = x[i] - STEP;
        let down = f(&probe);
        probe[i] = x[i];
        worst = worst.max(rel_err(grad[i], (up - down) / (2.0 * STEP)));
    }
    worst
}

fn random_label(rng: &mut ChaCha8Rng) -> ClassLabel {
    if rng.random_bool(0.5) {
        ClassLabel::Pedestrian
    } else {
        ClassLabel::Background
    }
}

/// Checks every loss on `instances` random problems of 1..=8 samples each.
/// SmoothL1 is exercised for sigma in {1, 3, 5} and eta in {1, 2, 3}.
pub fn run(seed: u64, instances: usize) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        instances,
        cls_max_rel_err: 0.0,
        box_max_rel_err: 0.0,
        sign_max_rel_err: 0.0,
    };
    const SIGMAS: [f64; 3] = [1.0, 3.0, 5.0];
    const ETAS: [f64; 3] = [1.0, 2.0, 3.0];

    for i in 0..instances {
        let n = rng.random_range(1..=8);

        let logits: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-4.0..4.0)).collect();
        let labels: Vec<ClassLabel> = (0..n).map(|_| random_label(&mut rng)).collect();
        let pack = |v: &[f64]| -> Vec<ClassLogits> { v.chunks(2).map(|c| [c[0], c[1]]).collect() };
        let g = cls_loss(&pack(&logits), &labels)?;
        let flat: Vec<f64> = g.grad.iter().flatten().copied().collect();
        let err = check(&logits, &flat, |x| {
            cls_loss(&pack(x), &labels).unwrap().loss
        });
        report.cls_max_rel_err = report.cls_max_rel_err.max(err);

        let cfg = LossConfig::new(0.1, SIGMAS[i % 3], ETAS[(i / 3) % 3])?;
        let target: Vec<BoxDeltas> = (0..n)
            .map(|_| BoxDeltas::from_array(std::array::from_fn(|_| rng.random_range(-1.0..1.0))))
            .collect();
        let pred: Vec<f64> = (0..4 * n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let unpack = |v: &[f64]| -> Vec<BoxDeltas> {
            v.chunks(4)
                .map(|c| BoxDeltas::new(c[0], c[1], c[2], c[3]))
                .collect()
        };
        let g = box_loss(&unpack(&pred), &target, &cfg)?;
        let flat: Vec<f64> = g.grad.iter().flatten().copied().collect();
        let err = check(&pred, &flat, |x| {
            box_loss(&unpack(x), &target, &cfg).unwrap().loss
        });
        report.box_max_rel_err = report.box_max_rel_err.max(err);

        let gamma_cfg = LossConfig::new(rng.random_range(0.05..1.0), 1.0, 1.0)?;
        let sign_logits: Vec<f64> = (0..8 * n).map(|_| rng.random_range(-4.0..4.0)).collect();
        let targets: Vec<_> = target.iter().map(sign_targets).collect();
        let to_probs = |v: &[f64]| -> Vec<SignProbs> {
            v.chunks(8)
                .map(|c| {
                    let l: SignLogits = std::array::from_fn(|k| [c[2 * k], c[2 * k + 1]]);
                    SignProbs::from_logits(&l)
                })
                .collect()
        };
        let g = sign_loss(&to_probs(&sign_logits), &targets, n, &gamma_cfg)?;
        let flat: Vec<f64> = g.grad.iter().flatten().flatten().copied().collect();
        let err = check(&sign_logits, &flat, |x| {
            sign_loss(&to_probs(x), &targets, n, &gamma_cfg)
                .unwrap()
                .loss
        });
        report.sign_max_rel_err = report.sign_max_rel_err.max(err);
    }
    Ok(report)
}
