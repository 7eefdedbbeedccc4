//! Detector losses with closed-form gradients, and sign-based refinement.
//!
//! The detector objective is the plain sum of three terms:
//!
//! * classification: mean softmax cross-entropy over background/pedestrian;
//! * box regression: `eta / N_reg * sum SmoothL1_sigma(pred - target)`;
//! * sign prediction: `gamma / N_reg * sum -ln s[target sign]`, a 2-way
//!   softmax cross-entropy per box dimension, positives only.
//!
//! Gradients of the two softmax losses are taken with respect to the
//! pre-softmax logits.

use serde::{Deserialize, Serialize};

use crate::boxcodec::{BoxDeltas, Sign, SignTargets};
use crate::error::{Error, Result};

/// Background/pedestrian logits of one sample.
pub type ClassLogits = [f64; 2];

/// `[minus, plus]` logits per dimension x, y, w, h.
pub type SignLogits = [[f64; 2]; 4];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassLabel {
    Background,
    Pedestrian,
}

impl ClassLabel {
    pub fn index(self) -> usize {
        match self {
            ClassLabel::Background => 0,
            ClassLabel::Pedestrian => 1,
        }
    }
}

/// Direction probabilities `(s_minus, s_plus)` for x, y, w and h.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[[f64; 2]; 4]", into = "[[f64; 2]; 4]")]
pub struct SignProbs(pub [[f64; 2]; 4]);

impl SignProbs {
    const SUM_TOL: f64 = 1e-9;

    pub fn new(pairs: [[f64; 2]; 4]) -> Result<Self> {
        for [m, p] in pairs {
            if !((0.0..=1.0).contains(&m) && (0.0..=1.0).contains(&p)) {
                return Err(Error::InvalidConfig(format!(
                    "sign probabilities ({m}, {p}) outside [0, 1]"
                )));
            }
            if (m + p - 1.0).abs() > Self::SUM_TOL {
                return Err(Error::InvalidConfig(format!(
                    "sign probabilities ({m}, {p}) do not sum to 1"
                )));
            }
        }
        Ok(Self(pairs))
    }

    pub fn from_logits(logits: &SignLogits) -> Self {
        Self(logits.map(softmax2))
    }

    /// Probability that dimension `k` moves in direction `sign`.
    #[inline]
    pub fn prob(&self, k: usize, sign: Sign) -> f64 {
        self.0[k][sign.index()]
    }

    /// Most likely direction per dimension (ties read as `Neg`).
    pub fn argmax(&self) -> SignTargets {
        SignTargets(
            self.0
                .map(|[m, p]| if p > m { Sign::Pos } else { Sign::Neg }),
        )
    }
}

impl TryFrom<[[f64; 2]; 4]> for SignProbs {
    type Error = Error;

    fn try_from(v: [[f64; 2]; 4]) -> Result<Self> {
        SignProbs::new(v)
    }
}

impl From<SignProbs> for [[f64; 2]; 4] {
    fn from(p: SignProbs) -> Self {
        p.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the sign loss.
    pub gamma: f64,
    /// SmoothL1 sigma; the quadratic zone is `|x| < 1 / sigma^2`.
    pub sigma: f64,
    /// Weight of the box loss.
    pub eta: f64,
}

impl LossConfig {
    pub fn new(gamma: f64, sigma: f64, eta: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma >= 0.0) {
            return Err(Error::InvalidConfig(format!("gamma {gamma} must be >= 0")));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::InvalidConfig(format!("sigma {sigma} must be > 0")));
        }
        if !(eta.is_finite() && eta > 0.0) {
            return Err(Error::InvalidConfig(format!("eta {eta} must be > 0")));
        }
        Ok(Self { gamma, sigma, eta })
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            gamma: 0.1,
            sigma: 1.0,
            eta: 1.0,
        }
    }
}

/// Loss value with its gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGrad<G> {
    pub loss: f64,
    pub grad: G,
}

#[inline]
pub(crate) fn softmax2(l: [f64; 2]) -> [f64; 2] {
    let m = l[0].max(l[1]);
    let (e0, e1) = ((l[0] - m).exp(), (l[1] - m).exp());
    let z = e0 + e1;
    [e0 / z, e1 / z]
}

#[inline]
fn log_softmax2(l: [f64; 2]) -> [f64; 2] {
    let m = l[0].max(l[1]);
    let tail = (-(l[0] - l[1]).abs()).exp().ln_1p();
    [(l[0] - m) - tail, (l[1] - m) - tail]
}

/// Mean softmax cross-entropy; gradient `(softmax - onehot) / N`.
pub fn cls_loss(
    logits: &[ClassLogits],
    labels: &[ClassLabel],
) -> Result<LossGrad<Vec<ClassLogits>>> {
    if logits.len() != labels.len() {
        return Err(Error::LengthMismatch {
            what: "class logits vs labels",
            left: logits.len(),
            right: labels.len(),
        });
    }
    if logits.is_empty() {
        return Err(Error::Empty("classification samples"));
    }
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (l, y) in logits.iter().zip(labels) {
        let c = y.index();
        loss -= log_softmax2(*l)[c];
        let mut g = softmax2(*l);
        g[c] -= 1.0;
        grad.push([g[0] / n, g[1] / n]);
    }
    Ok(LossGrad {
        loss: loss / n,
        grad,
    })
}

/// `0.5 sigma^2 x^2` inside `|x| < 1/sigma^2`, `|x| - 0.5/sigma^2` outside.
#[inline]
pub fn smooth_l1(x: f64, sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    if x.abs() < 1.0 / s2 {
        0.5 * s2 * x * x
    } else {
        x.abs() - 0.5 / s2
    }
}

#[inline]
pub fn smooth_l1_grad(x: f64, sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    if x.abs() < 1.0 / s2 {
        s2 * x
    } else {
        x.signum()
    }
}

/// SmoothL1 box loss normalized by the number of samples (`N_reg`).
/// The gradient is with respect to `pred`, one `[tx, ty, tw, th]` per sample.
pub fn box_loss(
    pred: &[BoxDeltas],
    target: &[BoxDeltas],
    cfg: &LossConfig,
) -> Result<LossGrad<Vec<[f64; 4]>>> {
    if pred.len() != target.len() {
        return Err(Error::LengthMismatch {
            what: "predicted vs target deltas",
            left: pred.len(),
            right: target.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::Empty("box regression samples"));
    }
    let scale = cfg.eta / pred.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (p, t) in pred.iter().zip(target) {
        let (p, t) = (p.to_array(), t.to_array());
        let mut g = [0.0; 4];
        for k in 0..4 {
            let d = p[k] - t[k];
            loss += smooth_l1(d, cfg.sigma);
            g[k] = scale * smooth_l1_grad(d, cfg.sigma);
        }
        grad.push(g);
    }
    Ok(LossGrad {
        loss: scale * loss,
        grad,
    })
}

/// Sign-prediction loss over positive samples.
///
/// `n_reg` is the number of positives in the batch. With `n_reg == 0` the
/// loss and gradient are zero. The gradient is with respect to the logits
/// that produced `probs`.
pub fn sign_loss(
    probs: &[SignProbs],
    targets: &[SignTargets],
    n_reg: usize,
    cfg: &LossConfig,
) -> Result<LossGrad<Vec<SignLogits>>> {
    if probs.len() != targets.len() {
        return Err(Error::LengthMismatch {
            what: "sign probabilities vs sign targets",
            left: probs.len(),
            right: targets.len(),
        });
    }
    if n_reg == 0 {
        return Ok(LossGrad {
            loss: 0.0,
            grad: vec![[[0.0; 2]; 4]; probs.len()],
        });
    }
    let scale = cfg.gamma / n_reg as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(probs.len());
    for (p, t) in probs.iter().zip(targets) {
        let mut g = [[0.0; 2]; 4];
        for ((gk, pk), tk) in g.iter_mut().zip(&p.0).zip(&t.0) {
            let c = tk.index();
            loss -= pk[c].ln();
            *gk = pk.map(|v| scale * v);
            gk[c] -= scale;
        }
        grad.push(g);
    }
    Ok(LossGrad {
        loss: scale * loss,
        grad,
    })
}

pub fn total_loss(cls: f64, box_: f64, sign: f64) -> f64 {
    cls + box_ + sign
}

/// Scales each delta by the predicted probability of its own direction.
/// Zero deltas take the `minus` branch and stay zero.
pub fn refine(d: &BoxDeltas, p: &SignProbs) -> BoxDeltas {
    let t = d.to_array();
    let mut out = [0.0; 4];
    for k in 0..4 {
        out[k] = t[k] * p.prob(k, Sign::of(t[k]));
    }
    BoxDeltas::from_array(out)
}
