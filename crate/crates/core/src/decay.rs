//! Decay functions `f(vis_ratio)` that scale IoU into visible IoU.
//!
//! Every variant maps `[0, 1]` monotonically into `[0, 1]`. Textual form, as
//! accepted by [`DecaySpec::from_str`](std::str::FromStr):
//!
//! | text              | function                                         |
//! |-------------------|--------------------------------------------------|
//! | `none`            | `f(x) = 1`                                       |
//! | `sigmoid:<b>,<a>` | `(s(x) - s(0)) / (s(1) - s(0))`, `s(x) = 1 / (1 + e^(-b(x - a)))` |
//! | `ramp:<x1>,<x2>`  | 0 below `x1`, 1 above `x2`, linear in between    |
//! | `cosine`          | `0.5 - 0.5 cos(pi x)`                            |

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum DecaySpec {
    None,
    Sigmoid { beta: f64, alpha: f64 },
    Ramp { x1: f64, x2: f64 },
    Cosine,
}

impl DecaySpec {
    pub fn sigmoid(beta: f64, alpha: f64) -> Result<Self> {
        let spec = DecaySpec::Sigmoid { beta, alpha };
        let bad = |reason: &str| Error::InvalidDecay {
            spec: spec.to_string(),
            reason: reason.to_string(),
        };
        if !(beta.is_finite() && beta > 0.0) {
            return Err(bad("beta must be a positive finite number"));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(bad("alpha must lie in (0, 1)"));
        }
        if logistic(beta * (1.0 - alpha)) - logistic(-beta * alpha) <= 0.0 {
            return Err(bad("s(1) - s(0) underflows to zero"));
        }
        Ok(spec)
    }

    pub fn ramp(x1: f64, x2: f64) -> Result<Self> {
        if !(x1.is_finite() && x2.is_finite() && x1 < x2) {
            return Err(Error::InvalidDecay {
                spec: DecaySpec::Ramp { x1, x2 }.to_string(),
                reason: "requires finite x1 < x2".to_string(),
            });
        }
        Ok(DecaySpec::Ramp { x1, x2 })
    }

    /// Evaluates `f(x)`. Inputs are clamped into `[0, 1]` first, NaN is read as 0.
    pub fn eval(&self, x: f64) -> f64 {
        let x = if x.is_nan() { 0.0 } else { x.clamp(0.0, 1.0) };
        let y = match *self {
            DecaySpec::None => 1.0,
            DecaySpec::Sigmoid { beta, alpha } => {
                let s = |v: f64| logistic(beta * (v - alpha));
                let (s0, s1) = (s(0.0), s(1.0));
                (s(x) - s0) / (s1 - s0)
            }
            DecaySpec::Ramp { x1, x2 } => {
                if x <= x1 {
                    0.0
                } else if x >= x2 {
                    1.0
                } else {
                    (x - x1) / (x2 - x1)
                }
            }
            DecaySpec::Cosine => 0.5 - 0.5 * (PI * x).cos(),
        };
        y.clamp(0.0, 1.0)
    }
}

impl Default for DecaySpec {
    fn default() -> Self {
        DecaySpec::Sigmoid {
            beta: 8.0,
            alpha: 0.5,
        }
    }
}

#[inline]
fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl fmt::Display for DecaySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DecaySpec::None => write!(f, "none"),
            DecaySpec::Sigmoid { beta, alpha } => write!(f, "sigmoid:{beta},{alpha}"),
            DecaySpec::Ramp { x1, x2 } => write!(f, "ramp:{x1},{x2}"),
            DecaySpec::Cosine => write!(f, "cosine"),
        }
    }
}

impl FromStr for DecaySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let text = s.trim();
        let bad = |reason: &str| Error::InvalidDecay {
            spec: text.to_string(),
            reason: reason.to_string(),
        };
        let (kind, args) = match text.split_once(':') {
            Some((k, a)) => (k.trim().to_ascii_lowercase(), Some(a)),
            None => (text.to_ascii_lowercase(), None),
        };
        let pair = |args: Option<&str>| -> Result<(f64, f64)> {
            let args = args.ok_or_else(|| bad("expected two comma-separated parameters"))?;
            let mut it = args.split(',').map(|p| p.trim().parse::<f64>());
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(a)), Some(Ok(b)), None) => Ok((a, b)),
                _ => Err(bad("expected two comma-separated numbers")),
            }
        };
        match (kind.as_str(), args) {
            ("none", None) => Ok(DecaySpec::None),
            ("cosine", None) => Ok(DecaySpec::Cosine),
            ("sigmoid", a) => {
                let (beta, alpha) = pair(a)?;
                DecaySpec::sigmoid(beta, alpha)
            }
            ("ramp" | "relu", a) => {
                let (x1, x2) = pair(a)?;
                DecaySpec::ramp(x1, x2)
            }
            ("none" | "cosine", Some(_)) => Err(bad("takes no parameters")),
            _ => Err(bad("unknown kind (expected none, sigmoid, ramp or cosine)")),
        }
    }
}

impl TryFrom<String> for DecaySpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<DecaySpec> for String {
    fn from(d: DecaySpec) -> Self {
        d.to_string()
    }
}
