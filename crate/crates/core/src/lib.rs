//! Occlusion-aware training-sample assignment and box-sign refinement for
//! pedestrian detection, together with the detection plumbing needed to
//! exercise them end to end: a box codec, greedy NMS, log-average miss-rate
//! evaluation, a crowded-scene generator and a toy linear trainer.
//!
//! Batch entry points take an [`Exec`] so that per-scene work can run on the
//! rayon pool (feature `parallel`, on by default) or sequentially. Both paths
//! produce identical, order-preserving output.

pub mod assignment;
pub mod boxcodec;
pub mod decay;
pub mod error;
pub mod evalmr;
pub mod exec;
pub mod geometry;
pub mod gradcheck;
pub mod io;
pub mod losses;
pub mod nms;
pub mod synth;
pub mod trainer;

pub use assignment::{assign, AssignmentConfig, AssignmentRecord, Label};
pub use boxcodec::{decode, encode, sign_targets, BoxDeltas, Sign, SignTargets};
pub use decay::DecaySpec;
pub use error::{Error, Result};
pub use evalmr::{EvalResult, SubsetSpec};
pub use exec::Exec;
pub use geometry::{BBox, GroundTruth};
pub use losses::{LossConfig, SignProbs};
pub use nms::{nms, Detection};
pub use synth::{DetectionSet, Scene, SceneConfig};
