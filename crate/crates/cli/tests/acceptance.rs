//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Every check compares the library against an oracle written here from
//! scratch (raster counting, brute-force search, exhaustive enumeration,
//! finite differences) rather than against the library's own helpers.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use visiou::assignment::{assign, AssignmentConfig, Label};
use visiou::boxcodec::{decode, encode, BoxDeltas, Sign, SignTargets};
use visiou::evalmr::{evaluate, match_detections, mr2, SubsetSpec};
use visiou::geometry::{intersect_area, iou, vis_ratio, BBox, GroundTruth};
use visiou::losses::{box_loss, cls_loss, refine, sign_loss, ClassLabel, LossConfig, SignProbs};
use visiou::nms::{nms, nms_indices, Detection};
use visiou::synth::{generate, DetectionSet, SceneConfig};
use visiou::trainer::{ablation, AblationRow, TrainConfig};
use visiou::DecaySpec;

const GEOMETRY_CASES: usize = 1000;
const GEOMETRY_BUDGET: Duration = Duration::from_secs(5);
const DECAY_GRID: usize = 1000;
const SIGMOID_AT_QUARTER: f64 = 0.1050;
const SIGMOID_AT_QUARTER_TOL: f64 = 1e-4;
const ASSIGN_MIN_ROIS: usize = 10_000;
const GRAD_INSTANCES: usize = 150;
const GRAD_STEP: f64 = 1e-5;
const GRAD_REL_FLOOR: f64 = 1e-8;
const GRAD_TOL: f64 = 1e-5;
const REFINE_TRIPLES: usize = 10_000;
const CODEC_PAIRS: usize = 1000;
const CODEC_TOL: f64 = 1e-9;
const NMS_TRIALS: usize = 500;
const NMS_MAX_SIZE: usize = 20;
const MR_DATASETS: usize = 50;
const MR_TOL: f64 = 1e-9;
const MR_FLOOR: f64 = 1e-10;
const MATCH_IOU: f64 = 0.5;
const ABLATION_SCENES: usize = 100;
const ABLATION_SEED: u64 = 0;
const ABLATION_BUDGET: Duration = Duration::from_secs(120);
const BASELINE_REL_TOL: f64 = 1e-6;

/// Held-out localization error per ablation row, recorded on the first
/// passing run with the settings above.
const ABLATION_BASELINES: [(&str, f64); 7] = [
    ("baseline", 0.029652667124824818),
    ("sigma=3", 0.5557898090107966),
    ("sigma=5", 0.6133182647840136),
    ("eta=2", 0.9452479535357475),
    ("eta=3", 1.5972780266232254),
    ("+sign loss", 0.029652667124824818),
    ("+sign loss & refining", 0.029251868667475017),
];

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- geometry

fn int_box(r: &mut ChaCha8Rng, span: i64, min_size: i64) -> [i64; 4] {
    let x1 = r.random_range(0..span);
    let y1 = r.random_range(0..span);
    let x2 = r.random_range(x1 + min_size..=span + min_size);
    let y2 = r.random_range(y1 + min_size..=span + min_size);
    [x1, y1, x2, y2]
}

fn to_bbox(b: [i64; 4]) -> BBox {
    BBox::new(b[0] as f64, b[1] as f64, b[2] as f64, b[3] as f64)
}

fn covers(b: &[i64; 4], x: i64, y: i64) -> bool {
    x >= b[0] && x < b[2] && y >= b[1] && y < b[3]
}

/// Unit cells covered by `a`, by `b`, by both, by either.
fn raster(a: &[i64; 4], b: &[i64; 4]) -> (i64, i64, i64, i64) {
    let hi = a[2].max(a[3]).max(b[2]).max(b[3]);
    let (mut na, mut nb, mut both, mut either) = (0, 0, 0, 0);
    for x in 0..hi {
        for y in 0..hi {
            let (ia, ib) = (covers(a, x, y), covers(b, x, y));
            na += ia as i64;
            nb += ib as i64;
            both += (ia && ib) as i64;
            either += (ia || ib) as i64;
        }
    }
    (na, nb, both, either)
}

fn criterion_geometry() -> Check {
    let start = Instant::now();
    let mut r = rng(101);
    for case in 0..GEOMETRY_CASES {
        let roi = int_box(&mut r, 40, 1);
        let full = int_box(&mut r, 40, 1);
        let vis = if case % 20 == 0 {
            [full[0], full[1], full[0], full[3]]
        } else {
            let x1 = r.random_range(full[0]..full[2]);
            let y1 = r.random_range(full[1]..full[3]);
            [
                x1,
                y1,
                r.random_range(x1 + 1..=full[2]),
                r.random_range(y1 + 1..=full[3]),
            ]
        };
        let (_, _, inter, union) = raster(&roi, &full);
        let (b_roi, b_full) = (to_bbox(roi), to_bbox(full));
        ensure(intersect_area(&b_roi, &b_full) == inter as f64, || {
            format!("intersection of {roi:?} and {full:?}")
        })?;
        let want = if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        };
        ensure(iou(&b_roi, &b_full) == want, || {
            format!("iou of {roi:?} and {full:?}")
        })?;

        let (_, n_vis, roi_vis, _) = raster(&roi, &vis);
        let gt = GroundTruth::new(b_full, to_bbox(vis)).map_err(|e| e.to_string())?;
        let want = if n_vis == 0 {
            0.0
        } else {
            roi_vis as f64 / n_vis as f64
        };
        ensure(vis_ratio(&b_roi, &gt) == want, || {
            format!("vis_ratio of {roi:?} against visible {vis:?}")
        })?;
    }
    let took = start.elapsed();
    ensure(took < GEOMETRY_BUDGET, || format!("took {took:?}"))?;
    Ok(format!(
        "{GEOMETRY_CASES} raster cases exact in {:.2} s",
        took.as_secs_f64()
    ))
}

// ------------------------------------------------------------------- decay

fn criterion_decay() -> Check {
    let kinds = [
        DecaySpec::None,
        DecaySpec::sigmoid(8.0, 0.5).unwrap(),
        DecaySpec::ramp(0.3, 0.7).unwrap(),
        DecaySpec::Cosine,
    ];
    let grid: Vec<f64> = (0..=DECAY_GRID)
        .map(|i| i as f64 / DECAY_GRID as f64)
        .collect();
    for d in &kinds {
        for w in grid.windows(2) {
            let (a, b) = (d.eval(w[0]), d.eval(w[1]));
            ensure((0.0..=1.0).contains(&a) && a <= b, || {
                format!("{d} not monotone at {}", w[0])
            })?;
        }
    }
    for d in [
        DecaySpec::sigmoid(8.0, 0.5).unwrap(),
        DecaySpec::sigmoid(3.0, 0.3).unwrap(),
        DecaySpec::Cosine,
    ] {
        ensure(d.eval(0.0).abs() < 1e-15, || {
            format!("{d}: f(0) = {}", d.eval(0.0))
        })?;
        ensure((d.eval(1.0) - 1.0).abs() < 1e-15, || {
            format!("{d}: f(1) = {}", d.eval(1.0))
        })?;
    }
    let q = DecaySpec::sigmoid(8.0, 0.5).unwrap().eval(0.25);
    ensure(
        (q - SIGMOID_AT_QUARTER).abs() <= SIGMOID_AT_QUARTER_TOL,
        || format!("sigmoid(8,0.5) at 0.25 = {q}"),
    )?;
    let betas = [2.0, 4.0, 8.0, 12.0, 20.0];
    for pair in betas.windows(2) {
        let lo = DecaySpec::sigmoid(pair[0], 0.5).unwrap();
        let hi = DecaySpec::sigmoid(pair[1], 0.5).unwrap();
        for &x in &grid {
            let ok = if x > 0.5 {
                lo.eval(x) <= hi.eval(x)
            } else if x < 0.5 {
                lo.eval(x) >= hi.eval(x)
            } else {
                true
            };
            ensure(ok, || {
                format!("beta {} vs {} out of order at {x}", pair[0], pair[1])
            })?;
        }
    }
    Ok(format!(
        "4 kinds monotone on {} points, f(0.25) = {q:.6}, beta ordering holds",
        DECAY_GRID + 1
    ))
}

// -------------------------------------------------------------- assignment

fn criterion_assignment() -> Check {
    let scenes = generate(
        &SceneConfig {
            seed: 303,
            ..SceneConfig::default()
        },
        130,
    )
    .map_err(|e| e.to_string())?;
    let total: usize = scenes.iter().map(|s| s.rois.len()).sum();
    ensure(total >= ASSIGN_MIN_ROIS, || {
        format!("only {total} RoIs generated")
    })?;
    let decays = [
        DecaySpec::sigmoid(8.0, 0.5).unwrap(),
        DecaySpec::sigmoid(20.0, 0.5).unwrap(),
        DecaySpec::ramp(0.3, 0.7).unwrap(),
        DecaySpec::Cosine,
    ];
    let base_cfg = AssignmentConfig::new(DecaySpec::None, 0.5).unwrap();
    let mut discarded = 0usize;
    for decay in decays {
        let cfg = AssignmentConfig::new(decay, 0.5).unwrap();
        for s in &scenes {
            let base = assign(&s.rois, &s.gts, &base_cfg);
            let with = assign(&s.rois, &s.gts, &cfg);
            for (b, w) in base.iter().zip(&with) {
                let (bp, wp) = (b.label == Label::Positive, w.label == Label::Positive);
                ensure(!wp || bp, || {
                    format!("{decay}: roi {} positive only with decay", w.roi_index)
                })?;
                if bp && !wp {
                    discarded += 1;
                    let f = decay.eval(w.vis_ratio);
                    ensure(f < 0.5 / w.iou_ori, || {
                        format!("{decay}: discarded roi with f = {f}, iou = {}", w.iou_ori)
                    })?;
                }
                if bp {
                    ensure(b.iou_ori >= 0.5, || "baseline positive below 0.5".into())?;
                }
            }
        }
    }
    Ok(format!(
        "{total} RoIs x 4 decays: subset law holds, {discarded} discards all satisfy f < 0.5/iou"
    ))
}

// --------------------------------------------------------------- gradients

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(GRAD_REL_FLOOR)
}

fn fd_check(x: &[f64], grad: &[f64], f: impl Fn(&[f64]) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    let mut p = x.to_vec();
    for i in 0..x.len() {
        p[i] = x[i] + GRAD_STEP;
        let up = f(&p);
        p[i] = x[i] - GRAD_STEP;
        let down = f(&p);
        p[i] = x[i];
        worst = worst.max(rel_err(grad[i], (up - down) / (2.0 * GRAD_STEP)));
    }
    worst
}

fn deltas(v: &[f64]) -> Vec<BoxDeltas> {
    v.chunks(4)
        .map(|c| BoxDeltas::new(c[0], c[1], c[2], c[3]))
        .collect()
}

fn criterion_gradients() -> Check {
    let mut r = rng(404);
    let (mut cls_worst, mut box_worst, mut sign_worst) = (0f64, 0f64, 0f64);
    let (mut quad, mut lin) = (0usize, 0usize);
    let sigmas = [1.0, 3.0, 5.0];
    let etas = [1.0, 2.0, 3.0];
    for i in 0..GRAD_INSTANCES {
        let n = r.random_range(1..=6);

        let logits: Vec<f64> = (0..2 * n).map(|_| r.random_range(-5.0..5.0)).collect();
        let labels: Vec<ClassLabel> = (0..n)
            .map(|_| {
                if r.random_bool(0.5) {
                    ClassLabel::Pedestrian
                } else {
                    ClassLabel::Background
                }
            })
            .collect();
        let pack = |v: &[f64]| v.chunks(2).map(|c| [c[0], c[1]]).collect::<Vec<_>>();
        let g = cls_loss(&pack(&logits), &labels).unwrap();
        let flat: Vec<f64> = g.grad.iter().flatten().copied().collect();
        cls_worst = cls_worst.max(fd_check(&logits, &flat, |x| {
            cls_loss(&pack(x), &labels).unwrap().loss
        }));

        let cfg = LossConfig::new(0.1, sigmas[i % 3], etas[(i / 3) % 3]).unwrap();
        let knot = 1.0 / (cfg.sigma * cfg.sigma);
        let target: Vec<f64> = (0..4 * n).map(|_| r.random_range(-1.0..1.0)).collect();
        let mut pred = Vec::with_capacity(4 * n);
        for t in &target {
            let p = loop {
                let p: f64 = t + r.random_range(-1.5..1.5);
                if ((p - t).abs() - knot).abs() > 100.0 * GRAD_STEP {
                    break p;
                }
            };
            if (p - t).abs() < knot {
                quad += 1;
            } else {
                lin += 1;
            }
            pred.push(p);
        }
        let tgt = deltas(&target);
        let g = box_loss(&deltas(&pred), &tgt, &cfg).unwrap();
        let flat: Vec<f64> = g.grad.iter().flatten().copied().collect();
        box_worst = box_worst.max(fd_check(&pred, &flat, |x| {
            box_loss(&deltas(x), &tgt, &cfg).unwrap().loss
        }));

        let sl: Vec<f64> = (0..8 * n).map(|_| r.random_range(-4.0..4.0)).collect();
        let signs: Vec<SignTargets> = (0..n)
            .map(|_| {
                SignTargets(std::array::from_fn(|_| {
                    if r.random_bool(0.5) {
                        Sign::Pos
                    } else {
                        Sign::Neg
                    }
                }))
            })
            .collect();
        let probs = |v: &[f64]| -> Vec<SignProbs> {
            v.chunks(8)
                .map(|c| SignProbs::from_logits(&std::array::from_fn(|k| [c[2 * k], c[2 * k + 1]])))
                .collect()
        };
        let n_reg = n;
        let g = sign_loss(&probs(&sl), &signs, n_reg, &cfg).unwrap();
        let flat: Vec<f64> = g.grad.iter().flatten().flatten().copied().collect();
        sign_worst = sign_worst.max(fd_check(&sl, &flat, |x| {
            sign_loss(&probs(x), &signs, n_reg, &cfg).unwrap().loss
        }));
    }
    ensure(quad > 0 && lin > 0, || {
        format!("SmoothL1 branches hit: {quad} quadratic, {lin} linear")
    })?;
    let worst = cls_worst.max(box_worst).max(sign_worst);
    ensure(worst < GRAD_TOL, || {
        format!("max rel err cls {cls_worst:.2e} box {box_worst:.2e} sign {sign_worst:.2e}")
    })?;
    Ok(format!(
        "{GRAD_INSTANCES} instances each, max rel err cls {cls_worst:.2e} box {box_worst:.2e} sign {sign_worst:.2e} ({quad} quadratic / {lin} linear SmoothL1 terms)"
    ))
}

// -------------------------------------------------------------- refinement

fn criterion_refinement() -> Check {
    let mut r = rng(505);
    let mut strict = 0usize;
    for _ in 0..REFINE_TRIPLES {
        let t: [f64; 4] = std::array::from_fn(|_| r.random_range(-2.0..2.0));
        let ts: [f64; 4] = std::array::from_fn(|_| r.random_range(-2.0..2.0));
        let pairs: [[f64; 2]; 4] = std::array::from_fn(|_| {
            let m = match r.random_range(0..10) {
                0 => 0.0,
                1 => 1.0,
                _ => r.random_range(0.0..1.0),
            };
            [m, 1.0 - m]
        });
        let p = SignProbs::new(pairs).map_err(|e| e.to_string())?;
        let out = refine(&BoxDeltas::from_array(t), &p).to_array();
        for k in 0..4 {
            let own = if t[k] > 0.0 { pairs[k][1] } else { pairs[k][0] };
            ensure(out[k] == t[k] * own, || {
                format!("refined {} != {} * {own}", out[k], t[k])
            })?;
            ensure(out[k].abs() <= t[k].abs(), || {
                format!("|{}| > |{}|", out[k], t[k])
            })?;
            let wrong = (t[k] > 0.0) != (ts[k] > 0.0);
            if wrong && t[k] != 0.0 && own < 1.0 {
                strict += 1;
                ensure((out[k] - ts[k]).abs() < (t[k] - ts[k]).abs(), || {
                    format!("no strict gain: t {} t* {} p {own}", t[k], ts[k])
                })?;
            }
        }
    }
    Ok(format!("{REFINE_TRIPLES} triples, shrinkage everywhere, {strict} wrong-sign dims strictly improved"))
}

// ------------------------------------------------------------------- codec

fn rand_box(r: &mut ChaCha8Rng) -> BBox {
    let x1 = r.random_range(-500.0..500.0);
    let y1 = r.random_range(-500.0..500.0);
    BBox::new(
        x1,
        y1,
        x1 + r.random_range(0.5..400.0),
        y1 + r.random_range(0.5..400.0),
    )
}

fn criterion_codec() -> Check {
    let mut r = rng(606);
    let mut worst: f64 = 0.0;
    for _ in 0..CODEC_PAIRS {
        let (roi, gt) = (rand_box(&mut r), rand_box(&mut r));
        let d = encode(&roi, &gt).map_err(|e| e.to_string())?;
        let (pw, ph) = (roi.x2 - roi.x1, roi.y2 - roi.y1);
        let own = [
            ((gt.x1 + gt.x2) / 2.0 - (roi.x1 + roi.x2) / 2.0) / pw,
            ((gt.y1 + gt.y2) / 2.0 - (roi.y1 + roi.y2) / 2.0) / ph,
            ((gt.x2 - gt.x1) / pw).ln(),
            ((gt.y2 - gt.y1) / ph).ln(),
        ];
        for (a, b) in d.to_array().iter().zip(own) {
            ensure((a - b).abs() <= CODEC_TOL * b.abs().max(1.0), || {
                format!("encode {a} vs {b}")
            })?;
        }
        let back = decode(&roi, &d).map_err(|e| e.to_string())?;
        for (a, b) in back.to_array().iter().zip(gt.to_array()) {
            let e = (a - b).abs() / b.abs().max(1.0);
            worst = worst.max(e);
            ensure(e <= CODEC_TOL, || format!("roundtrip {a} vs {b}"))?;
        }
        let (dx, dy, s) = (
            r.random_range(-300.0..300.0),
            r.random_range(-300.0..300.0),
            r.random_range(0.1..10.0),
        );
        let shifted =
            encode(&roi.translate(dx, dy), &gt.translate(dx, dy)).map_err(|e| e.to_string())?;
        let scaled = encode(&roi.scale(s), &gt.scale(s)).map_err(|e| e.to_string())?;
        for ((a, b), c) in d
            .to_array()
            .iter()
            .zip(shifted.to_array())
            .zip(scaled.to_array())
        {
            ensure((a - b).abs() <= CODEC_TOL * a.abs().max(1.0), || {
                format!("translation changed {a} to {b}")
            })?;
            ensure((a - c).abs() <= CODEC_TOL * a.abs().max(1.0), || {
                format!("scaling changed {a} to {c}")
            })?;
        }
    }
    Ok(format!(
        "{CODEC_PAIRS} pairs, worst roundtrip rel err {worst:.1e}, translation/scale invariant"
    ))
}

// --------------------------------------------------------------------- nms

fn int_iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Pick the best remaining box, drop everything overlapping it, repeat.
fn brute_nms(dets: &[Detection], thresh: f64) -> Vec<usize> {
    let mut alive: Vec<usize> = (0..dets.len()).collect();
    let mut keep = Vec::new();
    while !alive.is_empty() {
        let mut best = alive[0];
        for &i in &alive {
            if dets[i].score > dets[best].score {
                best = i;
            }
        }
        keep.push(best);
        alive.retain(|&i| i != best && int_iou(&dets[i].bbox, &dets[best].bbox) <= thresh);
    }
    keep
}

fn criterion_nms() -> Check {
    let mut r = rng(707);
    let threshes = [0.0, 0.3, 0.5, 0.7, 1.0];
    let mut suppressed = 0usize;
    for trial in 0..NMS_TRIALS {
        let n = trial % (NMS_MAX_SIZE + 1);
        let dets: Vec<Detection> = (0..n)
            .map(|_| {
                let b = int_box(&mut r, 30, 1);
                let score = r.random_range(0..10) as f64 / 10.0;
                Detection::new(to_bbox(b), score).unwrap()
            })
            .collect();
        let thresh = threshes[trial % threshes.len()];
        let got = nms_indices(&dets, thresh);
        let want = brute_nms(&dets, thresh);
        ensure(got == want, || {
            format!("trial {trial}: {got:?} vs oracle {want:?}")
        })?;
        suppressed += n - got.len();
        let once = nms(&dets, thresh);
        ensure(nms(&once, thresh) == once, || {
            format!("trial {trial}: not idempotent")
        })?;
    }
    Ok(format!("{NMS_TRIALS} trials of size 0..={NMS_MAX_SIZE} match the oracle ({suppressed} suppressions), idempotent"))
}

// --------------------------------------------------------------------- mr2

struct MiniImage {
    gts: Vec<GroundTruth>,
    dets: Vec<Detection>,
}

fn mini_dataset(r: &mut ChaCha8Rng) -> Vec<MiniImage> {
    (0..r.random_range(1..=6))
        .map(|_| {
            let gts: Vec<GroundTruth> = (0..r.random_range(0..=5))
                .map(|_| {
                    let h = r.random_range(30..150) as f64;
                    let w = (0.41 * h).round();
                    let x = r.random_range(0..400) as f64;
                    let y = r.random_range(0..100) as f64;
                    let full = BBox::new(x, y, x + w, y + h);
                    let keep = r.random_range(0.0..=1.0f64);
                    let vis = BBox::new(x, y, x + w, y + (keep * h).max(0.0));
                    GroundTruth::new(full, vis).unwrap()
                })
                .collect();
            let mut dets = Vec::new();
            for g in &gts {
                if r.random_bool(0.7) {
                    let f = g.full;
                    let (dx, dy) = (
                        r.random_range(-0.3..0.3) * f.width(),
                        r.random_range(-0.3..0.3) * f.height(),
                    );
                    dets.push(
                        Detection::new(f.translate(dx, dy), r.random_range(0..20) as f64 / 20.0)
                            .unwrap(),
                    );
                }
            }
            for _ in 0..r.random_range(0..=4) {
                let x = r.random_range(0.0..400.0);
                let y = r.random_range(0.0..100.0);
                let h = r.random_range(30.0..150.0);
                dets.push(
                    Detection::new(
                        BBox::new(x, y, x + 0.41 * h, y + h),
                        r.random_range(0..20) as f64 / 20.0,
                    )
                    .unwrap(),
                );
            }
            MiniImage { gts, dets }
        })
        .collect()
}

fn in_subset(g: &GroundTruth, s: &SubsetSpec) -> bool {
    let full = g.full.area();
    let occ = if full > 0.0 {
        1.0 - g.vis_area / full
    } else {
        1.0
    };
    let low_ok = if s.occ_low == 0.0 {
        occ >= 0.0
    } else {
        occ > s.occ_low
    };
    g.full.height() > s.min_height && low_ok && occ <= s.occ_high
}

/// (true positives, false positives) when only detections scoring at least
/// `tau` are kept.
fn count_at(data: &[MiniImage], s: &SubsetSpec, tau: f64) -> (usize, usize) {
    let (mut tp, mut fp) = (0, 0);
    for img in data {
        let mut kept: Vec<usize> = (0..img.dets.len())
            .filter(|&i| img.dets[i].score >= tau)
            .collect();
        kept.sort_by(|&a, &b| {
            img.dets[b]
                .score
                .partial_cmp(&img.dets[a].score)
                .unwrap()
                .then(a.cmp(&b))
        });
        let mut taken = vec![false; img.gts.len()];
        for d in kept {
            let mut best: Option<(usize, f64)> = None;
            let mut ignored = false;
            for (j, g) in img.gts.iter().enumerate() {
                let v = int_iou(&img.dets[d].bbox, &g.full);
                if v < MATCH_IOU {
                    continue;
                }
                if !in_subset(g, s) {
                    ignored = true;
                } else if !taken[j] && best.is_none_or(|(_, b)| v > b) {
                    best = Some((j, v));
                }
            }
            match best {
                Some((j, _)) => {
                    taken[j] = true;
                    tp += 1;
                }
                None if ignored => {}
                None => fp += 1,
            }
        }
    }
    (tp, fp)
}

fn enumerate_mr(data: &[MiniImage], s: &SubsetSpec) -> Option<f64> {
    let num_gt = data
        .iter()
        .flat_map(|i| &i.gts)
        .filter(|g| in_subset(g, s))
        .count();
    if num_gt == 0 {
        return None;
    }
    let mut taus: Vec<f64> = data
        .iter()
        .flat_map(|i| i.dets.iter().map(|d| d.score))
        .collect();
    taus.push(f64::INFINITY);
    let points: Vec<(f64, f64)> = taus
        .iter()
        .map(|&tau| {
            let (tp, fp) = count_at(data, s, tau);
            (
                fp as f64 / data.len() as f64,
                1.0 - tp as f64 / num_gt as f64,
            )
        })
        .collect();
    let samples: Vec<f64> = (0..9)
        .map(|i| {
            let reference = 10f64.powf(-2.0 + i as f64 / 4.0);
            points
                .iter()
                .filter(|p| p.0 <= reference)
                .map(|p| p.1)
                .fold(1.0, f64::min)
        })
        .collect();
    if samples.iter().all(|&m| m <= MR_FLOOR) {
        return Some(0.0);
    }
    Some((samples.iter().map(|m| m.max(MR_FLOOR).ln()).sum::<f64>() / 9.0).exp())
}

fn criterion_mr() -> Check {
    let mut r = rng(808);
    let subsets = SubsetSpec::standard();
    let mut compared = 0usize;
    let mut worst: f64 = 0.0;
    let mut k = 0;
    while compared < MR_DATASETS {
        if k == 4 * MR_DATASETS {
            return Err(format!("only {compared} of {k} datasets had ground truth"));
        }
        let data = mini_dataset(&mut r);
        let s = &subsets[k % subsets.len()];
        let matches: Vec<_> = data
            .iter()
            .map(|i| match_detections(&i.dets, &i.gts, s, MATCH_IOU))
            .collect();
        match (mr2(&matches), enumerate_mr(&data, s)) {
            (Ok(got), Some(want)) => {
                compared += 1;
                worst = worst.max((got.mr2 - want).abs());
                ensure((got.mr2 - want).abs() <= MR_TOL, || {
                    format!("dataset {k}: {} vs oracle {want}", got.mr2)
                })?;
            }
            (Err(visiou::Error::NoGroundTruth), None) => {}
            (got, want) => return Err(format!("dataset {k}: {got:?} vs oracle {want:?}")),
        }
        k += 1;
    }

    let scenes = generate(
        &SceneConfig {
            seed: 909,
            ..SceneConfig::default()
        },
        40,
    )
    .map_err(|e| e.to_string())?;
    let reasonable = SubsetSpec::reasonable();
    let perfect: Vec<DetectionSet> = scenes
        .iter()
        .map(|s| DetectionSet {
            image_id: s.image_id.clone(),
            dets: s
                .gts
                .iter()
                .filter(|g| reasonable.contains(g))
                .map(|g| Detection::new(g.full, 1.0).unwrap())
                .collect(),
        })
        .collect();
    let p = evaluate(
        &scenes,
        &perfect,
        &reasonable,
        MATCH_IOU,
        Default::default(),
    )
    .map_err(|e| e.to_string())?;
    ensure(p.mr2 == 0.0, || format!("perfect detector MR {}", p.mr2))?;
    let e = evaluate(&scenes, &[], &reasonable, MATCH_IOU, Default::default())
        .map_err(|e| e.to_string())?;
    ensure(e.mr2 == 1.0, || format!("empty detector MR {}", e.mr2))?;

    let (partial, bare, heavy) = (
        SubsetSpec::partial(),
        SubsetSpec::bare(),
        SubsetSpec::heavy(),
    );
    let mut gts: Vec<GroundTruth> = scenes.iter().flat_map(|s| s.gts.iter().copied()).collect();
    for occ in [0.0, 0.1, 0.35, 1.0] {
        let full = BBox::new(0.0, 0.0, 40.0, 100.0);
        gts.push(GroundTruth::new(full, BBox::new(0.0, 0.0, 40.0, 100.0 * (1.0 - occ))).unwrap());
    }
    for g in &gts {
        let (rs, ps, bs, hs) = (
            reasonable.contains(g),
            partial.contains(g),
            bare.contains(g),
            heavy.contains(g),
        );
        ensure(rs == (ps || bs) && !(ps && bs), || {
            format!("partition broken for {g:?}")
        })?;
        ensure(!(rs && hs), || {
            format!("heavy overlaps reasonable for {g:?}")
        })?;
    }
    Ok(format!(
        "{compared} datasets within {worst:.1e} of enumeration, perfect 0, empty 1, partition laws on {} gts",
        gts.len()
    ))
}

// ---------------------------------------------------------------- ablation

fn criterion_ablation() -> Check {
    let start = Instant::now();
    let scenes = generate(
        &SceneConfig {
            seed: ABLATION_SEED,
            ..SceneConfig::default()
        },
        ABLATION_SCENES,
    )
    .map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        seed: ABLATION_SEED,
        ..TrainConfig::default()
    };
    let rows = ablation(&scenes, &cfg).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    for row in &rows {
        println!(
            "      {:<24} loc_error {:.6}  sign_acc {:.4}  mr2 {:.4}",
            row.row, row.loc_error, row.sign_accuracy, row.mr2
        );
    }
    let get = |name: &str| -> Result<&AblationRow, String> {
        rows.iter()
            .find(|r| r.row == name)
            .ok_or(format!("missing row {name}"))
    };
    let base = get("baseline")?.loc_error;
    let sign = get("+sign loss")?.loc_error;
    let refined = get("+sign loss & refining")?.loc_error;
    ensure(refined < base, || {
        format!("refined {refined} not below baseline {base}")
    })?;
    for name in ["sigma=3", "sigma=5", "eta=2", "eta=3"] {
        let v = get(name)?.loc_error;
        ensure(v >= sign, || {
            format!("{name} ({v}) beats +sign loss ({sign})")
        })?;
    }
    ensure(
        rows.iter()
            .all(|r| r.loc_error.is_finite() && r.mr2.is_finite()),
        || "non-finite row".into(),
    )?;
    for (name, want) in ABLATION_BASELINES {
        let got = get(name)?.loc_error;
        ensure((got - want).abs() <= BASELINE_REL_TOL * want.abs(), || {
            format!("{name}: loc_error {got} drifted from recorded {want}")
        })?;
    }
    ensure(took < ABLATION_BUDGET, || format!("took {took:?}"))?;
    Ok(format!(
        "refined {refined:.5} < baseline {base:.5}, inflated rows >= +sign {sign:.5}, {:.1} s",
        took.as_secs_f64()
    ))
}

// ------------------------------------------------------------- determinism

fn visiou(args: &[&str], dir: &Path) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_visiou"))
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "`visiou {}` failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(out.stdout)
}

/// Runs the whole pipeline in `dir` and returns every byte it produced.
fn pipeline(dir: &Path, extra: &[&str]) -> Result<Vec<(String, Vec<u8>)>, String> {
    let steps: [&[&str]; 9] = [
        &[
            "gen", "--seed", "7", "--scenes", "30", "--out", "s.jsonl", "--dets", "d.jsonl",
        ],
        &[
            "assign",
            "--scenes",
            "s.jsonl",
            "--decay",
            "sigmoid:8,0.5",
            "--out",
            "dist.csv",
        ],
        &["check-grad", "--seed", "1", "--instances", "50"],
        &[
            "train-toy",
            "--scenes",
            "s.jsonl",
            "--epochs",
            "60",
            "--seed",
            "3",
            "--report",
            "report.json",
        ],
        &[
            "ablate",
            "--scenes",
            "s.jsonl",
            "--epochs",
            "30",
            "--seed",
            "3",
            "--out",
            "ablation.csv",
        ],
        &["nms", "--dets", "d.jsonl", "--out", "n.jsonl"],
        &[
            "eval", "--dets", "n.jsonl", "--gts", "s.jsonl", "--subset", "all",
        ],
        &["refine", "--input", "r.jsonl", "--out", "refined.jsonl"],
        &["nms", "--dets", "d.jsonl"],
    ];
    std::fs::write(
        dir.join("r.jsonl"),
        "{\"id\":1,\"deltas\":[-0.3,0.2,0,0.1],\"sign_probs\":[[0.9,0.1],[0.2,0.8],[0.5,0.5],[0.4,0.6]]}\n\
         {\"deltas\":[0.5,-0.5,0.25,-1],\"sign_probs\":[[0.7,0.3],[0.1,0.9],[1,0],[0,1]]}\n",
    )
    .map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for step in steps {
        let args: Vec<&str> = extra.iter().chain(step).copied().collect();
        outputs.push((format!("stdout of {}", step[0]), visiou(&args, dir)?));
    }
    for f in [
        "s.jsonl",
        "d.jsonl",
        "dist.csv",
        "report.json",
        "ablation.csv",
        "n.jsonl",
        "refined.jsonl",
    ] {
        outputs.push((
            f.to_string(),
            std::fs::read(dir.join(f)).map_err(|e| e.to_string())?,
        ));
    }
    Ok(outputs)
}

fn criterion_determinism() -> Check {
    let dirs: Vec<tempfile::TempDir> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    let first = pipeline(dirs[0].path(), &[])?;
    let second = pipeline(dirs[1].path(), &[])?;
    let sequential = pipeline(dirs[2].path(), &["--sequential"])?;
    for ((a, b), c) in first.iter().zip(&second).zip(&sequential) {
        ensure(a.1 == b.1, || format!("{} differs between runs", a.0))?;
        ensure(a.1 == c.1, || {
            format!("{} differs between parallel and sequential", a.0)
        })?;
    }
    let bytes: usize = first.iter().map(|o| o.1.len()).sum();
    Ok(format!(
        "8 subcommands, {} outputs ({bytes} bytes) identical across 3 runs incl. --sequential",
        first.len()
    ))
}

type Criterion = (&'static str, fn() -> Check);

fn main() {
    let criteria: [Criterion; 10] = [
        ("geometry oracle", criterion_geometry),
        ("decay suite", criterion_decay),
        ("assignment subset law", criterion_assignment),
        ("gradient checks", criterion_gradients),
        ("refinement laws", criterion_refinement),
        ("codec roundtrip", criterion_codec),
        ("nms oracle", criterion_nms),
        ("mr2 evaluator", criterion_mr),
        ("toy ablation", criterion_ablation),
        ("cli determinism", criterion_determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
