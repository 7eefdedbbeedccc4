use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use visiou::assignment::{
    assign_scenes, count_positives, distribution_dump, write_distribution_csv,
};
use visiou::evalmr::{evaluate, SubsetSpec};
use visiou::io::{read_jsonl_file, write_jsonl, write_jsonl_file};
use visiou::losses::refine as refine_deltas;
use visiou::nms::nms_batch;
use visiou::synth::{generate_with, simulate_all, SimConfig};
use visiou::trainer::{ablation, train, write_ablation_csv, TrainConfig, TrainReport};
use visiou::{
    AssignmentConfig, BoxDeltas, DecaySpec, Detection, DetectionSet, Exec, LossConfig, Scene,
    SceneConfig, SignProbs,
};

use crate::{
    AblateArgs, AssignArgs, CheckGradArgs, CmdResult, EvalArgs, Failure, GenArgs, NmsArgs,
    RefineArgs, SubsetArg, TrainArgs, TrainOpts,
};

const GRAD_TOLERANCE: f64 = 1e-5;

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn read<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, Failure> {
    read_jsonl_file(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::Data)
}

/// Writes to `path`, or to stdout when absent.
fn sink(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn assignment_config(decay: &str, threshold: f64) -> Result<AssignmentConfig, Failure> {
    let decay: DecaySpec = decay.parse().map_err(usage)?;
    AssignmentConfig::new(decay, threshold).map_err(usage)
}

fn train_config(opts: &TrainOpts, loss: LossConfig) -> Result<TrainConfig, Failure> {
    let cfg = TrainConfig {
        loss,
        assign: assignment_config(&opts.decay, opts.threshold)?,
        lr: opts.lr,
        epochs: opts.epochs,
        seed: opts.seed,
        ..TrainConfig::default()
    };
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

pub fn gen(a: GenArgs, exec: Exec) -> CmdResult {
    let mut cfg = SceneConfig {
        seed: a.seed,
        ..SceneConfig::default()
    };
    if let Some(p) = a.overlap {
        cfg.overlap_intensity = p;
    }
    cfg.validate().map_err(usage)?;
    let scenes = generate_with(&cfg, a.scenes, exec)?;
    write_jsonl_file(&scenes, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    let gts: usize = scenes.iter().map(|s| s.gts.len()).sum();
    let rois: usize = scenes.iter().map(|s| s.rois.len()).sum();
    println!("scenes {} gts {gts} rois {rois}", scenes.len());
    if let Some(path) = a.dets {
        let sim = SimConfig {
            seed: a.seed,
            ..SimConfig::default()
        };
        let dets = simulate_all(&scenes, &sim, exec);
        write_jsonl_file(&dets, &path).with_context(|| format!("writing {}", path.display()))?;
        let n: usize = dets.iter().map(|d| d.dets.len()).sum();
        println!("detections {n}");
    }
    Ok(())
}

pub fn assign(a: AssignArgs, exec: Exec) -> CmdResult {
    let cfg = assignment_config(&a.decay, a.threshold)?;
    let scenes: Vec<Scene> = read(&a.scenes)?;
    let decayed = assign_scenes(&scenes, &cfg, exec);
    let baseline = assign_scenes(&scenes, &cfg.baseline(), exec);
    let rois: usize = decayed.iter().map(Vec::len).sum();
    let pos: usize = decayed.iter().map(|r| count_positives(r)).sum();
    let pos_base: usize = baseline.iter().map(|r| count_positives(r)).sum();
    println!("decay {} threshold {}", cfg.decay, cfg.threshold);
    println!("rois {rois}");
    println!("positives {pos}");
    println!("positives_baseline {pos_base}");
    println!("discarded {}", pos_base - pos);
    if let Some(path) = a.out {
        let rows = decayed
            .iter()
            .zip(&baseline)
            .map(|(d, b)| distribution_dump(d, b))
            .collect::<visiou::Result<Vec<_>>>()?
            .concat();
        write_distribution_csv(&rows, sink(Some(&path))?)?;
    }
    Ok(())
}

pub fn check_grad(a: CheckGradArgs) -> CmdResult {
    if a.instances == 0 {
        return Err(usage("--instances must be at least 1"));
    }
    let r = visiou::gradcheck::run(a.seed, a.instances)?;
    println!("instances {}", r.instances);
    println!("cls  max_rel_err {:.3e}", r.cls_max_rel_err);
    println!("box  max_rel_err {:.3e}", r.box_max_rel_err);
    println!("sign max_rel_err {:.3e}", r.sign_max_rel_err);
    if r.max() < GRAD_TOLERANCE {
        println!("ok (tolerance {GRAD_TOLERANCE:e})");
        Ok(())
    } else {
        Err(Failure::Data(anyhow::anyhow!(
            "gradient check failed: {:e} >= {GRAD_TOLERANCE:e}",
            r.max()
        )))
    }
}

#[derive(Serialize)]
struct TrainOutput<'a> {
    config: &'a TrainConfig,
    report: &'a TrainReport,
}

pub fn train_toy(a: TrainArgs) -> CmdResult {
    let loss = LossConfig::new(a.gamma, a.sigma, a.eta).map_err(usage)?;
    let cfg = train_config(&a.opts, loss)?;
    let scenes: Vec<Scene> = read(&a.opts.scenes)?;
    let report = train(&scenes, &cfg)?;
    let mut w = sink(Some(&a.report))?;
    serde_json::to_writer_pretty(
        &mut w,
        &TrainOutput {
            config: &cfg,
            report: &report,
        },
    )
    .context("writing report")?;
    writeln!(w).context("writing report")?;
    w.flush().context("writing report")?;
    let last = report.final_loss();
    println!("lr {:.6} epochs {}", report.lr, report.epochs.len());
    println!(
        "final loss total {:.6} cls {:.6} box {:.6} sign {:.6}",
        last.total, last.cls, last.box_, last.sign
    );
    println!(
        "heldout positives {} loc_error {:.6} refined {:.6} sign_accuracy {:.4}",
        report.heldout_positives, report.loc_error, report.loc_error_refined, report.sign_accuracy
    );
    Ok(())
}

pub fn ablate(a: AblateArgs) -> CmdResult {
    let loss = LossConfig::new(a.gamma, 1.0, 1.0).map_err(usage)?;
    let cfg = train_config(&a.opts, loss)?;
    let scenes: Vec<Scene> = read(&a.opts.scenes)?;
    let rows = ablation(&scenes, &cfg)?;
    write_ablation_csv(&rows, sink(a.out.as_deref())?)?;
    Ok(())
}

pub fn nms(a: NmsArgs, exec: Exec) -> CmdResult {
    if !(0.0..=1.0).contains(&a.thresh) {
        return Err(usage(format!("--thresh {} outside [0, 1]", a.thresh)));
    }
    let sets: Vec<DetectionSet> = read(&a.dets)?;
    let mut by_id: BTreeMap<String, Vec<Detection>> = BTreeMap::new();
    for s in sets {
        by_id.entry(s.image_id).or_default().extend(s.dets);
    }
    let (ids, images): (Vec<String>, Vec<Vec<Detection>>) = by_id.into_iter().unzip();
    let kept = nms_batch(&images, a.thresh, exec);
    let out: Vec<DetectionSet> = ids
        .into_iter()
        .zip(kept)
        .map(|(image_id, dets)| DetectionSet { image_id, dets })
        .collect();
    write_jsonl(&out, sink(a.out.as_deref())?)?;
    Ok(())
}

pub fn eval(a: EvalArgs, exec: Exec) -> CmdResult {
    if !(a.match_iou > 0.0 && a.match_iou <= 1.0) {
        return Err(usage(format!("--match-iou {} outside (0, 1]", a.match_iou)));
    }
    let subsets: Vec<SubsetSpec> = match a.subset {
        SubsetArg::Reasonable => vec![SubsetSpec::reasonable()],
        SubsetArg::Partial => vec![SubsetSpec::partial()],
        SubsetArg::Bare => vec![SubsetSpec::bare()],
        SubsetArg::Heavy => vec![SubsetSpec::heavy()],
        SubsetArg::All => SubsetSpec::standard().to_vec(),
    };
    let mut scenes: Vec<Scene> = read(&a.gts)?;
    scenes.sort_by(|x, y| x.image_id.cmp(&y.image_id));
    let dets: Vec<DetectionSet> = read(&a.dets)?;
    let mut out = io::stdout().lock();
    let w = &mut out;
    let line = |w: &mut io::StdoutLock, s: String| writeln!(w, "{s}").context("writing table");
    line(
        w,
        format!(
            "{:<12} {:>8} {:>7} {:>8} {:>7} {:>7}",
            "subset", "MR-2(%)", "gt", "dets", "tp", "fp"
        ),
    )?;
    for subset in subsets {
        match evaluate(&scenes, &dets, &subset, a.match_iou, exec) {
            Ok(r) => line(
                w,
                format!(
                    "{:<12} {:>8.2} {:>7} {:>8} {:>7} {:>7}",
                    subset.name,
                    100.0 * r.mr2,
                    r.counts.num_gt,
                    r.counts.num_det,
                    r.counts.num_tp,
                    r.counts.num_fp
                ),
            )?,
            Err(visiou::Error::NoGroundTruth) => line(
                w,
                format!(
                    "{:<12} {:>8} {:>7} {:>8} {:>7} {:>7}",
                    subset.name, "-", 0, "-", "-", "-"
                ),
            )?,
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RefineIn {
    #[serde(default)]
    id: Option<serde_json::Value>,
    deltas: BoxDeltas,
    sign_probs: SignProbs,
}

#[derive(Serialize)]
struct RefineOut {
    #[serde(skip_serializing_if = "Option::is_none")]
    id: Option<serde_json::Value>,
    deltas: BoxDeltas,
}

pub fn refine(a: RefineArgs) -> CmdResult {
    let items: Vec<RefineIn> = read(&a.input)?;
    let mut out = Vec::with_capacity(items.len());
    for (i, it) in items.into_iter().enumerate() {
        if !it.deltas.is_finite() {
            return Err(Failure::Data(anyhow::anyhow!(
                "record {}: non-finite deltas",
                i + 1
            )));
        }
        out.push(RefineOut {
            id: it.id,
            deltas: refine_deltas(&it.deltas, &it.sign_probs),
        });
    }
    write_jsonl(&out, sink(a.out.as_deref())?)?;
    Ok(())
}
