//! `visiou` command-line tool.
//!
//! Exit status: 0 on success, 1 on a usage error (bad flags, missing input
//! files, unwritable output locations), 2 when the input data is rejected.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use visiou::Exec;

mod commands;

#[derive(Parser, Debug)]
#[command(
    name = "visiou",
    version,
    about = "Occlusion-aware pedestrian detection toolkit"
)]
struct Cli {
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic crowded scenes (and optionally simulated detections).
    Gen(GenArgs),
    /// Label RoIs by visible IoU and dump the positive-sample distribution.
    Assign(AssignArgs),
    /// Compare analytic loss gradients with finite differences.
    CheckGrad(CheckGradArgs),
    /// Train the toy detector head and write a JSON report.
    TrainToy(TrainArgs),
    /// Run the box-loss / sign-loss ablation and emit a CSV table.
    Ablate(AblateArgs),
    /// Greedy non-maximum suppression of detection sets.
    Nms(NmsArgs),
    /// Log-average miss rate of detections against ground truth.
    Eval(EvalArgs),
    /// Scale deltas by the predicted probability of their direction.
    Refine(RefineArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    scenes: usize,
    #[arg(long)]
    out: PathBuf,
    /// Also write simulated detections for every scene here.
    #[arg(long)]
    dets: Option<PathBuf>,
    /// Probability that a pedestrian is placed overlapping an earlier one.
    #[arg(long)]
    overlap: Option<f64>,
}

#[derive(Args, Debug)]
struct AssignArgs {
    #[arg(long)]
    scenes: PathBuf,
    #[arg(long, default_value = "sigmoid:8,0.5")]
    decay: String,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// CSV of `vis_ratio,iou_ori,kept_decay,kept_baseline` per matched RoI.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CheckGradArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    instances: usize,
}

#[derive(Args, Debug, Clone)]
struct TrainOpts {
    #[arg(long)]
    scenes: PathBuf,
    #[arg(long, default_value = "sigmoid:8,0.5")]
    decay: String,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, default_value_t = 1500)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fixed step size (default: derived from the training data).
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    opts: TrainOpts,
    #[arg(long, default_value_t = 0.1)]
    gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 1.0)]
    eta: f64,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    opts: TrainOpts,
    #[arg(long, default_value_t = 0.1)]
    gamma: f64,
    /// Output CSV (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct NmsArgs {
    #[arg(long)]
    dets: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    thresh: f64,
    /// Output JSONL (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SubsetArg {
    Reasonable,
    Partial,
    Bare,
    Heavy,
    All,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    dets: PathBuf,
    #[arg(long)]
    gts: PathBuf,
    #[arg(long, value_enum, default_value_t = SubsetArg::All)]
    subset: SubsetArg,
    #[arg(long, default_value_t = 0.5)]
    match_iou: f64,
}

#[derive(Args, Debug)]
struct RefineArgs {
    /// JSONL of `{"id"?, "deltas": [4], "sign_probs": [[2] x 4]}`.
    #[arg(long)]
    input: PathBuf,
    /// Output JSONL (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure that maps to an exit status.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

impl From<visiou::Error> for Failure {
    fn from(e: visiou::Error) -> Self {
        Failure::Data(e.into())
    }
}

type CmdResult = Result<(), Failure>;

fn input(path: &Path) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Usage(format!(
            "input file {} does not exist",
            path.display()
        )))
    }
}

fn output(path: &Path) -> Result<(), Failure> {
    if path.is_dir() {
        return Err(Failure::Usage(format!(
            "output {} is a directory",
            path.display()
        )));
    }
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => Err(Failure::Usage(format!(
            "output directory {} does not exist",
            dir.display()
        ))),
        _ => Ok(()),
    }
}

fn check_paths(cmd: &Command) -> Result<(), Failure> {
    match cmd {
        Command::Gen(a) => {
            output(&a.out)?;
            a.dets.as_deref().map(output).transpose()?;
        }
        Command::Assign(a) => {
            input(&a.scenes)?;
            a.out.as_deref().map(output).transpose()?;
        }
        Command::CheckGrad(_) => {}
        Command::TrainToy(a) => {
            input(&a.opts.scenes)?;
            output(&a.report)?;
        }
        Command::Ablate(a) => {
            input(&a.opts.scenes)?;
            a.out.as_deref().map(output).transpose()?;
        }
        Command::Nms(a) => {
            input(&a.dets)?;
            a.out.as_deref().map(output).transpose()?;
        }
        Command::Eval(a) => {
            input(&a.dets)?;
            input(&a.gts)?;
        }
        Command::Refine(a) => {
            input(&a.input)?;
            a.out.as_deref().map(output).transpose()?;
        }
    }
    Ok(())
}

fn run(cli: Cli) -> CmdResult {
    check_paths(&cli.command)?;
    let exec = if cli.sequential {
        Exec::Sequential
    } else {
        Exec::Parallel
    };
    match cli.command {
        Command::Gen(a) => commands::gen(a, exec),
        Command::Assign(a) => commands::assign(a, exec),
        Command::CheckGrad(a) => commands::check_grad(a),
        Command::TrainToy(a) => commands::train_toy(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Nms(a) => commands::nms(a, exec),
        Command::Eval(a) => commands::eval(a, exec),
        Command::Refine(a) => commands::refine(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
