//! Command-line front end.
//!
//! Machine-readable results always go to files; stdout carries a config
//! echo line followed by a short human summary. Exit codes are a stable
//! contract for scripting:
//!
//! - 0 success
//! - 2 usage, config, or file-format problems
//! - 3 shape mismatch between tensors
//! - 4 numeric divergence during training
//! - 5 gradient verification failure

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::adapter::{AdapterConfig, Direction};
use crate::error::{Error, Result};
use crate::gradcheck;
use crate::io;
use crate::linalg::DenseMatrix;
use crate::spectral::{compare_spectra_named, SpectralReport};
use crate::train::{
    self, gen_planted_task, run_ablation, GridValue, SweepKind, SweepRow, TaskSpec, TrainConfig,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_SHAPE: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;
pub const EXIT_VERIFY: i32 = 5;

#[derive(Debug, Parser)]
#[command(
    name = "speclora",
    version,
    about = "Spectral weight analysis and spectrally-directed low-rank adapters"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compare the singular spectra of two weight containers.
    Analyze(AnalyzeArgs),
    /// Generate a planted regression task.
    GenTask(GenTaskArgs),
    /// Train an adapter on a generated task.
    Train(TrainArgs),
    /// Sweep k, rank, or direction over a grid of seeded runs.
    Sweep(SweepArgs),
    /// Verify analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// Container directory with the pre-trained weights.
    #[arg(long)]
    pre: PathBuf,
    /// Container directory with the fine-tuned weights.
    #[arg(long)]
    ft: PathBuf,
    /// Output file for the reports.
    #[arg(long)]
    out: PathBuf,
    /// Output format.
    #[arg(long, value_parser = ["json", "csv"], default_value = "json")]
    format: String,
    /// Glob over tensor names (e.g. "layer.0.*").
    #[arg(long = "match")]
    match_glob: Option<String>,
}

#[derive(Debug, Args)]
struct GenTaskArgs {
    /// Task spec JSON file.
    #[arg(long)]
    spec: PathBuf,
    /// Output directory for the task bundle.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Task directory produced by gen-task.
    #[arg(long)]
    task: PathBuf,
    /// Adapter config JSON file.
    #[arg(long)]
    adapter: PathBuf,
    /// Train config JSON file.
    #[arg(long)]
    train: PathBuf,
    /// Output directory for checkpoint and results.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Which hyper-parameter the grid varies.
    #[arg(long, value_parser = ["k", "rank", "direction"])]
    kind: String,
    /// Comma-separated grid values (counts, or top/bottom).
    #[arg(long)]
    grid: String,
    /// Number of seeded repeats per grid point.
    #[arg(long)]
    seeds: u64,
    /// First seed; repeats use consecutive seeds.
    #[arg(long, default_value_t = 0)]
    seed_base: u64,
    /// Task spec JSON template (the per-run seed is substituted).
    #[arg(long)]
    spec: PathBuf,
    /// Adapter config JSON file.
    #[arg(long)]
    adapter: PathBuf,
    /// Train config JSON file.
    #[arg(long)]
    train: PathBuf,
    /// Output directory for results.csv / results.json.
    #[arg(long)]
    out: PathBuf,
    /// Parallel grid runs (1 keeps logs bitwise stable).
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of randomized cases (cycling variants and directions).
    #[arg(long, default_value_t = 80)]
    cases: usize,
    /// Corrupt one analytic gradient per case (negative control).
    #[arg(long, hide = true)]
    inject_fault: bool,
}

/// Entry point for the binary: parse `std::env::args`, run, and return
/// the process exit code.
pub fn main_from_env() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = err.print();
            return code;
        }
    };
    run(cli)
}

fn run(cli: Cli) -> i32 {
    let outcome = match cli.command {
        Command::Analyze(args) => analyze(&args),
        Command::GenTask(args) => gen_task(&args),
        Command::Train(args) => train_cmd(&args),
        Command::Sweep(args) => sweep(&args),
        Command::Gradcheck(args) => gradcheck_cmd(&args),
    };
    match outcome {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code_for(&err)
        }
    }
}

fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Dimension(_) => EXIT_SHAPE,
        Error::Numeric(_) => EXIT_DIVERGED,
        _ => EXIT_USAGE,
    }
}

fn echo_config<T: serde::Serialize>(value: &T) {
    match serde_json::to_string(value) {
        Ok(json) => println!("config {json}"),
        Err(_) => println!("config <unserializable>"),
    }
}

fn analyze(args: &AnalyzeArgs) -> Result<i32> {
    echo_config(&serde_json::json!({
        "subcommand": "analyze",
        "pre": args.pre,
        "ft": args.ft,
        "out": args.out,
        "format": args.format,
        "match": args.match_glob,
    }));

    let pre = io::load_container(&args.pre)?;
    let ft = io::load_container(&args.ft)?;
    let pattern = args
        .match_glob
        .as_deref()
        .map(glob::Pattern::new)
        .transpose()
        .map_err(|e| Error::config(format!("invalid --match glob: {e}")))?;

    let mut names: Vec<&str> = pre
        .names()
        .filter(|name| ft.get(name).is_some())
        .filter(|name| pattern.as_ref().is_none_or(|p| p.matches(name)))
        .collect();
    names.sort_unstable();
    if names.is_empty() {
        return Err(Error::config(
            "no tensor names are shared by both containers under the given --match",
        ));
    }

    let mut reports = Vec::with_capacity(names.len());
    for name in &names {
        let w_pre = pre.get(name).expect("name comes from pre");
        let w_ft = ft.get(name).expect("name filtered on ft");
        if w_pre.rows() != w_ft.rows() || w_pre.cols() != w_ft.cols() {
            return Err(Error::dimension(format!(
                "tensor {name}: pre is {}x{} but ft is {}x{}",
                w_pre.rows(),
                w_pre.cols(),
                w_ft.rows(),
                w_ft.cols()
            )));
        }
        reports.push(compare_spectra_named(name, w_pre, w_ft)?);
    }

    match args.format.as_str() {
        "json" => io::write_json(&args.out, &reports)?,
        "csv" => write_reports_csv(&args.out, &reports)?,
        other => return Err(Error::config(format!("unknown format {other}"))),
    }
    println!("analyzed {} tensor pairs -> {}", reports.len(), args.out.display());
    Ok(EXIT_OK)
}

fn write_reports_csv(path: &Path, reports: &[SpectralReport]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(SpectralReport::CSV_HEADER)?;
    for report in reports {
        for row in report.csv_rows() {
            writer.write_record(&row)?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Name given to the single planted weight inside task containers.
const TASK_TENSOR_NAME: &str = "layer.0.q";

fn gen_task(args: &GenTaskArgs) -> Result<i32> {
    let spec: TaskSpec = io::read_json(&args.spec)?;
    spec.validate()?;
    echo_config(&serde_json::json!({ "subcommand": "gen-task", "spec": spec, "out": args.out }));

    let task = gen_planted_task(&spec)?;
    std::fs::create_dir_all(&args.out)?;
    io::write_json(&args.out.join("task.json"), &spec)?;

    let mut base = io::WeightContainer::new();
    base.insert(TASK_TENSOR_NAME, task.w_base.clone())?;
    io::save_container(&args.out.join("base"), &base)?;

    let mut teacher = io::WeightContainer::new();
    teacher.insert(TASK_TENSOR_NAME, task.w_teacher.clone())?;
    io::save_container(&args.out.join("teacher"), &teacher)?;

    io::write_tensor(&args.out.join("x.bin"), &task.x, io::Dtype::F64)?;
    io::write_tensor(&args.out.join("y.bin"), &task.y, io::Dtype::F64)?;
    println!(
        "planted task ({}x{} teacher, {} samples) -> {}",
        spec.n,
        spec.m,
        spec.num_samples,
        args.out.display()
    );
    Ok(EXIT_OK)
}

/// Load the pieces of a task directory: (base weight, tensor name, x, y).
fn load_task_dir(dir: &Path) -> Result<(DenseMatrix, String, DenseMatrix, DenseMatrix)> {
    let base = io::load_container(&dir.join("base"))?;
    let mut names: Vec<&str> = base.names().collect();
    names.sort_unstable();
    let name = names
        .first()
        .ok_or_else(|| Error::Data("task base container is empty".to_string()))?
        .to_string();
    let w_base = base.get(&name).expect("name listed").clone();
    let x = io::read_tensor(&dir.join("x.bin"))?;
    let y = io::read_tensor(&dir.join("y.bin"))?;
    Ok((w_base, name, x, y))
}

fn train_cmd(args: &TrainArgs) -> Result<i32> {
    let acfg: AdapterConfig = io::read_json(&args.adapter)?;
    let tcfg: TrainConfig = io::read_json(&args.train)?;
    echo_config(&serde_json::json!({
        "subcommand": "train",
        "task": args.task,
        "adapter": acfg,
        "train": tcfg,
        "out": args.out,
    }));

    let (w_base, tensor_name, x, y) = load_task_dir(&args.task)?;
    let (adapter, result) = train::train_adapter(&w_base, &x, &y, &acfg, &tcfg)?;

    std::fs::create_dir_all(&args.out)?;
    io::write_json(&args.out.join("run.json"), &result)?;
    let mut writer = csv::Writer::from_path(args.out.join("loss_curve.csv"))?;
    writer.write_record(["epoch", "train_loss"])?;
    for (epoch, loss) in result.loss_curve.iter().enumerate() {
        writer.write_record(&[epoch.to_string(), loss.to_string()])?;
    }
    writer.flush()?;
    io::save_adapter(&args.out.join("adapter"), &adapter, &tensor_name)?;

    println!(
        "trained {} params, final train loss {:.6e}, eval loss {:.6e} -> {}",
        result.trainable_params,
        result.final_train_loss,
        result.final_eval_loss,
        args.out.display()
    );
    Ok(EXIT_OK)
}

fn sweep(args: &SweepArgs) -> Result<i32> {
    let kind = match args.kind.as_str() {
        "k" => SweepKind::K,
        "rank" => SweepKind::Rank,
        "direction" => SweepKind::Direction,
        other => return Err(Error::config(format!("unknown sweep kind {other}"))),
    };
    if args.seeds == 0 {
        return Err(Error::config("--seeds must be >= 1"));
    }
    let grid = parse_grid(kind, &args.grid)?;
    let task_spec: TaskSpec = io::read_json(&args.spec)?;
    let acfg: AdapterConfig = io::read_json(&args.adapter)?;
    let tcfg: TrainConfig = io::read_json(&args.train)?;
    echo_config(&serde_json::json!({
        "subcommand": "sweep",
        "kind": args.kind,
        "grid": args.grid,
        "seeds": args.seeds,
        "seed_base": args.seed_base,
        "spec": task_spec,
        "adapter": acfg,
        "train": tcfg,
        "out": args.out,
        "jobs": args.jobs,
    }));

    let seeds: Vec<u64> = (0..args.seeds).map(|i| args.seed_base + i).collect();
    let rows = run_ablation(kind, &grid, &task_spec, &acfg, &tcfg, &seeds, args.jobs)?;

    std::fs::create_dir_all(&args.out)?;
    write_sweep_csv(&args.out.join("results.csv"), &rows)?;
    io::write_json(&args.out.join("results.json"), &rows)?;
    println!(
        "swept {} over {} grid points x {} seeds -> {}",
        args.kind,
        grid.len(),
        seeds.len(),
        args.out.display()
    );
    Ok(EXIT_OK)
}

fn parse_grid(kind: SweepKind, raw: &str) -> Result<Vec<GridValue>> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| match kind {
            SweepKind::Direction => match item {
                "top" => Ok(GridValue::Direction(Direction::Top)),
                "bottom" => Ok(GridValue::Direction(Direction::Bottom)),
                other => Err(Error::config(format!(
                    "direction grid accepts top|bottom, got {other}"
                ))),
            },
            SweepKind::K | SweepKind::Rank => item
                .parse::<usize>()
                .map(GridValue::Count)
                .map_err(|_| Error::config(format!("grid value {item} is not a count"))),
        })
        .collect()
}

fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(SweepRow::CSV_HEADER)?;
    for row in rows {
        writer.write_record(row.csv_record())?;
    }
    writer.flush()?;
    Ok(())
}

fn gradcheck_cmd(args: &GradcheckArgs) -> Result<i32> {
    if args.cases == 0 {
        return Err(Error::config("--cases must be >= 1"));
    }
    echo_config(&serde_json::json!({
        "subcommand": "gradcheck",
        "seed": args.seed,
        "cases": args.cases,
    }));
    let report = if args.inject_fault {
        gradcheck::run_faulted(args.seed, args.cases)?
    } else {
        gradcheck::run(args.seed, args.cases)?
    };
    println!(
        "gradcheck: max relative error {:.3e} over {} cases ({} components)",
        report.max_rel_err, report.cases, report.components_checked
    );
    if report.passed() {
        println!("gradcheck: PASS (tolerance {:.0e})", gradcheck::GRAD_TOL);
        Ok(EXIT_OK)
    } else {
        println!("gradcheck: FAIL (tolerance {:.0e})", gradcheck::GRAD_TOL);
        Ok(EXIT_VERIFY)
    }
}
