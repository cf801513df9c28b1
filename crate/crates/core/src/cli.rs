//! The `isoprior` command line.
//!
//! Exit codes: 0 success, 1 I/O or parse error, 2 invalid flags, 3 when
//! `ratio --assert-admissible` finds an inadmissible mask. Every failure is
//! reported on the diagnostic stream as a single line starting with
//! `error:`.

use std::io::Write;
use std::num::NonZeroU16;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::exec::Execution;
use crate::fmt::{json_string, real, sci};
use crate::geometry::{self, region_report, PenaltyConfig};
use crate::metrics::{self, evaluate, evaluate_manifest, parse_manifest, MetricsError};
use crate::raster::{read_pgm, write_mask_pgm, write_pgm, BinaryMask, PredictionField, Threshold};
use crate::relax::{check_gradient, objective_by_name, random_case, SoftConfig, SoftFill, OBJECTIVE_NAMES};
use crate::repair::{
    accepted_loss_monotone, repair, BrokenRingCase, LossWeights, RepairProblem, DEFAULT_STEPS, DEFAULT_STEP_SIZE,
    REPAIR_BETA, REPAIR_EPS,
};
use crate::synth::{rasterize, ShapeSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INADMISSIBLE: i32 = 3;

/// Fields are written with 16-bit samples so soft values survive a round trip.
const FIELD_MAXVAL: NonZeroU16 = match NonZeroU16::new(u16::MAX) {
    Some(v) => v,
    None => unreachable!(),
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Input(String),
    #[error("mask is inadmissible: mu {mu} <= tau {tau}")]
    Inadmissible { mu: String, tau: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Io { .. } | CliError::Input(_) => EXIT_IO,
            CliError::Inadmissible { .. } => EXIT_INADMISSIBLE,
        }
    }
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn input(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "isoprior", version, about = "Isoperimetric compactness prior for binary masks")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Admissibility threshold on mu.
    #[arg(long, global = true, default_value_t = geometry::DEFAULT_TAU)]
    pub tau: f64,
    /// Binarization threshold for soft inputs.
    #[arg(long, global = true, default_value_t = 0.5)]
    pub lambda: f64,
    #[arg(long, global = true, value_enum, default_value_t = ModeArg::Filled)]
    pub mode: ModeArg,
    #[arg(long, global = true, value_enum, default_value_t = EstimatorArg::Crofton)]
    pub estimator: EstimatorArg,
    #[arg(long, global = true, value_enum, default_value_t = AggregateArg::Mean)]
    pub aggregate: AggregateArg,
    /// Output path (a file prefix for `repair`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Emit JSON (the default).
    #[arg(long, global = true, conflicts_with = "csv")]
    pub json: bool,
    /// Emit CSV instead of JSON.
    #[arg(long, global = true)]
    pub csv: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Raw,
    Filled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EstimatorArg {
    Edge,
    Isotropic,
    Crofton,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AggregateArg {
    Mean,
    Min,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Disk,
    Ellipse,
    Annulus,
    BrokenAnnulus,
    MultiDisk,
    /// A seeded noisy broken ring for `repair`.
    RepairDemo,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rasterize a parametric shape to PGM plus a JSON sidecar.
    Gen(GenArgs),
    /// Measure compactness of a mask.
    Ratio(RatioArgs),
    /// Dice and Hausdorff distance between masks.
    Eval(EvalArgs),
    /// Compare an analytic gradient with central differences.
    GradCheck(GradCheckArgs),
    /// Repair a soft field by projected gradient descent.
    Repair(RepairArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_enum)]
    pub kind: KindArg,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    /// Centre row; defaults to the grid centre.
    #[arg(long)]
    pub cy: Option<f64>,
    /// Centre column; defaults to the grid centre.
    #[arg(long)]
    pub cx: Option<f64>,
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long)]
    pub semi_col: Option<f64>,
    #[arg(long)]
    pub semi_row: Option<f64>,
    #[arg(long)]
    pub outer: Option<f64>,
    #[arg(long)]
    pub inner: Option<f64>,
    /// Gap width in degrees.
    #[arg(long)]
    pub gap: Option<f64>,
    /// Gap start in degrees, counter-clockwise from the +column axis.
    #[arg(long, default_value_t = 0.0)]
    pub orientation: f64,
    /// Disk as `row,col,radius`; repeat for several.
    #[arg(long = "disk")]
    pub disks: Vec<String>,
}

#[derive(Debug, Args)]
pub struct RatioArgs {
    pub input: PathBuf,
    /// Exit with code 3 when the mask is inadmissible.
    #[arg(long)]
    pub assert_admissible: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, requires = "gt", conflicts_with = "manifest")]
    pub pred: Option<PathBuf>,
    #[arg(long, requires = "pred")]
    pub gt: Option<PathBuf>,
    /// Two-column file of prediction and ground-truth paths.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Evaluate manifest pairs one after another.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    #[arg(long)]
    pub op: String,
    /// Side of the seeded random field.
    #[arg(long, default_value_t = 16)]
    pub size: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Logistic steepness of the soft indicator.
    #[arg(long, default_value_t = 50.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub eps: f64,
    /// Ray temperature of the soft hole fill.
    #[arg(long, default_value_t = 0.1)]
    pub temperature: f64,
}

#[derive(Debug, Args)]
pub struct RepairArgs {
    /// Soft field to repair.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Fidelity reference mask; defaults to the input thresholded at lambda.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub w_dice: f64,
    #[arg(long, default_value_t = 1.0)]
    pub w_ce: f64,
    #[arg(long, default_value_t = 5.0)]
    pub w_topo: f64,
    #[arg(long, default_value_t = DEFAULT_STEPS)]
    pub steps: usize,
    #[arg(long, default_value_t = DEFAULT_STEP_SIZE)]
    pub step_size: f64,
    #[arg(long, default_value_t = REPAIR_BETA)]
    pub beta: f64,
    #[arg(long, default_value_t = REPAIR_EPS)]
    pub eps: f64,
    #[arg(long, default_value_t = SoftFill::default().temperature())]
    pub temperature: f64,
}

impl Common {
    fn threshold(&self) -> Result<Threshold, CliError> {
        Threshold::new(self.lambda).map_err(usage)
    }

    fn penalty_config(&self) -> Result<PenaltyConfig, CliError> {
        let mode = match self.mode {
            ModeArg::Raw => geometry::FillMode::Raw,
            ModeArg::Filled => geometry::FillMode::Filled,
        };
        let estimator = match self.estimator {
            EstimatorArg::Edge => geometry::Estimator::Edge,
            EstimatorArg::Isotropic => geometry::Estimator::Isotropic,
            EstimatorArg::Crofton => geometry::Estimator::Crofton,
        };
        let aggregate = match self.aggregate {
            AggregateArg::Mean => geometry::Aggregate::AreaWeightedMean,
            AggregateArg::Min => geometry::Aggregate::Min,
        };
        PenaltyConfig::new(self.tau, mode, estimator, aggregate).map_err(usage)
    }

    fn soft_config(&self, beta: f64, eps: f64) -> Result<SoftConfig, CliError> {
        SoftConfig::new(beta, eps, self.threshold()?, self.tau).map_err(usage)
    }
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{e}");
                    EXIT_OK
                }
                _ => {
                    let msg = e.to_string();
                    let first = msg.lines().next().unwrap_or("invalid arguments");
                    let first = first.strip_prefix("error: ").unwrap_or(first);
                    let _ = writeln!(stderr, "error: {first}");
                    EXIT_USAGE
                }
            };
        }
    };
    match execute(&cli, stdout, stderr) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    let common = &cli.common;
    match &cli.command {
        Command::Gen(args) => gen(common, args, stdout),
        Command::Ratio(args) => ratio(common, args, stdout),
        Command::Eval(args) => eval(common, args, stdout, stderr),
        Command::GradCheck(args) => grad_check(common, args, stdout),
        Command::Repair(args) => repair_cmd(common, args, stdout),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_field(path: &Path) -> Result<PredictionField, CliError> {
    let bytes = std::fs::read(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_pgm(&bytes).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// Writes `text` to `--out` when given, otherwise to stdout.
fn emit(common: &Common, text: &str, stdout: &mut dyn Write) -> Result<(), CliError> {
    match &common.out {
        Some(path) => write_file(path, text.as_bytes()),
        None => stdout.write_all(text.as_bytes()).map_err(|source| CliError::Io {
            path: PathBuf::from("<stdout>"),
            source,
        }),
    }
}

fn required(name: &str, v: Option<f64>) -> Result<f64, CliError> {
    v.ok_or_else(|| CliError::Usage(format!("--{name} is required for this kind")))
}

fn parse_disk(s: &str) -> Result<((f64, f64), f64), CliError> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("--disk expects row,col,radius, got {s:?}")))?;
    match parts[..] {
        [r, c, radius] => Ok(((r, c), radius)),
        _ => Err(CliError::Usage(format!("--disk expects row,col,radius, got {s:?}"))),
    }
}

fn sidecar_path(out: &Path) -> PathBuf {
    out.with_extension("json")
}

fn gen(common: &Common, args: &GenArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let out = common
        .out
        .as_ref()
        .ok_or_else(|| CliError::Usage("gen requires --out".into()))?;
    if args.kind == KindArg::RepairDemo {
        let case = BrokenRingCase::generate(common.seed).map_err(usage)?;
        write_file(out, &write_pgm(&case.noisy, FIELD_MAXVAL))?;
        write_file(&sidecar_path(out), case.broken.sidecar_json().as_bytes())?;
        let _ = writeln!(stdout, "{}", out.display());
        return Ok(());
    }
    let (h, w) = (args.height, args.width);
    let center = (
        args.cy.unwrap_or(h as f64 / 2.0),
        args.cx.unwrap_or(w as f64 / 2.0),
    );
    let spec = match args.kind {
        KindArg::Disk => ShapeSpec::disk(h, w, center, required("radius", args.radius)?),
        KindArg::Ellipse => ShapeSpec::ellipse(
            h,
            w,
            center,
            required("semi-col", args.semi_col)?,
            required("semi-row", args.semi_row)?,
        ),
        KindArg::Annulus => ShapeSpec::annulus(h, w, center, required("outer", args.outer)?, required("inner", args.inner)?),
        KindArg::BrokenAnnulus => ShapeSpec::broken_annulus(
            h,
            w,
            center,
            required("outer", args.outer)?,
            required("inner", args.inner)?,
            required("gap", args.gap)?,
            args.orientation,
        ),
        KindArg::MultiDisk => {
            let disks = args.disks.iter().map(|d| parse_disk(d)).collect::<Result<Vec<_>, _>>()?;
            ShapeSpec::multi_disk(h, w, &disks)
        }
        KindArg::RepairDemo => unreachable!("handled above"),
    }
    .map_err(usage)?;
    let mask = rasterize(&spec).map_err(usage)?;
    write_file(out, &write_mask_pgm(&mask))?;
    write_file(&sidecar_path(out), spec.sidecar_json().as_bytes())?;
    let _ = writeln!(stdout, "{}", out.display());
    Ok(())
}

fn ratio(common: &Common, args: &RatioArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let config = common.penalty_config()?;
    let mask = read_field(&args.input)?.threshold(common.threshold()?);
    let report = region_report(&mask, &config);
    let text = if common.csv {
        let mut s = String::from("label,area,perimeter,mu\n");
        for c in &report.components {
            s.push_str(&format!("{},{},{},{}\n", c.label, real(c.area), real(c.perimeter), real(c.mu)));
        }
        s
    } else {
        format!("{}\n", report.to_json())
    };
    emit(common, &text, stdout)?;
    if args.assert_admissible && !report.admissible {
        return Err(CliError::Inadmissible {
            mu: real(report.aggregate_mu),
            tau: real(report.tau),
        });
    }
    Ok(())
}

fn eval(common: &Common, args: &EvalArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    let threshold = common.threshold()?;
    if let Some(manifest) = &args.manifest {
        let text = std::fs::read_to_string(manifest).map_err(|source| CliError::Io {
            path: manifest.clone(),
            source,
        })?;
        let base = manifest.parent().unwrap_or(Path::new("."));
        let entries = parse_manifest(&text, base).map_err(input)?;
        let exec = if args.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        };
        let results = evaluate_manifest(&entries, threshold, exec);
        let mut out = String::from("pred,gt,dice,hausdorff\n");
        let mut failures = 0;
        for (entry, result) in entries.iter().zip(&results) {
            match result {
                Ok(r) => {
                    out.push_str(&format!(
                        "{},{},{}\n",
                        entry.pred.display(),
                        entry.gt.display(),
                        r.csv_fields()
                    ));
                }
                Err(e) => {
                    failures += 1;
                    let _ = writeln!(stderr, "warning: skipped {} / {}: {e}", entry.pred.display(), entry.gt.display());
                }
            }
        }
        emit(common, &out, stdout)?;
        if !entries.is_empty() && failures == entries.len() {
            return Err(CliError::Input("every manifest pair failed".into()));
        }
        return Ok(());
    }
    let (Some(pred), Some(gt)) = (&args.pred, &args.gt) else {
        return Err(CliError::Usage("eval needs --pred and --gt, or --manifest".into()));
    };
    let load = |p: &Path| -> Result<BinaryMask, CliError> {
        metrics::load_mask(p, threshold).map_err(|e| match e {
            MetricsError::Io { path, source } => CliError::Io { path, source },
            other => input(other),
        })
    };
    let report = evaluate(&load(pred)?, &load(gt)?).map_err(input)?;
    let text = if common.csv {
        format!("dice,hausdorff\n{}\n", report.csv_fields())
    } else {
        format!("{}\n", report.to_json())
    };
    emit(common, &text, stdout)
}

fn grad_check(common: &Common, args: &GradCheckArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    if !OBJECTIVE_NAMES.contains(&args.op.as_str()) {
        return Err(CliError::Usage(format!(
            "unknown --op {:?}; expected one of {}",
            args.op,
            OBJECTIVE_NAMES.join(", ")
        )));
    }
    let cfg = common.soft_config(args.beta, args.eps)?;
    let fill = SoftFill::new(args.temperature).map_err(usage)?;
    let (field, target) = random_case(common.seed, args.size).map_err(usage)?;
    let objective = objective_by_name(&args.op, cfg, fill, &target).map_err(usage)?;
    let report = check_gradient(objective.as_ref(), &field, args.step, args.tol, Execution::Parallel).map_err(usage)?;
    let text = if common.csv {
        format!(
            "op,n,max_abs_err,max_rel_err,pass,excluded\n{},{},{},{},{},{}\n",
            report.op,
            report.n,
            sci(report.max_abs_err),
            sci(report.max_rel_err),
            report.pass,
            report.excluded
        )
    } else {
        format!("{}\n", report.to_json())
    };
    emit(common, &text, stdout)
}

fn repair_cmd(common: &Common, args: &RepairArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let config = common.penalty_config()?;
    let soft = common.soft_config(args.beta, args.eps)?;
    let weights = LossWeights::new(args.w_dice, args.w_ce, args.w_topo).map_err(usage)?;
    let fill = SoftFill::new(args.temperature).map_err(usage)?;
    let field = read_field(&args.input)?;
    let reference = match &args.reference {
        Some(p) => read_field(p)?.threshold(soft.lambda()),
        None => field.threshold(soft.lambda()),
    };
    if field.shape() != reference.shape() {
        return Err(CliError::Input("reference and input grids differ".into()));
    }
    let mut problem = RepairProblem::new(field, reference, weights, common.seed).map_err(usage)?;
    problem.steps = args.steps;
    problem.step_size = args.step_size;
    problem.soft = soft;
    problem.fill = fill;
    problem.penalty_mode = config.mode;
    problem.validate().map_err(usage)?;
    let trace = repair(&problem);

    let prefix = common.out.clone().unwrap_or_else(|| PathBuf::from("repair"));
    let with_suffix = |suffix: &str| {
        let mut s = prefix.clone().into_os_string();
        s.push(suffix);
        PathBuf::from(s)
    };
    let field_path = with_suffix("_field.pgm");
    let mask_path = with_suffix("_mask.pgm");
    let trace_path = with_suffix("_trace.csv");
    write_file(&field_path, &write_pgm(&trace.final_field, FIELD_MAXVAL))?;
    write_file(&mask_path, &write_mask_pgm(&trace.final_mask))?;
    write_file(&trace_path, trace.to_csv().as_bytes())?;

    let report = region_report(&trace.final_mask, &config);
    let last = trace.records.last().expect("trace holds the initial record");
    let _ = writeln!(
        stdout,
        "{{\"iterations\":{},\"converged\":{},\"monotone\":{},\"final_total\":{},\"field\":{},\"mask\":{},\"trace\":{},\"report\":{}}}",
        trace.records.len() - 1,
        trace.converged,
        accepted_loss_monotone(&trace),
        sci(last.total),
        json_string(&field_path.display().to_string()),
        json_string(&mask_path.display().to_string()),
        json_string(&trace_path.display().to_string()),
        report.to_json()
    );
    Ok(())
}
