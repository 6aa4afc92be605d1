//! Command-line front end for the streaming regression toolkit.
//!
//! Subcommands: `fit` streams a CSV through the online solver and writes a
//! versioned JSON model, `predict` scores rows with a saved model,
//! `conformal` runs the split-and-calibrate interval pipeline, `experiment`
//! reproduces the replicated benchmark studies, `verify` batch-checks the
//! finite-sample divergence bounds, and `datagen` emits synthetic data.
//!
//! Exit codes: 0 on success, 1 for usage errors, 2 for data problems
//! (unreadable files, malformed CSV, dimension mismatches), 3 for
//! numerical failures (singular systems, degenerate fits).

mod io;

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use spicereg::conformal::{split_indices, ConformalCalibrator};
use spicereg::datagen::{SparseStudentT, SparseStudentTConfig};
use spicereg::experiment::{run_to_directory, ExperimentConfig, ExperimentKind};
use spicereg::features::{FeatureMap, MeanKind};
use spicereg::spice::{SpiceConfig, SpiceModel};
use spicereg::verify::run_bound_suite;
use spicereg::Matrix;

/// Top-level failure: either a data problem (exit 2) or a numerical one
/// surfaced by the library (exit 3 when the library says so).
#[derive(Debug)]
pub enum CliError {
    Data(String),
    Numerical(String),
    Lib(spicereg::Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Data(msg) | CliError::Numerical(msg) => f.write_str(msg),
            CliError::Lib(err) => write!(f, "{err}"),
        }
    }
}

impl From<spicereg::Error> for CliError {
    fn from(err: spicereg::Error) -> Self {
        CliError::Lib(err)
    }
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Lib(err) => {
                if err.is_numerical() {
                    3
                } else {
                    2
                }
            }
        }
    }
}

#[derive(Parser)]
#[command(name = "spicereg", version, about = "Streaming sparse regression toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stream a CSV (features then target per row) into a model file.
    Fit(FitArgs),
    /// Predict targets for input rows with a saved model.
    Predict(PredictArgs),
    /// Fit on one half of the data, calibrate intervals on the other.
    Conformal(ConformalArgs),
    /// Run a replicated benchmark experiment into a directory.
    Experiment(ExperimentArgs),
    /// Check the divergence bounds on randomized tiny instances.
    Verify(VerifyArgs),
    /// Generate synthetic heavy-tailed regression data as CSV.
    Datagen(DatagenArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FeatureKind {
    Linear,
    LaplaceTensor,
    LaplaceAdditive,
}

#[derive(Clone, Copy, ValueEnum)]
enum MeanArg {
    None,
    Constant,
    Affine,
}

impl From<MeanArg> for MeanKind {
    fn from(arg: MeanArg) -> MeanKind {
        match arg {
            MeanArg::None => MeanKind::None,
            MeanArg::Constant => MeanKind::Constant,
            MeanArg::Affine => MeanKind::Affine,
        }
    }
}

/// Regressor construction, shared by `fit` and `conformal`.
#[derive(Args)]
struct FeatureArgs {
    /// Basis applied to the inputs.
    #[arg(long, value_enum, default_value_t = FeatureKind::Linear)]
    features: FeatureKind,

    /// Unpenalized mean block prepended to the basis.
    #[arg(long, value_enum, default_value_t = MeanArg::Constant)]
    mean: MeanArg,

    /// Frequencies per dimension for the laplace bases.
    #[arg(long, default_value_t = 6)]
    m: usize,

    /// Box half-widths for the laplace bases, comma separated; one value
    /// broadcasts to every input dimension.
    #[arg(long, value_delimiter = ',')]
    half_widths: Vec<f64>,
}

impl FeatureArgs {
    fn build(&self, input_dim: usize) -> Result<FeatureMap, CliError> {
        let mean = MeanKind::from(self.mean);
        let half_widths = match self.half_widths.len() {
            0 => vec![1.0; input_dim],
            1 => vec![self.half_widths[0]; input_dim],
            _ => self.half_widths.clone(),
        };
        let map = match self.features {
            FeatureKind::Linear => FeatureMap::linear(input_dim, mean)?,
            FeatureKind::LaplaceTensor => {
                FeatureMap::laplace_tensor(input_dim, self.m, half_widths, mean)?
            }
            FeatureKind::LaplaceAdditive => {
                FeatureMap::laplace_additive(input_dim, self.m, half_widths, mean)?
            }
        };
        Ok(map)
    }
}

#[derive(Args)]
struct FitArgs {
    /// Training CSV: one row per sample, feature columns then the target.
    #[arg(long)]
    input: PathBuf,

    /// Where to write the fitted model (JSON).
    #[arg(long)]
    model: PathBuf,

    /// Continue from a saved model instead of starting fresh; the stored
    /// feature map and solver settings apply.
    #[arg(long, conflicts_with_all = ["features", "mean", "m", "half_widths", "cycles"])]
    resume: Option<PathBuf>,

    #[command(flatten)]
    feature_args: FeatureArgs,

    /// Coordinate cycles per streamed sample.
    #[arg(long, default_value_t = 3)]
    cycles: usize,
}

#[derive(Args)]
struct PredictArgs {
    /// Saved model (JSON).
    #[arg(long)]
    model: PathBuf,

    /// Input CSV with the model's feature columns; a trailing target
    /// column is tolerated and ignored.
    #[arg(long)]
    input: PathBuf,

    /// Output CSV of predictions; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ConformalArgs {
    /// Labeled CSV: feature columns then the target.
    #[arg(long)]
    input: PathBuf,

    /// Rows to wrap in intervals (features, optionally a trailing target
    /// for a coverage summary). The input rows are used when omitted.
    #[arg(long)]
    test: Option<PathBuf>,

    /// Target coverage level in (0, 1).
    #[arg(long, default_value_t = 0.9)]
    kappa_cov: f64,

    /// Seed for the fit/calibration split.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    #[command(flatten)]
    feature_args: FeatureArgs,

    /// Coordinate cycles per streamed sample.
    #[arg(long, default_value_t = 3)]
    cycles: usize,

    /// Output CSV of (prediction, lower, upper); standard output when
    /// omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExperimentArg {
    /// Prediction risk against cross-validated ridge and lasso.
    Risk,
    /// Split-conformal interval length and coverage.
    Intervals,
    /// Streaming fit wall time as the sample count grows.
    Timing,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Which study to run.
    #[arg(long, value_enum)]
    which: ExperimentArg,

    /// Report directory (created if missing).
    #[arg(long)]
    out: PathBuf,

    #[arg(long, default_value_t = 200)]
    replications: usize,

    /// Training sizes, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [50, 100, 200])]
    sizes: Vec<usize>,

    #[arg(long, default_value_t = 7)]
    seed: u64,

    /// Coordinate cycles per streamed sample.
    #[arg(long, default_value_t = 3)]
    cycles: usize,

    /// Target coverage for the interval study.
    #[arg(long, default_value_t = 0.9)]
    kappa_cov: f64,

    /// Degrees of freedom of the Student-t noise.
    #[arg(long, default_value_t = 3.0)]
    dof: f64,

    /// Cross-validation folds for the baselines.
    #[arg(long, default_value_t = 10)]
    folds: usize,

    /// Fresh evaluation draws per replication (interval study).
    #[arg(long, default_value_t = 200)]
    test_points: usize,

    /// Sample counts for the timing study, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [2000, 4000, 8000])]
    timing_sizes: Vec<usize>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Random instances to draw.
    #[arg(long, default_value_t = 500)]
    instances: usize,

    #[arg(long, default_value_t = 1)]
    seed: u64,

    /// Output JSON path; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DatagenArgs {
    /// Rows to generate.
    #[arg(long)]
    n: usize,

    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,

    #[arg(long, default_value_t = 1)]
    seed: u64,

    /// Independent draw stream under the same seed.
    #[arg(long, default_value_t = 0)]
    stream: u64,

    #[arg(long, default_value_t = 100)]
    input_dim: usize,

    /// Rank of the input covariance.
    #[arg(long, default_value_t = 50)]
    rank: usize,

    /// Zero-based signal coordinates, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [0, 9, 19, 29, 39])]
    support: Vec<usize>,

    #[arg(long, default_value_t = 5.0)]
    coefficient: f64,

    #[arg(long, default_value_t = 1.0)]
    intercept: f64,

    #[arg(long, default_value_t = 4.0)]
    noise_variance: f64,

    /// Degrees of freedom of the Student-t noise (must exceed 2).
    #[arg(long, default_value_t = 3.0)]
    dof: f64,
}

fn main() {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            std::process::exit(code);
        }
    };
    if let Err(err) = run(cli) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Conformal(args) => cmd_conformal(args),
        Command::Experiment(args) => cmd_experiment(args),
        Command::Verify(args) => cmd_verify(args),
        Command::Datagen(args) => cmd_datagen(args),
    }
}

fn cmd_fit(args: FitArgs) -> Result<(), CliError> {
    let table = io::read_numeric_csv(&args.input)?;
    if table.cols() < 2 {
        return Err(CliError::Data(format!(
            "{}: need at least one feature column and a target",
            args.input.display()
        )));
    }
    let (x, y) = table.split_target();

    let mut model = match &args.resume {
        Some(path) => {
            let model = SpiceModel::load(path)?;
            if model.feature_map().input_dim() != x.cols() {
                return Err(CliError::Data(format!(
                    "model expects {} feature columns, input has {}",
                    model.feature_map().input_dim(),
                    x.cols()
                )));
            }
            model
        }
        None => {
            let map = args.feature_args.build(x.cols())?;
            let config = SpiceConfig { cycles_per_sample: args.cycles, ..SpiceConfig::default() };
            SpiceModel::new(map, config)?
        }
    };

    for (i, &target) in y.iter().enumerate() {
        model.step(x.row(i), target)?;
    }
    model.save(&args.model)?;

    let nonzero = model.weights().iter().filter(|w| **w != 0.0).count();
    println!(
        "n={} nonzero={}/{} objective={:.6}",
        model.n(),
        nonzero,
        model.weights().len(),
        model.objective()?
    );
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<(), CliError> {
    let model = SpiceModel::load(&args.model)?;
    let table = io::read_numeric_csv(&args.input)?;
    let d = model.feature_map().input_dim();
    let x = match table.cols() {
        w if w == d => table.data,
        w if w == d + 1 => table.split_target().0,
        w => {
            return Err(CliError::Data(format!(
                "model expects {d} feature columns, input has {w}"
            )))
        }
    };
    let mut predictions = Vec::with_capacity(x.rows());
    for i in 0..x.rows() {
        predictions.push(model.predict(x.row(i))?);
    }
    io::write_csv(
        args.out.as_deref(),
        &["prediction"],
        predictions.into_iter().map(|p| vec![p]),
    )
}

fn cmd_conformal(args: ConformalArgs) -> Result<(), CliError> {
    let table = io::read_numeric_csv(&args.input)?;
    if table.cols() < 2 {
        return Err(CliError::Data(format!(
            "{}: need at least one feature column and a target",
            args.input.display()
        )));
    }
    let (x, y) = table.split_target();
    let d = x.cols();

    let (train_idx, calib_idx) = split_indices(x.rows(), args.seed)?;
    let map = args.feature_args.build(d)?;
    let config = SpiceConfig { cycles_per_sample: args.cycles, ..SpiceConfig::default() };
    let mut model = SpiceModel::new(map, config)?;
    for &i in &train_idx {
        model.step(x.row(i), y[i])?;
    }

    let residuals: Vec<f64> = calib_idx
        .iter()
        .map(|&i| Ok((y[i] - model.predict(x.row(i))?).abs()))
        .collect::<Result<_, spicereg::Error>>()?;
    let calibrator = ConformalCalibrator::calibrate(&residuals, args.kappa_cov)?;

    // Score the test rows, or the input rows when no test file is given.
    let (test_x, test_y): (Matrix, Option<Vec<f64>>) = match &args.test {
        Some(path) => {
            let test = io::read_numeric_csv(path)?;
            match test.cols() {
                w if w == d => (test.data, None),
                w if w == d + 1 => {
                    let (tx, ty) = test.split_target();
                    (tx, Some(ty))
                }
                w => {
                    return Err(CliError::Data(format!(
                        "test rows must have {d} or {} columns, got {w}",
                        d + 1
                    )))
                }
            }
        }
        None => (x, Some(y)),
    };

    let mut rows = Vec::with_capacity(test_x.rows());
    for i in 0..test_x.rows() {
        let y_hat = model.predict(test_x.row(i))?;
        let (lo, hi) = calibrator.interval(y_hat)?;
        rows.push(vec![y_hat, lo, hi]);
    }

    if let Some(targets) = &test_y {
        let covered = targets
            .iter()
            .zip(&rows)
            .filter(|(t, row)| **t >= row[1] && **t <= row[2])
            .count();
        let length = rows.first().map_or(0.0, |row| row[2] - row[1]);
        eprintln!(
            "coverage {}/{} = {:.4} at nominal {:.2}, interval length {:.4}",
            covered,
            targets.len(),
            covered as f64 / targets.len() as f64,
            args.kappa_cov,
            length
        );
    }

    io::write_csv(
        args.out.as_deref(),
        &["prediction", "lower", "upper"],
        rows.into_iter(),
    )
}

fn cmd_experiment(args: ExperimentArgs) -> Result<(), CliError> {
    let kind = match args.which {
        ExperimentArg::Risk => ExperimentKind::Risk,
        ExperimentArg::Intervals => ExperimentKind::Intervals,
        ExperimentArg::Timing => ExperimentKind::Timing,
    };
    let config = ExperimentConfig {
        replications: args.replications,
        train_sizes: args.sizes.clone(),
        seed: args.seed,
        generator: SparseStudentTConfig { dof: args.dof, ..SparseStudentTConfig::default() },
        cycles_per_sample: args.cycles,
        coverage: args.kappa_cov,
        folds: args.folds,
        test_points: args.test_points,
        timing_sizes: args.timing_sizes.clone(),
        ..ExperimentConfig::default()
    };
    let artifacts = run_to_directory(kind, &config, &args.out)?;
    let table = std::fs::read_to_string(args.out.join("table.txt"))
        .map_err(|e| CliError::Data(e.to_string()))?;
    print!("{table}");
    for file in &artifacts.files {
        eprintln!("wrote {}", file.display());
    }
    Ok(())
}

fn cmd_verify(args: VerifyArgs) -> Result<(), CliError> {
    let report = run_bound_suite(args.instances, args.seed)?;
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::Data(e.to_string()))?;
    match &args.out {
        Some(path) => std::fs::write(path, json)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?,
        None => println!("{json}"),
    }
    if !report.all_clear() {
        return Err(CliError::Numerical(format!(
            "bound violations detected: {} lasso, {} self-scaled, {} strict noiseless",
            report.lasso_violations, report.spice_violations, report.noiseless_strict_failures
        )));
    }
    Ok(())
}

fn cmd_datagen(args: DatagenArgs) -> Result<(), CliError> {
    if args.n == 0 {
        return Err(CliError::Data("n must be at least 1".into()));
    }
    let config = SparseStudentTConfig {
        input_dim: args.input_dim,
        rank: args.rank,
        support: args.support.clone(),
        coefficient: args.coefficient,
        intercept: args.intercept,
        noise_variance: args.noise_variance,
        dof: args.dof,
        seed: args.seed,
    };
    let gen = SparseStudentT::new(config)?;
    let data = gen.sample(args.n, args.stream);

    let header: Vec<String> = (0..args.input_dim)
        .map(|j| format!("x{j}"))
        .chain(std::iter::once("y".to_string()))
        .collect();
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = (0..data.len()).map(|i| {
        let mut row = data.x.row(i).to_vec();
        row.push(data.y[i]);
        row
    });
    io::write_csv(Some(&args.out), &header_refs, rows)?;
    eprintln!("wrote {} rows to {}", data.len(), args.out.display());
    Ok(())
}
