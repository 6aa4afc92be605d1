//! Replicated benchmark experiments on the heavy-tailed synthetic task.
//!
//! Three experiments share one configuration:
//!
//! * prediction risk: streaming fit vs cross-validated ridge and lasso,
//!   scored by the exact squared-error risk (closed form under the
//!   generator) and reported in decibels above the noise floor;
//! * interval length: split-conformal intervals wrapped around each
//!   predictor, scored by mean length and empirical coverage on fresh
//!   draws;
//! * timing: wall-clock cost of the pure streaming update as the sample
//!   count grows, features precomputed so the clock sees only the solver.
//!
//! Every replication draws its data from an independent, replayable RNG
//! stream, so numeric outputs are bit-reproducible for a given
//! configuration on any machine; only the timing numbers depend on the
//! host. `run_to_directory` materializes cells.csv / timing.csv, a
//! human-readable table.txt, the resolved config.json, and a residual
//! histogram in residuals.svg.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    cv_select, default_lasso_grid, default_ridge_grid, CvConfig, LassoPath, RidgePath,
};
use crate::conformal::{split_indices, ConformalCalibrator};
use crate::datagen::{Dataset, SparseStudentT, SparseStudentTConfig};
use crate::features::{FeatureMap, MeanKind};
use crate::mat::dot;
use crate::spice::{SpiceConfig, SpiceModel};
use crate::{Error, Matrix, Result};

/// RNG stream offset for fresh evaluation draws, far above any
/// replication index.
const TEST_STREAM_OFFSET: u64 = 1 << 20;
/// RNG stream for the timing datasets.
const TIMING_STREAM: u64 = (1 << 20) - 1;

/// Shared settings for all three experiments.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Independent replications to average over.
    pub replications: usize,
    /// Training-set sizes for the risk experiment. The interval
    /// experiment draws twice each size and splits evenly, so the size is
    /// the per-half count: that many samples fit the predictor and as
    /// many calibrate the interval.
    pub train_sizes: Vec<usize>,
    /// Base seed; replications and splits derive their streams from it.
    pub seed: u64,
    pub generator: SparseStudentTConfig,
    /// Coordinate cycles after each streamed sample.
    pub cycles_per_sample: usize,
    /// Target coverage for the conformal intervals.
    pub coverage: f64,
    /// Cross-validation folds for the baselines.
    pub folds: usize,
    /// Fresh draws per replication for interval evaluation.
    pub test_points: usize,
    /// Sample counts timed in the streaming-cost experiment.
    pub timing_sizes: Vec<usize>,
    /// Timed repetitions per size (after one untimed warmup).
    pub timing_repeats: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            replications: 200,
            train_sizes: vec![50, 100, 200],
            seed: 7,
            generator: SparseStudentTConfig::default(),
            cycles_per_sample: 3,
            coverage: 0.9,
            folds: 10,
            test_points: 200,
            timing_sizes: vec![2000, 4000, 8000],
            timing_repeats: 3,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        if self.replications == 0 {
            return Err(Error::InvalidParameter("replications must be at least 1".into()));
        }
        if self.train_sizes.is_empty() {
            return Err(Error::Empty("train_sizes"));
        }
        if self.train_sizes.iter().any(|&n| n < 4) {
            return Err(Error::InvalidParameter("train sizes below 4 are not useful".into()));
        }
        if !(self.coverage > 0.0 && self.coverage < 1.0) {
            return Err(Error::CoverageOutOfRange(self.coverage));
        }
        if self.folds < 2 {
            return Err(Error::InvalidParameter("cross-validation needs at least 2 folds".into()));
        }
        if self.cycles_per_sample == 0 {
            return Err(Error::InvalidParameter("cycles_per_sample must be at least 1".into()));
        }
        if self.test_points == 0 {
            return Err(Error::InvalidParameter("test_points must be at least 1".into()));
        }
        if self.timing_sizes.is_empty() {
            return Err(Error::Empty("timing_sizes"));
        }
        if self.timing_repeats == 0 {
            return Err(Error::InvalidParameter("timing_repeats must be at least 1".into()));
        }
        Ok(())
    }

    fn feature_map(&self) -> Result<FeatureMap> {
        FeatureMap::linear(self.generator.input_dim, MeanKind::Constant)
    }

    fn spice_config(&self) -> SpiceConfig {
        SpiceConfig { cycles_per_sample: self.cycles_per_sample, ..SpiceConfig::default() }
    }
}

/// Names used in cells and tables, in reporting order.
pub const PREDICTORS: [&str; 3] = ["spice", "ridge", "lasso"];

/// One (predictor, size) cell of the risk experiment.
#[derive(Clone, Debug, Serialize)]
pub struct RiskCell {
    pub predictor: String,
    pub n: usize,
    /// Mean squared-error risk across replications, noise included.
    pub mean_risk: f64,
    /// `10 log10(mean_risk / noise_variance)`: decibels above the
    /// unavoidable noise floor.
    pub risk_db: f64,
}

/// One (predictor, size) cell of the interval experiment.
#[derive(Clone, Debug, Serialize)]
pub struct IntervalCell {
    pub predictor: String,
    pub n: usize,
    /// Mean conformal interval length across replications.
    pub mean_length: f64,
    /// Empirical coverage on fresh draws, pooled across replications.
    pub coverage: f64,
}

/// One size of the timing experiment.
#[derive(Clone, Debug, Serialize)]
pub struct TimingCell {
    pub n: usize,
    pub mean_seconds: f64,
    pub min_seconds: f64,
    pub seconds_per_sample: f64,
}

/// Weights for the three predictors on one training set, all in feature
/// space (leading coordinate is the intercept for the linear map).
struct ThreeFits {
    spice: Vec<f64>,
    ridge: Vec<f64>,
    lasso: Vec<f64>,
}

fn feature_design(map: &FeatureMap, data: &Dataset) -> Result<Matrix> {
    let mut phi = Matrix::with_cols(map.output_len());
    let mut row = Vec::with_capacity(map.output_len());
    for i in 0..data.len() {
        map.evaluate_into(data.x.row(i), &mut row)?;
        phi.push_row(&row)?;
    }
    Ok(phi)
}

fn fit_three(
    map: &FeatureMap,
    train: &Dataset,
    config: &ExperimentConfig,
    cv_seed: u64,
) -> Result<ThreeFits> {
    let mut model = SpiceModel::new(map.clone(), config.spice_config())?;
    for i in 0..train.len() {
        model.step(train.x.row(i), train.y[i])?;
    }

    let phi = feature_design(map, train)?;
    let u = map.mean_len();
    let ridge_cv = CvConfig::new(default_ridge_grid(&phi)?)?
        .with_folds(config.folds)
        .with_seed(cv_seed);
    let ridge = cv_select(&phi, &train.y, &ridge_cv, &RidgePath { unpenalized: u })?;
    let lasso_cv = CvConfig::new(default_lasso_grid(&phi, &train.y)?)?
        .with_folds(config.folds)
        .with_seed(cv_seed);
    let lasso = cv_select(&phi, &train.y, &lasso_cv, &LassoPath { unpenalized: u })?;

    Ok(ThreeFits {
        spice: model.weights().to_vec(),
        ridge: ridge.weights,
        lasso: lasso.weights,
    })
}

/// Full squared-error risk of affine feature weights under the generator:
/// exact excess risk plus the noise variance.
fn full_risk(gen: &SparseStudentT, weights: &[f64]) -> Result<f64> {
    let excess = gen.excess_risk(weights[0], &weights[1..])?;
    Ok(excess + gen.config().noise_variance)
}

fn prefix(data: &Dataset, n: usize) -> Dataset {
    let indices: Vec<usize> = (0..n).collect();
    data.select(&indices)
}

/// Mean prediction risk per predictor and training size, averaged over
/// replications and expressed both raw and in decibels above the noise
/// floor.
pub fn prediction_risk_experiment(config: &ExperimentConfig) -> Result<Vec<RiskCell>> {
    config.validate()?;
    let gen = SparseStudentT::new(config.generator.clone())?;
    let map = config.feature_map()?;
    let max_n = *config.train_sizes.iter().max().expect("validated non-empty");

    // risk[rep][size][predictor]
    let per_rep: Vec<Vec<[f64; 3]>> = (0..config.replications)
        .into_par_iter()
        .map(|rep| {
            let data = gen.sample(max_n, rep as u64);
            let mut per_size = Vec::with_capacity(config.train_sizes.len());
            for &n in &config.train_sizes {
                let train = prefix(&data, n);
                let fits = fit_three(&map, &train, config, config.seed.wrapping_add(rep as u64))?;
                per_size.push([
                    full_risk(&gen, &fits.spice)?,
                    full_risk(&gen, &fits.ridge)?,
                    full_risk(&gen, &fits.lasso)?,
                ]);
            }
            Ok(per_size)
        })
        .collect::<Result<_>>()?;

    let noise = config.generator.noise_variance;
    let mut cells = Vec::with_capacity(config.train_sizes.len() * PREDICTORS.len());
    for (s, &n) in config.train_sizes.iter().enumerate() {
        for (k, predictor) in PREDICTORS.iter().enumerate() {
            let mean_risk =
                per_rep.iter().map(|rep| rep[s][k]).sum::<f64>() / config.replications as f64;
            cells.push(RiskCell {
                predictor: predictor.to_string(),
                n,
                mean_risk,
                risk_db: 10.0 * (mean_risk / noise).log10(),
            });
        }
    }
    Ok(cells)
}

/// Split-conformal interval length and coverage per predictor and size.
/// Each replication draws two samples per unit of size, splits them into
/// equal fitting and calibration halves, fits all three predictors on the
/// first half, calibrates on the second, and scores fresh draws.
pub fn interval_experiment(config: &ExperimentConfig) -> Result<Vec<IntervalCell>> {
    config.validate()?;
    let gen = SparseStudentT::new(config.generator.clone())?;
    let map = config.feature_map()?;
    let max_n = *config.train_sizes.iter().max().expect("validated non-empty");

    // (length, covered count) per rep, size, predictor.
    let per_rep: Vec<Vec<[(f64, usize); 3]>> = (0..config.replications)
        .into_par_iter()
        .map(|rep| {
            let data = gen.sample(2 * max_n, rep as u64);
            let test = gen.sample(config.test_points, TEST_STREAM_OFFSET + rep as u64);
            let mut per_size = Vec::with_capacity(config.train_sizes.len());
            for &n in &config.train_sizes {
                let pool = prefix(&data, 2 * n);
                let (train_idx, calib_idx) =
                    split_indices(2 * n, config.seed.wrapping_add(rep as u64))?;
                let train = pool.select(&train_idx);
                let calib = pool.select(&calib_idx);
                let fits = fit_three(&map, &train, config, config.seed.wrapping_add(rep as u64))?;

                let phi_calib = feature_design(&map, &calib)?;
                let phi_test = feature_design(&map, &test)?;
                let mut row = [(0.0, 0usize); 3];
                for (k, weights) in
                    [&fits.spice, &fits.ridge, &fits.lasso].into_iter().enumerate()
                {
                    let residuals: Vec<f64> = (0..calib.len())
                        .map(|i| (calib.y[i] - dot(phi_calib.row(i), weights)).abs())
                        .collect();
                    let calibrator = ConformalCalibrator::calibrate(&residuals, config.coverage)?;
                    let (lo, hi) = calibrator.interval(0.0)?;
                    let covered = (0..test.len())
                        .filter(|&i| {
                            let gap = test.y[i] - dot(phi_test.row(i), weights);
                            gap >= lo && gap <= hi
                        })
                        .count();
                    row[k] = (hi - lo, covered);
                }
                per_size.push(row);
            }
            Ok(per_size)
        })
        .collect::<Result<_>>()?;

    let mut cells = Vec::with_capacity(config.train_sizes.len() * PREDICTORS.len());
    for (s, &n) in config.train_sizes.iter().enumerate() {
        for (k, predictor) in PREDICTORS.iter().enumerate() {
            let mean_length =
                per_rep.iter().map(|rep| rep[s][k].0).sum::<f64>() / config.replications as f64;
            let covered: usize = per_rep.iter().map(|rep| rep[s][k].1).sum();
            let total = config.replications * config.test_points;
            cells.push(IntervalCell {
                predictor: predictor.to_string(),
                n,
                mean_length,
                coverage: covered as f64 / total as f64,
            });
        }
    }
    Ok(cells)
}

/// Wall-clock cost of the pure streaming update per training size.
/// Features are precomputed and one untimed warmup run precedes the timed
/// repetitions.
pub fn timing_experiment(config: &ExperimentConfig) -> Result<Vec<TimingCell>> {
    config.validate()?;
    let gen = SparseStudentT::new(config.generator.clone())?;
    let map = config.feature_map()?;

    let mut cells = Vec::with_capacity(config.timing_sizes.len());
    for &n in &config.timing_sizes {
        let data = gen.sample(n, TIMING_STREAM);
        let phi = feature_design(&map, &data)?;
        let mut times = Vec::with_capacity(config.timing_repeats);
        for attempt in 0..=config.timing_repeats {
            let mut model = SpiceModel::new(map.clone(), config.spice_config())?;
            let start = Instant::now();
            for i in 0..n {
                model.step_features(phi.row(i), data.y[i])?;
            }
            let elapsed = start.elapsed().as_secs_f64();
            if attempt > 0 {
                times.push(elapsed);
            }
        }
        let mean_seconds = times.iter().sum::<f64>() / times.len() as f64;
        let min_seconds = times.iter().cloned().fold(f64::INFINITY, f64::min);
        cells.push(TimingCell {
            n,
            mean_seconds,
            min_seconds,
            seconds_per_sample: mean_seconds / n as f64,
        });
    }
    Ok(cells)
}

/// Which experiment to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExperimentKind {
    Risk,
    Intervals,
    Timing,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::Risk => "risk",
            ExperimentKind::Intervals => "intervals",
            ExperimentKind::Timing => "timing",
        }
    }
}

/// Everything a directory run produced, for callers that want the numbers
/// as well as the files.
pub struct ExperimentArtifacts {
    pub risk: Option<Vec<RiskCell>>,
    pub intervals: Option<Vec<IntervalCell>>,
    pub timing: Option<Vec<TimingCell>>,
    pub files: Vec<PathBuf>,
}

#[derive(Serialize)]
struct ResolvedConfig<'a> {
    kind: &'static str,
    config: &'a ExperimentConfig,
    /// Penalty grids realized on the first replication at the largest
    /// size, for the record; the grids are data-dependent.
    #[serde(skip_serializing_if = "Option::is_none")]
    ridge_grid: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lasso_grid: Option<Vec<f64>>,
}

/// Grids and training residuals from replication 0 at the largest size,
/// recorded alongside the numeric outputs.
fn rep0_details(config: &ExperimentConfig) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let gen = SparseStudentT::new(config.generator.clone())?;
    let map = config.feature_map()?;
    let max_n = *config.train_sizes.iter().max().expect("validated non-empty");
    let data = gen.sample(max_n, 0);
    let phi = feature_design(&map, &data)?;
    let ridge_grid = default_ridge_grid(&phi)?;
    let lasso_grid = default_lasso_grid(&phi, &data.y)?;

    let mut model = SpiceModel::new(map, config.spice_config())?;
    for i in 0..data.len() {
        model.step_features(phi.row(i), data.y[i])?;
    }
    let residuals: Vec<f64> =
        (0..data.len()).map(|i| data.y[i] - dot(phi.row(i), model.weights())).collect();
    Ok((ridge_grid, lasso_grid, residuals))
}

/// Fixed-bin histogram rendered as a standalone SVG. Pure string
/// assembly, deterministic for identical inputs.
fn histogram_svg(values: &[f64], bins: usize, title: &str) -> String {
    let (width, height, margin) = (640.0, 360.0, 48.0);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">"
    );
    let _ = writeln!(
        svg,
        "  <text x=\"{:.1}\" y=\"24\" font-family=\"monospace\" font-size=\"14\" text-anchor=\"middle\">{title}</text>",
        width / 2.0
    );
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() || !lo.is_finite() || !hi.is_finite() {
        svg.push_str("</svg>\n");
        return svg;
    }
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for &v in values {
        let bin = (((v - lo) / span * bins as f64) as usize).min(bins - 1);
        counts[bin] += 1;
    }
    let peak = counts.iter().copied().max().unwrap_or(1).max(1) as f64;
    let plot_w = width - 2.0 * margin;
    let plot_h = height - 2.0 * margin;
    let bar_w = plot_w / bins as f64;
    for (i, &count) in counts.iter().enumerate() {
        let bar_h = plot_h * count as f64 / peak;
        let x = margin + i as f64 * bar_w;
        let y = height - margin - bar_h;
        let _ = writeln!(
            svg,
            "  <rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{:.2}\" height=\"{bar_h:.2}\" fill=\"#4878a8\"/>",
            bar_w.max(1.0) - 0.5
        );
    }
    let _ = writeln!(
        svg,
        "  <line x1=\"{margin}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>",
        height - margin,
        width - margin,
        height - margin
    );
    for (anchor, pos, value) in [
        ("start", margin, lo),
        ("middle", margin + plot_w / 2.0, lo + span / 2.0),
        ("end", width - margin, hi),
    ] {
        let _ = writeln!(
            svg,
            "  <text x=\"{pos:.1}\" y=\"{:.1}\" font-family=\"monospace\" font-size=\"12\" text-anchor=\"{anchor}\">{value:.3}</text>",
            height - margin + 18.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn render_risk_table(cells: &[RiskCell], sizes: &[usize]) -> String {
    let mut out = String::from("prediction risk, dB above the noise floor\n");
    let _ = writeln!(out, "{:<10}{:>10}{:>10}{:>10}", "n", "spice", "ridge", "lasso");
    for &n in sizes {
        let _ = write!(out, "{n:<10}");
        for predictor in PREDICTORS {
            let cell = cells
                .iter()
                .find(|c| c.n == n && c.predictor == predictor)
                .expect("complete grid");
            let _ = write!(out, "{:>10.2}", cell.risk_db);
        }
        out.push('\n');
    }
    out
}

fn render_interval_table(cells: &[IntervalCell], sizes: &[usize], coverage: f64) -> String {
    let mut out = format!("split-conformal intervals at {coverage:.0}% nominal coverage\n");
    let _ = writeln!(
        out,
        "{:<10}{:>16}{:>16}{:>16}",
        "n", "spice len/cov", "ridge len/cov", "lasso len/cov"
    );
    for &n in sizes {
        let _ = write!(out, "{n:<10}");
        for predictor in PREDICTORS {
            let cell = cells
                .iter()
                .find(|c| c.n == n && c.predictor == predictor)
                .expect("complete grid");
            let _ = write!(out, "{:>10.2}/{:>5.3}", cell.mean_length, cell.coverage);
        }
        out.push('\n');
    }
    out
}

fn render_timing_table(cells: &[TimingCell]) -> String {
    let mut out = String::from("streaming fit wall time\n");
    let _ = writeln!(out, "{:<10}{:>14}{:>14}{:>18}", "n", "mean [s]", "min [s]", "mean [us/sample]");
    for cell in cells {
        let _ = writeln!(
            out,
            "{:<10}{:>14.4}{:>14.4}{:>18.2}",
            cell.n,
            cell.mean_seconds,
            cell.min_seconds,
            cell.seconds_per_sample * 1e6
        );
    }
    out
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Runs one experiment and writes its artifacts into `out_dir` (created
/// if missing). Numeric outputs land in cells.csv except for timing,
/// which is host-dependent and goes to timing.csv instead.
pub fn run_to_directory(
    kind: ExperimentKind,
    config: &ExperimentConfig,
    out_dir: &Path,
) -> Result<ExperimentArtifacts> {
    config.validate()?;
    fs::create_dir_all(out_dir)?;
    let mut artifacts = ExperimentArtifacts {
        risk: None,
        intervals: None,
        timing: None,
        files: Vec::new(),
    };

    let mut resolved = ResolvedConfig {
        kind: kind.as_str(),
        config,
        ridge_grid: None,
        lasso_grid: None,
    };

    match kind {
        ExperimentKind::Risk => {
            let cells = prediction_risk_experiment(config)?;
            let path = out_dir.join("cells.csv");
            write_csv(&path, &cells)?;
            artifacts.files.push(path);
            let table = render_risk_table(&cells, &config.train_sizes);
            let path = out_dir.join("table.txt");
            fs::write(&path, table)?;
            artifacts.files.push(path);
            artifacts.risk = Some(cells);
        }
        ExperimentKind::Intervals => {
            let cells = interval_experiment(config)?;
            let path = out_dir.join("cells.csv");
            write_csv(&path, &cells)?;
            artifacts.files.push(path);
            let table = render_interval_table(&cells, &config.train_sizes, config.coverage * 100.0);
            let path = out_dir.join("table.txt");
            fs::write(&path, table)?;
            artifacts.files.push(path);
            artifacts.intervals = Some(cells);
        }
        ExperimentKind::Timing => {
            let cells = timing_experiment(config)?;
            let path = out_dir.join("timing.csv");
            write_csv(&path, &cells)?;
            artifacts.files.push(path);
            let path = out_dir.join("table.txt");
            fs::write(&path, render_timing_table(&cells))?;
            artifacts.files.push(path);
            artifacts.timing = Some(cells);
        }
    }

    if kind != ExperimentKind::Timing {
        let (ridge_grid, lasso_grid, residuals) = rep0_details(config)?;
        resolved.ridge_grid = Some(ridge_grid);
        resolved.lasso_grid = Some(lasso_grid);
        let svg = histogram_svg(
            &residuals,
            24,
            "training residuals, first replication at the largest size",
        );
        let path = out_dir.join("residuals.svg");
        fs::write(&path, svg)?;
        artifacts.files.push(path);
    }

    let path = out_dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&resolved)?)?;
    artifacts.files.push(path);

    Ok(artifacts)
}
