//! Cross-validated ridge and lasso reference fits.
//!
//! These are the tuned competitors the streaming solver is compared
//! against. Both work off the Gram form of the normal equations, so K-fold
//! cross-validation can downdate the full Gram matrix per fold instead of
//! rebuilding it, and the lasso path warms each penalty from the previous
//! one. The first `unpenalized` coordinates (the mean block) are never
//! penalized, matching the solver's convention.
//!
//! Penalties follow the usual parameterizations: ridge solves
//! `(Gram + penalty * D) w = xty` with `D` zeroing the mean block, and the
//! lasso minimizes `||y - Phi w||^2 / n + penalty * sum_{j>u} |w_j|`.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::mat::{axpy, dot};
use crate::stats::SufficientStats;
use crate::{Error, Matrix, Result};

const LASSO_TOL: f64 = 1e-8;
const LASSO_MAX_CYCLES: usize = 10_000;

/// Gram-form view of a training set: `Phi^T Phi`, `Phi^T y` and the row
/// count. Cheap to copy and downdate, which is all cross-validation needs.
#[derive(Clone, Debug)]
pub struct GramSystem {
    dim: usize,
    n: usize,
    gram: Vec<f64>,
    xty: Vec<f64>,
}

impl GramSystem {
    pub fn from_design(x: &Matrix, y: &[f64]) -> Result<Self> {
        Ok(Self::from_stats(&SufficientStats::from_design(x, y)?))
    }

    pub fn from_stats(stats: &SufficientStats) -> Self {
        GramSystem {
            dim: stats.dim(),
            n: stats.n() as usize,
            gram: stats.gram().to_vec(),
            xty: stats.xty().to_vec(),
        }
    }

    /// Removes one sample's contribution (used to form fold training sets).
    fn remove_sample(&mut self, phi: &[f64], y: f64) {
        debug_assert_eq!(phi.len(), self.dim);
        for (i, &pi) in phi.iter().enumerate() {
            let row = &mut self.gram[i * self.dim..(i + 1) * self.dim];
            for (entry, &pj) in row.iter_mut().zip(phi) {
                *entry -= pi * pj;
            }
        }
        for (entry, &pi) in self.xty.iter_mut().zip(phi) {
            *entry -= pi * y;
        }
        self.n -= 1;
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn gram_row(&self, j: usize) -> &[f64] {
        &self.gram[j * self.dim..(j + 1) * self.dim]
    }

    pub fn diag(&self, j: usize) -> f64 {
        self.gram[j * self.dim + j]
    }

    pub fn xty(&self) -> &[f64] {
        &self.xty
    }
}

fn check_design(x: &Matrix, y: &[f64]) -> Result<()> {
    if x.rows() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.rows(), got: y.len() });
    }
    if x.rows() == 0 {
        return Err(Error::Empty("training rows"));
    }
    Ok(())
}

fn check_penalty(penalty: f64) -> Result<()> {
    if !penalty.is_finite() || penalty < 0.0 {
        return Err(Error::InvalidParameter("penalty must be finite and nonnegative".into()));
    }
    Ok(())
}

fn ridge_solve(system: &GramSystem, penalty: f64, unpenalized: usize) -> Result<Vec<f64>> {
    let p = system.dim();
    let mut lhs = DMatrix::from_fn(p, p, |i, j| system.gram_row(i)[j]);
    for j in unpenalized..p {
        lhs[(j, j)] += penalty;
    }
    let chol = lhs.cholesky().ok_or(Error::SingularSystem("ridge normal equations"))?;
    let w = chol.solve(&DVector::from_column_slice(system.xty()));
    Ok(w.iter().cloned().collect())
}

#[inline]
fn soft_threshold(value: f64, at: f64) -> f64 {
    if value > at {
        value - at
    } else if value < -at {
        value + at
    } else {
        0.0
    }
}

/// Cyclic coordinate descent on the Gram system, warm-started from
/// `weights`. Runs until the largest weight change in a full pass drops
/// below `LASSO_TOL` (or the cycle cap).
fn lasso_solve(system: &GramSystem, penalty: f64, unpenalized: usize, weights: &mut [f64]) {
    let p = system.dim();
    let threshold = system.n() as f64 * penalty / 2.0;
    // Residual correlations xty - Gram w for the warm start.
    let mut resid_corr: Vec<f64> = (0..p)
        .map(|j| system.xty()[j] - dot(system.gram_row(j), weights))
        .collect();
    for _ in 0..LASSO_MAX_CYCLES {
        let mut max_change = 0.0f64;
        for j in 0..p {
            let diag = system.diag(j);
            if diag <= 0.0 {
                continue;
            }
            let old = weights[j];
            let corr = resid_corr[j] + diag * old;
            let new = if j < unpenalized { corr / diag } else { soft_threshold(corr, threshold) / diag };
            let delta = old - new;
            if delta != 0.0 {
                axpy(delta, system.gram_row(j), &mut resid_corr);
                weights[j] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        if max_change < LASSO_TOL {
            break;
        }
    }
}

/// Ridge regression with the mean block left unpenalized. `penalty = 0`
/// gives ordinary least squares and errors on singular designs.
pub fn ridge_fit(x: &Matrix, y: &[f64], penalty: f64, unpenalized: usize) -> Result<Vec<f64>> {
    check_design(x, y)?;
    check_penalty(penalty)?;
    ridge_solve(&GramSystem::from_design(x, y)?, penalty, unpenalized)
}

/// Lasso via cyclic coordinate descent from a cold start.
pub fn lasso_fit(x: &Matrix, y: &[f64], penalty: f64, unpenalized: usize) -> Result<Vec<f64>> {
    check_design(x, y)?;
    check_penalty(penalty)?;
    let system = GramSystem::from_design(x, y)?;
    let mut weights = vec![0.0; system.dim()];
    lasso_solve(&system, penalty, unpenalized, &mut weights);
    Ok(weights)
}

/// Fits whole penalty grids on a Gram system; implementations may exploit
/// ordering (the grid always arrives sorted ascending) for warm starts.
pub trait PathFitter {
    /// One weight vector per grid entry, aligned with the grid.
    fn fit_path(&self, system: &GramSystem, grid: &[f64]) -> Result<Vec<Vec<f64>>>;
}

/// Ridge path: independent factorizations per penalty.
pub struct RidgePath {
    pub unpenalized: usize,
}

impl PathFitter for RidgePath {
    fn fit_path(&self, system: &GramSystem, grid: &[f64]) -> Result<Vec<Vec<f64>>> {
        grid.iter().map(|&penalty| ridge_solve(system, penalty, self.unpenalized)).collect()
    }
}

/// Lasso path: descends the grid from the strongest penalty, warm-starting
/// each fit from the previous solution.
pub struct LassoPath {
    pub unpenalized: usize,
}

impl PathFitter for LassoPath {
    fn fit_path(&self, system: &GramSystem, grid: &[f64]) -> Result<Vec<Vec<f64>>> {
        let mut weights = vec![0.0; system.dim()];
        let mut path: Vec<Vec<f64>> = Vec::with_capacity(grid.len());
        for &penalty in grid.iter().rev() {
            lasso_solve(system, penalty, self.unpenalized, &mut weights);
            path.push(weights.clone());
        }
        path.reverse();
        Ok(path)
    }
}

/// Ten log-spaced ridge penalties bracketing the average column energy,
/// from 1e-4 to 1e4 times `trace(Gram) / p`.
pub fn default_ridge_grid(x: &Matrix) -> Result<Vec<f64>> {
    if x.rows() == 0 || x.cols() == 0 {
        return Err(Error::Empty("design matrix"));
    }
    let trace: f64 = x.data().iter().map(|v| v * v).sum();
    let center = trace / x.cols() as f64;
    if center <= 0.0 {
        return Err(Error::InvalidParameter("design matrix is identically zero".into()));
    }
    Ok(log_spaced(center * 1e-4, center * 1e4, 10))
}

/// Ten log-spaced lasso penalties from 1e-3 to 1 times the smallest penalty
/// that zeroes every penalized coordinate, `2 ||Phi^T y||_inf / n`.
pub fn default_lasso_grid(x: &Matrix, y: &[f64]) -> Result<Vec<f64>> {
    check_design(x, y)?;
    let system = GramSystem::from_design(x, y)?;
    let max_corr = system.xty().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max_corr <= 0.0 {
        return Err(Error::InvalidParameter("targets are uncorrelated with every column".into()));
    }
    let top = 2.0 * max_corr / system.n() as f64;
    Ok(log_spaced(top * 1e-3, top, 10))
}

fn log_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let ratio = (hi / lo).ln();
    (0..count).map(|i| lo * (ratio * i as f64 / (count - 1) as f64).exp()).collect()
}

/// K-fold cross-validation settings. Penalty grids may contain repeats
/// (they are deduplicated by the tie rule, which prefers the strongest
/// penalty among equal risks).
#[derive(Clone, Debug)]
pub struct CvConfig {
    pub folds: usize,
    pub grid: Vec<f64>,
    pub seed: u64,
}

impl CvConfig {
    pub fn new(grid: Vec<f64>) -> Result<Self> {
        let config = CvConfig { folds: 10, grid, seed: 0 };
        config.validate()?;
        Ok(config)
    }

    pub fn with_folds(mut self, folds: usize) -> Self {
        self.folds = folds;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::InvalidParameter("cross-validation needs at least 2 folds".into()));
        }
        if self.grid.is_empty() {
            return Err(Error::Empty("penalty grid"));
        }
        if self.grid.iter().any(|g| !g.is_finite() || *g <= 0.0) {
            return Err(Error::InvalidParameter("penalty grid must be positive and finite".into()));
        }
        Ok(())
    }
}

/// Outcome of a cross-validated fit.
#[derive(Clone, Debug)]
pub struct CvSelection {
    /// Chosen penalty (largest among risk ties).
    pub penalty: f64,
    /// Grid as evaluated, sorted ascending.
    pub grid: Vec<f64>,
    /// Estimated prediction risk per grid entry.
    pub risks: Vec<f64>,
    /// Weights refit on the full data at the chosen penalty.
    pub weights: Vec<f64>,
}

/// Deterministic K-fold partition of `0..n`: a seeded shuffle chopped into
/// contiguous chunks whose sizes differ by at most one.
pub fn cv_folds(n: usize, folds: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let base = n / folds;
    let extra = n % folds;
    let mut out = Vec::with_capacity(folds);
    let mut start = 0;
    for k in 0..folds {
        let size = base + usize::from(k < extra);
        out.push(indices[start..start + size].to_vec());
        start += size;
    }
    out
}

/// K-fold cross-validation over a penalty grid: estimates held-out squared
/// error for every grid value, picks the minimizer (ties to the strongest
/// penalty) and refits on the full data.
pub fn cv_select(
    x: &Matrix,
    y: &[f64],
    config: &CvConfig,
    fitter: &dyn PathFitter,
) -> Result<CvSelection> {
    check_design(x, y)?;
    config.validate()?;
    let n = x.rows();
    if n < config.folds {
        return Err(Error::TooFewSamples { n, needed: config.folds });
    }
    let mut grid = config.grid.clone();
    grid.sort_unstable_by(|a, b| a.partial_cmp(b).expect("validated finite"));

    let full = GramSystem::from_design(x, y)?;
    let mut sq_errors = vec![0.0f64; grid.len()];
    for fold in cv_folds(n, config.folds, config.seed) {
        let mut train = full.clone();
        for &i in &fold {
            train.remove_sample(x.row(i), y[i]);
        }
        let path = fitter.fit_path(&train, &grid)?;
        for (g, weights) in path.iter().enumerate() {
            for &i in &fold {
                let err = y[i] - dot(x.row(i), weights);
                sq_errors[g] += err * err;
            }
        }
    }
    let risks: Vec<f64> = sq_errors.iter().map(|e| e / n as f64).collect();
    let best = select_from_risks(&grid, &risks);
    let weights = fitter.fit_path(&full, &[grid[best]])?.remove(0);
    Ok(CvSelection { penalty: grid[best], grid, risks, weights })
}

/// Index of the risk minimizer; ascending scan replacing on `<=` so ties
/// resolve to the largest penalty.
fn select_from_risks(grid: &[f64], risks: &[f64]) -> usize {
    debug_assert_eq!(grid.len(), risks.len());
    let mut best = 0;
    for g in 1..grid.len() {
        if risks[g] <= risks[best] {
            best = g;
        }
    }
    best
}
