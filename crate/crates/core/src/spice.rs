//! Online solver for square-root-penalized least squares.
//!
//! The fitted weights minimize
//!
//! ```text
//! V(w) = sqrt(||y - Phi w||^2 / n) + (scale / n) * sum_{j > u} ||col_j|| |w_j|
//! ```
//!
//! where the first `u` coordinates (the mean block) are unpenalized and each
//! penalty weight is the Euclidean norm of the corresponding design column.
//! This self-scaling penalty needs no tuning parameter: the column norms
//! adapt it to the data, and `scale = 1` (the default) is the plain
//! criterion. Because `V` depends on the data only through the sufficient
//! statistics of [`crate::stats::SufficientStats`], the solver can run over
//! a stream: each arriving sample updates the moments and then a few cyclic
//! coordinate-descent passes re-polish the weights, warm-started from the
//! previous sample's solution. Memory stays `O(p^2)` forever.
//!
//! Each coordinate visit solves its one-dimensional subproblem exactly in
//! closed form, so the objective never increases along a pass. The solver
//! tracks the squared residual and the residual correlations incrementally;
//! both are recomputed from the moments on a configurable cadence to shed
//! accumulated rounding drift.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::features::FeatureMap;
use crate::mat::{axpy, dot};
use crate::stats::SufficientStats;
use crate::{Error, Result};

/// Solver knobs.
///
/// `cycles_per_sample` is the number of full coordinate passes run after
/// each streamed sample. `refresh_cycles` bounds how many passes may reuse
/// the incrementally maintained residual quantities before an exact
/// recompute. `penalty_scale` multiplies the penalty; leave it at 1 unless
/// you want the inflated variant of [`gaussian_inflation`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpiceConfig {
    pub cycles_per_sample: usize,
    pub refresh_cycles: u64,
    pub penalty_scale: f64,
}

impl Default for SpiceConfig {
    fn default() -> Self {
        SpiceConfig { cycles_per_sample: 3, refresh_cycles: 100, penalty_scale: 1.0 }
    }
}

impl SpiceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cycles_per_sample == 0 {
            return Err(Error::InvalidParameter("cycles_per_sample must be at least 1".into()));
        }
        if self.refresh_cycles == 0 {
            return Err(Error::InvalidParameter("refresh_cycles must be at least 1".into()));
        }
        if !self.penalty_scale.is_finite() || self.penalty_scale <= 0.0 {
            return Err(Error::InvalidParameter("penalty_scale must be finite and positive".into()));
        }
        Ok(())
    }
}

/// Penalty multiplier `c * sqrt(2 ln p + delta)` that turns the fitted
/// intervals conservative for Gaussian noise at confidence `1 - 2 exp(-delta/2)`.
///
/// Note that penalized coordinates only activate once `n > scale^2`, so an
/// inflated penalty keeps the model at zero slightly longer.
pub fn gaussian_inflation(c: f64, delta: f64, dim: usize) -> Result<f64> {
    if !(c.is_finite() && c > 0.0) || !(delta.is_finite() && delta >= 0.0) || dim == 0 {
        return Err(Error::InvalidParameter(
            "inflation needs c > 0, delta >= 0 and a positive dimension".into(),
        ));
    }
    Ok(c * (2.0 * (dim as f64).ln() + delta).sqrt())
}

/// Exact minimizer of the scalar subproblem for one penalized coordinate,
///
/// ```text
/// r  ->  sqrt(resid_energy - 2 corr r + col_energy r^2)
///          + scale * sqrt(col_energy / n) * |r|
/// ```
///
/// `resid_energy` is the squared residual with this coordinate zeroed and
/// `corr` the correlation between the column and that partial residual. The
/// minimizer is nonzero exactly when the data term's slope at zero beats the
/// penalty's, which reduces to the threshold test below; Cauchy-Schwarz
/// guarantees `resid_energy * col_energy >= corr^2` up to rounding, hence
/// the clamp.
fn penalized_minimizer(resid_energy: f64, col_energy: f64, corr: f64, n: f64, scale: f64) -> f64 {
    if col_energy <= 0.0 {
        return 0.0;
    }
    let s2 = scale * scale;
    if n <= s2 {
        // With a single sample (or an over-inflated penalty) the threshold
        // can never pass.
        return 0.0;
    }
    let mag = corr.abs();
    let excess = (resid_energy * col_energy - mag * mag).max(0.0);
    if (n - s2).sqrt() * mag > scale * excess.sqrt() {
        let r = (mag - scale * (excess / (n - s2)).sqrt()) / col_energy;
        corr.signum() * r.max(0.0)
    } else {
        0.0
    }
}

/// Mutable solver state on top of a [`SufficientStats`] accumulator.
///
/// Holds the current weights plus the incrementally maintained squared
/// residual and residual correlations. The state is only meaningful against
/// the statistics it was last refreshed with; [`SpiceModel`] keeps the two
/// in lockstep.
#[derive(Clone, Debug)]
pub struct SpiceState {
    weights: Vec<f64>,
    unpenalized: usize,
    /// `||y - Phi w||^2`, maintained incrementally, clamped at zero.
    rss: f64,
    /// `Phi^T (y - Phi w)`, maintained incrementally.
    resid_corr: Vec<f64>,
    cycles_since_refresh: u64,
}

impl SpiceState {
    pub fn new(dim: usize, unpenalized: usize) -> Self {
        assert!(unpenalized <= dim, "mean block cannot exceed the dimension");
        SpiceState {
            weights: vec![0.0; dim],
            unpenalized,
            rss: 0.0,
            resid_corr: vec![0.0; dim],
            cycles_since_refresh: 0,
        }
    }

    /// Starts from existing weights (e.g. loaded from disk); call
    /// [`SpiceState::refresh`] before updating coordinates.
    pub fn with_weights(weights: Vec<f64>, unpenalized: usize) -> Self {
        assert!(unpenalized <= weights.len(), "mean block cannot exceed the dimension");
        let dim = weights.len();
        SpiceState { weights, unpenalized, rss: 0.0, resid_corr: vec![0.0; dim], cycles_since_refresh: 0 }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn unpenalized(&self) -> usize {
        self.unpenalized
    }

    /// Maintained squared residual; exact right after a refresh, within
    /// rounding drift otherwise.
    pub fn squared_residual(&self) -> f64 {
        self.rss
    }

    pub fn residual_correlations(&self) -> &[f64] {
        &self.resid_corr
    }

    /// Recomputes the residual quantities exactly from the moments.
    pub fn refresh(&mut self, stats: &SufficientStats) {
        assert_eq!(stats.dim(), self.weights.len(), "state and statistics dimensions differ");
        let xty = stats.xty();
        let mut quad = 0.0;
        let mut lin = 0.0;
        for (j, slot) in self.resid_corr.iter_mut().enumerate() {
            let corr = xty[j] - dot(stats.gram_row(j), &self.weights);
            *slot = corr;
            let wj = self.weights[j];
            quad += wj * (xty[j] - corr);
            lin += wj * xty[j];
        }
        self.rss = (stats.yty() + quad - 2.0 * lin).max(0.0);
        self.cycles_since_refresh = 0;
    }

    /// Replaces coordinate `j` by the exact minimizer of its scalar
    /// subproblem and patches the residual quantities (squared residual
    /// first, since its update reads the pre-update correlation). Returns
    /// the new weight.
    pub fn update_coordinate(&mut self, stats: &SufficientStats, j: usize, penalty_scale: f64) -> f64 {
        let col_energy = stats.gram_at(j, j);
        let old = self.weights[j];
        let corr = self.resid_corr[j] + col_energy * old;
        let new = if j < self.unpenalized {
            if col_energy > 0.0 {
                corr / col_energy
            } else {
                0.0
            }
        } else {
            let resid_energy = (self.rss + col_energy * old * old + 2.0 * old * self.resid_corr[j]).max(0.0);
            penalized_minimizer(resid_energy, col_energy, corr, stats.n() as f64, penalty_scale)
        };
        let delta = old - new;
        if delta != 0.0 {
            self.rss += col_energy * delta * delta + 2.0 * delta * self.resid_corr[j];
            if self.rss < 0.0 {
                self.rss = 0.0;
            }
            axpy(delta, stats.gram_row(j), &mut self.resid_corr);
            self.weights[j] = new;
        }
        new
    }

    /// One full coordinate pass in index order; returns the largest absolute
    /// weight change. Runs the periodic exact refresh when due.
    pub fn run_cycle(&mut self, stats: &SufficientStats, config: &SpiceConfig) -> f64 {
        if self.cycles_since_refresh >= config.refresh_cycles {
            self.refresh(stats);
        }
        let mut max_change = 0.0f64;
        for j in 0..self.weights.len() {
            let old = self.weights[j];
            let new = self.update_coordinate(stats, j, config.penalty_scale);
            max_change = max_change.max((new - old).abs());
        }
        self.cycles_since_refresh += 1;
        max_change
    }
}

/// Result of an iterate-until-stable run.
#[derive(Clone, Copy, Debug)]
pub struct Convergence {
    pub cycles: usize,
    pub last_change: f64,
    pub converged: bool,
}

/// Runs coordinate descent on fixed statistics from a cold start until the
/// largest per-cycle weight change drops below `tol` (or `max_cycles` is
/// hit). This is the batch reference against which the streaming path is
/// tested, and the solver used by the verification oracles.
pub fn solve_offline(
    stats: &SufficientStats,
    unpenalized: usize,
    config: &SpiceConfig,
    tol: f64,
    max_cycles: usize,
) -> (Vec<f64>, Convergence) {
    let mut state = SpiceState::new(stats.dim(), unpenalized);
    state.refresh(stats);
    let conv = iterate_to_tolerance(&mut state, stats, config, tol, max_cycles);
    (state.weights, conv)
}

fn iterate_to_tolerance(
    state: &mut SpiceState,
    stats: &SufficientStats,
    config: &SpiceConfig,
    tol: f64,
    max_cycles: usize,
) -> Convergence {
    let mut last = f64::INFINITY;
    for cycle in 1..=max_cycles {
        last = state.run_cycle(stats, config);
        if last < tol {
            return Convergence { cycles: cycle, last_change: last, converged: true };
        }
    }
    Convergence { cycles: max_cycles, last_change: last, converged: false }
}

/// Value of the fitted criterion at `weights`; errors before any data has
/// been ingested.
pub fn objective(
    stats: &SufficientStats,
    weights: &[f64],
    unpenalized: usize,
    penalty_scale: f64,
) -> Result<f64> {
    if stats.n() == 0 {
        return Err(Error::Empty("no samples ingested"));
    }
    let n = stats.n() as f64;
    let rss = stats.squared_residual(weights)?;
    let mut penalty = 0.0;
    for (j, wj) in weights.iter().enumerate().skip(unpenalized) {
        penalty += stats.gram_at(j, j).max(0.0).sqrt() * wj.abs();
    }
    Ok((rss / n).sqrt() + penalty_scale * penalty / n)
}

/// Noise level and per-coordinate scale estimates implied by a fit:
/// the root-mean-square residual, and `|w_j|` divided by the column norm for
/// each penalized coordinate. These are free byproducts of the solution and
/// feed the moment-model equivalence checks.
pub fn noise_and_scale_estimates(
    stats: &SufficientStats,
    weights: &[f64],
    unpenalized: usize,
) -> Result<(f64, Vec<f64>)> {
    if stats.n() == 0 {
        return Err(Error::Empty("no samples ingested"));
    }
    let n = stats.n() as f64;
    let noise = (stats.squared_residual(weights)? / n).sqrt();
    let scales = (unpenalized..weights.len())
        .map(|j| {
            let norm = stats.gram_at(j, j).max(0.0).sqrt();
            if norm > 0.0 {
                weights[j].abs() / norm
            } else {
                0.0
            }
        })
        .collect();
    Ok((noise, scales))
}

const MODEL_FILE_VERSION: u64 = 1;

/// On-disk form of a fitted model. Field order is the file schema.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u64,
    feature_map: FeatureMap,
    n: u64,
    kappa: f64,
    gamma: Vec<f64>,
    rho: Vec<f64>,
    w: Vec<f64>,
    u: usize,
    #[serde(rename = "L")]
    cycles_per_sample: usize,
    #[serde(default = "unit_scale", skip_serializing_if = "is_unit_scale")]
    penalty_scale: f64,
}

fn unit_scale() -> f64 {
    1.0
}

#[allow(clippy::trivially_copy_pass_by_ref)]
fn is_unit_scale(s: &f64) -> bool {
    *s == 1.0
}

/// Streaming regression model: a feature map, the accumulated moments and
/// the current solver state.
///
/// Feed samples with [`SpiceModel::step`]; predictions are available at any
/// point. Serialization captures the moments and weights exactly (floats are
/// written in shortest round-trip form), so a model saved mid-stream and
/// resumed continues bit-for-bit like an uninterrupted run.
#[derive(Clone, Debug)]
pub struct SpiceModel {
    map: FeatureMap,
    config: SpiceConfig,
    stats: SufficientStats,
    state: SpiceState,
    phi_buf: Vec<f64>,
}

impl SpiceModel {
    pub fn new(map: FeatureMap, config: SpiceConfig) -> Result<Self> {
        config.validate()?;
        let dim = map.output_len();
        let unpenalized = map.mean_len();
        Ok(SpiceModel {
            map,
            config,
            stats: SufficientStats::new(dim),
            state: SpiceState::new(dim, unpenalized),
            phi_buf: Vec::with_capacity(dim),
        })
    }

    pub fn feature_map(&self) -> &FeatureMap {
        &self.map
    }

    pub fn config(&self) -> &SpiceConfig {
        &self.config
    }

    pub fn stats(&self) -> &SufficientStats {
        &self.stats
    }

    pub fn state(&self) -> &SpiceState {
        &self.state
    }

    pub fn weights(&self) -> &[f64] {
        self.state.weights()
    }

    pub fn n(&self) -> u64 {
        self.stats.n()
    }

    /// Absorbs one `(x, y)` sample and re-polishes the weights with the
    /// configured number of coordinate passes.
    pub fn step(&mut self, x: &[f64], y: f64) -> Result<()> {
        let mut phi = std::mem::take(&mut self.phi_buf);
        let result = self.map.evaluate_into(x, &mut phi);
        let result = result.and_then(|()| self.step_features(&phi, y));
        self.phi_buf = phi;
        result
    }

    /// Like [`SpiceModel::step`] for callers that already hold the regressor
    /// vector.
    pub fn step_features(&mut self, phi: &[f64], y: f64) -> Result<()> {
        self.stats.ingest(phi, y)?;
        self.state.refresh(&self.stats);
        for _ in 0..self.config.cycles_per_sample {
            self.state.run_cycle(&self.stats, &self.config);
        }
        Ok(())
    }

    /// Absorbs a sample into the moments without touching the weights; pair
    /// with [`SpiceModel::fit_to_convergence`] for batch fitting.
    pub fn ingest(&mut self, x: &[f64], y: f64) -> Result<()> {
        let mut phi = std::mem::take(&mut self.phi_buf);
        let result = self.map.evaluate_into(x, &mut phi);
        let result = result.and_then(|()| self.stats.ingest(&phi, y));
        self.phi_buf = phi;
        result
    }

    /// Coordinate passes until the largest weight change falls below `tol`.
    pub fn fit_to_convergence(&mut self, tol: f64, max_cycles: usize) -> Convergence {
        self.state.refresh(&self.stats);
        iterate_to_tolerance(&mut self.state, &self.stats, &self.config, tol, max_cycles)
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        let phi = self.map.evaluate(x)?;
        self.predict_features(&phi)
    }

    pub fn predict_features(&self, phi: &[f64]) -> Result<f64> {
        if phi.len() != self.state.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.state.weights.len(),
                got: phi.len(),
            });
        }
        Ok(dot(phi, &self.state.weights))
    }

    pub fn objective(&self) -> Result<f64> {
        objective(&self.stats, self.state.weights(), self.state.unpenalized(), self.config.penalty_scale)
    }

    /// See [`noise_and_scale_estimates`].
    pub fn theta_estimates(&self) -> Result<(f64, Vec<f64>)> {
        noise_and_scale_estimates(&self.stats, self.state.weights(), self.state.unpenalized())
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            version: MODEL_FILE_VERSION,
            feature_map: self.map.clone(),
            n: self.stats.n(),
            kappa: self.stats.yty(),
            gamma: self.stats.gram().to_vec(),
            rho: self.stats.xty().to_vec(),
            w: self.state.weights().to_vec(),
            u: self.state.unpenalized(),
            cycles_per_sample: self.config.cycles_per_sample,
            penalty_scale: self.config.penalty_scale,
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(json)?;
        if file.version != MODEL_FILE_VERSION {
            return Err(Error::ModelVersion { found: file.version });
        }
        let dim = file.feature_map.output_len();
        if file.u != file.feature_map.mean_len() {
            return Err(Error::InvalidParameter(format!(
                "mean block length {} disagrees with the feature map's {}",
                file.u,
                file.feature_map.mean_len()
            )));
        }
        if file.w.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: file.w.len() });
        }
        if file.w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("stored weights"));
        }
        let config = SpiceConfig {
            cycles_per_sample: file.cycles_per_sample,
            penalty_scale: file.penalty_scale,
            ..SpiceConfig::default()
        };
        config.validate()?;
        let stats = SufficientStats::from_parts(dim, file.gamma, file.rho, file.kappa, file.n)?;
        let mut state = SpiceState::with_weights(file.w, file.u);
        state.refresh(&stats);
        Ok(SpiceModel { map: file.feature_map, config, stats, state, phi_buf: Vec::with_capacity(dim) })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let json = std::fs::read_to_string(path)?;
        Self::from_json(&json)
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::features::{FeatureMap, MeanKind};

    fn stats_from(rows: &[(&[f64], f64)], dim: usize) -> SufficientStats {
        let mut stats = SufficientStats::new(dim);
        for (phi, y) in rows {
            stats.ingest(phi, *y).unwrap();
        }
        stats
    }

    #[test]
    fn unpenalized_coordinate_solves_least_squares() {
        // Intercept-only stream: two targets 1 and 2 average to 1.5.
        let stats = stats_from(&[(&[1.0], 1.0), (&[1.0], 2.0)], 1);
        let mut state = SpiceState::new(1, 1);
        state.refresh(&stats);
        let w = state.update_coordinate(&stats, 0, 1.0);
        assert_abs_diff_eq!(w, 1.5, epsilon = 1e-15);
        assert_abs_diff_eq!(state.squared_residual(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn penalized_minimizer_matches_grid_search() {
        // Dense scan of the scalar objective as an independent oracle.
        let (resid_energy, col_energy, corr, n) = (1.0, 1.0, 0.9, 5.0);
        let closed = penalized_minimizer(resid_energy, col_energy, corr, n, 1.0);
        assert_abs_diff_eq!(closed, 0.6821, epsilon = 1e-4);

        let value = |r: f64| {
            (resid_energy - 2.0 * corr * r + col_energy * r * r).max(0.0).sqrt()
                + (col_energy / n).sqrt() * r.abs()
        };
        let mut best = (f64::INFINITY, 0.0);
        let steps = 2_000_000;
        for i in 0..=steps {
            let r = 2.0 * i as f64 / steps as f64;
            let v = value(r);
            if v < best.0 {
                best = (v, r);
            }
        }
        assert_abs_diff_eq!(closed, best.1, epsilon = 2e-6);
        // Negative correlation flips the sign, same magnitude.
        let flipped = penalized_minimizer(resid_energy, col_energy, -corr, n, 1.0);
        assert_abs_diff_eq!(flipped, -closed, epsilon = 1e-15);
    }

    #[test]
    fn weak_correlation_is_thresholded_to_zero() {
        // corr^2 * n below resid_energy * col_energy: slope at zero favors
        // staying at zero.
        assert_eq!(penalized_minimizer(1.0, 1.0, 0.4, 5.0, 1.0), 0.0);
        // A single sample can never activate a penalized coordinate.
        assert_eq!(penalized_minimizer(1.0, 1.0, 0.999, 1.0, 1.0), 0.0);
        // Zero column energy is skipped.
        assert_eq!(penalized_minimizer(1.0, 0.0, 0.5, 10.0, 1.0), 0.0);
    }

    #[test]
    fn larger_penalty_scale_shrinks_harder() {
        let base = penalized_minimizer(1.0, 1.0, 0.9, 5.0, 1.0);
        let inflated = penalized_minimizer(1.0, 1.0, 0.9, 5.0, 1.5);
        assert!(inflated.abs() < base.abs());
        // Scale so large that n <= scale^2 kills the coordinate outright.
        assert_eq!(penalized_minimizer(1.0, 1.0, 0.9, 5.0, 3.0), 0.0);
    }

    #[test]
    fn gaussian_inflation_matches_formula() {
        let s = gaussian_inflation(1.0, 4.0, 101).unwrap();
        assert_abs_diff_eq!(s, (2.0 * 101f64.ln() + 4.0).sqrt(), epsilon = 1e-15);
        assert!(gaussian_inflation(0.0, 4.0, 101).is_err());
        assert!(gaussian_inflation(1.0, -1.0, 101).is_err());
    }

    #[test]
    fn objective_on_a_single_sample() {
        // One sample phi = [1], y = 2, all-penalized, w = 2: residual term
        // vanishes and the penalty contributes 1 * |2| / 1.
        let stats = stats_from(&[(&[1.0], 2.0)], 1);
        assert_abs_diff_eq!(objective(&stats, &[2.0], 0, 1.0).unwrap(), 2.0, epsilon = 1e-15);
        let empty = SufficientStats::new(1);
        assert!(objective(&empty, &[0.0], 0, 1.0).is_err());
    }

    #[test]
    fn zero_targets_keep_zero_weights() {
        let map = FeatureMap::linear(2, MeanKind::Constant).unwrap();
        let mut model = SpiceModel::new(map, SpiceConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let x = [rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5];
            model.step(&x, 0.0).unwrap();
        }
        assert!(model.weights().iter().all(|w| *w == 0.0));
    }

    fn random_instance(
        rng: &mut ChaCha8Rng,
        n: usize,
        p: usize,
        unpenalized: usize,
    ) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut w_true = vec![0.0; p];
        for w in w_true.iter_mut().take(unpenalized + 2) {
            *w = rng.random_range(-2.0..2.0);
        }
        let mut rows = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let mut phi: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
            if unpenalized > 0 {
                phi[0] = 1.0;
            }
            let noise: f64 = rng.random_range(-0.2..0.2);
            ys.push(dot(&phi, &w_true) + noise);
            rows.push(phi);
        }
        (rows, ys)
    }

    #[test]
    fn objective_never_increases_along_coordinate_updates() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let (rows, ys) = random_instance(&mut rng, 40, 6, 1);
            let mut stats = SufficientStats::new(6);
            for (phi, y) in rows.iter().zip(&ys) {
                stats.ingest(phi, *y).unwrap();
            }
            let mut state = SpiceState::new(6, 1);
            state.refresh(&stats);
            let mut prev = objective(&stats, state.weights(), 1, 1.0).unwrap();
            for _ in 0..30 {
                for j in 0..6 {
                    state.update_coordinate(&stats, j, 1.0);
                    let now = objective(&stats, state.weights(), 1, 1.0).unwrap();
                    assert!(
                        now <= prev + 1e-10 * prev.max(1.0),
                        "objective rose from {prev} to {now}"
                    );
                    prev = now;
                }
            }
        }
    }

    #[test]
    fn streaming_matches_batch_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (rows, ys) = random_instance(&mut rng, 60, 5, 1);
        let map = FeatureMap::linear(4, MeanKind::Constant).unwrap();

        let mut online = SpiceModel::new(map.clone(), SpiceConfig::default()).unwrap();
        for (phi, y) in rows.iter().zip(&ys) {
            online.step(&phi[1..], *y).unwrap();
        }
        online.fit_to_convergence(1e-12, 100_000);

        let mut stats = SufficientStats::new(5);
        for (phi, y) in rows.iter().zip(&ys) {
            stats.ingest(phi, *y).unwrap();
        }
        let (batch, conv) = solve_offline(&stats, 1, &SpiceConfig::default(), 1e-12, 100_000);
        assert!(conv.converged);
        for (a, b) in online.weights().iter().zip(&batch) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-8);
        }
    }

    #[test]
    fn maintained_residual_tracks_exact_recompute() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (rows, ys) = random_instance(&mut rng, 80, 8, 2);
        let mut stats = SufficientStats::new(8);
        for (phi, y) in rows.iter().zip(&ys) {
            stats.ingest(phi, *y).unwrap();
        }
        let mut state = SpiceState::new(8, 2);
        state.refresh(&stats);
        let config = SpiceConfig { refresh_cycles: u64::MAX, ..SpiceConfig::default() };
        for _ in 0..500 {
            state.run_cycle(&stats, &config);
        }
        let exact = stats.squared_residual(state.weights()).unwrap();
        assert!(state.squared_residual() >= 0.0);
        assert_abs_diff_eq!(state.squared_residual(), exact, epsilon = 1e-9 * exact.max(1.0));
    }

    #[test]
    fn identically_zero_columns_stay_inactive() {
        let map = FeatureMap::linear(2, MeanKind::None).unwrap();
        let mut model = SpiceModel::new(map, SpiceConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..40 {
            let v: f64 = rng.random_range(-1.0..1.0);
            model.step(&[0.0, v], 2.0 * v).unwrap();
        }
        assert_eq!(model.weights()[0], 0.0);
        assert!(model.weights()[1].is_finite());
        assert!(model.weights()[1].abs() > 0.5);
    }

    #[test]
    fn theta_estimates_report_noise_and_scales() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let (rows, ys) = random_instance(&mut rng, 100, 5, 1);
        let map = FeatureMap::linear(4, MeanKind::Constant).unwrap();
        let mut model = SpiceModel::new(map, SpiceConfig::default()).unwrap();
        for (phi, y) in rows.iter().zip(&ys) {
            model.step(&phi[1..], *y).unwrap();
        }
        model.fit_to_convergence(1e-12, 100_000);
        let (noise, scales) = model.theta_estimates().unwrap();
        let n = model.n() as f64;
        let expected_noise =
            (model.stats().squared_residual(model.weights()).unwrap() / n).sqrt();
        assert_abs_diff_eq!(noise, expected_noise, epsilon = 1e-12);
        let norms = model.stats().column_norms();
        for (k, s) in scales.iter().enumerate() {
            let j = 1 + k;
            assert_abs_diff_eq!(*s, model.weights()[j].abs() / norms[j], epsilon = 1e-12);
        }
    }

    #[test]
    fn model_file_round_trips_byte_for_byte() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let map = FeatureMap::linear(3, MeanKind::Constant).unwrap();
        let mut model = SpiceModel::new(map, SpiceConfig::default()).unwrap();
        for _ in 0..30 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y = x[0] - 0.5 * x[2] + rng.random_range(-0.1..0.1);
            model.step(&x, y).unwrap();
        }
        let json = model.to_json().unwrap();
        let reloaded = SpiceModel::from_json(&json).unwrap();
        assert_eq!(reloaded.to_json().unwrap(), json);
        assert_eq!(reloaded.weights(), model.weights());
        assert_eq!(reloaded.n(), model.n());
    }

    #[test]
    fn resumed_stream_is_bitwise_identical_to_uninterrupted() {
        let map = FeatureMap::linear(3, MeanKind::Constant).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let samples: Vec<(Vec<f64>, f64)> = (0..30)
            .map(|_| {
                let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
                let y = 0.7 * x[1] + rng.random_range(-0.3..0.3);
                (x, y)
            })
            .collect();

        let mut straight = SpiceModel::new(map.clone(), SpiceConfig::default()).unwrap();
        for (x, y) in &samples {
            straight.step(x, *y).unwrap();
        }

        let mut first = SpiceModel::new(map, SpiceConfig::default()).unwrap();
        for (x, y) in &samples[..15] {
            first.step(x, *y).unwrap();
        }
        let mut resumed = SpiceModel::from_json(&first.to_json().unwrap()).unwrap();
        for (x, y) in &samples[15..] {
            resumed.step(x, *y).unwrap();
        }

        assert_eq!(resumed.weights(), straight.weights());
        assert_eq!(resumed.to_json().unwrap(), straight.to_json().unwrap());
    }

    #[test]
    fn rejects_foreign_or_corrupt_model_files() {
        let map = FeatureMap::linear(2, MeanKind::None).unwrap();
        let mut model = SpiceModel::new(map, SpiceConfig::default()).unwrap();
        model.step(&[1.0, 0.0], 1.0).unwrap();
        let json = model.to_json().unwrap();

        let future = json.replacen("\"version\":1", "\"version\":2", 1);
        assert!(matches!(
            SpiceModel::from_json(&future),
            Err(Error::ModelVersion { found: 2 })
        ));
        assert!(SpiceModel::from_json(&json[..json.len() / 2]).is_err());
        let poisoned = json.replacen("\"kappa\":1.0", "\"kappa\":null", 1);
        assert!(SpiceModel::from_json(&poisoned).is_err());
    }

    #[test]
    fn default_scale_is_omitted_from_the_file() {
        let map = FeatureMap::linear(2, MeanKind::None).unwrap();
        let model = SpiceModel::new(map.clone(), SpiceConfig::default()).unwrap();
        assert!(!model.to_json().unwrap().contains("penalty_scale"));

        let config = SpiceConfig { penalty_scale: 2.5, ..SpiceConfig::default() };
        let model = SpiceModel::new(map, config).unwrap();
        let json = model.to_json().unwrap();
        assert!(json.contains("\"penalty_scale\":2.5"));
        let back = SpiceModel::from_json(&json).unwrap();
        assert_eq!(back.config().penalty_scale, 2.5);
    }

    #[test]
    fn prediction_is_the_weight_inner_product() {
        let map = FeatureMap::linear(2, MeanKind::Constant).unwrap();
        let mut model = SpiceModel::new(map, SpiceConfig::default()).unwrap();
        assert_eq!(model.predict(&[4.0, 5.0]).unwrap(), 0.0);
        for i in 0..200 {
            let t = i as f64 / 40.0 - 2.0;
            model.step(&[t, -t], 1.0 + 2.0 * t).unwrap();
        }
        model.fit_to_convergence(1e-12, 50_000);
        let phi = [1.0, 0.5, -0.5];
        assert_abs_diff_eq!(
            model.predict(&[0.5, -0.5]).unwrap(),
            dot(&phi, model.weights()),
            epsilon = 1e-12
        );
    }
}
