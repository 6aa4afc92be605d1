//! Split-conformal prediction intervals.
//!
//! Train a point predictor on one half of the data, collect absolute
//! residuals on the held-out half, and use an order statistic of those
//! residuals as a symmetric interval half-width. If the calibration
//! residuals and a fresh point's residual are exchangeable, the interval
//! `[y_hat - r, y_hat + r]` covers the truth with probability at least the
//! requested level, with no assumptions on the predictor or the noise.
//!
//! The order statistic is the `k`-th smallest calibration residual with
//! `k = ceil((n2 + 1) * coverage)`; when `k` exceeds the calibration size
//! the finite sample cannot certify the level and the interval is reported
//! as unbounded rather than silently truncated.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Random half split of `0..n`: shuffled indices for the fitting half and
/// the calibration half. The calibration half receives the extra row when
/// `n` is odd. Deterministic in `seed`.
pub fn split_indices(n: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::TooFewSamples { n, needed: 2 });
    }
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let calib = indices.split_off(n / 2);
    Ok((indices, calib))
}

/// Interval half-width calibrated from held-out residuals.
#[derive(Clone, Debug)]
pub struct ConformalCalibrator {
    coverage: f64,
    calibration_size: usize,
    rank: usize,
    half_width: Option<f64>,
}

impl ConformalCalibrator {
    /// Builds the calibrator from absolute residuals of the held-out half.
    pub fn calibrate(abs_residuals: &[f64], coverage: f64) -> Result<Self> {
        if !(coverage > 0.0 && coverage < 1.0) {
            return Err(Error::CoverageOutOfRange(coverage));
        }
        if abs_residuals.is_empty() {
            return Err(Error::Empty("calibration residuals"));
        }
        if abs_residuals.iter().any(|r| !r.is_finite()) {
            return Err(Error::NonFinite("calibration residual"));
        }
        if abs_residuals.iter().any(|r| *r < 0.0) {
            return Err(Error::InvalidParameter("calibration residuals must be nonnegative".into()));
        }
        let n2 = abs_residuals.len();
        let rank = (((n2 + 1) as f64) * coverage).ceil() as usize;
        let half_width = if rank > n2 {
            None
        } else {
            let mut sorted = abs_residuals.to_vec();
            sorted.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite residuals"));
            Some(sorted[rank - 1])
        };
        Ok(ConformalCalibrator { coverage, calibration_size: n2, rank, half_width })
    }

    pub fn coverage(&self) -> f64 {
        self.coverage
    }

    pub fn calibration_size(&self) -> usize {
        self.calibration_size
    }

    /// Rank `k` of the order statistic backing the interval.
    pub fn rank(&self) -> usize {
        self.rank
    }

    /// `None` when the calibration set is too small for the level.
    pub fn half_width(&self) -> Option<f64> {
        self.half_width
    }

    pub fn is_unbounded(&self) -> bool {
        self.half_width.is_none()
    }

    /// Symmetric interval around a point prediction.
    pub fn interval(&self, y_hat: f64) -> Result<(f64, f64)> {
        if !y_hat.is_finite() {
            return Err(Error::NonFinite("point prediction"));
        }
        match self.half_width {
            Some(r) => Ok((y_hat - r, y_hat + r)),
            None => Err(Error::UnboundedInterval {
                needed: self.rank,
                available: self.calibration_size,
            }),
        }
    }
}
