//! Best-linear-predictor view of the regression model.
//!
//! Treat the weights as random with a diagonal prior: the mean-block
//! coefficients are free (improper prior), each basis coefficient has
//! variance `theta_k`, and observation noise has variance `theta_0`. Under
//! those moments the best linear predictor of `y(x)` given the training
//! targets has two equivalent forms:
//!
//! * combination weights `lambda(x)` on the training targets, built from the
//!   data covariance `Sigma = Psi Theta Psi^T + theta_0 I`,
//! * regression weights `(w0, w1)` applied to the regressors of `x`.
//!
//! The identity `lambda(x)^T y = u(x)^T w0 + psi(x)^T w1` holds for every
//! `x`, and predictions are invariant to rescaling all variances by a common
//! factor. Both facts are cheap, high-precision oracles for the streaming
//! solver: plugging the noise and scale estimates of a converged fit back in
//! here must reproduce its predictions.
//!
//! Everything here is straightforward dense linear algebra on `n x n`
//! systems; it is meant for verification at modest `n`, not for production
//! fitting.

use nalgebra::{DMatrix, DVector};

use crate::mat::dot;
use crate::{Error, Matrix, Result};

/// Relative cutoff under which singular values count as zero.
const PSEUDO_INVERSE_CUTOFF: f64 = 1e-12;

/// Second-moment model: designs for the mean and basis blocks plus the
/// prior variances.
#[derive(Clone, Debug)]
pub struct MomentModel {
    mean_design: DMatrix<f64>,
    basis_design: DMatrix<f64>,
    noise_var: f64,
    basis_vars: Vec<f64>,
}

impl MomentModel {
    pub fn new(
        mean_design: DMatrix<f64>,
        basis_design: DMatrix<f64>,
        noise_var: f64,
        basis_vars: Vec<f64>,
    ) -> Result<Self> {
        if mean_design.nrows() != basis_design.nrows() {
            return Err(Error::DimensionMismatch {
                expected: mean_design.nrows(),
                got: basis_design.nrows(),
            });
        }
        if mean_design.nrows() == 0 {
            return Err(Error::Empty("moment model needs training rows"));
        }
        if basis_vars.len() != basis_design.ncols() {
            return Err(Error::DimensionMismatch {
                expected: basis_design.ncols(),
                got: basis_vars.len(),
            });
        }
        if !noise_var.is_finite() || noise_var <= 0.0 {
            return Err(Error::InvalidParameter("noise variance must be positive".into()));
        }
        if basis_vars.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::InvalidParameter("basis variances must be nonnegative".into()));
        }
        Ok(MomentModel { mean_design, basis_design, noise_var, basis_vars })
    }

    /// Splits a full design matrix into its first `unpenalized` columns
    /// (mean block) and the rest (basis block).
    pub fn from_design(
        phi: &Matrix,
        unpenalized: usize,
        noise_var: f64,
        basis_vars: Vec<f64>,
    ) -> Result<Self> {
        if unpenalized > phi.cols() {
            return Err(Error::DimensionMismatch { expected: phi.cols(), got: unpenalized });
        }
        let n = phi.rows();
        let q = phi.cols() - unpenalized;
        let mean = DMatrix::from_fn(n, unpenalized, |i, j| phi.get(i, j));
        let basis = DMatrix::from_fn(n, q, |i, j| phi.get(i, unpenalized + j));
        Self::new(mean, basis, noise_var, basis_vars)
    }

    pub fn rows(&self) -> usize {
        self.mean_design.nrows()
    }

    pub fn mean_len(&self) -> usize {
        self.mean_design.ncols()
    }

    pub fn basis_len(&self) -> usize {
        self.basis_design.ncols()
    }

    /// `Sigma = Psi Theta Psi^T + theta_0 I`, always positive definite since
    /// `theta_0 > 0`.
    fn covariance(&self) -> DMatrix<f64> {
        let n = self.rows();
        let q = self.basis_len();
        let mut scaled = self.basis_design.clone();
        for k in 0..q {
            for i in 0..n {
                scaled[(i, k)] *= self.basis_vars[k];
            }
        }
        let mut sigma = scaled * self.basis_design.transpose();
        for i in 0..n {
            sigma[(i, i)] += self.noise_var;
        }
        sigma
    }

    fn factor(&self) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
        self.covariance()
            .cholesky()
            .ok_or(Error::SingularSystem("training covariance factorization"))
    }

    /// Moore-Penrose inverse of the (symmetric PSD) projected normal matrix
    /// `M = U^T Sigma^{-1} U`.
    fn pseudo_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if m.nrows() == 0 {
            return Ok(m.clone());
        }
        let svd = m.clone().svd(true, true);
        let max_sv = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
        if max_sv == 0.0 {
            // All-zero matrix; its pseudoinverse is itself.
            return Ok(DMatrix::zeros(m.nrows(), m.ncols()));
        }
        m.clone()
            .pseudo_inverse(PSEUDO_INVERSE_CUTOFF * max_sv)
            .map_err(|_| Error::SingularSystem("pseudo-inverse of the mean-block system"))
    }

    fn split_regressor<'a>(&self, phi_x: &'a [f64]) -> Result<(&'a [f64], &'a [f64])> {
        let p = self.mean_len() + self.basis_len();
        if phi_x.len() != p {
            return Err(Error::DimensionMismatch { expected: p, got: phi_x.len() });
        }
        Ok(phi_x.split_at(self.mean_len()))
    }

    /// Combination weights `lambda(x)` such that `lambda(x)^T y` is the best
    /// linear prediction at `x` subject to exact reproduction of the mean
    /// block. Logs a warning when the mean regressor `u(x)` leaves the row
    /// space of the training mean design, in which case the constraint is
    /// met only in the least-squares sense.
    pub fn blup_weights(&self, phi_x: &[f64]) -> Result<Vec<f64>> {
        let (ux, psix) = self.split_regressor(phi_x)?;
        if !self.mean_regressor_representable(ux)? {
            log::warn!(
                "mean regressor lies outside the row space of the training mean design; \
                 the unbiasedness constraint holds only in the least-squares sense"
            );
        }
        let chol = self.factor()?;

        // r(x) = Psi Theta psi(x), the covariance between y(x) and the
        // training targets.
        let mut weighted = DVector::from_column_slice(psix);
        for (k, v) in weighted.iter_mut().enumerate() {
            *v *= self.basis_vars[k];
        }
        let r = &self.basis_design * weighted;

        let s = chol.solve(&r);
        let a = chol.solve(&self.mean_design);
        let m = self.mean_design.transpose() * &a;
        let m_pinv = Self::pseudo_inverse(&m)?;

        let gap = DVector::from_column_slice(ux) - self.mean_design.transpose() * &s;
        let lambda = s + a * (m_pinv * gap);
        Ok(lambda.iter().cloned().collect())
    }

    /// Whether `u(x)` is representable as a combination of training rows of
    /// the mean design (always true when that design has full column rank).
    pub fn mean_regressor_representable(&self, ux: &[f64]) -> Result<bool> {
        if ux.len() != self.mean_len() {
            return Err(Error::DimensionMismatch { expected: self.mean_len(), got: ux.len() });
        }
        if ux.is_empty() {
            return Ok(true);
        }
        let chol = self.factor()?;
        let a = chol.solve(&self.mean_design);
        let m = self.mean_design.transpose() * a;
        let m_pinv = Self::pseudo_inverse(&m)?;
        let u_vec = DVector::from_column_slice(ux);
        let projected = &m * (m_pinv * &u_vec);
        let gap = (&projected - &u_vec).norm();
        Ok(gap <= 1e-8 * u_vec.norm().max(1.0))
    }

    /// Regression form of the same predictor: mean-block weights `w0` via
    /// generalized least squares, then basis weights `w1` from the prior
    /// covariance applied to the whitened residual.
    pub fn lr_weights(&self, y: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if y.len() != self.rows() {
            return Err(Error::DimensionMismatch { expected: self.rows(), got: y.len() });
        }
        let chol = self.factor()?;
        let y_vec = DVector::from_column_slice(y);
        let t = chol.solve(&y_vec);
        let a = chol.solve(&self.mean_design);
        let m = self.mean_design.transpose() * &a;
        let m_pinv = Self::pseudo_inverse(&m)?;
        let w0 = m_pinv * (self.mean_design.transpose() * &t);

        let resid = y_vec - &self.mean_design * &w0;
        let whitened = chol.solve(&resid);
        let mut w1 = self.basis_design.transpose() * whitened;
        for (k, v) in w1.iter_mut().enumerate() {
            *v *= self.basis_vars[k];
        }
        Ok((w0.iter().cloned().collect(), w1.iter().cloned().collect()))
    }

    /// Prediction via the combination weights.
    pub fn predict_combination(&self, y: &[f64], phi_x: &[f64]) -> Result<f64> {
        if y.len() != self.rows() {
            return Err(Error::DimensionMismatch { expected: self.rows(), got: y.len() });
        }
        let lambda = self.blup_weights(phi_x)?;
        Ok(dot(&lambda, y))
    }

    /// Prediction via the regression weights.
    pub fn predict_regression(&self, y: &[f64], phi_x: &[f64]) -> Result<f64> {
        let (ux, psix) = self.split_regressor(phi_x)?;
        let (w0, w1) = self.lr_weights(y)?;
        Ok(dot(ux, &w0) + dot(psix, &w1))
    }

    /// Rescaling all variances by `c > 0` must leave predictions unchanged;
    /// returns whether it does at this `x` (to 1e-8 relative).
    pub fn scale_invariance_check(&self, y: &[f64], phi_x: &[f64], c: f64) -> Result<bool> {
        if !c.is_finite() || c <= 0.0 {
            return Err(Error::InvalidParameter("scale factor must be positive".into()));
        }
        let scaled = MomentModel::new(
            self.mean_design.clone(),
            self.basis_design.clone(),
            self.noise_var * c,
            self.basis_vars.iter().map(|t| t * c).collect(),
        )?;
        let base = self.predict_combination(y, phi_x)?;
        let rescaled = scaled.predict_combination(y, phi_x)?;
        Ok((base - rescaled).abs() <= 1e-8 * base.abs().max(1.0))
    }
}

/// Noise level and basis scales implied by a fitted weight vector on a
/// dense training set: the root-mean-square residual and `|w_j| / ||col_j||`
/// per penalized column. Errors with [`Error::InterpolatingFit`] when the
/// residual is exactly zero, since a zero noise variance breaks the moment
/// model.
///
/// Feeding the result into [`MomentModel::from_design`] must reproduce the
/// fit's predictions; that equivalence is exercised in the test suites.
pub fn spice_theta_roundtrip(
    phi: &Matrix,
    y: &[f64],
    weights: &[f64],
    unpenalized: usize,
) -> Result<(f64, Vec<f64>)> {
    if phi.rows() != y.len() {
        return Err(Error::DimensionMismatch { expected: phi.rows(), got: y.len() });
    }
    if phi.cols() != weights.len() {
        return Err(Error::DimensionMismatch { expected: phi.cols(), got: weights.len() });
    }
    if unpenalized > phi.cols() {
        return Err(Error::DimensionMismatch { expected: phi.cols(), got: unpenalized });
    }
    if phi.rows() == 0 {
        return Err(Error::Empty("no training rows"));
    }
    let n = phi.rows();
    let rss: f64 = (0..n)
        .map(|i| {
            let r = y[i] - dot(phi.row(i), weights);
            r * r
        })
        .sum();
    let noise = (rss / n as f64).sqrt();
    if noise == 0.0 {
        return Err(Error::InterpolatingFit);
    }
    let scales = (unpenalized..phi.cols())
        .map(|j| {
            let norm: f64 = (0..n).map(|i| phi.get(i, j) * phi.get(i, j)).sum::<f64>().sqrt();
            if norm > 0.0 {
                weights[j].abs() / norm
            } else {
                0.0
            }
        })
        .collect();
    Ok((noise, scales))
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::spice::{solve_offline, SpiceConfig};
    use crate::stats::SufficientStats;

    fn random_design(rng: &mut ChaCha8Rng, n: usize, p: usize, intercept: bool) -> Matrix {
        Matrix::from_fn(n, p, |_, j| {
            if intercept && j == 0 {
                1.0
            } else {
                rng.random_range(-1.0..1.0)
            }
        })
    }

    fn random_targets(rng: &mut ChaCha8Rng, phi: &Matrix, noise: f64) -> Vec<f64> {
        let w: Vec<f64> = (0..phi.cols())
            .map(|j| if j < 3 { rng.random_range(-2.0..2.0) } else { 0.0 })
            .collect();
        (0..phi.rows())
            .map(|i| dot(phi.row(i), &w) + noise * (rng.random::<f64>() - 0.5))
            .collect()
    }

    #[test]
    fn combination_and_regression_forms_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for trial in 0..20 {
            let n = rng.random_range(10..40);
            let p = rng.random_range(2..8);
            let u = trial % 3; // exercise empty, constant-like and wider mean blocks
            let u = u.min(p - 1);
            let phi = random_design(&mut rng, n, p, u > 0);
            let y = random_targets(&mut rng, &phi, 0.4);
            let vars: Vec<f64> = (0..p - u).map(|_| rng.random_range(0.0..2.0)).collect();
            let model = MomentModel::from_design(&phi, u, rng.random_range(0.05..1.0), vars).unwrap();
            let phi_x: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
            let via_lambda = model.predict_combination(&y, &phi_x).unwrap();
            let via_weights = model.predict_regression(&y, &phi_x).unwrap();
            assert_abs_diff_eq!(via_lambda, via_weights, epsilon = 1e-9 * via_lambda.abs().max(1.0));
        }
    }

    #[test]
    fn unit_prior_reduces_to_ridge_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let (n, p, u) = (30, 6, 2);
        let phi = random_design(&mut rng, n, p, true);
        let y = random_targets(&mut rng, &phi, 0.3);
        let penalty = 0.7;
        let model = MomentModel::from_design(&phi, u, penalty, vec![1.0; p - u]).unwrap();
        let (w0, w1) = model.lr_weights(&y).unwrap();

        // Direct normal equations (Gram + penalty on the basis block only).
        let stats = SufficientStats::from_design(&phi, &y).unwrap();
        let mut lhs = DMatrix::from_fn(p, p, |i, j| stats.gram_at(i, j));
        for j in u..p {
            lhs[(j, j)] += penalty;
        }
        let rhs = DVector::from_column_slice(stats.xty());
        let direct = lhs.cholesky().unwrap().solve(&rhs);

        for (j, w) in w0.iter().chain(&w1).enumerate() {
            assert_abs_diff_eq!(*w, direct[j], epsilon = 1e-8 * direct[j].abs().max(1.0));
        }
    }

    #[test]
    fn predictions_are_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let phi = random_design(&mut rng, 25, 5, true);
        let y = random_targets(&mut rng, &phi, 0.5);
        let vars: Vec<f64> = (0..4).map(|_| rng.random_range(0.1..1.5)).collect();
        let model = MomentModel::from_design(&phi, 1, 0.4, vars).unwrap();
        let phi_x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        for c in [0.1, 10.0, 1000.0] {
            assert!(model.scale_invariance_check(&y, &phi_x, c).unwrap());
        }
        assert!(model.scale_invariance_check(&y, &phi_x, -1.0).is_err());
    }

    #[test]
    fn converged_fit_round_trips_through_the_moment_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let (n, p, u) = (60, 6, 1);
        let phi = random_design(&mut rng, n, p, true);
        let y = random_targets(&mut rng, &phi, 0.8);
        let stats = SufficientStats::from_design(&phi, &y).unwrap();
        let (weights, conv) = solve_offline(&stats, u, &SpiceConfig::default(), 1e-12, 200_000);
        assert!(conv.converged);

        let (noise, scales) = spice_theta_roundtrip(&phi, &y, &weights, u).unwrap();
        let model = MomentModel::from_design(&phi, u, noise, scales).unwrap();
        for _ in 0..10 {
            let phi_x: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
            let direct = dot(&phi_x, &weights);
            let via_blup = model.predict_combination(&y, &phi_x).unwrap();
            assert_abs_diff_eq!(via_blup, direct, epsilon = 1e-4 * direct.abs().max(1.0));
        }
    }

    #[test]
    fn zero_variance_coordinates_get_zero_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(59);
        let phi = random_design(&mut rng, 20, 5, true);
        let y = random_targets(&mut rng, &phi, 0.2);
        let vars = vec![0.7, 0.0, 0.0, 0.9];
        let model = MomentModel::from_design(&phi, 1, 0.3, vars).unwrap();
        let (_, w1) = model.lr_weights(&y).unwrap();
        assert_eq!(w1[1], 0.0);
        assert_eq!(w1[2], 0.0);
        assert!(w1[0].abs() > 0.0);
    }

    #[test]
    fn detects_mean_regressors_outside_the_row_space() {
        // Two identical mean columns of rank one: only multiples of (1, 1)
        // are representable.
        let mean = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        let basis = DMatrix::from_row_slice(3, 1, &[0.5, -0.3, 0.9]);
        let model = MomentModel::new(mean, basis, 0.5, vec![1.0]).unwrap();
        assert!(model.mean_regressor_representable(&[2.0, 2.0]).unwrap());
        assert!(!model.mean_regressor_representable(&[1.0, 0.0]).unwrap());
        // Prediction still goes through, constraint met in least squares.
        let lambda = model.blup_weights(&[1.0, 0.0, 0.2]).unwrap();
        assert_eq!(lambda.len(), 3);
        assert!(lambda.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn interpolating_fits_are_rejected_by_the_roundtrip() {
        // Exactly representable targets: residual is zero.
        let phi = Matrix::from_vec(2, 1, vec![1.0, 2.0]).unwrap();
        let y = [3.0, 6.0];
        let err = spice_theta_roundtrip(&phi, &y, &[3.0], 0).unwrap_err();
        assert!(matches!(err, Error::InterpolatingFit));
    }

    #[test]
    fn validates_construction() {
        let mean = DMatrix::zeros(4, 1);
        let basis = DMatrix::zeros(4, 2);
        assert!(MomentModel::new(mean.clone(), basis.clone(), 0.0, vec![1.0, 1.0]).is_err());
        assert!(MomentModel::new(mean.clone(), basis.clone(), 1.0, vec![1.0]).is_err());
        assert!(MomentModel::new(mean.clone(), basis.clone(), 1.0, vec![1.0, -1.0]).is_err());
        assert!(MomentModel::new(DMatrix::zeros(3, 1), basis, 1.0, vec![1.0, 1.0]).is_err());
        let empty_mean = DMatrix::zeros(0, 0);
        let empty_basis = DMatrix::zeros(0, 0);
        assert!(MomentModel::new(empty_mean, empty_basis, 1.0, vec![]).is_err());
    }
}
