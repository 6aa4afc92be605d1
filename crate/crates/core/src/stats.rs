//! Streaming sufficient statistics for square-loss regression.
//!
//! For regressors `phi_i` and targets `y_i` the accumulator keeps the Gram
//! matrix `sum phi_i phi_i^T`, the cross moments `sum phi_i y_i`, the target
//! energy `sum y_i^2` and the count `n`. These four quantities determine the
//! squared residual of any weight vector, so downstream solvers never need
//! the raw samples. Storage is `O(p^2)` regardless of how many samples pass
//! through.

use serde::{Deserialize, Serialize};

use crate::mat::dot;
use crate::{Error, Result};

/// Second-moment accumulator over `(phi, y)` pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SufficientStats {
    dim: usize,
    /// Row-major `p x p` Gram matrix; symmetric, both triangles kept so rows
    /// double as columns in solver loops.
    gram: Vec<f64>,
    /// `sum phi_i y_i`.
    xty: Vec<f64>,
    /// `sum y_i^2`.
    yty: f64,
    n: u64,
}

impl SufficientStats {
    pub fn new(dim: usize) -> Self {
        SufficientStats { dim, gram: vec![0.0; dim * dim], xty: vec![0.0; dim], yty: 0.0, n: 0 }
    }

    /// Reassembles an accumulator from stored moments (e.g. a model file).
    /// Lengths and finiteness are checked; positive semidefiniteness of the
    /// Gram block is trusted.
    pub fn from_parts(dim: usize, gram: Vec<f64>, xty: Vec<f64>, yty: f64, n: u64) -> Result<Self> {
        if gram.len() != dim * dim {
            return Err(Error::DimensionMismatch { expected: dim * dim, got: gram.len() });
        }
        if xty.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: xty.len() });
        }
        if gram.iter().chain(&xty).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("stored moments"));
        }
        if !yty.is_finite() || yty < 0.0 {
            return Err(Error::NonFinite("stored target energy"));
        }
        Ok(SufficientStats { dim, gram, xty, yty, n })
    }

    /// Accumulates all rows of a design matrix at once.
    pub fn from_design(phi: &crate::Matrix, y: &[f64]) -> Result<Self> {
        if phi.rows() != y.len() {
            return Err(Error::DimensionMismatch { expected: phi.rows(), got: y.len() });
        }
        let mut stats = SufficientStats::new(phi.cols());
        for (i, &yi) in y.iter().enumerate() {
            stats.ingest(phi.row(i), yi)?;
        }
        Ok(stats)
    }

    /// Folds one sample into the moments. Rejects dimension mismatches and
    /// non-finite values before touching any state, so a failed call leaves
    /// the accumulator unchanged.
    pub fn ingest(&mut self, phi: &[f64], y: f64) -> Result<()> {
        if phi.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: phi.len() });
        }
        if !y.is_finite() {
            return Err(Error::NonFinite("target"));
        }
        if phi.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("regressor"));
        }
        for (i, &pi) in phi.iter().enumerate() {
            let row = &mut self.gram[i * self.dim..(i + 1) * self.dim];
            for (entry, &pj) in row.iter_mut().zip(phi) {
                *entry += pi * pj;
            }
        }
        for (entry, &pi) in self.xty.iter_mut().zip(phi) {
            *entry += pi * y;
        }
        self.yty += y * y;
        self.n += 1;
        Ok(())
    }

    /// Adds another accumulator of the same dimension; the result equals
    /// ingesting the union of both sample sets.
    pub fn merge(&mut self, other: &SufficientStats) -> Result<()> {
        if other.dim != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: other.dim });
        }
        for (a, b) in self.gram.iter_mut().zip(&other.gram) {
            *a += b;
        }
        for (a, b) in self.xty.iter_mut().zip(&other.xty) {
            *a += b;
        }
        self.yty += other.yty;
        self.n += other.n;
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn gram(&self) -> &[f64] {
        &self.gram
    }

    /// Row `j` of the Gram matrix (equals column `j` by symmetry).
    pub fn gram_row(&self, j: usize) -> &[f64] {
        &self.gram[j * self.dim..(j + 1) * self.dim]
    }

    pub fn gram_at(&self, i: usize, j: usize) -> f64 {
        self.gram[i * self.dim + j]
    }

    pub fn xty(&self) -> &[f64] {
        &self.xty
    }

    pub fn yty(&self) -> f64 {
        self.yty
    }

    /// Euclidean norms of the (implicit) design columns, read off the Gram
    /// diagonal. Tiny negative rounding is clamped before the square root.
    pub fn column_norms(&self) -> Vec<f64> {
        (0..self.dim).map(|j| self.gram_at(j, j).max(0.0).sqrt()).collect()
    }

    /// Squared residual `||y - Phi w||^2` expressed through the moments,
    /// clamped at zero against rounding.
    pub fn squared_residual(&self, w: &[f64]) -> Result<f64> {
        if w.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: w.len() });
        }
        let mut quad = 0.0;
        for (j, &wj) in w.iter().enumerate() {
            if wj != 0.0 {
                quad += wj * dot(self.gram_row(j), w);
            }
        }
        Ok((self.yty + quad - 2.0 * dot(&self.xty, w)).max(0.0))
    }

    /// Residual correlations `Phi^T (y - Phi w) = xty - Gram w`.
    pub fn residual_correlations(&self, w: &[f64]) -> Result<Vec<f64>> {
        if w.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: w.len() });
        }
        Ok((0..self.dim).map(|j| self.xty[j] - dot(self.gram_row(j), w)).collect())
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    use super::*;
    use crate::Matrix;

    #[test]
    fn two_simple_samples_accumulate_exactly() {
        let mut stats = SufficientStats::new(2);
        stats.ingest(&[1.0, 2.0], 1.0).unwrap();
        stats.ingest(&[0.0, 1.0], -1.0).unwrap();
        assert_eq!(stats.n(), 2);
        assert_eq!(stats.gram(), &[1.0, 2.0, 2.0, 5.0]);
        assert_eq!(stats.xty(), &[1.0, 1.0]);
        assert_eq!(stats.yty(), 2.0);
    }

    #[test]
    fn rejects_bad_samples_without_mutating() {
        let mut stats = SufficientStats::new(2);
        stats.ingest(&[1.0, 1.0], 2.0).unwrap();
        let snapshot = stats.clone();
        assert!(stats.ingest(&[1.0], 0.0).is_err());
        assert!(stats.ingest(&[1.0, f64::NAN], 0.0).is_err());
        assert!(stats.ingest(&[1.0, 1.0], f64::INFINITY).is_err());
        assert_eq!(stats, snapshot);
    }

    #[test]
    fn column_norms_follow_the_diagonal() {
        let mut stats = SufficientStats::new(2);
        stats.ingest(&[3.0, 0.0], 1.0).unwrap();
        stats.ingest(&[4.0, 0.0], 1.0).unwrap();
        let norms = stats.column_norms();
        assert_abs_diff_eq!(norms[0], 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(norms[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn squared_residual_matches_direct_computation() {
        let phi = Matrix::from_vec(3, 2, vec![1.0, 0.5, -1.0, 2.0, 0.0, 1.0]).unwrap();
        let y = [1.0, -2.0, 0.5];
        let stats = SufficientStats::from_design(&phi, &y).unwrap();
        let w = [0.3, -0.7];
        let direct: f64 = (0..3)
            .map(|i| {
                let r = y[i] - dot(phi.row(i), &w);
                r * r
            })
            .sum();
        assert_abs_diff_eq!(stats.squared_residual(&w).unwrap(), direct, epsilon = 1e-12);
        let corr = stats.residual_correlations(&w).unwrap();
        for (j, &corr_j) in corr.iter().enumerate() {
            let direct_j: f64 =
                (0..3).map(|i| phi.get(i, j) * (y[i] - dot(phi.row(i), &w))).sum();
            assert_abs_diff_eq!(corr_j, direct_j, epsilon = 1e-12);
        }
    }

    fn sample_strategy() -> impl Strategy<Value = (Vec<f64>, f64)> {
        (
            prop::collection::vec(-10.0f64..10.0, 3),
            -10.0f64..10.0,
        )
    }

    proptest! {
        // Addition is commutative, so the accumulated moments must not
        // depend on sample order.
        #[test]
        fn order_invariant_up_to_rounding(
            samples in prop::collection::vec(sample_strategy(), 1..20),
            seed in 0u64..1000,
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;

            let mut forward = SufficientStats::new(3);
            for (phi, y) in &samples {
                forward.ingest(phi, *y).unwrap();
            }
            let mut shuffled = samples.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let mut permuted = SufficientStats::new(3);
            for (phi, y) in &shuffled {
                permuted.ingest(phi, *y).unwrap();
            }
            for (a, b) in forward.gram().iter().zip(permuted.gram()) {
                prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
            }
            for (a, b) in forward.xty().iter().zip(permuted.xty()) {
                prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
            }
            prop_assert!((forward.yty() - permuted.yty()).abs() <= 1e-10 * forward.yty().abs().max(1.0));
            prop_assert_eq!(forward.n(), permuted.n());
        }

        // Splitting a stream in two and merging recovers the single-pass
        // accumulator up to the usual non-associativity of float addition.
        #[test]
        fn merge_equals_union(
            first in prop::collection::vec(sample_strategy(), 0..10),
            second in prop::collection::vec(sample_strategy(), 0..10),
        ) {
            let mut joint = SufficientStats::new(3);
            for (phi, y) in first.iter().chain(&second) {
                joint.ingest(phi, *y).unwrap();
            }
            let mut a = SufficientStats::new(3);
            for (phi, y) in &first {
                a.ingest(phi, *y).unwrap();
            }
            let mut b = SufficientStats::new(3);
            for (phi, y) in &second {
                b.ingest(phi, *y).unwrap();
            }
            a.merge(&b).unwrap();
            prop_assert_eq!(a.n(), joint.n());
            for (x, y) in a.gram().iter().zip(joint.gram()) {
                prop_assert!((x - y).abs() <= 1e-10 * x.abs().max(1.0));
            }
            for (x, y) in a.xty().iter().zip(joint.xty()) {
                prop_assert!((x - y).abs() <= 1e-10 * x.abs().max(1.0));
            }
            prop_assert!((a.yty() - joint.yty()).abs() <= 1e-10 * a.yty().abs().max(1.0));
        }
    }
}
