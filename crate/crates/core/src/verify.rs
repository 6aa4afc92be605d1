//! Verification oracles for fitted weights.
//!
//! The centerpiece is a brute-force best-subset search (exact l0 oracle,
//! deliberately capped at tiny sizes) plus two finite-sample guarantees that
//! tie practical fits to that oracle through the in-sample divergence
//! `(1/n) ||Phi (w_a - w_b)||^2`:
//!
//! * lasso: if the penalty dominates twice the oracle residual's largest
//!   column correlation over `n`, the divergence between the lasso fit and
//!   the oracle is at most `2 * penalty * ||w*||_1`;
//! * self-scaled square-root penalty (the streaming solver's criterion with
//!   no mean block): if every normalized column norm `||col_j|| / sqrt(n)`
//!   dominates `eps* / sqrt(n R*)`, the divergence is at most
//!   `(2/n) g^2 + 4 sqrt(R*/n) g` with `g = sum_j ||col_j|| |w*_j| / sqrt(n)`.
//!
//! Both checks report the premise, the measured divergence and the bound,
//! so callers can tell "premise failed" apart from "bound violated". A
//! randomized suite wraps them for batch verification runs.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::baselines;
use crate::mat::dot;
use crate::spice::{solve_offline, SpiceConfig};
use crate::stats::SufficientStats;
use crate::{Error, Matrix, Result};

/// Hard caps keeping the exhaustive search honest about its cost.
const MAX_SUBSET_DIM: usize = 16;
const MAX_SUBSET_SIZE: usize = 3;

/// Convergence settings for the reference solve inside the self-scaled
/// bound check.
const REFERENCE_TOL: f64 = 1e-10;
const REFERENCE_MAX_CYCLES: usize = 200_000;

/// Absolute slack granted to the bound comparisons against rounding.
pub const BOUND_SLACK: f64 = 1e-9;

/// Exact sparse least-squares oracle.
#[derive(Clone, Debug)]
pub struct SparseOracleResult {
    /// Chosen support, sorted ascending.
    pub support: Vec<usize>,
    /// Full-length weight vector, zero off the support.
    pub weights: Vec<f64>,
    /// In-sample risk `||y - Phi w*||^2 / n`.
    pub risk: f64,
    /// `eps* = max_j |resid^T col_j|` over all columns.
    pub max_column_correlation: f64,
    /// Oracle residuals `y - Phi w*`.
    pub residuals: Vec<f64>,
}

/// All supports of size at most `k` in lexicographic order (shorter
/// prefixes first), beginning with the empty support.
fn supports_lexicographic(p: usize, k: usize) -> Vec<Vec<usize>> {
    fn recurse(prefix: &mut Vec<usize>, start: usize, p: usize, k: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == k {
            return;
        }
        for j in start..p {
            prefix.push(j);
            out.push(prefix.clone());
            recurse(prefix, j + 1, p, k, out);
            prefix.pop();
        }
    }
    let mut out = vec![Vec::new()];
    recurse(&mut Vec::new(), 0, p, k.min(p), &mut out);
    out
}

/// Minimum-norm least squares on the selected columns.
fn least_squares_on(x: &Matrix, y: &[f64], support: &[usize]) -> Result<Vec<f64>> {
    if support.is_empty() {
        return Ok(Vec::new());
    }
    let sub = x.select_cols(support).to_dmatrix();
    let rhs = nalgebra::DVector::from_column_slice(y);
    let svd = sub.svd(true, true);
    let max_sv = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let cutoff = if max_sv > 0.0 { 1e-12 * max_sv } else { f64::EPSILON };
    let sol = svd
        .solve(&rhs, cutoff)
        .map_err(|_| Error::SingularSystem("subset least squares"))?;
    Ok(sol.iter().cloned().collect())
}

/// Exhaustive best-subset search: the least-squares fit over every support
/// of size at most `k`, returning the risk minimizer. Ties resolve to the
/// lexicographically smallest support (the enumeration order). Guarded to
/// `p <= 16`, `k <= 3` so the cost stays bounded.
pub fn best_subset(x: &Matrix, y: &[f64], k: usize) -> Result<SparseOracleResult> {
    if x.rows() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.rows(), got: y.len() });
    }
    if x.rows() == 0 {
        return Err(Error::Empty("training rows"));
    }
    let p = x.cols();
    if p > MAX_SUBSET_DIM || k > MAX_SUBSET_SIZE {
        return Err(Error::SubsetGuard { p, k });
    }
    let n = x.rows();
    let mut best: Option<(f64, Vec<usize>, Vec<f64>)> = None;
    for support in supports_lexicographic(p, k) {
        let coef = least_squares_on(x, y, &support)?;
        let rss: f64 = (0..n)
            .map(|i| {
                let row = x.row(i);
                let fit: f64 = support.iter().zip(&coef).map(|(&j, &c)| row[j] * c).sum();
                let r = y[i] - fit;
                r * r
            })
            .sum();
        // Strict improvement only: earlier (lexicographically smaller)
        // supports win ties.
        if best.as_ref().is_none_or(|(b, _, _)| rss < *b) {
            best = Some((rss, support, coef));
        }
    }
    let (rss, support, coef) = best.expect("enumeration includes the empty support");
    let mut weights = vec![0.0; p];
    for (&j, &c) in support.iter().zip(&coef) {
        weights[j] = c;
    }
    let residuals: Vec<f64> = (0..n).map(|i| y[i] - dot(x.row(i), &weights)).collect();
    let max_column_correlation = (0..p)
        .map(|j| (0..n).map(|i| x.get(i, j) * residuals[i]).sum::<f64>().abs())
        .fold(0.0f64, f64::max);
    Ok(SparseOracleResult {
        support,
        weights,
        risk: rss / n as f64,
        max_column_correlation,
        residuals,
    })
}

/// In-sample divergence between two weight vectors,
/// `(1/n) ||Phi (w_a - w_b)||^2`.
pub fn divergence(x: &Matrix, w_a: &[f64], w_b: &[f64]) -> Result<f64> {
    if w_a.len() != x.cols() {
        return Err(Error::DimensionMismatch { expected: x.cols(), got: w_a.len() });
    }
    if w_b.len() != x.cols() {
        return Err(Error::DimensionMismatch { expected: x.cols(), got: w_b.len() });
    }
    if x.rows() == 0 {
        return Err(Error::Empty("design matrix"));
    }
    let diff: Vec<f64> = w_a.iter().zip(w_b).map(|(a, b)| a - b).collect();
    let total: f64 = (0..x.rows())
        .map(|i| {
            let v = dot(x.row(i), &diff);
            v * v
        })
        .sum();
    Ok(total / x.rows() as f64)
}

/// Outcome of one bound check.
#[derive(Clone, Debug, Serialize)]
pub struct BoundCheck {
    /// Which guarantee: "lasso" or "self-scaled".
    pub kind: &'static str,
    /// Whether the guarantee's premise holds for this instance; the bound
    /// is only claimed under the premise.
    pub premise_holds: bool,
    /// Measured divergence between the practical fit and the oracle.
    pub measured: f64,
    /// The guaranteed ceiling.
    pub bound: f64,
    /// `premise_holds` implies `measured <= bound + BOUND_SLACK`.
    pub pass: bool,
    pub oracle_risk: f64,
    pub max_column_correlation: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub penalty: Option<f64>,
}

/// Checks the lasso divergence guarantee at the given penalty against the
/// size-`k` oracle. All columns are treated as penalized.
pub fn check_lasso_bound(x: &Matrix, y: &[f64], k: usize, penalty: f64) -> Result<BoundCheck> {
    let oracle = best_subset(x, y, k)?;
    let n = x.rows() as f64;
    let premise_holds = penalty >= 2.0 * oracle.max_column_correlation / n;
    let fitted = baselines::lasso_fit(x, y, penalty, 0)?;
    let measured = divergence(x, &fitted, &oracle.weights)?;
    let l1: f64 = oracle.weights.iter().map(|w| w.abs()).sum();
    let bound = 2.0 * penalty * l1;
    let pass = !premise_holds || measured <= bound + BOUND_SLACK;
    Ok(BoundCheck {
        kind: "lasso",
        premise_holds,
        measured,
        bound,
        pass,
        oracle_risk: oracle.risk,
        max_column_correlation: oracle.max_column_correlation,
        penalty: Some(penalty),
    })
}

/// Checks the self-scaled square-root-penalty guarantee (no mean block)
/// against the size-`k` oracle. The reference fit is the batch coordinate
/// solver run to tight tolerance.
pub fn check_spice_bound(x: &Matrix, y: &[f64], k: usize) -> Result<BoundCheck> {
    let oracle = best_subset(x, y, k)?;
    let n = x.rows() as f64;
    let stats = SufficientStats::from_design(x, y)?;
    let norms = stats.column_norms();
    let scaled: Vec<f64> = norms.iter().map(|v| v / n.sqrt()).collect();

    // An interpolating oracle leaves only roundoff in the residual; the
    // ratio eps / sqrt(n R) is then noise over noise and meaningless, so
    // the premise is taken as satisfied (the exact-arithmetic residual is
    // zero and correlates with nothing).
    let y_energy: f64 = y.iter().map(|v| v * v).sum();
    let interpolating = oracle.risk * n <= 1e-20 * y_energy;
    let premise_holds = if interpolating || oracle.max_column_correlation == 0.0 {
        true
    } else {
        let floor = oracle.max_column_correlation / (n * oracle.risk).sqrt();
        scaled.iter().all(|&phi| phi >= floor)
    };

    let (fitted, _) = solve_offline(&stats, 0, &SpiceConfig::default(), REFERENCE_TOL, REFERENCE_MAX_CYCLES);
    let measured = divergence(x, &fitted, &oracle.weights)?;
    let weighted_l1: f64 = scaled.iter().zip(&oracle.weights).map(|(phi, w)| phi * w.abs()).sum();
    let bound = 2.0 / n * weighted_l1 * weighted_l1 + 4.0 * (oracle.risk / n).sqrt() * weighted_l1;
    let pass = !premise_holds || measured <= bound + BOUND_SLACK;
    Ok(BoundCheck {
        kind: "self-scaled",
        premise_holds,
        measured,
        bound,
        pass,
        oracle_risk: oracle.risk,
        max_column_correlation: oracle.max_column_correlation,
        penalty: None,
    })
}

/// Aggregate of a randomized verification run.
#[derive(Clone, Debug, Serialize)]
pub struct BoundSuiteReport {
    pub instances: usize,
    pub noiseless: usize,
    pub lasso_premise_held: usize,
    pub spice_premise_held: usize,
    pub lasso_violations: usize,
    pub spice_violations: usize,
    /// Noiseless instances where the raw bound (no slack) failed.
    pub noiseless_strict_failures: usize,
    /// Largest `measured - bound` seen among premise-holding instances.
    pub worst_lasso_margin: f64,
    pub worst_spice_margin: f64,
}

impl BoundSuiteReport {
    pub fn all_clear(&self) -> bool {
        self.lasso_violations == 0
            && self.spice_violations == 0
            && self.noiseless_strict_failures == 0
    }
}

/// Runs both bound checks on `instances` randomized tiny problems.
///
/// Instances are drawn so the lasso premise holds by construction (the
/// penalty is sampled at or above its premise floor); the self-scaled
/// premise is evaluated per instance. Roughly a quarter of the instances
/// are noiseless with an exactly sparse signal, for which the oracle
/// residual is zero and the bounds must hold without slack. Another share
/// uses noise projected orthogonal to the column space: the oracle risk is
/// positive while every column correlation of the residual vanishes, so
/// the self-scaled premise holds with a nontrivial bound. The rest carry
/// raw Gaussian noise and keep whatever premise status they land on.
pub fn run_bound_suite(instances: usize, seed: u64) -> Result<BoundSuiteReport> {
    let normal = Normal::<f64>::new(0.0, 1.0).expect("unit normal");
    let mut report = BoundSuiteReport {
        instances,
        noiseless: 0,
        lasso_premise_held: 0,
        spice_premise_held: 0,
        lasso_violations: 0,
        spice_violations: 0,
        noiseless_strict_failures: 0,
        worst_lasso_margin: f64::NEG_INFINITY,
        worst_spice_margin: f64::NEG_INFINITY,
    };
    for instance in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(instance as u64);
        let n = rng.random_range(30..=60);
        let p = rng.random_range(4..=8);
        let k = rng.random_range(1..=2);
        let x = Matrix::from_fn(n, p, |_, _| normal.sample(&mut rng));
        let mut w_true = vec![0.0; p];
        let mut picks: Vec<usize> = (0..p).collect();
        picks.shuffle(&mut rng);
        for &j in picks.iter().take(k) {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            w_true[j] = sign * rng.random_range(1.0..3.0);
        }
        let style = rng.random::<f64>();
        let noiseless = style < 0.25;
        let orthogonal = !noiseless && style < 0.60;
        let sigma = if noiseless { 0.0 } else { rng.random_range(0.05..0.6) };
        let mut noise: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
        if orthogonal {
            // Remove the column-space component so the oracle residual is
            // uncorrelated with every column.
            let design = x.to_dmatrix();
            let rhs = nalgebra::DVector::from_column_slice(&noise);
            let svd = design.clone().svd(true, true);
            let max_sv = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
            let coef = svd
                .solve(&rhs, 1e-12 * max_sv)
                .map_err(|_| Error::SingularSystem("noise projection"))?;
            let fitted = design * coef;
            for (v, f) in noise.iter_mut().zip(fitted.iter()) {
                *v -= f;
            }
        }
        let y: Vec<f64> = (0..n)
            .map(|i| dot(x.row(i), &w_true) + sigma * noise[i])
            .collect();
        if noiseless {
            report.noiseless += 1;
        }

        // The lasso premise floor needs the oracle first. For an
        // interpolating oracle the floor is roundoff, so pick a small but
        // meaningful penalty instead.
        let oracle = best_subset(&x, &y, k)?;
        let y_energy: f64 = y.iter().map(|v| v * v).sum();
        let penalty = if oracle.risk * n as f64 <= 1e-20 * y_energy {
            rng.random_range(0.001..0.05)
        } else {
            2.0 * oracle.max_column_correlation / n as f64 * rng.random_range(1.0..3.0)
        };

        let lasso = check_lasso_bound(&x, &y, k, penalty)?;
        let spice = check_spice_bound(&x, &y, k)?;

        if lasso.premise_holds {
            report.lasso_premise_held += 1;
            report.worst_lasso_margin = report.worst_lasso_margin.max(lasso.measured - lasso.bound);
            if !lasso.pass {
                report.lasso_violations += 1;
            }
            if noiseless && lasso.measured > lasso.bound {
                report.noiseless_strict_failures += 1;
            }
        }
        if spice.premise_holds {
            report.spice_premise_held += 1;
            report.worst_spice_margin = report.worst_spice_margin.max(spice.measured - spice.bound);
            if !spice.pass {
                report.spice_violations += 1;
            }
            if noiseless && spice.measured > spice.bound {
                report.noiseless_strict_failures += 1;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;

    use super::*;

    #[test]
    fn finds_an_exactly_spanning_column() {
        // y is three times column 2; a single-column search must find it.
        let x = Matrix::from_vec(
            4,
            4,
            vec![
                1.0, 0.5, 2.0, 0.3, //
                -1.0, 0.2, 1.0, 0.9, //
                0.0, -0.7, -1.0, 0.4, //
                2.0, 0.1, 0.5, -0.6,
            ],
        )
        .unwrap();
        let y: Vec<f64> = (0..4).map(|i| 3.0 * x.get(i, 2)).collect();
        let oracle = best_subset(&x, &y, 1).unwrap();
        assert_eq!(oracle.support, vec![2]);
        assert_abs_diff_eq!(oracle.weights[2], 3.0, epsilon = 1e-10);
        assert!(oracle.risk < 1e-20);
        assert!(oracle.max_column_correlation < 1e-9);
    }

    #[test]
    fn enumeration_order_is_lexicographic() {
        let supports = supports_lexicographic(3, 2);
        let expected: Vec<Vec<usize>> =
            vec![vec![], vec![0], vec![0, 1], vec![0, 2], vec![1], vec![1, 2], vec![2]];
        assert_eq!(supports, expected);
        // p = 16, k = 3: 1 + 16 + 120 + 560 supports.
        assert_eq!(supports_lexicographic(16, 3).len(), 697);
    }

    #[test]
    fn reverse_enumeration_reaches_the_same_answer() {
        let mut rng = ChaCha8Rng::seed_from_u64(97);
        let normal = Normal::<f64>::new(0.0, 1.0).unwrap();
        let (n, p, k) = (30, 8, 2);
        let x = Matrix::from_fn(n, p, |_, _| normal.sample(&mut rng));
        let y: Vec<f64> = (0..n)
            .map(|i| 2.0 * x.get(i, 1) - 1.0 * x.get(i, 6) + 0.3 * normal.sample(&mut rng))
            .collect();
        let oracle = best_subset(&x, &y, k).unwrap();

        // Independent scan in reverse order, ties kept (<=) so the
        // lexicographically smallest support still wins.
        let mut best: Option<(f64, Vec<usize>)> = None;
        for support in supports_lexicographic(p, k).into_iter().rev() {
            let coef = least_squares_on(&x, &y, &support).unwrap();
            let rss: f64 = (0..n)
                .map(|i| {
                    let fit: f64 =
                        support.iter().zip(&coef).map(|(&j, &c)| x.get(i, j) * c).sum();
                    let r = y[i] - fit;
                    r * r
                })
                .sum();
            if best.as_ref().is_none_or(|(b, _)| rss <= *b) {
                best = Some((rss, support));
            }
        }
        let (rss, support) = best.unwrap();
        assert_eq!(oracle.support, support);
        assert_abs_diff_eq!(oracle.risk, rss / n as f64, epsilon = 1e-12);
        assert_eq!(oracle.support, vec![1, 6]);
    }

    #[test]
    fn guards_reject_oversized_searches() {
        let x = Matrix::zeros(5, 17);
        let y = vec![0.0; 5];
        assert!(matches!(
            best_subset(&x, &y, 1),
            Err(Error::SubsetGuard { p: 17, k: 1 })
        ));
        let x = Matrix::zeros(5, 4);
        assert!(matches!(
            best_subset(&x, &y, 4),
            Err(Error::SubsetGuard { p: 4, k: 4 })
        ));
    }

    #[test]
    fn divergence_matches_a_hand_computation() {
        let x = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 2.0]).unwrap();
        // Difference (1, -1): rows map it to 1 and -2; mean square = 2.5.
        let d = divergence(&x, &[2.0, 0.0], &[1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(d, 2.5, epsilon = 1e-15);
        assert_eq!(divergence(&x, &[1.0, 1.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert!(divergence(&x, &[1.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn lasso_bound_holds_on_a_noiseless_instance() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let normal = Normal::<f64>::new(0.0, 1.0).unwrap();
        let (n, p) = (40, 6);
        let x = Matrix::from_fn(n, p, |_, _| normal.sample(&mut rng));
        let y: Vec<f64> = (0..n).map(|i| 2.0 * x.get(i, 0) - 1.5 * x.get(i, 3)).collect();
        let check = check_lasso_bound(&x, &y, 2, 0.01).unwrap();
        assert!(check.premise_holds, "zero residual satisfies any nonnegative penalty");
        assert!(check.pass);
        assert!(check.measured <= check.bound, "noiseless case must hold without slack");
        assert!(check.oracle_risk < 1e-18);
    }

    #[test]
    fn self_scaled_bound_holds_on_random_instances() {
        let report = run_bound_suite(40, 12345).unwrap();
        assert!(report.all_clear(), "violations in {report:?}");
        assert!(report.lasso_premise_held == 40, "lasso premise is engineered to hold");
        assert!(
            report.spice_premise_held >= 16,
            "expected a healthy share of self-scaled premises to hold, got {}",
            report.spice_premise_held
        );
        assert!(report.noiseless >= 4);
        assert!(
            report.spice_premise_held > report.noiseless,
            "self-scaled premise must also hold on noisy instances"
        );
    }

    #[test]
    fn gaussian_noise_satisfies_the_premise_at_the_advertised_rate() {
        // For Gaussian noise and sqrt(n)-normalized columns, the event
        //   sigma * sqrt(2 ln p + delta) >= max_j |eps^T col_j| / sqrt(n)
        // has probability at least 1 - 2 exp(-delta / 2). At delta = 4 the
        // floor is about 0.729; the union bound is loose, so the observed
        // rate sits well above it.
        let mut rng = ChaCha8Rng::seed_from_u64(4242);
        let normal = Normal::<f64>::new(0.0, 1.0).unwrap();
        let (n, p, sigma, delta) = (50usize, 8usize, 1.5f64, 4.0f64);
        // One fixed design, columns scaled to norm sqrt(n).
        let mut x = Matrix::from_fn(n, p, |_, _| normal.sample(&mut rng));
        for j in 0..p {
            let norm: f64 = (0..n).map(|i| x.get(i, j) * x.get(i, j)).sum::<f64>().sqrt();
            let scale = (n as f64).sqrt() / norm;
            for i in 0..n {
                x.set(i, j, x.get(i, j) * scale);
            }
        }
        let threshold = sigma * (2.0 * (p as f64).ln() + delta).sqrt();
        let trials = 10_000;
        let mut held = 0usize;
        for _ in 0..trials {
            let eps: Vec<f64> = (0..n).map(|_| sigma * normal.sample(&mut rng)).collect();
            let worst = (0..p)
                .map(|j| (0..n).map(|i| eps[i] * x.get(i, j)).sum::<f64>().abs())
                .fold(0.0f64, f64::max);
            if threshold >= worst / (n as f64).sqrt() {
                held += 1;
            }
        }
        let rate = held as f64 / trials as f64;
        let floor = 1.0 - 2.0 * (-delta / 2.0).exp();
        assert!(rate >= floor, "premise rate {rate} fell below the guarantee {floor}");
    }
}
