//! Regressor construction.
//!
//! A [`FeatureMap`] turns a raw input `x` in `R^d` into the regressor vector
//! `phi(x)` of length `p = u + q`: an unpenalized mean block of length `u`
//! (empty, a lone intercept, or intercept plus the raw coordinates) followed
//! by `q` basis functions. Three bases are supported:
//!
//! * `linear`: the coordinates of `x` themselves (`q = d`),
//! * `laplace-tensor`: products of sinusoids over a box, one basis function
//!   per multi-index in `{1..m}^d` (`q = m^d`),
//! * `laplace-additive`: the same sinusoids applied per coordinate without
//!   cross terms (`q = m * d`).
//!
//! The sinusoids are the Dirichlet Laplacian eigenfunctions on
//! `[-L_j, L_j]`, `sin(pi k (x_j + L_j) / (2 L_j)) / sqrt(L_j)`, which are
//! orthonormal on the box and vanish on its boundary.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Basis family for the penalized block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisKind {
    Linear,
    LaplaceTensor,
    LaplaceAdditive,
}

/// Unpenalized mean block prepended to the basis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeanKind {
    None,
    Constant,
    Affine,
}

/// Validated description of the regressor construction.
///
/// Build through [`FeatureMap::linear`], [`FeatureMap::laplace_tensor`] or
/// [`FeatureMap::laplace_additive`]; deserialization re-runs the same
/// validation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawFeatureMap", into = "RawFeatureMap")]
pub struct FeatureMap {
    kind: BasisKind,
    mean_kind: MeanKind,
    input_dim: usize,
    index_count: Option<usize>,
    half_widths: Option<Vec<f64>>,
}

/// Serialized form; `TryFrom` funnels deserialized values through validation.
#[derive(Serialize, Deserialize)]
struct RawFeatureMap {
    kind: BasisKind,
    mean_kind: MeanKind,
    d: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    half_widths: Option<Vec<f64>>,
}

impl TryFrom<RawFeatureMap> for FeatureMap {
    type Error = Error;

    fn try_from(raw: RawFeatureMap) -> Result<FeatureMap> {
        FeatureMap::new(raw.kind, raw.mean_kind, raw.d, raw.m, raw.half_widths)
    }
}

impl From<FeatureMap> for RawFeatureMap {
    fn from(map: FeatureMap) -> RawFeatureMap {
        RawFeatureMap {
            kind: map.kind,
            mean_kind: map.mean_kind,
            d: map.input_dim,
            m: map.index_count,
            half_widths: map.half_widths,
        }
    }
}

impl FeatureMap {
    /// Identity basis over `R^d` with the chosen mean block.
    pub fn linear(input_dim: usize, mean_kind: MeanKind) -> Result<Self> {
        Self::new(BasisKind::Linear, mean_kind, input_dim, None, None)
    }

    /// Tensor-product sinusoid basis on the box given by `half_widths`,
    /// `m` frequencies per dimension.
    pub fn laplace_tensor(
        input_dim: usize,
        index_count: usize,
        half_widths: Vec<f64>,
        mean_kind: MeanKind,
    ) -> Result<Self> {
        Self::new(BasisKind::LaplaceTensor, mean_kind, input_dim, Some(index_count), Some(half_widths))
    }

    /// Per-coordinate sinusoid basis (no cross terms).
    pub fn laplace_additive(
        input_dim: usize,
        index_count: usize,
        half_widths: Vec<f64>,
        mean_kind: MeanKind,
    ) -> Result<Self> {
        Self::new(BasisKind::LaplaceAdditive, mean_kind, input_dim, Some(index_count), Some(half_widths))
    }

    fn new(
        kind: BasisKind,
        mean_kind: MeanKind,
        input_dim: usize,
        index_count: Option<usize>,
        half_widths: Option<Vec<f64>>,
    ) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::InvalidParameter("input dimension must be at least 1".into()));
        }
        match kind {
            BasisKind::Linear => {
                if index_count.is_some() || half_widths.is_some() {
                    return Err(Error::InvalidParameter(
                        "index count and half-widths only apply to laplace bases".into(),
                    ));
                }
            }
            BasisKind::LaplaceTensor | BasisKind::LaplaceAdditive => {
                let m = index_count.ok_or_else(|| {
                    Error::InvalidParameter("laplace bases need an index count".into())
                })?;
                if m == 0 {
                    return Err(Error::InvalidParameter("index count must be at least 1".into()));
                }
                let widths = half_widths.as_ref().ok_or_else(|| {
                    Error::InvalidParameter("laplace bases need box half-widths".into())
                })?;
                if widths.len() != input_dim {
                    return Err(Error::DimensionMismatch {
                        expected: input_dim,
                        got: widths.len(),
                    });
                }
                if widths.iter().any(|l| !l.is_finite() || *l <= 0.0) {
                    return Err(Error::InvalidParameter(
                        "half-widths must be finite and positive".into(),
                    ));
                }
                if kind == BasisKind::LaplaceTensor {
                    let d = u32::try_from(input_dim).ok();
                    if d.and_then(|d| m.checked_pow(d)).is_none() {
                        return Err(Error::InvalidParameter(format!(
                            "tensor basis size m^d overflows with m = {m}, d = {input_dim}"
                        )));
                    }
                }
            }
        }
        Ok(FeatureMap { kind, mean_kind, input_dim, index_count, half_widths })
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn mean_kind(&self) -> MeanKind {
        self.mean_kind
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Length `u` of the unpenalized mean block.
    pub fn mean_len(&self) -> usize {
        match self.mean_kind {
            MeanKind::None => 0,
            MeanKind::Constant => 1,
            MeanKind::Affine => 1 + self.input_dim,
        }
    }

    /// Number `q` of penalized basis functions.
    pub fn basis_len(&self) -> usize {
        match self.kind {
            BasisKind::Linear => self.input_dim,
            BasisKind::LaplaceTensor => {
                let m = self.index_count.expect("validated");
                m.pow(self.input_dim as u32)
            }
            BasisKind::LaplaceAdditive => {
                let m = self.index_count.expect("validated");
                m * self.input_dim
            }
        }
    }

    /// Total regressor length `p = u + q`.
    pub fn output_len(&self) -> usize {
        self.mean_len() + self.basis_len()
    }

    /// Evaluates `phi(x)`.
    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.output_len());
        self.evaluate_into(x, &mut out)?;
        Ok(out)
    }

    /// Evaluates `phi(x)` into a reusable buffer (cleared first).
    pub fn evaluate_into(&self, x: &[f64], out: &mut Vec<f64>) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch { expected: self.input_dim, got: x.len() });
        }
        out.clear();
        match self.mean_kind {
            MeanKind::None => {}
            MeanKind::Constant => out.push(1.0),
            MeanKind::Affine => {
                out.push(1.0);
                out.extend_from_slice(x);
            }
        }
        match self.kind {
            BasisKind::Linear => out.extend_from_slice(x),
            BasisKind::LaplaceTensor => self.tensor_basis(x, out),
            BasisKind::LaplaceAdditive => self.additive_basis(x, out),
        }
        Ok(())
    }

    /// Sine table: `sines[j][k-1]` is the k-th eigenfunction of dimension j
    /// at `x[j]`, including the `1/sqrt(L_j)` normalization.
    fn sine_table(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let m = self.index_count.expect("validated");
        let widths = self.half_widths.as_ref().expect("validated");
        x.iter()
            .zip(widths)
            .map(|(&xj, &l)| {
                let scale = 1.0 / l.sqrt();
                let base = std::f64::consts::PI * (xj + l) / (2.0 * l);
                (1..=m).map(|k| scale * (k as f64 * base).sin()).collect()
            })
            .collect()
    }

    fn tensor_basis(&self, x: &[f64], out: &mut Vec<f64>) {
        let m = self.index_count.expect("validated");
        let sines = self.sine_table(x);
        let d = self.input_dim;
        // Odometer over multi-indices with the first dimension's index
        // moving fastest.
        let mut digits = vec![0usize; d];
        loop {
            let mut v = 1.0;
            for (j, &k) in digits.iter().enumerate() {
                v *= sines[j][k];
            }
            out.push(v);
            let mut j = 0;
            loop {
                digits[j] += 1;
                if digits[j] < m {
                    break;
                }
                digits[j] = 0;
                j += 1;
                if j == d {
                    return;
                }
            }
        }
    }

    fn additive_basis(&self, x: &[f64], out: &mut Vec<f64>) {
        for row in self.sine_table(x) {
            out.extend_from_slice(&row);
        }
    }
}
