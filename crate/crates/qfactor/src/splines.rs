//! Clamped B-spline bases on empirical domains, plus the centered and scaled
//! variant used as sieve regressors.
//!
//! A basis of order `m` (degree `m - 1`) with `L` equally spaced interior knots
//! has `K = L + m` functions. Boundary knots are repeated `m` times so the
//! basis spans all polynomials of degree `m - 1` on the domain and sums to one
//! everywhere on it. The centered variant subtracts the per-function sample
//! mean and rescales by sqrt(K):
//!
//! ```text
//!     B_k(x) = sqrt(K) * (b_k(x) - mean_i b_k(X_i))
//! ```
//!
//! so that each centered function averages to zero over the fitting sample.

use crate::error::{Error, Result};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

/// Basis values at a point, with a flag recording whether the point had to be
/// clamped into the domain.
#[derive(Debug, Clone)]
pub struct BasisEval {
    pub values: Array1<f64>,
    pub clamped: bool,
}

/// A clamped B-spline basis: order, domain, and the full knot sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineSpec {
    order: usize,
    interior_knots: usize,
    domain: (f64, f64),
    knots: Vec<f64>,
}

impl SplineSpec {
    /// Builds the knot sequence for one characteristic from its sampled
    /// values: the domain is the empirical range, interior knots are equally
    /// spaced, and each boundary knot is repeated `order` times.
    pub fn from_sample(sample: &[f64], order: usize, interior_knots: usize) -> Result<Self> {
        if order < 2 {
            return Err(Error::InvalidParameter {
                name: "order",
                value: order as f64,
                constraint: "spline order must be at least 2",
            });
        }
        if sample.is_empty() {
            return Err(Error::DimensionMismatch {
                what: "spline sample".into(),
                expected: "at least one observation".into(),
                actual: "0".into(),
            });
        }
        if sample.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "spline sample".into(),
            });
        }
        let lo = sample.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = sample.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(hi > lo) {
            return Err(Error::DegenerateCovariate { index: 0 });
        }
        Ok(Self::on_domain(lo, hi, order, interior_knots))
    }

    /// Basis on an explicit domain `[lo, hi]`, `lo < hi`.
    pub fn on_domain(lo: f64, hi: f64, order: usize, interior_knots: usize) -> Self {
        assert!(order >= 2, "spline order must be at least 2");
        assert!(hi > lo, "domain must have positive length");
        let mut knots = Vec::with_capacity(interior_knots + 2 * order);
        knots.extend(std::iter::repeat(lo).take(order));
        let steps = (interior_knots + 1) as f64;
        for k in 1..=interior_knots {
            knots.push(lo + (hi - lo) * k as f64 / steps);
        }
        knots.extend(std::iter::repeat(hi).take(order));
        SplineSpec {
            order,
            interior_knots,
            domain: (lo, hi),
            knots,
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn interior_knots(&self) -> usize {
        self.interior_knots
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Number of basis functions, `interior_knots + order`.
    pub fn basis_size(&self) -> usize {
        self.interior_knots + self.order
    }

    /// Raw basis values at `x` by the Cox-de Boor recursion. Points outside
    /// the domain are clamped to the nearest boundary and flagged.
    pub fn eval_raw(&self, x: f64) -> Result<BasisEval> {
        if x.is_nan() {
            return Err(Error::NonFinite {
                what: "spline evaluation point".into(),
            });
        }
        let (lo, hi) = self.domain;
        let clamped = x < lo || x > hi;
        let x = x.clamp(lo, hi);

        let t = &self.knots;
        let n = t.len();
        // Order-1 indicators; the right boundary belongs to the last
        // non-degenerate interval so the basis still sums to one at x = hi.
        let mut b = vec![0.0f64; n - 1];
        for (k, slot) in b.iter_mut().enumerate() {
            let in_half_open = t[k] <= x && x < t[k + 1];
            let at_right_end = x == hi && t[k] < t[k + 1] && t[k + 1] == hi;
            if in_half_open || at_right_end {
                *slot = 1.0;
            }
        }
        for d in 2..=self.order {
            for k in 0..(n - d) {
                let denom_l = t[k + d - 1] - t[k];
                let left = if denom_l > 0.0 {
                    (x - t[k]) / denom_l * b[k]
                } else {
                    0.0
                };
                let denom_r = t[k + d] - t[k + 1];
                let right = if denom_r > 0.0 {
                    (t[k + d] - x) / denom_r * b[k + 1]
                } else {
                    0.0
                };
                b[k] = left + right;
            }
        }
        b.truncate(self.basis_size());
        Ok(BasisEval {
            values: Array1::from_vec(b),
            clamped,
        })
    }
}

/// A spline basis centered on a fitting sample and scaled by sqrt(K).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenteredBasis {
    spec: SplineSpec,
    centers: Vec<f64>,
    scale: f64,
    sample_size: usize,
}

impl CenteredBasis {
    /// Computes per-function sample means of the raw basis over `sample`.
    pub fn fit(spec: SplineSpec, sample: &[f64]) -> Result<Self> {
        if sample.is_empty() {
            return Err(Error::DimensionMismatch {
                what: "centering sample".into(),
                expected: "at least one observation".into(),
                actual: "0".into(),
            });
        }
        let k = spec.basis_size();
        let mut centers = vec![0.0f64; k];
        for &x in sample {
            let eval = spec.eval_raw(x)?;
            for (c, v) in centers.iter_mut().zip(eval.values.iter()) {
                *c += v;
            }
        }
        let n = sample.len() as f64;
        for c in centers.iter_mut() {
            *c /= n;
        }
        let scale = (k as f64).sqrt();
        Ok(CenteredBasis {
            spec,
            centers,
            scale,
            sample_size: sample.len(),
        })
    }

    /// Rebuilds a previously fitted basis from stored parts (deserialization).
    pub fn from_parts(
        spec: SplineSpec,
        centers: Vec<f64>,
        sample_size: usize,
    ) -> Result<Self> {
        if centers.len() != spec.basis_size() {
            return Err(Error::DimensionMismatch {
                what: "centering vector".into(),
                expected: spec.basis_size().to_string(),
                actual: centers.len().to_string(),
            });
        }
        let scale = (spec.basis_size() as f64).sqrt();
        Ok(CenteredBasis {
            spec,
            centers,
            scale,
            sample_size,
        })
    }

    pub fn spec(&self) -> &SplineSpec {
        &self.spec
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn sample_size(&self) -> usize {
        self.sample_size
    }

    pub fn basis_size(&self) -> usize {
        self.spec.basis_size()
    }

    /// Centered, scaled basis values `sqrt(K) * (b(x) - centers)`.
    pub fn eval(&self, x: f64) -> Result<BasisEval> {
        let mut eval = self.spec.eval_raw(x)?;
        for (v, c) in eval.values.iter_mut().zip(self.centers.iter()) {
            *v = self.scale * (*v - c);
        }
        Ok(eval)
    }

    /// Centered basis values for a whole sample, one row per observation.
    pub fn design_matrix(&self, sample: &[f64]) -> Result<Array2<f64>> {
        let k = self.basis_size();
        let mut out = Array2::<f64>::zeros((sample.len(), k));
        for (i, &x) in sample.iter().enumerate() {
            let eval = self.eval(x)?;
            out.row_mut(i).assign(&eval.values);
        }
        Ok(out)
    }
}
