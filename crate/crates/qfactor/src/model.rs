//! Panel container, fit configuration, and the fitted model.
//!
//! A fitted model represents the conditional quantile surface
//!
//! ```text
//! Q(tau | X_i, t) = f_u(t) + sum_j g_j(X_ji) f_j(t)
//! ```
//!
//! with each loading curve `g_j` stored as spline coefficients over a
//! [`CenteredBasis`]. Loadings carry the empirical normalization
//! `mean_i g_j(X_ji)^2 = 1` and factor columns the sign convention
//! `mean_t f_j(t) >= 0`, which together pin down the otherwise
//! scale-and-sign-unidentified factorization.

use crate::error::{Error, Result};
use crate::estimator::IterationRecord;
use crate::splines::CenteredBasis;
use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

/// Balanced panel: N units observed over T periods with J time-invariant
/// characteristics per unit.
#[derive(Debug, Clone)]
pub struct Panel {
    y: Array2<f64>,
    x: Array2<f64>,
    unit_ids: Vec<String>,
    period_ids: Vec<String>,
}

impl Panel {
    /// Validating constructor; `y` is units x periods, `x` units x
    /// characteristics.
    pub fn new(
        y: Array2<f64>,
        x: Array2<f64>,
        unit_ids: Vec<String>,
        period_ids: Vec<String>,
    ) -> Result<Self> {
        let (n, t) = y.dim();
        let (nx, j) = x.dim();
        if n < 2 || t < 1 || j < 1 {
            return Err(Error::DimensionMismatch {
                what: "panel shape".into(),
                expected: "N >= 2, T >= 1, J >= 1".into(),
                actual: format!("N = {n}, T = {t}, J = {j}"),
            });
        }
        if nx != n {
            return Err(Error::DimensionMismatch {
                what: "characteristic rows".into(),
                expected: n.to_string(),
                actual: nx.to_string(),
            });
        }
        if unit_ids.len() != n {
            return Err(Error::DimensionMismatch {
                what: "unit labels".into(),
                expected: n.to_string(),
                actual: unit_ids.len().to_string(),
            });
        }
        if period_ids.len() != t {
            return Err(Error::DimensionMismatch {
                what: "period labels".into(),
                expected: t.to_string(),
                actual: period_ids.len().to_string(),
            });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "panel responses".into(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "panel characteristics".into(),
            });
        }
        for col in 0..j {
            let column = x.column(col);
            let first = column[0];
            if column.iter().all(|v| *v == first) {
                return Err(Error::DegenerateCovariate { index: col });
            }
        }
        Ok(Panel {
            y,
            x,
            unit_ids,
            period_ids,
        })
    }

    /// Constructor with positional labels (`u1..uN`, `1..T`).
    pub fn from_arrays(y: Array2<f64>, x: Array2<f64>) -> Result<Self> {
        let unit_ids = (1..=y.nrows()).map(|i| format!("u{i}")).collect();
        let period_ids = (1..=y.ncols()).map(|t| t.to_string()).collect();
        Self::new(y, x, unit_ids, period_ids)
    }

    pub fn n_units(&self) -> usize {
        self.y.nrows()
    }

    pub fn n_periods(&self) -> usize {
        self.y.ncols()
    }

    pub fn n_characteristics(&self) -> usize {
        self.x.ncols()
    }

    pub fn responses(&self) -> &Array2<f64> {
        &self.y
    }

    pub fn covariates(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn covariate_column(&self, j: usize) -> Result<ArrayView1<'_, f64>> {
        if j >= self.n_characteristics() {
            return Err(Error::IndexOutOfRange {
                what: "characteristic".into(),
                index: j,
                len: self.n_characteristics(),
            });
        }
        Ok(self.x.column(j))
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn period_ids(&self) -> &[String] {
        &self.period_ids
    }

    /// Rebuilds the panel with units permuted; `perm[k]` is the original index
    /// of the unit placed at position k.
    pub fn permuted_units(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n_units();
        if perm.len() != n {
            return Err(Error::DimensionMismatch {
                what: "unit permutation".into(),
                expected: n.to_string(),
                actual: perm.len().to_string(),
            });
        }
        let mut seen = vec![false; n];
        for &i in perm {
            if i >= n || seen[i] {
                return Err(Error::InvalidDesign {
                    reason: format!("unit permutation is not a bijection on 0..{n}"),
                });
            }
            seen[i] = true;
        }
        let mut y = Array2::<f64>::zeros(self.y.dim());
        let mut x = Array2::<f64>::zeros(self.x.dim());
        let mut unit_ids = Vec::with_capacity(n);
        for (row, &i) in perm.iter().enumerate() {
            y.row_mut(row).assign(&self.y.row(i));
            x.row_mut(row).assign(&self.x.row(i));
            unit_ids.push(self.unit_ids[i].clone());
        }
        Ok(Panel {
            y,
            x,
            unit_ids,
            period_ids: self.period_ids.clone(),
        })
    }
}

fn default_epsilon() -> f64 {
    1e-4
}

fn default_max_iter() -> usize {
    50
}

fn default_order() -> usize {
    4
}

/// Estimation settings: quantile level, sieve size, and the alternation
/// stopping rule.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    pub tau: f64,
    /// Spline order m (4 = cubic).
    #[serde(default = "default_order")]
    pub spline_order: usize,
    /// Interior knot count L; the per-characteristic basis size is L + m.
    pub interior_knots: usize,
    /// Convergence tolerance on both iterate-difference norms.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

impl ModelConfig {
    pub fn new(tau: f64, interior_knots: usize) -> Result<Self> {
        let config = ModelConfig {
            tau,
            spline_order: default_order(),
            interior_knots,
            epsilon: default_epsilon(),
            max_iter: default_max_iter(),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::InvalidParameter {
                name: "tau",
                value: self.tau,
                constraint: "quantile level must lie strictly inside (0, 1)",
            });
        }
        if self.spline_order < 2 {
            return Err(Error::InvalidParameter {
                name: "spline_order",
                value: self.spline_order as f64,
                constraint: "spline order must be at least 2",
            });
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidParameter {
                name: "epsilon",
                value: self.epsilon,
                constraint: "convergence tolerance must be positive",
            });
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter {
                name: "max_iter",
                value: 0.0,
                constraint: "iteration budget must be positive",
            });
        }
        Ok(())
    }

    pub fn basis_size(&self) -> usize {
        self.interior_knots + self.spline_order
    }
}

/// Estimated factor-return matrix, loading coefficients, and diagnostics.
#[derive(Debug, Clone)]
pub struct FittedModel {
    config: ModelConfig,
    bases: Vec<CenteredBasis>,
    /// Per-characteristic spline coefficients, already normalized so the
    /// loading has unit empirical second moment on the training sample.
    lambda: Vec<Array1<f64>>,
    /// The scale divided out of each raw loading in the final update.
    normalizers: Vec<f64>,
    /// T x (J+1); column 0 is the intercept path f_u, column j the j-th
    /// factor return path.
    factors: Array2<f64>,
    residuals: Array2<f64>,
    /// Loading values g_j(X_ji) on the training sample, N x J.
    g_at_sample: Array2<f64>,
    iterations_used: usize,
    converged: bool,
    trace: Vec<IterationRecord>,
    /// Pooled mean check loss of the initial estimator, before alternation.
    initial_objective: f64,
}

pub(crate) struct FittedParts {
    pub config: ModelConfig,
    pub bases: Vec<CenteredBasis>,
    pub lambda: Vec<Array1<f64>>,
    pub normalizers: Vec<f64>,
    pub factors: Array2<f64>,
    pub iterations_used: usize,
    pub converged: bool,
    pub trace: Vec<IterationRecord>,
    pub initial_objective: f64,
}

const NORMALIZATION_TOL: f64 = 1e-8;
const SIGN_TOL: f64 = 1e-10;

impl FittedModel {
    /// Assembles the container from estimation output, recomputing sample
    /// loadings and residuals and enforcing the three container invariants
    /// (unit empirical norm, nonnegative factor means, residual identity).
    pub(crate) fn assemble(parts: FittedParts, panel: &Panel) -> Result<Self> {
        let n = panel.n_units();
        let t = panel.n_periods();
        let j_count = panel.n_characteristics();
        if parts.bases.len() != j_count
            || parts.lambda.len() != j_count
            || parts.normalizers.len() != j_count
        {
            return Err(Error::DimensionMismatch {
                what: "loading blocks".into(),
                expected: j_count.to_string(),
                actual: parts.lambda.len().to_string(),
            });
        }
        if parts.factors.dim() != (t, j_count + 1) {
            return Err(Error::DimensionMismatch {
                what: "factor matrix".into(),
                expected: format!("{t} x {}", j_count + 1),
                actual: format!("{} x {}", parts.factors.nrows(), parts.factors.ncols()),
            });
        }

        let mut g_at_sample = Array2::<f64>::zeros((n, j_count));
        for j in 0..j_count {
            for i in 0..n {
                let x = panel.covariates()[(i, j)];
                let values = parts.bases[j].eval(x)?.values;
                g_at_sample[(i, j)] = values.dot(&parts.lambda[j]);
            }
            let mean_sq = g_at_sample.column(j).mapv(|v| v * v).mean().unwrap();
            if (mean_sq - 1.0).abs() > NORMALIZATION_TOL {
                return Err(Error::InvalidDesign {
                    reason: format!(
                        "loading {j} violates the unit-norm convention: mean square {mean_sq:.12}"
                    ),
                });
            }
            let factor_mean = parts.factors.column(j + 1).mean().unwrap();
            if factor_mean < -SIGN_TOL {
                return Err(Error::InvalidDesign {
                    reason: format!(
                        "factor {j} violates the sign convention: mean {factor_mean:.3e}"
                    ),
                });
            }
        }

        let mut residuals = Array2::<f64>::zeros((n, t));
        for i in 0..n {
            for s in 0..t {
                let mut fit = parts.factors[(s, 0)];
                for j in 0..j_count {
                    fit += g_at_sample[(i, j)] * parts.factors[(s, j + 1)];
                }
                residuals[(i, s)] = panel.responses()[(i, s)] - fit;
            }
        }

        Ok(FittedModel {
            config: parts.config,
            bases: parts.bases,
            lambda: parts.lambda,
            normalizers: parts.normalizers,
            factors: parts.factors,
            residuals,
            g_at_sample,
            iterations_used: parts.iterations_used,
            converged: parts.converged,
            trace: parts.trace,
            initial_objective: parts.initial_objective,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn tau(&self) -> f64 {
        self.config.tau
    }

    pub fn n_units(&self) -> usize {
        self.residuals.nrows()
    }

    pub fn n_periods(&self) -> usize {
        self.factors.nrows()
    }

    pub fn n_factors(&self) -> usize {
        self.lambda.len()
    }

    /// T x (J+1) factor-return matrix; column 0 is the intercept path.
    pub fn factors(&self) -> &Array2<f64> {
        &self.factors
    }

    pub fn residuals(&self) -> &Array2<f64> {
        &self.residuals
    }

    /// Loading values at the training sample, N x J.
    pub fn loadings_at_sample(&self) -> &Array2<f64> {
        &self.g_at_sample
    }

    pub fn bases(&self) -> &[CenteredBasis] {
        &self.bases
    }

    pub fn lambda(&self) -> &[Array1<f64>] {
        &self.lambda
    }

    pub fn normalizers(&self) -> &[f64] {
        &self.normalizers
    }

    pub fn iterations_used(&self) -> usize {
        self.iterations_used
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn trace(&self) -> &[IterationRecord] {
        &self.trace
    }

    pub fn initial_objective(&self) -> f64 {
        self.initial_objective
    }

    /// Pooled mean check loss of the final fit.
    pub fn pooled_objective(&self) -> f64 {
        let nt = (self.n_units() * self.n_periods()) as f64;
        self.residuals
            .iter()
            .map(|&r| crate::qreg::check_loss(self.config.tau, r))
            .sum::<f64>()
            / nt
    }

    /// Evaluates the j-th loading curve on a grid (clamped to the training
    /// domain by the basis).
    pub fn evaluate_loading(&self, j: usize, grid: &[f64]) -> Result<Vec<f64>> {
        if j >= self.lambda.len() {
            return Err(Error::IndexOutOfRange {
                what: "loading".into(),
                index: j,
                len: self.lambda.len(),
            });
        }
        let norm = self.lambda[j].dot(&self.lambda[j]).sqrt();
        if norm < 1e-12 {
            return Err(Error::NullLoading { index: j });
        }
        let mut out = Vec::with_capacity(grid.len());
        for &x in grid {
            let values = self.bases[j].eval(x)?.values;
            out.push(values.dot(&self.lambda[j]));
        }
        Ok(out)
    }

    /// Fitted conditional quantile for a training unit and period.
    pub fn predict_quantile(&self, unit: usize, period: usize) -> Result<f64> {
        if unit >= self.n_units() {
            return Err(Error::IndexOutOfRange {
                what: "unit".into(),
                index: unit,
                len: self.n_units(),
            });
        }
        if period >= self.n_periods() {
            return Err(Error::IndexOutOfRange {
                what: "period".into(),
                index: period,
                len: self.n_periods(),
            });
        }
        let mut fit = self.factors[(period, 0)];
        for j in 0..self.n_factors() {
            fit += self.g_at_sample[(unit, j)] * self.factors[(period, j + 1)];
        }
        Ok(fit)
    }

    /// The (1, g_1(X_1i), ..., g_J(X_Ji)) regressor vector for a unit.
    pub fn regressor_row(&self, unit: usize) -> Result<Array1<f64>> {
        if unit >= self.n_units() {
            return Err(Error::IndexOutOfRange {
                what: "unit".into(),
                index: unit,
                len: self.n_units(),
            });
        }
        let j_count = self.n_factors();
        let mut row = Array1::<f64>::zeros(j_count + 1);
        row[0] = 1.0;
        for j in 0..j_count {
            row[j + 1] = self.g_at_sample[(unit, j)];
        }
        Ok(row)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = FittedModelFile {
            schema: SCHEMA_NAME.to_string(),
            version: SCHEMA_VERSION,
            config: self.config.clone(),
            bases: self.bases.clone(),
            lambda: self.lambda.iter().map(|l| l.to_vec()).collect(),
            normalizers: self.normalizers.clone(),
            factors: matrix_rows(&self.factors),
            iterations_used: self.iterations_used,
            converged: self.converged,
            trace: self.trace.clone(),
            initial_objective: self.initial_objective,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    /// Loads a serialized model and rebinds it to a panel, recomputing sample
    /// loadings and residuals. The panel must be the one the model was fit on:
    /// the unit-norm check is re-verified against it.
    pub fn from_json(text: &str, panel: &Panel) -> Result<Self> {
        let file: FittedModelFile = serde_json::from_str(text)?;
        if file.schema != SCHEMA_NAME || file.version != SCHEMA_VERSION {
            return Err(Error::UnsupportedSchema {
                schema: file.schema,
                version: file.version,
            });
        }
        file.config.validate()?;
        let factors = matrix_from_rows(&file.factors, "factor matrix")?;
        let lambda: Vec<Array1<f64>> = file.lambda.into_iter().map(Array1::from_vec).collect();
        for (j, basis) in file.bases.iter().enumerate() {
            if basis.sample_size() != panel.n_units() {
                return Err(Error::InvalidDesign {
                    reason: format!(
                        "stored basis {j} was centered on {} units but the panel has {}",
                        basis.sample_size(),
                        panel.n_units()
                    ),
                });
            }
            if lambda[j].len() != basis.spec().basis_size() {
                return Err(Error::DimensionMismatch {
                    what: format!("loading coefficients for characteristic {j}"),
                    expected: basis.spec().basis_size().to_string(),
                    actual: lambda[j].len().to_string(),
                });
            }
        }
        Self::assemble(
            FittedParts {
                config: file.config,
                bases: file.bases,
                lambda,
                normalizers: file.normalizers,
                factors,
                iterations_used: file.iterations_used,
                converged: file.converged,
                trace: file.trace,
                initial_objective: file.initial_objective,
            },
            panel,
        )
    }
}

const SCHEMA_NAME: &str = "qfactor-fitted-model";
const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct FittedModelFile {
    schema: String,
    version: u32,
    config: ModelConfig,
    bases: Vec<CenteredBasis>,
    lambda: Vec<Vec<f64>>,
    normalizers: Vec<f64>,
    factors: Vec<Vec<f64>>,
    iterations_used: usize,
    converged: bool,
    trace: Vec<IterationRecord>,
    initial_objective: f64,
}

fn matrix_rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<Array2<f64>> {
    if rows.is_empty() {
        return Err(Error::DimensionMismatch {
            what: what.into(),
            expected: "at least one row".into(),
            actual: "0 rows".into(),
        });
    }
    let cols = rows[0].len();
    let mut flat = Vec::with_capacity(rows.len() * cols);
    for row in rows {
        if row.len() != cols {
            return Err(Error::DimensionMismatch {
                what: what.into(),
                expected: format!("{cols} columns"),
                actual: row.len().to_string(),
            });
        }
        flat.extend_from_slice(row);
    }
    Array2::from_shape_vec((rows.len(), cols), flat).map_err(|_| Error::DimensionMismatch {
        what: what.into(),
        expected: "rectangular".into(),
        actual: "ragged".into(),
    })
}
