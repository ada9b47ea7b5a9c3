//! Fixed-b robust inference on estimated period effects.
//!
//! The estimated factor returns f_t carry cross-sectional dependence whose
//! strength is unknown; the tests here order the units (so that dependence
//! decays in the ordered index), estimate a density-weighted design matrix by
//! Powell kernel smoothing, estimate the long-run variance by a HAC sum whose
//! bandwidth is a fixed fraction b of the cross-section, and compare F- and
//! t-type statistics against simulated fixed-b critical values from
//! [`crate::fixed_b`].

use crate::error::{Error, Result};
use crate::estimator::{InitialFit, SieveDesigns};
use crate::fixed_b::{lookup_pvalue, CriticalValueTable, Kernel, TestKind};
use crate::linalg;
use crate::model::{FittedModel, ModelConfig, Panel};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

/// How units are arranged before the cross-sectional HAC sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderingStrategy {
    /// Keep the panel's own unit order.
    AsGiven,
    /// Ascending by one covariate column (zero-based index).
    ByCovariate(usize),
    /// Ascending by the score on the first principal component of the
    /// standardized covariate matrix.
    ByPc1,
}

/// Permutation that arranges units per the strategy; `perm[p]` is the
/// original index of the unit in ordered position p.
pub fn order_units(panel: &Panel, strategy: OrderingStrategy) -> Result<Vec<usize>> {
    let n = panel.n_units();
    match strategy {
        OrderingStrategy::AsGiven => Ok((0..n).collect()),
        OrderingStrategy::ByCovariate(j) => {
            let col = panel.covariate_column(j)?;
            let mut perm: Vec<usize> = (0..n).collect();
            // Stable sort keeps ties in original order.
            perm.sort_by(|&a, &b| col[a].total_cmp(&col[b]));
            Ok(perm)
        }
        OrderingStrategy::ByPc1 => {
            let scores = pc1_scores(panel)?;
            let mut perm: Vec<usize> = (0..n).collect();
            perm.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
            Ok(perm)
        }
    }
}

/// Scores on the leading principal component of the standardized covariates,
/// with the eigenvector sign fixed so its largest-magnitude entry is
/// positive.
fn pc1_scores(panel: &Panel) -> Result<Array1<f64>> {
    let n = panel.n_units();
    let j_count = panel.n_characteristics();
    let x = panel.covariates();

    let mut standardized = Array2::<f64>::zeros((n, j_count));
    for j in 0..j_count {
        let col = x.column(j);
        let mean = col.mean().unwrap();
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        if var <= 0.0 {
            return Err(Error::DegenerateCovariate { index: j });
        }
        let sd = var.sqrt();
        for i in 0..n {
            standardized[(i, j)] = (x[(i, j)] - mean) / sd;
        }
    }

    let mut cov = Array2::<f64>::zeros((j_count, j_count));
    for a in 0..j_count {
        for b in a..j_count {
            let mut acc = 0.0;
            for i in 0..n {
                acc += standardized[(i, a)] * standardized[(i, b)];
            }
            let v = acc / (n as f64 - 1.0);
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }

    let (_, vectors) = linalg::jacobi_eigen(&cov);
    let mut leading = vectors.column(0).to_owned();
    let mut top = 0usize;
    for k in 1..j_count {
        if leading[k].abs() > leading[top].abs() {
            top = k;
        }
    }
    if leading[top] < 0.0 {
        leading.mapv_inplace(|v| -v);
    }
    Ok(standardized.dot(&leading))
}

fn validate_permutation(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(Error::DimensionMismatch {
            what: "unit ordering".into(),
            expected: n.to_string(),
            actual: perm.len().to_string(),
        });
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || seen[p] {
            return Err(Error::InvalidDesign {
                reason: "unit ordering is not a bijection".into(),
            });
        }
        seen[p] = true;
    }
    Ok(())
}

/// Powell bandwidth kappa * N^{-1/5}.
pub fn default_bandwidth(n: usize, kappa: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidParameter {
            name: "n",
            value: 0.0,
            constraint: "sample size must be positive",
        });
    }
    if !(kappa > 0.0) {
        return Err(Error::InvalidParameter {
            name: "kappa",
            value: kappa,
            constraint: "bandwidth constant must be positive",
        });
    }
    Ok(kappa * (n as f64).powf(-0.2))
}

/// Powell kernel estimate of the density-weighted design matrix for one
/// period.
#[derive(Debug, Clone)]
pub struct LambdaEstimate {
    pub period: usize,
    pub bandwidth: f64,
    /// (J+1) x (J+1) symmetric matrix (Nh)^-1 sum_i K(e_it/h) G_i G_i'.
    pub matrix: Array2<f64>,
    /// Observations with |residual| <= h.
    pub included: usize,
    /// Set when no observation fell inside the bandwidth window; the matrix
    /// is then zero and unusable downstream.
    pub singular_warning: bool,
}

/// Estimates Lambda for period t with the uniform kernel K(u) = 1{|u|<=1}/2.
pub fn estimate_lambda(
    fitted: &FittedModel,
    panel: &Panel,
    t: usize,
    h: f64,
) -> Result<LambdaEstimate> {
    if !(h > 0.0) {
        return Err(Error::InvalidParameter {
            name: "h",
            value: h,
            constraint: "kernel bandwidth must be positive",
        });
    }
    if t >= panel.n_periods() {
        return Err(Error::IndexOutOfRange {
            what: "period",
            index: t,
            len: panel.n_periods(),
        });
    }
    let n = panel.n_units();
    let p = fitted.n_factors() + 1;
    let mut matrix = Array2::<f64>::zeros((p, p));
    let mut included = 0usize;
    for i in 0..n {
        let eps = fitted.residuals()[(i, t)];
        if eps.abs() <= h {
            included += 1;
            let g = fitted.regressor_row(i)?;
            for a in 0..p {
                for b in 0..p {
                    matrix[(a, b)] += 0.5 * g[a] * g[b];
                }
            }
        }
    }
    matrix.mapv_inplace(|v| v / (n as f64 * h));
    Ok(LambdaEstimate {
        period: t,
        bandwidth: h,
        matrix,
        included,
        singular_warning: included == 0,
    })
}

/// Fixed-b HAC estimate of the score long-run variance, per period and
/// averaged over periods.
#[derive(Debug, Clone)]
pub struct OmegaEstimate {
    pub b: f64,
    pub kernel: Kernel,
    /// Ordering in effect: `ordering[p]` is the original unit at position p.
    pub ordering: Vec<usize>,
    pub per_period: Vec<Array2<f64>>,
    pub averaged: Array2<f64>,
}

/// Estimates Omega with bandwidth M = bN over the supplied unit ordering:
/// tau(1-tau) N^-1 sum_i G G' plus the cross-term sum
/// N^-1 sum_{i != j} K*((i-j)/M) v_i v_j' with v = G (tau - 1{resid < 0}).
pub fn estimate_omega(
    fitted: &FittedModel,
    panel: &Panel,
    ordering: &[usize],
    b: f64,
    kernel: Kernel,
) -> Result<OmegaEstimate> {
    if !(b > 0.0 && b <= 1.0) {
        return Err(Error::InvalidParameter {
            name: "b",
            value: b,
            constraint: "fixed-b fraction must lie in (0, 1]",
        });
    }
    let n = panel.n_units();
    validate_permutation(ordering, n)?;
    let t_count = panel.n_periods();
    let p = fitted.n_factors() + 1;
    let tau = fitted.tau();
    let m = b * n as f64;

    // The diagonal term is ordering-free; compute it once.
    let mut diagonal = Array2::<f64>::zeros((p, p));
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let g = fitted.regressor_row(i)?;
        for a in 0..p {
            for c in 0..p {
                diagonal[(a, c)] += g[a] * g[c];
            }
        }
        rows.push(g);
    }
    diagonal.mapv_inplace(|v| v * tau * (1.0 - tau) / n as f64);

    let mut per_period = Vec::with_capacity(t_count);
    let mut averaged = Array2::<f64>::zeros((p, p));
    for t in 0..t_count {
        // Scores in ordered positions.
        let scores: Vec<Array1<f64>> = ordering
            .iter()
            .map(|&unit| {
                let psi = tau
                    - if fitted.residuals()[(unit, t)] < 0.0 {
                        1.0
                    } else {
                        0.0
                    };
                rows[unit].mapv(|v| v * psi)
            })
            .collect();

        let mut omega_t = diagonal.clone();
        for d in 1..n {
            let w = kernel.weight(d as f64 / m);
            if w == 0.0 && kernel == Kernel::Bartlett {
                break;
            }
            for pos in 0..(n - d) {
                let (vi, vj) = (&scores[pos + d], &scores[pos]);
                for a in 0..p {
                    for c in 0..p {
                        omega_t[(a, c)] += w * (vi[a] * vj[c] + vj[a] * vi[c]) / n as f64;
                    }
                }
            }
        }
        averaged += &omega_t;
        per_period.push(omega_t);
    }
    averaged.mapv_inplace(|v| v / t_count as f64);

    Ok(OmegaEstimate {
        b,
        kernel,
        ordering: ordering.to_vec(),
        per_period,
        averaged,
    })
}

/// One fixed-b test of R f_t = r.
#[derive(Debug, Clone)]
pub struct FixedBTest {
    pub kind: TestKind,
    pub restriction: Array2<f64>,
    pub target: Array1<f64>,
    pub period: usize,
    pub statistic: f64,
    pub b: f64,
    pub kernel: Kernel,
    pub tau: f64,
    /// (level, data-scale critical value).
    pub critical_values: Vec<(f64, f64)>,
    pub p_value: f64,
    pub p_is_upper_bound: bool,
}

struct TestInputs<'a> {
    fitted: &'a FittedModel,
    panel: &'a Panel,
    lambda: &'a LambdaEstimate,
    omega: &'a OmegaEstimate,
    table: &'a CriticalValueTable,
}

/// Middle matrix R {tau(1-tau) Lambda^-1 Omega Lambda^-1} R' and the
/// restriction discrepancy R f_t - r.
fn restricted_variance(
    inputs: &TestInputs<'_>,
    restriction: &Array2<f64>,
    target: &Array1<f64>,
    t: usize,
) -> Result<(Array2<f64>, Array1<f64>)> {
    let p = inputs.fitted.n_factors() + 1;
    let q = restriction.nrows();
    if restriction.ncols() != p {
        return Err(Error::DimensionMismatch {
            what: "restriction matrix columns".into(),
            expected: p.to_string(),
            actual: restriction.ncols().to_string(),
        });
    }
    if target.len() != q {
        return Err(Error::DimensionMismatch {
            what: "restriction target length".into(),
            expected: q.to_string(),
            actual: target.len().to_string(),
        });
    }
    if q == 0 || q > p {
        return Err(Error::InvalidDesign {
            reason: format!("restriction row count {q} must lie in 1..={p}"),
        });
    }
    // Full row rank: the Gram matrix R R' must be positive definite.
    let gram = restriction.dot(&restriction.t());
    if linalg::cholesky(&gram).is_err() {
        return Err(Error::InvalidDesign {
            reason: "restriction matrix is row rank deficient".into(),
        });
    }
    if t >= inputs.panel.n_periods() {
        return Err(Error::IndexOutOfRange {
            what: "period",
            index: t,
            len: inputs.panel.n_periods(),
        });
    }

    let tau = inputs.fitted.tau();
    let lambda_inv = linalg::spd_inverse(&inputs.lambda.matrix).map_err(|_| {
        Error::SingularMatrix {
            what: "density-weighted design matrix".into(),
            condition: Some(linalg::condition_number(&inputs.lambda.matrix)),
        }
    })?;
    let sandwich = lambda_inv
        .dot(&inputs.omega.averaged)
        .dot(&lambda_inv)
        .mapv(|v| v * tau * (1.0 - tau));
    let middle = restriction.dot(&sandwich).dot(&restriction.t());

    let f_row = inputs.fitted.factors().row(t).to_owned();
    let discrepancy = restriction.dot(&f_row) - target;
    Ok((middle, discrepancy))
}

fn check_table(inputs: &TestInputs<'_>, q: usize) -> Result<()> {
    let table = inputs.table;
    if table.q != q
        || table.kernel != inputs.omega.kernel
        || (table.b - inputs.omega.b).abs() > 1e-12
    {
        return Err(Error::TableMismatch {
            what: "critical value table configuration".into(),
            table: format!(
                "kernel {}, b {:.4}, q {}",
                table.kernel.label(),
                table.b,
                table.q
            ),
            requested: format!(
                "kernel {}, b {:.4}, q {}",
                inputs.omega.kernel.label(),
                inputs.omega.b,
                q
            ),
        });
    }
    Ok(())
}

/// F-type test of R f_t = r:
/// N (Rf - r)' {R tau(1-tau) Lambda^-1 Omega Lambda^-1 R'}^-1 (Rf - r) / q.
pub fn f_statistic(
    fitted: &FittedModel,
    panel: &Panel,
    restriction: &Array2<f64>,
    target: &Array1<f64>,
    t: usize,
    lambda: &LambdaEstimate,
    omega: &OmegaEstimate,
    table: &CriticalValueTable,
) -> Result<FixedBTest> {
    let inputs = TestInputs {
        fitted,
        panel,
        lambda,
        omega,
        table,
    };
    let q = restriction.nrows();
    check_table(&inputs, q)?;
    let (middle, discrepancy) = restricted_variance(&inputs, restriction, target, t)?;
    let factor = linalg::cholesky(&middle).map_err(|_| Error::SingularMatrix {
        what: "restricted variance matrix".into(),
        condition: Some(linalg::condition_number(&middle)),
    })?;
    let solved = linalg::cholesky_solve(&factor, &discrepancy);
    let statistic = panel.n_units() as f64 * discrepancy.dot(&solved) / q as f64;
    let lookup = lookup_pvalue(table, statistic, fitted.tau(), TestKind::F)?;
    Ok(FixedBTest {
        kind: TestKind::F,
        restriction: restriction.clone(),
        target: target.clone(),
        period: t,
        statistic,
        b: omega.b,
        kernel: omega.kernel,
        tau: fitted.tau(),
        critical_values: lookup.critical_values,
        p_value: lookup.p_value,
        p_is_upper_bound: lookup.p_is_upper_bound,
    })
}

/// Signed t-type test of a single restriction:
/// sqrt(N) (Rf - r) / sqrt(R tau(1-tau) Lambda^-1 Omega Lambda^-1 R').
pub fn t_statistic(
    fitted: &FittedModel,
    panel: &Panel,
    restriction: &Array2<f64>,
    target: f64,
    t: usize,
    lambda: &LambdaEstimate,
    omega: &OmegaEstimate,
    table: &CriticalValueTable,
) -> Result<FixedBTest> {
    if restriction.nrows() != 1 {
        return Err(Error::InvalidDesign {
            reason: format!(
                "t-type test needs a single restriction row, got {}",
                restriction.nrows()
            ),
        });
    }
    let inputs = TestInputs {
        fitted,
        panel,
        lambda,
        omega,
        table,
    };
    check_table(&inputs, 1)?;
    let target_vec = Array1::from_vec(vec![target]);
    let (middle, discrepancy) = restricted_variance(&inputs, restriction, &target_vec, t)?;
    let variance = middle[(0, 0)];
    if !(variance > 0.0) {
        return Err(Error::SingularMatrix {
            what: "restricted variance matrix".into(),
            condition: Some(linalg::condition_number(&middle)),
        });
    }
    let statistic = (panel.n_units() as f64).sqrt() * discrepancy[0] / variance.sqrt();
    let lookup = lookup_pvalue(table, statistic, fitted.tau(), TestKind::T)?;
    Ok(FixedBTest {
        kind: TestKind::T,
        restriction: restriction.clone(),
        target: target_vec,
        period: t,
        statistic,
        b: omega.b,
        kernel: omega.kernel,
        tau: fitted.tau(),
        critical_values: lookup.critical_values,
        p_value: lookup.p_value,
        p_is_upper_bound: lookup.p_is_upper_bound,
    })
}

/// Settings shared by the per-period significance scan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InferenceConfig {
    /// Powell bandwidth constant; h = kappa * N^{-1/5}.
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    /// Fixed-b HAC fraction.
    #[serde(default = "default_b")]
    pub b: f64,
    #[serde(default = "default_kernel")]
    pub kernel: Kernel,
    #[serde(default = "default_ordering")]
    pub ordering: OrderingStrategy,
    /// Periods per year for volatility annualization (251 trading days).
    #[serde(default = "default_annualization")]
    pub annualization_periods: f64,
}

fn default_kappa() -> f64 {
    1.0
}
fn default_b() -> f64 {
    0.2
}
fn default_kernel() -> Kernel {
    Kernel::Bartlett
}
fn default_ordering() -> OrderingStrategy {
    OrderingStrategy::AsGiven
}
fn default_annualization() -> f64 {
    251.0
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            kappa: default_kappa(),
            b: default_b(),
            kernel: default_kernel(),
            ordering: default_ordering(),
            annualization_periods: default_annualization(),
        }
    }
}

/// Per-factor significance row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FactorSignificance {
    pub label: String,
    /// Annualized standard deviation of the factor return series.
    pub annualized_vol: f64,
    /// Percentage of periods where H0: f_jt = 0 is rejected.
    pub pct_significant: f64,
    /// Median across periods of the per-period p-values.
    pub median_p: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SignificanceReport {
    pub level: f64,
    pub rows: Vec<FactorSignificance>,
}

/// Runs per-period t-tests of H0: f_jt = 0 for every factor column
/// (intercept included) and summarizes rejection rates, median p-values, and
/// annualized volatilities.
pub fn significance_summary(
    fitted: &FittedModel,
    panel: &Panel,
    config: &InferenceConfig,
    table: &CriticalValueTable,
    level: f64,
) -> Result<SignificanceReport> {
    let t_count = panel.n_periods();
    if t_count < 2 {
        return Err(Error::InvalidDesign {
            reason: "significance summary needs at least two periods".into(),
        });
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParameter {
            name: "level",
            value: level,
            constraint: "confidence level must lie strictly inside (0, 1)",
        });
    }
    let n = panel.n_units();
    let p = fitted.n_factors() + 1;
    let h = default_bandwidth(n, config.kappa)?;
    let ordering = order_units(panel, config.ordering)?;
    let omega = estimate_omega(fitted, panel, &ordering, config.b, config.kernel)?;

    let lambdas: Vec<LambdaEstimate> = (0..t_count)
        .map(|t| estimate_lambda(fitted, panel, t, h))
        .collect::<Result<_>>()?;

    let alpha = 1.0 - level;
    let mut rows = Vec::with_capacity(p);
    for col in 0..p {
        let mut restriction = Array2::<f64>::zeros((1, p));
        restriction[(0, col)] = 1.0;

        let mut p_values = Vec::with_capacity(t_count);
        let mut rejected = 0usize;
        for t in 0..t_count {
            let test = t_statistic(
                fitted,
                panel,
                &restriction,
                0.0,
                t,
                &lambdas[t],
                &omega,
                table,
            )?;
            if test.p_value < alpha {
                rejected += 1;
            }
            p_values.push(test.p_value);
        }
        p_values.sort_by(|a, b| a.total_cmp(b));
        let median_p = if t_count % 2 == 1 {
            p_values[t_count / 2]
        } else {
            0.5 * (p_values[t_count / 2 - 1] + p_values[t_count / 2])
        };

        let series = fitted.factors().column(col);
        let mean = series.mean().unwrap();
        let var = series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (t_count as f64 - 1.0);
        let annualized_vol = var.sqrt() * config.annualization_periods.sqrt();

        let label = if col == 0 {
            "intercept".to_string()
        } else {
            format!("factor_{col}")
        };
        rows.push(FactorSignificance {
            label,
            annualized_vol,
            pct_significant: 100.0 * rejected as f64 / t_count as f64,
            median_p,
        });
    }
    Ok(SignificanceReport { level, rows })
}

/// Uncalibrated factor-presence diagnostic: the empirical mean square of the
/// time-averaged initial additive fit for characteristic j,
/// N^-1 sum_i (T^-1 sum_t h_jt(X_ji))^2. Zero means no detected loading.
pub fn presence_diagnostic(
    initial: &InitialFit,
    panel: &Panel,
    config: &ModelConfig,
    j: usize,
) -> Result<f64> {
    if j >= panel.n_characteristics() {
        return Err(Error::IndexOutOfRange {
            what: "characteristic",
            index: j,
            len: panel.n_characteristics(),
        });
    }
    let designs = SieveDesigns::build(panel, config)?;
    let averaged_fit = designs.full[j].dot(&initial.lambda_bar[j]);
    Ok(averaged_fit.mapv(|v| v * v).mean().unwrap())
}
