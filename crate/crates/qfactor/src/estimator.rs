//! Iterative sieve estimation of the quantile factor model.
//!
//! The pipeline: per-period additive quantile fits give preliminary loading
//! coefficients, their time averages (normalized) seed the loading curves,
//! and the algorithm then alternates a pooled loading update across all
//! observations with per-period factor regressions until both iterate
//! differences fall below the configured tolerance.
//!
//! Every centered spline block satisfies `sum_k B_jk(x) = 0` identically, so
//! block coefficients are only identified up to a constant shift. All linear
//! programs here therefore drop one column per block and reconstruct full
//! coefficient vectors canonicalized to block mean zero, which keeps the
//! solver on full-rank designs and makes iterate comparisons well defined.

use crate::error::{Error, Result};
use crate::model::{FittedModel, FittedParts, ModelConfig, Panel};
use crate::qreg::{self, QregProblem, SolveOptions};
use crate::splines::{CenteredBasis, SplineSpec};
use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// One alternation step of [`fit`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    /// Frobenius norm of the factor-matrix change.
    pub delta_factors: f64,
    /// Root sum of squared changes across all loading coefficient blocks.
    pub delta_lambda: f64,
    /// Pooled mean check loss after the loading update, at the previous
    /// factors.
    pub objective_after_loadings: f64,
    /// Pooled mean check loss after the factor update.
    pub objective_after_factors: f64,
    /// Largest deviation of any loading's empirical mean square from 1.
    pub max_normalization_dev: f64,
    /// Smallest time-mean over factor columns, after sign canonicalization.
    pub min_factor_mean: f64,
}

/// Loading curve state: normalized coefficients plus the scale divided out.
#[derive(Debug, Clone)]
pub struct LoadingState {
    pub lambda: Array1<f64>,
    pub normalizer: f64,
}

/// Output of the initial (pre-alternation) estimators.
#[derive(Debug, Clone)]
pub struct InitialFit {
    /// Per-period intercepts from the additive fits.
    pub h_u: Array1<f64>,
    /// Per-period, per-characteristic additive coefficients (block mean
    /// zero).
    pub theta: Vec<Vec<Array1<f64>>>,
    /// Time-averaged coefficients before normalization.
    pub lambda_bar: Vec<Array1<f64>>,
    /// Normalized loading states.
    pub g0: Vec<LoadingState>,
    /// Initial factor matrix, T x (J+1).
    pub f0: Array2<f64>,
    /// Pooled mean check loss at the initial estimates.
    pub objective: f64,
}

/// Per-characteristic centered design matrices, built once per panel and
/// shared by every estimation step.
pub struct SieveDesigns {
    pub bases: Vec<CenteredBasis>,
    /// N x K centered design per characteristic.
    pub full: Vec<Array2<f64>>,
}

impl SieveDesigns {
    pub fn build(panel: &Panel, config: &ModelConfig) -> Result<Self> {
        let mut bases = Vec::with_capacity(panel.n_characteristics());
        let mut full = Vec::with_capacity(panel.n_characteristics());
        for j in 0..panel.n_characteristics() {
            let sample: Vec<f64> = panel.covariate_column(j)?.to_vec();
            let spec =
                SplineSpec::from_sample(&sample, config.spline_order, config.interior_knots)
                    .map_err(|e| match e {
                        Error::DegenerateCovariate { .. } => Error::DegenerateCovariate { index: j },
                        other => other,
                    })?;
            let basis = CenteredBasis::fit(spec, &sample)?;
            full.push(basis.design_matrix(&sample)?);
            bases.push(basis);
        }
        Ok(SieveDesigns { bases, full })
    }

    pub fn n_units(&self) -> usize {
        self.full[0].nrows()
    }

    pub fn basis_size(&self) -> usize {
        self.full[0].ncols()
    }

    /// Loading values at the sample for given coefficient blocks, N x J.
    pub fn loadings_at_sample(&self, lambda: &[LoadingState]) -> Array2<f64> {
        let n = self.n_units();
        let mut g = Array2::<f64>::zeros((n, self.full.len()));
        for (j, state) in lambda.iter().enumerate() {
            let col = self.full[j].dot(&state.lambda);
            g.column_mut(j).assign(&col);
        }
        g
    }
}

/// Lifts reduced block coefficients (one column dropped) back to the full
/// basis length, canonicalized to block mean zero.
fn expand_block(reduced: &[f64]) -> Array1<f64> {
    let k = reduced.len() + 1;
    let mut full = Array1::<f64>::zeros(k);
    for (i, &v) in reduced.iter().enumerate() {
        full[i] = v;
    }
    let mean = full.sum() / k as f64;
    full.mapv_inplace(|v| v - mean);
    full
}

/// Result of one per-period additive quantile fit.
#[derive(Debug, Clone)]
pub struct PeriodFit {
    pub intercept: f64,
    /// Block coefficients per characteristic, block mean zero.
    pub theta: Vec<Array1<f64>>,
    pub objective: f64,
}

/// Fits the additive model `y_it ~ intercept + sum_j B_j(X_ji)' theta_j` for
/// one period by quantile regression.
pub fn fit_period_additive(
    panel: &Panel,
    config: &ModelConfig,
    designs: &SieveDesigns,
    t: usize,
) -> Result<PeriodFit> {
    let n = panel.n_units();
    let j_count = designs.full.len();
    let k = designs.basis_size();
    let reduced = k - 1;
    let p = 1 + j_count * reduced;

    let mut z = Array2::<f64>::zeros((n, p));
    for i in 0..n {
        z[(i, 0)] = 1.0;
        for j in 0..j_count {
            for c in 0..reduced {
                z[(i, 1 + j * reduced + c)] = designs.full[j][(i, c)];
            }
        }
    }
    let y = panel.responses().column(t).to_owned();
    let problem = QregProblem::new(z, y, config.tau).map_err(|e| wrap_period(t, e))?;
    let solution =
        qreg::solve(&problem, SolveOptions::default()).map_err(|e| wrap_period(t, e))?;

    let mut theta = Vec::with_capacity(j_count);
    for j in 0..j_count {
        let start = 1 + j * reduced;
        let block: Vec<f64> = (0..reduced).map(|c| solution.coefficients[start + c]).collect();
        theta.push(expand_block(&block));
    }
    Ok(PeriodFit {
        intercept: solution.coefficients[0],
        theta,
        objective: solution.objective,
    })
}

fn wrap_period(t: usize, e: Error) -> Error {
    Error::PeriodEstimation {
        period: t,
        source: Box::new(e),
    }
}

/// Averages per-period additive coefficients over time and normalizes each
/// block to unit empirical second moment at the sample.
pub fn initial_loadings(
    designs: &SieveDesigns,
    period_fits: &[PeriodFit],
) -> Result<(Vec<Array1<f64>>, Vec<LoadingState>)> {
    let t_count = period_fits.len();
    let j_count = designs.full.len();
    let k = designs.basis_size();
    let mut lambda_bar = vec![Array1::<f64>::zeros(k); j_count];
    for fit in period_fits {
        for j in 0..j_count {
            lambda_bar[j] += &fit.theta[j];
        }
    }
    for lb in lambda_bar.iter_mut() {
        lb.mapv_inplace(|v| v / t_count as f64);
    }

    let mut states = Vec::with_capacity(j_count);
    for (j, lb) in lambda_bar.iter().enumerate() {
        let g = designs.full[j].dot(lb);
        let normalizer = (g.mapv(|v| v * v).mean().unwrap()).sqrt();
        if normalizer < 1e-12 {
            return Err(Error::UnidentifiedLoading {
                index: j,
                normalizer,
            });
        }
        states.push(LoadingState {
            lambda: lb.mapv(|v| v / normalizer),
            normalizer,
        });
    }
    Ok((lambda_bar, states))
}

/// Per-period quantile regressions of the response on `(1, g_1, ..., g_J)`;
/// returns the T x (J+1) factor matrix and the summed check loss.
fn factor_regressions(
    panel: &Panel,
    g_at_sample: &Array2<f64>,
    tau: f64,
) -> Result<(Array2<f64>, f64)> {
    let n = panel.n_units();
    let t_count = panel.n_periods();
    let j_count = g_at_sample.ncols();
    if j_count + 1 > n {
        return Err(Error::Underdetermined {
            parameters: j_count + 1,
            observations: n,
        });
    }
    let mut design = Array2::<f64>::zeros((n, j_count + 1));
    for i in 0..n {
        design[(i, 0)] = 1.0;
        for j in 0..j_count {
            design[(i, j + 1)] = g_at_sample[(i, j)];
        }
    }

    let solutions: Vec<Result<(Array1<f64>, f64)>> = (0..t_count)
        .into_par_iter()
        .map(|t| {
            let y = panel.responses().column(t).to_owned();
            let problem =
                QregProblem::new(design.clone(), y, tau).map_err(|e| wrap_period(t, e))?;
            let sol = qreg::solve(&problem, SolveOptions::default())
                .map_err(|e| wrap_period(t, e))?;
            Ok((sol.coefficients, sol.objective))
        })
        .collect();

    let mut factors = Array2::<f64>::zeros((t_count, j_count + 1));
    let mut total = 0.0;
    for (t, res) in solutions.into_iter().enumerate() {
        let (coefs, obj) = res?;
        factors.row_mut(t).assign(&coefs);
        total += obj;
    }
    Ok((factors, total))
}

/// Initial factor estimates given normalized loadings.
pub fn initial_factors(
    panel: &Panel,
    config: &ModelConfig,
    designs: &SieveDesigns,
    g0: &[LoadingState],
) -> Result<Array2<f64>> {
    let g = designs.loadings_at_sample(g0);
    Ok(factor_regressions(panel, &g, config.tau)?.0)
}

/// Runs the full initial estimator: per-period additive fits, loading
/// averaging, and initial factor regressions.
pub fn initial_fit(panel: &Panel, config: &ModelConfig) -> Result<InitialFit> {
    config.validate()?;
    let designs = SieveDesigns::build(panel, config)?;
    initial_fit_with(panel, config, &designs)
}

fn initial_fit_with(
    panel: &Panel,
    config: &ModelConfig,
    designs: &SieveDesigns,
) -> Result<InitialFit> {
    let t_count = panel.n_periods();
    let fits: Vec<Result<PeriodFit>> = (0..t_count)
        .into_par_iter()
        .map(|t| fit_period_additive(panel, config, designs, t))
        .collect();
    let fits: Result<Vec<PeriodFit>> = fits.into_iter().collect();
    let fits = fits?;

    let h_u = Array1::from_iter(fits.iter().map(|f| f.intercept));
    let (lambda_bar, g0) = initial_loadings(designs, &fits)?;
    let g = designs.loadings_at_sample(&g0);
    let (f0, total) = factor_regressions(panel, &g, config.tau)?;
    let nt = (panel.n_units() * t_count) as f64;
    Ok(InitialFit {
        h_u,
        theta: fits.into_iter().map(|f| f.theta).collect(),
        lambda_bar,
        g0,
        f0,
        objective: total / nt,
    })
}

/// Pooled loading update at fixed factors: one quantile regression over all
/// N*T observations with response `y_it - f_u(t)` and per-characteristic
/// design blocks `B_j(X_ji) f_j(t)`. Returns normalized states and the
/// pooled mean check loss attained.
pub fn update_loadings(
    panel: &Panel,
    config: &ModelConfig,
    designs: &SieveDesigns,
    factors: &Array2<f64>,
) -> Result<(Vec<LoadingState>, f64)> {
    let n = panel.n_units();
    let t_count = panel.n_periods();
    let j_count = designs.full.len();
    let k = designs.basis_size();
    let reduced = k - 1;
    let p = j_count * reduced;
    let rows = n * t_count;
    if rows < p {
        return Err(Error::Underdetermined {
            parameters: p,
            observations: rows,
        });
    }

    let mut z = Array2::<f64>::zeros((rows, p));
    let mut y = Array1::<f64>::zeros(rows);
    for t in 0..t_count {
        for i in 0..n {
            let row = t * n + i;
            y[row] = panel.responses()[(i, t)] - factors[(t, 0)];
            for j in 0..j_count {
                let f_jt = factors[(t, j + 1)];
                for c in 0..reduced {
                    z[(row, j * reduced + c)] = designs.full[j][(i, c)] * f_jt;
                }
            }
        }
    }
    let problem = QregProblem::new(z, y, config.tau)?;
    let solution = qreg::solve(&problem, SolveOptions::default())?;

    let mut states = Vec::with_capacity(j_count);
    for j in 0..j_count {
        let block: Vec<f64> = (0..reduced)
            .map(|c| solution.coefficients[j * reduced + c])
            .collect();
        let full = expand_block(&block);
        let g = designs.full[j].dot(&full);
        let normalizer = (g.mapv(|v| v * v).mean().unwrap()).sqrt();
        if normalizer < 1e-12 {
            return Err(Error::UnidentifiedLoading {
                index: j,
                normalizer,
            });
        }
        states.push(LoadingState {
            lambda: full.mapv(|v| v / normalizer),
            normalizer,
        });
    }
    let nt = rows as f64;
    Ok((states, solution.objective / nt))
}

/// Per-period factor update at fixed loadings; returns the factor matrix and
/// the pooled mean check loss attained.
pub fn update_factors(
    panel: &Panel,
    config: &ModelConfig,
    designs: &SieveDesigns,
    g_states: &[LoadingState],
) -> Result<(Array2<f64>, f64)> {
    let g = designs.loadings_at_sample(g_states);
    let (factors, total) = factor_regressions(panel, &g, config.tau)?;
    let nt = (panel.n_units() * panel.n_periods()) as f64;
    Ok((factors, total / nt))
}

/// Flips loading/factor pairs so every factor column has nonnegative time
/// mean; the fitted surface is invariant under the joint flip.
fn canonicalize_signs(states: &mut [LoadingState], factors: &mut Array2<f64>) {
    for (j, state) in states.iter_mut().enumerate() {
        let mean = factors.column(j + 1).mean().unwrap();
        if mean < 0.0 {
            state.lambda.mapv_inplace(|v| -v);
            for t in 0..factors.nrows() {
                factors[(t, j + 1)] = -factors[(t, j + 1)];
            }
        }
    }
}

fn normalization_deviation(designs: &SieveDesigns, states: &[LoadingState]) -> f64 {
    let mut worst = 0.0f64;
    for (j, state) in states.iter().enumerate() {
        let g = designs.full[j].dot(&state.lambda);
        let mean_sq = g.mapv(|v| v * v).mean().unwrap();
        worst = worst.max((mean_sq - 1.0).abs());
    }
    worst
}

fn min_factor_mean(factors: &Array2<f64>) -> f64 {
    let mut min = f64::INFINITY;
    for j in 1..factors.ncols() {
        min = min.min(factors.column(j).mean().unwrap());
    }
    min
}

/// Full estimation: initial estimators, then alternation of the pooled
/// loading update and per-period factor updates until both iterate changes
/// drop below `config.epsilon`, with sign canonicalization applied every
/// iteration. Non-convergence within `max_iter` is reported, not an error.
pub fn fit(panel: &Panel, config: &ModelConfig) -> Result<FittedModel> {
    config.validate()?;
    let designs = SieveDesigns::build(panel, config)?;
    let initial = initial_fit_with(panel, config, &designs)?;

    let mut states = initial.g0.clone();
    let mut factors = initial.f0.clone();
    canonicalize_signs(&mut states, &mut factors);

    let mut trace: Vec<IterationRecord> = Vec::new();
    let mut converged = false;

    for _ in 0..config.max_iter {
        let (new_states, obj_loadings) = update_loadings(panel, config, &designs, &factors)?;
        let mut new_states = new_states;
        let (mut new_factors, obj_factors) =
            update_factors(panel, config, &designs, &new_states)?;
        canonicalize_signs(&mut new_states, &mut new_factors);

        let mut delta_lambda_sq = 0.0;
        for (old, new) in states.iter().zip(new_states.iter()) {
            let diff = &new.lambda - &old.lambda;
            delta_lambda_sq += diff.dot(&diff);
        }
        let delta_lambda = delta_lambda_sq.sqrt();
        let df = &new_factors - &factors;
        let delta_factors = df.iter().map(|v| v * v).sum::<f64>().sqrt();

        states = new_states;
        factors = new_factors;

        trace.push(IterationRecord {
            delta_factors,
            delta_lambda,
            objective_after_loadings: obj_loadings,
            objective_after_factors: obj_factors,
            max_normalization_dev: normalization_deviation(&designs, &states),
            min_factor_mean: min_factor_mean(&factors),
        });

        if delta_factors < config.epsilon && delta_lambda < config.epsilon {
            converged = true;
            break;
        }
    }

    let iterations_used = trace.len();
    let normalizers = states.iter().map(|s| s.normalizer).collect();
    let lambda = states.into_iter().map(|s| s.lambda).collect();
    FittedModel::assemble(
        FittedParts {
            config: config.clone(),
            bases: designs.bases,
            lambda,
            normalizers,
            factors,
            iterations_used,
            converged,
            trace,
            initial_objective: initial.objective,
        },
        panel,
    )
}

/// One point of a BIC sweep over interior-knot counts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BicPoint {
    pub interior_knots: usize,
    /// Pooled mean check loss of the fit; NaN when the fit failed.
    pub objective: f64,
    pub bic: f64,
    pub converged: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct KnotSelection {
    pub chosen: usize,
    pub curve: Vec<BicPoint>,
}

/// The information criterion: log pooled mean check loss plus a complexity
/// penalty proportional to the total spline parameter count.
pub fn bic_value(objective: f64, n: usize, t: usize, j: usize, basis_size: usize) -> f64 {
    let nt = (n * t) as f64;
    objective.ln() + nt.ln() / (2.0 * nt) * (j * basis_size) as f64
}

/// Smallest-knot-count argmin over successful sweep points; exact BIC ties go
/// to the smaller count.
fn bic_argmin(points: &[BicPoint]) -> Option<usize> {
    points
        .iter()
        .filter(|p| p.error.is_none())
        .min_by(|a, b| {
            a.bic
                .total_cmp(&b.bic)
                .then(a.interior_knots.cmp(&b.interior_knots))
        })
        .map(|p| p.interior_knots)
}

/// Fits the model for every interior-knot count in the grid and selects the
/// BIC minimizer. Individual failed fits are recorded and skipped; only a
/// fully failed grid is an error.
pub fn select_knots_bic(
    panel: &Panel,
    config: &ModelConfig,
    grid: &[usize],
) -> Result<KnotSelection> {
    if grid.is_empty() {
        return Err(Error::InvalidDesign {
            reason: "knot selection grid is empty".into(),
        });
    }
    let mut curve = Vec::with_capacity(grid.len());
    let mut last_error: Option<Error> = None;
    for &l in grid {
        let mut point_config = config.clone();
        point_config.interior_knots = l;
        match fit(panel, &point_config) {
            Ok(model) => {
                let objective = model.pooled_objective();
                curve.push(BicPoint {
                    interior_knots: l,
                    objective,
                    bic: bic_value(
                        objective,
                        panel.n_units(),
                        panel.n_periods(),
                        panel.n_characteristics(),
                        point_config.basis_size(),
                    ),
                    converged: model.converged(),
                    error: None,
                });
            }
            Err(e) => {
                curve.push(BicPoint {
                    interior_knots: l,
                    objective: f64::NAN,
                    bic: f64::NAN,
                    converged: false,
                    error: Some(e.to_string()),
                });
                last_error = Some(e);
            }
        }
    }
    match bic_argmin(&curve) {
        Some(chosen) => Ok(KnotSelection { chosen, curve }),
        None => Err(Error::KnotSelectionFailed {
            last: Box::new(last_error.unwrap_or(Error::InvalidDesign {
                reason: "no grid point succeeded".into(),
            })),
        }),
    }
}
