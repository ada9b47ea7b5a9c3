//! Weighted linear quantile regression.
//!
//! The fitting problem is `min_b sum_i w_i rho_tau(y_i - z_i'b)` with the check
//! loss `rho_tau(u) = u (tau - 1{u < 0})`. [`solve`] runs a primal-dual
//! interior point method on the standard LP reformulation with slack pairs
//! (split positive/negative residual parts, box-constrained dual), stopping on
//! the normalized duality gap. [`solve_oracle`] enumerates all p-point
//! interpolation bases and is the brute-force reference for small instances.

use crate::error::{Error, Result};
use crate::linalg;
use ndarray::{Array1, Array2};

/// Check loss `rho_tau(u) = u (tau - 1{u < 0})`.
pub fn check_loss(tau: f64, u: f64) -> f64 {
    if u < 0.0 {
        u * (tau - 1.0)
    } else {
        u * tau
    }
}

/// A validated quantile regression instance.
#[derive(Debug, Clone)]
pub struct QregProblem {
    design: Array2<f64>,
    response: Array1<f64>,
    tau: f64,
    weights: Option<Array1<f64>>,
}

impl QregProblem {
    pub fn new(design: Array2<f64>, response: Array1<f64>, tau: f64) -> Result<Self> {
        Self::build(design, response, tau, None)
    }

    pub fn with_weights(
        design: Array2<f64>,
        response: Array1<f64>,
        tau: f64,
        weights: Array1<f64>,
    ) -> Result<Self> {
        Self::build(design, response, tau, Some(weights))
    }

    fn build(
        design: Array2<f64>,
        response: Array1<f64>,
        tau: f64,
        weights: Option<Array1<f64>>,
    ) -> Result<Self> {
        let (n, p) = design.dim();
        if p < 1 || n < p {
            return Err(Error::DimensionMismatch {
                what: "quantile regression design".into(),
                expected: "n >= p >= 1".into(),
                actual: format!("n = {n}, p = {p}"),
            });
        }
        if response.len() != n {
            return Err(Error::DimensionMismatch {
                what: "quantile regression response".into(),
                expected: n.to_string(),
                actual: response.len().to_string(),
            });
        }
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::InvalidParameter {
                name: "tau",
                value: tau,
                constraint: "quantile level must lie strictly inside (0, 1)",
            });
        }
        if design.iter().any(|v| !v.is_finite()) || response.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "quantile regression data".into(),
            });
        }
        if let Some(w) = &weights {
            if w.len() != n {
                return Err(Error::DimensionMismatch {
                    what: "quantile regression weights".into(),
                    expected: n.to_string(),
                    actual: w.len().to_string(),
                });
            }
            if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::NonFinite {
                    what: "quantile regression weights".into(),
                });
            }
        }
        Ok(QregProblem {
            design,
            response,
            tau,
            weights,
        })
    }

    pub fn n_obs(&self) -> usize {
        self.design.nrows()
    }

    pub fn n_params(&self) -> usize {
        self.design.ncols()
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn design(&self) -> &Array2<f64> {
        &self.design
    }

    pub fn response(&self) -> &Array1<f64> {
        &self.response
    }

    /// Weighted check-loss objective at `beta`.
    pub fn objective_at(&self, beta: &Array1<f64>) -> f64 {
        let fitted = self.design.dot(beta);
        let mut total = 0.0;
        for i in 0..self.n_obs() {
            let w = self.weights.as_ref().map_or(1.0, |w| w[i]);
            total += w * check_loss(self.tau, self.response[i] - fitted[i]);
        }
        total
    }
}

/// Termination state of [`solve`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    /// Duality gap closed below tolerance.
    Converged,
    /// Iteration budget exhausted; best iterate returned.
    MaxIter,
    /// A rank-deficient system needed diagonal jitter; gap still converged.
    Degenerate,
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    /// Bound on the duality gap normalized by (1 + primal objective).
    pub gap_tol: f64,
    pub max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            gap_tol: 1e-9,
            max_iter: 50,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QregSolution {
    pub coefficients: Array1<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    /// Final normalized duality gap (zero for the oracle).
    pub gap: f64,
}

const ORACLE_MAX_N: usize = 15;
const ORACLE_MAX_P: usize = 4;

/// Exact solver by enumeration of interpolation bases: some optimum of the
/// check-loss LP interpolates p observations, so trying every non-singular
/// p-subset and keeping the best objective is exhaustive. Guarded to tiny
/// instances.
pub fn solve_oracle(problem: &QregProblem) -> Result<QregSolution> {
    let n = problem.n_obs();
    let p = problem.n_params();
    if n > ORACLE_MAX_N || p > ORACLE_MAX_P {
        return Err(Error::OracleTooLarge {
            n,
            p,
            max_n: ORACLE_MAX_N,
            max_p: ORACLE_MAX_P,
        });
    }
    let mut best: Option<(f64, Array1<f64>)> = None;
    let mut subset = vec![0usize; p];
    enumerate_subsets(n, p, 0, 0, &mut subset, &mut |rows| {
        if let Some(beta) = interpolate(problem, rows) {
            let obj = problem.objective_at(&beta);
            let better = match &best {
                None => true,
                Some((cur, _)) => obj < *cur,
            };
            if better {
                best = Some((obj, beta));
            }
        }
    });
    match best {
        Some((objective, coefficients)) => Ok(QregSolution {
            coefficients,
            objective,
            iterations: 0,
            status: SolveStatus::Converged,
            gap: 0.0,
        }),
        None => Err(Error::OracleNoBasis),
    }
}

fn enumerate_subsets(
    n: usize,
    p: usize,
    depth: usize,
    start: usize,
    subset: &mut Vec<usize>,
    visit: &mut impl FnMut(&[usize]),
) {
    if depth == p {
        visit(subset);
        return;
    }
    for i in start..n {
        subset[depth] = i;
        enumerate_subsets(n, p, depth + 1, i + 1, subset, visit);
    }
}

/// Solves the p x p interpolation system through the given rows; `None` when
/// the subset is singular.
fn interpolate(problem: &QregProblem, rows: &[usize]) -> Option<Array1<f64>> {
    let p = rows.len();
    let mut a = Array2::<f64>::zeros((p, p));
    let mut b = Array1::<f64>::zeros(p);
    for (k, &i) in rows.iter().enumerate() {
        a.row_mut(k).assign(&problem.design.row(i));
        b[k] = problem.response[i];
    }
    // Gaussian elimination with partial pivoting; relative pivot threshold.
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    for col in 0..p {
        let (piv_row, piv_val) = (col..p)
            .map(|r| (r, a[(r, col)].abs()))
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .unwrap();
        if piv_val <= 1e-12 * scale {
            return None;
        }
        if piv_row != col {
            for c in 0..p {
                let tmp = a[(col, c)];
                a[(col, c)] = a[(piv_row, c)];
                a[(piv_row, c)] = tmp;
            }
            b.swap(col, piv_row);
        }
        for r in (col + 1)..p {
            let f = a[(r, col)] / a[(col, col)];
            for c in col..p {
                a[(r, c)] -= f * a[(col, c)];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = Array1::<f64>::zeros(p);
    for r in (0..p).rev() {
        let mut s = b[r];
        for c in (r + 1)..p {
            s -= a[(r, c)] * x[c];
        }
        x[r] = s / a[(r, r)];
    }
    if x.iter().all(|v| v.is_finite()) {
        Some(x)
    } else {
        None
    }
}

/// Primal-dual interior point solve (predictor-corrector on the slack-pair LP).
pub fn solve(problem: &QregProblem, opts: SolveOptions) -> Result<QregSolution> {
    let tau = problem.tau;
    // Positive weights fold into the rows: w * rho(y - z'b) = rho(w*y - (w*z)'b).
    let active: Vec<usize> = (0..problem.n_obs())
        .filter(|&i| problem.weights.as_ref().map_or(1.0, |w| w[i]) > 0.0)
        .collect();
    let n = active.len();
    let p = problem.n_params();
    if n < p {
        return Err(Error::DimensionMismatch {
            what: "positively weighted observations".into(),
            expected: format!("at least {p}"),
            actual: n.to_string(),
        });
    }
    let mut z = Array2::<f64>::zeros((n, p));
    let mut y = Array1::<f64>::zeros(n);
    for (row, &i) in active.iter().enumerate() {
        let w = problem.weights.as_ref().map_or(1.0, |w| w[i]);
        for c in 0..p {
            z[(row, c)] = w * problem.design[(i, c)];
        }
        y[row] = w * problem.response[i];
    }

    let mut jittered = false;

    // Least-squares start for beta; fall back to zero if even the jittered
    // normal matrix will not factor.
    let zt = z.t();
    let mut beta = {
        let m = zt.dot(&z);
        let rhs = zt.dot(&y);
        match factor_with_jitter(&m, &mut jittered) {
            Some(l) => linalg::cholesky_solve(&l, &rhs),
            None => Array1::<f64>::zeros(p),
        }
    };

    let fitted = z.dot(&beta);
    let resid = &y - &fitted;
    let spread = 1.0 + resid.iter().map(|v| v.abs()).sum::<f64>() / n as f64;
    let mut u = resid.mapv(|r| r.max(0.0) + 0.1 * spread);
    let mut v = resid.mapv(|r| (-r).max(0.0) + 0.1 * spread);
    let mut a = Array1::<f64>::from_elem(n, 1.0 - tau);
    let mut s = Array1::<f64>::from_elem(n, tau);

    let mut status = SolveStatus::MaxIter;
    let mut iterations = opts.max_iter;
    let mut norm_gap = f64::INFINITY;

    for iter in 0..opts.max_iter {
        let gap = u.dot(&s) + v.dot(&a);
        let pobj: f64 = tau * u.sum() + (1.0 - tau) * v.sum();
        norm_gap = gap / (1.0 + pobj.abs());
        if norm_gap <= opts.gap_tol {
            status = if jittered {
                SolveStatus::Degenerate
            } else {
                SolveStatus::Converged
            };
            iterations = iter;
            break;
        }

        let fitted = z.dot(&beta);
        let mut r_p = Array1::<f64>::zeros(n);
        for i in 0..n {
            r_p[i] = y[i] - fitted[i] - u[i] + v[i];
        }
        // Dual residual Z'a - (1-tau) Z'1.
        let ones_proj = zt.dot(&Array1::<f64>::from_elem(n, 1.0 - tau));
        let r_d = &zt.dot(&a) - &ones_proj;

        let mut q = Array1::<f64>::zeros(n);
        for i in 0..n {
            q[i] = 1.0 / (u[i] / s[i] + v[i] / a[i]);
        }
        let m = weighted_normal_matrix(&z, &q);
        let l = match factor_with_jitter(&m, &mut jittered) {
            Some(l) => l,
            None => {
                return Err(Error::SingularMatrix {
                    what: "interior point normal matrix".into(),
                    condition: None,
                })
            }
        };

        // Affine (predictor) direction: complementarity targets are zero.
        let mut w_aff = Array1::<f64>::zeros(n);
        for i in 0..n {
            w_aff[i] = r_p[i] + u[i] - v[i];
        }
        let rhs = {
            let qw = &q * &w_aff;
            &zt.dot(&qw) + &r_d
        };
        let db_aff = linalg::cholesky_solve(&l, &rhs);
        let zdb = z.dot(&db_aff);
        let mut da_aff = Array1::<f64>::zeros(n);
        let mut du_aff = Array1::<f64>::zeros(n);
        let mut dv_aff = Array1::<f64>::zeros(n);
        for i in 0..n {
            da_aff[i] = q[i] * (w_aff[i] - zdb[i]);
            du_aff[i] = (-u[i] * s[i] + u[i] * da_aff[i]) / s[i];
            dv_aff[i] = (-v[i] * a[i] - v[i] * da_aff[i]) / a[i];
        }
        let ap_aff = step_length(&[(&u, &du_aff), (&v, &dv_aff)]);
        let mut neg_da = da_aff.clone();
        neg_da.mapv_inplace(|x| -x);
        let ad_aff = step_length(&[(&a, &da_aff), (&s, &neg_da)]);

        let mut gap_aff = 0.0;
        for i in 0..n {
            gap_aff += (u[i] + ap_aff * du_aff[i]) * (s[i] - ad_aff * da_aff[i])
                + (v[i] + ap_aff * dv_aff[i]) * (a[i] + ad_aff * da_aff[i]);
        }
        let sigma = ((gap_aff / gap).powi(3)).clamp(0.0, 1.0);
        let mu = sigma * gap / (2.0 * n as f64);

        // Corrector with second-order complementarity terms.
        let mut w_cor = Array1::<f64>::zeros(n);
        let mut rc1 = Array1::<f64>::zeros(n);
        let mut rc2 = Array1::<f64>::zeros(n);
        for i in 0..n {
            rc1[i] = mu - u[i] * s[i] + du_aff[i] * da_aff[i];
            rc2[i] = mu - v[i] * a[i] - dv_aff[i] * da_aff[i];
            w_cor[i] = r_p[i] - rc1[i] / s[i] + rc2[i] / a[i];
        }
        let rhs = {
            let qw = &q * &w_cor;
            &zt.dot(&qw) + &r_d
        };
        let db = linalg::cholesky_solve(&l, &rhs);
        let zdb = z.dot(&db);
        let mut da = Array1::<f64>::zeros(n);
        let mut du = Array1::<f64>::zeros(n);
        let mut dv = Array1::<f64>::zeros(n);
        for i in 0..n {
            da[i] = q[i] * (w_cor[i] - zdb[i]);
            du[i] = (rc1[i] + u[i] * da[i]) / s[i];
            dv[i] = (rc2[i] - v[i] * da[i]) / a[i];
        }

        let eta = if norm_gap < 1e-5 { 0.99995 } else { 0.9995 };
        let ap = (eta * raw_step(&[(&u, &du), (&v, &dv)])).min(1.0);
        let mut neg_da = da.clone();
        neg_da.mapv_inplace(|x| -x);
        let ad = (eta * raw_step(&[(&a, &da), (&s, &neg_da)])).min(1.0);

        for i in 0..n {
            u[i] += ap * du[i];
            v[i] += ap * dv[i];
            a[i] = (a[i] + ad * da[i]).clamp(f64::MIN_POSITIVE, 1.0 - f64::MIN_POSITIVE);
            s[i] = 1.0 - a[i];
        }
        for c in 0..p {
            beta[c] += ap * db[c];
        }
    }

    Ok(QregSolution {
        objective: problem.objective_at(&beta),
        coefficients: beta,
        iterations,
        status,
        gap: norm_gap,
    })
}

fn weighted_normal_matrix(z: &Array2<f64>, q: &Array1<f64>) -> Array2<f64> {
    let (n, p) = z.dim();
    let mut m = Array2::<f64>::zeros((p, p));
    for i in 0..n {
        let qi = q[i];
        let row = z.row(i);
        for c in 0..p {
            let zc = qi * row[c];
            for d in c..p {
                m[(c, d)] += zc * row[d];
            }
        }
    }
    for c in 0..p {
        for d in 0..c {
            m[(c, d)] = m[(d, c)];
        }
    }
    m
}

/// Cholesky with escalating diagonal jitter, starting at 1e-10; records
/// whether any jitter was needed.
fn factor_with_jitter(m: &Array2<f64>, jittered: &mut bool) -> Option<Array2<f64>> {
    if let Ok(l) = linalg::cholesky(m) {
        return Some(l);
    }
    let p = m.nrows();
    let diag_scale = 1.0 + m.diag().iter().map(|v| v.abs()).sum::<f64>() / p as f64;
    let mut jitter = 1e-10 * diag_scale;
    for _ in 0..4 {
        let mut mj = m.clone();
        for i in 0..p {
            mj[(i, i)] += jitter;
        }
        if let Ok(l) = linalg::cholesky(&mj) {
            *jittered = true;
            return Some(l);
        }
        jitter *= 100.0;
    }
    None
}

fn raw_step(pairs: &[(&Array1<f64>, &Array1<f64>)]) -> f64 {
    let mut alpha = f64::INFINITY;
    for (x, dx) in pairs {
        for i in 0..x.len() {
            if dx[i] < 0.0 {
                alpha = alpha.min(-x[i] / dx[i]);
            }
        }
    }
    alpha
}

fn step_length(pairs: &[(&Array1<f64>, &Array1<f64>)]) -> f64 {
    (0.9995 * raw_step(pairs)).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn intercept_only(y: Vec<f64>, tau: f64) -> QregProblem {
        let n = y.len();
        QregProblem::new(
            Array2::from_elem((n, 1), 1.0),
            Array1::from_vec(y),
            tau,
        )
        .unwrap()
    }

    #[test]
    fn check_loss_values() {
        assert_abs_diff_eq!(check_loss(0.3, 2.0), 0.6);
        assert_abs_diff_eq!(check_loss(0.3, -2.0), 1.4);
        assert_abs_diff_eq!(check_loss(0.3, 0.0), 0.0);
        assert_abs_diff_eq!(check_loss(0.5, -4.0), 2.0);
    }

    #[test]
    fn median_of_five_points() {
        // Candidate optima are the data points themselves; scanning them by
        // hand gives the sample median 3 with objective 0.5*(2+1+0+1+2) = 3.
        let problem = intercept_only(vec![1.0, 2.0, 3.0, 4.0, 5.0], 0.5);
        let oracle = solve_oracle(&problem).unwrap();
        assert_abs_diff_eq!(oracle.coefficients[0], 3.0, epsilon = 0.0);
        assert_abs_diff_eq!(oracle.objective, 3.0, epsilon = 0.0);

        let ip = solve(&problem, SolveOptions::default()).unwrap();
        assert_abs_diff_eq!(ip.objective, 3.0, epsilon = 1e-8);
        assert_abs_diff_eq!(ip.coefficients[0], 3.0, epsilon = 1e-6);
        assert_eq!(ip.status, SolveStatus::Converged);
    }

    #[test]
    fn flat_quantile_face_stays_inside() {
        // tau = 0.2 with y = 0..9: every point of [1, 2] is optimal, with
        // objective 8. The solver must land inside the face, the oracle at a
        // vertex of it.
        let problem = intercept_only((0..10).map(|v| v as f64).collect(), 0.2);
        let oracle = solve_oracle(&problem).unwrap();
        assert_abs_diff_eq!(oracle.objective, 8.0, epsilon = 1e-12);
        assert!(oracle.coefficients[0] == 1.0 || oracle.coefficients[0] == 2.0);

        let ip = solve(&problem, SolveOptions::default()).unwrap();
        assert_abs_diff_eq!(ip.objective, 8.0, epsilon = 1e-8);
        assert!(ip.coefficients[0] > 1.0 - 1e-6 && ip.coefficients[0] < 2.0 + 1e-6);
    }

    fn random_instance(rng: &mut ChaCha8Rng, n: usize, p: usize, tau: f64) -> QregProblem {
        let mut z = Array2::<f64>::zeros((n, p));
        for i in 0..n {
            z[(i, 0)] = 1.0;
            for c in 1..p {
                z[(i, c)] = rng.random::<f64>() * 4.0 - 2.0;
            }
        }
        let y = Array1::from_iter((0..n).map(|_| rng.random::<f64>() * 6.0 - 3.0));
        QregProblem::new(z, y, tau).unwrap()
    }

    #[test]
    fn oracle_equivalence_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let taus = [0.2, 0.5, 0.8];
        for trial in 0..60 {
            let n = 5 + (trial % 8);
            let p = 1 + (trial % 3);
            let tau = taus[trial % 3];
            let problem = random_instance(&mut rng, n, p, tau);
            let oracle = solve_oracle(&problem).unwrap();
            let ip = solve(&problem, SolveOptions::default()).unwrap();
            assert!(
                (ip.objective - oracle.objective).abs() <= 1e-8,
                "trial {trial}: ip {} vs oracle {}",
                ip.objective,
                oracle.objective
            );
            // Optimal residual sign counts bracket N*tau when an intercept
            // is present.
            let fitted = problem.design().dot(&oracle.coefficients);
            let negatives = (0..n)
                .filter(|&i| problem.response()[i] - fitted[i] < -1e-9)
                .count() as f64;
            let nonpositives = (0..n)
                .filter(|&i| problem.response()[i] - fitted[i] <= 1e-9)
                .count() as f64;
            let target = n as f64 * tau;
            assert!(negatives <= target + 1e-9, "trial {trial}");
            assert!(nonpositives >= target - 1e-9, "trial {trial}");
        }
    }

    #[test]
    fn affine_equivariance_with_unique_optimum() {
        // N*tau is fractional, so the optimum is unique almost surely and the
        // transformed problem must map coefficients exactly.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let problem = random_instance(&mut rng, 9, 2, 0.35);
        let base = solve(&problem, SolveOptions::default()).unwrap();

        let scale = 2.5;
        let shift = array![0.7, -1.2];
        let new_y = problem.response() * scale + problem.design().dot(&shift);
        let transformed =
            QregProblem::new(problem.design().clone(), new_y, 0.35).unwrap();
        let moved = solve(&transformed, SolveOptions::default()).unwrap();
        for c in 0..2 {
            assert_abs_diff_eq!(
                moved.coefficients[c],
                scale * base.coefficients[c] + shift[c],
                epsilon = 1e-6
            );
        }
        assert_abs_diff_eq!(moved.objective, scale * base.objective, epsilon = 1e-7);
    }

    #[test]
    fn objective_never_exceeds_zero_vector_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..20 {
            let problem = random_instance(&mut rng, 8 + trial % 5, 2, 0.5);
            let at_zero = problem.objective_at(&Array1::zeros(2));
            let ip = solve(&problem, SolveOptions::default()).unwrap();
            assert!(ip.objective <= at_zero + 1e-9);
            assert!(ip.objective >= 0.0);
        }
    }

    #[test]
    fn integer_weights_match_repeated_rows() {
        let design = array![[1.0, 0.5], [1.0, -1.0], [1.0, 2.0], [1.0, 0.0]];
        let response = array![0.3, -0.8, 1.9, 0.2];
        let weights = array![2.0, 1.0, 3.0, 1.0];
        let weighted =
            QregProblem::with_weights(design.clone(), response.clone(), 0.4, weights.clone())
                .unwrap();

        let mut rows = Vec::new();
        let mut ys = Vec::new();
        for i in 0..4 {
            for _ in 0..weights[i] as usize {
                rows.push([design[(i, 0)], design[(i, 1)]]);
                ys.push(response[i]);
            }
        }
        let stacked = QregProblem::new(
            Array2::from_shape_vec((rows.len(), 2), rows.concat()).unwrap(),
            Array1::from_vec(ys),
            0.4,
        )
        .unwrap();

        let a = solve(&weighted, SolveOptions::default()).unwrap();
        let b = solve(&stacked, SolveOptions::default()).unwrap();
        assert_abs_diff_eq!(a.objective, b.objective, epsilon = 1e-9);
    }

    #[test]
    fn duplicated_column_reports_degenerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 12;
        let mut z = Array2::<f64>::zeros((n, 2));
        let mut y = Array1::<f64>::zeros(n);
        for i in 0..n {
            let x = rng.random::<f64>();
            z[(i, 0)] = x;
            z[(i, 1)] = x;
            y[i] = rng.random::<f64>();
        }
        let problem = QregProblem::new(z.clone(), y.clone(), 0.5).unwrap();
        let ip = solve(&problem, SolveOptions::default()).unwrap();
        assert_eq!(ip.status, SolveStatus::Degenerate);

        // Same span as the single-column problem, so the same objective.
        let single = QregProblem::new(
            z.column(0).to_owned().insert_axis(ndarray::Axis(1)),
            y,
            0.5,
        )
        .unwrap();
        let reference = solve_oracle(&single).unwrap();
        assert_abs_diff_eq!(ip.objective, reference.objective, epsilon = 1e-7);
    }

    #[test]
    fn exact_fit_converges_to_zero_objective() {
        // Noise-free responses lie in the design span; the minimum is zero.
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let n = 40;
        let mut z = Array2::<f64>::zeros((n, 3));
        for i in 0..n {
            z[(i, 0)] = 1.0;
            z[(i, 1)] = rng.random::<f64>();
            z[(i, 2)] = rng.random::<f64>() - 0.5;
        }
        let truth = array![0.4, -1.3, 2.2];
        let y = z.dot(&truth);
        let problem = QregProblem::new(z, y, 0.3).unwrap();
        let ip = solve(&problem, SolveOptions::default()).unwrap();
        assert!(ip.objective < 1e-8, "objective {}", ip.objective);
        for c in 0..3 {
            assert_abs_diff_eq!(ip.coefficients[c], truth[c], epsilon = 1e-5);
        }
    }

    #[test]
    fn validation_rejects_bad_inputs() {
        let z = Array2::from_elem((3, 1), 1.0);
        let y = array![1.0, 2.0, 3.0];
        assert!(matches!(
            QregProblem::new(z.clone(), y.clone(), 0.0).unwrap_err(),
            Error::InvalidParameter { name: "tau", .. }
        ));
        assert!(matches!(
            QregProblem::new(z.clone(), y.clone(), 1.0).unwrap_err(),
            Error::InvalidParameter { name: "tau", .. }
        ));
        assert!(QregProblem::new(z.clone(), array![1.0, f64::NAN, 0.0], 0.5).is_err());
        let wide = Array2::from_elem((1, 2), 1.0);
        assert!(QregProblem::new(wide, array![1.0], 0.5).is_err());
    }

    #[test]
    fn oracle_guard_rejects_large_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let problem = random_instance(&mut rng, 16, 2, 0.5);
        assert!(matches!(
            solve_oracle(&problem).unwrap_err(),
            Error::OracleTooLarge { .. }
        ));
    }
}
