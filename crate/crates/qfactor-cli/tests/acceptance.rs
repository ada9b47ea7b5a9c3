//! Acceptance suite: one test per release gate, each printing a single
//! PASS line with the measured quantities. Tolerances and workloads are
//! fixed; a failure here blocks release.

use ndarray::{Array1, Array2};
use qfactor::estimator;
use qfactor::fixed_b::{self, Kernel};
use qfactor::inference::{self, OrderingStrategy};
use qfactor::model::{FittedModel, ModelConfig, Panel};
use qfactor::qreg::{self, QregProblem, SolveOptions};
use qfactor::simulation::{
    generate_panel, run_monte_carlo, InnovationLaw, LoadingShape, McConfig, McTask, SimDesign,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

/// Minimum eigenvalue of a small symmetric matrix by cyclic Jacobi
/// rotations; independent of the library's internal linear algebra.
fn min_eigenvalue(a: &Array2<f64>) -> f64 {
    let n = a.nrows();
    let mut m = a.clone();
    for _ in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[(i, j)] * m[(i, j)];
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if m[(p, q)].abs() < 1e-18 {
                    continue;
                }
                let theta = 0.5 * (m[(q, q)] - m[(p, p)]) / m[(p, q)];
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
            }
        }
    }
    (0..n).map(|i| m[(i, i)]).fold(f64::INFINITY, f64::min)
}

fn ols_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    num / den
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

/// A small noisy panel plus its fit, for tests that need many fitted models.
fn random_fit(seed: u64, n_units: usize, tau: f64) -> (Panel, FittedModel) {
    let design = SimDesign {
        n_units,
        n_periods: 3,
        loadings: vec![LoadingShape::Polynomial {
            coefficients: vec![0.0, -0.3, 0.0, 1.0],
        }],
        intercept_mean: 0.2,
        factor_means: vec![1.0],
        factor_ar: 0.0,
        factor_noise: 0.2,
        error_ma_decay: 0.3,
        error_ar: 0.0,
        innovation: InnovationLaw::Normal,
        noise_scale: 0.5,
        tau,
        align_dependence_with: None,
        seed,
    };
    let (panel, _) = generate_panel(&design, seed).unwrap();
    let config = ModelConfig::new(tau, 1).unwrap();
    let fitted = estimator::fit(&panel, &config).unwrap();
    (panel, fitted)
}

#[test]
fn criterion_01_quantile_solver_matches_enumeration_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let taus = [0.2, 0.5, 0.8];
    let mut worst = 0.0f64;
    for instance in 0..200 {
        let n = rng.random_range(4..=12);
        let p = rng.random_range(1..=3.min(n));
        let mut design = Array2::<f64>::zeros((n, p));
        for v in design.iter_mut() {
            *v = rng.random_range(-2.0..2.0);
        }
        // First column behaves like an intercept half the time.
        if p > 1 && rng.random::<bool>() {
            design.column_mut(0).fill(1.0);
        }
        let response = Array1::from_iter((0..n).map(|_| rng.random_range(-3.0..3.0)));
        let tau = taus[instance % 3];
        let problem = QregProblem::new(design, response, tau).unwrap();
        let solved = qreg::solve(&problem, SolveOptions::default()).unwrap();
        let oracle = qreg::solve_oracle(&problem).unwrap();
        let gap = (solved.objective - oracle.objective).abs();
        worst = worst.max(gap);
        assert!(
            gap <= 1e-8,
            "instance {instance}: objective gap {gap:.3e} exceeds 1e-8"
        );
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 10.0, "200 instances took {elapsed:.1}s");
    println!(
        "criterion 01 PASS: 200 random instances, worst objective gap {worst:.2e}, {elapsed:.2}s"
    );
}

#[test]
fn criterion_02_noiseless_panel_is_recovered_exactly() {
    let start = Instant::now();
    let design = SimDesign {
        n_units: 300,
        n_periods: 40,
        loadings: vec![
            LoadingShape::Polynomial {
                coefficients: vec![0.0, -0.3, 0.0, 1.0],
            },
            LoadingShape::Quadratic { center: 0.25 },
        ],
        intercept_mean: 0.5,
        factor_means: vec![1.0, 1.0],
        factor_ar: 0.3,
        factor_noise: 0.2,
        error_ma_decay: 0.0,
        error_ar: 0.0,
        innovation: InnovationLaw::Normal,
        noise_scale: 0.0,
        tau: 0.5,
        align_dependence_with: None,
        seed: 2002,
    };
    let (panel, truth) = generate_panel(&design, design.seed).unwrap();
    let config = ModelConfig::new(0.5, 1).unwrap();
    let fitted = estimator::fit(&panel, &config).unwrap();

    assert!(
        fitted.iterations_used() <= 10,
        "took {} iterations",
        fitted.iterations_used()
    );
    let mut worst_factor = 0.0f64;
    for t in 0..design.n_periods {
        let mut dist = 0.0;
        for c in 0..3 {
            dist += (fitted.factors()[(t, c)] - truth.factors[(t, c)]).powi(2);
        }
        worst_factor = worst_factor.max(dist.sqrt());
    }
    assert!(worst_factor <= 1e-3, "factor error {worst_factor:.3e}");

    let mut loading_errors = [0.0f64; 2];
    for j in 0..2 {
        let mut acc = 0.0;
        for i in 0..design.n_units {
            acc += (fitted.loadings_at_sample()[(i, j)] - truth.loadings_at_sample[(i, j)])
                .powi(2);
        }
        loading_errors[j] = (acc / design.n_units as f64).sqrt();
        assert!(
            loading_errors[j] <= 1e-2,
            "loading {j} error {:.3e}",
            loading_errors[j]
        );
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "fit took {elapsed:.1}s");
    println!(
        "criterion 02 PASS: {} iterations, factor error {worst_factor:.2e}, loading errors {:.2e}/{:.2e}, {elapsed:.1}s",
        fitted.iterations_used(),
        loading_errors[0],
        loading_errors[1]
    );
}

#[test]
fn criterion_03_iteration_invariants_hold_on_every_trace() {
    let mut traces = 0usize;
    let mut records = 0usize;
    for (seed, tau) in [
        (31u64, 0.5),
        (32, 0.5),
        (33, 0.3),
        (34, 0.7),
        (35, 0.5),
        (36, 0.4),
    ] {
        let (_, fitted) = random_fit(seed, 45, tau);
        traces += 1;
        for record in fitted.trace() {
            records += 1;
            assert!(
                record.max_normalization_dev <= 1e-8,
                "seed {seed}: normalization deviation {:.3e}",
                record.max_normalization_dev
            );
            assert!(
                record.min_factor_mean >= 0.0,
                "seed {seed}: factor mean {:.3e} negative after canonicalization",
                record.min_factor_mean
            );
        }
        assert!(!fitted.trace().is_empty());
    }
    println!(
        "criterion 03 PASS: normalization within 1e-8 and nonnegative factor means across {records} iterations of {traces} fits"
    );
}

#[test]
fn criterion_04_error_shrinks_at_the_root_n_rate() {
    let start = Instant::now();
    let mut log_n = Vec::new();
    let mut log_median = Vec::new();
    for (n, seed) in [(100usize, 41u64), (200, 42), (400, 43)] {
        let t_count = (n as f64).powf(0.4).ceil() as usize;
        let design = SimDesign {
            n_units: n,
            n_periods: t_count,
            loadings: vec![LoadingShape::Polynomial {
                coefficients: vec![0.0, -0.3, 0.0, 1.0],
            }],
            intercept_mean: 0.2,
            factor_means: vec![1.0],
            factor_ar: 0.0,
            factor_noise: 0.3,
            error_ma_decay: 0.0,
            error_ar: 0.0,
            innovation: InnovationLaw::StudentT { nu: 2.0 },
            noise_scale: 1.0,
            tau: 0.5,
            align_dependence_with: None,
            seed,
        };
        let config = McConfig {
            model: ModelConfig::new(0.5, 1).unwrap(),
            inference: inference::InferenceConfig::default(),
            level: 0.95,
            target_factor: 1,
            target_period: 0,
        };
        let report = run_monte_carlo(&design, &config, 200, McTask::Rmse, None).unwrap();
        assert!(
            report.summary.failures <= 10,
            "N = {n}: {} of 200 replications failed",
            report.summary.failures
        );
        let mut errors: Vec<f64> = report.rows.iter().filter_map(|r| r.factor_error).collect();
        let med = median(&mut errors);
        log_n.push((n as f64).ln());
        log_median.push(med.ln());
    }
    let slope = ols_slope(&log_n, &log_median);
    assert!(
        (-0.65..=-0.35).contains(&slope),
        "log-log slope {slope:.3} outside [-0.65, -0.35]"
    );
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 1800.0, "rate study took {elapsed:.0}s");
    println!("criterion 04 PASS: median-error slope {slope:.3} over N = 100/200/400, {elapsed:.0}s");
}

#[test]
fn criterion_05_fixed_b_test_holds_its_size() {
    let start = Instant::now();
    let design = SimDesign {
        n_units: 200,
        n_periods: 6,
        loadings: vec![LoadingShape::Polynomial {
            coefficients: vec![0.0, -0.3, 0.0, 1.0],
        }],
        intercept_mean: 0.2,
        factor_means: vec![1.0],
        factor_ar: 0.0,
        // Constant factor paths: the tested value equals the design mean in
        // every replication, so the null is true by construction.
        factor_noise: 0.0,
        error_ma_decay: 0.5,
        error_ar: 0.0,
        innovation: InnovationLaw::Normal,
        // Residual spread is close to the density bandwidth h = N^{-1/5}, so
        // the uniform window spans the residual bulk and the variance
        // denominator stays stable across replications.
        noise_scale: 0.25,
        tau: 0.5,
        align_dependence_with: Some(0),
        seed: 5005,
    };
    let table = fixed_b::simulate_fixed_b(Kernel::Bartlett, 0.2, 1, 1000, 50000, 505).unwrap();
    let config = McConfig {
        model: ModelConfig::new(0.5, 1).unwrap(),
        inference: inference::InferenceConfig {
            b: 0.2,
            kernel: Kernel::Bartlett,
            ordering: OrderingStrategy::ByCovariate(0),
            ..inference::InferenceConfig::default()
        },
        level: 0.95,
        target_factor: 1,
        target_period: 0,
    };
    let report = run_monte_carlo(&design, &config, 500, McTask::Size, Some(&table)).unwrap();
    assert!(
        report.summary.failures <= 25,
        "{} of 500 replications failed",
        report.summary.failures
    );
    let rate = report.summary.rejection_rate.unwrap();
    assert!(
        (0.02..=0.09).contains(&rate),
        "rejection rate {rate:.4} outside [0.02, 0.09]"
    );
    let elapsed = start.elapsed().as_secs_f64();
    println!(
        "criterion 05 PASS: empirical size {rate:.3} at nominal 0.05 over 500 replications, {elapsed:.0}s"
    );
}

#[test]
fn criterion_06_critical_values_reproduce_and_order_by_bandwidth() {
    let run_a = fixed_b::simulate_fixed_b(Kernel::Bartlett, 0.4, 1, 1000, 50000, 606).unwrap();
    let run_b = fixed_b::simulate_fixed_b(Kernel::Bartlett, 0.4, 1, 1000, 50000, 607).unwrap();
    let mut reported = Vec::new();
    for level in [0.90, 0.95, 0.99] {
        // Two-sided t quantile on the tau-free scale.
        let t_a = run_a.base_quantile(2.0 * level - 1.0).unwrap().sqrt();
        let t_b = run_b.base_quantile(2.0 * level - 1.0).unwrap().sqrt();
        let gap = (t_a - t_b).abs();
        assert!(
            gap <= 0.02,
            "independent runs differ by {gap:.4} at level {level}"
        );
        reported.push(format!("{level}: {t_a:.3}/{t_b:.3}"));
    }

    let wide = fixed_b::simulate_fixed_b(Kernel::Bartlett, 1.0, 1, 1000, 50000, 608).unwrap();
    let narrow = fixed_b::simulate_fixed_b(Kernel::Bartlett, 0.02, 1, 1000, 50000, 609).unwrap();
    for ((level_w, q_w), (level_n, q_n)) in wide.quantiles().iter().zip(narrow.quantiles()) {
        assert_eq!(level_w, level_n);
        assert!(
            q_w > q_n,
            "b = 1 quantile {q_w:.4} not above b = 0.02 quantile {q_n:.4} at level {level_w}"
        );
    }
    println!(
        "criterion 06 PASS: independent 50k-run t quantiles agree ({}), b = 1 dominates b = 0.02 at all {} levels",
        reported.join(", "),
        wide.quantiles().len()
    );
}

#[test]
fn criterion_07_hac_estimate_matches_direct_sums_and_stays_psd() {
    // Hand-sized panel: the averaged estimate must equal a direct
    // double-sum recomputation from the fitted quantities.
    let (panel, fitted) = random_fit(700, 5, 0.5);
    let tau = 0.5;
    let b = 0.6;
    let n = panel.n_units();
    let ordering = inference::order_units(&panel, OrderingStrategy::ByCovariate(0)).unwrap();
    let omega = inference::estimate_omega(&fitted, &panel, &ordering, b, Kernel::Bartlett).unwrap();

    let m_len = b * n as f64;
    let mut rank = vec![0usize; n];
    for (pos, &unit) in ordering.iter().enumerate() {
        rank[unit] = pos;
    }
    let mut oracle = Array2::<f64>::zeros((2, 2));
    for t in 0..panel.n_periods() {
        for i in 0..n {
            let gi = fitted.regressor_row(i).unwrap();
            let psi_i = tau - if fitted.residuals()[(i, t)] < 0.0 { 1.0 } else { 0.0 };
            for j in 0..n {
                let gj = fitted.regressor_row(j).unwrap();
                let psi_j = tau - if fitted.residuals()[(j, t)] < 0.0 { 1.0 } else { 0.0 };
                let weight = if i == j {
                    // Diagonal uses the exact variance of the sign variable.
                    tau * (1.0 - tau)
                } else {
                    let u = (rank[i] as f64 - rank[j] as f64) / m_len;
                    Kernel::Bartlett.weight(u) * psi_i * psi_j
                };
                for a in 0..2 {
                    for c in 0..2 {
                        oracle[(a, c)] += weight * gi[a] * gj[c] / n as f64;
                    }
                }
            }
        }
    }
    oracle /= panel.n_periods() as f64;
    let mut worst = 0.0f64;
    for a in 0..2 {
        for c in 0..2 {
            worst = worst.max((oracle[(a, c)] - omega.averaged[(a, c)]).abs());
        }
    }
    assert!(worst <= 1e-12, "averaged estimate differs from direct sums by {worst:.3e}");

    // Positive semidefiniteness across random fits, orderings, and b.
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut min_seen = f64::INFINITY;
    for k in 0..100 {
        let (panel, fitted) = random_fit(7100 + k, 25, 0.5);
        let strategy = match k % 3 {
            0 => OrderingStrategy::AsGiven,
            1 => OrderingStrategy::ByCovariate(0),
            _ => OrderingStrategy::ByPc1,
        };
        let ordering = inference::order_units(&panel, strategy).unwrap();
        let b = rng.random_range(0.05..=1.0);
        let omega =
            inference::estimate_omega(&fitted, &panel, &ordering, b, Kernel::Bartlett).unwrap();
        let lambda_min = min_eigenvalue(&omega.averaged);
        min_seen = min_seen.min(lambda_min);
        assert!(
            lambda_min >= -1e-8,
            "fit {k}: minimum eigenvalue {lambda_min:.3e}"
        );
    }
    println!(
        "criterion 07 PASS: direct-sum agreement {worst:.1e}, minimum eigenvalue {min_seen:.2e} over 100 fits"
    );
}

#[test]
fn criterion_08_information_criterion_identity_and_tie_break() {
    let (panel, _) = random_fit(800, 60, 0.5);
    let config = ModelConfig::new(0.5, 0).unwrap();
    let grid = [0usize, 1, 1, 2, 3];
    let selection = estimator::select_knots_bic(&panel, &config, &grid).unwrap();
    assert_eq!(selection.curve.len(), grid.len());

    let nt = (panel.n_units() * panel.n_periods()) as f64;
    let mut worst = 0.0f64;
    for point in &selection.curve {
        assert!(point.error.is_none(), "grid point failed: {:?}", point.error);
        let k = point.interior_knots + config.spline_order;
        let oracle =
            point.objective.ln() + nt.ln() / (2.0 * nt) * (panel.n_characteristics() * k) as f64;
        let gap = (point.bic - oracle).abs();
        worst = worst.max(gap);
        assert!(gap <= 1e-12, "L = {}: gap {gap:.3e}", point.interior_knots);
        let direct = estimator::bic_value(
            point.objective,
            panel.n_units(),
            panel.n_periods(),
            panel.n_characteristics(),
            k,
        );
        assert!((point.bic - direct).abs() <= 1e-15);
    }

    // The duplicated grid entry produces an exact tie; selection must agree
    // with the smallest-count argmin recomputed here.
    let expected = selection
        .curve
        .iter()
        .min_by(|a, b| {
            a.bic
                .total_cmp(&b.bic)
                .then(a.interior_knots.cmp(&b.interior_knots))
        })
        .unwrap()
        .interior_knots;
    assert_eq!(selection.chosen, expected);
    let l1_points: Vec<&estimator::BicPoint> = selection
        .curve
        .iter()
        .filter(|p| p.interior_knots == 1)
        .collect();
    assert_eq!(l1_points.len(), 2);
    assert_eq!(l1_points[0].bic, l1_points[1].bic);
    println!(
        "criterion 08 PASS: formula gap {worst:.1e} over {} grid points, argmin {} consistent under ties",
        grid.len(),
        selection.chosen
    );
}

#[test]
fn criterion_09_squared_t_equals_f_for_scalar_restrictions() {
    let table = fixed_b::simulate_fixed_b(Kernel::Bartlett, 0.3, 1, 150, 1000, 909).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(901);
    let mut worst = 0.0f64;
    for k in 0..100 {
        let (panel, fitted) = random_fit(9100 + (k % 10), 30, 0.5);
        let n = panel.n_units();
        let h = inference::default_bandwidth(n, 1.0).unwrap();
        let ordering = inference::order_units(&panel, OrderingStrategy::AsGiven).unwrap();
        let omega =
            inference::estimate_omega(&fitted, &panel, &ordering, 0.3, Kernel::Bartlett).unwrap();
        let t = rng.random_range(0..panel.n_periods());
        let lambda = inference::estimate_lambda(&fitted, &panel, t, h).unwrap();
        let mut restriction = Array2::<f64>::zeros((1, 2));
        restriction[(0, 0)] = rng.random_range(-1.0..1.0);
        restriction[(0, 1)] = rng.random_range(0.5..2.5);
        let r = rng.random_range(-0.5..0.5);

        let t_test = inference::t_statistic(
            &fitted,
            &panel,
            &restriction,
            r,
            t,
            &lambda,
            &omega,
            &table,
        )
        .unwrap();
        let f_test = inference::f_statistic(
            &fitted,
            &panel,
            &restriction,
            &ndarray::arr1(&[r]),
            t,
            &lambda,
            &omega,
            &table,
        )
        .unwrap();
        let gap = (f_test.statistic - t_test.statistic * t_test.statistic).abs();
        worst = worst.max(gap);
        assert!(gap <= 1e-9, "test {k}: F vs t^2 gap {gap:.3e}");
        assert!(
            (f_test.p_value - t_test.p_value).abs() <= 1e-12,
            "test {k}: p-values differ"
        );

        // A restriction satisfied exactly gives a zero statistic.
        let satisfied = restriction[(0, 0)] * fitted.factors()[(t, 0)]
            + restriction[(0, 1)] * fitted.factors()[(t, 1)];
        let null_test = inference::f_statistic(
            &fitted,
            &panel,
            &restriction,
            &ndarray::arr1(&[satisfied]),
            t,
            &lambda,
            &omega,
            &table,
        )
        .unwrap();
        assert_eq!(null_test.statistic, 0.0);
    }
    println!("criterion 09 PASS: worst F vs t^2 gap {worst:.1e} over 100 random restriction tests");
}

fn run_binary(workdir: &Path, cache: &Path, args: &[&str]) {
    let output = Command::new(env!("CARGO_BIN_EXE_qfactor"))
        .current_dir(workdir)
        .env("QFACTOR_CACHE_DIR", cache)
        .args(args)
        .output()
        .expect("binary runs");
    assert!(
        output.status.success(),
        "qfactor {args:?} failed:\n{}",
        String::from_utf8_lossy(&output.stderr)
    );
}

fn assert_same_files(dir_a: &Path, dir_b: &Path, names: &[&str]) {
    for name in names {
        let a = std::fs::read(dir_a.join(name)).unwrap();
        let b = std::fs::read(dir_b.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn criterion_10_pipeline_outputs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let design = SimDesign {
        n_units: 50,
        n_periods: 4,
        loadings: vec![LoadingShape::Polynomial {
            coefficients: vec![0.0, -0.3, 0.0, 1.0],
        }],
        intercept_mean: 0.3,
        factor_means: vec![1.0],
        factor_ar: 0.0,
        factor_noise: 0.15,
        error_ma_decay: 0.4,
        error_ar: 0.0,
        innovation: InnovationLaw::Normal,
        noise_scale: 0.4,
        tau: 0.5,
        align_dependence_with: None,
        seed: 1010,
    };
    let (panel, _) = generate_panel(&design, design.seed).unwrap();
    qfactor_cli::ingest::write_panel_csv(&panel, &root.join("panel.csv")).unwrap();

    let cache1 = root.join("cache1");
    let cache2 = root.join("cache2");

    for out in ["fit1", "fit2"] {
        run_binary(
            root,
            &cache1,
            &["fit", "panel.csv", "--tau", "0.5", "--knots", "1", "--out", out],
        );
    }
    assert_same_files(
        &root.join("fit1"),
        &root.join("fit2"),
        &["fitted_model.json", "factor_returns.csv", "loading_curve_1.csv"],
    );

    let test_args = |out: &'static str| {
        vec![
            "test",
            "panel.csv",
            "--model",
            "fit1/fitted_model.json",
            "--b",
            "0.4",
            "--ordering",
            "covariate:1",
            "--n-grid",
            "150",
            "--n-reps",
            "2000",
            "--seed",
            "7",
            "--out",
            out,
        ]
    };
    run_binary(root, &cache1, &test_args("test1"));
    run_binary(root, &cache2, &test_args("test2"));
    assert_same_files(
        &root.join("test1"),
        &root.join("test2"),
        &["significance.csv", "period_tests.csv"],
    );
    // Both caches simulated the same table independently.
    let table_name = "critvals_bartlett_b0.4000_q1_g150_r2000_s7.json";
    let a = std::fs::read(cache1.join(table_name)).unwrap();
    let b = std::fs::read(cache2.join(table_name)).unwrap();
    assert_eq!(a, b, "independently cached tables differ");

    for out in ["cv1", "cv2"] {
        run_binary(
            root,
            &cache1,
            &[
                "critvals",
                "--kernel",
                "qs",
                "--b",
                "0.3",
                "--q",
                "2",
                "--n-grid",
                "150",
                "--n-reps",
                "2000",
                "--seed",
                "11",
                "--out",
                out,
            ],
        );
    }
    assert_same_files(
        &root.join("cv1"),
        &root.join("cv2"),
        &["critvals_qs_b0.3000_q2_g150_r2000_s11.json"],
    );
    println!(
        "criterion 10 PASS: fit, test, and critical-value outputs byte-identical across repeated runs"
    );
}
