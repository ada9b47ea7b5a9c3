//! Subcommand implementations. Each writes its documented files into the
//! output directory and prints the paths it wrote; all content is
//! deterministic for a given input, flag set, and seed.

use crate::args::{CritvalsArgs, FitArgs, KnotsArgs, SimulateArgs, TestArgs};
use crate::ingest::ingest_csv;
use crate::{CliError, Result};
use ndarray::Array2;
use qfactor::estimator::{self, KnotSelection};
use qfactor::fixed_b::{self, CriticalValueTable, Kernel};
use qfactor::inference::{self, InferenceConfig, OrderingStrategy};
use qfactor::model::{FittedModel, ModelConfig, Panel};
use qfactor::simulation::{
    self, McConfig, McTask, SimDesign,
};
use std::path::{Path, PathBuf};

pub fn parse_kernel(s: &str) -> Result<Kernel> {
    Kernel::parse_label(s).ok_or_else(|| {
        CliError::Invalid(format!("unknown kernel {s:?}: expected bartlett or qs"))
    })
}

/// Ordering flag syntax: given, pc1, or covariate:<j> with 1-based j
/// matching the x1..xJ column names.
pub fn parse_ordering(s: &str) -> Result<OrderingStrategy> {
    match s {
        "given" => Ok(OrderingStrategy::AsGiven),
        "pc1" => Ok(OrderingStrategy::ByPc1),
        other => {
            if let Some(num) = other.strip_prefix("covariate:") {
                let j: usize = num.parse().map_err(|_| {
                    CliError::Invalid(format!("cannot parse covariate index {num:?}"))
                })?;
                if j == 0 {
                    return Err(CliError::Invalid(
                        "covariate index is 1-based; covariate:1 sorts by x1".into(),
                    ));
                }
                Ok(OrderingStrategy::ByCovariate(j - 1))
            } else {
                Err(CliError::Invalid(format!(
                    "unknown ordering {other:?}: expected given, covariate:<j>, or pc1"
                )))
            }
        }
    }
}

pub fn parse_task(s: &str) -> Result<McTask> {
    match s {
        "rmse" => Ok(McTask::Rmse),
        "coverage" => Ok(McTask::Coverage),
        "size" => Ok(McTask::Size),
        other => Err(CliError::Invalid(format!(
            "unknown task {other:?}: expected rmse, coverage, or size"
        ))),
    }
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    println!("wrote {}", path.display());
    Ok(())
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Critical-value tables live under QFACTOR_CACHE_DIR (default
/// ./.qfactor-cache) keyed by their parameters; a missing table is simulated
/// with the recorded seed and stored for reuse.
pub fn cache_dir() -> PathBuf {
    std::env::var_os("QFACTOR_CACHE_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("./.qfactor-cache"))
}

pub fn load_or_simulate_table(
    kernel: Kernel,
    b: f64,
    q: usize,
    n_grid: usize,
    n_reps: usize,
    seed: u64,
) -> Result<CriticalValueTable> {
    let dir = cache_dir();
    let path = dir.join(fixed_b::cache_filename(kernel, b, q, n_grid, n_reps, seed));
    if path.exists() {
        return Ok(CriticalValueTable::from_json(&read_file(&path)?)?);
    }
    let table = fixed_b::simulate_fixed_b(kernel, b, q, n_grid, n_reps, seed)?;
    ensure_dir(&dir)?;
    write_file(&path, &table.to_json()?)?;
    Ok(table)
}

fn records_to_string(records: Vec<Vec<String>>) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for record in records {
        writer.write_record(&record)?;
    }
    let bytes = writer.into_inner().map_err(|e| CliError::Invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf8"))
}

fn factor_returns_csv(fitted: &FittedModel, panel: &Panel) -> Result<String> {
    let j_count = panel.n_characteristics();
    let mut header = vec!["period".to_string(), "f_u".to_string()];
    for j in 1..=j_count {
        header.push(format!("f_{j}"));
    }
    let mut records = vec![header];
    for t in 0..panel.n_periods() {
        let mut row = vec![panel.period_ids()[t].clone()];
        for c in 0..=j_count {
            row.push(format!("{}", fitted.factors()[(t, c)]));
        }
        records.push(row);
    }
    records_to_string(records)
}

fn loading_curve_csv(fitted: &FittedModel, j: usize, points: usize) -> Result<String> {
    let (lo, hi) = fitted.bases()[j].spec().domain();
    let grid: Vec<f64> = (0..points)
        .map(|k| lo + (hi - lo) * k as f64 / (points - 1) as f64)
        .collect();
    let values = fitted.evaluate_loading(j, &grid)?;
    let mut out = String::from("x,g\n");
    for (x, g) in grid.iter().zip(&values) {
        out.push_str(&format!("{x},{g}\n"));
    }
    Ok(out)
}

fn bic_curve_csv(selection: &KnotSelection) -> Result<String> {
    let mut records = vec![vec![
        "interior_knots".to_string(),
        "objective".to_string(),
        "bic".to_string(),
        "converged".to_string(),
        "error".to_string(),
    ]];
    for point in &selection.curve {
        records.push(vec![
            point.interior_knots.to_string(),
            format!("{}", point.objective),
            format!("{}", point.bic),
            point.converged.to_string(),
            point.error.clone().unwrap_or_default(),
        ]);
    }
    records_to_string(records)
}

fn model_config_from_fit(args: &FitArgs) -> Result<ModelConfig> {
    let config = ModelConfig {
        tau: args.tau,
        spline_order: args.order,
        interior_knots: args.knots,
        epsilon: args.eps,
        max_iter: args.max_iter,
    };
    config.validate()?;
    Ok(config)
}

pub fn cmd_fit(args: &FitArgs) -> Result<()> {
    if args.grid_points < 2 {
        return Err(CliError::Invalid(
            "--grid-points must be at least 2".into(),
        ));
    }
    let mut config = model_config_from_fit(args)?;
    let panel = ingest_csv(&args.input)?;
    ensure_dir(&args.out)?;

    let mut bic_csv = None;
    if let Some(grid) = &args.knots_grid {
        let selection = estimator::select_knots_bic(&panel, &config, grid)?;
        config.interior_knots = selection.chosen;
        println!("selected {} interior knots by BIC", selection.chosen);
        bic_csv = Some(bic_curve_csv(&selection)?);
    }

    let fitted = estimator::fit(&panel, &config)?;
    if !fitted.converged() {
        println!(
            "warning: alternation did not converge within {} iterations",
            config.max_iter
        );
    }
    write_file(&args.out.join("fitted_model.json"), &fitted.to_json()?)?;
    write_file(
        &args.out.join("factor_returns.csv"),
        &factor_returns_csv(&fitted, &panel)?,
    )?;
    for j in 0..panel.n_characteristics() {
        write_file(
            &args.out.join(format!("loading_curve_{}.csv", j + 1)),
            &loading_curve_csv(&fitted, j, args.grid_points)?,
        )?;
    }
    if let Some(csv) = bic_csv {
        write_file(&args.out.join("bic_curve.csv"), &csv)?;
    }
    Ok(())
}

fn significance_csv(report: &inference::SignificanceReport) -> Result<String> {
    let mut records = vec![vec![
        "factor".to_string(),
        "annualized_vol".to_string(),
        "pct_significant".to_string(),
        "median_p".to_string(),
    ]];
    for row in &report.rows {
        records.push(vec![
            row.label.clone(),
            format!("{}", row.annualized_vol),
            format!("{}", row.pct_significant),
            format!("{}", row.median_p),
        ]);
    }
    records_to_string(records)
}

fn period_tests_csv(
    fitted: &FittedModel,
    panel: &Panel,
    config: &InferenceConfig,
    table: &CriticalValueTable,
    level: f64,
) -> Result<String> {
    let j_count = panel.n_characteristics();
    let n = panel.n_units();
    let h = inference::default_bandwidth(n, config.kappa)?;
    let ordering = inference::order_units(panel, config.ordering)?;
    let omega = inference::estimate_omega(fitted, panel, &ordering, config.b, config.kernel)?;
    let alpha = 1.0 - level;

    let mut records = vec![vec![
        "factor".to_string(),
        "period".to_string(),
        "statistic".to_string(),
        "p_value".to_string(),
        "reject".to_string(),
    ]];
    for t in 0..panel.n_periods() {
        let lambda = inference::estimate_lambda(fitted, panel, t, h)?;
        for col in 0..=j_count {
            let label = if col == 0 {
                "intercept".to_string()
            } else {
                format!("factor_{col}")
            };
            let mut restriction = Array2::<f64>::zeros((1, j_count + 1));
            restriction[(0, col)] = 1.0;
            let test = inference::t_statistic(
                fitted,
                panel,
                &restriction,
                0.0,
                t,
                &lambda,
                &omega,
                table,
            )?;
            records.push(vec![
                label,
                panel.period_ids()[t].clone(),
                format!("{}", test.statistic),
                format!("{}", test.p_value),
                (test.p_value < alpha).to_string(),
            ]);
        }
    }
    records_to_string(records)
}

pub fn cmd_test(args: &TestArgs) -> Result<()> {
    let panel = ingest_csv(&args.input)?;
    let fitted = FittedModel::from_json(&read_file(&args.model)?, &panel)?;
    let kernel = parse_kernel(&args.kernel)?;
    let ordering = parse_ordering(&args.ordering)?;
    let config = InferenceConfig {
        kappa: args.kappa,
        b: args.b,
        kernel,
        ordering,
        annualization_periods: args.annualization,
    };
    // Per-period t-tests need the scalar-restriction table.
    let table = load_or_simulate_table(kernel, args.b, 1, args.n_grid, args.n_reps, args.seed)?;
    let report = inference::significance_summary(&fitted, &panel, &config, &table, args.level)?;
    ensure_dir(&args.out)?;
    write_file(
        &args.out.join("significance.csv"),
        &significance_csv(&report)?,
    )?;
    write_file(
        &args.out.join("period_tests.csv"),
        &period_tests_csv(&fitted, &panel, &config, &table, args.level)?,
    )?;
    for row in &report.rows {
        println!(
            "{}: annualized vol {:.4}, {:.1}% of periods significant, overall p-value {:.4}",
            row.label, row.annualized_vol, row.pct_significant, row.median_p
        );
    }
    Ok(())
}

fn mc_config(args: &SimulateArgs, design_tau: f64) -> Result<McConfig> {
    let model = ModelConfig {
        tau: args.tau.unwrap_or(design_tau),
        spline_order: args.order,
        interior_knots: args.knots,
        epsilon: args.eps,
        max_iter: args.max_iter,
    };
    model.validate()?;
    let inference = InferenceConfig {
        kappa: args.kappa,
        b: args.b,
        kernel: parse_kernel(&args.kernel)?,
        ordering: parse_ordering(&args.ordering)?,
        ..InferenceConfig::default()
    };
    Ok(McConfig {
        model,
        inference,
        level: args.level,
        target_factor: args.target_factor,
        target_period: args.target_period,
    })
}

fn rate_points_csv(study: &simulation::RateStudy) -> Result<String> {
    let mut records = vec![vec![
        "n_units".to_string(),
        "n_periods".to_string(),
        "mean_factor_error".to_string(),
        "mean_loading_error".to_string(),
        "failures".to_string(),
    ]];
    for point in &study.points {
        records.push(vec![
            point.n_units.to_string(),
            point.n_periods.to_string(),
            format!("{}", point.mean_factor_error),
            format!("{}", point.mean_loading_error),
            point.failures.to_string(),
        ]);
    }
    records_to_string(records)
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let text = read_file(&args.input)?;
    ensure_dir(&args.out)?;

    if args.rate_study {
        let designs: Vec<SimDesign> =
            serde_json::from_str(&text).map_err(qfactor::Error::from)?;
        let tau = designs
            .first()
            .map(|d| d.tau)
            .ok_or_else(|| CliError::Invalid("rate study needs a nonempty design array".into()))?;
        let config = mc_config(args, tau)?;
        let study = simulation::convergence_rate_study(&designs, &config, args.reps)?;
        write_file(
            &args.out.join("rate_study.json"),
            &serde_json::to_string_pretty(&study).map_err(qfactor::Error::from)?,
        )?;
        write_file(&args.out.join("rate_points.csv"), &rate_points_csv(&study)?)?;
        println!(
            "factor slope {:.3} (band {:.3} to {:.3}), loading slope {:.3}",
            study.factor_slope, study.factor_band.0, study.factor_band.1, study.loading_slope
        );
        if study.at_numerical_floor {
            println!("errors sit at the numerical floor; slopes are uninformative");
        }
        return Ok(());
    }

    let design: SimDesign = serde_json::from_str(&text).map_err(qfactor::Error::from)?;
    let task = parse_task(&args.task)?;
    let config = mc_config(args, design.tau)?;
    let table = match task {
        McTask::Rmse => None,
        McTask::Coverage | McTask::Size => Some(load_or_simulate_table(
            config.inference.kernel,
            config.inference.b,
            1,
            args.n_grid,
            args.n_reps,
            args.seed,
        )?),
    };
    let report = simulation::run_monte_carlo(&design, &config, args.reps, task, table.as_ref())?;
    write_file(&args.out.join("mc_report.csv"), &report.to_csv())?;
    write_file(
        &args.out.join("mc_summary.json"),
        &serde_json::to_string_pretty(&report.summary).map_err(qfactor::Error::from)?,
    )?;
    Ok(())
}

pub fn cmd_critvals(args: &CritvalsArgs) -> Result<()> {
    let kernel = parse_kernel(&args.kernel)?;
    let table = fixed_b::simulate_fixed_b(kernel, args.b, args.q, args.n_grid, args.n_reps, args.seed)?;
    ensure_dir(&args.out)?;
    write_file(&args.out.join(table.cache_filename()), &table.to_json()?)?;
    Ok(())
}

pub fn cmd_knots(args: &KnotsArgs) -> Result<()> {
    let config = ModelConfig {
        tau: args.tau,
        spline_order: args.order,
        interior_knots: args.knots_grid[0],
        epsilon: args.eps,
        max_iter: args.max_iter,
    };
    config.validate()?;
    let panel = ingest_csv(&args.input)?;
    let selection = estimator::select_knots_bic(&panel, &config, &args.knots_grid)?;
    ensure_dir(&args.out)?;
    write_file(&args.out.join("bic_curve.csv"), &bic_curve_csv(&selection)?)?;
    println!("selected {} interior knots by BIC", selection.chosen);
    Ok(())
}
