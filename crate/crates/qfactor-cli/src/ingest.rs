//! Long-format panel CSV ingestion.
//!
//! Expected header: `unit,time,y,x1,...,xJ`. Units and periods are indexed
//! by first appearance, the panel must be balanced (every unit observed in
//! every period exactly once), and characteristics must be constant within
//! a unit across time. Violations are reported with the offending line.

use crate::{CliError, Result};
use ndarray::Array2;
use qfactor::model::Panel;
use std::collections::HashMap;
use std::path::Path;

fn record_line(record: &csv::StringRecord) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(0)
}

pub fn ingest_csv(path: &Path) -> Result<Panel> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Invalid(format!("cannot open {}: {e}", path.display())))?;

    let headers = reader.headers()?.clone();
    if headers.len() < 4 {
        return Err(CliError::Invalid(format!(
            "header must be unit,time,y,x1,...,xJ with at least one characteristic, got {} columns",
            headers.len()
        )));
    }
    for (pos, expected) in [(0usize, "unit"), (1, "time"), (2, "y")] {
        if &headers[pos] != expected {
            return Err(CliError::Invalid(format!(
                "header column {} must be {expected:?}, got {:?}",
                pos + 1,
                &headers[pos]
            )));
        }
    }
    let j_count = headers.len() - 3;
    for k in 0..j_count {
        let expected = format!("x{}", k + 1);
        if headers[3 + k] != expected {
            return Err(CliError::Invalid(format!(
                "header column {} must be {expected:?}, got {:?}",
                4 + k,
                &headers[3 + k]
            )));
        }
    }

    let mut unit_ids: Vec<String> = Vec::new();
    let mut unit_index: HashMap<String, usize> = HashMap::new();
    let mut period_ids: Vec<String> = Vec::new();
    let mut period_index: HashMap<String, usize> = HashMap::new();
    let mut cells: HashMap<(usize, usize), f64> = HashMap::new();
    let mut unit_x: Vec<Vec<f64>> = Vec::new();

    for result in reader.records() {
        let record = result?;
        let line = record_line(&record);
        if record.len() != headers.len() {
            return Err(CliError::Ingest {
                line,
                reason: format!("expected {} fields, got {}", headers.len(), record.len()),
            });
        }
        let unit = record[0].to_string();
        let period = record[1].to_string();
        if unit.is_empty() || period.is_empty() {
            return Err(CliError::Ingest {
                line,
                reason: "empty unit or time label".into(),
            });
        }
        let y: f64 = record[2].parse().map_err(|_| CliError::Ingest {
            line,
            reason: format!("cannot parse y value {:?}", &record[2]),
        })?;
        let mut xs = Vec::with_capacity(j_count);
        for k in 0..j_count {
            let v: f64 = record[3 + k].parse().map_err(|_| CliError::Ingest {
                line,
                reason: format!("cannot parse x{} value {:?}", k + 1, &record[3 + k]),
            })?;
            xs.push(v);
        }

        let next_unit = unit_ids.len();
        let i = *unit_index.entry(unit.clone()).or_insert_with(|| {
            unit_ids.push(unit.clone());
            unit_x.push(Vec::new());
            next_unit
        });
        let next_period = period_ids.len();
        let t = *period_index.entry(period.clone()).or_insert_with(|| {
            period_ids.push(period.clone());
            next_period
        });

        if cells.insert((i, t), y).is_some() {
            return Err(CliError::Ingest {
                line,
                reason: format!("duplicate observation for unit {unit:?} at time {period:?}"),
            });
        }
        if unit_x[i].is_empty() {
            unit_x[i] = xs;
        } else {
            for (k, (&seen, &now)) in unit_x[i].iter().zip(xs.iter()).enumerate() {
                if seen != now {
                    return Err(CliError::Ingest {
                        line,
                        reason: format!(
                            "time-varying characteristic x{} for unit {unit:?}: {seen} then {now}",
                            k + 1
                        ),
                    });
                }
            }
        }
    }

    let n = unit_ids.len();
    let t_count = period_ids.len();
    if n == 0 {
        return Err(CliError::Invalid("input has no data rows".into()));
    }
    // Balancedness: every (unit, period) cell must be present.
    if cells.len() != n * t_count {
        for (i, unit) in unit_ids.iter().enumerate() {
            for (t, period) in period_ids.iter().enumerate() {
                if !cells.contains_key(&(i, t)) {
                    return Err(CliError::Invalid(format!(
                        "unbalanced panel: unit {unit:?} has no observation at time {period:?}"
                    )));
                }
            }
        }
    }

    let mut y = Array2::<f64>::zeros((n, t_count));
    for ((i, t), v) in &cells {
        y[(*i, *t)] = *v;
    }
    let mut x = Array2::<f64>::zeros((n, j_count));
    for (i, row) in unit_x.iter().enumerate() {
        for (k, v) in row.iter().enumerate() {
            x[(i, k)] = *v;
        }
    }
    Ok(Panel::new(y, x, unit_ids, period_ids)?)
}

/// Writes a panel back to the ingestion format, mainly for producing
/// simulated fixtures.
pub fn write_panel_csv(panel: &Panel, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| CliError::Invalid(format!("cannot create {}: {e}", path.display())))?;
    let mut header = vec!["unit".to_string(), "time".to_string(), "y".to_string()];
    for j in 0..panel.n_characteristics() {
        header.push(format!("x{}", j + 1));
    }
    writer.write_record(&header)?;
    for i in 0..panel.n_units() {
        for t in 0..panel.n_periods() {
            let mut row = vec![
                panel.unit_ids()[i].clone(),
                panel.period_ids()[t].clone(),
                format!("{}", panel.responses()[(i, t)]),
            ];
            for j in 0..panel.n_characteristics() {
                row.push(format!("{}", panel.covariates()[(i, j)]));
            }
            writer.write_record(&row)?;
        }
    }
    writer.flush().map_err(|e| CliError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    Ok(())
}
