//! Result serialization: `trials.csv`, `summary.json`, and CDF export.
//!
//! All output is a deterministic function of the run: floats print in
//! shortest round-trip form, map keys are ordered, and rows follow the
//! trial index.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use super::config::ScenarioConfig;
use super::run::{MonteCarloRun, TrialStatus};
use super::stats::SummaryStats;

pub const TRIALS_CSV_HEADER: &str = "trial_index,ep_m,er_deg,iterations,final_cost,status";

#[derive(Debug, Error)]
pub enum CdfError {
    #[error("trials file is missing the expected header")]
    BadHeader,
    #[error("trials file line {0} is malformed")]
    BadRow(usize),
    #[error("trials file contains no successful trials")]
    Empty,
}

/// Render the per-trial table. Failed trials keep their row with NaN
/// metrics and their status code.
pub fn trials_csv(run: &MonteCarloRun) -> String {
    let mut out = String::with_capacity(run.trials.len() * 64);
    out.push_str(TRIALS_CSV_HEADER);
    out.push('\n');
    for t in &run.trials {
        let (ep, er, iters, cost) = match (&t.ep_m, &t.er_deg, &t.diagnostics) {
            (Some(ep), Some(er), Some(d)) => {
                (format!("{ep}"), format!("{er}"), format!("{}", d.iterations), format!("{}", d.final_cost))
            }
            _ => ("NaN".into(), "NaN".into(), "0".into(), "NaN".into()),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            t.trial_index,
            ep,
            er,
            iters,
            cost,
            t.status.as_str()
        ));
    }
    out
}

#[derive(Serialize)]
struct SummaryDoc<'a> {
    seed: u64,
    trials: u64,
    succeeded: usize,
    failed: usize,
    failure_counts: &'a BTreeMap<String, usize>,
    stats: &'a SummaryStats,
    config: &'a ScenarioConfig,
}

/// Render `summary.json`: statistics, failure accounting, and an echo
/// of the effective configuration.
pub fn summary_json(run: &MonteCarloRun, config: &ScenarioConfig) -> String {
    let doc = SummaryDoc {
        seed: config.seed,
        trials: config.trials,
        succeeded: run.succeeded,
        failed: run.failed,
        failure_counts: &run.failure_counts,
        stats: &run.stats,
        config,
    };
    serde_json::to_string_pretty(&doc).expect("summary serialization") + "\n"
}

/// Convert a `trials.csv` document into sorted CDF rows
/// `metric,value,cum_fraction` for both error metrics. Failed trials
/// are skipped.
pub fn export_cdf(trials_csv_text: &str) -> Result<String, CdfError> {
    let mut lines = trials_csv_text.lines();
    match lines.next() {
        Some(h) if h.trim() == TRIALS_CSV_HEADER => {}
        _ => return Err(CdfError::BadHeader),
    }
    let mut ep = Vec::new();
    let mut er = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(CdfError::BadRow(i + 2));
        }
        if fields[5].trim() != TrialStatus::Ok.as_str() {
            continue;
        }
        let ep_v: f64 = fields[1].trim().parse().map_err(|_| CdfError::BadRow(i + 2))?;
        let er_v: f64 = fields[2].trim().parse().map_err(|_| CdfError::BadRow(i + 2))?;
        ep.push(ep_v);
        er.push(er_v);
    }
    if ep.is_empty() {
        return Err(CdfError::Empty);
    }
    ep.sort_by(|a, b| a.partial_cmp(b).unwrap());
    er.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut out = String::from("metric,value,cum_fraction\n");
    let n = ep.len() as f64;
    for (i, v) in ep.iter().enumerate() {
        out.push_str(&format!("ep_m,{},{}\n", v, (i + 1) as f64 / n));
    }
    for (i, v) in er.iter().enumerate() {
        out.push_str(&format!("er_deg,{},{}\n", v, (i + 1) as f64 / n));
    }
    Ok(out)
}
