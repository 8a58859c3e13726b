//! Output formats: per-round metrics CSV, run summary JSON and the strategy
//! comparison table.
//!
//! Floats are written with Rust's shortest round-trip formatting, so parsing
//! any emitted file gives back the exact values that were written.

use std::fmt::Write as _;

use fedhist::simulator::{rounds_to_accuracy, staleness_stats, Outcome, RoundRecord};
use fedhist::ExperimentConfig;
use serde::{Deserialize, Serialize};

use crate::{CliError, Result};

pub const METRICS_HEADER: &str = "round,time,accuracy,loss,mean_staleness,global_grad_norm,pred_act_deviation";
pub const COMPARISON_HEADER: &str =
    "strategy,seeds,mean_final_accuracy,std_final_accuracy,mean_rounds_to_target,reached,speedup";
const NA: &str = "n/a";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub round: u64,
    pub time: f64,
    pub accuracy: f64,
    pub loss: f64,
    pub mean_staleness: f64,
    pub global_grad_norm: f64,
    pub pred_act_deviation: Option<f64>,
}

impl From<&RoundRecord> for MetricsRow {
    fn from(r: &RoundRecord) -> Self {
        Self {
            round: r.round,
            time: r.time,
            accuracy: r.accuracy,
            loss: r.loss,
            mean_staleness: r.mean_staleness(),
            global_grad_norm: r.global_grad_norm,
            pred_act_deviation: r.pred_act_deviation,
        }
    }
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.round,
            r.time,
            r.accuracy,
            r.loss,
            r.mean_staleness,
            r.global_grad_norm,
            opt(r.pred_act_deviation)
        )
        .expect("writing to a String cannot fail");
    }
    out
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == METRICS_HEADER => {}
        _ => {
            return Err(CliError::Malformed {
                what: "metrics CSV",
                line: 1,
                message: format!("expected header `{METRICS_HEADER}`"),
            })
        }
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let bad = |message: String| CliError::Malformed { what: "metrics CSV", line: i + 1, message };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(bad(format!("expected 7 fields, found {}", f.len())));
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|e| bad(format!("`{s}`: {e}")));
            Ok(MetricsRow {
                round: f[0].trim().parse().map_err(|e| bad(format!("`{}`: {e}", f[0])))?,
                time: num(f[1])?,
                accuracy: num(f[2])?,
                loss: num(f[3])?,
                mean_staleness: num(f[4])?,
                global_grad_norm: num(f[5])?,
                pred_act_deviation: if f[6].trim().is_empty() { None } else { Some(num(f[6])?) },
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetRounds {
    pub target: f64,
    /// First round whose test accuracy reached the target.
    pub round: Option<u64>,
}

/// The part of a summary that is a pure function of the metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    pub final_accuracy: f64,
    pub best_accuracy: f64,
    pub rounds_to_target: Vec<TargetRounds>,
}

impl CurveSummary {
    pub fn from_rows(rows: &[MetricsRow], targets: &[f64]) -> Result<Self> {
        let last = rows.last().ok_or_else(|| CliError::Usage("no metric rows".into()))?;
        let curve = || rows.iter().map(|r| (r.round, r.accuracy));
        Ok(Self {
            final_accuracy: last.accuracy,
            best_accuracy: rows.iter().map(|r| r.accuracy).fold(f64::NEG_INFINITY, f64::max),
            rounds_to_target: targets
                .iter()
                .map(|&target| TargetRounds { target, round: fedhist::simulator::first_round_reaching(curve(), target) })
                .collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientSummary {
    pub client: usize,
    pub samples: usize,
    pub duration: f64,
    pub submissions: usize,
    /// `None` when the client never submitted.
    pub mean_staleness: Option<f64>,
    pub max_staleness: Option<u64>,
    pub final_utility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub strategy: String,
    pub seed: u64,
    pub n: usize,
    pub k: usize,
    pub rounds: u64,
    #[serde(flatten)]
    pub curve: CurveSummary,
    pub final_loss: f64,
    pub final_class_accuracy: Vec<Option<f64>>,
    pub mean_staleness: f64,
    pub max_staleness: u64,
    /// `N / (2K)`, the rough expected staleness, for comparison with `mean_staleness`.
    pub n_over_2k: f64,
    pub clients: Vec<ClientSummary>,
}

impl Summary {
    pub fn new(cfg: &ExperimentConfig, outcome: &Outcome) -> Result<Self> {
        let rows: Vec<MetricsRow> = outcome.records.iter().map(MetricsRow::from).collect();
        let curve = CurveSummary::from_rows(&rows, &cfg.targets)?;
        debug_assert!(cfg.targets.iter().zip(&curve.rounds_to_target).all(|(&t, tr)| {
            rounds_to_accuracy(&outcome.records, t) == tr.round
        }));
        let stats = staleness_stats(&outcome.records, cfg.n)?;
        let clients = stats
            .per_client
            .iter()
            .enumerate()
            .map(|(c, s)| ClientSummary {
                client: c,
                samples: outcome.client_samples[c],
                duration: outcome.durations[c],
                submissions: s.map_or(0, |s| s.submissions),
                mean_staleness: s.map(|s| s.mean),
                max_staleness: s.map(|s| s.max),
                final_utility: outcome.utilities[c],
            })
            .collect();
        Ok(Self {
            strategy: cfg.strategy.to_string(),
            seed: cfg.seed,
            n: cfg.n,
            k: cfg.k,
            rounds: cfg.rounds,
            curve,
            final_loss: outcome.final_eval.loss,
            final_class_accuracy: outcome.final_eval.per_class.clone(),
            mean_staleness: stats.mean,
            max_staleness: stats.max,
            n_over_2k: cfg.n as f64 / (2 * cfg.k) as f64,
            clients,
        })
    }
}

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub strategy: String,
    pub seeds: usize,
    pub mean_final_accuracy: f64,
    /// Sample standard deviation over seeds; 0 for a single seed.
    pub std_final_accuracy: f64,
    /// Mean over seeds; `None` unless every seed reached the target.
    pub mean_rounds_to_target: Option<f64>,
    /// Seeds that reached the target.
    pub reached: usize,
    /// `rounds(fedavg) / rounds(strategy)`; `None` when either is undefined.
    pub speedup: Option<f64>,
}

pub fn comparison_csv(rows: &[CompareRow]) -> String {
    let mut out = String::new();
    out.push_str(COMPARISON_HEADER);
    out.push('\n');
    let na = |v: Option<f64>| v.map_or_else(|| NA.to_string(), |v| v.to_string());
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.strategy,
            r.seeds,
            r.mean_final_accuracy,
            r.std_final_accuracy,
            na(r.mean_rounds_to_target),
            r.reached,
            na(r.speedup)
        )
        .expect("writing to a String cannot fail");
    }
    out
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Folds per-seed results into one row per strategy, in the given order.
/// `runs[i]` holds `(final_accuracy, rounds_to_target)` for each seed of `strategies[i]`.
pub fn compare_rows(strategies: &[String], runs: &[Vec<(f64, Option<u64>)>]) -> Vec<CompareRow> {
    let mut rows: Vec<CompareRow> = strategies
        .iter()
        .zip(runs)
        .map(|(name, seeds)| {
            let finals: Vec<f64> = seeds.iter().map(|s| s.0).collect();
            let reached: Vec<f64> = seeds.iter().filter_map(|s| s.1.map(|r| r as f64)).collect();
            CompareRow {
                strategy: name.clone(),
                seeds: seeds.len(),
                mean_final_accuracy: mean(&finals),
                std_final_accuracy: sample_std(&finals),
                mean_rounds_to_target: (reached.len() == seeds.len()).then(|| mean(&reached)),
                reached: reached.len(),
                speedup: None,
            }
        })
        .collect();
    let baseline = rows.iter().find(|r| r.strategy == "fedavg").and_then(|r| r.mean_rounds_to_target);
    for row in &mut rows {
        row.speedup = match (baseline, row.mean_rounds_to_target) {
            (Some(b), Some(r)) => Some(b / r),
            _ => None,
        };
    }
    rows
}
