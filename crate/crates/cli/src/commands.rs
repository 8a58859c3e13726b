use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use fedhist::data::generate_synthetic;
use fedhist::simulator::{rounds_to_accuracy, run_experiment, staleness_stats, Outcome};
use fedhist::{ExperimentConfig, Strategy};
use serde::Serialize;

use crate::report::{compare_rows, comparison_csv, metrics_csv, CompareRow, MetricsRow, Summary};
use crate::{io_err, CliError, Result};

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(io_err(format!("writing {}", path.display())))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(format!("creating output directory {}", dir.display())))
}

/// Runs one experiment and writes `metrics.csv` and `summary.json` into `out`.
pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<(Outcome, Summary)> {
    ensure_dir(out)?;
    let outcome = run_experiment(cfg)?;
    let rows: Vec<MetricsRow> = outcome.records.iter().map(MetricsRow::from).collect();
    let summary = Summary::new(cfg, &outcome)?;
    write_file(&out.join("metrics.csv"), metrics_csv(&rows).as_bytes())?;
    let mut json = serde_json::to_string_pretty(&summary)?;
    json.push('\n');
    write_file(&out.join("summary.json"), json.as_bytes())?;
    Ok((outcome, summary))
}

/// Result of one (strategy, seed) cell of a comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellResult {
    pub strategy: String,
    pub seed: u64,
    pub final_accuracy: f64,
    pub rounds_to_target: Option<u64>,
    pub mean_staleness: f64,
    pub final_class_accuracy: Vec<Option<f64>>,
}

/// Runs every (strategy, seed) pair of `base` on up to `jobs` threads.
/// Results come back strategy-major in the order given, whatever the
/// thread count.
pub fn run_cells(
    base: &ExperimentConfig,
    strategies: &[Strategy],
    seeds: &[u64],
    target: f64,
    jobs: usize,
) -> Result<Vec<CellResult>> {
    if strategies.is_empty() || seeds.is_empty() {
        return Err(CliError::Usage("need at least one strategy and one seed".into()));
    }
    let cells: Vec<ExperimentConfig> = strategies
        .iter()
        .flat_map(|&strategy| seeds.iter().map(move |&seed| ExperimentConfig { strategy, seed, ..base.clone() }))
        .collect();
    let results: Mutex<Vec<Option<Result<CellResult>>>> = Mutex::new((0..cells.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let work = || loop {
        let i = next.fetch_add(1, Ordering::Relaxed);
        let Some(cfg) = cells.get(i) else { break };
        let res = run_experiment(cfg).and_then(|o| {
            Ok(CellResult {
                strategy: cfg.strategy.to_string(),
                seed: cfg.seed,
                final_accuracy: o.final_eval.accuracy,
                rounds_to_target: rounds_to_accuracy(&o.records, target),
                mean_staleness: staleness_stats(&o.records, cfg.n)?.mean,
                final_class_accuracy: o.final_eval.per_class,
            })
        });
        results.lock().unwrap()[i] = Some(res.map_err(CliError::from));
    };
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, cells.len()) {
            s.spawn(&work);
        }
    });
    results.into_inner().unwrap().into_iter().map(|r| r.expect("every cell ran")).collect()
}

#[derive(Serialize)]
struct ComparisonJson<'a> {
    target: f64,
    rows: &'a [CompareRow],
    cells: &'a [CellResult],
}

/// Runs the grid and writes `comparison.csv` and `comparison.json` into `out`.
pub fn compare(
    base: &ExperimentConfig,
    strategies: &[Strategy],
    seeds: &[u64],
    target: f64,
    jobs: usize,
    out: &Path,
) -> Result<Vec<CompareRow>> {
    if !(target > 0.0 && target < 1.0) {
        return Err(CliError::Usage(format!("target must be in (0, 1), got {target}")));
    }
    ensure_dir(out)?;
    let cells = run_cells(base, strategies, seeds, target, jobs)?;
    let names: Vec<String> = strategies.iter().map(|s| s.to_string()).collect();
    let runs: Vec<Vec<(f64, Option<u64>)>> = cells
        .chunks(seeds.len())
        .map(|c| c.iter().map(|r| (r.final_accuracy, r.rounds_to_target)).collect())
        .collect();
    let rows = compare_rows(&names, &runs);
    write_file(&out.join("comparison.csv"), comparison_csv(&rows).as_bytes())?;
    let mut json = serde_json::to_string_pretty(&ComparisonJson { target, rows: &rows, cells: &cells })?;
    json.push('\n');
    write_file(&out.join("comparison.json"), json.as_bytes())?;
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct GenDataArgs {
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    pub spread: f64,
    pub seed: u64,
    pub out: PathBuf,
}

/// Writes a synthetic blob dataset (all samples, header `f1..fD,label`).
pub fn gen_data(args: &GenDataArgs) -> Result<usize> {
    let data = generate_synthetic(args.classes, args.dim, args.per_class, args.spread, args.seed)?.merged();
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    let mut buf = Vec::new();
    data.write_csv(&mut buf)?;
    write_file(&args.out, &buf)?;
    Ok(data.len())
}
