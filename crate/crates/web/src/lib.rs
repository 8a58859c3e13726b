//! Browser bindings: aggregation geometry in 2-D, Dirichlet partition
//! histograms and small convergence curves.
//!
//! Every export takes and returns plain numbers, strings or flat `f64`
//! arrays so the page needs no serializer.

use fedhist::buffer::{GradientRecord, HistoryBuffer};
use fedhist::config::{DataConfig, SpeedModel};
use fedhist::data::{dirichlet_partition, Dataset, Heterogeneity, PartitionSpec};
use fedhist::simulator::run_experiment;
use fedhist::strategies::aggregate;
use fedhist::{ExperimentConfig, GradientVec, HistParams, Strategy, UtilityTable};
use wasm_bindgen::prelude::*;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn pairs(flat: &[f64], what: &str) -> Result<Vec<GradientVec>, String> {
    if flat.is_empty() || flat.len() % 2 != 0 {
        return Err(format!("{what}: expected a non-empty list of (x, y) pairs, got {} numbers", flat.len()));
    }
    flat.chunks(2).map(|p| GradientVec::new(p.to_vec()).map_err(err)).collect()
}

/// One FedHist aggregation on 2-D gradients.
///
/// `locals` and `history` are flattened `(x, y)` pairs (history oldest
/// first, may be empty); `staleness` has one entry per local. Returns, flat:
/// the fused locals (2 per local), the weights (1 per local), the weighted sum
/// before rescaling (2) and the final global gradient (2).
#[wasm_bindgen]
pub fn fedhist_step(
    locals: &[f64],
    staleness: &[u32],
    history: &[f64],
    alpha: f64,
) -> Result<Vec<f64>, String> {
    let grads = pairs(locals, "locals")?;
    if staleness.len() != grads.len() {
        return Err(format!("need one staleness per local: {} locals, {} values", grads.len(), staleness.len()));
    }
    let params = HistParams { alpha, ..HistParams::default() };
    params.validate().map_err(err)?;

    let hist = if history.is_empty() { Vec::new() } else { pairs(history, "history")? };
    let mut buf = HistoryBuffer::new(hist.len().max(1)).map_err(err)?;
    for (i, g) in hist.into_iter().enumerate() {
        buf.push_round(i as u64 + 1, g, vec![]).map_err(err)?;
    }
    let round = 64;
    let records = grads
        .into_iter()
        .zip(staleness)
        .enumerate()
        .map(|(i, (g, &tau))| {
            if tau == 0 || tau >= round as u32 {
                return Err(format!("staleness must be in [1, {}), got {tau}", round));
            }
            GradientRecord::new(i, g, round, round - tau as u64, 1).map_err(err)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let utils = UtilityTable::new(records.len());
    let agg = aggregate(Strategy::FedHist, &records, &buf, &utils, &params).map_err(err)?;

    let mut out = Vec::new();
    for f in agg.fused.as_deref().unwrap_or_default() {
        out.extend_from_slice(f.as_slice());
    }
    out.extend_from_slice(&agg.weights);
    out.extend_from_slice(agg.pre_rescale.as_ref().map_or(agg.global.as_slice(), |p| p.as_slice()));
    out.extend_from_slice(agg.global.as_slice());
    Ok(out)
}

fn heterogeneity(beta: f64) -> Result<Heterogeneity, String> {
    if beta.is_infinite() || beta == 0.0 {
        Ok(Heterogeneity::Iid)
    } else if beta > 0.0 {
        Ok(Heterogeneity::Dirichlet(beta))
    } else {
        Err(format!("beta must be > 0 (or 0 / Infinity for IID), got {beta}"))
    }
}

/// Class histogram of each client shard, row-major `clients x classes`.
/// `beta` of 0 or `Infinity` selects the IID split.
#[wasm_bindgen]
pub fn partition_histogram(
    classes: usize,
    per_class: usize,
    clients: usize,
    beta: f64,
    seed: u32,
) -> Result<Vec<f64>, String> {
    if classes < 2 || per_class == 0 {
        return Err("need at least 2 classes and 1 sample per class".into());
    }
    let labels: Vec<usize> = (0..classes * per_class).map(|i| i % classes).collect();
    let data = Dataset::new(vec![0.0; labels.len()], labels, 1, classes).map_err(err)?;
    let spec = PartitionSpec { clients, heterogeneity: heterogeneity(beta)?, seed: seed.into(), isolate: None };
    let shards = dirichlet_partition(&data, &spec).map_err(err)?;
    Ok(shards.iter().flat_map(|s| s.class_histogram()).map(|c| c as f64).collect())
}

/// Per-round test accuracy of a small blob experiment.
#[wasm_bindgen]
pub fn convergence_curve(
    strategy: &str,
    clients: usize,
    k: usize,
    beta: f64,
    rounds: u32,
    seed: u32,
) -> Result<Vec<f64>, String> {
    let cfg = ExperimentConfig {
        n: clients,
        k,
        rounds: rounds.into(),
        seed: seed.into(),
        strategy: strategy.parse().map_err(err)?,
        beta: heterogeneity(beta)?,
        hidden: 16,
        history: (clients / k.max(1)).max(1),
        speed: SpeedModel::Uniform { min: 1.0, max: 3.0 },
        data: DataConfig { classes: 5, dim: 10, per_class: 80, spread: 0.3, csv: None },
        ..ExperimentConfig::default()
    };
    let out = run_experiment(&cfg).map_err(err)?;
    Ok(out.records.iter().map(|r| r.accuracy).collect())
}

/// Strategy names accepted by [`convergence_curve`], comma separated.
#[wasm_bindgen]
pub fn strategy_names() -> String {
    Strategy::ALL.iter().map(|s| s.name()).collect::<Vec<_>>().join(",")
}
