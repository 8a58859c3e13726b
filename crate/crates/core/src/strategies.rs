//! Aggregation strategies.
//!
//! `fedhist` fuses each local gradient with the least-similar cached global
//! gradient, weights clients by exponential staleness decay plus a hindsight
//! utility boost, and rescales the aggregate to the mean local norm. The
//! baselines are plain normalized weighted sums of the raw gradients.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::buffer::{GradientRecord, HistoryBuffer};
use crate::error::{Error, Result};
use crate::gradmath::{cosine_similarity, l2_norm, rescale_to_norm, weighted_sum, GradientVec, Rescaled};

/// `e / 2`, the base of the exponential staleness decay.
const DECAY_BASE: f64 = std::f64::consts::E / 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    FedHist,
    FedAvg,
    DynSgd,
    Twafl,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::FedHist, Strategy::FedAvg, Strategy::DynSgd, Strategy::Twafl];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::FedHist => "fedhist",
            Strategy::FedAvg => "fedavg",
            Strategy::DynSgd => "dynsgd",
            Strategy::Twafl => "twafl",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::config("strategy", format!("unknown strategy `{s}` (expected fedhist, fedavg, dynsgd or twafl)")))
    }
}

/// FedHist hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistParams {
    /// Fusion weight of the collaborative gradient.
    pub alpha: f64,
    /// Weight of the utility boost in the aggregation weights.
    pub lambda: f64,
    /// EMA constant for the running utility.
    pub gamma: f64,
    /// Similarity threshold separating reward from penalty.
    pub sim_threshold: f64,
    /// Buffer depth `h`.
    pub history: usize,
    /// Lower clamp on unnormalized weights.
    pub clamp_eps: f64,
}

impl Default for HistParams {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            lambda: 1.0,
            gamma: 0.2,
            sim_threshold: 0.0,
            history: 5,
            clamp_eps: 1e-6,
        }
    }
}

impl HistParams {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, key: &str, msg: &str| if ok { Ok(()) } else { Err(Error::config(key, msg)) };
        check(self.alpha > 0.0 && self.alpha.is_finite(), "alpha", "must be > 0")?;
        check(self.lambda >= 0.0 && self.lambda.is_finite(), "lambda", "must be >= 0")?;
        check(self.gamma > 0.0 && self.gamma <= 1.0, "gamma", "must be in (0, 1]")?;
        check(
            (-1.0..=1.0).contains(&self.sim_threshold),
            "sim_threshold",
            "must be in [-1, 1]",
        )?;
        check(self.history >= 1, "history", "must be >= 1")?;
        check(self.clamp_eps > 0.0 && self.clamp_eps.is_finite(), "clamp_eps", "must be > 0")
    }
}

/// Running per-client utility.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilityTable {
    average: Vec<f64>,
    last: Vec<Option<f64>>,
    last_round: Vec<Option<u64>>,
}

impl UtilityTable {
    pub fn new(clients: usize) -> Self {
        Self {
            average: vec![0.0; clients],
            last: vec![None; clients],
            last_round: vec![None; clients],
        }
    }

    pub fn clients(&self) -> usize {
        self.average.len()
    }

    pub fn average(&self, client: usize) -> f64 {
        self.average[client]
    }

    pub fn averages(&self) -> &[f64] {
        &self.average
    }

    pub fn last(&self, client: usize) -> Option<f64> {
        self.last[client]
    }

    /// Folds `util` into the client's running average. At most once per round.
    pub fn record(&mut self, client: usize, round: u64, util: f64, gamma: f64) -> Result<()> {
        if client >= self.average.len() {
            return Err(Error::InvalidArgument(format!("unknown client {client}")));
        }
        if self.last_round[client] == Some(round) {
            return Err(Error::InvalidArgument(format!(
                "utility for client {client} already updated in round {round}"
            )));
        }
        self.average[client] = update_avg_utility(self.average[client], util, gamma);
        self.last[client] = Some(util);
        self.last_round[client] = Some(round);
        Ok(())
    }

    #[cfg(test)]
    pub(crate) fn set_average(&mut self, client: usize, value: f64) {
        self.average[client] = value;
    }
}

/// `g + alpha * g_co`, or `g` when there is no collaborative gradient.
pub fn egs_fuse(g: &GradientVec, g_co: Option<&GradientVec>, alpha: f64) -> Result<GradientVec> {
    match g_co {
        Some(co) => g.add_scaled(co, alpha),
        None => Ok(g.clone()),
    }
}

/// `(e/2)^-tau`.
pub fn staleness_weight(tau: u64) -> Result<f64> {
    if tau < 1 {
        return Err(Error::InvalidArgument("staleness must be >= 1".into()));
    }
    Ok(DECAY_BASE.powi(-(tau as i32)))
}

/// Normalized staleness-plus-utility weights, each unnormalized term clamped
/// below at `clamp_eps`.
pub fn haa_weights(records: &[GradientRecord], utils: &UtilityTable, params: &HistParams) -> Result<Vec<f64>> {
    if records.is_empty() {
        return Err(Error::EmptyInput("haa_weights records"));
    }
    let raw = records
        .iter()
        .map(|r| {
            let boost = params.lambda * utils.average(r.client_id);
            Ok((staleness_weight(r.staleness)? + boost).max(params.clamp_eps))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(normalize(&raw))
}

fn normalize(raw: &[f64]) -> Vec<f64> {
    let total = raw.iter().fold(0.0, |acc, v| acc + v);
    raw.iter().map(|v| v / total).collect()
}

/// Unweighted mean of the relatively fresh gradients. `None` for an empty set.
pub fn predicted_unbiased(fresh: &[&GradientRecord]) -> Result<Option<GradientVec>> {
    if fresh.is_empty() {
        return Ok(None);
    }
    let weights = vec![1.0 / fresh.len() as f64; fresh.len()];
    let grads: Vec<&GradientVec> = fresh.iter().map(|r| &r.grad).collect();
    weighted_sum(&grads, &weights).map(Some)
}

/// Hindsight utility of a past participant measured against the predicted
/// unbiased gradient. Positive above the similarity threshold, negative below.
pub fn utility(his: &GradientRecord, pred: &GradientVec, fresh_count: usize, params: &HistParams) -> Result<f64> {
    if fresh_count == 0 {
        return Err(Error::InvalidArgument("fresh set size must be >= 1".into()));
    }
    let sim = cosine_similarity(&his.grad, pred)?;
    let decay = staleness_weight(his.staleness)?;
    let p_his = if sim >= params.sim_threshold { 1.0 - decay } else { decay };
    Ok((sim - params.sim_threshold) * p_his * fresh_count as f64)
}

pub fn update_avg_utility(prev: f64, util: f64, gamma: f64) -> f64 {
    (1.0 - gamma) * prev + gamma * util
}

/// Rescales `aggregate` to the mean norm of `fused_locals`.
pub fn ina_rescale(aggregate: &GradientVec, fused_locals: &[GradientVec]) -> Result<Rescaled> {
    if fused_locals.is_empty() {
        return Err(Error::EmptyInput("ina_rescale locals"));
    }
    let mean_norm = fused_locals.iter().fold(0.0, |acc, g| acc + l2_norm(g)) / fused_locals.len() as f64;
    rescale_to_norm(aggregate, mean_norm)
}

/// Output of one aggregation step.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregation {
    pub global: GradientVec,
    /// One weight per input record, in input order; sums to 1.
    pub weights: Vec<f64>,
    /// FedHist only: the gradients after fusion.
    pub fused: Option<Vec<GradientVec>>,
    /// FedHist only: the weighted sum before norm rescaling.
    pub pre_rescale: Option<GradientVec>,
    /// Set when rescaling was skipped because the aggregate was zero.
    pub degenerate: bool,
}

/// Aggregates one round of records into a global gradient.
pub fn aggregate(
    strategy: Strategy,
    records: &[GradientRecord],
    buf: &HistoryBuffer,
    utils: &UtilityTable,
    params: &HistParams,
) -> Result<Aggregation> {
    if records.is_empty() {
        return Err(Error::EmptyInput("aggregate records"));
    }
    let raw_grads: Vec<&GradientVec> = records.iter().map(|r| &r.grad).collect();
    let baseline = |raw: Vec<f64>| -> Result<Aggregation> {
        let weights = normalize(&raw);
        Ok(Aggregation {
            global: weighted_sum(&raw_grads, &weights)?,
            weights,
            fused: None,
            pre_rescale: None,
            degenerate: false,
        })
    };
    match strategy {
        Strategy::FedAvg => baseline(records.iter().map(|r| r.sample_count as f64).collect()),
        Strategy::DynSgd => baseline(records.iter().map(|r| 1.0 / r.staleness as f64).collect()),
        Strategy::Twafl => baseline(records.iter().map(|r| staleness_weight(r.staleness)).collect::<Result<_>>()?),
        Strategy::FedHist => {
            let fused = records
                .iter()
                .map(|r| egs_fuse(&r.grad, buf.select_collaborative(&r.grad)?, params.alpha))
                .collect::<Result<Vec<_>>>()?;
            let weights = haa_weights(records, utils, params)?;
            let combined = weighted_sum(&fused, &weights)?;
            let rescaled = ina_rescale(&combined, &fused)?;
            Ok(Aggregation {
                global: rescaled.vec,
                weights,
                fused: Some(fused),
                pre_rescale: Some(combined),
                degenerate: rescaled.degenerate,
            })
        }
    }
}
