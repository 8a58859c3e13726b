//! Experiment configuration with defaults and validation.

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Heterogeneity;
use crate::error::{Error, Result};
use crate::strategies::{HistParams, Strategy};

/// Where training data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    pub spread: f64,
    /// When set, load this CSV instead of generating blobs.
    pub csv: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { classes: 10, dim: 20, per_class: 200, spread: 0.3, csv: None }
    }
}

/// Per-client job duration, drawn once per client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase", deny_unknown_fields)]
pub enum SpeedModel {
    Constant { duration: f64 },
    Uniform { min: f64, max: f64 },
    /// `round(slow_fraction * N)` randomly chosen clients take `slow`, the rest `fast`.
    Bimodal { fast: f64, slow: f64, slow_fraction: f64 },
}

impl Default for SpeedModel {
    fn default() -> Self {
        SpeedModel::Uniform { min: 1.0, max: 3.0 }
    }
}

impl SpeedModel {
    fn validate(&self) -> Result<()> {
        let positive = |v: f64, key: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(key, format!("must be > 0, got {v}")))
            }
        };
        match *self {
            SpeedModel::Constant { duration } => positive(duration, "speed.duration"),
            SpeedModel::Uniform { min, max } => {
                positive(min, "speed.min")?;
                positive(max, "speed.max")?;
                if min > max {
                    return Err(Error::config("speed.min", format!("min {min} exceeds speed.max {max}")));
                }
                Ok(())
            }
            SpeedModel::Bimodal { fast, slow, slow_fraction } => {
                positive(fast, "speed.fast")?;
                positive(slow, "speed.slow")?;
                if !(0.0..=1.0).contains(&slow_fraction) {
                    return Err(Error::config("speed.slow_fraction", "must be in [0, 1]"));
                }
                Ok(())
            }
        }
    }

    pub fn durations<R: Rng + ?Sized>(&self, clients: usize, rng: &mut R) -> Vec<f64> {
        match *self {
            SpeedModel::Constant { duration } => vec![duration; clients],
            SpeedModel::Uniform { min, max } => {
                (0..clients).map(|_| if min == max { min } else { rng.gen_range(min..max) }).collect()
            }
            SpeedModel::Bimodal { fast, slow, slow_fraction } => {
                let slow_count = (slow_fraction * clients as f64).round() as usize;
                let mut ids: Vec<usize> = (0..clients).collect();
                ids.shuffle(rng);
                let mut out = vec![fast; clients];
                for &i in &ids[..slow_count] {
                    out[i] = slow;
                }
                out
            }
        }
    }
}

/// Routes one class to a few slowed-down clients (the last `clients` ids).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IsolateConfig {
    pub class: usize,
    pub clients: usize,
    /// Duration multiplier for the isolated clients.
    pub slowdown: f64,
}

impl Default for IsolateConfig {
    fn default() -> Self {
        Self { class: 9, clients: 2, slowdown: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Number of clients `N`.
    pub n: usize,
    /// Submissions per round `K`.
    pub k: usize,
    pub rounds: u64,
    pub strategy: Strategy,
    pub seed: u64,

    pub history: usize,
    pub alpha: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub sim_threshold: f64,
    pub clamp_eps: f64,

    pub server_lr: f64,
    pub client_lr: f64,
    /// Per-client learning rates; overrides `client_lr` when present.
    pub client_lrs: Option<Vec<f64>>,
    pub local_steps: usize,
    pub batch_size: usize,
    /// Hidden width; 0 selects softmax regression.
    pub hidden: usize,

    pub beta: Heterogeneity,
    /// Accuracy targets reported as rounds-to-target.
    pub targets: Vec<f64>,
    /// Threads used for local training within a round.
    pub workers: usize,

    pub data: DataConfig,
    pub speed: SpeedModel,
    pub isolate: Option<IsolateConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let hist = HistParams::default();
        Self {
            n: 20,
            k: 2,
            rounds: 300,
            strategy: Strategy::FedHist,
            seed: 1,
            history: hist.history,
            alpha: hist.alpha,
            lambda: hist.lambda,
            gamma: hist.gamma,
            sim_threshold: hist.sim_threshold,
            clamp_eps: hist.clamp_eps,
            server_lr: 0.02,
            client_lr: 0.02,
            client_lrs: None,
            local_steps: 5,
            batch_size: 32,
            hidden: 32,
            beta: Heterogeneity::Dirichlet(1.0),
            targets: vec![0.6],
            workers: 1,
            data: DataConfig::default(),
            speed: SpeedModel::default(),
            isolate: None,
        }
    }
}

impl ExperimentConfig {
    pub fn hist_params(&self) -> HistParams {
        HistParams {
            alpha: self.alpha,
            lambda: self.lambda,
            gamma: self.gamma,
            sim_threshold: self.sim_threshold,
            history: self.history,
            clamp_eps: self.clamp_eps,
        }
    }

    pub fn client_lr_for(&self, client: usize) -> f64 {
        self.client_lrs.as_ref().map_or(self.client_lr, |lrs| lrs[client])
    }

    /// Client ids holding the isolated class, if any.
    pub fn isolated_clients(&self) -> Vec<usize> {
        self.isolate
            .as_ref()
            .map(|iso| (self.n - iso.clients..self.n).collect())
            .unwrap_or_default()
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::config("k", "must be >= 1"));
        }
        if self.k > self.n {
            return Err(Error::config(
                "k",
                format!("k = {} exceeds n = {}; need n >= k", self.k, self.n),
            ));
        }
        if self.n < 2 {
            return Err(Error::config("n", "must be >= 2 to partition data"));
        }
        if self.rounds < 1 {
            return Err(Error::config("rounds", "must be >= 1"));
        }
        self.hist_params().validate()?;
        let positive = |v: f64, key: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(key, format!("must be > 0, got {v}")))
            }
        };
        positive(self.server_lr, "server_lr")?;
        positive(self.client_lr, "client_lr")?;
        if let Some(lrs) = &self.client_lrs {
            if lrs.len() != self.n {
                return Err(Error::config(
                    "client_lrs",
                    format!("expected {} entries (one per client), found {}", self.n, lrs.len()),
                ));
            }
            lrs.iter().try_for_each(|&lr| positive(lr, "client_lrs"))?;
        }
        if self.local_steps < 1 {
            return Err(Error::config("local_steps", "must be >= 1"));
        }
        if self.batch_size < 1 {
            return Err(Error::config("batch_size", "must be >= 1"));
        }
        if self.workers < 1 {
            return Err(Error::config("workers", "must be >= 1"));
        }
        if let Some(t) = self.targets.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return Err(Error::config("targets", format!("each target must be in (0, 1), got {t}")));
        }
        let d = &self.data;
        match &d.csv {
            Some(path) if !path.is_file() => {
                return Err(Error::config("data.csv", format!("dataset file {} not found", path.display())))
            }
            Some(_) => {}
            None => {
                if d.classes < 2 {
                    return Err(Error::config("data.classes", "must be >= 2"));
                }
                if d.dim < 1 {
                    return Err(Error::config("data.dim", "must be >= 1"));
                }
                if d.per_class < 1 {
                    return Err(Error::config("data.per_class", "must be >= 1"));
                }
                if !(d.spread >= 0.0 && d.spread.is_finite()) {
                    return Err(Error::config("data.spread", "must be >= 0"));
                }
            }
        }
        self.speed.validate()?;
        if let Some(iso) = &self.isolate {
            if iso.clients < 1 || iso.clients >= self.n {
                return Err(Error::config("isolate.clients", format!("must be in [1, n), got {}", iso.clients)));
            }
            positive(iso.slowdown, "isolate.slowdown")?;
            if d.csv.is_none() && iso.class >= d.classes {
                return Err(Error::config(
                    "isolate.class",
                    format!("class {} out of range for {} classes", iso.class, d.classes),
                ));
            }
        }
        Ok(())
    }
}
