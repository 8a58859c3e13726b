//! Discrete-event K-async training loop.
//!
//! Every client always has one local job in flight. A round closes when the
//! K earliest jobs finish (ties go to the lower client id); those K clients
//! submit, the server aggregates and updates the global model, and only the
//! submitters receive it and restart. Everyone else keeps training on the
//! model they last received.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use crate::buffer::{GradientRecord, HistoryBuffer};
use crate::config::ExperimentConfig;
use crate::data::{dirichlet_partition, generate_synthetic, load_csv, Dataset, Isolation, PartitionSpec, TrainTest};
use crate::error::{Error, Result};
use crate::gradmath::{l2_norm, GradientVec};
use crate::model::{evaluate, local_train, Arch, Evaluation, ModelParams};
use crate::rng::{stream, Stream};
use crate::strategies::{aggregate, predicted_unbiased, utility, Strategy, UtilityTable};

/// Metrics for one completed round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: u64,
    /// Simulated time at which the round closed.
    pub time: f64,
    /// Participating client ids, ascending.
    pub participants: Vec<usize>,
    pub staleness: Vec<u64>,
    pub weights: Vec<f64>,
    pub global_grad_norm: f64,
    /// `||g_act - g_pred||` for round `r - h`, when a prediction exists.
    pub pred_act_deviation: Option<f64>,
    pub accuracy: f64,
    pub loss: f64,
    /// Test accuracy per class; `None` where the test split has no samples.
    pub class_accuracy: Vec<Option<f64>>,
}

impl RoundRecord {
    pub fn mean_staleness(&self) -> f64 {
        self.staleness.iter().sum::<u64>() as f64 / self.staleness.len() as f64
    }
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub records: Vec<RoundRecord>,
    pub final_model: ModelParams,
    pub final_eval: Evaluation,
    pub utilities: Vec<f64>,
    pub durations: Vec<f64>,
    pub client_samples: Vec<usize>,
}

/// Prepared inputs for a run: client shards, the test split and durations.
#[derive(Debug, Clone)]
pub struct Setup {
    pub clients: Vec<Dataset>,
    pub test: Dataset,
    pub durations: Vec<f64>,
    pub initial: ModelParams,
}

/// Loads or generates the dataset named by `cfg.data`.
pub fn load_data(cfg: &ExperimentConfig) -> Result<TrainTest> {
    let d = &cfg.data;
    match &d.csv {
        Some(path) => {
            let all = load_csv(path)?;
            TrainTest::split(&all, 0.8, &mut stream(cfg.seed, Stream::TrainTestSplit))
        }
        None => generate_synthetic(d.classes, d.dim, d.per_class, d.spread, cfg.seed),
    }
}

impl Setup {
    pub fn new(cfg: &ExperimentConfig, data: &TrainTest) -> Result<Self> {
        cfg.validate()?;
        let isolate = match &cfg.isolate {
            Some(iso) if iso.class >= data.train.classes() => {
                return Err(Error::config(
                    "isolate.class",
                    format!("class {} out of range for {} classes", iso.class, data.train.classes()),
                ))
            }
            Some(iso) => Some(Isolation { class: iso.class, clients: cfg.isolated_clients() }),
            None => None,
        };
        let spec = PartitionSpec { clients: cfg.n, heterogeneity: cfg.beta, seed: cfg.seed, isolate };
        let clients = dirichlet_partition(&data.train, &spec)?;

        let mut durations = cfg.speed.durations(cfg.n, &mut stream(cfg.seed, Stream::ClientSpeeds));
        if let Some(iso) = &cfg.isolate {
            for c in cfg.isolated_clients() {
                durations[c] *= iso.slowdown;
            }
        }
        let arch = Arch { input_dim: data.train.dim(), hidden: cfg.hidden, classes: data.train.classes() };
        let initial = ModelParams::init(arch, &mut stream(cfg.seed, Stream::ModelInit))?;
        Ok(Self { clients, test: data.test.clone(), durations, initial })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct FinishKey(f64, usize);

impl Eq for FinishKey {}

impl PartialOrd for FinishKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for FinishKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

struct Client<'a> {
    id: usize,
    data: &'a Dataset,
    duration: f64,
    lr: f64,
    base_round: u64,
    base_model: Arc<ModelParams>,
    rng: ChaCha8Rng,
}

impl Client<'_> {
    fn train(&mut self, steps: usize, batch_size: usize) -> Result<GradientVec> {
        local_train(&self.base_model, self.data, self.lr, steps, batch_size, &mut self.rng)
    }
}

/// Mini-batch stream for one client under `seed`.
pub fn client_stream(seed: u64, client: usize) -> ChaCha8Rng {
    stream(seed, Stream::Client(client))
}

/// Generates or loads data, then runs.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Outcome> {
    cfg.validate()?;
    let data = load_data(cfg)?;
    run_with_setup(cfg, &Setup::new(cfg, &data)?)
}

fn train_participants(jobs: &mut [&mut Client<'_>], steps: usize, batch: usize, workers: usize) -> Vec<Result<GradientVec>> {
    if workers <= 1 || jobs.len() <= 1 {
        return jobs.iter_mut().map(|c| c.train(steps, batch)).collect();
    }
    let chunk = jobs.len().div_ceil(workers);
    std::thread::scope(|s| {
        let handles: Vec<_> = jobs
            .chunks_mut(chunk)
            .map(|part| s.spawn(move || part.iter_mut().map(|c| c.train(steps, batch)).collect::<Vec<_>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("local training thread panicked")).collect()
    })
}

pub fn run_with_setup(cfg: &ExperimentConfig, setup: &Setup) -> Result<Outcome> {
    cfg.validate()?;
    let hist = cfg.hist_params();
    let h = cfg.history as u64;
    let mut model = setup.initial.clone();
    let shared = Arc::new(model.clone());
    let mut clients: Vec<Client<'_>> = setup
        .clients
        .iter()
        .enumerate()
        .map(|(id, data)| Client {
            id,
            data,
            duration: setup.durations[id],
            lr: cfg.client_lr_for(id),
            base_round: 0,
            base_model: Arc::clone(&shared),
            rng: client_stream(cfg.seed, id),
        })
        .collect();
    let mut queue: BinaryHeap<Reverse<FinishKey>> =
        clients.iter().map(|c| Reverse(FinishKey(c.duration, c.id))).collect();

    let mut buffer = HistoryBuffer::new(cfg.history)?;
    let mut utils = UtilityTable::new(cfg.n);
    let mut records = Vec::with_capacity(cfg.rounds as usize);

    for round in 1..=cfg.rounds {
        let mut finishing: Vec<usize> = Vec::with_capacity(cfg.k);
        let mut now = 0.0f64;
        for _ in 0..cfg.k {
            let Reverse(FinishKey(t, id)) = queue.pop().expect("every client has a job in flight");
            now = now.max(t);
            finishing.push(id);
        }
        finishing.sort_unstable();

        let mut jobs: Vec<&mut Client<'_>> = clients
            .iter_mut()
            .filter(|c| finishing.binary_search(&c.id).is_ok())
            .collect();
        let grads = train_participants(&mut jobs, cfg.local_steps, cfg.batch_size, cfg.workers);
        let submitted = jobs
            .iter()
            .zip(grads)
            .map(|(c, g)| GradientRecord::new(c.id, g?, round, c.base_round.min(round - 1), c.data.len()))
            .collect::<Result<Vec<_>>>()?;

        let agg = aggregate(cfg.strategy, &submitted, &buffer, &utils, &hist)?;
        model.apply_step(&agg.global, cfg.server_lr)?;
        if !model.values().is_finite() {
            return Err(Error::Diverged { round });
        }

        // Hindsight pass over round r - h, before round r enters the buffer.
        let mut deviation = None;
        if round > h {
            let fresh = buffer.fresh_set(round);
            if let Some(pred) = predicted_unbiased(&fresh)? {
                if let Some(actual) = buffer.global_at(round - h) {
                    deviation = Some(l2_norm(&actual.sub(&pred)?));
                }
                if cfg.strategy == Strategy::FedHist {
                    for his in buffer.round_participants(round - h)? {
                        let u = utility(his, &pred, fresh.len(), &hist)?;
                        utils.record(his.client_id, round, u, hist.gamma)?;
                    }
                }
            }
        }

        let staleness = submitted.iter().map(|r| r.staleness).collect();
        let global_grad_norm = l2_norm(&agg.global);
        buffer.push_round(round, agg.global, submitted)?;

        let snapshot = Arc::new(model.clone());
        for c in jobs {
            c.base_round = round;
            c.base_model = Arc::clone(&snapshot);
            queue.push(Reverse(FinishKey(now + c.duration, c.id)));
        }

        let eval = evaluate(&model, &setup.test)?;
        records.push(RoundRecord {
            round,
            time: now,
            participants: finishing,
            staleness,
            weights: agg.weights,
            global_grad_norm,
            pred_act_deviation: deviation,
            accuracy: eval.accuracy,
            loss: eval.loss,
            class_accuracy: eval.per_class,
        });
    }

    let final_eval = evaluate(&model, &setup.test)?;
    Ok(Outcome {
        records,
        final_model: model,
        final_eval,
        utilities: utils.averages().to_vec(),
        durations: setup.durations.clone(),
        client_samples: setup.clients.iter().map(Dataset::len).collect(),
    })
}

/// Staleness summary for one client.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClientStaleness {
    pub mean: f64,
    pub max: u64,
    pub submissions: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StalenessStats {
    pub mean: f64,
    pub max: u64,
    /// `None` for clients that never submitted.
    pub per_client: Vec<Option<ClientStaleness>>,
}

pub fn staleness_stats(records: &[RoundRecord], clients: usize) -> Result<StalenessStats> {
    if records.is_empty() {
        return Err(Error::EmptyInput("round records"));
    }
    let mut sums = vec![(0u64, 0u64, 0usize); clients];
    let (mut total, mut count, mut max) = (0u64, 0usize, 0u64);
    for rec in records {
        for (&c, &tau) in rec.participants.iter().zip(&rec.staleness) {
            let s = sums
                .get_mut(c)
                .ok_or_else(|| Error::InvalidArgument(format!("client {c} outside 0..{clients}")))?;
            s.0 += tau;
            s.1 = s.1.max(tau);
            s.2 += 1;
            total += tau;
            count += 1;
            max = max.max(tau);
        }
    }
    Ok(StalenessStats {
        mean: total as f64 / count as f64,
        max,
        per_client: sums
            .into_iter()
            .map(|(sum, max, n)| (n > 0).then(|| ClientStaleness { mean: sum as f64 / n as f64, max, submissions: n }))
            .collect(),
    })
}

/// First round whose accuracy reaches `target`.
pub fn rounds_to_accuracy(records: &[RoundRecord], target: f64) -> Option<u64> {
    first_round_reaching(records.iter().map(|r| (r.round, r.accuracy)), target)
}

pub fn first_round_reaching(curve: impl IntoIterator<Item = (u64, f64)>, target: f64) -> Option<u64> {
    curve.into_iter().find(|&(_, acc)| acc >= target).map(|(r, _)| r)
}
