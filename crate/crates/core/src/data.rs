//! Datasets: synthetic Gaussian blobs, CSV ingestion and client partitioning.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Batch;
use crate::rng::{stream, Stream};

/// Row-major feature matrix with dense class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
    classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, dim: usize, classes: usize) -> Result<Self> {
        if dim == 0 || classes == 0 {
            return Err(Error::InvalidArgument("dataset needs dim >= 1 and classes >= 1".into()));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::LengthMismatch {
                what: "dataset features",
                expected: labels.len() * dim,
                found: features.len(),
            });
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::InvalidArgument(format!("label {y} >= class count {classes}")));
        }
        Ok(Self { features, labels, dim, classes })
    }

    pub fn empty(dim: usize, classes: usize) -> Self {
        Self { features: Vec::new(), labels: Vec::new(), dim, classes }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_batch(&self) -> Batch<'_> {
        Batch { features: &self.features, labels: &self.labels, dim: self.dim }
    }

    /// Samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Self { features, labels, dim: self.dim, classes: self.classes }
    }

    /// Concatenation of `self` and `other`.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.dim != other.dim || self.classes != other.classes {
            return Err(Error::DimensionMismatch { expected: self.dim, found: other.dim });
        }
        let mut out = self.clone();
        out.features.extend_from_slice(&other.features);
        out.labels.extend_from_slice(&other.labels);
        Ok(out)
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.classes];
        for &y in &self.labels {
            h[y] += 1;
        }
        h
    }

    fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.classes];
        for (i, &y) in self.labels.iter().enumerate() {
            by_class[y].push(i);
        }
        by_class
    }

    /// Writes `f1,...,fd,label` rows with a header line.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let header: Vec<String> = (1..=self.dim).map(|j| format!("f{j}")).collect();
        writeln!(out, "{},label", header.join(","))?;
        for i in 0..self.len() {
            for v in self.row(i) {
                write!(out, "{v},")?;
            }
            writeln!(out, "{}", self.labels[i])?;
        }
        Ok(())
    }
}

/// A train split and a held-out test split.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainTest {
    pub train: Dataset,
    pub test: Dataset,
}

impl TrainTest {
    /// Stratified split: the first `round(train_fraction * n_c)` shuffled
    /// samples of each class go to train. Both halves are shuffled afterwards.
    pub fn split<R: Rng + ?Sized>(data: &Dataset, train_fraction: f64, rng: &mut R) -> Result<Self> {
        if !(0.0..=1.0).contains(&train_fraction) {
            return Err(Error::InvalidArgument(format!(
                "train fraction must be in [0, 1], got {train_fraction}"
            )));
        }
        let mut train_idx = Vec::new();
        let mut test_idx = Vec::new();
        for mut members in data.indices_by_class() {
            members.shuffle(rng);
            let cut = (train_fraction * members.len() as f64).round() as usize;
            train_idx.extend_from_slice(&members[..cut]);
            test_idx.extend_from_slice(&members[cut..]);
        }
        train_idx.shuffle(rng);
        test_idx.shuffle(rng);
        Ok(Self { train: data.subset(&train_idx), test: data.subset(&test_idx) })
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Train followed by test.
    pub fn merged(&self) -> Dataset {
        self.train.concat(&self.test).expect("splits share shape")
    }
}

/// Gaussian blobs: class `c` is centred on a random unit vector with isotropic
/// noise of standard deviation `spread`. Split 80/20 into train and test.
pub fn generate_synthetic(
    classes: usize,
    dim: usize,
    per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<TrainTest> {
    if classes == 0 || dim == 0 || per_class == 0 {
        return Err(Error::InvalidArgument(
            "classes, dim and per_class must all be >= 1".into(),
        ));
    }
    if !(spread >= 0.0) || !spread.is_finite() {
        return Err(Error::InvalidArgument(format!("spread must be >= 0, got {spread}")));
    }
    let mut rng = stream(seed, Stream::SyntheticData);
    let means: Vec<Vec<f64>> = (0..classes)
        .map(|_| loop {
            let z: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-9 {
                break z.into_iter().map(|v| v / norm).collect();
            }
        })
        .collect();
    let mut features = Vec::with_capacity(classes * per_class * dim);
    let mut labels = Vec::with_capacity(classes * per_class);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..per_class {
            for &m in mean {
                let noise: f64 = rng.sample(StandardNormal);
                features.push(m + spread * noise);
            }
            labels.push(c);
        }
    }
    let all = Dataset::new(features, labels, dim, classes)?;
    let mut split_rng = stream(seed, Stream::TrainTestSplit);
    TrainTest::split(&all, 0.8, &mut split_rng)
}

/// Reads a CSV of `f1,...,fd,label` rows. A first row with any non-numeric
/// feature field is treated as a header. Labels are re-indexed densely from 0
/// in sorted order (numeric order when every label parses as a number).
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    parse_csv(&text)
}

pub fn parse_csv(text: &str) -> Result<Dataset> {
    let mut rows: Vec<(usize, Vec<f64>, String)> = Vec::new();
    let mut dim = None;
    for (lineno, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())) {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 2 {
            return Err(Error::Parse {
                line: lineno,
                message: "expected at least one feature and a label".into(),
            });
        }
        let (feat_fields, label) = fields.split_at(fields.len() - 1);
        let parsed: std::result::Result<Vec<f64>, _> = feat_fields.iter().map(|f| f.parse::<f64>()).collect();
        let feats = match parsed {
            Ok(v) => v,
            Err(_) if rows.is_empty() && dim.is_none() => {
                // header row
                dim = Some(feat_fields.len());
                continue;
            }
            Err(e) => {
                return Err(Error::Parse { line: lineno, message: format!("bad feature value: {e}") })
            }
        };
        if let Some(i) = feats.iter().position(|v| !v.is_finite()) {
            return Err(Error::Parse {
                line: lineno,
                message: format!("non-finite feature in column {}", i + 1),
            });
        }
        match dim {
            Some(d) if d != feats.len() => {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("expected {d} features, found {}", feats.len()),
                })
            }
            _ => dim = Some(feats.len()),
        }
        if label[0].is_empty() {
            return Err(Error::Parse { line: lineno, message: "empty label".into() });
        }
        rows.push((lineno, feats, label[0].to_string()));
    }
    let dim = match (dim, rows.is_empty()) {
        (Some(d), false) => d,
        _ => return Err(Error::Parse { line: 0, message: "no data rows".into() }),
    };

    let numeric: Option<Vec<f64>> = rows.iter().map(|r| r.2.parse::<f64>().ok()).collect();
    let mut distinct: Vec<&str> = rows.iter().map(|r| r.2.as_str()).collect();
    distinct.sort_unstable();
    distinct.dedup();
    if numeric.is_some() {
        distinct.sort_by(|a, b| a.parse::<f64>().unwrap().total_cmp(&b.parse::<f64>().unwrap()));
    }
    let index: BTreeMap<&str, usize> = distinct.iter().enumerate().map(|(i, &l)| (l, i)).collect();

    let classes = index.len();
    let mut features = Vec::with_capacity(rows.len() * dim);
    let mut labels = Vec::with_capacity(rows.len());
    for (_, f, l) in &rows {
        features.extend_from_slice(f);
        labels.push(index[l.as_str()]);
    }
    Dataset::new(features, labels, dim, classes)
}

/// Label heterogeneity across clients. Serialized as a number (`beta`) or the
/// string `"iid"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BetaRepr", into = "BetaRepr")]
pub enum Heterogeneity {
    /// Class proportions per client drawn from `Dir(beta * 1_N)`.
    Dirichlet(f64),
    Iid,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum BetaRepr {
    Number(f64),
    Text(String),
}

impl TryFrom<BetaRepr> for Heterogeneity {
    type Error = String;

    fn try_from(r: BetaRepr) -> std::result::Result<Self, String> {
        match r {
            BetaRepr::Number(b) if b > 0.0 && b.is_finite() => Ok(Heterogeneity::Dirichlet(b)),
            BetaRepr::Number(b) => Err(format!("beta must be > 0, got {b}")),
            BetaRepr::Text(t) if t.eq_ignore_ascii_case("iid") || t.eq_ignore_ascii_case("inf") => {
                Ok(Heterogeneity::Iid)
            }
            BetaRepr::Text(t) => Err(format!("beta must be a positive number or \"iid\", got {t:?}")),
        }
    }
}

impl From<Heterogeneity> for BetaRepr {
    fn from(h: Heterogeneity) -> Self {
        match h {
            Heterogeneity::Dirichlet(b) => BetaRepr::Number(b),
            Heterogeneity::Iid => BetaRepr::Text("iid".into()),
        }
    }
}

impl std::fmt::Display for Heterogeneity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Heterogeneity::Dirichlet(b) => write!(f, "{b}"),
            Heterogeneity::Iid => f.write_str("iid"),
        }
    }
}

/// Routes every sample of `class` to `clients` only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Isolation {
    pub class: usize,
    pub clients: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionSpec {
    pub clients: usize,
    pub heterogeneity: Heterogeneity,
    pub seed: u64,
    pub isolate: Option<Isolation>,
}

impl PartitionSpec {
    fn validate(&self, data: &Dataset) -> Result<()> {
        if self.clients < 2 {
            return Err(Error::InvalidArgument(format!(
                "partition needs at least 2 clients, got {}",
                self.clients
            )));
        }
        if let Heterogeneity::Dirichlet(beta) = self.heterogeneity {
            if !(beta > 0.0) || !beta.is_finite() {
                return Err(Error::InvalidArgument(format!("beta must be > 0, got {beta}")));
            }
        }
        if data.is_empty() {
            return Err(Error::EmptyInput("dataset to partition"));
        }
        if self.clients > data.len() {
            return Err(Error::InvalidArgument(format!(
                "{} clients but only {} samples",
                self.clients,
                data.len()
            )));
        }
        if let Some(iso) = &self.isolate {
            if iso.class >= data.classes() {
                return Err(Error::InvalidArgument(format!("isolated class {} out of range", iso.class)));
            }
            if iso.clients.is_empty() || iso.clients.iter().any(|&c| c >= self.clients) {
                return Err(Error::InvalidArgument(
                    "isolated clients must be a non-empty set of valid client ids".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Splits `total` items by `proportions` with largest-remainder rounding.
/// Ties in the fractional part go to the lower index.
pub fn largest_remainder(total: usize, proportions: &[f64]) -> Vec<usize> {
    let sum: f64 = proportions.iter().sum();
    let quotas: Vec<f64> = proportions.iter().map(|p| total as f64 * p / sum).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..proportions.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

fn sample_dirichlet<R: Rng + ?Sized>(beta: f64, n: usize, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(beta, 1.0).expect("beta validated > 0");
    let draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    if draws.iter().sum::<f64>() > 0.0 {
        draws
    } else {
        // every draw underflowed (tiny beta): the limit is a point mass
        let mut point = vec![0.0; n];
        point[rng.gen_range(0..n)] = 1.0;
        point
    }
}

/// Sample indices assigned to each client. Every index appears exactly once.
pub fn partition_indices(data: &Dataset, spec: &PartitionSpec) -> Result<Vec<Vec<usize>>> {
    spec.validate(data)?;
    let mut rng = stream(spec.seed, Stream::Partition);
    let n = spec.clients;
    let mut shards: Vec<Vec<usize>> = vec![Vec::new(); n];
    let isolated_class = spec.isolate.as_ref().map(|iso| iso.class);
    let mut dealer = 0usize;

    for (class, mut members) in data.indices_by_class().into_iter().enumerate() {
        members.shuffle(&mut rng);
        if let Some(iso) = spec.isolate.as_ref().filter(|iso| iso.class == class) {
            for (k, i) in members.into_iter().enumerate() {
                shards[iso.clients[k % iso.clients.len()]].push(i);
            }
            continue;
        }
        match spec.heterogeneity {
            Heterogeneity::Iid => {
                for i in members {
                    shards[dealer % n].push(i);
                    dealer += 1;
                }
            }
            Heterogeneity::Dirichlet(beta) => {
                let props = sample_dirichlet(beta, n, &mut rng);
                let counts = largest_remainder(members.len(), &props);
                let mut rest = members.as_slice();
                for (shard, count) in shards.iter_mut().zip(counts) {
                    let (take, tail) = rest.split_at(count);
                    shard.extend_from_slice(take);
                    rest = tail;
                }
            }
        }
    }

    while let Some(empty) = shards.iter().position(Vec::is_empty) {
        let donor = (0..n)
            .max_by(|&a, &b| shards[a].len().cmp(&shards[b].len()).then(b.cmp(&a)))
            .expect("n >= 2");
        let pos = shards[donor]
            .iter()
            .rposition(|&i| Some(data.labels()[i]) != isolated_class)
            .unwrap_or(shards[donor].len() - 1);
        let moved = shards[donor].remove(pos);
        shards[empty].push(moved);
    }
    Ok(shards)
}

/// Per-client datasets following [`partition_indices`].
pub fn dirichlet_partition(data: &Dataset, spec: &PartitionSpec) -> Result<Vec<Dataset>> {
    Ok(partition_indices(data, spec)?
        .iter()
        .map(|idx| data.subset(idx))
        .collect())
}
