//! Small dense classifier: softmax regression or a one-hidden-layer ReLU MLP,
//! trained with mean softmax cross-entropy.
//!
//! Parameters are stored flat. Layout for the MLP is `W1 (hidden x input)`,
//! `b1`, `W2 (classes x hidden)`, `b2`, all row-major; the logistic model is
//! `W (classes x input)` followed by `b`.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gradmath::GradientVec;

/// Architecture descriptor. `hidden == 0` selects softmax regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    pub input_dim: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl Arch {
    pub fn logistic(input_dim: usize, classes: usize) -> Self {
        Self { input_dim, hidden: 0, classes }
    }

    pub fn mlp(input_dim: usize, hidden: usize, classes: usize) -> Self {
        Self { input_dim, hidden, classes }
    }

    pub fn param_count(&self) -> usize {
        if self.hidden == 0 {
            self.classes * self.input_dim + self.classes
        } else {
            self.hidden * self.input_dim + self.hidden + self.classes * self.hidden + self.classes
        }
    }

    fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "architecture needs input_dim >= 1 and classes >= 2, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    arch: Arch,
    values: GradientVec,
}

impl ModelParams {
    pub fn from_values(arch: Arch, values: GradientVec) -> Result<Self> {
        arch.validate()?;
        if values.dim() != arch.param_count() {
            return Err(Error::DimensionMismatch {
                expected: arch.param_count(),
                found: values.dim(),
            });
        }
        Ok(Self { arch, values })
    }

    pub fn zeros(arch: Arch) -> Result<Self> {
        Self::from_values(arch, GradientVec::zeros(arch.param_count()))
    }

    /// Uniform init in [-0.05, 0.05].
    pub fn init<R: Rng + ?Sized>(arch: Arch, rng: &mut R) -> Result<Self> {
        let values = (0..arch.param_count())
            .map(|_| rng.gen_range(-0.05..=0.05))
            .collect::<Vec<f64>>();
        Self::from_values(arch, values.into())
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn values(&self) -> &GradientVec {
        &self.values
    }

    /// `w <- w - rate * step`.
    pub fn apply_step(&mut self, step: &GradientVec, rate: f64) -> Result<()> {
        if step.dim() != self.values.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.values.dim(),
                found: step.dim(),
            });
        }
        for (w, g) in self.values.as_mut_slice().iter_mut().zip(step.as_slice()) {
            *w -= rate * g;
        }
        Ok(())
    }
}

/// Row-major feature matrix plus labels, borrowed.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub features: &'a [f64],
    pub labels: &'a [usize],
    pub dim: usize,
}

impl<'a> Batch<'a> {
    pub fn new(features: &'a [f64], labels: &'a [usize], dim: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyInput("batch"));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::LengthMismatch {
                what: "batch features",
                expected: labels.len() * dim,
                found: features.len(),
            });
        }
        Ok(Self { features, labels, dim })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn row(&self, i: usize) -> &'a [f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    fn check(&self, arch: &Arch) -> Result<()> {
        if self.dim != arch.input_dim {
            return Err(Error::DimensionMismatch {
                expected: arch.input_dim,
                found: self.dim,
            });
        }
        if let Some(&y) = self.labels.iter().find(|&&y| y >= arch.classes) {
            return Err(Error::InvalidArgument(format!(
                "label {y} out of range for {} classes",
                arch.classes
            )));
        }
        Ok(())
    }
}

/// Per-sample activations kept for the backward pass.
struct Forward {
    hidden: Vec<f64>,
    probs: Vec<f64>,
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

fn forward(params: &ModelParams, x: &[f64]) -> Forward {
    let a = params.arch;
    let w = params.values.as_slice();
    let (in_w, in_b, feats): (&[f64], &[f64], Vec<f64>);
    let hidden;
    if a.hidden == 0 {
        hidden = Vec::new();
        in_w = &w[..a.classes * a.input_dim];
        in_b = &w[a.classes * a.input_dim..];
        feats = x.to_vec();
    } else {
        let w1_len = a.hidden * a.input_dim;
        let (w1, rest) = w.split_at(w1_len);
        let (b1, rest) = rest.split_at(a.hidden);
        let (w2, b2) = rest.split_at(a.classes * a.hidden);
        let mut h = vec![0.0; a.hidden];
        for (j, hj) in h.iter_mut().enumerate() {
            let row = &w1[j * a.input_dim..(j + 1) * a.input_dim];
            let pre = row.iter().zip(x).fold(b1[j], |acc, (wv, xv)| acc + wv * xv);
            *hj = pre.max(0.0);
        }
        hidden = h.clone();
        in_w = w2;
        in_b = b2;
        feats = h;
    }
    let fan_in = feats.len();
    let mut z: Vec<f64> = (0..a.classes)
        .map(|c| {
            let row = &in_w[c * fan_in..(c + 1) * fan_in];
            row.iter().zip(&feats).fold(in_b[c], |acc, (wv, f)| acc + wv * f)
        })
        .collect();
    softmax_in_place(&mut z);
    Forward { hidden, probs: z }
}

/// Mean softmax cross-entropy over the batch.
pub fn loss(params: &ModelParams, batch: &Batch<'_>) -> Result<f64> {
    batch.check(&params.arch)?;
    let total = (0..batch.len()).fold(0.0, |acc, i| {
        let f = forward(params, batch.row(i));
        acc - f.probs[batch.labels[i]].max(f64::MIN_POSITIVE).ln()
    });
    Ok(total / batch.len() as f64)
}

/// Analytic gradient of [`loss`] with respect to the flat parameters.
pub fn gradient(params: &ModelParams, batch: &Batch<'_>) -> Result<GradientVec> {
    batch.check(&params.arch)?;
    let a = params.arch;
    let w = params.values.as_slice();
    let mut grad = vec![0.0; a.param_count()];
    let scale = 1.0 / batch.len() as f64;

    for i in 0..batch.len() {
        let x = batch.row(i);
        let f = forward(params, x);
        let mut dz = f.probs;
        dz[batch.labels[i]] -= 1.0;
        for v in dz.iter_mut() {
            *v *= scale;
        }

        if a.hidden == 0 {
            let (gw, gb) = grad.split_at_mut(a.classes * a.input_dim);
            for c in 0..a.classes {
                for (g, xv) in gw[c * a.input_dim..(c + 1) * a.input_dim].iter_mut().zip(x) {
                    *g += dz[c] * xv;
                }
                gb[c] += dz[c];
            }
        } else {
            let w1_len = a.hidden * a.input_dim;
            let w2 = &w[w1_len + a.hidden..w1_len + a.hidden + a.classes * a.hidden];
            let (gw1, rest) = grad.split_at_mut(w1_len);
            let (gb1, rest) = rest.split_at_mut(a.hidden);
            let (gw2, gb2) = rest.split_at_mut(a.classes * a.hidden);
            let mut dh = vec![0.0; a.hidden];
            for c in 0..a.classes {
                let row = c * a.hidden..(c + 1) * a.hidden;
                for ((g, hv), (d, wv)) in gw2[row.clone()]
                    .iter_mut()
                    .zip(&f.hidden)
                    .zip(dh.iter_mut().zip(&w2[row]))
                {
                    *g += dz[c] * hv;
                    *d += dz[c] * wv;
                }
                gb2[c] += dz[c];
            }
            for j in 0..a.hidden {
                if f.hidden[j] <= 0.0 {
                    continue;
                }
                for (g, xv) in gw1[j * a.input_dim..(j + 1) * a.input_dim].iter_mut().zip(x) {
                    *g += dh[j] * xv;
                }
                gb1[j] += dh[j];
            }
        }
    }
    Ok(grad.into())
}

/// Runs `steps` mini-batch SGD steps from `start` and returns the effective
/// gradient `(start - final) / lr`.
///
/// Each step draws `batch_size` distinct indices from `rng`; when
/// `batch_size >= data.len()` the full dataset is used in order and `rng` is
/// not consumed.
pub fn local_train<R: Rng + ?Sized>(
    start: &ModelParams,
    data: &Dataset,
    lr: f64,
    steps: usize,
    batch_size: usize,
    rng: &mut R,
) -> Result<GradientVec> {
    if !(lr > 0.0) || !lr.is_finite() {
        return Err(Error::InvalidArgument(format!("learning rate must be > 0, got {lr}")));
    }
    if steps == 0 || batch_size == 0 {
        return Err(Error::InvalidArgument(
            "local steps and batch size must be >= 1".into(),
        ));
    }
    if data.is_empty() {
        return Err(Error::EmptyInput("client dataset"));
    }
    let n = data.len();
    let dim = data.dim();
    let mut params = start.clone();
    let mut feats = Vec::with_capacity(batch_size.min(n) * dim);
    let mut labels = Vec::with_capacity(batch_size.min(n));
    for _ in 0..steps {
        let g = if batch_size >= n {
            gradient(&params, &data.as_batch())?
        } else {
            feats.clear();
            labels.clear();
            for i in index::sample(rng, n, batch_size) {
                feats.extend_from_slice(data.row(i));
                labels.push(data.labels()[i]);
            }
            gradient(&params, &Batch::new(&feats, &labels, dim)?)?
        };
        params.apply_step(&g, lr)?;
    }
    let delta = start.values().sub(params.values())?;
    Ok(delta.scaled(1.0 / lr))
}

/// Test-set metrics for one model.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
    /// Accuracy per class; `None` for classes absent from the evaluation set.
    pub per_class: Vec<Option<f64>>,
}

pub fn predict(params: &ModelParams, x: &[f64]) -> usize {
    let probs = forward(params, x).probs;
    // first maximum wins
    probs
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best })
        .0
}

pub fn evaluate(params: &ModelParams, data: &Dataset) -> Result<Evaluation> {
    let batch = data.as_batch();
    batch.check(&params.arch)?;
    let classes = params.arch.classes;
    let mut hits = vec![0usize; classes];
    let mut seen = vec![0usize; classes];
    let mut total_loss = 0.0;
    for i in 0..batch.len() {
        let x = batch.row(i);
        let y = batch.labels[i];
        let f = forward(params, x);
        total_loss -= f.probs[y].max(f64::MIN_POSITIVE).ln();
        seen[y] += 1;
        if predict(params, x) == y {
            hits[y] += 1;
        }
    }
    let n = batch.len() as f64;
    Ok(Evaluation {
        accuracy: hits.iter().sum::<usize>() as f64 / n,
        loss: total_loss / n,
        per_class: hits
            .iter()
            .zip(&seen)
            .map(|(&h, &s)| (s > 0).then(|| h as f64 / s as f64))
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dataset(features: Vec<f64>, labels: Vec<usize>, dim: usize, classes: usize) -> Dataset {
        Dataset::new(features, labels, dim, classes).unwrap()
    }

    #[test]
    fn zero_params_give_uniform_loss() {
        let arch = Arch::mlp(3, 4, 2);
        let p = ModelParams::zeros(arch).unwrap();
        let d = dataset(vec![1., 2., 3., -1., 0., 2.], vec![0, 1], 3, 2);
        assert!((loss(&p, &d.as_batch()).unwrap() - 2f64.ln()).abs() < 1e-12);

        let arch = Arch::logistic(2, 7);
        let p = ModelParams::zeros(arch).unwrap();
        let d = dataset(vec![0.3, 0.1], vec![5], 2, 7);
        assert!((loss(&p, &d.as_batch()).unwrap() - 7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn duplicated_rows_match_single_row() {
        let arch = Arch::mlp(3, 5, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = ModelParams::init(arch, &mut rng).unwrap();
        let row = [0.4, -1.2, 0.7];
        let one = dataset(row.to_vec(), vec![2], 3, 3);
        let many = dataset(row.repeat(4), vec![2; 4], 3, 3);
        let g1 = gradient(&p, &one.as_batch()).unwrap();
        let g4 = gradient(&p, &many.as_batch()).unwrap();
        for (a, b) in g1.as_slice().iter().zip(g4.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn logistic_zero_params_closed_form() {
        // softmax(0) = 1/C; dW[c] = (1/C - [c == y]) x; db[c] = 1/C - [c == y]
        let arch = Arch::logistic(2, 3);
        let p = ModelParams::zeros(arch).unwrap();
        let x = [2.0, -1.0];
        let d = dataset(x.to_vec(), vec![1], 2, 3);
        let g = gradient(&p, &d.as_batch()).unwrap();
        let third = 1.0 / 3.0;
        let expected = [
            third * 2.0, third * -1.0,
            (third - 1.0) * 2.0, (third - 1.0) * -1.0,
            third * 2.0, third * -1.0,
            third, third - 1.0, third,
        ];
        for (a, b) in g.as_slice().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn dimension_and_label_errors() {
        let p = ModelParams::zeros(Arch::logistic(2, 2)).unwrap();
        let wrong_dim = dataset(vec![1., 2., 3.], vec![0], 3, 2);
        assert!(matches!(loss(&p, &wrong_dim.as_batch()), Err(Error::DimensionMismatch { .. })));
        let feats = [1.0, 2.0];
        let bad_label = Batch::new(&feats, &[4], 2).unwrap();
        assert!(gradient(&p, &bad_label).is_err());
        assert!(Batch::new(&[], &[], 2).is_err());
    }

    #[test]
    fn one_full_batch_step_returns_gradient() {
        let arch = Arch::mlp(2, 3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = ModelParams::init(arch, &mut rng).unwrap();
        let d = dataset(vec![0.5, 1.0, -0.3, 0.8, 1.1, -0.2], vec![0, 1, 1], 2, 2);
        let g = gradient(&p, &d.as_batch()).unwrap();
        let eff = local_train(&p, &d, 0.1, 1, 3, &mut rng).unwrap();
        for (a, b) in g.as_slice().iter().zip(eff.as_slice()) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn local_train_rejects_bad_arguments() {
        let p = ModelParams::zeros(Arch::logistic(1, 2)).unwrap();
        let d = dataset(vec![1.0], vec![0], 1, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(local_train(&p, &d, 0.0, 1, 1, &mut rng).is_err());
        assert!(local_train(&p, &d, 0.1, 0, 1, &mut rng).is_err());
        assert!(local_train(&p, &d, 0.1, 1, 0, &mut rng).is_err());
        let empty = Dataset::empty(1, 2);
        assert!(matches!(
            local_train(&p, &empty, 0.1, 1, 1, &mut rng),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn predict_and_evaluate() {
        // logistic with W = I, b = 0: predicts argmax of x
        let arch = Arch::logistic(2, 2);
        let p = ModelParams::from_values(arch, vec![1., 0., 0., 1., 0., 0.].into()).unwrap();
        let d = dataset(vec![2., 0., 0., 2., 3., 1.], vec![0, 1, 1], 2, 2);
        let e = evaluate(&p, &d).unwrap();
        assert!((e.accuracy - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(e.per_class, vec![Some(1.0), Some(0.5)]);
    }
}
