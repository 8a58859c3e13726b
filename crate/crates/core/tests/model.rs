use fedhist::data::Dataset;
use fedhist::model::{gradient, local_train, loss, Arch, Batch, ModelParams};
use fedhist::GradientVec;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Hand-rolled forward pass for the flat layout W1 (h x d), b1, W2 (c x h), b2
/// or, without a hidden layer, W (c x d), b.
fn reference_loss(arch: Arch, w: &[f64], xs: &[f64], ys: &[usize]) -> f64 {
    reference(arch, w, xs, ys).0
}

/// Loss plus the sign pattern of every hidden pre-activation.
fn reference(arch: Arch, w: &[f64], xs: &[f64], ys: &[usize]) -> (f64, Vec<bool>) {
    let (d, h, c) = (arch.input_dim, arch.hidden, arch.classes);
    let mut total = 0.0;
    let mut active = Vec::new();
    for (n, &y) in ys.iter().enumerate() {
        let x = &xs[n * d..(n + 1) * d];
        let (feats, off) = if h == 0 {
            (x.to_vec(), 0)
        } else {
            let hid = (0..h)
                .map(|j| {
                    let pre = w[h * d + j] + (0..d).map(|i| w[j * d + i] * x[i]).sum::<f64>();
                    active.push(pre > 0.0);
                    pre.max(0.0)
                })
                .collect();
            (hid, h * d + h)
        };
        let f = feats.len();
        let z: Vec<f64> = (0..c).map(|k| w[off + c * f + k] + (0..f).map(|i| w[off + k * f + i] * feats[i]).sum::<f64>()).collect();
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        total += m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln() - z[y];
    }
    (total / ys.len() as f64, active)
}

fn random_problem(seed: u64) -> (Arch, Vec<f64>, Vec<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = rng.gen_range(1..6);
    let c = rng.gen_range(2..5);
    let arch = if rng.gen_bool(0.3) { Arch::logistic(d, c) } else { Arch::mlp(d, rng.gen_range(1..8), c) };
    let n = rng.gen_range(1..10);
    let xs = (0..n * d).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let ys = (0..n).map(|_| rng.gen_range(0..c)).collect();
    let w = (0..arch.param_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    (arch, w, xs, ys)
}

fn params(arch: Arch, w: &[f64]) -> ModelParams {
    ModelParams::from_values(arch, GradientVec::new(w.to_vec()).unwrap()).unwrap()
}

proptest! {
    #[test]
    fn loss_matches_reference_forward_pass(seed in any::<u64>()) {
        let (arch, w, xs, ys) = random_problem(seed);
        let got = loss(&params(arch, &w), &Batch::new(&xs, &ys, arch.input_dim).unwrap()).unwrap();
        let want = reference_loss(arch, &w, &xs, &ys);
        prop_assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "{got} vs {want}");
    }

    #[test]
    fn gradient_matches_finite_differences(seed in any::<u64>()) {
        let (arch, w, xs, ys) = random_problem(seed);
        let g = gradient(&params(arch, &w), &Batch::new(&xs, &ys, arch.input_dim).unwrap()).unwrap();
        let step = 1e-5;
        let (_, signs) = reference(arch, &w, &xs, &ys);
        for i in 0..w.len() {
            let (mut up, mut down) = (w.clone(), w.clone());
            up[i] += step;
            down[i] -= step;
            let (lu, su) = reference(arch, &up, &xs, &ys);
            let (ld, sd) = reference(arch, &down, &xs, &ys);
            let fd = (lu - ld) / (2.0 * step);
            let scale = g[i].abs().max(fd.abs());
            // skip coordinates whose perturbation crosses a ReLU kink, and negligible ones
            if su == signs && sd == signs && scale > 1e-6 {
                prop_assert!((g[i] - fd).abs() / scale < 1e-4, "coord {i}: {} vs {fd}", g[i]);
            }
        }
    }
}

#[test]
fn small_step_decreases_loss() {
    for seed in 0..20 {
        let (arch, w, xs, ys) = random_problem(1000 + seed);
        let batch = Batch::new(&xs, &ys, arch.input_dim).unwrap();
        let mut p = params(arch, &w);
        let before = loss(&p, &batch).unwrap();
        let g = gradient(&p, &batch).unwrap();
        p.apply_step(&g, 1e-3).unwrap();
        let after = loss(&p, &batch).unwrap();
        assert!(after < before || g.dot(&g).unwrap() < 1e-20, "seed {seed}: {before} -> {after}");
    }
}

#[test]
fn local_train_is_pure_given_seed() {
    let (arch, w, xs, ys) = random_problem(77);
    let data = Dataset::new(xs, ys, arch.input_dim, arch.classes).unwrap();
    let start = params(arch, &w);
    let run = || local_train(&start, &data, 0.1, 4, 2, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    assert_eq!(run(), run());
}

#[test]
fn three_steps_replay_by_hand() {
    // logistic model, 2 classes, 1 feature; batch size 1 so each step samples
    let arch = Arch::logistic(1, 2);
    let data = Dataset::new(vec![1.0, -2.0], vec![0, 1], 1, 2).unwrap();
    let start = params(arch, &[0.1, -0.2, 0.05, 0.0]);
    let lr = 0.5;
    let got = local_train(&start, &data, lr, 3, 1, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut w: Vec<f64> = vec![0.1, -0.2, 0.05, 0.0]; // w0, w1, b0, b1
    for _ in 0..3 {
        let i = rand::seq::index::sample(&mut rng, 2, 1).index(0);
        let (x, y) = ([1.0f64, -2.0][i], [0usize, 1][i]);
        let z = [w[0] * x + w[2], w[1] * x + w[3]];
        let m = z[0].max(z[1]);
        let e = [(z[0] - m).exp(), (z[1] - m).exp()];
        let p = [e[0] / (e[0] + e[1]), e[1] / (e[0] + e[1])];
        for k in 0..2 {
            let delta = p[k] - if k == y { 1.0 } else { 0.0 };
            w[k] -= lr * delta * x;
            w[2 + k] -= lr * delta;
        }
    }
    let expected: Vec<f64> = [0.1, -0.2, 0.05, 0.0].iter().zip(&w).map(|(s, f)| (s - f) / lr).collect();
    for (a, b) in got.as_slice().iter().zip(&expected) {
        assert!((a - b).abs() < 1e-12, "{:?} vs {expected:?}", got.as_slice());
    }
}
