//! Oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use nclp::gradcheck::{check_gradients, worst, FD_STEP};
use nclp::graph::{FeatureMatrix, Graph};
use nclp::methods::{method_loss, sample_inputs, Method, Model, TrainConfig, TrainData};
use nclp::nn::GcnEncoder;
use nclp::params::ParamSet;
use nclp::rng::stream;
use nclp::sparse::CsrMatrix;
use nclp::tape::{Tape, Var};
use nclp::tensor::Tensor;
use nclp::Result;
use rand::Rng;

/// Column standardization on a handful of nodes is sharply curved; at 1e-4
/// the truncation error of the central difference alone reaches 1e-5.
pub const LOSS_FD_STEP: f64 = 1e-5;

/// Connected graph with 4 to 10 nodes and 1 to 4 features in (-1, 1).
pub fn random_instance(seed: u64) -> (Graph, FeatureMatrix) {
    let mut rng = stream(seed, 99);
    let n = rng.gen_range(4..=10);
    let f = rng.gen_range(1..=4);
    let mut edges: Vec<(usize, usize)> = (1..n).map(|v| (rng.gen_range(0..v), v)).collect();
    for _ in 0..n {
        let (u, v) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if u != v {
            edges.push((u, v));
        }
    }
    let g = Graph::from_edges(n, edges).unwrap();
    let x = FeatureMatrix::new(n, f, (0..n * f).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).unwrap();
    (g, x)
}

/// Fresh random values for every tensor, including biases and slopes, so
/// that pre-activations are generic rather than pinned at zero.
pub fn randomize(p: &mut ParamSet<f64>, seed: u64) {
    let mut rng = stream(seed, 98);
    for (name, t) in p.iter_mut() {
        let slope = name.ends_with(".a1") || name.ends_with(".a2");
        for v in t.data_mut() {
            *v = if slope { rng.gen_range(0.1..0.5) } else { rng.gen_range(-1.0..1.0) };
        }
    }
}

pub fn small_cfg(method: Method, seed: u64) -> TrainConfig {
    TrainConfig {
        embed_dim: 3,
        pred_hidden: 4,
        proj_hidden: 3,
        seed,
        ..TrainConfig::for_method(method)
    }
}

/// Worst relative gradient error of `method`'s loss on instance `seed`.
pub fn method_gradient_error(method: Method, seed: u64) -> f64 {
    let (g, x) = random_instance(seed);
    let cfg = small_cfg(method, seed);
    let data = TrainData::<f64>::new(g, &x).unwrap();
    let mut model = Model::<f64>::init(&cfg, x.cols()).unwrap();
    randomize(&mut model.online, seed);
    if let Some(t) = &mut model.target {
        randomize(t, seed + 1000);
    }
    let inputs = sample_inputs(&data, &cfg, 1).unwrap();
    let checks = check_gradients(&model.online, LOSS_FD_STEP, |p, tape| {
        let mut m = model.clone();
        m.online = p.clone();
        method_loss(tape, &m, &inputs, &cfg)
    })
    .unwrap();
    worst(&checks)
}

/// Worst relative gradient error of a two-layer GCN under a fixed linear
/// read-out, on instance `seed`.
pub fn gcn_gradient_error(seed: u64) -> f64 {
    let (g, x) = random_instance(seed + 100);
    let data = TrainData::<f64>::new(g, &x).unwrap();
    let enc = GcnEncoder::new("enc", x.cols(), 3);
    let mut p = ParamSet::<f64>::new();
    enc.init(&mut p, &mut stream(seed, 1)).unwrap();
    randomize(&mut p, seed);
    let w = Tensor::from_vec(x.rows(), 3, (0..x.rows() * 3).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
    let checks = check_gradients(&p, FD_STEP, |p, tape| {
        let h = enc.forward(tape, p, &data.full.adj, &data.full.x, true)?;
        let r = tape.constant(w.clone());
        let y = tape.mul(h, r)?;
        tape.sum(y)
    })
    .unwrap();
    worst(&checks)
}

fn rand_tensor(rng: &mut impl Rng, r: usize, c: usize, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Away from the kink of relu/prelu: magnitudes in [0.1, 1).
fn rand_off_kink(rng: &mut impl Rng, r: usize, c: usize) -> Tensor<f64> {
    let data = (0..r * c)
        .map(|_| {
            let m = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_vec(r, c, data).unwrap()
}

/// Names of the kernels checked by [`kernel_gradient_error`].
pub const KERNELS: [&str; 28] = [
    "matmul",
    "matmul_t(a^T b)",
    "matmul_t(a b^T)",
    "matmul_t(a^T b^T)",
    "transpose",
    "spmm",
    "add_bias",
    "prelu",
    "relu",
    "sigmoid",
    "exp",
    "log",
    "add",
    "sub",
    "mul",
    "scale",
    "add_scalar",
    "square",
    "sum",
    "mean",
    "row_sum",
    "diag",
    "row_dot",
    "row_cosine",
    "gather",
    "col_standardize",
    "row_normalize",
    "bce_with_logits",
];

/// Worst relative gradient error of one kernel on random inputs of
/// instance `seed`. Outputs are reduced to a scalar by a fixed random
/// weighting so every output entry matters.
pub fn kernel_gradient_error(kernel: &str, seed: u64) -> f64 {
    let mut rng = stream(seed, 97);
    let r = rng.gen_range(3..=6);
    let c = rng.gen_range(1..=4);
    let k = rng.gen_range(1..=4);
    // With one column these are sign functions whose gradient is exactly zero.
    let c = if matches!(kernel, "row_cosine" | "row_normalize") { c.max(2) } else { c };
    let mut p = ParamSet::<f64>::new();
    let mut put = |name: &str, t: Tensor<f64>| p.insert(name, t).unwrap();
    match kernel {
        "matmul" => {
            put("a", rand_tensor(&mut rng, r, k, -1.0, 1.0));
            put("b", rand_tensor(&mut rng, k, c, -1.0, 1.0));
        }
        "matmul_t(a^T b)" => {
            put("a", rand_tensor(&mut rng, k, r, -1.0, 1.0));
            put("b", rand_tensor(&mut rng, k, c, -1.0, 1.0));
        }
        "matmul_t(a b^T)" => {
            put("a", rand_tensor(&mut rng, r, k, -1.0, 1.0));
            put("b", rand_tensor(&mut rng, c, k, -1.0, 1.0));
        }
        "matmul_t(a^T b^T)" => {
            put("a", rand_tensor(&mut rng, k, r, -1.0, 1.0));
            put("b", rand_tensor(&mut rng, c, k, -1.0, 1.0));
        }
        "add_bias" => {
            put("a", rand_tensor(&mut rng, r, c, -1.0, 1.0));
            put("b", rand_tensor(&mut rng, 1, c, -1.0, 1.0));
        }
        "prelu" => {
            put("a", rand_off_kink(&mut rng, r, c));
            put("b", rand_tensor(&mut rng, 1, c, 0.1, 0.5));
        }
        "relu" => put("a", rand_off_kink(&mut rng, r, c)),
        "log" => put("a", rand_tensor(&mut rng, r, c, 0.2, 2.0)),
        "add" | "sub" | "mul" | "row_dot" | "row_cosine" => {
            put("a", rand_tensor(&mut rng, r, c, -1.0, 1.0));
            put("b", rand_tensor(&mut rng, r, c, -1.0, 1.0));
        }
        "diag" => put("a", rand_tensor(&mut rng, r, r, -1.0, 1.0)),
        _ => put("a", rand_tensor(&mut rng, r, c, -1.0, 1.0)),
    }
    let sparse = {
        let dense = rand_tensor(&mut rng, r, r, -1.0, 1.0).map(|v| if v.abs() < 0.4 { 0.0 } else { v });
        Arc::new(CsrMatrix::from_dense(&dense))
    };
    let gather_idx: Vec<usize> = (0..r + 2).map(|_| rng.gen_range(0..r)).collect();
    let labels: Vec<f64> = (0..r).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
    let weight_seed: u64 = rng.gen();
    let apply = |tape: &mut Tape<f64>, p: &ParamSet<f64>| -> Result<Var> {
        let a = p.load(tape, "a", true)?;
        let b = if p.contains("b") { Some(p.load(tape, "b", true)?) } else { None };
        let b = || b.expect("second operand");
        match kernel {
            "matmul" => tape.matmul(a, b()),
            "matmul_t(a^T b)" => tape.matmul_t(a, true, b(), false),
            "matmul_t(a b^T)" => tape.matmul_t(a, false, b(), true),
            "matmul_t(a^T b^T)" => tape.matmul_t(a, true, b(), true),
            "transpose" => tape.transpose(a),
            "spmm" => tape.spmm(&sparse, a),
            "add_bias" => tape.add_bias(a, b()),
            "prelu" => tape.prelu(a, b()),
            "relu" => tape.relu(a),
            "sigmoid" => tape.sigmoid(a),
            "exp" => tape.exp(a),
            "log" => tape.log(a),
            "add" => tape.add(a, b()),
            "sub" => tape.sub(a, b()),
            "mul" => tape.mul(a, b()),
            "scale" => tape.scale(a, -1.7),
            "add_scalar" => tape.add_scalar(a, 0.3),
            "square" => tape.square(a),
            "sum" => tape.sum(a),
            "mean" => tape.mean(a),
            "row_sum" => tape.row_sum(a),
            "diag" => tape.diag(a),
            "row_dot" => tape.row_dot(a, b()),
            "row_cosine" => tape.row_cosine(a, b()),
            "gather" => tape.gather(a, &gather_idx),
            "col_standardize" => tape.col_standardize(a),
            "row_normalize" => tape.row_normalize(a),
            "bce_with_logits" => {
                let col = tape.row_sum(a)?;
                tape.bce_with_logits(col, &labels)
            }
            other => panic!("unknown kernel {other}"),
        }
    };
    let checks = check_gradients(&p, FD_STEP, |p, tape| {
        let y = apply(tape, p)?;
        let (rows, cols) = tape.value(y).shape();
        let mut wr = stream(weight_seed, 0);
        let w = rand_tensor(&mut wr, rows, cols, -1.0, 1.0);
        let w = tape.constant(w);
        let z = tape.mul(y, w)?;
        tape.sum(z)
    })
    .unwrap();
    worst(&checks)
}

/// Hits@K by definition: sort negatives descending, take the K-th, count
/// positives strictly above it.
pub fn brute_hits(pos: &[f64], neg: &[f64], k: usize) -> f64 {
    if neg.len() < k {
        return 1.0;
    }
    let mut sorted = neg.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let theta = sorted[k - 1];
    pos.iter().filter(|&&p| p > theta).count() as f64 / pos.len() as f64
}

/// AUC by enumerating every (positive, negative) pair.
pub fn brute_auc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut s = 0.0;
    for &p in pos {
        for &n in neg {
            s += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    s / (pos.len() * neg.len()) as f64
}

/// Scores drawn from a small grid so that ties are common.
pub fn random_scores(rng: &mut impl Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(0..20) as f64 / 19.0).collect()
}

/// Central `1 - alpha` interval of Binomial(n, p) from the exact CDF.
pub fn binomial_interval(n: u64, p: f64, alpha: f64) -> (u64, u64) {
    let ln_choose = |k: u64| -> f64 { ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0) };
    let pmf = |k: u64| (ln_choose(k) + k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln()).exp();
    let mut cdf = 0.0;
    let mut lo = None;
    for k in 0..=n {
        cdf += pmf(k);
        if lo.is_none() && cdf > alpha / 2.0 {
            lo = Some(k);
        }
        if cdf >= 1.0 - alpha / 2.0 {
            return (lo.unwrap_or(k), k);
        }
    }
    (lo.unwrap_or(0), n)
}

/// Lanczos approximation of ln Γ(x) for x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    const G: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        return std::f64::consts::PI.ln() - (std::f64::consts::PI * x).sin().ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = G[0];
    let t = x + 7.5;
    for (i, g) in G.iter().enumerate().skip(1) {
        a += g / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Upper tail P(X > x) of a chi-square variable with `k` degrees of freedom.
pub fn chi_square_sf(x: f64, k: f64) -> f64 {
    1.0 - lower_gamma_regularized(k / 2.0, x / 2.0)
}

/// Regularized lower incomplete gamma P(s, x) by series or continued fraction.
fn lower_gamma_regularized(s: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let ln_front = s * x.ln() - x - ln_gamma(s);
    if x < s + 1.0 {
        let (mut term, mut sum, mut a) = (1.0 / s, 1.0 / s, s);
        for _ in 0..10_000 {
            a += 1.0;
            term *= x / a;
            sum += term;
            if term.abs() < sum.abs() * 1e-15 {
                break;
            }
        }
        (sum.ln() + ln_front).exp()
    } else {
        // Lentz's method for the upper tail.
        let tiny = 1e-300;
        let mut b = x + 1.0 - s;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let an = -(i as f64) * (i as f64 - s);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-15 {
                break;
            }
        }
        1.0 - (ln_front.exp() * h)
    }
}

/// Graph with exactly `m` edges on `n` nodes, uniformly placed.
pub fn random_graph(n: usize, m: usize, seed: u64) -> Graph {
    let mut rng = stream(seed, 96);
    nclp::transforms::random_edges(n, m, &mut rng).unwrap()
}
