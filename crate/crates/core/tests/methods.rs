//! Training-level properties of the methods: loss relations, stop-gradient,
//! EMA-only target updates, determinism, loss decrease and non-collapse.

mod common;

use common::{random_instance, randomize, small_cfg};
use nclp::graph::{FeatureMatrix, Graph};
use nclp::methods::{
    bgrl_loss, method_loss, sample_inputs, step, train, EpochRecord, Method, Model, StepInputs, TrainConfig, TrainData,
};
use nclp::optim::Adam;
use nclp::pipeline::{duplicate_rows, median};
use nclp::synth::{generate, SynthConfig};
use nclp::tape::Tape;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn loss_and_grads(model: &Model<f64>, cfg: &TrainConfig, inputs: &StepInputs<f64>) -> (f64, Vec<(String, Vec<f64>)>) {
    let mut tape = Tape::new();
    let l = method_loss(&mut tape, model, inputs, cfg).unwrap();
    let value = tape.value(l).item();
    let grads = tape.backward(l).unwrap().into_named();
    (value, grads.into_iter().map(|(k, t)| (k, t.data().to_vec())).collect())
}

#[test]
fn tbgrl_with_zero_lambda_is_half_of_bgrl() {
    for seed in 0..10 {
        let (g, x) = random_instance(seed);
        let data = TrainData::<f64>::new(g, &x).unwrap();
        let tcfg = TrainConfig { lambda: 0.0, ..small_cfg(Method::Tbgrl, seed) };
        let bcfg = small_cfg(Method::Bgrl, seed);
        let mut model = Model::<f64>::init(&tcfg, x.cols()).unwrap();
        randomize(&mut model.online, seed);
        let mut inputs = sample_inputs(&data, &tcfg, 1).unwrap();
        let (lt, gt) = loss_and_grads(&model, &tcfg, &inputs);
        inputs.views.truncate(2);
        let (lb, gb) = loss_and_grads(&model, &bcfg, &inputs);
        assert!((lt - 0.5 * lb).abs() < 1e-12, "seed {seed}: {lt} vs {lb}");
        assert_eq!(gt.len(), gb.len());
        for ((nt, vt), (nb, vb)) in gt.iter().zip(&gb) {
            assert_eq!(nt, nb);
            for (a, b) in vt.iter().zip(vb) {
                assert!((a - 0.5 * b).abs() < 1e-12 * (1.0 + b.abs()), "{nt}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn target_changes_only_through_ema() {
    for method in [Method::Bgrl, Method::Tbgrl] {
        let (g, x) = random_instance(7);
        let data = TrainData::<f64>::new(g, &x).unwrap();
        let cfg = small_cfg(method, 7);
        let mut model = Model::<f64>::init(&cfg, x.cols()).unwrap();
        randomize(&mut model.online, 7);
        let mut opt = Adam::new(cfg.lr, cfg.weight_decay).unwrap();
        for epoch in 1..=5 {
            let before = model.target.clone().unwrap();
            // Every gradient belongs to an online parameter.
            let inputs = sample_inputs(&data, &cfg, epoch).unwrap();
            let mut tape = Tape::new();
            let l = method_loss(&mut tape, &model, &inputs, &cfg).unwrap();
            let grads = tape.backward(l).unwrap().into_named();
            assert!(grads.keys().all(|k| model.online.contains(k)));
            assert!(grads.keys().any(|k| k.starts_with("pred.")));

            step(&mut model, &mut opt, &data, &cfg, epoch).unwrap();
            let target = model.target.as_ref().unwrap();
            for (name, t) in target.iter() {
                let old = before.get(name).unwrap();
                let online = model.online.get(name).unwrap();
                for ((&new, &o), &on) in t.data().iter().zip(old.data()).zip(online.data()) {
                    let expect = cfg.decay * o + (1.0 - cfg.decay) * on;
                    assert!((new - expect).abs() < 1e-15, "{name}: {new} vs {expect}");
                }
            }
        }
    }
}

#[test]
fn target_gradient_would_differ() {
    // With the target fed through the tape as trainable, the encoder
    // gradient changes; the shipped loss must match the stop-gradient one.
    let (g, x) = random_instance(3);
    let data = TrainData::<f64>::new(g, &x).unwrap();
    let cfg = small_cfg(Method::Bgrl, 3);
    let mut model = Model::<f64>::init(&cfg, x.cols()).unwrap();
    randomize(&mut model.online, 3);
    model.target = Some(model.online.subset("enc."));
    let inputs = sample_inputs(&data, &cfg, 1).unwrap();
    let (_, shipped) = loss_and_grads(&model, &cfg, &inputs);

    let mut tape = Tape::new();
    let p = &model.online;
    let (v1, v2) = (&inputs.views[0], &inputs.views[1]);
    let h1 = model.encoder.forward(&mut tape, p, &v1.adj, &v1.x, true).unwrap();
    let z = model.predictor.as_ref().unwrap().forward(&mut tape, p, h1, true).unwrap();
    let h2 = model.encoder.forward(&mut tape, p, &v2.adj, &v2.x, false).unwrap();
    let l = bgrl_loss(&mut tape, z, h2).unwrap();
    let detached = tape.backward(l).unwrap().into_named();

    let mut tape = Tape::new();
    let h1 = model.encoder.forward(&mut tape, p, &v1.adj, &v1.x, true).unwrap();
    let z = model.predictor.as_ref().unwrap().forward(&mut tape, p, h1, true).unwrap();
    let h2 = model.encoder.forward(&mut tape, p, &v2.adj, &v2.x, true).unwrap();
    let l = bgrl_loss(&mut tape, z, h2).unwrap();
    let through = tape.backward(l).unwrap().into_named();

    let w1 = |gs: &std::collections::BTreeMap<String, nclp::tensor::Tensor<f64>>| gs["enc.w1"].data().to_vec();
    let shipped_w1 = &shipped.iter().find(|(k, _)| k == "enc.w1").unwrap().1;
    assert_eq!(shipped_w1, &w1(&detached));
    let diff: f64 = w1(&through).iter().zip(&w1(&detached)).map(|(a, b)| (a - b).abs()).sum();
    assert!(diff > 1e-9, "test instance does not separate the two gradients");
}

#[test]
fn margin_loss_is_a_function_of_the_triples() {
    for seed in 0..10 {
        let (g, x) = random_instance(seed);
        let data = TrainData::<f64>::new(g, &x).unwrap();
        let cfg = TrainConfig { negatives: 3, ..small_cfg(Method::Mlgcn, seed) };
        let mut model = Model::<f64>::init(&cfg, x.cols()).unwrap();
        randomize(&mut model.online, seed);
        let inputs = sample_inputs(&data, &cfg, 2).unwrap();
        assert_eq!(inputs.triples, sample_inputs(&data, &cfg, 2).unwrap().triples);
        let loss = |inp: &StepInputs<f64>| {
            let mut tape = Tape::new();
            let l = method_loss(&mut tape, &model, inp, &cfg).unwrap();
            tape.value(l).item()
        };
        let base = loss(&inputs);

        // Direct evaluation from the embeddings.
        let h = model.embed(&data.full).unwrap();
        let oracle = inputs
            .triples
            .iter()
            .map(|&(u, v, w)| (dot(h.row(u), h.row(w)) - dot(h.row(u), h.row(v)) + cfg.margin).max(0.0))
            .sum::<f64>()
            / inputs.triples.len() as f64;
        assert!((base - oracle).abs() < 1e-12, "{base} vs {oracle}");

        let mut shuffled = inputs.clone();
        shuffled.triples.reverse();
        shuffled.triples.rotate_left(seed as usize % inputs.triples.len().max(1));
        assert!((loss(&shuffled) - base).abs() < 1e-12);
    }
}

/// A few hundred nodes with community structure, small enough to train
/// every method in seconds.
fn small_synth(seed: u64) -> (Graph, FeatureMatrix) {
    let cfg = SynthConfig {
        num_nodes: 300,
        num_edges: 900,
        num_features: 120,
        communities: 4,
        homophily: 0.8,
        words_per_node: 10,
        topic_purity: 0.7,
        activity_shape: 2.5,
        seed,
    };
    let (g, x, _) = generate(&cfg).unwrap();
    (g, x)
}

/// Median over seeds of (mean of the last five losses) - (mean of the first five).
fn loss_drop(g: &Graph, x: &FeatureMatrix, method: Method, epochs: usize, seeds: u64) -> f64 {
    let data = TrainData::<f32>::new(g.clone(), x).unwrap();
    let drops: Vec<f64> = (0..seeds)
        .map(|seed| {
            let cfg = TrainConfig { epochs, seed, ..TrainConfig::for_method(method) };
            let curve = train(&data, &cfg).unwrap().curve;
            let mean = |r: &[EpochRecord]| r.iter().map(|e| e.loss).sum::<f64>() / r.len() as f64;
            mean(&curve[epochs - 5..]) - mean(&curve[..5])
        })
        .collect();
    median(&drops)
}

#[test]
fn every_loss_decreases_over_50_epochs() {
    let (g, x) = small_synth(1);
    for method in Method::ALL {
        let d = loss_drop(&g, &x, method, 50, 3);
        assert!(d < 0.0, "{method}: median change {d}");
    }
}

/// The same property at Citeseer's size, on the synthetic stand-in.
/// About 15 minutes on one core.
#[test]
#[ignore]
fn every_loss_decreases_over_50_epochs_citeseer_size() {
    let (g, x, _) = generate(&SynthConfig::citeseer_like(0)).unwrap();
    for method in Method::ALL {
        let d = loss_drop(&g, &x, method, 50, 3);
        println!("{method}: median change {d:.6}");
        assert!(d < 0.0, "{method}: median change {d}");
    }
}

#[test]
fn same_seed_gives_identical_checkpoints() {
    let (g, x) = small_synth(2);
    let data = TrainData::<f32>::new(g, &x).unwrap();
    for method in Method::ALL {
        let cfg = TrainConfig { epochs: 5, seed: 11, ..TrainConfig::for_method(method) };
        let bytes = || {
            let mut buf = Vec::new();
            train(&data, &cfg).unwrap().model.online.write_checkpoint(&mut buf).unwrap();
            buf
        };
        let a = bytes();
        assert_eq!(a, bytes(), "{method}");
        assert_eq!(&a[..4], b"NCLP");
        let other = TrainConfig { seed: 12, ..cfg.clone() };
        let mut c = Vec::new();
        train(&data, &other).unwrap().model.online.write_checkpoint(&mut c).unwrap();
        assert_ne!(a, c, "{method}: seed has no effect");
    }
}

#[test]
fn short_ssl_runs_do_not_collapse() {
    let (g, x) = small_synth(3);
    let data = TrainData::<f32>::new(g, &x).unwrap();
    for method in Method::ALL.into_iter().filter(|m| !m.is_supervised()) {
        let cfg = TrainConfig { epochs: 100, ..TrainConfig::for_method(method) };
        let out = train(&data, &cfg).unwrap();
        let h = out.model.embed(&data.full).unwrap();
        assert!(h.is_finite());
        let min_std = h.column_std().into_iter().fold(f64::INFINITY, f64::min);
        assert!(min_std > 1e-3, "{method}: min column std {min_std}");
        assert_eq!(duplicate_rows(&h), 0, "{method}");
    }
}

#[test]
fn invalid_configs_are_rejected_before_training() {
    let (g, x) = random_instance(0);
    let data = TrainData::<f32>::new(g, &x).unwrap();
    for bad in [
        TrainConfig { lambda: 1.5, ..small_cfg(Method::Tbgrl, 0) },
        TrainConfig { tau: 0.0, ..small_cfg(Method::Grace, 0) },
        TrainConfig { margin: -1.0, ..small_cfg(Method::Mlgcn, 0) },
        TrainConfig { lr: 0.0, ..small_cfg(Method::Bgrl, 0) },
    ] {
        assert!(train(&data, &bad).is_err(), "{bad:?}");
    }
}
