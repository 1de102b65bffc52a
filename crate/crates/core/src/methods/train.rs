use std::collections::HashSet;
use std::sync::Arc;
use std::time::Instant;

use rand::Rng;

use super::losses::{bgrl_loss, ccassg_loss, e2e_loss, gbt_loss, grace_loss, margin_loss, tbgrl_loss};
use super::{Method, TrainConfig};
use crate::error::{Error, Result};
use crate::graph::{normalize_adjacency, FeatureMatrix, Graph};
use crate::linkpred::{hits_at_k, uniform_negatives, DecoderMlp, HITS_K};
use crate::nn::{GcnEncoder, Mlp2};
use crate::optim::{ema_decay_at, ema_update, Adam};
use crate::params::ParamSet;
use crate::rng::{derive_seed, stream, tag};
use crate::scalar::Real;
use crate::sparse::CsrMatrix;
use crate::splits::Edge;
use crate::tape::{dot, Tape, Var};
use crate::tensor::Tensor;
use crate::transforms::{augment_sparse, corrupt_sparse, AugmentConfig};

/// A graph as seen by the encoder: propagation matrix plus features.
#[derive(Clone, Debug)]
pub struct View<T> {
    pub adj: Arc<CsrMatrix<T>>,
    pub x: Arc<CsrMatrix<T>>,
}

impl<T: Real> View<T> {
    pub fn new(g: &Graph, x: Arc<CsrMatrix<T>>) -> Self {
        View {
            adj: normalize_adjacency::<T>(g).matrix().clone(),
            x,
        }
    }
}

/// Message graph, features and (optional) validation pairs for one run.
pub struct TrainData<T> {
    pub graph: Graph,
    pub features: Arc<CsrMatrix<T>>,
    pub full: View<T>,
    pub valid_pos: Vec<Edge>,
    pub valid_neg: Vec<Edge>,
    edge_set: HashSet<Edge>,
}

impl<T: Real> TrainData<T> {
    pub fn new(graph: Graph, features: &FeatureMatrix) -> Result<Self> {
        if features.rows() != graph.num_nodes() {
            return Err(Error::shape(
                "train_data",
                format!("{} feature rows for {} nodes", features.rows(), graph.num_nodes()),
            ));
        }
        let x = Arc::new(features.to_csr::<T>());
        let full = View::new(&graph, Arc::clone(&x));
        let edge_set = graph.edge_set();
        Ok(TrainData {
            graph,
            features: x,
            full,
            valid_pos: Vec::new(),
            valid_neg: Vec::new(),
            edge_set,
        })
    }

    /// Pairs used for early stopping of the supervised methods.
    pub fn with_validation(mut self, pos: Vec<Edge>, neg: Vec<Edge>) -> Self {
        self.valid_pos = pos;
        self.valid_neg = neg;
        self
    }

    pub fn in_dim(&self) -> usize {
        self.features.cols()
    }
}

/// Online parameters (encoder plus method heads) and, for the bootstrapped
/// methods, the EMA target encoder.
#[derive(Clone, Debug)]
pub struct Model<T> {
    pub encoder: GcnEncoder,
    pub predictor: Option<Mlp2>,
    pub projector: Option<Mlp2>,
    pub decoder: Option<DecoderMlp>,
    pub online: ParamSet<T>,
    pub target: Option<ParamSet<T>>,
}

impl<T: Real> Model<T> {
    pub fn init(cfg: &TrainConfig, in_dim: usize) -> Result<Self> {
        let d = cfg.embed_dim;
        let mut rng = stream(cfg.seed, tag::INIT);
        let encoder = GcnEncoder::new("enc", in_dim, d);
        let mut online = ParamSet::new();
        encoder.init(&mut online, &mut rng)?;
        let predictor = cfg.method.is_bootstrapped().then(|| Mlp2::new("pred", d, cfg.pred_hidden, d));
        let projector = (cfg.method == Method::Grace).then(|| Mlp2::new("proj", d, cfg.proj_hidden, d));
        let decoder = (cfg.method == Method::E2e).then(|| DecoderMlp::new(d));
        for head in predictor.iter().chain(&projector) {
            head.init(&mut online, &mut rng)?;
        }
        if let Some(dec) = &decoder {
            dec.init(&mut online, &mut rng)?;
        }
        let target = cfg.method.is_bootstrapped().then(|| online.subset("enc."));
        Ok(Model {
            encoder,
            predictor,
            projector,
            decoder,
            online,
            target,
        })
    }

    /// Online-encoder embeddings of `view`, without gradient tracking.
    pub fn embed(&self, view: &View<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let h = self.encoder.forward(&mut tape, &self.online, &view.adj, &view.x, false)?;
        Ok(tape.value(h).clone())
    }

    /// Encoder parameters only (`enc.*`).
    pub fn encoder_params(&self) -> ParamSet<T> {
        self.online.subset("enc.")
    }
}

/// The random draws of one epoch.
#[derive(Clone, Debug)]
pub struct StepInputs<T> {
    /// Two augmented views, plus the corrupted view for T-BGRL; the full
    /// message graph alone for the supervised methods.
    pub views: Vec<View<T>>,
    /// `(anchor, positive, negative)` triples (ML-GCN).
    pub triples: Vec<(usize, usize, usize)>,
    /// Scored pairs and their labels (E2E).
    pub pairs: Vec<Edge>,
    pub labels: Vec<T>,
}

fn epoch_seed(base: u64, stream_tag: u64, epoch: usize) -> u64 {
    derive_seed(derive_seed(base, stream_tag), epoch as u64)
}

fn augmented_view<T: Real>(data: &TrainData<T>, aug: &AugmentConfig, seed: u64) -> Result<View<T>> {
    let cfg = AugmentConfig { rng_seed: seed, ..*aug };
    let (g, x) = augment_sparse(&data.graph, &data.features, &cfg)?;
    Ok(View::new(&g, Arc::new(x)))
}

fn margin_triples(g: &Graph, per_anchor: usize, rng: &mut impl Rng) -> Vec<(usize, usize, usize)> {
    let n = g.num_nodes();
    let mut out = Vec::new();
    for u in 0..n {
        let nb = g.neighbors(u);
        // No anchor without a neighbor, and none without a non-neighbor.
        if nb.is_empty() || nb.len() + 1 >= n {
            continue;
        }
        for _ in 0..per_anchor {
            let v = nb[rng.gen_range(0..nb.len())];
            let w = loop {
                let w = rng.gen_range(0..n);
                if w != u && nb.binary_search(&w).is_err() {
                    break w;
                }
            };
            out.push((u, v, w));
        }
    }
    out
}

/// Draws the epoch's views, triples or pairs for `cfg.method`.
pub fn sample_inputs<T: Real>(data: &TrainData<T>, cfg: &TrainConfig, epoch: usize) -> Result<StepInputs<T>> {
    let mut inputs = StepInputs {
        views: Vec::new(),
        triples: Vec::new(),
        pairs: Vec::new(),
        labels: Vec::new(),
    };
    match cfg.method {
        Method::Bgrl | Method::Tbgrl | Method::Gbt | Method::Ccassg | Method::Grace => {
            inputs.views.push(augmented_view(data, &cfg.aug1, epoch_seed(cfg.seed, tag::AUG1, epoch))?);
            inputs.views.push(augmented_view(data, &cfg.aug2, epoch_seed(cfg.seed, tag::AUG2, epoch))?);
            if cfg.method == Method::Tbgrl {
                let kind = cfg.corruption.resolve()?;
                let seed = epoch_seed(cfg.seed, tag::CORRUPT, epoch);
                let (g, x) = corrupt_sparse(&data.graph, &data.features, kind, seed)?;
                inputs.views.push(View::new(&g, Arc::new(x)));
            }
        }
        Method::Mlgcn => {
            inputs.views.push(data.full.clone());
            let mut rng = stream(epoch_seed(cfg.seed, tag::NEGATIVES, epoch), 0);
            inputs.triples = margin_triples(&data.graph, cfg.negatives, &mut rng);
        }
        Method::E2e => {
            inputs.views.push(data.full.clone());
            let mut rng = stream(epoch_seed(cfg.seed, tag::NEGATIVES, epoch), 0);
            let pos = data.graph.edges();
            if pos.is_empty() {
                return Err(Error::InvalidArgument("end-to-end training needs training edges".into()));
            }
            let neg = uniform_negatives(data.graph.num_nodes(), pos.len() * cfg.negatives, &data.edge_set, &mut rng)?;
            inputs.pairs = pos.iter().chain(&neg).copied().collect();
            inputs.labels = (0..inputs.pairs.len())
                .map(|i| if i < pos.len() { T::one() } else { T::zero() })
                .collect();
        }
    }
    Ok(inputs)
}

fn head<'a>(h: &'a Option<Mlp2>, what: &str) -> Result<&'a Mlp2> {
    h.as_ref().ok_or_else(|| Error::Structure(format!("model has no {what}")))
}

/// Records `cfg.method`'s loss for `inputs` on `tape`. Target-encoder
/// outputs enter as constants.
pub fn method_loss<T: Real>(
    tape: &mut Tape<T>,
    model: &Model<T>,
    inputs: &StepInputs<T>,
    cfg: &TrainConfig,
) -> Result<Var> {
    let enc = &model.encoder;
    let p = &model.online;
    let view = |i: usize| -> Result<&View<T>> {
        inputs
            .views
            .get(i)
            .ok_or_else(|| Error::InvalidArgument(format!("{} needs view {i}", cfg.method)))
    };
    match cfg.method {
        Method::Bgrl | Method::Tbgrl => {
            let target = model.target.as_ref().ok_or_else(|| Error::Structure("model has no target encoder".into()))?;
            let (v1, v2) = (view(0)?, view(1)?);
            let h1 = enc.forward(tape, p, &v1.adj, &v1.x, true)?;
            let z = head(&model.predictor, "predictor")?.forward(tape, p, h1, true)?;
            let h2 = enc.forward(tape, target, &v2.adj, &v2.x, false)?;
            if cfg.method == Method::Bgrl {
                bgrl_loss(tape, z, h2)
            } else {
                let vc = view(2)?;
                let hc = enc.forward(tape, target, &vc.adj, &vc.x, false)?;
                tbgrl_loss(tape, z, h2, hc, cfg.lambda)
            }
        }
        Method::Gbt | Method::Ccassg | Method::Grace => {
            let (v1, v2) = (view(0)?, view(1)?);
            let h1 = enc.forward(tape, p, &v1.adj, &v1.x, true)?;
            let h2 = enc.forward(tape, p, &v2.adj, &v2.x, true)?;
            match cfg.method {
                Method::Gbt => gbt_loss(tape, h1, h2, cfg.w_off()),
                Method::Ccassg => ccassg_loss(tape, h1, h2, cfg.w_dec),
                _ => {
                    let proj = head(&model.projector, "projection head")?;
                    let p1 = proj.forward(tape, p, h1, true)?;
                    let p2 = proj.forward(tape, p, h2, true)?;
                    grace_loss(tape, p1, p2, cfg.tau)
                }
            }
        }
        Method::Mlgcn => {
            let v = view(0)?;
            let h = enc.forward(tape, p, &v.adj, &v.x, true)?;
            margin_loss(tape, h, &inputs.triples, cfg.margin)
        }
        Method::E2e => {
            let v = view(0)?;
            let h = enc.forward(tape, p, &v.adj, &v.x, true)?;
            let dec = model.decoder.as_ref().ok_or_else(|| Error::Structure("model has no decoder".into()))?;
            let z = dec.logits(tape, p, h, &inputs.pairs, true)?;
            e2e_loss(tape, z, &inputs.labels)
        }
    }
}

/// One optimization step (and EMA update). `epoch` is 1-based.
pub fn step<T: Real>(
    model: &mut Model<T>,
    opt: &mut Adam<T>,
    data: &TrainData<T>,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<f64> {
    let inputs = sample_inputs(data, cfg, epoch)?;
    let mut tape = Tape::new();
    let loss = method_loss(&mut tape, model, &inputs, cfg)?;
    let value = tape.value(loss).item().as_f64();
    let grads = tape.backward(loss)?.into_named();
    debug_assert!(grads.keys().all(|k| model.online.contains(k)));
    opt.step(&mut model.online, &grads)?;
    if let Some(target) = &mut model.target {
        let decay = ema_decay_at(cfg.decay, cfg.anneal, epoch, cfg.epochs);
        ema_update(target, &model.online.subset("enc."), decay)?;
    }
    Ok(value)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub epoch_ms: f64,
    /// Validation Hits@50 after the step (supervised methods only).
    pub valid_hits: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutput<T> {
    /// Best-by-validation parameters for supervised methods, final ones otherwise.
    pub model: Model<T>,
    pub curve: Vec<EpochRecord>,
    /// Epoch of the returned parameters (0 = initial).
    pub best_epoch: usize,
    /// Initialization time, excluded from the per-epoch figures.
    pub setup_ms: f64,
}

/// Validation Hits@50 used for early stopping. ML-GCN ranks by embedding
/// dot products; E2E by its decoder.
fn supervised_valid_hits<T: Real>(model: &Model<T>, data: &TrainData<T>) -> Result<f64> {
    let h = model.embed(&data.full)?;
    let scores = |pairs: &[Edge]| -> Result<Vec<f64>> {
        match &model.decoder {
            Some(dec) => dec.decode(&model.online, &h, pairs),
            None => Ok(pairs.iter().map(|&(u, v)| dot(h.row(u), h.row(v)).as_f64()).collect()),
        }
    };
    hits_at_k(&scores(&data.valid_pos)?, &scores(&data.valid_neg)?, HITS_K)
}

pub fn train<T: Real>(data: &TrainData<T>, cfg: &TrainConfig) -> Result<TrainOutput<T>> {
    let t0 = Instant::now();
    cfg.validate()?;
    let model = Model::init(cfg, data.in_dim())?;
    let setup_ms = t0.elapsed().as_secs_f64() * 1e3;
    let mut out = train_with_init(data, cfg, model)?;
    out.setup_ms = setup_ms;
    Ok(out)
}

/// Runs `cfg.epochs` full-batch steps from `model`.
pub fn train_with_init<T: Real>(data: &TrainData<T>, cfg: &TrainConfig, mut model: Model<T>) -> Result<TrainOutput<T>> {
    cfg.validate()?;
    let mut opt = Adam::new(cfg.lr, cfg.weight_decay)?;
    let early_stop = cfg.method.is_supervised() && !data.valid_pos.is_empty() && !data.valid_neg.is_empty();
    let mut best: Option<(usize, f64, Model<T>)> = None;
    if early_stop {
        best = Some((0, supervised_valid_hits(&model, data)?, model.clone()));
    }
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let t = Instant::now();
        let loss = step(&mut model, &mut opt, data, cfg, epoch)?;
        let mut valid_hits = None;
        let mut stop = false;
        if let Some((best_epoch, best_hits, best_model)) = &mut best {
            let hits = supervised_valid_hits(&model, data)?;
            valid_hits = Some(hits);
            if hits > *best_hits {
                *best_epoch = epoch;
                *best_hits = hits;
                *best_model = model.clone();
            } else if epoch - *best_epoch >= cfg.patience {
                stop = true;
            }
        }
        curve.push(EpochRecord {
            epoch,
            loss,
            epoch_ms: t.elapsed().as_secs_f64() * 1e3,
            valid_hits,
        });
        if stop {
            break;
        }
    }
    let (best_epoch, model) = match best {
        Some((e, _, m)) => (e, m),
        None => (curve.len(), model),
    };
    Ok(TrainOutput {
        model,
        curve,
        best_epoch,
        setup_ms: 0.0,
    })
}
