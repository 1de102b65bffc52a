//! Frozen-embedding link decoder, ranking metrics and similarity histograms.

use std::collections::HashSet;
use std::io::Write;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::canonical;
use crate::nn::Mlp2;
use crate::optim::Adam;
use crate::params::ParamSet;
use crate::rng::{stream, tag};
use crate::scalar::Real;
use crate::splits::{Bucket, Edge};
use crate::tape::{cosine, sigmoid, Tape, Var};
use crate::tensor::Tensor;

pub const DECODER_HIDDEN: usize = 256;
pub const HITS_K: usize = 50;

/// Scores a pair as `sigmoid(MLP(h_u * h_v))`.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderMlp {
    pub mlp: Mlp2,
}

impl DecoderMlp {
    pub fn new(dim: usize) -> Self {
        Self::with_hidden(dim, DECODER_HIDDEN)
    }

    pub fn with_hidden(dim: usize, hidden: usize) -> Self {
        DecoderMlp {
            mlp: Mlp2::new("dec", dim, hidden, 1),
        }
    }

    pub fn init<T: Real>(&self, params: &mut ParamSet<T>, rng: &mut impl Rng) -> Result<()> {
        self.mlp.init(params, rng)
    }

    /// Pre-sigmoid scores, one row per pair.
    pub fn logits<T: Real>(
        &self,
        tape: &mut Tape<T>,
        params: &ParamSet<T>,
        h: Var,
        pairs: &[Edge],
        trainable: bool,
    ) -> Result<Var> {
        let (us, vs): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
        let hu = tape.gather(h, &us)?;
        let hv = tape.gather(h, &vs)?;
        let had = tape.mul(hu, hv)?;
        self.mlp.forward(tape, params, had, trainable)
    }

    /// Link probabilities for `pairs` under embeddings `h`.
    pub fn decode<T: Real>(&self, params: &ParamSet<T>, h: &Tensor<T>, pairs: &[Edge]) -> Result<Vec<f64>> {
        if let Some(&(u, v)) = pairs.iter().find(|&&(u, v)| u >= h.rows() || v >= h.rows()) {
            return Err(Error::InvalidArgument(format!("pair ({u}, {v}) out of range for {} embeddings", h.rows())));
        }
        let mut tape = Tape::new();
        let hv = tape.constant(h.clone());
        let z = self.logits(&mut tape, params, hv, pairs, false)?;
        Ok(tape.value(z).data().iter().map(|&s| sigmoid(s).as_f64()).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecoderConfig {
    pub epochs: usize,
    pub patience: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            epochs: 1000,
            patience: 50,
            lr: 1e-3,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

/// Inputs for decoder training. Ids index rows of `h`.
pub struct DecoderTask<'a, T> {
    pub h: &'a Tensor<T>,
    pub train_pos: &'a [Edge],
    pub valid_pos: &'a [Edge],
    pub valid_neg: &'a [Edge],
}

#[derive(Clone, Debug)]
pub struct DecoderFit<T> {
    pub params: ParamSet<T>,
    /// Epochs actually run.
    pub epochs_run: usize,
    /// Epoch (1-based) of the kept parameters; 0 means the initial ones.
    pub best_epoch: usize,
    pub best_valid_hits: f64,
    pub train_loss: Vec<f64>,
}

/// `count` uniform pairs over `0..n` that are not in `known`, without self-loops.
pub(crate) fn uniform_negatives(n: usize, count: usize, known: &HashSet<Edge>, rng: &mut impl Rng) -> Result<Vec<Edge>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    if n < 2 || known.len() >= n * (n - 1) / 2 {
        return Err(Error::InvalidArgument(format!("no negative pairs available among {n} nodes")));
    }
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let u = rng.gen_range(0..n);
        let v = rng.gen_range(0..n);
        if u == v {
            continue;
        }
        let e = canonical(u, v);
        if !known.contains(&e) {
            out.push(e);
        }
    }
    Ok(out)
}

/// Trains the decoder with BCE on training positives and as many fresh
/// uniform negatives per epoch, keeping the parameters with the best
/// validation Hits@50 and stopping after `patience` epochs without gain.
pub fn train_decoder<T: Real>(
    dec: &DecoderMlp,
    init: ParamSet<T>,
    task: &DecoderTask<'_, T>,
    cfg: &DecoderConfig,
) -> Result<DecoderFit<T>> {
    if task.train_pos.is_empty() {
        return Err(Error::InvalidArgument("decoder training needs positive pairs".into()));
    }
    let n = task.h.rows();
    let known: HashSet<Edge> = task.train_pos.iter().map(|&(u, v)| canonical(u, v)).collect();
    let mut rng = stream(cfg.seed, tag::DECODER);
    let mut opt = Adam::new(cfg.lr, cfg.weight_decay)?;
    let mut params = init;
    let has_valid = !task.valid_pos.is_empty() && !task.valid_neg.is_empty();
    let valid_hits = |p: &ParamSet<T>| -> Result<f64> {
        let pos = dec.decode(p, task.h, task.valid_pos)?;
        let neg = dec.decode(p, task.h, task.valid_neg)?;
        hits_at_k(&pos, &neg, HITS_K)
    };
    let mut best = (0, if has_valid { valid_hits(&params)? } else { 0.0 }, params.clone());
    let mut losses = Vec::new();
    let mut epochs_run = 0;
    for epoch in 1..=cfg.epochs {
        let neg = uniform_negatives(n, task.train_pos.len(), &known, &mut rng)?;
        let pairs: Vec<Edge> = task.train_pos.iter().chain(&neg).copied().collect();
        let labels: Vec<T> = (0..pairs.len()).map(|i| if i < task.train_pos.len() { T::one() } else { T::zero() }).collect();
        let mut tape = Tape::new();
        let h = tape.constant(task.h.clone());
        let z = dec.logits(&mut tape, &params, h, &pairs, true)?;
        let loss = tape.bce_with_logits(z, &labels)?;
        losses.push(tape.value(loss).item().as_f64());
        let grads = tape.backward(loss)?;
        opt.step(&mut params, &grads.into_named())?;
        epochs_run = epoch;
        if has_valid {
            let hits = valid_hits(&params)?;
            if hits > best.1 {
                best = (epoch, hits, params.clone());
            } else if epoch - best.0 >= cfg.patience {
                break;
            }
        }
    }
    if !has_valid {
        best = (epochs_run, 0.0, params);
    }
    Ok(DecoderFit {
        params: best.2,
        epochs_run,
        best_epoch: best.0,
        best_valid_hits: best.1,
        train_loss: losses,
    })
}

fn check_scores(op: &'static str, xs: &[f64]) -> Result<()> {
    if xs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op });
    }
    Ok(())
}

/// Fraction of positives scoring strictly above the `k`-th highest negative.
/// Returns 1.0 when there are fewer than `k` negatives.
pub fn hits_at_k(pos: &[f64], neg: &[f64], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidArgument("Hits@K needs K >= 1".into()));
    }
    if pos.is_empty() {
        return Err(Error::InvalidArgument("Hits@K needs positive scores".into()));
    }
    check_scores("hits_at_k", pos)?;
    check_scores("hits_at_k", neg)?;
    if neg.len() < k {
        return Ok(1.0);
    }
    let mut sorted = neg.to_vec();
    let (_, kth, _) = sorted.select_nth_unstable_by(k - 1, |a, b| b.total_cmp(a));
    let theta = *kth;
    let hits = pos.iter().filter(|&&p| p > theta).count();
    Ok(hits as f64 / pos.len() as f64)
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
pub fn auc_roc(pos: &[f64], neg: &[f64]) -> Result<f64> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::InvalidArgument("AUC needs positive and negative scores".into()));
    }
    check_scores("auc_roc", pos)?;
    check_scores("auc_roc", neg)?;
    let mut sorted = neg.to_vec();
    sorted.sort_by(f64::total_cmp);
    // Twice the Mann-Whitney U statistic, kept integral.
    let mut u2: u128 = 0;
    for &p in pos {
        let below = sorted.partition_point(|&x| x < p);
        let not_above = sorted.partition_point(|&x| x <= p);
        u2 += 2 * below as u128 + (not_above - below) as u128;
    }
    Ok(u2 as f64 / (2 * pos.len() as u128 * neg.len() as u128) as f64)
}

/// One scored evaluation pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoredEdge {
    pub u: usize,
    pub v: usize,
    pub score: f64,
    pub positive: bool,
    /// `None` in the transductive setting.
    pub bucket: Option<Bucket>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BucketMetrics {
    /// `all`, `obs-obs`, `obs-unobs` or `unobs-unobs`.
    pub bucket: String,
    pub hits: f64,
    pub auc: f64,
    pub num_pos: usize,
    pub num_neg: usize,
}

/// Hits@K and AUC over all pairs and, when tagged, per bucket. A bucket's
/// positives are ranked against that bucket's negatives. Buckets lacking
/// positives or negatives are omitted.
pub fn evaluate(scored: &[ScoredEdge], k: usize) -> Result<Vec<BucketMetrics>> {
    let mut groups: Vec<(String, Option<Bucket>)> = vec![("all".into(), None)];
    if scored.iter().any(|s| s.bucket.is_some()) {
        groups.extend(Bucket::ALL.iter().map(|b| (b.name().to_string(), Some(*b))));
    }
    let mut out = Vec::new();
    for (name, want) in groups {
        let sel = scored.iter().filter(|s| want.is_none() || s.bucket == want);
        let (pos, neg): (Vec<&ScoredEdge>, Vec<&ScoredEdge>) = sel.partition(|s| s.positive);
        if pos.is_empty() || neg.is_empty() {
            continue;
        }
        let pos: Vec<f64> = pos.iter().map(|s| s.score).collect();
        let neg: Vec<f64> = neg.iter().map(|s| s.score).collect();
        out.push(BucketMetrics {
            bucket: name,
            hits: hits_at_k(&pos, &neg, k)?,
            auc: auc_roc(&pos, &neg)?,
            num_pos: pos.len(),
            num_neg: neg.len(),
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistBin {
    pub lo: f64,
    pub hi: f64,
    pub count_pos: usize,
    pub count_neg: usize,
}

fn bin_of(c: f64, bins: usize) -> usize {
    let t = ((c + 1.0) / 2.0 * bins as f64).floor();
    (t.max(0.0) as usize).min(bins - 1)
}

/// Histograms of embedding cosine similarity over `[-1, 1]` for positive and
/// negative pairs. The last bin is closed so that 1.0 lands in it.
pub fn similarity_histogram<T: Real>(h: &Tensor<T>, pos: &[Edge], neg: &[Edge], bins: usize) -> Result<Vec<HistBin>> {
    if bins == 0 {
        return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
    }
    let mut out: Vec<HistBin> = (0..bins)
        .map(|i| HistBin {
            lo: -1.0 + 2.0 * i as f64 / bins as f64,
            hi: -1.0 + 2.0 * (i + 1) as f64 / bins as f64,
            count_pos: 0,
            count_neg: 0,
        })
        .collect();
    for (pairs, positive) in [(pos, true), (neg, false)] {
        for &(u, v) in pairs {
            if u >= h.rows() || v >= h.rows() {
                return Err(Error::InvalidArgument(format!("pair ({u}, {v}) out of range")));
            }
            let b = bin_of(cosine(h.row(u), h.row(v)).as_f64(), bins);
            if positive {
                out[b].count_pos += 1;
            } else {
                out[b].count_neg += 1;
            }
        }
    }
    Ok(out)
}

/// Mean cosine similarity over `pairs` (0 for an empty list).
pub fn mean_cosine<T: Real>(h: &Tensor<T>, pairs: &[Edge]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    pairs.iter().map(|&(u, v)| cosine(h.row(u), h.row(v)).as_f64()).sum::<f64>() / pairs.len() as f64
}

pub fn write_histogram_csv(mut w: impl Write, bins: &[HistBin]) -> std::io::Result<()> {
    writeln!(w, "bin_lo,bin_hi,count_pos,count_neg")?;
    for b in bins {
        writeln!(w, "{},{},{},{}", b.lo, b.hi, b.count_pos, b.count_neg)?;
    }
    Ok(())
}
