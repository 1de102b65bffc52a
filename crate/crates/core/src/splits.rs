//! Seeded transductive and inductive edge splits.
//!
//! Fractional counts always round down; the last set takes the remainder.
//! Evaluation negatives are sampled once here and persisted so every method
//! is scored against the same pairs.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{canonical, Graph};
use crate::rng::{stream, tag};

pub type Edge = (usize, usize);

/// Share of edges used for training in the transductive split (percent).
pub const TRANSDUCTIVE_TRAIN_PCT: usize = 85;
pub const TRANSDUCTIVE_VALID_PCT: usize = 5;
/// Minimum edge count accepted by [`transductive_split`].
pub const MIN_TRANSDUCTIVE_EDGES: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    Transductive,
    Inductive,
}

impl std::fmt::Display for Setting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Setting::Transductive => "transductive",
            Setting::Inductive => "inductive",
        })
    }
}

/// Endpoint category of an evaluation pair in the inductive setting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Bucket {
    #[serde(rename = "obs-obs")]
    ObsObs,
    #[serde(rename = "obs-unobs")]
    ObsUnobs,
    #[serde(rename = "unobs-unobs")]
    UnobsUnobs,
}

impl Bucket {
    pub const ALL: [Bucket; 3] = [Bucket::ObsObs, Bucket::ObsUnobs, Bucket::UnobsUnobs];

    pub fn name(self) -> &'static str {
        match self {
            Bucket::ObsObs => "obs-obs",
            Bucket::ObsUnobs => "obs-unobs",
            Bucket::UnobsUnobs => "unobs-unobs",
        }
    }

    pub fn of(observed: &[bool], (u, v): Edge) -> Bucket {
        match (observed[u], observed[v]) {
            (true, true) => Bucket::ObsObs,
            (false, false) => Bucket::UnobsUnobs,
            _ => Bucket::ObsUnobs,
        }
    }
}

/// Edge partitions for one split. This is the file consumed by training and
/// evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitBundle {
    pub setting: Setting,
    pub seed: u64,
    /// Masking fraction (inductive only; 0 for transductive).
    pub frac: f64,
    pub num_nodes: usize,
    /// Empty in the transductive setting.
    pub observed_nodes: Vec<usize>,
    pub unobserved_nodes: Vec<usize>,
    pub train: Vec<Edge>,
    pub valid_pos: Vec<Edge>,
    pub valid_neg: Vec<Edge>,
    pub test_pos: Vec<Edge>,
    pub test_neg: Vec<Edge>,
    /// Inference-only edges (inductive only).
    pub inference: Vec<Edge>,
    /// One tag per `test_pos` entry (inductive only).
    pub test_pos_buckets: Vec<Bucket>,
    /// One tag per `test_neg` entry (inductive only).
    pub test_neg_buckets: Vec<Bucket>,
}

fn floor_frac(frac: f64, count: usize) -> usize {
    // Guard against products such as 0.29 * 100 = 28.999999999999996.
    ((frac * count as f64) + 1e-9).floor() as usize
}

/// Samples `count` distinct non-edges among `nodes`, also avoiding `avoid`.
fn sample_negatives(
    nodes: &[usize],
    edges: &HashSet<Edge>,
    avoid: &mut HashSet<Edge>,
    count: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Edge>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let m = nodes.len();
    let pairs = m * m.saturating_sub(1) / 2;
    let in_pool = if pairs > 0 && m < 4096 {
        let set: HashSet<usize> = nodes.iter().copied().collect();
        let e = edges.iter().filter(|(u, v)| set.contains(u) && set.contains(v)).count();
        let a = avoid.iter().filter(|(u, v)| set.contains(u) && set.contains(v)).count();
        Some(e + a)
    } else {
        None
    };
    if let Some(taken) = in_pool {
        if pairs < taken + count {
            return Err(Error::Split(format!("cannot sample {count} negatives among {m} nodes")));
        }
    }
    let mut out = Vec::with_capacity(count);
    let mut attempts: u64 = 0;
    while out.len() < count {
        attempts += 1;
        if attempts > 1000 * count as u64 + 100_000 {
            return Err(Error::Split(format!("negative sampling stalled after {} of {count}", out.len())));
        }
        let u = nodes[rng.gen_range(0..m)];
        let v = nodes[rng.gen_range(0..m)];
        if u == v {
            continue;
        }
        let e = canonical(u, v);
        if edges.contains(&e) || !avoid.insert(e) {
            continue;
        }
        out.push(e);
    }
    Ok(out)
}

/// 85/5/10 edge split with equal-count uniform negatives for validation and test.
pub fn transductive_split(g: &Graph, seed: u64) -> Result<SplitBundle> {
    let m = g.num_edges();
    if m < MIN_TRANSDUCTIVE_EDGES {
        return Err(Error::Split(format!("{m} edges; at least {MIN_TRANSDUCTIVE_EDGES} required")));
    }
    let mut rng = stream(seed, tag::SPLIT);
    let mut edges = g.edges().to_vec();
    edges.shuffle(&mut rng);
    let n_train = m * TRANSDUCTIVE_TRAIN_PCT / 100;
    let n_valid = m * TRANSDUCTIVE_VALID_PCT / 100;
    let test_pos = edges.split_off(n_train + n_valid);
    let valid_pos = edges.split_off(n_train);
    let train = edges;

    let all: Vec<usize> = (0..g.num_nodes()).collect();
    let eset = g.edge_set();
    let mut taken = HashSet::new();
    let valid_neg = sample_negatives(&all, &eset, &mut taken, valid_pos.len(), &mut rng)?;
    let test_neg = sample_negatives(&all, &eset, &mut taken, test_pos.len(), &mut rng)?;

    Ok(SplitBundle {
        setting: Setting::Transductive,
        seed,
        frac: 0.0,
        num_nodes: g.num_nodes(),
        observed_nodes: Vec::new(),
        unobserved_nodes: Vec::new(),
        train,
        valid_pos,
        valid_neg,
        test_pos,
        test_neg,
        inference: Vec::new(),
        test_pos_buckets: Vec::new(),
        test_neg_buckets: Vec::new(),
    })
}

/// Node-and-edge split simulating new nodes and edges at inference time.
///
/// 1. `floor(frac * |E|)` test edges plus as many negatives over all nodes.
/// 2. `floor(frac * n)` nodes become unobserved.
/// 3. Remaining edges touching an unobserved node become inference-only.
/// 4. Of the observed pool, `floor(frac * pool)` more become inference-only,
///    then `floor(frac * rest)` validation (plus observed-only negatives),
///    and the remainder is training.
pub fn inductive_split(g: &Graph, seed: u64, frac: f64) -> Result<SplitBundle> {
    if !(frac > 0.0 && frac <= 0.5) {
        return Err(Error::Split(format!("frac {frac} outside (0, 0.5]")));
    }
    let n = g.num_nodes();
    let mut rng = stream(seed, tag::SPLIT);
    let eset = g.edge_set();
    let all: Vec<usize> = (0..n).collect();

    let mut edges = g.edges().to_vec();
    edges.shuffle(&mut rng);
    let n_test = floor_frac(frac, edges.len());
    let rest = edges.split_off(n_test);
    let test_pos = edges;
    let mut taken = HashSet::new();
    let test_neg = sample_negatives(&all, &eset, &mut taken, test_pos.len(), &mut rng)?;

    let mut perm = all.clone();
    perm.shuffle(&mut rng);
    let n_unobs = floor_frac(frac, n);
    let mut unobserved_nodes = perm[..n_unobs].to_vec();
    let mut observed_nodes = perm[n_unobs..].to_vec();
    unobserved_nodes.sort_unstable();
    observed_nodes.sort_unstable();
    let mut observed = vec![true; n];
    for &u in &unobserved_nodes {
        observed[u] = false;
    }

    let (mut pool, mut inference): (Vec<Edge>, Vec<Edge>) =
        rest.into_iter().partition(|&(u, v)| observed[u] && observed[v]);
    let n_inf = floor_frac(frac, pool.len());
    let after_inf = pool.split_off(n_inf);
    inference.extend(pool);
    let mut pool = after_inf;
    let n_valid = floor_frac(frac, pool.len());
    let train = pool.split_off(n_valid);
    let valid_pos = pool;
    if train.is_empty() {
        return Err(Error::Split("inductive split left no training edges".into()));
    }
    let valid_neg = sample_negatives(&observed_nodes, &eset, &mut taken, valid_pos.len(), &mut rng)?;

    let test_pos_buckets = test_pos.iter().map(|&e| Bucket::of(&observed, e)).collect();
    let test_neg_buckets = test_neg.iter().map(|&e| Bucket::of(&observed, e)).collect();
    Ok(SplitBundle {
        setting: Setting::Inductive,
        seed,
        frac,
        num_nodes: n,
        observed_nodes,
        unobserved_nodes,
        train,
        valid_pos,
        valid_neg,
        test_pos,
        test_neg,
        inference,
        test_pos_buckets,
        test_neg_buckets,
    })
}

impl SplitBundle {
    /// Edges the encoder propagates over during training.
    pub fn train_graph(&self) -> Result<Graph> {
        Graph::from_edges(self.num_nodes, self.train.iter().copied())
    }

    /// Edges the encoder propagates over at evaluation time: training edges,
    /// plus inference-only edges in the inductive setting.
    pub fn inference_graph(&self) -> Result<Graph> {
        Graph::from_edges(self.num_nodes, self.train.iter().chain(&self.inference).copied())
    }

    pub fn observed_mask(&self) -> Vec<bool> {
        match self.setting {
            Setting::Transductive => vec![true; self.num_nodes],
            Setting::Inductive => {
                let mut m = vec![false; self.num_nodes];
                for &u in &self.observed_nodes {
                    m[u] = true;
                }
                m
            }
        }
    }

    /// Checks every structural invariant against the source graph.
    pub fn validate(&self, g: &Graph) -> Result<()> {
        let bad = |msg: String| Err(Error::Split(msg));
        if g.num_nodes() != self.num_nodes {
            return bad(format!("split has {} nodes, graph {}", self.num_nodes, g.num_nodes()));
        }
        let eset = g.edge_set();
        let mut seen: HashSet<Edge> = HashSet::new();
        let positives = [
            ("train", &self.train),
            ("valid_pos", &self.valid_pos),
            ("test_pos", &self.test_pos),
            ("inference", &self.inference),
        ];
        for (name, set) in positives {
            for &(u, v) in set.iter() {
                if u >= v || !eset.contains(&(u, v)) {
                    return bad(format!("{name} pair ({u}, {v}) is not a stored edge"));
                }
                if !seen.insert((u, v)) {
                    return bad(format!("{name} pair ({u}, {v}) appears in two sets"));
                }
            }
        }
        if seen.len() != eset.len() {
            return bad(format!("positive sets cover {} of {} edges", seen.len(), eset.len()));
        }
        for (name, set) in [("valid_neg", &self.valid_neg), ("test_neg", &self.test_neg)] {
            for &(u, v) in set.iter() {
                if u >= v || v >= self.num_nodes {
                    return bad(format!("{name} pair ({u}, {v}) is not canonical"));
                }
                if eset.contains(&(u, v)) || !seen.insert((u, v)) {
                    return bad(format!("{name} pair ({u}, {v}) collides with another pair"));
                }
            }
        }
        if self.valid_neg.len() != self.valid_pos.len() || self.test_neg.len() != self.test_pos.len() {
            return bad("negative counts differ from positive counts".into());
        }
        if self.setting == Setting::Inductive {
            let observed = self.observed_mask();
            if self.observed_nodes.len() + self.unobserved_nodes.len() != self.num_nodes
                || self.unobserved_nodes.iter().any(|&u| observed[u])
            {
                return bad("observed/unobserved lists do not partition the nodes".into());
            }
            for &(u, v) in self.train.iter().chain(&self.valid_pos).chain(&self.valid_neg) {
                if !observed[u] || !observed[v] {
                    return bad(format!("training-time pair ({u}, {v}) touches an unobserved node"));
                }
            }
            let tags = |pairs: &[Edge], buckets: &[Bucket]| {
                pairs.len() == buckets.len() && pairs.iter().zip(buckets).all(|(&e, &b)| Bucket::of(&observed, e) == b)
            };
            if !tags(&self.test_pos, &self.test_pos_buckets) || !tags(&self.test_neg, &self.test_neg_buckets) {
                return bad("bucket tags disagree with the node partition".into());
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_json()?.as_bytes()).map_err(|e| Error::io(path, e))?;
        f.write_all(b"\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}
