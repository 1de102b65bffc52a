//! Label-preserving augmentations and label-altering corruptions.
//!
//! Each public transform is a pure function of its inputs and seed. The
//! `*_sparse` variants operate on CSR features and consume the random stream
//! identically, so both representations give the same result.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{canonical, FeatureMatrix, Graph};
use crate::scalar::Real;
use crate::sparse::CsrMatrix;

/// Edge dropping and feature-column masking probabilities for one view.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    #[serde(rename = "p_edge")]
    pub p_edge_drop: f64,
    #[serde(rename = "p_feat")]
    pub p_feat_mask: f64,
    #[serde(default)]
    pub rng_seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            p_edge_drop: 0.25,
            p_feat_mask: 0.25,
            rng_seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_edge", self.p_edge_drop), ("p_feat", self.p_feat_mask)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!("{name} = {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Corruption family used to build cheap negative views.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    /// Uniform random edges (same count) and i.i.d. `U[0, 1)` features.
    RandomFeatRandomEdge,
    /// Uniform random edges (same count) and row-shuffled features.
    ShuffleFeatRandomEdge,
    /// Drops each edge and each feature entry with the given probability.
    SparsifyFeatSparsifyEdge(f64),
}

impl Default for CorruptionKind {
    fn default() -> Self {
        CorruptionKind::ShuffleFeatRandomEdge
    }
}

pub const DEFAULT_SPARSIFY: f64 = 0.95;

impl CorruptionKind {
    pub fn validate(&self) -> Result<()> {
        if let CorruptionKind::SparsifyFeatSparsifyEdge(p) = *self {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::InvalidArgument(format!("sparsify percentage {p} outside (0, 1)")));
            }
        }
        Ok(())
    }
}

/// Config-file form of [`CorruptionKind`]: `{"kind": ..., "sparsify_p": ...}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorruptionConfig {
    pub kind: CorruptionName,
    pub sparsify_p: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionName {
    RandomFeatRandomEdge,
    #[default]
    ShuffleFeatRandomEdge,
    SparsifyFeatSparsifyEdge,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        CorruptionConfig {
            kind: CorruptionName::default(),
            sparsify_p: DEFAULT_SPARSIFY,
        }
    }
}

impl CorruptionConfig {
    pub fn resolve(&self) -> Result<CorruptionKind> {
        let k = match self.kind {
            CorruptionName::RandomFeatRandomEdge => CorruptionKind::RandomFeatRandomEdge,
            CorruptionName::ShuffleFeatRandomEdge => CorruptionKind::ShuffleFeatRandomEdge,
            CorruptionName::SparsifyFeatSparsifyEdge => CorruptionKind::SparsifyFeatSparsifyEdge(self.sparsify_p),
        };
        k.validate()?;
        Ok(k)
    }
}

fn bernoulli_keep(rng: &mut impl Rng, p_drop: f64) -> bool {
    if p_drop <= 0.0 {
        // Still consume one draw so streams stay aligned across settings.
        let _ = rng.gen::<f64>();
        true
    } else {
        rng.gen::<f64>() >= p_drop
    }
}

fn drop_edges(g: &Graph, p_drop: f64, rng: &mut impl Rng) -> Graph {
    let kept: Vec<_> = g.edges().iter().copied().filter(|_| bernoulli_keep(rng, p_drop)).collect();
    Graph::from_sorted_unique(g.num_nodes(), kept)
}

fn column_mask(cols: usize, p_mask: f64, rng: &mut impl Rng) -> Vec<bool> {
    (0..cols).map(|_| bernoulli_keep(rng, p_mask)).collect()
}

/// Drops edges and masks whole feature columns.
pub fn augment(g: &Graph, x: &FeatureMatrix, cfg: &AugmentConfig) -> Result<(Graph, FeatureMatrix)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let g2 = drop_edges(g, cfg.p_edge_drop, &mut rng);
    let keep = column_mask(x.cols(), cfg.p_feat_mask, &mut rng);
    let mut x2 = x.clone();
    let cols = x2.cols();
    for (i, v) in x2.data_mut().iter_mut().enumerate() {
        if !keep[i % cols] {
            *v = 0.0;
        }
    }
    Ok((g2, x2))
}

/// [`augment`] over CSR features.
pub fn augment_sparse<T: Real>(g: &Graph, x: &CsrMatrix<T>, cfg: &AugmentConfig) -> Result<(Graph, CsrMatrix<T>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let g2 = drop_edges(g, cfg.p_edge_drop, &mut rng);
    let keep = column_mask(x.cols(), cfg.p_feat_mask, &mut rng);
    Ok((g2, x.filter(|_, c, _| keep[c])))
}

/// `count` distinct uniformly random unordered pairs without self-loops.
pub fn random_edges(n: usize, count: usize, rng: &mut impl Rng) -> Result<Graph> {
    if count == 0 {
        return Ok(Graph::empty(n));
    }
    if n < 2 {
        return Err(Error::InvalidArgument(format!("cannot sample {count} edges among {n} nodes")));
    }
    let max_pairs = n * (n - 1) / 2;
    if count > max_pairs {
        return Err(Error::InvalidArgument(format!("{count} edges exceed {max_pairs} possible pairs")));
    }
    let mut edges: Vec<(usize, usize)>;
    if count * 2 > max_pairs {
        // Dense request: enumerate and take a random prefix.
        edges = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect();
        edges.shuffle(rng);
        edges.truncate(count);
    } else {
        let mut seen = HashSet::with_capacity(count * 2);
        edges = Vec::with_capacity(count);
        while edges.len() < count {
            let u = rng.gen_range(0..n);
            let v = rng.gen_range(0..n);
            if u == v {
                continue;
            }
            let e = canonical(u, v);
            if seen.insert(e) {
                edges.push(e);
            }
        }
    }
    edges.sort_unstable();
    Ok(Graph::from_sorted_unique(n, edges))
}

fn corruption_edges(g: &Graph, kind: CorruptionKind, rng: &mut ChaCha8Rng) -> Result<Graph> {
    match kind {
        CorruptionKind::RandomFeatRandomEdge | CorruptionKind::ShuffleFeatRandomEdge => {
            random_edges(g.num_nodes(), g.num_edges(), rng)
        }
        CorruptionKind::SparsifyFeatSparsifyEdge(p) => Ok(drop_edges(g, p, rng)),
    }
}

/// Applies a corruption to `(g, x)`.
pub fn corrupt(g: &Graph, x: &FeatureMatrix, kind: CorruptionKind, seed: u64) -> Result<(Graph, FeatureMatrix)> {
    let (g2, x2) = corrupt_sparse::<f32>(g, &x.to_csr(), kind, seed)?;
    Ok((g2, FeatureMatrix::from_csr(&x2)))
}

/// [`corrupt`] over CSR features.
pub fn corrupt_sparse<T: Real>(
    g: &Graph,
    x: &CsrMatrix<T>,
    kind: CorruptionKind,
    seed: u64,
) -> Result<(Graph, CsrMatrix<T>)> {
    kind.validate()?;
    if x.rows() != g.num_nodes() {
        return Err(Error::shape("corrupt", "feature rows differ from node count"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g2 = corruption_edges(g, kind, &mut rng)?;
    let x2 = match kind {
        CorruptionKind::RandomFeatRandomEdge => {
            let (n, f) = (x.rows(), x.cols());
            let indptr = (0..=n).map(|r| r * f).collect();
            let indices = (0..n).flat_map(|_| 0..f).collect();
            let values = (0..n * f).map(|_| T::from_f64(rng.gen::<f64>())).collect();
            CsrMatrix::new(n, f, indptr, indices, values)?
        }
        CorruptionKind::ShuffleFeatRandomEdge => {
            let mut perm: Vec<usize> = (0..x.rows()).collect();
            perm.shuffle(&mut rng);
            x.permute_rows(&perm)?
        }
        CorruptionKind::SparsifyFeatSparsifyEdge(p) => x.filter(|_, _, _| bernoulli_keep(&mut rng, p)),
    };
    Ok((g2, x2))
}
