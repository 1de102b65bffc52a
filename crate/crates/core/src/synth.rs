//! Seeded attributed graphs with community structure.
//!
//! Nodes belong to communities and carry a heavy-tailed activity weight.
//! Edge endpoints are drawn proportionally to activity, the second endpoint
//! from the same community with probability `homophily`. Features are
//! binary bags of words, mostly drawn from a per-community vocabulary.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{canonical, FeatureMatrix, Graph};
use crate::rng::stream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_nodes: usize,
    pub num_edges: usize,
    pub num_features: usize,
    pub communities: usize,
    /// Probability that an edge stays inside its first endpoint's community.
    pub homophily: f64,
    pub words_per_node: usize,
    /// Probability that a word comes from the community vocabulary.
    pub topic_purity: f64,
    /// Pareto shape of node activity; smaller is more skewed.
    pub activity_shape: f64,
    pub seed: u64,
}

impl SynthConfig {
    /// Same node, edge and feature counts as Cora.
    pub fn cora_like(seed: u64) -> Self {
        SynthConfig {
            num_nodes: 2708,
            num_edges: 5278,
            num_features: 1433,
            communities: 7,
            homophily: 0.8,
            words_per_node: 18,
            topic_purity: 0.6,
            activity_shape: 2.5,
            seed,
        }
    }

    /// Same node, edge and feature counts as Citeseer.
    pub fn citeseer_like(seed: u64) -> Self {
        SynthConfig {
            num_nodes: 3327,
            num_edges: 4552,
            num_features: 3703,
            communities: 6,
            homophily: 0.75,
            words_per_node: 32,
            topic_purity: 0.6,
            activity_shape: 2.5,
            seed,
        }
    }

    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        match name {
            "cora" => Ok(Self::cora_like(seed)),
            "citeseer" => Ok(Self::citeseer_like(seed)),
            _ => Err(Error::InvalidArgument(format!("unknown preset {name:?} (cora, citeseer)"))),
        }
    }
}

/// Index drawn proportionally to `cum` (a running sum).
fn draw(cum: &[f64], rng: &mut impl Rng) -> usize {
    let t = rng.gen::<f64>() * cum[cum.len() - 1];
    cum.partition_point(|&c| c <= t).min(cum.len() - 1)
}

fn cumulative(ws: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    ws.map(|w| {
        acc += w;
        acc
    })
    .collect()
}

/// Graph, features and community labels.
pub fn generate(cfg: &SynthConfig) -> Result<(Graph, FeatureMatrix, Vec<usize>)> {
    let (n, k, f) = (cfg.num_nodes, cfg.communities, cfg.num_features);
    if n < 2 || k == 0 || k > n || f == 0 {
        return Err(Error::InvalidArgument("synthetic graph needs n >= 2, 1 <= communities <= n, features >= 1".into()));
    }
    if cfg.num_edges > n * (n - 1) / 4 {
        return Err(Error::InvalidArgument(format!("{} edges is too dense for {n} nodes", cfg.num_edges)));
    }
    let mut rng = stream(cfg.seed, 0x5e7);
    let mut labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    labels.shuffle(&mut rng);
    let activity: Vec<f64> = (0..n)
        .map(|_| (1.0 - rng.gen::<f64>()).powf(-1.0 / cfg.activity_shape))
        .collect();
    let all_cum = cumulative(activity.iter().copied());
    let members: Vec<Vec<usize>> = (0..k).map(|c| (0..n).filter(|&u| labels[u] == c).collect()).collect();
    let member_cum: Vec<Vec<f64>> = members.iter().map(|m| cumulative(m.iter().map(|&u| activity[u]))).collect();

    let mut seen = HashSet::with_capacity(cfg.num_edges * 2);
    let mut edges = Vec::with_capacity(cfg.num_edges);
    while edges.len() < cfg.num_edges {
        let u = draw(&all_cum, &mut rng);
        let v = if rng.gen::<f64>() < cfg.homophily {
            let c = labels[u];
            members[c][draw(&member_cum[c], &mut rng)]
        } else {
            draw(&all_cum, &mut rng)
        };
        if u != v && seen.insert(canonical(u, v)) {
            edges.push(canonical(u, v));
        }
    }
    let g = Graph::from_edges(n, edges)?;

    let vocab = (f / k).max(1);
    let mut data = vec![0.0f32; n * f];
    for u in 0..n {
        let base = (labels[u] * vocab) % f;
        for _ in 0..cfg.words_per_node {
            let w = if rng.gen::<f64>() < cfg.topic_purity {
                (base + rng.gen_range(0..vocab)) % f
            } else {
                rng.gen_range(0..f)
            };
            data[u * f + w] = 1.0;
        }
    }
    Ok((g, FeatureMatrix::new(n, f, data)?, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_match_counts() {
        let (g, x, labels) = generate(&SynthConfig::cora_like(1)).unwrap();
        assert_eq!((g.num_nodes(), g.num_edges(), x.cols()), (2708, 5278, 1433));
        assert_eq!(labels.len(), 2708);
        let intra = g.edges().iter().filter(|&&(u, v)| labels[u] == labels[v]).count();
        assert!(intra as f64 > 0.6 * g.num_edges() as f64);
    }

    #[test]
    fn deterministic_per_seed() {
        let mut c = SynthConfig::citeseer_like(4);
        c.num_nodes = 300;
        c.num_edges = 500;
        let a = generate(&c).unwrap();
        let b = generate(&c).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        c.seed = 5;
        assert_ne!(generate(&c).unwrap().0, a.0);
    }

    #[test]
    fn rejects_degenerate_configs() {
        let mut c = SynthConfig::cora_like(0);
        c.num_edges = c.num_nodes * c.num_nodes;
        assert!(generate(&c).is_err());
        assert!(SynthConfig::preset("pubmed", 0).is_err());
    }
}
