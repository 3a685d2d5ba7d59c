//! Synthetic graphs and degree profiles standing in for the citation and
//! Reddit datasets when the raw files are unavailable.

use std::collections::HashSet;

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{make_splits, Graph, RowProfile};
use crate::error::Result;

/// Published sizes of the benchmark datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetPreset {
    Cora,
    CiteSeer,
    PubMed,
    Reddit,
}

impl DatasetPreset {
    pub fn num_nodes(self) -> usize {
        match self {
            Self::Cora => 2708,
            Self::CiteSeer => 3327,
            Self::PubMed => 19717,
            Self::Reddit => 232_965,
        }
    }

    pub fn num_features(self) -> usize {
        match self {
            Self::Cora => 1433,
            Self::CiteSeer => 3703,
            Self::PubMed => 500,
            Self::Reddit => 602,
        }
    }

    pub fn num_classes(self) -> usize {
        match self {
            Self::Cora => 7,
            Self::CiteSeer => 6,
            Self::PubMed => 3,
            Self::Reddit => 41,
        }
    }

    /// Mean number of neighbours per node (self-loops excluded).
    pub fn mean_degree(self) -> f64 {
        match self {
            Self::Cora => 3.9,
            Self::CiteSeer => 2.74,
            Self::PubMed => 4.5,
            Self::Reddit => 50.0,
        }
    }

    /// Planetoid split sizes (train, val, test).
    pub fn split_sizes(self) -> (usize, usize, usize) {
        match self {
            Self::Cora => (140, 500, 1000),
            Self::CiteSeer => (120, 500, 1000),
            Self::PubMed => (60, 500, 1000),
            Self::Reddit => (153_431, 23_831, 55_703),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanetoidLikeParams {
    pub num_nodes: usize,
    pub num_features: usize,
    pub num_classes: usize,
    pub mean_degree: f64,
    /// Fraction of edges joining same-class endpoints.
    pub homophily: f64,
    pub words_per_node: usize,
    /// Probability that a node's word is drawn from its class vocabulary.
    pub topic_fraction: f64,
    pub seed: u64,
}

impl PlanetoidLikeParams {
    pub fn cora_like(seed: u64) -> Self {
        Self::for_preset(DatasetPreset::Cora, seed)
    }

    /// Published sizes of `preset` with citation-graph homophily and sparsity.
    pub fn for_preset(preset: DatasetPreset, seed: u64) -> Self {
        Self {
            num_nodes: preset.num_nodes(),
            num_features: preset.num_features(),
            num_classes: preset.num_classes(),
            mean_degree: preset.mean_degree(),
            homophily: 0.81,
            words_per_node: 18,
            topic_fraction: 0.2,
            seed,
        }
    }

    pub fn tiny(num_nodes: usize, num_features: usize, num_classes: usize, seed: u64) -> Self {
        Self {
            num_nodes,
            num_features,
            num_classes,
            mean_degree: 3.0,
            homophily: 0.8,
            words_per_node: (num_features / 4).max(1),
            topic_fraction: 0.5,
            seed,
        }
    }
}

fn pareto_weights(rng: &mut ChaCha8Rng, n: usize, shape: f64) -> Vec<f64> {
    (0..n)
        .map(|_| (1.0 - rng.gen::<f64>()).powf(-1.0 / shape))
        .collect()
}

fn cumulative(w: &[f64]) -> Vec<f64> {
    w.iter()
        .scan(0.0, |acc, &x| {
            *acc += x;
            Some(*acc)
        })
        .collect()
}

fn pick(rng: &mut ChaCha8Rng, cum: &[f64]) -> usize {
    let total = *cum.last().expect("non-empty");
    let x = rng.gen::<f64>() * total;
    cum.partition_point(|&c| c <= x).min(cum.len() - 1)
}

/// Degree-corrected stochastic block model with class-conditioned bag-of-words
/// features. Class sizes decay geometrically like the citation datasets.
pub fn planetoid_like(p: &PlanetoidLikeParams) -> Result<Graph> {
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let n = p.num_nodes;
    let c = p.num_classes.max(1);

    let shares: Vec<f64> = (0..c).map(|k| 0.75f64.powi(k as i32)).collect();
    let share_cum = cumulative(&shares);
    let labels: Vec<usize> = (0..n).map(|_| pick(&mut rng, &share_cum)).collect();

    let weights = pareto_weights(&mut rng, n, 2.5);
    let by_class: Vec<Vec<usize>> = (0..c)
        .map(|k| (0..n).filter(|&i| labels[i] == k).collect())
        .collect();
    let class_cum: Vec<Vec<f64>> = by_class
        .iter()
        .map(|members| cumulative(&members.iter().map(|&i| weights[i]).collect::<Vec<_>>()))
        .collect();
    let all_cum = cumulative(&weights);

    let target_edges = ((p.mean_degree * n as f64) / 2.0).round() as usize;
    let max_edges = n * (n - 1) / 2;
    let target_edges = target_edges.min(max_edges);
    let mut seen = HashSet::with_capacity(target_edges);
    let mut edges = Vec::with_capacity(target_edges);
    let mut attempts = 0usize;
    while edges.len() < target_edges && attempts < 50 * target_edges + 1000 {
        attempts += 1;
        let u = pick(&mut rng, &all_cum);
        let same = rng.gen::<f64>() < p.homophily;
        let v = if same && by_class[labels[u]].len() > 1 {
            by_class[labels[u]][pick(&mut rng, &class_cum[labels[u]])]
        } else {
            let v = pick(&mut rng, &all_cum);
            if c > 1 && labels[v] == labels[u] {
                continue;
            }
            v
        };
        if u != v && seen.insert((u.min(v), u.max(v))) {
            edges.push((u, v));
        }
    }

    let f = p.num_features;
    let block = (f / c).max(1);
    let mut features = Array2::zeros((n, f));
    for i in 0..n {
        for _ in 0..p.words_per_node {
            let word = if rng.gen::<f64>() < p.topic_fraction {
                (labels[i] * block + rng.gen_range(0..block)).min(f - 1)
            } else {
                rng.gen_range(0..f)
            };
            features[[i, word]] = 1.0;
        }
    }

    let train = (20 * c).min(n / 3).max(1);
    let val = (n / 5).min(500);
    let test = (n / 3).min(1000);
    let splits = make_splits(&labels, c, train, val, test, 0)?;
    let mut g = Graph::from_parts(features, labels, c, edges, splits)?;
    g.class_names = (0..c).map(|k| format!("class{k}")).collect();
    Ok(g)
}

/// Per-row nnz of a power-law graph's adjacency with self-loops included.
/// Only the profile is materialized, which keeps Reddit-scale workloads cheap.
pub fn power_law_profile(num_nodes: usize, mean_degree: f64, seed: u64) -> RowProfile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = pareto_weights(&mut rng, num_nodes, 2.5);
    let mean_w = w.iter().sum::<f64>() / num_nodes.max(1) as f64;
    let cap = num_nodes.saturating_sub(1);
    let counts = w
        .iter()
        .map(|&x| {
            let expected = mean_degree * x / mean_w;
            let d = expected.floor() as usize + usize::from(rng.gen::<f64>() < expected.fract());
            d.min(cap) + 1
        })
        .collect();
    RowProfile::from_counts(counts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reddit_descriptor_size() {
        assert_eq!(DatasetPreset::Reddit.num_nodes(), 232_965);
        assert_eq!(DatasetPreset::CiteSeer.num_features(), 3703);
        let p = power_law_profile(DatasetPreset::Reddit.num_nodes(), 50.0, 1);
        assert_eq!(p.num_rows(), 232_965);
        let mean = p.total_nnz as f64 / p.num_rows() as f64 - 1.0;
        assert!((mean - 50.0).abs() < 2.0, "mean degree {mean}");
    }

    #[test]
    fn cora_like_shape() {
        let g = planetoid_like(&PlanetoidLikeParams::cora_like(3)).unwrap();
        assert_eq!(g.num_nodes, 2708);
        assert_eq!(g.num_features(), 1433);
        assert_eq!(g.num_classes, 7);
        assert!(g.adjacency.is_symmetric());
        let mean = 2.0 * g.num_edges as f64 / g.num_nodes as f64;
        assert!((mean - 3.9).abs() < 0.2, "mean degree {mean}");
        assert_eq!(g.splits.train.len(), 140);
        g.splits.check(g.num_nodes).unwrap();
    }

    #[test]
    fn deterministic_per_seed() {
        let a = planetoid_like(&PlanetoidLikeParams::tiny(40, 8, 3, 9)).unwrap();
        let b = planetoid_like(&PlanetoidLikeParams::tiny(40, 8, 3, 9)).unwrap();
        assert_eq!(a.adjacency, b.adjacency);
        assert_eq!(a.features, b.features);
    }
}
