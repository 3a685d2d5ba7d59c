//! The joint network/accelerator problem: a design is a subnetwork paired
//! with an accelerator configuration, scored by estimated accuracy and
//! simulated latency.

use std::collections::HashMap;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Metrics, SearchProblem};
use crate::accel::{mutate_config, random_config, AccelConfig, Platform};
use crate::error::{Error, Result};
use crate::graph::RowProfile;
use crate::parser::parse_subnet;
use crate::sim::simulate;
use crate::supernet::{evaluate, PreparedGraph, SharedWeights, SubnetSpec, SupernetSpace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoDesign {
    pub gnet: SubnetSpec,
    pub hw: AccelConfig,
}

/// Accuracy estimate of a subnetwork; must be deterministic.
pub trait AccuracyEvaluator: Sync {
    fn accuracy(&self, gnet: &SubnetSpec) -> Result<f64>;
}

/// Validation accuracy of the subnetwork's slice of pre-trained shared weights.
pub struct SupernetEvaluator<'a> {
    pub weights: &'a SharedWeights,
    pub graph: &'a PreparedGraph,
}

impl AccuracyEvaluator for SupernetEvaluator<'_> {
    fn accuracy(&self, gnet: &SubnetSpec) -> Result<f64> {
        let mask = if self.graph.splits.val.is_empty() {
            &self.graph.splits.train
        } else {
            &self.graph.splits.val
        };
        evaluate(gnet, self.weights, self.graph, mask)
    }
}

/// Fixed table keyed by the subnet's JSON; unlisted subnets get a
/// pseudo-random accuracy in `[0.5, 0.9)` derived from a hash, which keeps
/// smoke runs cheap and reproducible.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LookupEvaluator {
    pub table: HashMap<String, f64>,
    pub salt: u64,
}

impl LookupEvaluator {
    pub fn key(gnet: &SubnetSpec) -> Result<String> {
        Ok(serde_json::to_string(gnet)?)
    }
}

impl AccuracyEvaluator for LookupEvaluator {
    fn accuracy(&self, gnet: &SubnetSpec) -> Result<f64> {
        let key = Self::key(gnet)?;
        if let Some(&acc) = self.table.get(&key) {
            return Ok(acc);
        }
        let mut h = Sha256::new();
        h.update(self.salt.to_le_bytes());
        h.update(key.as_bytes());
        let digest = h.finalize();
        let bits = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
        Ok(0.5 + 0.4 * (bits >> 11) as f64 / (1u64 << 53) as f64)
    }
}

/// Graph dimensions the workload parser needs.
#[derive(Debug, Clone)]
pub struct GraphShape {
    pub num_nodes: usize,
    pub num_features: usize,
    pub num_classes: usize,
    /// Row non-zeros of the adjacency with self-loops.
    pub profile: RowProfile,
}

impl GraphShape {
    pub fn of(graph: &PreparedGraph) -> Self {
        Self {
            num_nodes: graph.features.nrows(),
            num_features: graph.features.ncols(),
            num_classes: graph.num_classes,
            profile: crate::graph::sparsity_profile(&graph.support),
        }
    }
}

pub struct CoSearchProblem<'a, E: AccuracyEvaluator> {
    pub space: &'a SupernetSpace,
    pub platform: &'a Platform,
    pub tile_options: usize,
    pub shape: &'a GraphShape,
    pub evaluator: &'a E,
}

impl<E: AccuracyEvaluator> CoSearchProblem<'_, E> {
    /// Simulated latency, then accuracy; any refusal is an error.
    pub fn try_measure(&self, design: &CoDesign) -> Result<Metrics> {
        if !self.space.contains(&design.gnet) {
            return Err(Error::Argument("subnet lies outside the search space".into()));
        }
        let s = self.shape;
        let workloads = parse_subnet(&design.gnet, s.num_nodes, s.num_features, s.num_classes, &s.profile)?;
        let report = simulate(&workloads, &design.hw, self.platform)?;
        let accuracy = self.evaluator.accuracy(&design.gnet)?;
        Ok(Metrics {
            accuracy,
            latency_seconds: report.latency_seconds,
        })
    }
}

impl<E: AccuracyEvaluator> SearchProblem for CoSearchProblem<'_, E> {
    type Design = CoDesign;

    fn random(&self, rng: &mut ChaCha8Rng) -> CoDesign {
        CoDesign {
            gnet: self.space.sample_uniform(rng),
            hw: random_config(self.platform, self.tile_options, rng),
        }
    }

    fn mutate(&self, design: &CoDesign, rate: f64, rng: &mut ChaCha8Rng) -> CoDesign {
        CoDesign {
            gnet: self.space.mutate(&design.gnet, rate, rng),
            hw: mutate_config(&design.hw, rate, rng),
        }
    }

    fn measure(&self, design: &CoDesign) -> Option<Metrics> {
        match self.try_measure(design) {
            Ok(m) => Some(m),
            Err(e) => {
                log::debug!("design refused: {e}");
                None
            }
        }
    }
}
