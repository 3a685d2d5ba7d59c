//! Turns a subnetwork into the sequence of matrix products the accelerator
//! executes, layer by layer.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{sparsity_profile, RowProfile, SparseMatrix};
use crate::supernet::{Aggregation, SubnetSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    AttentionPrepass,
    Aggregation,
    Combination,
    GinMlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperandKind {
    Sparse,
    Dense,
}

/// `left (m x k) * right (k x n)`, executed `repeat` times (once per attention head
/// where heads need separate products).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatmulOp {
    pub phase: Phase,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub left_kind: OperandKind,
    /// Non-zeros of the left operand (`m * k` when dense).
    pub left_nnz: usize,
    /// Per-row non-zeros of a sparse left operand.
    #[serde(skip)]
    pub profile: Option<Arc<RowProfile>>,
    /// Elementwise work on the activation lanes (attention scores, softmax).
    pub edge_op_count: u64,
    pub repeat: usize,
    /// Operands produced by an earlier product and eligible to stay on chip.
    pub left_intermediate: bool,
    pub right_intermediate: bool,
    pub output_intermediate: bool,
}

impl MatmulOp {
    fn dense(phase: Phase, m: usize, k: usize, n: usize) -> Self {
        Self {
            phase,
            m,
            k,
            n,
            left_kind: OperandKind::Dense,
            left_nnz: m * k,
            profile: None,
            edge_op_count: 0,
            repeat: 1,
            left_intermediate: false,
            right_intermediate: false,
            output_intermediate: true,
        }
    }

    pub fn is_sparse(&self) -> bool {
        self.left_kind == OperandKind::Sparse
    }

    /// Multiply-accumulates of one execution.
    pub fn macs_once(&self) -> u64 {
        self.left_nnz as u64 * self.n as u64
    }

    /// Multiply-accumulates over all repeats.
    pub fn macs(&self) -> u64 {
        self.macs_once() * self.repeat as u64
    }

    /// Per-row non-zeros of the left operand, materializing the dense case.
    pub fn row_nnz(&self) -> Vec<usize> {
        match &self.profile {
            Some(p) => p.per_row_nnz.clone(),
            None => vec![self.k; self.m],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerWorkload {
    pub layer: usize,
    pub ops: Vec<MatmulOp>,
    pub output_rows: usize,
    pub output_cols: usize,
}

impl LayerWorkload {
    pub fn macs(&self) -> u64 {
        self.ops.iter().map(MatmulOp::macs).sum()
    }
}

pub fn total_macs(workloads: &[LayerWorkload]) -> u64 {
    workloads.iter().map(LayerWorkload::macs).sum()
}

/// Row profile of the adjacency as the accelerator sees it.
pub fn analyze_sparsity(adj: &SparseMatrix) -> RowProfile {
    sparsity_profile(adj)
}

/// Expected per-row non-zeros after keeping each off-diagonal entry with
/// probability `rate`. Self-loops stay; rows are rounded cumulatively so the
/// total matches the expectation to within one entry.
pub fn sampled_profile(profile: &RowProfile, rate: f64) -> RowProfile {
    if rate >= 1.0 {
        return profile.clone();
    }
    let mut acc = 0.0f64;
    let mut emitted = 0usize;
    let counts = profile
        .per_row_nnz
        .iter()
        .map(|&r| {
            if r > 0 {
                acc += 1.0 + rate * (r - 1) as f64;
            }
            let upto = acc.round() as usize;
            let here = upto - emitted;
            emitted = upto;
            here.min(r)
        })
        .collect();
    RowProfile::from_counts(counts)
}

/// Per layer: optional attention pre-pass, aggregation, combination and the
/// optional GIN hidden product, in execution order. `profile` describes the
/// adjacency with self-loops.
pub fn parse_subnet(
    subnet: &SubnetSpec,
    num_nodes: usize,
    num_features: usize,
    num_classes: usize,
    profile: &RowProfile,
) -> Result<Vec<LayerWorkload>> {
    if profile.num_rows() != num_nodes {
        return Err(Error::Argument(format!(
            "profile has {} rows for {num_nodes} nodes",
            profile.num_rows()
        )));
    }
    if num_nodes == 0 || num_features == 0 || num_classes == 0 {
        return Err(Error::Argument("zero graph dimension".into()));
    }
    let n = num_nodes;
    let last = subnet.layers.len().saturating_sub(1);
    let mut f = num_features;
    let mut out = Vec::with_capacity(subnet.layers.len());
    for (l, c) in subnet.layers.iter().enumerate() {
        if c.hidden_dim == 0 || c.heads == 0 {
            return Err(Error::Argument(format!("layer {l}: zero hidden dim or head count")));
        }
        let is_final = l == last;
        let k = if is_final { num_classes } else { c.hidden_dim };
        let heads = if c.attention.is_learned() { c.heads } else { 1 };
        let sampled = Arc::new(sampled_profile(profile, c.sampling_rate));
        let nnz = sampled.total_nnz;
        let input_on_chip = l > 0;
        let mut ops = Vec::new();

        if c.attention.is_learned() {
            let mut pre = MatmulOp::dense(Phase::AttentionPrepass, n, f, 2 * heads);
            pre.edge_op_count = (3 * nnz as u64 + n as u64) * heads as u64;
            pre.left_intermediate = input_on_chip;
            ops.push(pre);
        }

        ops.push(MatmulOp {
            phase: Phase::Aggregation,
            m: n,
            k: n,
            n: f,
            left_kind: OperandKind::Sparse,
            left_nnz: nnz,
            profile: Some(sampled),
            edge_op_count: 0,
            repeat: heads,
            left_intermediate: false,
            right_intermediate: input_on_chip,
            output_intermediate: true,
        });

        let mut comb = MatmulOp::dense(Phase::Combination, n, f, k);
        comb.left_intermediate = true;
        // averaged heads of the prediction layer each need the full product
        if is_final {
            comb.repeat = heads;
        }
        ops.push(comb);

        if c.aggregation == Aggregation::Mlp {
            let mut gin = MatmulOp::dense(Phase::GinMlp, n, k, k);
            gin.left_intermediate = true;
            ops.push(gin);
        }

        if is_final {
            let tail = ops.last_mut().expect("non-empty");
            tail.edge_op_count += 2 * n as u64;
            tail.output_intermediate = false;
        }
        out.push(LayerWorkload {
            layer: l,
            ops,
            output_rows: n,
            output_cols: k,
        });
        f = k;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::supernet::{Activation, AttentionType, LayerChoice, SupernetSpace};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn choice(attention: AttentionType, heads: usize, hidden: usize, rate: f64) -> LayerChoice {
        LayerChoice {
            attention,
            aggregation: Aggregation::Sum,
            activation: Activation::Relu,
            hidden_dim: hidden,
            heads,
            sampling_rate: rate,
        }
    }

    fn uniform(n: usize, r: usize) -> RowProfile {
        RowProfile::from_counts(vec![r; n])
    }

    #[test]
    fn citeseer_single_layer_skip() {
        let n = 3327;
        let subnet = SubnetSpec {
            layers: vec![choice(AttentionType::Skip, 1, 16, 1.0)],
        };
        let w = parse_subnet(&subnet, n, 3703, 16, &uniform(n, 4)).unwrap();
        let ops = &w[0].ops;
        assert_eq!(ops.len(), 2);
        assert_eq!((ops[0].phase, ops[0].m, ops[0].k, ops[0].n), (Phase::Aggregation, n, n, 3703));
        assert!(ops[0].is_sparse());
        assert_eq!((ops[1].phase, ops[1].m, ops[1].k, ops[1].n), (Phase::Combination, n, 3703, 16));
        assert_eq!(ops[1].edge_op_count, 2 * n as u64);
    }

    #[test]
    fn half_sampling_halves_off_diagonal_entries() {
        let p = RowProfile::from_counts(vec![10, 10, 10, 70]);
        let s = sampled_profile(&p, 0.5);
        assert_eq!(s.total_nnz, 4 + (100 - 4) / 2);
        assert!(s.per_row_nnz.iter().all(|&r| r >= 1));
    }

    #[test]
    fn gat_prepass_shape() {
        let subnet = SubnetSpec {
            layers: vec![choice(AttentionType::Gat, 2, 4, 1.0), choice(AttentionType::Gcn, 1, 3, 1.0)],
        };
        let p = uniform(5, 3);
        let w = parse_subnet(&subnet, 5, 8, 3, &p).unwrap();
        let pre = &w[0].ops[0];
        assert_eq!((pre.phase, pre.m, pre.k, pre.n), (Phase::AttentionPrepass, 5, 8, 4));
        assert_eq!(pre.edge_op_count, 2 * (3 * 15 + 5));
        assert_eq!(w[0].ops[1].repeat, 2);
        assert!(w[1].ops[0].right_intermediate);
    }

    #[test]
    fn zero_hidden_is_rejected() {
        let subnet = SubnetSpec {
            layers: vec![choice(AttentionType::Gcn, 1, 0, 1.0)],
        };
        assert!(parse_subnet(&subnet, 3, 2, 2, &uniform(3, 1)).is_err());
    }

    #[test]
    fn dims_chain_for_random_subnets() {
        let space = SupernetSpace::standard(2, Some(7));
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let profile = uniform(50, 5);
        for _ in 0..10_000 {
            let s = space.sample_uniform(&mut rng);
            let w = parse_subnet(&s, 50, 30, 7, &profile).unwrap();
            let mut width = 30;
            for layer in &w {
                let agg = layer.ops.iter().find(|o| o.phase == Phase::Aggregation).unwrap();
                assert_eq!(agg.n, width);
                let mut cols = agg.n;
                for op in layer.ops.iter().filter(|o| matches!(o.phase, Phase::Combination | Phase::GinMlp)) {
                    assert_eq!(op.k, cols);
                    cols = op.n;
                }
                assert_eq!(cols, layer.output_cols);
                width = layer.output_cols;
            }
            assert_eq!(width, 7);
        }
    }
}
