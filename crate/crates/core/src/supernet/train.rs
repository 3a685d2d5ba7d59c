use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{accuracy, forward, objective_and_gradient, Mode, PreparedGraph};
use super::space::{SubnetSpec, SupernetSpace};
use super::weights::{AdamParams, SharedWeights};
use crate::error::{Error, Result};

/// Sampling seed used by every evaluation so accuracies are reproducible.
pub const EVAL_SEED: u64 = 0x5eed_e7a1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2_coefficient: f64,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            epochs: 1000,
            l2_coefficient: 5e-4,
            dropout_rate: 0.5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Argument("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Argument("dropout_rate must lie in [0, 1)".into()));
        }
        if !(self.l2_coefficient >= 0.0) {
            return Err(Error::Argument("l2_coefficient must be non-negative".into()));
        }
        Ok(())
    }

    fn mode(&self) -> Mode {
        Mode::Train {
            dropout: self.dropout_rate,
        }
    }
}

/// One Adam step on the training mask; returns the objective before the update.
///
/// The learning rate is not range-checked here so that a zero rate can be used
/// to probe the update path.
pub fn train_step(
    subnet: &SubnetSpec,
    weights: &mut SharedWeights,
    graph: &PreparedGraph,
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<f64> {
    let (j, grads) = objective_and_gradient(
        subnet,
        weights,
        graph,
        &graph.splits.train,
        cfg.l2_coefficient,
        cfg.mode(),
        rng,
    )?;
    if !j.is_finite() {
        return Err(Error::Diverged(j));
    }
    weights.apply_adam(&grads, &AdamParams::with_lr(cfg.learning_rate));
    Ok(j)
}

/// Uniform-sampling supernet training; returns the per-epoch objective.
pub fn pretrain(
    space: &SupernetSpace,
    weights: &mut SharedWeights,
    graph: &PreparedGraph,
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    cfg.check()?;
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let subnet = space.sample_uniform(rng);
        let j = train_step(&subnet, weights, graph, cfg, rng)?;
        if epoch % 100 == 0 {
            log::debug!("epoch {epoch}: objective {j:.4}");
        }
        losses.push(j);
    }
    Ok(losses)
}

/// Accuracy on `mask` with dropout off and a fixed sampling seed.
pub fn evaluate(
    subnet: &SubnetSpec,
    weights: &SharedWeights,
    graph: &PreparedGraph,
    mask: &[usize],
) -> Result<f64> {
    if mask.is_empty() {
        return Err(Error::Argument("evaluation mask is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(EVAL_SEED);
    let out = forward(subnet, weights, graph, &mut rng, Mode::Eval)?;
    accuracy(out.probs.view(), &graph.labels, mask)
}

#[derive(Debug, Clone)]
pub struct FinetuneResult {
    pub weights: SharedWeights,
    pub losses: Vec<f64>,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
}

/// Trains `subnet` from a fresh initialization sized to the subnet alone.
pub fn finetune(subnet: &SubnetSpec, graph: &PreparedGraph, cfg: &TrainConfig) -> Result<FinetuneResult> {
    let space = SupernetSpace::singleton(subnet);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut weights = SharedWeights::init(&space, graph.features.ncols(), &mut rng)?;
    let losses = pretrain(&space, &mut weights, graph, cfg, &mut rng)?;
    let val_accuracy = if graph.splits.val.is_empty() {
        f64::NAN
    } else {
        evaluate(subnet, &weights, graph, &graph.splits.val)?
    };
    let test_accuracy = evaluate(subnet, &weights, graph, &graph.splits.test)?;
    Ok(FinetuneResult {
        weights,
        losses,
        val_accuracy,
        test_accuracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::synthetic::{planetoid_like, PlanetoidLikeParams};

    fn tiny() -> PreparedGraph {
        PreparedGraph::new(&planetoid_like(&PlanetoidLikeParams::tiny(60, 12, 3, 4)).unwrap()).unwrap()
    }

    #[test]
    fn zero_learning_rate_leaves_weights() {
        let g = tiny();
        let space = SupernetSpace::standard(1, Some(3));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut w = SharedWeights::init(&space, 12, &mut rng).unwrap();
        let before = w.clone();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        let subnet = space.sample_uniform(&mut rng);
        train_step(&subnet, &mut w, &g, &cfg, &mut rng).unwrap();
        for ((_, a), (_, b)) in before.named().into_iter().zip(w.named()) {
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn zero_epochs_is_identity() {
        let g = tiny();
        let space = SupernetSpace::standard(1, Some(3));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut w = SharedWeights::init(&space, 12, &mut rng).unwrap();
        let before = w.clone();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(pretrain(&space, &mut w, &g, &cfg, &mut rng).unwrap().is_empty());
        assert_eq!(w, before);
    }

    #[test]
    fn singleton_space_matches_plain_training() {
        let g = tiny();
        let subnet = SubnetSpec::gcn(8, 3);
        let space = SupernetSpace::singleton(&subnet);
        let cfg = TrainConfig {
            epochs: 20,
            learning_rate: 0.01,
            ..TrainConfig::default()
        };
        let mut rng_a = ChaCha8Rng::seed_from_u64(3);
        let mut wa = SharedWeights::init(&space, 12, &mut rng_a).unwrap();
        let la = pretrain(&space, &mut wa, &g, &cfg, &mut rng_a).unwrap();

        let mut rng_b = ChaCha8Rng::seed_from_u64(3);
        let mut wb = SharedWeights::init(&space, 12, &mut rng_b).unwrap();
        let lb: Vec<f64> = (0..cfg.epochs)
            .map(|_| train_step(&subnet, &mut wb, &g, &cfg, &mut rng_b).unwrap())
            .collect();
        assert_eq!(
            la.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            lb.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn evaluation_is_deterministic() {
        let g = tiny();
        let space = SupernetSpace::standard(1, Some(3));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = SharedWeights::init(&space, 12, &mut rng).unwrap();
        let mut subnet = space.sample_uniform(&mut rng);
        subnet.layers[0].sampling_rate = 0.5;
        let a = evaluate(&subnet, &w, &g, &g.splits.val).unwrap();
        let b = evaluate(&subnet, &w, &g, &g.splits.val).unwrap();
        assert_eq!(a, b);
        assert!(evaluate(&subnet, &w, &g, &[]).is_err());
    }

    #[test]
    fn finetune_is_deterministic_and_learns() {
        let g = tiny();
        let cfg = TrainConfig {
            epochs: 150,
            learning_rate: 0.01,
            ..TrainConfig::default()
        };
        let subnet = SubnetSpec::gcn(16, 3);
        let a = finetune(&subnet, &g, &cfg).unwrap();
        let b = finetune(&subnet, &g, &cfg).unwrap();
        assert_eq!(a.test_accuracy, b.test_accuracy);
        assert!(a.losses.last().unwrap() < &a.losses[0]);
        let untrained = finetune(&subnet, &g, &TrainConfig { epochs: 0, ..cfg }).unwrap();
        assert!((0.0..=1.0).contains(&untrained.test_accuracy));
    }

    #[test]
    fn config_check() {
        assert!(TrainConfig::default().check().is_ok());
        assert!(TrainConfig { dropout_rate: 1.0, ..TrainConfig::default() }.check().is_err());
        assert!(TrainConfig { learning_rate: 0.0, ..TrainConfig::default() }.check().is_err());
    }
}
