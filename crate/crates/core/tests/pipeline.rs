use gcos_core::accel::Platform;
use gcos_core::graph::synthetic::{planetoid_like, PlanetoidLikeParams};
use gcos_core::search::cosearch::{CoSearchProblem, GraphShape, SupernetEvaluator};
use gcos_core::search::{evolve, fitness, pareto_front, SearchParams};
use gcos_core::supernet::{evaluate, finetune, pretrain, PreparedGraph, SharedWeights, SupernetSpace, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn pretrain_search_finetune_on_a_small_graph() {
    let mut graph = planetoid_like(&PlanetoidLikeParams::tiny(120, 40, 3, 8)).unwrap();
    graph.normalize_features_l1();
    let g = PreparedGraph::new(&graph).unwrap();
    let space = SupernetSpace::standard(1, Some(3));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut weights = SharedWeights::init(&space, 40, &mut rng).unwrap();
    let cfg = TrainConfig {
        epochs: 30,
        learning_rate: 0.01,
        ..TrainConfig::default()
    };
    let losses = pretrain(&space, &mut weights, &g, &cfg, &mut rng).unwrap();
    assert_eq!(losses.len(), 30);

    let shape = GraphShape::of(&g);
    let evaluator = SupernetEvaluator {
        weights: &weights,
        graph: &g,
    };
    let platform = Platform::default();
    let problem = CoSearchProblem {
        space: &space,
        platform: &platform,
        tile_options: 10,
        shape: &shape,
        evaluator: &evaluator,
    };
    let params = SearchParams {
        pool_capacity: 20,
        outputs: 4,
        max_generations: 8,
        ..SearchParams::default()
    };
    let out = evolve(&problem, &params).unwrap();
    assert_eq!(out.top.len(), 4);
    for c in &out.top {
        let m = gcos_core::search::Metrics {
            accuracy: c.accuracy.unwrap(),
            latency_seconds: c.latency_seconds.unwrap(),
        };
        assert!((c.fitness - fitness(&m, out.latency_weight, out.latency_ref)).abs() < 1e-9);
    }
    let front = pareto_front(&out.pool);
    assert!(!front.is_empty());
    for a in &front {
        for b in &front {
            let dominated = b.accuracy >= a.accuracy
                && b.latency_seconds <= a.latency_seconds
                && (b.accuracy > a.accuracy || b.latency_seconds < a.latency_seconds);
            assert!(!dominated);
        }
    }

    let best = &out.top[0].design.gnet;
    let tuned = finetune(best, &g, &TrainConfig { epochs: 20, ..cfg }).unwrap();
    assert!((0.0..=1.0).contains(&tuned.test_accuracy));
}

/// Uniform-sampling pretraining has to lift random subnets well above chance,
/// otherwise the search ranks designs on noise.
#[test]
fn pretraining_lifts_random_subnets_above_chance() {
    let graph = planetoid_like(&PlanetoidLikeParams::tiny(300, 60, 4, 3)).unwrap();
    let g = PreparedGraph::new(&graph).unwrap();
    let space = SupernetSpace::standard(1, Some(4));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut weights = SharedWeights::init(&space, 60, &mut rng).unwrap();
    let mean_val = |w: &SharedWeights, rng: &mut ChaCha8Rng| {
        (0..30)
            .map(|_| evaluate(&space.sample_uniform(rng), w, &g, &g.splits.val).unwrap())
            .sum::<f64>()
            / 30.0
    };
    let before = mean_val(&weights, &mut ChaCha8Rng::seed_from_u64(9));
    let cfg = TrainConfig {
        epochs: 400,
        learning_rate: 0.005,
        ..TrainConfig::default()
    };
    pretrain(&space, &mut weights, &g, &cfg, &mut rng).unwrap();
    let after = mean_val(&weights, &mut ChaCha8Rng::seed_from_u64(9));
    eprintln!("mean val accuracy {before:.3} -> {after:.3}");
    assert!(after > 0.6 && after > before + 0.2, "{before:.3} -> {after:.3}");
}
