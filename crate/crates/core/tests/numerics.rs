use gcos_core::graph::{normalize_adjacency, DatasetSplit, Graph};
use gcos_core::supernet::{
    attention_coefficients, forward, objective, objective_and_gradient, Activation, Aggregation, AttentionType,
    LayerChoice, LayerOptions, Mode, PreparedGraph, SharedWeights, SubnetSpec, SupernetSpace,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_graph(n: usize, f: usize, classes: usize, seed: u64) -> PreparedGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let features = Array2::from_shape_fn((n, f), |_| rng.gen_range(-1.0..1.0));
    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (i, rng.gen_range(0..i))).collect();
    for _ in 0..n {
        let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
        edges.push((a, b));
    }
    let splits = DatasetSplit {
        train: (0..n / 2).collect(),
        val: (n / 2..n).collect(),
        test: vec![],
    };
    PreparedGraph::new(&Graph::from_parts(features, labels, classes, edges, splits).unwrap()).unwrap()
}

/// Small option lists keep the finite-difference sweep cheap while still
/// exercising every attention, aggregation and activation type.
fn small_space(classes: usize) -> SupernetSpace {
    let mut space = SupernetSpace::standard(2, Some(classes));
    for layer in &mut space.layers {
        layer.attention_heads = vec![1, 2, 4];
        layer.sampling_rates = vec![0.5, 1.0];
    }
    for layer in &mut space.layers[..2] {
        layer.hidden_dims = vec![4, 8];
    }
    space
}

/// Central differences with kink detection: coordinates whose one-sided
/// slopes disagree straddle a non-differentiable point and are skipped.
#[test]
fn gradients_match_finite_differences() {
    let classes = 3;
    let g = random_graph(10, 6, classes, 7);
    let space = small_space(classes);
    let mask: Vec<usize> = (0..10).collect();
    let eps = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for trial in 0..20 {
        let mut weights = SharedWeights::init(&space, 6, &mut rng).unwrap();
        let subnet = space.sample_uniform(&mut rng);
        let seed = rng.gen::<u64>();
        let eval = |w: &SharedWeights| {
            objective(&subnet, w, &g, &mask, 5e-4, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
        };
        let (_, grads) =
            objective_and_gradient(&subnet, &weights, &g, &mask, 5e-4, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(seed))
                .unwrap();
        let (mut diff, mut norm_a, mut norm_b) = (0.0, 0.0, 0.0);
        let (mut checked, mut skipped) = (0, 0);
        for (id, grad) in &grads {
            for ((i, j), &analytic) in grad.indexed_iter() {
                let base = weights.param(id).unwrap().value[[i, j]];
                let j0 = eval(&weights);
                weights.param_mut(id).unwrap().value[[i, j]] = base + eps;
                let jp = eval(&weights);
                weights.param_mut(id).unwrap().value[[i, j]] = base - eps;
                let jm = eval(&weights);
                weights.param_mut(id).unwrap().value[[i, j]] = base;
                let (fwd, bwd) = ((jp - j0) / eps, (j0 - jm) / eps);
                if (fwd - bwd).abs() > 1e-3 * (fwd.abs() + bwd.abs()) + 1e-7 {
                    skipped += 1;
                    continue;
                }
                let numeric = (jp - jm) / (2.0 * eps);
                diff += (analytic - numeric).powi(2);
                norm_a += analytic * analytic;
                norm_b += numeric * numeric;
                checked += 1;
            }
        }
        let rel = diff.sqrt() / norm_a.sqrt().max(norm_b.sqrt()).max(1e-12);
        worst = worst.max(rel);
        assert!(checked > 0 && skipped * 20 <= checked, "trial {trial}: {skipped} kinks of {checked}");
        assert!(rel < 1e-4, "trial {trial}: relative error {rel:e} for {subnet:?}");
    }
    eprintln!("worst relative gradient error {worst:e}");
}

#[test]
fn gcn_forward_matches_dense_product() {
    for (seed, act) in [(1, Activation::Relu), (2, Activation::Tanh), (3, Activation::Elu), (4, Activation::Linear)] {
        let n = 12 + 6 * seed as usize;
        let g = random_graph(n, 5, 4, seed);
        let subnet = SubnetSpec {
            layers: vec![
                LayerChoice {
                    activation: act,
                    ..SubnetSpec::gcn(8, 4).layers[0].clone()
                },
                SubnetSpec::gcn(8, 4).layers[1].clone(),
            ],
        };
        let space = SupernetSpace::singleton(&subnet);
        let w = SharedWeights::init(&space, 5, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let out = forward(&subnet, &w, &g, &mut ChaCha8Rng::seed_from_u64(0), Mode::Eval).unwrap();

        let a = g.support.to_dense();
        let w0 = &w.layers[0].combine.value;
        let w1 = &w.layers[1].combine.value;
        let h = a.dot(&g.features).dot(w0).mapv(|z| act.apply(z));
        let logits = a.dot(&h).dot(w1);
        let err = (&logits - &out.logits).iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(err < 1e-6, "{act:?}: {err:e}");
    }
}

#[test]
fn normalized_adjacency_matches_dense_formula() {
    let g = random_graph(9, 2, 2, 5);
    let adj = g.support.to_dense();
    let mut raw = adj.mapv(|v| f64::from(u8::from(v != 0.0)));
    let deg: Vec<f64> = raw.rows().into_iter().map(|r| r.sum()).collect();
    for ((i, j), v) in raw.indexed_iter_mut() {
        *v /= (deg[i] * deg[j]).sqrt();
    }
    let err = (&raw - &adj).iter().fold(0.0f64, |m, x| m.max(x.abs()));
    assert!(err < 1e-12);
    assert!(normalize_adjacency(&g.support, false).is_ok());
}

#[test]
fn attention_and_softmax_rows_are_stochastic() {
    let classes = 3;
    let g = random_graph(25, 6, classes, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for &att in AttentionType::ALL.iter().filter(|t| t.is_learned()) {
        let mut opts = LayerOptions::full();
        opts.attention_types = vec![att];
        opts.hidden_dims = vec![8];
        opts.aggregation_types = vec![Aggregation::Sum];
        let mut last = LayerOptions::prediction(classes);
        last.attention_types = vec![att];
        let space = SupernetSpace {
            layers: vec![opts, last],
            final_layer_fixed: true,
        };
        let w = SharedWeights::init(&space, 6, &mut rng).unwrap();
        for _ in 0..5 {
            let subnet = space.sample_uniform(&mut rng);
            for layer in 0..2 {
                let (pattern, heads) = attention_coefficients(&subnet, &w, &g, layer).unwrap();
                for alpha in &heads {
                    for i in 0..pattern.n_rows {
                        let row: f64 = alpha[pattern.row_ptr[i]..pattern.row_ptr[i + 1]].iter().sum();
                        assert!((row - 1.0).abs() < 1e-6, "{att:?} layer {layer} row {i}: {row}");
                    }
                }
            }
            let out = forward(&subnet, &w, &g, &mut rng, Mode::Eval).unwrap();
            for row in out.probs.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-6);
            }
        }
    }
}
