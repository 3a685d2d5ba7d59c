//! Pool-based evolutionary search with a scalarized accuracy/latency fitness.
//!
//! The loop is generic over [`SearchProblem`]; [`cosearch`] supplies the
//! joint network/accelerator problem.

pub mod cosearch;

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt::Debug;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Raw measurements of one design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub latency_seconds: f64,
}

pub trait SearchProblem: Sync {
    type Design: Clone + Debug + PartialEq + Serialize + DeserializeOwned + Send + Sync;

    fn random(&self, rng: &mut ChaCha8Rng) -> Self::Design;

    fn mutate(&self, design: &Self::Design, rate: f64, rng: &mut ChaCha8Rng) -> Self::Design;

    /// `None` when the design is refused (validation or simulation failure).
    fn measure(&self, design: &Self::Design) -> Option<Metrics>;
}

/// `accuracy + weight * reference / latency`; higher is better.
pub fn fitness(metrics: &Metrics, latency_weight: f64, latency_ref: f64) -> f64 {
    metrics.accuracy + latency_weight * latency_ref / metrics.latency_seconds
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate<D> {
    /// Insertion order; the final tie-breaker.
    pub id: u64,
    pub design: D,
    pub accuracy: Option<f64>,
    pub latency_seconds: Option<f64>,
    /// Negative infinity (written as `null`) for refused designs.
    #[serde(with = "neg_inf_as_null")]
    pub fitness: f64,
}

impl<D> Candidate<D> {
    pub fn is_valid(&self) -> bool {
        self.fitness.is_finite()
    }

    fn metrics(&self) -> Option<Metrics> {
        Some(Metrics {
            accuracy: self.accuracy?,
            latency_seconds: self.latency_seconds?,
        })
    }
}

mod neg_inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
    }
}

/// Fitness descending, then latency ascending, then insertion order.
fn rank<D>(a: &Candidate<D>, b: &Candidate<D>) -> Ordering {
    let lat = |c: &Candidate<D>| c.latency_seconds.unwrap_or(f64::INFINITY);
    b.fitness
        .total_cmp(&a.fitness)
        .then(lat(a).total_cmp(&lat(b)))
        .then(a.id.cmp(&b.id))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchParams {
    /// Stop once the top outputs average at least this fitness; `None` runs
    /// to `max_generations`.
    pub target: Option<f64>,
    pub outputs: usize,
    pub pool_capacity: usize,
    /// Fraction of the capacity born or removed per generation.
    pub birth_rate: f64,
    pub max_generations: usize,
    /// Fixed latency weight; calibrated from the first batch when absent.
    pub latency_weight: Option<f64>,
    /// Fixed latency reference; the first batch's median when absent.
    pub latency_ref: Option<f64>,
    pub mutation_rate: f64,
    pub seed: u64,
    /// Concurrent evaluations; 0 uses every core.
    pub workers: usize,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self {
            target: None,
            outputs: 10,
            pool_capacity: 100,
            birth_rate: 0.2,
            max_generations: 500,
            latency_weight: None,
            latency_ref: None,
            mutation_rate: 0.5,
            seed: 0,
            workers: 0,
        }
    }
}

impl SearchParams {
    /// Designs born or removed per generation.
    pub fn batch(&self) -> usize {
        (self.birth_rate * self.pool_capacity as f64).round() as usize
    }

    pub fn check(&self) -> Result<()> {
        if !(self.birth_rate > 0.0 && self.birth_rate < 1.0) {
            return Err(Error::Argument("birth_rate must lie in (0, 1)".into()));
        }
        if self.batch() == 0 {
            return Err(Error::Argument("birth_rate * pool_capacity must round to at least 1".into()));
        }
        if self.outputs == 0 || self.outputs > self.pool_capacity {
            return Err(Error::Argument("outputs must lie in 1..=pool_capacity".into()));
        }
        if !(0.0..=1.0).contains(&self.mutation_rate) {
            return Err(Error::Argument("mutation_rate must lie in [0, 1]".into()));
        }
        if self.latency_ref.is_some_and(|r| !(r > 0.0 && r.is_finite())) {
            return Err(Error::Argument("latency_ref must be positive".into()));
        }
        if self.latency_weight.is_some_and(|w| !w.is_finite()) {
            return Err(Error::Argument("latency_weight must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    pub pool_size: usize,
    #[serde(with = "neg_inf_as_null")]
    pub top_mean_fitness: f64,
    #[serde(with = "neg_inf_as_null")]
    pub best_fitness: f64,
    pub evaluations: usize,
}

/// Everything needed to resume a search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchState<D> {
    pub generation: usize,
    pub next_id: u64,
    pub pool: Vec<Candidate<D>>,
    pub rng: ChaCha8Rng,
    pub latency_weight: Option<f64>,
    pub latency_ref: Option<f64>,
    pub history: Vec<GenerationStats>,
    pub evaluations: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchOutcome<D> {
    pub top: Vec<Candidate<D>>,
    pub converged: bool,
    pub generations: usize,
    pub latency_weight: f64,
    pub latency_ref: f64,
    pub history: Vec<GenerationStats>,
    pub pool: Vec<Candidate<D>>,
}

pub struct Search<'p, P: SearchProblem> {
    problem: &'p P,
    params: SearchParams,
    state: SearchState<P::Design>,
    cache: HashMap<String, Option<Metrics>>,
    threads: rayon::ThreadPool,
}

impl<'p, P: SearchProblem> Search<'p, P> {
    pub fn new(problem: &'p P, params: SearchParams) -> Result<Self> {
        let state = SearchState {
            generation: 0,
            next_id: 0,
            pool: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(params.seed),
            latency_weight: params.latency_weight,
            latency_ref: params.latency_ref,
            history: Vec::new(),
            evaluations: 0,
        };
        Self::resume(problem, params, state)
    }

    /// Continues from a saved state. Pool metrics seed the evaluation cache.
    pub fn resume(problem: &'p P, params: SearchParams, state: SearchState<P::Design>) -> Result<Self> {
        params.check()?;
        let threads = rayon::ThreadPoolBuilder::new()
            .num_threads(params.workers)
            .build()
            .map_err(|e| Error::Argument(format!("worker pool: {e}")))?;
        let mut cache = HashMap::new();
        for c in &state.pool {
            cache.insert(key(&c.design)?, c.metrics());
        }
        Ok(Self {
            problem,
            params,
            state,
            cache,
            threads,
        })
    }

    pub fn state(&self) -> &SearchState<P::Design> {
        &self.state
    }

    /// Average fitness of the current top outputs (negative infinity when empty).
    pub fn top_mean(&self) -> f64 {
        top_mean(&self.state.pool, self.params.outputs)
    }

    /// The loop always runs once, then continues while below target and
    /// under the generation cap.
    pub fn finished(&self) -> bool {
        if self.state.generation == 0 {
            return false;
        }
        self.reached_target() || self.state.generation >= self.params.max_generations
    }

    fn reached_target(&self) -> bool {
        self.params.target.is_some_and(|t| self.top_mean() >= t)
    }

    /// One generation: grow by a batch while at or under capacity, else trim.
    pub fn step(&mut self) -> Result<()> {
        let batch = self.params.batch();
        if self.state.pool.len() <= self.params.pool_capacity {
            let designs: Vec<P::Design> = if self.state.pool.is_empty() {
                (0..batch).map(|_| self.problem.random(&mut self.state.rng)).collect()
            } else {
                let parents: Vec<P::Design> = self.state.pool.iter().take(batch).map(|c| c.design.clone()).collect();
                (0..batch)
                    .map(|i| {
                        self.problem
                            .mutate(&parents[i % parents.len()], self.params.mutation_rate, &mut self.state.rng)
                    })
                    .collect()
            };
            let metrics = self.measure_all(&designs)?;
            self.calibrate(&metrics);
            let weight = self.state.latency_weight.unwrap_or(0.0);
            let reference = self.state.latency_ref.unwrap_or(1.0);
            for (design, m) in designs.into_iter().zip(metrics) {
                let fit = m.map_or(f64::NEG_INFINITY, |m| fitness(&m, weight, reference));
                self.state.pool.push(Candidate {
                    id: self.state.next_id,
                    design,
                    accuracy: m.map(|m| m.accuracy),
                    latency_seconds: m.map(|m| m.latency_seconds),
                    fitness: fit,
                });
                self.state.next_id += 1;
            }
            self.state.pool.sort_by(rank);
        } else {
            let keep = self.state.pool.len().saturating_sub(batch);
            self.state.pool.truncate(keep);
        }
        self.state.generation += 1;
        let stats = GenerationStats {
            generation: self.state.generation,
            pool_size: self.state.pool.len(),
            top_mean_fitness: self.top_mean(),
            best_fitness: self.state.pool.first().map_or(f64::NEG_INFINITY, |c| c.fitness),
            evaluations: self.state.evaluations,
        };
        log::debug!(
            "generation {}: pool {} top mean {:.4}",
            stats.generation,
            stats.pool_size,
            stats.top_mean_fitness
        );
        self.state.history.push(stats);
        Ok(())
    }

    /// Measures a batch, evaluating each distinct uncached design once.
    fn measure_all(&mut self, designs: &[P::Design]) -> Result<Vec<Option<Metrics>>> {
        let keys = designs.iter().map(key).collect::<Result<Vec<_>>>()?;
        let mut pending: Vec<(String, &P::Design)> = Vec::new();
        for (k, d) in keys.iter().zip(designs) {
            if !self.cache.contains_key(k) && !pending.iter().any(|(p, _)| p == k) {
                pending.push((k.clone(), d));
            }
        }
        let problem = self.problem;
        let fresh: Vec<(String, Option<Metrics>)> = self.threads.install(|| {
            pending
                .into_par_iter()
                .map(|(k, d)| {
                    let m = problem
                        .measure(d)
                        .filter(|m| m.accuracy.is_finite() && m.latency_seconds > 0.0 && m.latency_seconds.is_finite());
                    (k, m)
                })
                .collect()
        });
        self.state.evaluations += fresh.len();
        self.cache.extend(fresh);
        Ok(keys.iter().map(|k| self.cache[k]).collect())
    }

    /// Freezes the latency reference and weight from the first measured batch.
    fn calibrate(&mut self, metrics: &[Option<Metrics>]) {
        if self.state.latency_ref.is_some() && self.state.latency_weight.is_some() {
            return;
        }
        let valid: Vec<Metrics> = metrics.iter().flatten().copied().collect();
        if valid.is_empty() {
            return;
        }
        if self.state.latency_ref.is_none() {
            let mut lat: Vec<f64> = valid.iter().map(|m| m.latency_seconds).collect();
            self.state.latency_ref = Some(median(&mut lat));
        }
        if self.state.latency_weight.is_none() {
            self.state.latency_weight = Some(valid.iter().map(|m| m.accuracy).sum::<f64>() / valid.len() as f64);
        }
        log::info!(
            "calibrated latency reference {:.3e} s, weight {:.4}",
            self.state.latency_ref.unwrap_or_default(),
            self.state.latency_weight.unwrap_or_default()
        );
    }

    pub fn run(mut self, mut on_generation: impl FnMut(&SearchState<P::Design>) -> Result<()>) -> Result<SearchOutcome<P::Design>> {
        while !self.finished() {
            self.step()?;
            on_generation(&self.state)?;
        }
        let converged = self.reached_target();
        let top = self.state.pool.iter().take(self.params.outputs).cloned().collect();
        Ok(SearchOutcome {
            top,
            converged,
            generations: self.state.generation,
            latency_weight: self.state.latency_weight.unwrap_or(0.0),
            latency_ref: self.state.latency_ref.unwrap_or(1.0),
            history: self.state.history,
            pool: self.state.pool,
        })
    }
}

fn key<D: Serialize>(design: &D) -> Result<String> {
    Ok(serde_json::to_string(design)?)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn top_mean<D>(sorted_pool: &[Candidate<D>], outputs: usize) -> f64 {
    let top = &sorted_pool[..outputs.min(sorted_pool.len())];
    if top.is_empty() {
        return f64::NEG_INFINITY;
    }
    top.iter().map(|c| c.fitness).sum::<f64>() / top.len() as f64
}

/// Runs the search to completion from a fresh pool.
pub fn evolve<P: SearchProblem>(problem: &P, params: &SearchParams) -> Result<SearchOutcome<P::Design>> {
    Search::new(problem, params.clone())?.run(|_| Ok(()))
}

/// Candidates not dominated in (higher accuracy, lower latency), fastest first.
/// Refused candidates are dropped.
pub fn pareto_front<D: Clone>(candidates: &[Candidate<D>]) -> Vec<Candidate<D>> {
    let valid: Vec<(&Candidate<D>, Metrics)> = candidates.iter().filter_map(|c| Some((c, c.metrics()?))).collect();
    let dominates = |a: &Metrics, b: &Metrics| {
        a.accuracy >= b.accuracy
            && a.latency_seconds <= b.latency_seconds
            && (a.accuracy > b.accuracy || a.latency_seconds < b.latency_seconds)
    };
    let mut front: Vec<Candidate<D>> = valid
        .iter()
        .filter(|(_, m)| !valid.iter().any(|(_, o)| dominates(o, m)))
        .map(|(c, _)| (*c).clone())
        .collect();
    front.sort_by(|a, b| {
        a.latency_seconds
            .unwrap_or(f64::INFINITY)
            .total_cmp(&b.latency_seconds.unwrap_or(f64::INFINITY))
            .then(a.id.cmp(&b.id))
    });
    front
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Six genes with ten alleles; accuracy is minus the distance to a hidden target.
    struct Hamming {
        target: [u8; 6],
    }

    impl SearchProblem for Hamming {
        type Design = [u8; 6];

        fn random(&self, rng: &mut ChaCha8Rng) -> [u8; 6] {
            std::array::from_fn(|_| rng.gen_range(0..10))
        }

        fn mutate(&self, d: &[u8; 6], rate: f64, rng: &mut ChaCha8Rng) -> [u8; 6] {
            d.map(|g| if rng.gen::<f64>() < rate { rng.gen_range(0..10) } else { g })
        }

        fn measure(&self, d: &[u8; 6]) -> Option<Metrics> {
            let dist = d.iter().zip(&self.target).filter(|(a, b)| a != b).count();
            Some(Metrics {
                accuracy: -(dist as f64),
                latency_seconds: 1.0,
            })
        }
    }

    fn toy_params(seed: u64) -> SearchParams {
        SearchParams {
            target: Some(0.0),
            outputs: 1,
            max_generations: 200,
            latency_weight: Some(0.0),
            seed,
            workers: 1,
            ..SearchParams::default()
        }
    }

    fn metrics(acc: f64, lat: f64) -> Metrics {
        Metrics {
            accuracy: acc,
            latency_seconds: lat,
        }
    }

    #[test]
    fn fitness_examples() {
        assert_eq!(fitness(&metrics(0.7, 3.0), 0.0, 1.0), 0.7);
        assert!((fitness(&metrics(0.8, 2.0), 0.8, 2.0) - 1.6).abs() < 1e-12);
        let fast = fitness(&metrics(0.5, 1.0), 0.4, 3.0);
        let slow = fitness(&metrics(0.5, 2.0), 0.4, 3.0);
        assert!((fast - slow - 0.4 * 3.0 / 2.0).abs() < 1e-12);
    }

    #[test]
    fn growth_batch_size() {
        let problem = Hamming { target: [1; 6] };
        let mut search = Search::new(&problem, toy_params(1)).unwrap();
        search.step().unwrap();
        assert_eq!(search.state().pool.len(), 20);
        search.step().unwrap();
        assert_eq!(search.state().pool.len(), 40);
    }

    #[test]
    fn reachable_target_stops_after_one_generation() {
        let problem = Hamming { target: [3; 6] };
        let params = SearchParams {
            target: Some(-100.0),
            outputs: 5,
            ..toy_params(2)
        };
        let out = evolve(&problem, &params).unwrap();
        assert_eq!(out.generations, 1);
        assert!(out.converged);
        assert_eq!(out.top.len(), 5);
    }

    #[test]
    fn pool_bounds_and_monotone_elite() {
        let problem = Hamming { target: [4, 2, 0, 9, 9, 1] };
        let params = SearchParams {
            target: None,
            outputs: 10,
            max_generations: 60,
            ..toy_params(3)
        };
        let mut search = Search::new(&problem, params).unwrap();
        let mut last = f64::NEG_INFINITY;
        while !search.finished() {
            let before = search.state().pool.len();
            search.step().unwrap();
            let after = search.state().pool.len();
            assert!(after <= 120);
            if after < before {
                assert!(after <= 100);
            }
            let mean = search.top_mean();
            assert!(mean >= last);
            last = mean;
        }
    }

    #[test]
    fn finds_hidden_optimum_mostly() {
        let hits = (0..20u64)
            .filter(|&seed| {
                let problem = Hamming {
                    target: std::array::from_fn(|i| ((seed as usize * 7 + i * 3) % 10) as u8),
                };
                let out = evolve(&problem, &toy_params(seed)).unwrap();
                out.converged && out.top[0].design == problem.target
            })
            .count();
        assert!(hits >= 18, "{hits} of 20");
    }

    #[test]
    fn search_is_deterministic_and_resumable() {
        let problem = Hamming { target: [5, 5, 0, 0, 7, 7] };
        let params = SearchParams {
            target: None,
            max_generations: 30,
            workers: 3,
            ..toy_params(9)
        };
        let a = evolve(&problem, &params).unwrap();
        let b = evolve(&problem, &params).unwrap();
        assert_eq!(a.top, b.top);

        let mut first = Search::new(&problem, params.clone()).unwrap();
        for _ in 0..12 {
            first.step().unwrap();
        }
        let saved = serde_json::to_string(first.state()).unwrap();
        let restored: SearchState<[u8; 6]> = serde_json::from_str(&saved).unwrap();
        let c = Search::resume(&problem, params, restored).unwrap().run(|_| Ok(())).unwrap();
        assert_eq!(a.top, c.top);
        assert_eq!(a.history, c.history);
    }

    #[test]
    fn calibration_uses_first_batch() {
        struct Fixed;
        impl SearchProblem for Fixed {
            type Design = u32;
            fn random(&self, rng: &mut ChaCha8Rng) -> u32 {
                rng.gen_range(1..5)
            }
            fn mutate(&self, d: &u32, _: f64, _: &mut ChaCha8Rng) -> u32 {
                *d
            }
            fn measure(&self, d: &u32) -> Option<Metrics> {
                (*d != 4).then(|| metrics(0.1 * *d as f64, *d as f64))
            }
        }
        let params = SearchParams {
            pool_capacity: 10,
            outputs: 2,
            max_generations: 1,
            latency_weight: None,
            ..toy_params(5)
        };
        let out = evolve(&Fixed, &params).unwrap();
        let valid: Vec<_> = out.pool.iter().filter(|c| c.is_valid()).collect();
        let mean_acc = valid.iter().map(|c| c.accuracy.unwrap()).sum::<f64>() / valid.len() as f64;
        assert!((out.latency_weight - mean_acc).abs() < 1e-12);
        for c in &out.pool {
            match c.metrics() {
                Some(m) => assert!((c.fitness - fitness(&m, out.latency_weight, out.latency_ref)).abs() < 1e-9),
                None => assert_eq!(c.fitness, f64::NEG_INFINITY),
            }
        }
        // refused designs sort last
        assert!(out.pool.windows(2).all(|w| rank(&w[0], &w[1]) != Ordering::Greater));
    }

    #[test]
    fn pareto_examples() {
        let cand = |id, acc, lat| Candidate {
            id,
            design: id,
            accuracy: Some(acc),
            latency_seconds: Some(lat),
            fitness: acc,
        };
        let front = pareto_front(&[cand(0, 0.8, 0.010), cand(1, 0.7, 0.020)]);
        assert_eq!(front.iter().map(|c| c.id).collect::<Vec<_>>(), vec![0]);
        let front = pareto_front(&[cand(0, 0.8, 0.010), cand(1, 0.9, 0.020)]);
        assert_eq!(front.len(), 2);
        assert_eq!(pareto_front(&[cand(3, 0.5, 1.0)]).len(), 1);
    }

    #[test]
    fn params_check() {
        assert!(SearchParams::default().check().is_ok());
        assert!(SearchParams { birth_rate: 0.001, ..SearchParams::default() }.check().is_err());
        assert!(SearchParams { outputs: 101, ..SearchParams::default() }.check().is_err());
    }

    #[test]
    fn refused_fitness_round_trips_as_null() {
        let c = Candidate {
            id: 1,
            design: 0u8,
            accuracy: None,
            latency_seconds: None,
            fitness: f64::NEG_INFINITY,
        };
        let s = serde_json::to_string(&c).unwrap();
        assert!(s.contains("\"fitness\":null"));
        assert_eq!(serde_json::from_str::<Candidate<u8>>(&s).unwrap(), c);
    }
}
