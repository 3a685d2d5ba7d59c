use std::path::{Path, PathBuf};

use anyhow::Context;
use gcos_core::accel::AccelConfig;
use gcos_core::parser::parse_subnet;
use gcos_core::search::cosearch::{AccuracyEvaluator, CoDesign, CoSearchProblem, GraphShape, LookupEvaluator, SupernetEvaluator};
use gcos_core::search::{pareto_front, Candidate, GenerationStats, Search, SearchState};
use gcos_core::sim::{simulate as run_sim, SimReport};
use gcos_core::supernet::{self, PreparedGraph, SharedWeights, SubnetSpec};
use gcos_core::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{EvaluatorKind, RunConfig};
use crate::data::prepare;
use crate::output::{read_json, write_csv, write_json};
use crate::UsageError;

#[derive(Serialize)]
struct LossRow {
    epoch: usize,
    objective: f64,
}

fn loss_rows(losses: &[f64]) -> impl Iterator<Item = LossRow> + '_ {
    losses.iter().enumerate().map(|(epoch, &objective)| LossRow { epoch, objective })
}

pub fn pretrain(cfg: &RunConfig, out: Option<PathBuf>) -> anyhow::Result<()> {
    let graph = prepare(&cfg.dataset)?;
    let space = cfg.supernet.space(graph.num_classes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut weights = SharedWeights::init(&space, graph.features.ncols(), &mut rng)?;
    let train = cfg.training.pretrain(cfg.seed);
    let losses = supernet::pretrain(&space, &mut weights, &graph, &train, &mut rng)?;

    let path = out.unwrap_or_else(|| cfg.output_dir.join("supernet.json"));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    weights.save(&path)?;
    write_csv(Some(&cfg.output_dir.join("pretrain_loss.csv")), loss_rows(&losses))?;
    match losses.last() {
        Some(last) => println!("pretrained {} epochs, final objective {last:.4}", losses.len()),
        None => println!("wrote initial weights (0 epochs)"),
    }
    println!("checkpoint: {}", path.display());
    Ok(())
}

/// Search results as written to `top.json` and `pool.json`.
#[derive(Debug, Serialize, Deserialize)]
struct SearchSummary {
    converged: bool,
    generations: usize,
    latency_weight: f64,
    latency_ref: f64,
    candidates: Vec<Candidate<CoDesign>>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum CandidateFile {
    Summary(SearchSummary),
    List(Vec<Candidate<CoDesign>>),
}

#[derive(Serialize)]
struct ParetoRow {
    id: u64,
    accuracy: f64,
    latency_seconds: f64,
    fitness: f64,
    gnet: String,
    hw: String,
}

fn pareto_rows(candidates: &[Candidate<CoDesign>]) -> anyhow::Result<Vec<ParetoRow>> {
    pareto_front(candidates)
        .into_iter()
        .map(|c| {
            Ok(ParetoRow {
                id: c.id,
                accuracy: c.accuracy.unwrap_or(f64::NAN),
                latency_seconds: c.latency_seconds.unwrap_or(f64::NAN),
                fitness: c.fitness,
                gnet: serde_json::to_string(&c.design.gnet)?,
                hw: serde_json::to_string(&c.design.hw)?,
            })
        })
        .collect()
}

#[derive(Serialize)]
struct FinetuneSummary<'a> {
    subnet: &'a SubnetSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    accel: Option<&'a AccelConfig>,
    epochs: usize,
    learning_rate: f64,
    val_accuracy: f64,
    test_accuracy: f64,
}

pub fn search(cfg: &RunConfig, checkpoint: Option<PathBuf>, resume: Option<PathBuf>, no_finetune: bool) -> anyhow::Result<()> {
    let graph = prepare(&cfg.dataset)?;
    let space = cfg.supernet.space(graph.num_classes)?;
    let shape = GraphShape::of(&graph);
    match cfg.search.evaluator {
        EvaluatorKind::Supernet => {
            let path = checkpoint.unwrap_or_else(|| cfg.output_dir.join("supernet.json"));
            let weights = SharedWeights::load(&path, &space).with_context(|| format!("loading {}", path.display()))?;
            if weights.input_dim != graph.features.ncols() {
                return Err(UsageError(format!(
                    "checkpoint expects {} input features, dataset has {}",
                    weights.input_dim,
                    graph.features.ncols()
                ))
                .into());
            }
            let evaluator = SupernetEvaluator {
                weights: &weights,
                graph: &graph,
            };
            run_search(cfg, &graph, &space, &shape, &evaluator, resume, no_finetune)
        }
        EvaluatorKind::Lookup => {
            let evaluator = match &cfg.search.lookup_table {
                Some(p) => LookupEvaluator {
                    table: read_json(p)?,
                    salt: cfg.seed,
                },
                None => LookupEvaluator {
                    salt: cfg.seed,
                    ..LookupEvaluator::default()
                },
            };
            run_search(cfg, &graph, &space, &shape, &evaluator, resume, no_finetune)
        }
    }
}

fn run_search<E: AccuracyEvaluator>(
    cfg: &RunConfig,
    graph: &PreparedGraph,
    space: &gcos_core::supernet::SupernetSpace,
    shape: &GraphShape,
    evaluator: &E,
    resume: Option<PathBuf>,
    no_finetune: bool,
) -> anyhow::Result<()> {
    let problem = CoSearchProblem {
        space,
        platform: &cfg.platform,
        tile_options: cfg.search.tile_options,
        shape,
        evaluator,
    };
    let params = cfg.search.params(cfg.seed);
    let search = match resume {
        Some(p) => Search::resume(&problem, params, read_json::<SearchState<CoDesign>>(&p)?)?,
        None => Search::new(&problem, params)?,
    };
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let state_path = dir.join("search_state.json");
    let every = cfg.search.checkpoint_every;
    let outcome = search.run(|state| {
        if every > 0 && state.generation % every == 0 {
            let text = serde_json::to_string(state)?;
            std::fs::write(&state_path, text).map_err(|e| Error::io(&state_path, e))?;
        }
        Ok(())
    })?;

    let summary = |candidates: Vec<Candidate<CoDesign>>| SearchSummary {
        converged: outcome.converged,
        generations: outcome.generations,
        latency_weight: outcome.latency_weight,
        latency_ref: outcome.latency_ref,
        candidates,
    };
    write_json(&dir.join("top.json"), &summary(outcome.top.clone()))?;
    write_json(&dir.join("pool.json"), &summary(outcome.pool.clone()))?;
    let front = pareto_rows(&outcome.pool)?;
    let front_len = front.len();
    write_csv(Some(&dir.join("pareto.csv")), front)?;
    write_csv(Some(&dir.join("generations.csv")), outcome.history.iter().cloned().map(GenerationRow::from))?;

    println!(
        "{} generations ({}), {} candidates on the Pareto front",
        outcome.generations,
        if outcome.converged { "target reached" } else { "target not reached" },
        front_len
    );
    let Some(best) = outcome.top.first().filter(|c| c.is_valid()) else {
        println!("no valid candidate found");
        return Ok(());
    };
    println!(
        "best: accuracy {:.4}, latency {:.4} ms, fitness {:.4}",
        best.accuracy.unwrap_or(f64::NAN),
        best.latency_seconds.unwrap_or(f64::NAN) * 1e3,
        best.fitness
    );
    if cfg.search.finetune_best && !no_finetune {
        let train = cfg.training.finetune(cfg.seed);
        let result = supernet::finetune(&best.design.gnet, graph, &train)?;
        println!(
            "fine-tuned best design: val {:.4}, test {:.4}",
            result.val_accuracy, result.test_accuracy
        );
        write_json(
            &dir.join("finetune.json"),
            &FinetuneSummary {
                subnet: &best.design.gnet,
                accel: Some(&best.design.hw),
                epochs: train.epochs,
                learning_rate: train.learning_rate,
                val_accuracy: result.val_accuracy,
                test_accuracy: result.test_accuracy,
            },
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct GenerationRow {
    generation: usize,
    pool_size: usize,
    top_mean_fitness: f64,
    best_fitness: f64,
    evaluations: usize,
}

impl From<GenerationStats> for GenerationRow {
    fn from(s: GenerationStats) -> Self {
        Self {
            generation: s.generation,
            pool_size: s.pool_size,
            top_mean_fitness: s.top_mean_fitness,
            best_fitness: s.best_fitness,
            evaluations: s.evaluations,
        }
    }
}

#[derive(Serialize)]
struct SimulationOutput<'a> {
    subnet: &'a SubnetSpec,
    accel: &'a AccelConfig,
    report: &'a SimReport,
}

pub fn simulate(cfg: &RunConfig, subnet_path: &Path, accel_path: Option<&Path>, out: Option<PathBuf>) -> anyhow::Result<()> {
    let subnet: SubnetSpec = read_json(subnet_path)?;
    let accel = match accel_path {
        Some(p) => read_json(p)?,
        None => AccelConfig::uniform(&cfg.platform, cfg.search.tile_options),
    };
    let graph = prepare(&cfg.dataset)?;
    let shape = GraphShape::of(&graph);
    let workloads = parse_subnet(&subnet, shape.num_nodes, shape.num_features, shape.num_classes, &shape.profile)?;
    let report = match run_sim(&workloads, &accel, &cfg.platform) {
        Ok(r) => r,
        Err(Error::Validation(violations)) => {
            for v in &violations {
                eprintln!("violation: {v}");
            }
            return Err(Error::Validation(violations).into());
        }
        Err(e) => return Err(e.into()),
    };

    println!("{:<6} {:<18} {:>7} {:>14} {:>16} {:>14}", "layer", "phase", "repeat", "cycles", "macs", "bytes");
    for p in &report.phases {
        println!(
            "{:<6} {:<18} {:>7} {:>14} {:>16} {:>14.0}",
            p.layer,
            serde_json::to_value(p.phase)?.as_str().unwrap_or("?"),
            p.repeat,
            p.cycles,
            p.macs,
            p.traffic.total()
        );
    }
    let t = &report.traffic;
    println!("total cycles     {}", report.total_cycles);
    println!("latency          {:.6} ms", report.latency_seconds * 1e3);
    println!(
        "off-chip bytes   {:.0} (feature {:.0}, index {:.0}, weight {:.0}, output {:.0})",
        report.offchip_bytes_total, t.feature, t.index, t.weight, t.output
    );
    println!("pe utilization   {:.4}", report.pe_utilization);

    let path = out.unwrap_or_else(|| cfg.output_dir.join("simulate.json"));
    write_json(
        &path,
        &SimulationOutput {
            subnet: &subnet,
            accel: &accel,
            report: &report,
        },
    )
}

pub fn finetune(cfg: &RunConfig, subnet_path: Option<&Path>, out: Option<PathBuf>) -> anyhow::Result<()> {
    let graph = prepare(&cfg.dataset)?;
    let subnet = match subnet_path {
        Some(p) => read_json(p)?,
        None => SubnetSpec::gcn(16, graph.num_classes),
    };
    let train = cfg.training.finetune(cfg.seed);
    let result = supernet::finetune(&subnet, &graph, &train)?;
    println!("val accuracy  {:.4}", result.val_accuracy);
    println!("test accuracy {:.4}", result.test_accuracy);
    let path = out.unwrap_or_else(|| cfg.output_dir.join("finetune.json"));
    write_json(
        &path,
        &FinetuneSummary {
            subnet: &subnet,
            accel: None,
            epochs: train.epochs,
            learning_rate: train.learning_rate,
            val_accuracy: result.val_accuracy,
            test_accuracy: result.test_accuracy,
        },
    )?;
    write_csv(Some(&cfg.output_dir.join("finetune_loss.csv")), loss_rows(&result.losses))
}

pub fn workload_dump(cfg: &RunConfig, subnet_path: &Path, out: Option<&Path>) -> anyhow::Result<()> {
    let subnet: SubnetSpec = read_json(subnet_path)?;
    let graph = prepare(&cfg.dataset)?;
    let shape = GraphShape::of(&graph);
    let workloads = parse_subnet(&subnet, shape.num_nodes, shape.num_features, shape.num_classes, &shape.profile)?;
    match out {
        Some(p) => write_json(p, &workloads),
        None => {
            println!("{}", serde_json::to_string_pretty(&workloads)?);
            Ok(())
        }
    }
}

pub fn report_pareto(input: &Path, csv: Option<&Path>) -> anyhow::Result<()> {
    let candidates = match read_json::<CandidateFile>(input)? {
        CandidateFile::Summary(s) => s.candidates,
        CandidateFile::List(l) => l,
    };
    write_csv(csv, pareto_rows(&candidates)?)
}
