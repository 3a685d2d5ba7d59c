use anyhow::Context;
use gcos_core::graph::synthetic::{planetoid_like, PlanetoidLikeParams};
use gcos_core::graph::{load_json_graph, load_planetoid, make_splits, Graph};
use gcos_core::supernet::PreparedGraph;

use crate::config::{DatasetConfig, DatasetFormat};
use crate::UsageError;

pub fn load_graph(cfg: &DatasetConfig) -> anyhow::Result<Graph> {
    let mut graph = match cfg.format {
        DatasetFormat::Synthetic => planetoid_like(&PlanetoidLikeParams::for_preset(cfg.name, cfg.seed))?,
        DatasetFormat::Planetoid => {
            let (Some(content), Some(cites)) = (&cfg.content_path, &cfg.cites_path) else {
                return Err(UsageError("planetoid format needs dataset.content_path and dataset.cites_path".into()).into());
            };
            let (g, report) = load_planetoid(content, cites)?;
            log::info!(
                "loaded {} nodes, {} edges ({} dropped, {} duplicate citations)",
                g.num_nodes,
                g.num_edges,
                report.dropped_edges,
                report.duplicate_edges
            );
            g
        }
        DatasetFormat::Json => {
            let Some(path) = &cfg.json_path else {
                return Err(UsageError("json format needs dataset.json_path".into()).into());
            };
            load_json_graph(path)?
        }
    };
    let explicit = cfg.train_size.is_some() || cfg.val_size.is_some() || cfg.test_size.is_some();
    if graph.splits.train.is_empty() || explicit {
        let (train, val, test) = cfg.name.split_sizes();
        graph.splits = make_splits(
            &graph.labels,
            graph.num_classes,
            cfg.train_size.unwrap_or(train),
            cfg.val_size.unwrap_or(val),
            cfg.test_size.unwrap_or(test),
            cfg.seed,
        )
        .context("drawing dataset splits")?;
    }
    if cfg.normalize_features {
        graph.normalize_features_l1();
    }
    Ok(graph)
}

pub fn prepare(cfg: &DatasetConfig) -> anyhow::Result<PreparedGraph> {
    let graph = load_graph(cfg)?;
    Ok(PreparedGraph::new(&graph)?)
}
