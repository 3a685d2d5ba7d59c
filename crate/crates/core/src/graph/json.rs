use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{DatasetSplit, Graph};
use crate::error::{Error, Result};

/// `{ "num_nodes": int, "edges": [[i,j],...], "features": [[...],...], "labels": [...] }`
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JsonGraph {
    pub num_nodes: usize,
    pub edges: Vec<[usize; 2]>,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub splits: Option<DatasetSplit>,
}

impl JsonGraph {
    pub fn into_graph(self) -> Result<Graph> {
        if self.features.len() != self.num_nodes {
            return Err(Error::Format(format!(
                "{} feature rows for num_nodes = {}",
                self.features.len(),
                self.num_nodes
            )));
        }
        let f = self.features.first().map_or(0, Vec::len);
        if let Some(bad) = self.features.iter().position(|r| r.len() != f) {
            return Err(Error::Format(format!("feature row {bad} has a different length")));
        }
        let flat: Vec<f64> = self.features.into_iter().flatten().collect();
        let features =
            Array2::from_shape_vec((self.num_nodes, f), flat).map_err(|e| Error::Format(e.to_string()))?;
        let num_classes = self
            .num_classes
            .unwrap_or_else(|| self.labels.iter().max().map_or(0, |m| m + 1));
        let splits = self.splits.unwrap_or(DatasetSplit {
            train: vec![],
            val: vec![],
            test: vec![],
        });
        Graph::from_parts(
            features,
            self.labels,
            num_classes,
            self.edges.into_iter().map(|[i, j]| (i, j)),
            splits,
        )
    }

    pub fn from_graph(g: &Graph) -> Self {
        let mut edges = Vec::with_capacity(g.num_edges);
        for i in 0..g.num_nodes {
            edges.extend(g.adjacency.row(i).0.iter().filter(|&&j| i < j).map(|&j| [i, j]));
        }
        Self {
            num_nodes: g.num_nodes,
            edges,
            features: g.features.rows().into_iter().map(|r| r.to_vec()).collect(),
            labels: g.labels.clone(),
            num_classes: Some(g.num_classes),
            splits: (!g.splits.train.is_empty()).then(|| g.splits.clone()),
        }
    }
}

pub fn load_json_graph(path: &Path) -> Result<Graph> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parsed: JsonGraph = serde_json::from_str(&text)?;
    parsed.into_graph()
}

pub fn write_json_graph(g: &Graph, path: &Path) -> Result<()> {
    let text = serde_json::to_string(&JsonGraph::from_graph(g))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
