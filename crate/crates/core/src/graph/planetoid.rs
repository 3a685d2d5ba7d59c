//! Raw Planetoid text format (`<name>.content` / `<name>.cites`).

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use super::{DatasetSplit, Graph};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    /// Citation lines naming an id absent from the content file.
    pub dropped_edges: usize,
    /// Citation lines repeating an already seen undirected edge.
    pub duplicate_edges: usize,
    pub self_citations: usize,
}

/// Loads a Planetoid content/cites pair. Node ids map to dense indices in
/// content-file order and label strings to class indices in order of first
/// appearance. The returned graph carries empty splits.
pub fn load_planetoid(content_path: &Path, cites_path: &Path) -> Result<(Graph, LoadReport)> {
    let content = fs::read_to_string(content_path).map_err(|e| Error::io(content_path, e))?;
    let cites = fs::read_to_string(cites_path).map_err(|e| Error::io(cites_path, e))?;

    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut class_ids: HashMap<String, usize> = HashMap::new();
    let mut class_names = Vec::new();
    let mut labels = Vec::new();
    let mut flat = Vec::new();
    let mut num_features: Option<usize> = None;

    for (lineno, line) in content.lines().enumerate() {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: content_path.to_path_buf(),
            line: lineno + 1,
            message,
        };
        if tokens.len() < 2 {
            return Err(parse_err("expected `<id> <features...> <label>`".into()));
        }
        let f = tokens.len() - 2;
        match num_features {
            None => num_features = Some(f),
            Some(expected) if expected != f => {
                return Err(Error::Format(format!(
                    "{}:{}: {f} features, expected {expected}",
                    content_path.display(),
                    lineno + 1
                )))
            }
            _ => {}
        }
        for tok in &tokens[1..tokens.len() - 1] {
            let v: f64 = tok
                .parse()
                .map_err(|_| parse_err(format!("feature `{tok}` is not a number")))?;
            flat.push(v);
        }
        let idx = ids.len();
        if ids.insert(tokens[0].to_string(), idx).is_some() {
            return Err(parse_err(format!("duplicate node id `{}`", tokens[0])));
        }
        let label = tokens[tokens.len() - 1];
        let next = class_ids.len();
        let class = *class_ids.entry(label.to_string()).or_insert_with(|| {
            class_names.push(label.to_string());
            next
        });
        labels.push(class);
    }

    let n = labels.len();
    let features = Array2::from_shape_vec((n, num_features.unwrap_or(0)), flat)
        .map_err(|e| Error::Format(e.to_string()))?;

    let mut report = LoadReport::default();
    let mut edges = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (lineno, line) in cites.lines().enumerate() {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        if tokens.len() != 2 {
            return Err(Error::Parse {
                path: cites_path.to_path_buf(),
                line: lineno + 1,
                message: "expected `<target_id> <source_id>`".into(),
            });
        }
        let (Some(&t), Some(&s)) = (ids.get(tokens[0]), ids.get(tokens[1])) else {
            report.dropped_edges += 1;
            continue;
        };
        if t == s {
            report.self_citations += 1;
            continue;
        }
        if !seen.insert((t.min(s), t.max(s))) {
            report.duplicate_edges += 1;
            continue;
        }
        edges.push((t, s));
    }
    if report.dropped_edges > 0 {
        log::warn!(
            "{}: dropped {} citation(s) referencing unknown node ids",
            cites_path.display(),
            report.dropped_edges
        );
    }

    let empty = DatasetSplit {
        train: vec![],
        val: vec![],
        test: vec![],
    };
    let mut g = Graph::from_parts(features, labels, class_names.len(), edges, empty)?;
    g.class_names = class_names;
    Ok((g, report))
}

/// Writes a graph in Planetoid text format with ids `n<index>`.
pub fn write_planetoid(g: &Graph, content_path: &Path, cites_path: &Path) -> Result<()> {
    let mut content = Vec::new();
    for (i, row) in g.features.rows().into_iter().enumerate() {
        write!(content, "n{i}").unwrap();
        for v in row {
            write!(content, " {v}").unwrap();
        }
        let label = g
            .class_names
            .get(g.labels[i])
            .cloned()
            .unwrap_or_else(|| format!("class{}", g.labels[i]));
        writeln!(content, " {label}").unwrap();
    }
    fs::write(content_path, content).map_err(|e| Error::io(content_path, e))?;

    let mut cites = Vec::new();
    for i in 0..g.num_nodes {
        for &j in g.adjacency.row(i).0 {
            if i < j {
                writeln!(cites, "n{i} n{j}").unwrap();
            }
        }
    }
    fs::write(cites_path, cites).map_err(|e| Error::io(cites_path, e))
}
