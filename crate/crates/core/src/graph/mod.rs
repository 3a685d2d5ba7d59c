//! Graph datasets: CSR adjacency, symmetric normalization, sparsity profiles
//! and train/validation/test splits.

mod json;
mod planetoid;
pub mod synthetic;

pub use json::{load_json_graph, write_json_graph, JsonGraph};
pub use planetoid::{load_planetoid, write_planetoid, LoadReport};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    /// Offsets into `col_idx`/`values`, length `n_rows + 1`.
    pub row_ptr: Vec<usize>,
    /// Column indices, strictly increasing within each row.
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds a matrix from coordinate triples. Duplicate coordinates keep the
    /// first value.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        mut entries: Vec<(usize, usize, f64)>,
    ) -> Result<Self> {
        if let Some(&(r, c, _)) = entries.iter().find(|(r, c, _)| *r >= n_rows || *c >= n_cols) {
            return Err(Error::Argument(format!(
                "entry ({r},{c}) outside {n_rows}x{n_cols}"
            )));
        }
        entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        entries.dedup_by(|b, a| a.0 == b.0 && a.1 == b.1);

        let mut row_ptr = vec![0usize; n_rows + 1];
        for &(r, _, _) in &entries {
            row_ptr[r + 1] += 1;
        }
        for i in 0..n_rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        let col_idx = entries.iter().map(|e| e.1).collect();
        let values = entries.iter().map(|e| e.2).collect();
        Ok(Self {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Binary square matrix from an edge list.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        Self::from_triplets(n, n, edges.into_iter().map(|(i, j)| (i, j, 1.0)).collect())
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n_rows: n,
            n_cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.col_idx[a..b], &self.values[a..b])
    }

    pub fn row_nnz(&self, i: usize) -> usize {
        self.row_ptr[i + 1] - self.row_ptr[i]
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).ok().map(|k| vals[k])
    }

    /// Union of the pattern with its transpose; values of mirrored entries
    /// default to the existing entry's value.
    pub fn symmetrize(&self) -> Self {
        let mut entries = Vec::with_capacity(2 * self.nnz());
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                entries.push((i, j, v));
                entries.push((j, i, v));
            }
        }
        let n = self.n_rows.max(self.n_cols);
        Self::from_triplets(n, n, entries).expect("mirrored indices stay in range")
    }

    pub fn is_symmetric(&self) -> bool {
        self.n_rows == self.n_cols
            && (0..self.n_rows).all(|i| self.row(i).0.iter().all(|&j| self.get(j, i).is_some()))
    }

    /// Checks the CSR structural invariants.
    pub fn check(&self) -> Result<()> {
        if self.row_ptr.len() != self.n_rows + 1 || self.row_ptr[0] != 0 {
            return Err(Error::Format("row_ptr must have n_rows + 1 entries starting at 0".into()));
        }
        if self.row_ptr.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Format("row_ptr must be non-decreasing".into()));
        }
        if self.row_ptr[self.n_rows] != self.col_idx.len() || self.values.len() != self.col_idx.len() {
            return Err(Error::Format("row_ptr[n] must equal nnz".into()));
        }
        for i in 0..self.n_rows {
            let cols = self.row(i).0;
            if cols.iter().any(|&c| c >= self.n_cols) || cols.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Format(format!(
                    "row {i}: column indices must be in range and strictly increasing"
                )));
            }
        }
        Ok(())
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n_rows, self.n_cols));
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                out[[i, j]] = v;
            }
        }
        out
    }

    /// Copy with a unit diagonal entry added to every row that lacks one.
    pub fn with_self_loops(&self) -> Self {
        let mut entries = Vec::with_capacity(self.nnz() + self.n_rows);
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            entries.extend(cols.iter().zip(vals).map(|(&j, &v)| (i, j, v)));
            entries.push((i, i, 1.0));
        }
        Self::from_triplets(self.n_rows, self.n_cols, entries).expect("diagonal in range")
    }
}

/// Disjoint node index sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl DatasetSplit {
    pub fn check(&self, num_nodes: usize) -> Result<()> {
        if self.train.is_empty() {
            return Err(Error::Argument("train split is empty".into()));
        }
        let mut seen = vec![false; num_nodes];
        for &i in self.train.iter().chain(&self.val).chain(&self.test) {
            if i >= num_nodes {
                return Err(Error::Argument(format!("split index {i} >= {num_nodes}")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::Argument(format!("node {i} appears in two splits")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowProfile {
    pub per_row_nnz: Vec<usize>,
    pub total_nnz: usize,
    /// `total_nnz / N²`.
    pub density: f64,
}

impl RowProfile {
    pub fn from_counts(per_row_nnz: Vec<usize>) -> Self {
        let total_nnz = per_row_nnz.iter().sum();
        let n = per_row_nnz.len() as f64;
        let density = if n > 0.0 { total_nnz as f64 / (n * n) } else { 0.0 };
        Self {
            per_row_nnz,
            total_nnz,
            density,
        }
    }

    pub fn num_rows(&self) -> usize {
        self.per_row_nnz.len()
    }

    pub fn max_row_nnz(&self) -> usize {
        self.per_row_nnz.iter().copied().max().unwrap_or(0)
    }
}

pub fn sparsity_profile(s: &SparseMatrix) -> RowProfile {
    RowProfile::from_counts((0..s.n_rows).map(|i| s.row_nnz(i)).collect())
}

/// An undirected node-classification graph.
#[derive(Debug, Clone)]
pub struct Graph {
    pub num_nodes: usize,
    /// Undirected edges, self-loops excluded.
    pub num_edges: usize,
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    /// Binary symmetric adjacency without self-loops.
    pub adjacency: SparseMatrix,
    pub splits: DatasetSplit,
    pub class_names: Vec<String>,
}

impl Graph {
    /// Assembles a graph from an undirected edge list; edges are symmetrized,
    /// deduplicated and stripped of self-loops.
    pub fn from_parts(
        features: Array2<f64>,
        labels: Vec<usize>,
        num_classes: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        splits: DatasetSplit,
    ) -> Result<Self> {
        let n = features.nrows();
        if labels.len() != n {
            return Err(Error::Format(format!(
                "{} labels for {n} feature rows",
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Format(format!("label {l} >= num_classes {num_classes}")));
        }
        let mut pairs = Vec::new();
        for (i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::Format(format!("edge ({i},{j}) references a node >= {n}")));
            }
            if i != j {
                pairs.push((i, j));
                pairs.push((j, i));
            }
        }
        let adjacency = SparseMatrix::from_edges(n, pairs)?;
        let num_edges = adjacency.nnz() / 2;
        let g = Self {
            num_nodes: n,
            num_edges,
            features,
            labels,
            num_classes,
            adjacency,
            splits,
            class_names: Vec::new(),
        };
        if !g.splits.train.is_empty() {
            g.splits.check(n)?;
        }
        Ok(g)
    }

    pub fn num_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.num_nodes).map(|i| self.adjacency.row_nnz(i)).collect()
    }

    /// Scales each feature row to unit L1 norm (zero rows are left alone).
    pub fn normalize_features_l1(&mut self) {
        for mut row in self.features.rows_mut() {
            let s: f64 = row.iter().map(|v| v.abs()).sum();
            if s > 0.0 {
                row.mapv_inplace(|v| v / s);
            }
        }
    }
}

/// `D^{-1/2} A D^{-1/2}`, with degrees taken after optional self-loop insertion.
pub fn build_normalized_adjacency(g: &Graph, add_self_loops: bool) -> Result<SparseMatrix> {
    normalize_adjacency(&g.adjacency, add_self_loops)
}

pub fn normalize_adjacency(adjacency: &SparseMatrix, add_self_loops: bool) -> Result<SparseMatrix> {
    let a = if add_self_loops {
        adjacency.with_self_loops()
    } else {
        adjacency.clone()
    };
    let inv_sqrt: Vec<f64> = (0..a.n_rows)
        .map(|i| match a.row_nnz(i) {
            0 => Err(Error::DegenerateDegree { node: i }),
            d => Ok(1.0 / (d as f64).sqrt()),
        })
        .collect::<Result<_>>()?;
    let mut out = a;
    for i in 0..out.n_rows {
        for k in out.row_ptr[i]..out.row_ptr[i + 1] {
            out.values[k] = inv_sqrt[i] * inv_sqrt[out.col_idx[k]];
        }
    }
    Ok(out)
}

/// Seed 0 gives the canonical class-balanced split: the first
/// `train_n / C` nodes of each class in index order form the training set,
/// the next `val_n` remaining nodes the validation set and the last `test_n`
/// remaining nodes the test set. Other seeds shuffle all nodes and cut.
pub fn make_splits(
    labels: &[usize],
    num_classes: usize,
    train_n: usize,
    val_n: usize,
    test_n: usize,
    seed: u64,
) -> Result<DatasetSplit> {
    let n = labels.len();
    if train_n + val_n + test_n > n {
        return Err(Error::Argument(format!(
            "split sizes {train_n}+{val_n}+{test_n} exceed {n} nodes"
        )));
    }
    if train_n == 0 {
        return Err(Error::Argument("train split must be non-empty".into()));
    }

    if seed != 0 {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        return Ok(DatasetSplit {
            train: order[..train_n].to_vec(),
            val: order[train_n..train_n + val_n].to_vec(),
            test: order[train_n + val_n..train_n + val_n + test_n].to_vec(),
        });
    }

    let c = num_classes.max(1);
    let mut quota: Vec<usize> = (0..c).map(|k| train_n / c + usize::from(k < train_n % c)).collect();
    let mut taken = vec![false; n];
    let mut train = Vec::with_capacity(train_n);
    for (i, &l) in labels.iter().enumerate() {
        if l < c && quota[l] > 0 {
            quota[l] -= 1;
            taken[i] = true;
            train.push(i);
        }
    }
    // classes too small for their quota are topped up in index order
    for i in 0..n {
        if train.len() == train_n {
            break;
        }
        if !taken[i] {
            taken[i] = true;
            train.push(i);
        }
    }
    train.sort_unstable();
    let rest: Vec<usize> = (0..n).filter(|&i| !taken[i]).collect();
    let val = rest[..val_n].to_vec();
    let test = rest[rest.len() - test_n..].to_vec();
    Ok(DatasetSplit { train, val, test })
}
