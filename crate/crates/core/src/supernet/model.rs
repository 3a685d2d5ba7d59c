//! Forward and backward passes of a sampled subnetwork over shared weights.
//!
//! A layer computes, per attention head, coefficients `c` on the (sampled)
//! support of the normalized adjacency and then `c (H W_h)`; this is the same
//! quantity as `(c H) W_h` with the cheaper product first. Max aggregation
//! cannot be reordered and takes the `(max_j a_ij H_j) W_h` route.

use std::borrow::Cow;
use std::ops::Range;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::space::{head_columns, Aggregation, AttentionType, LayerChoice, SubnetSpec};
use super::weights::{AttentionParams, Grads, LayerWeights, ParamId, ParamKind, SharedWeights};
use crate::error::{Error, Result};
use crate::graph::{normalize_adjacency, DatasetSplit, Graph, SparseMatrix};

const ATTENTION_SLOPE: f64 = 0.2;

/// A graph with its normalized adjacency precomputed, ready for training.
#[derive(Debug, Clone)]
pub struct PreparedGraph {
    pub features: Array2<f64>,
    /// `D^-1/2 (A + I) D^-1/2`.
    pub support: SparseMatrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub splits: DatasetSplit,
}

impl PreparedGraph {
    pub fn new(g: &Graph) -> Result<Self> {
        Ok(Self {
            features: g.features.as_standard_layout().into_owned(),
            support: normalize_adjacency(&g.adjacency, true)?,
            labels: g.labels.clone(),
            num_classes: g.num_classes,
            splits: g.splits.clone(),
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.features.nrows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    Eval,
    Train { dropout: f64 },
}

/// Kept entries of the support after neighbour sampling.
#[derive(Debug, Clone)]
pub(crate) struct EdgeSet {
    row_ptr: Vec<usize>,
    col: Vec<usize>,
    norm: Vec<f64>,
    diag: Vec<bool>,
}

impl EdgeSet {
    fn sample(full: &SparseMatrix, rate: f64, rng: &mut impl Rng) -> Self {
        let n = full.n_rows;
        let mut out = Self {
            row_ptr: Vec::with_capacity(n + 1),
            col: Vec::with_capacity(full.nnz()),
            norm: Vec::with_capacity(full.nnz()),
            diag: Vec::with_capacity(full.nnz()),
        };
        out.row_ptr.push(0);
        for i in 0..n {
            let (cols, vals) = full.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                // self-loops are always kept; rate 1 draws nothing
                let keep = i == j || rate >= 1.0 || rng.gen::<f64>() < rate;
                if keep {
                    out.col.push(j);
                    out.norm.push(v);
                    out.diag.push(i == j);
                }
            }
            out.row_ptr.push(out.col.len());
        }
        out
    }

    fn rows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    fn row(&self, i: usize) -> Range<usize> {
        self.row_ptr[i]..self.row_ptr[i + 1]
    }

    pub(crate) fn nnz(&self) -> usize {
        self.col.len()
    }
}

/// `out[i] = sum_e c_e p[j_e]`.
fn spmm(es: &EdgeSet, coef: &[f64], p: &Array2<f64>) -> Array2<f64> {
    let d = p.ncols();
    let mut out = Array2::zeros((es.rows(), d));
    let src = p.as_slice().expect("standard layout");
    let dst = out.as_slice_mut().expect("fresh array");
    for i in 0..es.rows() {
        let o = &mut dst[i * d..(i + 1) * d];
        for e in es.row(i) {
            let (c, j) = (coef[e], es.col[e]);
            for (a, b) in o.iter_mut().zip(&src[j * d..(j + 1) * d]) {
                *a += c * b;
            }
        }
    }
    out
}

/// Transposed product: `out[j_e] += c_e g[i]`.
fn spmm_t(es: &EdgeSet, coef: &[f64], g: &Array2<f64>) -> Array2<f64> {
    let d = g.ncols();
    let mut out = Array2::zeros((es.rows(), d));
    let src = g.as_slice().expect("standard layout");
    let dst = out.as_slice_mut().expect("fresh array");
    for i in 0..es.rows() {
        let gi = &src[i * d..(i + 1) * d];
        for e in es.row(i) {
            let (c, j) = (coef[e], es.col[e]);
            for (a, b) in dst[j * d..(j + 1) * d].iter_mut().zip(gi) {
                *a += c * b;
            }
        }
    }
    out
}

/// `<a[i], b[j_e]>` for every kept edge.
fn edge_dots(es: &EdgeSet, a: &Array2<f64>, b: &Array2<f64>) -> Vec<f64> {
    let d = a.ncols();
    let (a, b) = (a.as_slice().expect("standard"), b.as_slice().expect("standard"));
    let mut out = vec![0.0; es.nnz()];
    for i in 0..es.rows() {
        let ai = &a[i * d..(i + 1) * d];
        for e in es.row(i) {
            let j = es.col[e];
            out[e] = ai.iter().zip(&b[j * d..(j + 1) * d]).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// Alpha-weighted max over kept neighbours, with the winning edge per entry.
fn max_aggregate(es: &EdgeSet, alpha: &[f64], h: &Array2<f64>) -> (Array2<f64>, Vec<u32>) {
    let f = h.ncols();
    let src = h.as_slice().expect("standard layout");
    let mut out = Array2::from_elem((es.rows(), f), f64::NEG_INFINITY);
    let mut arg = vec![0u32; es.rows() * f];
    let dst = out.as_slice_mut().expect("fresh array");
    for i in 0..es.rows() {
        let o = &mut dst[i * f..(i + 1) * f];
        let a = &mut arg[i * f..(i + 1) * f];
        for e in es.row(i) {
            let (w, j) = (alpha[e], es.col[e]);
            for ((best, idx), &x) in o.iter_mut().zip(a.iter_mut()).zip(&src[j * f..(j + 1) * f]) {
                let v = w * x;
                if v > *best {
                    *best = v;
                    *idx = e as u32;
                }
            }
        }
    }
    (out, arg)
}

fn lrelu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        ATTENTION_SLOPE * x
    }
}

fn lrelu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        ATTENTION_SLOPE
    }
}

/// Row softmax of edge scores with max subtraction.
fn edge_softmax(es: &EdgeSet, score: &[f64]) -> Result<Vec<f64>> {
    let mut alpha = vec![0.0; score.len()];
    for i in 0..es.rows() {
        let r = es.row(i);
        let max = score[r.clone()].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for e in r.clone() {
            alpha[e] = (score[e] - max).exp();
            sum += alpha[e];
        }
        if !(sum.is_finite() && sum > 0.0) {
            return Err(Error::Numeric(format!("attention softmax of row {i}")));
        }
        for e in r {
            alpha[e] /= sum;
        }
    }
    Ok(alpha)
}

/// Intermediate values of a learned attention head.
#[derive(Debug, Clone, Default)]
struct AttCache {
    /// `x_i . w1` and `x_j . w2` per node.
    s: Array1<f64>,
    t: Array1<f64>,
    /// Pre-activation edge terms (gat, gat-sym forward direction, gene-linear).
    u: Vec<f64>,
    /// Reverse-direction edge terms for gat-sym.
    v: Vec<f64>,
}

fn attention_scores(
    kind: AttentionType,
    hd: &Array2<f64>,
    es: &EdgeSet,
    ap: &AttentionParams,
    f: usize,
    slot: usize,
) -> (Vec<f64>, AttCache) {
    let w1 = ap.w1.value.slice(s![..f, slot]);
    let w2 = ap.w2.value.slice(s![..f, slot]);
    let mut cache = AttCache::default();
    let mut score = vec![0.0; es.nnz()];
    if kind.uses_w1() && kind != AttentionType::Cos {
        cache.s = hd.dot(&w1);
    }
    if kind.uses_w2() {
        cache.t = hd.dot(&w2);
    }
    match kind {
        AttentionType::Gat | AttentionType::GeneLinear => {
            let scale = ap.scale.value[[0, slot]];
            cache.u = vec![0.0; es.nnz()];
            for i in 0..es.rows() {
                for e in es.row(i) {
                    let u = cache.s[i] + cache.t[es.col[e]];
                    cache.u[e] = u;
                    score[e] = if kind == AttentionType::Gat {
                        lrelu(u)
                    } else {
                        scale * u.tanh()
                    };
                }
            }
        }
        AttentionType::GatSym => {
            cache.u = vec![0.0; es.nnz()];
            cache.v = vec![0.0; es.nnz()];
            for i in 0..es.rows() {
                for e in es.row(i) {
                    let j = es.col[e];
                    cache.u[e] = cache.s[i] + cache.t[j];
                    cache.v[e] = cache.s[j] + cache.t[i];
                    score[e] = lrelu(cache.u[e]) + lrelu(cache.v[e]);
                }
            }
        }
        AttentionType::Cos => {
            let mut scaled = hd.clone();
            for mut row in scaled.rows_mut() {
                row *= &w1;
            }
            score = edge_dots(es, &scaled, hd);
        }
        AttentionType::Linear => {
            for i in 0..es.rows() {
                for e in es.row(i) {
                    score[e] = cache.t[es.col[e]].tanh();
                }
            }
        }
        AttentionType::Skip | AttentionType::Gcn => unreachable!("not a learned type"),
    }
    (score, cache)
}

#[derive(Debug, Clone)]
struct HeadCache {
    slot: usize,
    cols: Range<usize>,
    alpha: Vec<f64>,
    coef: Vec<f64>,
    att: Option<AttCache>,
}

#[derive(Debug, Clone)]
pub(crate) struct LayerCache<'a> {
    hd: Cow<'a, Array2<f64>>,
    mask: Option<Array2<f64>>,
    edges: EdgeSet,
    heads: Vec<HeadCache>,
    /// Combination outputs per distinct column range, for the linear path.
    projections: Vec<Array2<f64>>,
    projection_of_head: Vec<usize>,
    head_scale: f64,
    is_final: bool,
    gin_pre: Option<Array2<f64>>,
    z: Array2<f64>,
    y: Array2<f64>,
}

/// Pre-softmax outputs and row probabilities of the final layer.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Array2<f64>,
    pub probs: Array2<f64>,
}

/// Dimension bookkeeping for a subnet against the weights it will read.
fn check_dims(subnet: &SubnetSpec, w: &SharedWeights, graph: &PreparedGraph) -> Result<()> {
    if subnet.layers.len() != w.layers.len() {
        return Err(Error::Shape(format!(
            "subnet has {} layers, weights {}",
            subnet.layers.len(),
            w.layers.len()
        )));
    }
    if graph.features.ncols() != w.input_dim {
        return Err(Error::Shape(format!(
            "graph has {} features, weights expect {}",
            graph.features.ncols(),
            w.input_dim
        )));
    }
    if graph.support.n_rows != graph.features.nrows() {
        return Err(Error::Shape("adjacency and feature row counts differ".into()));
    }
    let last = subnet.layers.last().expect("non-empty");
    if last.hidden_dim != graph.num_classes {
        return Err(Error::Shape(format!(
            "final layer width {} != num_classes {}",
            last.hidden_dim, graph.num_classes
        )));
    }
    for (l, (c, lw)) in subnet.layers.iter().zip(&w.layers).enumerate() {
        if c.hidden_dim == 0 || c.heads == 0 {
            return Err(Error::Shape(format!("layer {l}: zero hidden dim or heads")));
        }
        if c.hidden_dim > lw.out_max || c.heads > lw.heads_max {
            return Err(Error::Shape(format!("layer {l}: choice exceeds shared tensor size")));
        }
        if c.attention.is_learned() && !lw.attention.contains_key(&c.attention) {
            return Err(Error::Shape(format!("layer {l}: no weights for {:?}", c.attention)));
        }
        if c.aggregation == Aggregation::Mlp && lw.gin.is_none() {
            return Err(Error::Shape(format!("layer {l}: no GIN weights")));
        }
    }
    Ok(())
}

fn head_layout(c: &LayerChoice, is_final: bool) -> (Vec<(usize, Range<usize>)>, f64) {
    let heads = if c.attention.is_learned() { c.heads } else { 1 };
    if is_final {
        let layout = (0..heads).map(|h| (h, 0..c.hidden_dim)).collect();
        (layout, 1.0 / heads as f64)
    } else {
        let layout = head_columns(c.hidden_dim, heads).into_iter().enumerate().collect();
        (layout, 1.0)
    }
}

#[allow(clippy::too_many_arguments)]
fn layer_forward<'a>(
    c: &LayerChoice,
    lw: &LayerWeights,
    input: Cow<'a, Array2<f64>>,
    support: &SparseMatrix,
    is_final: bool,
    mode: Mode,
    rng: &mut impl Rng,
) -> Result<LayerCache<'a>> {
    let (n, f) = input.dim();
    if f > lw.in_max {
        return Err(Error::Shape(format!("input width {f} exceeds {}", lw.in_max)));
    }
    let k = c.hidden_dim;

    let (hd, mask) = match mode {
        Mode::Train { dropout } if dropout > 0.0 => {
            let keep = 1.0 / (1.0 - dropout);
            let mask = Array2::from_shape_simple_fn((n, f), || {
                if rng.gen::<f64>() < dropout {
                    0.0
                } else {
                    keep
                }
            });
            (Cow::Owned(&*input * &mask), Some(mask))
        }
        _ => (input, None),
    };
    let edges = EdgeSet::sample(support, c.sampling_rate, rng);
    let weight = lw.combine.leading(f, k);
    let eps = lw.gin_eps.as_ref().map_or(0.0, |p| p.value[[0, 0]]);

    let (layout, head_scale) = head_layout(c, is_final);
    let mut heads = Vec::with_capacity(layout.len());
    let mut projections: Vec<Array2<f64>> = Vec::new();
    let mut projection_of_head = Vec::with_capacity(layout.len());
    let mut z = Array2::<f64>::zeros((n, k));

    for (slot, cols) in layout {
        let (alpha, att) = match c.attention {
            AttentionType::Skip => (vec![1.0; edges.nnz()], None),
            AttentionType::Gcn => (edges.norm.clone(), None),
            kind => {
                let ap = &lw.attention[&kind];
                let (score, cache) = attention_scores(kind, &hd, &edges, ap, f, slot);
                (edge_softmax(&edges, &score)?, Some(cache))
            }
        };
        let coef = coefficients(c.aggregation, &edges, &alpha, eps);
        let w_h = weight.slice(s![.., cols.clone()]);
        let zh = if c.aggregation == Aggregation::Max {
            projection_of_head.push(usize::MAX);
            let (agg, _) = max_aggregate(&edges, &alpha, &hd);
            agg.dot(&w_h)
        } else {
            // heads of the final layer share one projection
            let idx = if is_final && !projections.is_empty() {
                0
            } else {
                projections.push(hd.dot(&w_h).as_standard_layout().into_owned());
                projections.len() - 1
            };
            projection_of_head.push(idx);
            spmm(&edges, &coef, &projections[idx])
        };
        if is_final {
            z.scaled_add(head_scale, &zh);
        } else {
            z.slice_mut(s![.., cols.clone()]).assign(&zh);
        }
        heads.push(HeadCache {
            slot,
            cols,
            alpha,
            coef,
            att,
        });
    }

    let gin_pre = if c.aggregation == Aggregation::Mlp {
        let g = lw.gin.as_ref().expect("checked").leading(k, k);
        let pre = z;
        z = pre.mapv(|x| x.max(0.0)).dot(&g);
        Some(pre)
    } else {
        None
    };
    let y = z.mapv(|x| c.activation.apply(x));
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("layer output".into()));
    }
    Ok(LayerCache {
        hd,
        mask,
        edges,
        heads,
        projections,
        projection_of_head,
        head_scale,
        is_final,
        gin_pre,
        z,
        y,
    })
}

fn coefficients(agg: Aggregation, es: &EdgeSet, alpha: &[f64], eps: f64) -> Vec<f64> {
    match agg {
        Aggregation::Sum | Aggregation::Max => alpha.to_vec(),
        Aggregation::Mean => {
            let mut c = alpha.to_vec();
            for i in 0..es.rows() {
                let r: f64 = es.row(i).map(|e| alpha[e]).sum();
                for e in es.row(i) {
                    c[e] /= r;
                }
            }
            c
        }
        Aggregation::Mlp => alpha
            .iter()
            .zip(&es.diag)
            .map(|(&a, &d)| if d { a * (1.0 + eps) } else { a })
            .collect(),
    }
}

pub fn row_softmax(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

pub(crate) fn run<'a>(
    subnet: &SubnetSpec,
    w: &SharedWeights,
    graph: &'a PreparedGraph,
    rng: &mut impl Rng,
    mode: Mode,
) -> Result<(ForwardOutput, Vec<LayerCache<'a>>)> {
    check_dims(subnet, w, graph)?;
    let last = subnet.layers.len() - 1;
    let mut caches: Vec<LayerCache<'a>> = Vec::with_capacity(subnet.layers.len());
    for (l, (c, lw)) in subnet.layers.iter().zip(&w.layers).enumerate() {
        let input = match caches.last() {
            None => Cow::Borrowed(&graph.features),
            Some(prev) => Cow::Owned(prev.y.clone()),
        };
        let cache = layer_forward(c, lw, input, &graph.support, l == last, mode, rng)?;
        caches.push(cache);
    }
    let logits = caches[last].y.clone();
    let probs = row_softmax(&logits);
    Ok((ForwardOutput { logits, probs }, caches))
}

/// Row-stochastic class probabilities for every node.
pub fn forward(
    subnet: &SubnetSpec,
    weights: &SharedWeights,
    graph: &PreparedGraph,
    rng: &mut impl Rng,
    mode: Mode,
) -> Result<ForwardOutput> {
    run(subnet, weights, graph, rng, mode).map(|(out, _)| out)
}

/// Attention coefficients of every head of layer `layer` on the full support.
/// Returns the support pattern and per-head coefficient vectors.
pub fn attention_coefficients(
    subnet: &SubnetSpec,
    weights: &SharedWeights,
    graph: &PreparedGraph,
    layer: usize,
) -> Result<(SparseMatrix, Vec<Vec<f64>>)> {
    let mut full = subnet.clone();
    for c in &mut full.layers {
        c.sampling_rate = 1.0;
    }
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    let (_, caches) = run(&full, weights, graph, &mut rng, Mode::Eval)?;
    let cache = caches
        .get(layer)
        .ok_or_else(|| Error::Argument(format!("no layer {layer}")))?;
    let pattern = SparseMatrix {
        n_rows: cache.edges.rows(),
        n_cols: cache.edges.rows(),
        row_ptr: cache.edges.row_ptr.clone(),
        col_idx: cache.edges.col.clone(),
        values: cache.edges.norm.clone(),
    };
    Ok((pattern, cache.heads.iter().map(|h| h.alpha.clone()).collect()))
}

fn add_grad(grads: &mut Grads, id: ParamId, g: Array2<f64>) {
    match grads.get_mut(&id) {
        Some(existing) => *existing += &g,
        None => {
            grads.insert(id, g);
        }
    }
}

/// Backpropagates `dy` (gradient w.r.t. the layer output) through one layer,
/// accumulating parameter gradients and returning the input gradient if asked.
fn layer_backward(
    c: &LayerChoice,
    lw: &LayerWeights,
    cache: &LayerCache<'_>,
    dy: &Array2<f64>,
    layer: usize,
    need_input: bool,
    grads: &mut Grads,
) -> Array2<f64> {
    let hd: &Array2<f64> = &cache.hd;
    let (n, f) = hd.dim();
    let k = c.hidden_dim;
    let es = &cache.edges;
    let id = |kind| ParamId { layer, kind };

    let mut dz = dy.clone();
    ndarray::Zip::from(&mut dz)
        .and(&cache.z)
        .and(&cache.y)
        .for_each(|d, &z, &y| *d *= c.activation.derivative(z, y));

    let dq = if let Some(pre) = &cache.gin_pre {
        let g = lw.gin.as_ref().expect("checked").leading(k, k);
        let relu = pre.mapv(|x| x.max(0.0));
        add_grad(grads, id(ParamKind::Gin), relu.t().dot(&dz));
        let mut dr = dz.dot(&g.t());
        ndarray::Zip::from(&mut dr).and(pre).for_each(|d, &p| {
            if p <= 0.0 {
                *d = 0.0;
            }
        });
        dr
    } else {
        dz
    };

    let weight = lw.combine.leading(f, k);
    let eps = lw.gin_eps.as_ref().map_or(0.0, |p| p.value[[0, 0]]);
    let mut dw = Array2::<f64>::zeros((f, k));
    let mut dhd = need_input.then(|| Array2::<f64>::zeros((n, f)));
    let mut d_eps = 0.0;
    let n_slots = cache.heads.iter().map(|h| h.slot + 1).max().unwrap_or(0);
    let att_kind = c.attention;
    let mut dw1 = Array2::<f64>::zeros((f, n_slots));
    let mut dw2 = Array2::<f64>::zeros((f, n_slots));
    let mut dscale = Array2::<f64>::zeros((1, n_slots));

    for (h, head) in cache.heads.iter().enumerate() {
        let cols = head.cols.clone();
        let dzh: Array2<f64> = if cache.is_final {
            &dq * cache.head_scale
        } else {
            dq.slice(s![.., cols.clone()]).to_owned()
        };
        let w_h = weight.slice(s![.., cols.clone()]);

        let mut dalpha = vec![0.0; es.nnz()];
        if c.aggregation == Aggregation::Max {
            let (agg, arg) = max_aggregate(es, &head.alpha, hd);
            dw.slice_mut(s![.., cols.clone()]).scaled_add(1.0, &agg.t().dot(&dzh));
            let da = dzh.dot(&w_h.t());
            let hs = hd.as_slice().expect("standard");
            for i in 0..n {
                for ff in 0..f {
                    let e = arg[i * f + ff] as usize;
                    let j = es.col[e];
                    let g = da[[i, ff]];
                    dalpha[e] += hs[j * f + ff] * g;
                    if let Some(dh) = dhd.as_mut() {
                        dh[[j, ff]] += head.alpha[e] * g;
                    }
                }
            }
        } else {
            let p = &cache.projections[cache.projection_of_head[h]];
            let dp = spmm_t(es, &head.coef, &dzh);
            let dc = edge_dots(es, &dzh, p);
            dw.slice_mut(s![.., cols.clone()]).scaled_add(1.0, &hd.t().dot(&dp));
            if let Some(dh) = dhd.as_mut() {
                *dh += &dp.dot(&w_h.t());
            }
            match c.aggregation {
                Aggregation::Sum => dalpha = dc,
                Aggregation::Mean => {
                    for i in 0..n {
                        let r: f64 = es.row(i).map(|e| head.alpha[e]).sum();
                        let inner: f64 = es.row(i).map(|e| dc[e] * head.coef[e]).sum();
                        for e in es.row(i) {
                            dalpha[e] = (dc[e] - inner) / r;
                        }
                    }
                }
                Aggregation::Mlp => {
                    for e in 0..es.nnz() {
                        if es.diag[e] {
                            dalpha[e] = dc[e] * (1.0 + eps);
                            d_eps += dc[e] * head.alpha[e];
                        } else {
                            dalpha[e] = dc[e];
                        }
                    }
                }
                Aggregation::Max => unreachable!(),
            }
        }

        let Some(att) = &head.att else { continue };
        let ap = &lw.attention[&att_kind];
        // softmax backward
        let mut dscore = vec![0.0; es.nnz()];
        for i in 0..n {
            let inner: f64 = es.row(i).map(|e| head.alpha[e] * dalpha[e]).sum();
            for e in es.row(i) {
                dscore[e] = head.alpha[e] * (dalpha[e] - inner);
            }
        }
        let slot = head.slot;
        let mut ds = Array1::<f64>::zeros(n);
        let mut dt = Array1::<f64>::zeros(n);
        match att_kind {
            AttentionType::Gat => {
                for i in 0..n {
                    for e in es.row(i) {
                        let du = dscore[e] * lrelu_grad(att.u[e]);
                        ds[i] += du;
                        dt[es.col[e]] += du;
                    }
                }
            }
            AttentionType::GatSym => {
                for i in 0..n {
                    for e in es.row(i) {
                        let j = es.col[e];
                        let du = dscore[e] * lrelu_grad(att.u[e]);
                        let dv = dscore[e] * lrelu_grad(att.v[e]);
                        ds[i] += du;
                        dt[j] += du;
                        ds[j] += dv;
                        dt[i] += dv;
                    }
                }
            }
            AttentionType::GeneLinear => {
                let a = ap.scale.value[[0, slot]];
                for i in 0..n {
                    for e in es.row(i) {
                        let th = att.u[e].tanh();
                        dscale[[0, slot]] += dscore[e] * th;
                        let du = dscore[e] * a * (1.0 - th * th);
                        ds[i] += du;
                        dt[es.col[e]] += du;
                    }
                }
            }
            AttentionType::Linear => {
                for i in 0..n {
                    for e in es.row(i) {
                        let j = es.col[e];
                        let th = att.t[j].tanh();
                        dt[j] += dscore[e] * (1.0 - th * th);
                    }
                }
            }
            AttentionType::Cos => {
                let w1 = ap.w1.value.slice(s![..f, slot]);
                let hs = hd.as_slice().expect("standard");
                let mut g1 = vec![0.0; f];
                for i in 0..n {
                    let xi = &hs[i * f..(i + 1) * f];
                    for e in es.row(i) {
                        let j = es.col[e];
                        let xj = &hs[j * f..(j + 1) * f];
                        let d = dscore[e];
                        if d == 0.0 {
                            continue;
                        }
                        for ff in 0..f {
                            g1[ff] += d * xi[ff] * xj[ff];
                        }
                        if let Some(dh) = dhd.as_mut() {
                            for ff in 0..f {
                                dh[[i, ff]] += d * w1[ff] * xj[ff];
                                dh[[j, ff]] += d * w1[ff] * xi[ff];
                            }
                        }
                    }
                }
                for ff in 0..f {
                    dw1[[ff, slot]] += g1[ff];
                }
            }
            AttentionType::Skip | AttentionType::Gcn => unreachable!(),
        }
        if att_kind.uses_w1() && att_kind != AttentionType::Cos {
            dw1.column_mut(slot).scaled_add(1.0, &hd.t().dot(&ds));
            if let Some(dh) = dhd.as_mut() {
                let w1 = ap.w1.value.slice(s![..f, slot]);
                outer_add(dh, &ds, &w1.to_owned());
            }
        }
        if att_kind.uses_w2() {
            dw2.column_mut(slot).scaled_add(1.0, &hd.t().dot(&dt));
            if let Some(dh) = dhd.as_mut() {
                let w2 = ap.w2.value.slice(s![..f, slot]);
                outer_add(dh, &dt, &w2.to_owned());
            }
        }
    }

    add_grad(grads, id(ParamKind::Combine), dw);
    if c.aggregation == Aggregation::Mlp {
        add_grad(grads, id(ParamKind::GinEps), Array2::from_elem((1, 1), d_eps));
    }
    if att_kind.is_learned() {
        if att_kind.uses_w1() {
            add_grad(grads, id(ParamKind::AttW1(att_kind)), dw1);
        }
        if att_kind.uses_w2() {
            add_grad(grads, id(ParamKind::AttW2(att_kind)), dw2);
        }
        if att_kind == AttentionType::GeneLinear {
            add_grad(grads, id(ParamKind::AttScale(att_kind)), dscale);
        }
    }

    match (dhd, &cache.mask) {
        (Some(mut dh), Some(mask)) => {
            dh *= mask;
            dh
        }
        (Some(dh), None) => dh,
        (None, _) => Array2::zeros((0, 0)),
    }
}

fn outer_add(dst: &mut Array2<f64>, a: &Array1<f64>, b: &Array1<f64>) {
    let a2 = a.view().insert_axis(Axis(1));
    let b2 = b.view().insert_axis(Axis(0));
    dst.scaled_add(1.0, &a2.dot(&b2));
}

/// `-sum_{n in mask} ln p[n, y_n]` for post-softmax rows.
pub fn loss(probs: &Array2<f64>, labels: &[usize], mask: &[usize]) -> Result<f64> {
    if mask.is_empty() {
        return Err(Error::Argument("loss over an empty node set".into()));
    }
    Ok(mask.iter().map(|&n| -probs[[n, labels[n]]].ln()).sum())
}

/// Fraction of `mask` whose argmax matches the label (first maximum wins ties).
pub fn accuracy(probs: ArrayView2<'_, f64>, labels: &[usize], mask: &[usize]) -> Result<f64> {
    if mask.is_empty() {
        return Err(Error::Argument("accuracy over an empty node set".into()));
    }
    let hits = mask
        .iter()
        .filter(|&&n| {
            let row = probs.row(n);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best == labels[n]
        })
        .count();
    Ok(hits as f64 / mask.len() as f64)
}

/// Mean cross-entropy over `mask` plus `l2/2 ||w||^2` over the touched
/// slices, with its gradient.
pub fn objective_and_gradient(
    subnet: &SubnetSpec,
    weights: &SharedWeights,
    graph: &PreparedGraph,
    mask: &[usize],
    l2: f64,
    mode: Mode,
    rng: &mut impl Rng,
) -> Result<(f64, Grads)> {
    let (out, caches) = run(subnet, weights, graph, rng, mode)?;
    let m = mask.len() as f64;
    let ce = loss(&out.probs, &graph.labels, mask)? / m;

    let mut dy = Array2::<f64>::zeros(out.probs.dim());
    for &n in mask {
        let mut row = dy.row_mut(n);
        row.assign(&out.probs.row(n));
        row[graph.labels[n]] -= 1.0;
        row /= m;
    }

    let mut grads = Grads::new();
    for l in (0..caches.len()).rev() {
        dy = layer_backward(&subnet.layers[l], &weights.layers[l], &caches[l], &dy, l, l > 0, &mut grads);
    }

    let mut penalty = 0.0;
    if l2 > 0.0 {
        for (id, g) in grads.iter_mut() {
            let p = weights.param(id).expect("known tensor");
            let w = p.leading(g.nrows(), g.ncols());
            penalty += 0.5 * l2 * w.iter().map(|x| x * x).sum::<f64>();
            g.scaled_add(l2, &w);
        }
    }
    Ok((ce + penalty, grads))
}

/// Objective value only; evaluated with the same randomness consumption as
/// [`objective_and_gradient`].
pub fn objective(
    subnet: &SubnetSpec,
    weights: &SharedWeights,
    graph: &PreparedGraph,
    mask: &[usize],
    l2: f64,
    mode: Mode,
    rng: &mut impl Rng,
) -> Result<f64> {
    objective_and_gradient(subnet, weights, graph, mask, l2, mode, rng).map(|(j, _)| j)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::DatasetSplit;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn path2() -> PreparedGraph {
        let g = Graph::from_parts(
            Array2::eye(2),
            vec![0, 1],
            2,
            [(0, 1)],
            DatasetSplit {
                train: vec![0, 1],
                val: vec![],
                test: vec![],
            },
        )
        .unwrap();
        PreparedGraph::new(&g).unwrap()
    }

    #[test]
    fn edge_sampling_rate_one_keeps_everything_without_randomness() {
        let g = path2();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let before = rng.clone();
        let es = EdgeSet::sample(&g.support, 1.0, &mut rng);
        assert_eq!(es.nnz(), 4);
        assert_eq!(rng, before);
    }

    #[test]
    fn sampling_keeps_self_loops() {
        let g = path2();
        let es = EdgeSet::sample(&g.support, 1e-12, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(es.nnz(), 2);
        assert!(es.diag.iter().all(|&d| d));
    }

    #[test]
    fn softmax_of_zero_row_is_uniform() {
        let p = row_softmax(&Array2::zeros((2, 4)));
        assert!(p.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn loss_examples() {
        let probs = Array2::from_shape_vec((1, 2), vec![0.5, 0.5]).unwrap();
        assert!((loss(&probs, &[0], &[0]).unwrap() - 2f64.ln()).abs() < 1e-15);
        let onehot = Array2::from_shape_vec((2, 2), vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(loss(&onehot, &[0, 1], &[0, 1]).unwrap(), 0.0);
        let uniform = Array2::from_elem((3, 4), 0.25);
        assert!((loss(&uniform, &[0, 1, 2], &[0, 1, 2]).unwrap() - 3.0 * 4f64.ln()).abs() < 1e-12);
        assert!(loss(&uniform, &[0], &[]).is_err());
    }

    #[test]
    fn accuracy_examples() {
        let onehot = Array2::from_shape_vec((2, 2), vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(accuracy(onehot.view(), &[0, 1], &[0, 1]).unwrap(), 1.0);
        assert_eq!(accuracy(onehot.view(), &[1, 0], &[0, 1]).unwrap(), 0.0);
        assert!(accuracy(onehot.view(), &[0, 1], &[]).is_err());
    }

    #[test]
    fn mean_coefficients_are_row_stochastic() {
        let g = path2();
        let es = EdgeSet::sample(&g.support, 1.0, &mut ChaCha8Rng::seed_from_u64(0));
        let c = coefficients(Aggregation::Mean, &es, &es.norm, 0.0);
        for i in 0..2 {
            let s: f64 = es.row(i).map(|e| c[e]).sum();
            assert!((s - 1.0).abs() < 1e-15);
        }
    }
}
