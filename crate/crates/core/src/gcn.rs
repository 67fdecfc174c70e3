//! Two-layer graph convolution over the heterogeneous graph.
//!
//! `E1 = Â X W1`, `G = Â relu(E1) W2` with `Â = D^-1/2 (A + I) D^-1/2`.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embed::VocabEmbeddings;
use crate::graph::{HeteroGraph, NodeKind};
use crate::nn::{init_matrix, visit_matrix, visit_matrix_mut};

/// Graphs above this many nodes use a sparse adjacency.
pub const DENSE_LIMIT: usize = 512;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GcnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnParams {
    pub w1: Array2<f64>,
    pub w2: Array2<f64>,
}

impl GcnParams {
    pub fn new(rng: &mut impl Rng, f0: usize, f1: usize, f2: usize) -> Self {
        GcnParams {
            w1: init_matrix(rng, f0, f1),
            w2: init_matrix(rng, f1, f2),
        }
    }

    pub fn zeros(f0: usize, f1: usize, f2: usize) -> Self {
        GcnParams {
            w1: Array2::zeros((f0, f1)),
            w2: Array2::zeros((f1, f2)),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.w2.ncols()
    }

    pub(crate) fn visit_named(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        visit_matrix(&format!("{prefix}.w1"), &self.w1, f);
        visit_matrix(&format!("{prefix}.w2"), &self.w2, f);
    }

    pub(crate) fn visit_named_mut(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &[usize], &mut [f64]),
    ) {
        visit_matrix_mut(&format!("{prefix}.w1"), &mut self.w1, f);
        visit_matrix_mut(&format!("{prefix}.w2"), &mut self.w2, f);
    }
}

/// Which parts of the argument features are kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureFlags {
    pub use_arg_type: bool,
    pub use_semantic_edges: bool,
}

impl Default for FeatureFlags {
    fn default() -> Self {
        FeatureFlags {
            use_arg_type: true,
            use_semantic_edges: true,
        }
    }
}

/// Node features, `n × 2D`. Doc rows hold the mean token vector in the first
/// half. Argument rows are `[phrase ++ role ; mean predicate vector]`.
pub fn assemble_features(g: &HeteroGraph, v: &VocabEmbeddings, flags: FeatureFlags) -> Array2<f64> {
    let d = v.dim();
    let mut x = Array2::zeros((g.node_count(), 2 * d));
    for n in g.nodes() {
        let mut row = x.row_mut(n.index);
        match &n.kind {
            NodeKind::Argument { key } => {
                let mut phrase: Vec<&str> = key.phrase_norm.split(' ').collect();
                if flags.use_arg_type {
                    phrase.push(&key.role);
                }
                row.slice_mut(s![..d]).assign(&v.mean_vector(&phrase));
                if flags.use_semantic_edges {
                    let preds = g.semantic().predicates_of(n.index);
                    let words: Vec<&str> = preds.iter().map(|p| p.word.as_str()).collect();
                    row.slice_mut(s![d..]).assign(&v.mean_vector(&words));
                }
            }
            _ => row.slice_mut(s![..d]).assign(&v.mean_vector(&n.tokens)),
        }
    }
    x
}

/// `D^-1/2 (A + I) D^-1/2` for a dense non-negative symmetric `A`.
pub fn normalize_adjacency(a: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let mut t = a.clone() + Array2::<f64>::eye(n);
    let inv: Array1<f64> = t.sum_axis(Axis(1)).mapv(|d| 1.0 / d.sqrt());
    for i in 0..n {
        for j in 0..n {
            t[[i, j]] *= inv[i] * inv[j];
        }
    }
    t
}

/// Compressed-row normalized adjacency.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrAdjacency {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrAdjacency {
    fn to_dense(&self) -> Array2<f64> {
        let mut a = Array2::zeros((self.n, self.n));
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                a[[i, self.cols[k]]] = self.vals[k];
            }
        }
        a
    }
}

/// Normalized adjacency in whichever representation suits the graph size.
#[derive(Debug, Clone, PartialEq)]
pub enum NormAdjacency {
    Dense(Array2<f64>),
    Sparse(CsrAdjacency),
}

impl NormAdjacency {
    pub fn from_graph(g: &HeteroGraph) -> Self {
        if g.node_count() <= DENSE_LIMIT {
            NormAdjacency::Dense(normalize_adjacency(&g.adjacency()))
        } else {
            Self::sparse_from_graph(g)
        }
    }

    pub fn sparse_from_graph(g: &HeteroGraph) -> Self {
        let n = g.node_count();
        let mut rows: Vec<Vec<(usize, f64)>> = (0..n).map(|i| vec![(i, 1.0)]).collect();
        for e in g.edges() {
            rows[e.a].push((e.b, e.weight));
            rows[e.b].push((e.a, e.weight));
        }
        let inv: Vec<f64> = rows
            .iter()
            .map(|r| 1.0 / r.iter().map(|&(_, w)| w).sum::<f64>().sqrt())
            .collect();
        let mut row_ptr = vec![0];
        let (mut cols, mut vals) = (Vec::new(), Vec::new());
        for (i, mut r) in rows.into_iter().enumerate() {
            r.sort_by_key(|&(j, _)| j);
            for (j, w) in r {
                cols.push(j);
                vals.push(w * inv[i] * inv[j]);
            }
            row_ptr.push(cols.len());
        }
        NormAdjacency::Sparse(CsrAdjacency {
            n,
            row_ptr,
            cols,
            vals,
        })
    }

    /// Identity: every node sees only itself.
    pub fn identity(n: usize) -> Self {
        NormAdjacency::Dense(Array2::eye(n))
    }

    pub fn size(&self) -> usize {
        match self {
            NormAdjacency::Dense(a) => a.nrows(),
            NormAdjacency::Sparse(c) => c.n,
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        match self {
            NormAdjacency::Dense(a) => a.clone(),
            NormAdjacency::Sparse(c) => c.to_dense(),
        }
    }

    /// `Â · m`.
    pub fn apply(&self, m: ArrayView2<f64>) -> Array2<f64> {
        match self {
            NormAdjacency::Dense(a) => a.dot(&m),
            NormAdjacency::Sparse(c) => {
                let mut out = Array2::zeros((c.n, m.ncols()));
                for i in 0..c.n {
                    let mut row = out.row_mut(i);
                    for k in c.row_ptr[i]..c.row_ptr[i + 1] {
                        row.scaled_add(c.vals[k], &m.row(c.cols[k]));
                    }
                }
                out
            }
        }
    }
}

/// Forward activations, kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphEmbeddings {
    pub e1: Array2<f64>,
    pub g: Array2<f64>,
    /// `Â X`.
    ax: Array2<f64>,
    /// `Â relu(E1)`.
    ah: Array2<f64>,
    doc_count: usize,
}

impl GraphEmbeddings {
    /// Document-level rows.
    pub fn g_s(&self) -> ArrayView2<'_, f64> {
        self.g.slice(s![..self.doc_count, ..])
    }

    /// Argument rows.
    pub fn g_arg(&self) -> ArrayView2<'_, f64> {
        self.g.slice(s![self.doc_count.., ..])
    }

    pub fn doc_count(&self) -> usize {
        self.doc_count
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnGrads {
    pub w1: Array2<f64>,
    pub w2: Array2<f64>,
    pub x: Array2<f64>,
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), GcnError> {
    if cond {
        Ok(())
    } else {
        Err(GcnError::ShapeMismatch(msg()))
    }
}

pub fn gcn_forward(
    adj: &NormAdjacency,
    x: ArrayView2<f64>,
    p: &GcnParams,
    doc_count: usize,
) -> Result<GraphEmbeddings, GcnError> {
    let n = adj.size();
    check(x.nrows() == n, || format!("X has {} rows for {n} nodes", x.nrows()))?;
    check(x.ncols() == p.w1.nrows(), || {
        format!("X has {} columns, W1 expects {}", x.ncols(), p.w1.nrows())
    })?;
    check(p.w1.ncols() == p.w2.nrows(), || {
        format!("W1 is {:?}, W2 is {:?}", p.w1.dim(), p.w2.dim())
    })?;
    check(doc_count <= n, || format!("{doc_count} doc rows of {n}"))?;
    let ax = adj.apply(x);
    let e1 = ax.dot(&p.w1);
    let h = e1.mapv(|v| v.max(0.0));
    let ah = adj.apply(h.view());
    let g = ah.dot(&p.w2);
    Ok(GraphEmbeddings {
        e1,
        g,
        ax,
        ah,
        doc_count,
    })
}

/// Reverse pass given `∂L/∂G` and optionally a direct `∂L/∂E1`.
pub fn gcn_backward(
    adj: &NormAdjacency,
    p: &GcnParams,
    fwd: &GraphEmbeddings,
    dg: ArrayView2<f64>,
    de1_extra: Option<ArrayView2<f64>>,
) -> Result<GcnGrads, GcnError> {
    check(dg.dim() == fwd.g.dim(), || {
        format!("upstream {:?} vs G {:?}", dg.dim(), fwd.g.dim())
    })?;
    let w2 = fwd.ah.t().dot(&dg);
    // Â is symmetric, so Âᵀ = Â.
    let dh = adj.apply(dg.dot(&p.w2.t()).view());
    let mut de1 = dh * fwd.e1.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
    if let Some(extra) = de1_extra {
        check(extra.dim() == de1.dim(), || "E1 upstream shape".into())?;
        de1 += &extra;
    }
    let w1 = fwd.ax.t().dot(&de1);
    let x = adj.apply(de1.dot(&p.w1.t()).view());
    Ok(GcnGrads { w1, w2, x })
}
