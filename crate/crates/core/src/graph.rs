//! Undirected simple graphs, node features, and the GCN propagation matrix.
//!
//! A dataset directory holds three files:
//!
//! * `meta.json`: `{"num_nodes": int, "num_features": int}`
//! * `graph.tsv`: one `u<TAB>v` pair per line, 0-based ids
//! * `features.csv`: `num_nodes` lines of `num_features` comma-separated reals
//!
//! Reversed and repeated pairs collapse to one stored edge `(min, max)`;
//! self-loops are rejected.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::sparse::CsrMatrix;

/// Unordered node pair normalized to `(min, max)`.
#[inline]
pub fn canonical(u: usize, v: usize) -> (usize, usize) {
    if u < v {
        (u, v)
    } else {
        (v, u)
    }
}

/// Undirected simple graph with a symmetric CSR adjacency.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    indptr: Vec<usize>,
    indices: Vec<usize>,
}

impl Graph {
    /// Builds a graph, merging duplicate/reversed pairs and rejecting
    /// self-loops and out-of-range ids.
    pub fn from_edges(num_nodes: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut stored = Vec::new();
        for (u, v) in edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::Dataset(format!("edge ({u}, {v}) out of range for {num_nodes} nodes")));
            }
            if u == v {
                return Err(Error::Dataset(format!("self-loop at node {u}")));
            }
            stored.push(canonical(u, v));
        }
        stored.sort_unstable();
        stored.dedup();
        Ok(Self::from_sorted_unique(num_nodes, stored))
    }

    /// `edges` must already be canonical, sorted and duplicate-free.
    pub(crate) fn from_sorted_unique(num_nodes: usize, edges: Vec<(usize, usize)>) -> Self {
        let mut degree = vec![0usize; num_nodes];
        for &(u, v) in &edges {
            degree[u] += 1;
            degree[v] += 1;
        }
        let mut indptr = Vec::with_capacity(num_nodes + 1);
        indptr.push(0);
        for d in &degree {
            indptr.push(indptr.last().unwrap() + d);
        }
        let mut fill = indptr[..num_nodes].to_vec();
        let mut indices = vec![0usize; indptr[num_nodes]];
        for &(u, v) in &edges {
            indices[fill[u]] = v;
            fill[u] += 1;
            indices[fill[v]] = u;
            fill[v] += 1;
        }
        for r in 0..num_nodes {
            indices[indptr[r]..indptr[r + 1]].sort_unstable();
        }
        Graph {
            num_nodes,
            edges,
            indptr,
            indices,
        }
    }

    pub fn empty(num_nodes: usize) -> Self {
        Self::from_sorted_unique(num_nodes, Vec::new())
    }

    #[inline]
    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    #[inline]
    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Stored edges, each once with `u < v`, in sorted order.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    #[inline]
    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.indices[self.indptr[u]..self.indptr[u + 1]]
    }

    #[inline]
    pub fn degree(&self, u: usize) -> usize {
        self.indptr[u + 1] - self.indptr[u]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        u < self.num_nodes && v < self.num_nodes && self.neighbors(u).binary_search(&v).is_ok()
    }

    pub fn csr_indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn csr_indices(&self) -> &[usize] {
        &self.indices
    }

    /// Hash set of stored edges for O(1) membership tests.
    pub fn edge_set(&self) -> HashSet<(usize, usize)> {
        self.edges.iter().copied().collect()
    }
}

/// Dense `rows x cols` node features, row-major, stored as `f32`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape("features", format!("{} values for {rows}x{cols}", data.len())));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Dataset(format!("non-finite feature at row {}", i / cols.max(1))));
        }
        Ok(FeatureMatrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        FeatureMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Sparse copy for the first-layer product.
    pub fn to_csr<T: Real>(&self) -> CsrMatrix<T> {
        let mut indptr = Vec::with_capacity(self.rows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for r in 0..self.rows {
            for (c, &v) in self.row(r).iter().enumerate() {
                if v != 0.0 {
                    indices.push(c);
                    values.push(T::from_f64(v as f64));
                }
            }
            indptr.push(indices.len());
        }
        CsrMatrix::new(self.rows, self.cols, indptr, indices, values).expect("valid by construction")
    }

    pub fn from_csr<T: Real>(m: &CsrMatrix<T>) -> Self {
        let mut out = FeatureMatrix::zeros(m.rows(), m.cols());
        for r in 0..m.rows() {
            for (c, v) in m.row(r) {
                out.data[r * out.cols + c] = v.as_f64() as f32;
            }
        }
        out
    }

    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(rows.len() * self.cols);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        FeatureMatrix {
            rows: rows.len(),
            cols: self.cols,
            data,
        }
    }
}

/// `D^-1/2 (A + I) D^-1/2` with `D` the degree matrix of `A + I`.
#[derive(Clone, Debug)]
pub struct NormalizedAdjacency<T>(Arc<CsrMatrix<T>>);

impl<T: Real> NormalizedAdjacency<T> {
    pub fn matrix(&self) -> &Arc<CsrMatrix<T>> {
        &self.0
    }

    pub fn num_nodes(&self) -> usize {
        self.0.rows()
    }
}

pub fn normalize_adjacency<T: Real>(g: &Graph) -> NormalizedAdjacency<T> {
    let n = g.num_nodes();
    let inv_sqrt: Vec<f64> = (0..n).map(|u| 1.0 / ((g.degree(u) + 1) as f64).sqrt()).collect();
    let mut indptr = Vec::with_capacity(n + 1);
    let mut indices = Vec::with_capacity(g.csr_indices().len() + n);
    let mut values = Vec::with_capacity(g.csr_indices().len() + n);
    indptr.push(0);
    for u in 0..n {
        let mut self_done = false;
        for &v in g.neighbors(u) {
            if !self_done && v > u {
                indices.push(u);
                values.push(T::from_f64(inv_sqrt[u] * inv_sqrt[u]));
                self_done = true;
            }
            indices.push(v);
            values.push(T::from_f64(inv_sqrt[u] * inv_sqrt[v]));
        }
        if !self_done {
            indices.push(u);
            values.push(T::from_f64(inv_sqrt[u] * inv_sqrt[u]));
        }
        indptr.push(indices.len());
    }
    NormalizedAdjacency(Arc::new(
        CsrMatrix::new(n, n, indptr, indices, values).expect("valid by construction"),
    ))
}

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    num_nodes: usize,
    num_features: usize,
}

fn open(path: &Path) -> Result<BufReader<std::fs::File>> {
    match std::fs::File::open(path) {
        Ok(f) => Ok(BufReader::new(f)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::MissingFile(path.to_path_buf())),
        Err(e) => Err(Error::io(path, e)),
    }
}

/// Reads a dataset directory (see the module docs for the layout).
pub fn load_dataset(dir: &Path) -> Result<(Graph, FeatureMatrix)> {
    let meta_path = dir.join("meta.json");
    let meta: Meta = serde_json::from_reader(open(&meta_path)?)?;

    let graph_path = dir.join("graph.tsv");
    let mut edges = Vec::new();
    for (i, line) in open(&graph_path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(&graph_path, e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            file: "graph.tsv".into(),
            line: i + 1,
            msg,
        };
        let mut parts = line.split_whitespace();
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(parse_err(format!("expected two node ids, got {line:?}")));
        };
        let u: usize = a.parse().map_err(|_| parse_err(format!("bad node id {a:?}")))?;
        let v: usize = b.parse().map_err(|_| parse_err(format!("bad node id {b:?}")))?;
        if u >= meta.num_nodes || v >= meta.num_nodes {
            return Err(parse_err(format!("node id out of range for {} nodes", meta.num_nodes)));
        }
        if u == v {
            return Err(parse_err(format!("self-loop at node {u}")));
        }
        edges.push((u, v));
    }
    let graph = Graph::from_edges(meta.num_nodes, edges)?;

    let feat_path = dir.join("features.csv");
    let mut data = Vec::with_capacity(meta.num_nodes * meta.num_features);
    let mut rows = 0usize;
    for (i, line) in open(&feat_path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(&feat_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            file: "features.csv".into(),
            line: i + 1,
            msg,
        };
        let before = data.len();
        for tok in line.split(',') {
            let tok = tok.trim();
            let v: f32 = tok.parse().map_err(|_| parse_err(format!("non-numeric token {tok:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(format!("non-finite value {tok:?}")));
            }
            data.push(v);
        }
        if data.len() - before != meta.num_features {
            return Err(parse_err(format!(
                "{} columns, expected {}",
                data.len() - before,
                meta.num_features
            )));
        }
        rows += 1;
    }
    if rows != meta.num_nodes {
        return Err(Error::Dataset(format!(
            "features.csv has {rows} rows, meta.json says {} nodes",
            meta.num_nodes
        )));
    }
    let features = FeatureMatrix::new(rows, meta.num_features, data)?;
    Ok((graph, features))
}

/// Writes `g` and `x` in the dataset directory layout.
pub fn write_dataset(dir: &Path, g: &Graph, x: &FeatureMatrix) -> Result<()> {
    if x.rows() != g.num_nodes() {
        return Err(Error::Dataset("feature rows differ from node count".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = Meta {
        num_nodes: g.num_nodes(),
        num_features: x.cols(),
    };
    let meta_path = dir.join("meta.json");
    std::fs::write(&meta_path, serde_json::to_string(&meta)? + "\n").map_err(|e| Error::io(&meta_path, e))?;

    let graph_path = dir.join("graph.tsv");
    let mut s = String::with_capacity(g.num_edges() * 12);
    for &(u, v) in g.edges() {
        let _ = writeln!(s, "{u}\t{v}");
    }
    std::fs::write(&graph_path, s).map_err(|e| Error::io(&graph_path, e))?;

    let feat_path = dir.join("features.csv");
    let f = std::fs::File::create(&feat_path).map_err(|e| Error::io(&feat_path, e))?;
    let mut w = std::io::BufWriter::new(f);
    let mut line = String::new();
    for r in 0..x.rows() {
        line.clear();
        for (c, v) in x.row(r).iter().enumerate() {
            if c > 0 {
                line.push(',');
            }
            let _ = write!(line, "{v}");
        }
        line.push('\n');
        w.write_all(line.as_bytes()).map_err(|e| Error::io(&feat_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&feat_path, e))
}
