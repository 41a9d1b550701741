//! Immutable undirected graphs in CSR form, neighborhood queries, and the symmetric
//! normalizations consumed by the GCN layers.

use std::collections::HashMap;
use std::sync::Arc;

use crate::data::LabelData;
use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// Undirected simple graph stored symmetrically in compressed sparse row form.
///
/// Neighbor lists are strictly increasing and never contain the node itself; self-loops only
/// appear at normalization time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    num_nodes: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    num_edges: usize,
}

impl Graph {
    /// Builds a graph from an edge list. Duplicates and both orientations collapse to one
    /// undirected edge; self-loops are dropped.
    pub fn from_edges(edges: &[(usize, usize)], num_nodes: usize) -> Result<Graph> {
        let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); num_nodes];
        for &(u, v) in edges {
            for node in [u, v] {
                if node >= num_nodes {
                    return Err(Error::NodeOutOfRange { node, num_nodes });
                }
            }
            if u != v {
                adjacency[u].push(v);
                adjacency[v].push(u);
            }
        }
        let mut row_offsets = Vec::with_capacity(num_nodes + 1);
        let mut col_indices = Vec::new();
        row_offsets.push(0);
        for mut nbrs in adjacency {
            nbrs.sort_unstable();
            nbrs.dedup();
            col_indices.extend(nbrs);
            row_offsets.push(col_indices.len());
        }
        let num_edges = col_indices.len() / 2;
        Ok(Graph {
            num_nodes,
            row_offsets,
            col_indices,
            num_edges,
        })
    }

    /// Complete graph on `n` nodes.
    pub fn complete(n: usize) -> Graph {
        let mut row_offsets = Vec::with_capacity(n + 1);
        let mut col_indices = Vec::with_capacity(n * n.saturating_sub(1));
        row_offsets.push(0);
        for u in 0..n {
            col_indices.extend((0..n).filter(|&v| v != u));
            row_offsets.push(col_indices.len());
        }
        Graph {
            num_nodes: n,
            row_offsets,
            col_indices,
            num_edges: n * n.saturating_sub(1) / 2,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.num_edges
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.col_indices[self.row_offsets[v]..self.row_offsets[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.row_offsets[v + 1] - self.row_offsets[v]
    }

    pub fn max_degree(&self) -> usize {
        (0..self.num_nodes).map(|v| self.degree(v)).max().unwrap_or(0)
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    /// Undirected edges as `(u, v)` with `u < v`, in CSR order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_nodes).flat_map(move |u| self.neighbors(u).iter().filter(move |&&v| u < v).map(move |&v| (u, v)))
    }

    fn check_nodes(&self, nodes: &[usize]) -> Result<()> {
        match nodes.iter().find(|&&v| v >= self.num_nodes) {
            Some(&node) => Err(Error::NodeOutOfRange {
                node,
                num_nodes: self.num_nodes,
            }),
            None => Ok(()),
        }
    }

    /// Neighbors of `set` that are not themselves in `set`, sorted by node id.
    pub fn candidates(&self, set: &[usize]) -> Vec<usize> {
        let mut in_set = vec![false; self.num_nodes];
        for &v in set {
            in_set[v] = true;
        }
        let mut seen = vec![false; self.num_nodes];
        let mut out = Vec::new();
        for &v in set {
            for &u in self.neighbors(v) {
                if !in_set[u] && !seen[u] {
                    seen[u] = true;
                    out.push(u);
                }
            }
        }
        out.sort_unstable();
        out
    }
}

/// Symmetrically normalized adjacency with self-loops, `D̃^{-1/2}(A+I)D̃^{-1/2}`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    matrix: CsrMatrix,
}

impl NormalizedAdjacency {
    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CsrMatrix {
        self.matrix
    }
}

/// Full-graph GCN propagation matrix.
pub fn normalize_full(g: &Graph) -> NormalizedAdjacency {
    let n = g.num_nodes();
    let deg: Vec<f64> = (0..n).map(|v| (g.degree(v) + 1) as f64).collect();
    let entries = (0..n)
        .map(|i| {
            let mut row: Vec<(usize, f64)> = g
                .neighbors(i)
                .iter()
                .map(|&j| (j, 1.0 / (deg[i] * deg[j]).sqrt()))
                .collect();
            row.push((i, 1.0 / deg[i]));
            row
        })
        .collect();
    NormalizedAdjacency {
        matrix: CsrMatrix::from_row_entries(n, n, entries).expect("graph rows are duplicate-free"),
    }
}

/// Normalized block of `A + I` restricted to `rows × cols`, with degrees counted inside the block.
///
/// Row `a` of the block corresponds to node `rows[a]`, column `b` to node `cols[b]`. Rows with no
/// entries stay zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerAdjacency {
    rows: Vec<usize>,
    cols: Vec<usize>,
    matrix: Arc<CsrMatrix>,
}

impl LayerAdjacency {
    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn cols(&self) -> &[usize] {
        &self.cols
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    /// Shared handle to the block, as consumed by [`crate::Tape::spmm`].
    pub fn shared(&self) -> Arc<CsrMatrix> {
        Arc::clone(&self.matrix)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.matrix.shape()
    }
}

/// Builds the per-layer block between `rows` and `cols` (both duplicate-free node lists).
pub fn layer_adjacency(g: &Graph, rows: &[usize], cols: &[usize]) -> Result<LayerAdjacency> {
    g.check_nodes(rows)?;
    g.check_nodes(cols)?;
    let col_pos: HashMap<usize, usize> = cols.iter().enumerate().map(|(b, &v)| (v, b)).collect();
    if col_pos.len() != cols.len() {
        return Err(Error::Contract("layer adjacency columns contain duplicates".into()));
    }
    if rows.iter().collect::<std::collections::HashSet<_>>().len() != rows.len() {
        return Err(Error::Contract("layer adjacency rows contain duplicates".into()));
    }
    let mut pattern: Vec<Vec<usize>> = Vec::with_capacity(rows.len());
    let mut col_degree = vec![0usize; cols.len()];
    for &r in rows {
        let mut row: Vec<usize> = g
            .neighbors(r)
            .iter()
            .chain(std::iter::once(&r))
            .filter_map(|v| col_pos.get(v).copied())
            .collect();
        row.sort_unstable();
        for &b in &row {
            col_degree[b] += 1;
        }
        pattern.push(row);
    }
    let entries = pattern
        .into_iter()
        .map(|row| {
            let d_row = row.len() as f64;
            row.into_iter()
                .map(|b| (b, 1.0 / (d_row * col_degree[b] as f64).sqrt()))
                .collect()
        })
        .collect();
    let matrix = CsrMatrix::from_row_entries(rows.len(), cols.len(), entries)?;
    Ok(LayerAdjacency {
        rows: rows.to_vec(),
        cols: cols.to_vec(),
        matrix: Arc::new(matrix),
    })
}

/// Fraction of edges whose endpoints agree on their label.
///
/// Multi-class labels count exact matches; multi-label sets contribute the Jaccard similarity of
/// the endpoint label sets (two empty sets count as identical).
pub fn edge_homophily(g: &Graph, labels: &LabelData) -> Result<f64> {
    if labels.num_nodes() != g.num_nodes() {
        return Err(Error::shape(
            "edge_homophily",
            format!("{} labels for {} nodes", labels.num_nodes(), g.num_nodes()),
        ));
    }
    if g.num_edges() == 0 {
        return Err(Error::EmptyGraph);
    }
    let total: f64 = match labels {
        LabelData::MultiClass { classes, .. } => {
            g.edges().filter(|&(u, v)| classes[u] == classes[v]).count() as f64
        }
        LabelData::MultiLabel { sets, .. } => g.edges().map(|(u, v)| jaccard(&sets[u], &sets[v])).sum(),
    };
    Ok(total / g.num_edges() as f64)
}

fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    let (mut i, mut j, mut both) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                both += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - both;
    if union == 0 {
        1.0
    } else {
        both as f64 / union as f64
    }
}
