//! Undirected graphs, normalized propagation and the contraction checker.

use std::collections::VecDeque;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CsrMatrix, Matrix};

/// Undirected, unweighted graph with dense node features.
///
/// Neighbor lists are sorted and contain no self-loops or duplicates; the
/// adjacency is symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    indptr: Vec<usize>,
    neighbors: Vec<usize>,
    features: Matrix,
    labels: Option<Vec<usize>>,
}

impl Graph {
    /// Builds a graph from an undirected edge list. Each pair may appear in
    /// either or both orientations; duplicates collapse to one edge.
    pub fn from_edges(
        edges: &[(usize, usize)],
        features: Matrix,
        labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        let n = features.rows();
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::dim(format!("{} labels for {n} nodes", l.len())));
            }
        }
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut self_loops = 0usize;
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::invalid(format!("edge ({a},{b}) out of range for {n} nodes")));
            }
            if a == b {
                self_loops += 1;
                continue;
            }
            adj[a].push(b);
            adj[b].push(a);
        }
        if self_loops > 0 {
            log::warn!("dropped {self_loops} explicit self-loops; normalization adds them");
        }
        let mut indptr = Vec::with_capacity(n + 1);
        let mut neighbors = Vec::new();
        indptr.push(0);
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
            neighbors.extend_from_slice(list);
            indptr.push(neighbors.len());
        }
        Ok(Self { indptr, neighbors, features, labels })
    }

    pub fn n_nodes(&self) -> usize {
        self.indptr.len() - 1
    }

    pub fn n_edges(&self) -> usize {
        self.neighbors.len() / 2
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[self.indptr[i]..self.indptr[i + 1]]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.indptr[i + 1] - self.indptr[i]
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.n_nodes()).map(|i| self.degree(i)).collect()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.neighbors(a).binary_search(&b).is_ok()
    }

    /// Each undirected edge once, as `(low, high)` in sorted order.
    pub fn edge_list(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.n_edges());
        for i in 0..self.n_nodes() {
            for &j in self.neighbors(i) {
                if i < j {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn with_features(&self, features: Matrix) -> Result<Self> {
        if features.rows() != self.n_nodes() {
            return Err(Error::dim("replacement feature matrix has wrong row count"));
        }
        Ok(Self { features, ..self.clone() })
    }

    /// Same nodes and features, restricted edge set.
    pub fn with_edges(&self, edges: &[(usize, usize)]) -> Result<Self> {
        Self::from_edges(edges, self.features.clone(), self.labels.clone())
    }

    /// Induced subgraph on `nodes` (local index = position in `nodes`).
    pub fn induced_subgraph(&self, nodes: &[usize]) -> Result<Self> {
        let mut local = vec![usize::MAX; self.n_nodes()];
        for (li, &g) in nodes.iter().enumerate() {
            if g >= self.n_nodes() {
                return Err(Error::invalid(format!("node {g} out of range")));
            }
            local[g] = li;
        }
        let mut edges = Vec::new();
        for (li, &g) in nodes.iter().enumerate() {
            for &h in self.neighbors(g) {
                let lh = local[h];
                if lh != usize::MAX && li < lh {
                    edges.push((li, lh));
                }
            }
        }
        let labels = self.labels.as_ref().map(|l| nodes.iter().map(|&g| l[g]).collect());
        Self::from_edges(&edges, self.features.select_rows(nodes), labels)
    }

    pub fn is_connected(&self) -> bool {
        let n = self.n_nodes();
        if n == 0 {
            return true;
        }
        bfs_distances(self, &[0]).iter().all(|d| d.is_some())
    }

    /// Two-coloring of the raw adjacency (no self-loops).
    pub fn is_bipartite(&self) -> bool {
        let n = self.n_nodes();
        let mut color = vec![u8::MAX; n];
        let mut queue = VecDeque::new();
        for s in 0..n {
            if color[s] != u8::MAX {
                continue;
            }
            color[s] = 0;
            queue.push_back(s);
            while let Some(u) = queue.pop_front() {
                for &v in self.neighbors(u) {
                    if color[v] == u8::MAX {
                        color[v] = 1 - color[u];
                        queue.push_back(v);
                    } else if color[v] == color[u] {
                        return false;
                    }
                }
            }
        }
        true
    }
}

/// Hop distances from a set of sources; `None` for unreachable nodes.
pub fn bfs_distances(g: &Graph, sources: &[usize]) -> Vec<Option<usize>> {
    let mut dist = vec![None; g.n_nodes()];
    let mut queue = VecDeque::new();
    for &s in sources {
        if dist[s].is_none() {
            dist[s] = Some(0);
            queue.push_back(s);
        }
    }
    while let Some(u) = queue.pop_front() {
        let du = dist[u].unwrap();
        for &v in g.neighbors(u) {
            if dist[v].is_none() {
                dist[v] = Some(du + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropagationKind {
    /// `D^-1/2 (A + I) D^-1/2` with `D` the degree matrix of `A + I`.
    SymNormWithSelfLoops,
    /// `D^-1 (A + I)`: mean over the closed neighborhood.
    MeanAgg,
}

/// A normalized propagation operator bound to one graph's degree vector.
#[derive(Debug, Clone)]
pub struct PropagationOperator {
    kind: PropagationKind,
    scaling: Vec<f64>,
    csr: CsrMatrix,
}

impl PropagationOperator {
    pub fn new(g: &Graph, kind: PropagationKind) -> Self {
        let n = g.n_nodes();
        let scaling: Vec<f64> = (0..n)
            .map(|i| {
                let d = (g.degree(i) + 1) as f64;
                match kind {
                    PropagationKind::SymNormWithSelfLoops => 1.0 / d.sqrt(),
                    PropagationKind::MeanAgg => 1.0 / d,
                }
            })
            .collect();
        let rows: Vec<Vec<(usize, f64)>> = (0..n)
            .map(|i| {
                let mut entries: Vec<usize> = g.neighbors(i).to_vec();
                let pos = entries.partition_point(|&j| j < i);
                entries.insert(pos, i);
                entries
                    .into_iter()
                    .map(|j| {
                        let v = match kind {
                            PropagationKind::SymNormWithSelfLoops => scaling[i] * scaling[j],
                            PropagationKind::MeanAgg => scaling[i],
                        };
                        (j, v)
                    })
                    .collect()
            })
            .collect();
        let csr = CsrMatrix::from_row_entries(n, &rows).expect("neighbor indices are in range");
        Self { kind, scaling, csr }
    }

    pub fn kind(&self) -> PropagationKind {
        self.kind
    }

    /// Per-node factors: `d^-1/2` for the symmetric kind, `d^-1` for mean.
    pub fn scaling(&self) -> &[f64] {
        &self.scaling
    }

    pub fn as_csr(&self) -> &CsrMatrix {
        &self.csr
    }

    pub fn apply(&self, h: &Matrix) -> Result<Matrix> {
        self.csr.spmm(h)
    }
}

/// Applies `op` to `h` `steps` times.
pub fn propagate(g: &Graph, h: &Matrix, op: &PropagationOperator, steps: usize) -> Result<Matrix> {
    if h.rows() != g.n_nodes() || op.as_csr().rows() != g.n_nodes() {
        return Err(Error::dim(format!(
            "propagate: {} rows for {} nodes",
            h.rows(),
            g.n_nodes()
        )));
    }
    let mut x = h.clone();
    for _ in 0..steps {
        x = op.apply(&x)?;
    }
    Ok(x)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ViolatedPair {
    pub i: usize,
    pub j: usize,
    pub initial: f64,
    pub propagated: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContractionReport {
    pub n_nodes: usize,
    pub steps: usize,
    pub connected: bool,
    /// Two-colorability of the raw adjacency.
    pub bipartite_raw: bool,
    /// The propagated operator carries self-loops, so its closed walks
    /// include odd lengths whenever the graph has a node.
    pub bipartite_with_self_loops: bool,
    pub preconditions_met: bool,
    pub max_pair_ratio: f64,
    pub violated_pairs: Vec<ViolatedPair>,
    pub tolerance: f64,
}

/// Default step count for the contraction check.
pub const DEFAULT_CONTRACTION_STEPS: usize = 50;

/// Compares every pairwise Euclidean distance after `steps` symmetric
/// normalized propagation steps with the initial one.
///
/// A pair at zero initial distance has ratio 1 if it stays at zero and
/// `+inf` otherwise. Precondition failures are reported, not raised.
pub fn check_contraction(g: &Graph, h0: &Matrix, steps: usize, tol: f64) -> Result<ContractionReport> {
    if steps == 0 {
        return Err(Error::invalid("contraction check needs at least one step"));
    }
    let op = PropagationOperator::new(g, PropagationKind::SymNormWithSelfLoops);
    let ht = propagate(g, h0, &op, steps)?;
    let n = g.n_nodes();
    let connected = g.is_connected();
    let bipartite_raw = g.is_bipartite();
    let mut max_ratio: f64 = if n < 2 { 1.0 } else { 0.0 };
    let mut violated = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let d0 = dist(h0.row(i), h0.row(j));
            let dt = dist(ht.row(i), ht.row(j));
            let ratio = if d0 < 1e-12 {
                if dt < 1e-12 {
                    1.0
                } else {
                    f64::INFINITY
                }
            } else {
                dt / d0
            };
            max_ratio = max_ratio.max(ratio);
            if ratio > 1.0 + tol {
                violated.push(ViolatedPair { i, j, initial: d0, propagated: dt, ratio });
            }
        }
    }
    Ok(ContractionReport {
        n_nodes: n,
        steps,
        connected,
        bipartite_raw,
        bipartite_with_self_loops: n == 0,
        preconditions_met: connected && n > 0,
        max_pair_ratio: max_ratio,
        violated_pairs: violated,
        tolerance: tol,
    })
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

// ---------------------------------------------------------------------------
// File formats

/// Parses an edge list: two whitespace-separated 0-based ids per line.
/// Blank lines and lines starting with `#` are ignored.
pub fn parse_edge_list(text: &str) -> Result<Vec<(usize, usize)>> {
    let mut edges = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let (a, b) = match (it.next(), it.next(), it.next()) {
            (Some(a), Some(b), None) => (a, b),
            _ => return Err(Error::Parse(format!("edge line {}: expected two ids", ln + 1))),
        };
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| Error::Parse(format!("edge line {}: {s:?}: {e}", ln + 1)))
        };
        edges.push((parse(a)?, parse(b)?));
    }
    Ok(edges)
}

/// Parses a headerless numeric CSV into a matrix.
pub fn parse_csv_matrix(text: &str) -> Result<Matrix> {
    let mut rows = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("csv line {}: {s:?}: {e}", ln + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Matrix::from_rows(&rows)
}

pub fn parse_labels(text: &str) -> Result<Vec<usize>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(ln, l)| {
            l.trim()
                .parse::<usize>()
                .map_err(|e| Error::Parse(format!("label line {}: {e}", ln + 1)))
        })
        .collect()
}

pub fn load_graph(edges: &Path, features: &Path, labels: Option<&Path>) -> Result<Graph> {
    let e = parse_edge_list(&fs::read_to_string(edges)?)?;
    let x = parse_csv_matrix(&fs::read_to_string(features)?)?;
    let y = match labels {
        Some(p) => Some(parse_labels(&fs::read_to_string(p)?)?),
        None => None,
    };
    Graph::from_edges(&e, x, y)
}

pub fn write_csv_matrix(path: &Path, m: &Matrix) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for i in 0..m.rows() {
        let line: Vec<String> = m.row(i).iter().map(|v| format!("{v}")).collect();
        writeln!(f, "{}", line.join(","))?;
    }
    Ok(())
}

/// Writes `edges.txt`, `features.csv` and (if present) `labels.txt`.
pub fn save_graph(dir: &Path, g: &Graph) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut f = std::io::BufWriter::new(fs::File::create(dir.join("edges.txt"))?);
    for (a, b) in g.edge_list() {
        writeln!(f, "{a} {b}")?;
    }
    drop(f);
    write_csv_matrix(&dir.join("features.csv"), g.features())?;
    if let Some(labels) = g.labels() {
        let mut f = std::io::BufWriter::new(fs::File::create(dir.join("labels.txt"))?);
        for l in labels {
            writeln!(f, "{l}")?;
        }
    }
    Ok(())
}
