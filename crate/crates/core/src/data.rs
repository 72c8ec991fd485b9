//! Synthetic stochastic block model graphs with class-mean features.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::linalg::Matrix;
use crate::rng::{self, streams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbmConfig {
    pub blocks: usize,
    pub nodes_per_block: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    /// Norm of each block's feature mean.
    pub class_sep: f64,
}

impl Default for SbmConfig {
    fn default() -> Self {
        Self { blocks: 3, nodes_per_block: 100, p_in: 0.1, p_out: 0.01, feature_dim: 32, class_sep: 1.0 }
    }
}

impl SbmConfig {
    pub fn n_nodes(&self) -> usize {
        self.blocks * self.nodes_per_block
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 || self.nodes_per_block == 0 {
            return Err(Error::config("SBM needs at least one block with at least one node"));
        }
        for (name, p) in [("p_in", self.p_in), ("p_out", self.p_out)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("{name} = {p} must lie in [0, 1]")));
            }
        }
        if self.feature_dim == 0 {
            return Err(Error::config("feature_dim must be positive"));
        }
        if !(self.class_sep >= 0.0) {
            return Err(Error::config("class_sep must be non-negative"));
        }
        Ok(())
    }
}

/// Samples an SBM graph. Node `i` belongs to block `i / nodes_per_block`.
pub fn generate_sbm(cfg: &SbmConfig, seed: u64) -> Result<Graph> {
    cfg.validate()?;
    if cfg.p_in <= cfg.p_out {
        log::warn!("SBM with p_in {} <= p_out {} has no community structure", cfg.p_in, cfg.p_out);
    }
    let mut r = rng::stream(seed, streams::DATA);
    let n = cfg.n_nodes();
    let labels: Vec<usize> = (0..n).map(|i| i / cfg.nodes_per_block).collect();

    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let p = if labels[i] == labels[j] { cfg.p_in } else { cfg.p_out };
            if p > 0.0 && r.random_bool(p) {
                edges.push((i, j));
            }
        }
    }

    let means: Vec<Vec<f64>> = (0..cfg.blocks)
        .map(|_| {
            let v: Vec<f64> = (0..cfg.feature_dim).map(|_| StandardNormal.sample(&mut r)).collect();
            let norm = crate::linalg::norm(&v).max(f64::MIN_POSITIVE);
            v.into_iter().map(|x| x / norm * cfg.class_sep).collect()
        })
        .collect();
    let features = Matrix::from_fn(n, cfg.feature_dim, |i, j| {
        let noise: f64 = StandardNormal.sample(&mut r);
        means[labels[i]][j] + noise
    });
    Graph::from_edges(&edges, features, Some(labels))
}

/// Graph from a short spec: `complete:n`, `cycle:n`, `path:n`, `star:n`
/// (center 0 plus `n - 1` leaves), `triangles:k` (k disjoint triangles) or
/// `sbm:blocks,nodes_per_block,p_in,p_out`. Features are i.i.d. standard
/// normal with `feature_dim` columns.
pub fn named_graph(spec: &str, feature_dim: usize, seed: u64) -> Result<Graph> {
    let (kind, arg) = spec
        .split_once(':')
        .ok_or_else(|| Error::config(format!("graph spec {spec:?} must look like kind:args")))?;
    let count = |a: &str| -> Result<usize> {
        a.trim().parse().map_err(|_| Error::config(format!("bad count {a:?} in graph spec")))
    };
    if kind == "sbm" {
        let parts: Vec<&str> = arg.split(',').collect();
        if parts.len() != 4 {
            return Err(Error::config("sbm spec is sbm:blocks,nodes_per_block,p_in,p_out"));
        }
        let prob = |a: &str| -> Result<f64> {
            a.trim().parse().map_err(|_| Error::config(format!("bad probability {a:?}")))
        };
        let cfg = SbmConfig {
            blocks: count(parts[0])?,
            nodes_per_block: count(parts[1])?,
            p_in: prob(parts[2])?,
            p_out: prob(parts[3])?,
            feature_dim,
            class_sep: 0.0,
        };
        return generate_sbm(&cfg, seed);
    }
    let k = count(arg)?;
    let (n, edges): (usize, Vec<(usize, usize)>) = match kind {
        "complete" => (k, (0..k).flat_map(|i| ((i + 1)..k).map(move |j| (i, j))).collect()),
        "cycle" => {
            if k < 3 {
                return Err(Error::config("a cycle needs at least 3 nodes"));
            }
            (k, (0..k).map(|i| (i, (i + 1) % k)).collect())
        }
        "path" => (k, (1..k).map(|i| (i - 1, i)).collect()),
        "star" => (k, (1..k).map(|i| (0, i)).collect()),
        "triangles" => (3 * k, (0..k).flat_map(|t| [(3 * t, 3 * t + 1), (3 * t + 1, 3 * t + 2), (3 * t, 3 * t + 2)]).collect()),
        other => return Err(Error::config(format!("unknown graph kind {other:?}"))),
    };
    if n == 0 {
        return Err(Error::config("graph spec describes an empty graph"));
    }
    Graph::from_edges(&edges, gaussian_features(n, feature_dim, seed), None)
}

/// `n x dim` matrix of i.i.d. standard normal entries.
pub fn gaussian_features(n: usize, dim: usize, seed: u64) -> Matrix {
    let mut r = rng::stream(seed, streams::DATA);
    Matrix::from_fn(n, dim, |_, _| StandardNormal.sample(&mut r))
}

/// Newman modularity of a node partition.
pub fn modularity(g: &Graph, communities: &[usize]) -> Result<f64> {
    if communities.len() != g.n_nodes() {
        return Err(Error::dim("one community id per node required"));
    }
    let m2 = 2.0 * g.n_edges() as f64;
    if m2 == 0.0 {
        return Ok(0.0);
    }
    let k = communities.iter().copied().max().map_or(0, |c| c + 1);
    let mut internal = vec![0.0; k];
    let mut degree_sum = vec![0.0; k];
    for i in 0..g.n_nodes() {
        let c = communities[i];
        degree_sum[c] += g.degree(i) as f64;
        internal[c] += g.neighbors(i).iter().filter(|&&j| communities[j] == c).count() as f64;
    }
    Ok((0..k).map(|c| internal[c] / m2 - (degree_sum[c] / m2).powi(2)).sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complete_blocks_are_disjoint_cliques() {
        let cfg = SbmConfig { blocks: 2, nodes_per_block: 3, p_in: 1.0, p_out: 0.0, feature_dim: 2, class_sep: 1.0 };
        let g = generate_sbm(&cfg, 4).unwrap();
        assert_eq!(g.edge_list(), vec![(0, 1), (0, 2), (1, 2), (3, 4), (3, 5), (4, 5)]);
        assert_eq!(g.labels().unwrap(), &[0, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn empty_blocks_rejected() {
        let cfg = SbmConfig { blocks: 0, ..SbmConfig::default() };
        assert!(generate_sbm(&cfg, 0).is_err());
    }

    #[test]
    fn modularity_of_two_cliques() {
        let cfg = SbmConfig { blocks: 2, nodes_per_block: 3, p_in: 1.0, p_out: 0.0, feature_dim: 1, class_sep: 0.0 };
        let g = generate_sbm(&cfg, 0).unwrap();
        // Each clique holds half the edges and half the degree: 2 * (1/2 - 1/4).
        let q = modularity(&g, g.labels().unwrap()).unwrap();
        assert!((q - 0.5).abs() < 1e-12);
    }

    #[test]
    fn named_graphs_have_expected_shape() {
        let k4 = named_graph("complete:4", 3, 0).unwrap();
        assert_eq!((k4.n_nodes(), k4.n_edges()), (4, 6));
        let c6 = named_graph("cycle:6", 2, 0).unwrap();
        assert!(c6.is_bipartite() && c6.is_connected());
        let t = named_graph("triangles:2", 2, 0).unwrap();
        assert!(!t.is_connected());
        assert_eq!(named_graph("star:5", 1, 0).unwrap().degree(0), 4);
        assert_eq!(named_graph("sbm:2,5,1,0", 2, 0).unwrap().n_edges(), 20);
        assert!(named_graph("wheel:5", 1, 0).is_err());
        assert!(named_graph("cycle", 1, 0).is_err());
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = SbmConfig::default();
        assert_eq!(generate_sbm(&cfg, 3).unwrap(), generate_sbm(&cfg, 3).unwrap());
    }
}
