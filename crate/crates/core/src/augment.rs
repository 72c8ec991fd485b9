//! Stochastic view generation: edge dropping and feature masking.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub p_edge_drop_1: f64,
    pub p_edge_drop_2: f64,
    pub p_feat_mask_1: f64,
    pub p_feat_mask_2: f64,
    /// Mask individual entries instead of whole feature columns.
    pub per_entry_mask: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            p_edge_drop_1: 0.3,
            p_edge_drop_2: 0.4,
            p_feat_mask_1: 0.3,
            p_feat_mask_2: 0.4,
            per_entry_mask: false,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("p_edge_drop_1", self.p_edge_drop_1),
            ("p_edge_drop_2", self.p_edge_drop_2),
            ("p_feat_mask_1", self.p_feat_mask_1),
            ("p_feat_mask_2", self.p_feat_mask_2),
        ] {
            check_prob(name, p)?;
        }
        Ok(())
    }

    /// `(p_edge, p_feat)` for view 0 or 1.
    pub fn view(&self, which: usize) -> (f64, f64) {
        if which == 0 {
            (self.p_edge_drop_1, self.p_feat_mask_1)
        } else {
            (self.p_edge_drop_2, self.p_feat_mask_2)
        }
    }
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::config(format!("{name} = {p} must lie in [0, 1)")));
    }
    Ok(())
}

/// Drops each undirected edge with probability `p_edge` and zeroes each
/// feature column (or entry, with `per_entry`) with probability `p_feat`.
pub fn augment(
    g: &Graph,
    p_edge: f64,
    p_feat: f64,
    per_entry: bool,
    rng: &mut impl rand::Rng,
) -> Result<Graph> {
    check_prob("p_edge", p_edge)?;
    check_prob("p_feat", p_feat)?;
    let edges: Vec<(usize, usize)> = if p_edge > 0.0 {
        g.edge_list().into_iter().filter(|_| !rng.random_bool(p_edge)).collect()
    } else {
        g.edge_list()
    };
    let mut x = g.features().clone();
    if p_feat > 0.0 {
        if per_entry {
            for v in x.data_mut() {
                if rng.random_bool(p_feat) {
                    *v = 0.0;
                }
            }
        } else {
            let cols = x.cols();
            let mask: Vec<bool> = (0..cols).map(|_| rng.random_bool(p_feat)).collect();
            for i in 0..x.rows() {
                for (v, &m) in x.row_mut(i).iter_mut().zip(&mask) {
                    if m {
                        *v = 0.0;
                    }
                }
            }
        }
    }
    Graph::from_edges(&edges, x, g.labels().map(<[usize]>::to_vec))
}
