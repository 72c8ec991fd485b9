//! Helpers shared by the integration tests. Apart from `gradcheck`, nothing
//! here calls into the crate's loss or mixture code.

#![allow(dead_code)]

pub mod gradcheck;

use progcl::linalg::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(r: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(r))
}

pub fn uniform_matrix(r: &mut impl Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| r.random_range(lo..hi))
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    d / (na * nb)
}

/// Cosine similarity matrix between the rows of `a` and `b`.
pub fn cosine_matrix(a: &Matrix, b: &Matrix) -> Matrix {
    Matrix::from_fn(a.rows(), b.rows(), |i, j| cos(a.row(i), b.row(j)))
}

/// Scalar loop implementation of the symmetric contrastive objective.
///
/// `w_u[i][k]` scales the negatives of anchor `u_i` (both the inter-view
/// term `v_k` and the intra-view term `u_k`), `w_v` likewise with the
/// inter-view term `u_k` taken from column `i` of `inter`. `syn_u[i]`
/// lists the similarities of `u_i` to its synthetic negatives.
pub fn reference_loss(
    inter: &Matrix,
    intra_u: &Matrix,
    intra_v: &Matrix,
    tau: f64,
    w_u: Option<&Matrix>,
    w_v: Option<&Matrix>,
    syn_u: Option<&Matrix>,
    syn_v: Option<&Matrix>,
) -> f64 {
    let n = inter.rows();
    let weight = |w: Option<&Matrix>, i: usize, k: usize| w.map_or(1.0, |w| w[(i, k)]);
    let mut total = 0.0;
    for i in 0..n {
        // anchor u_i
        let pos = (inter[(i, i)] / tau).exp();
        let mut neg = 0.0;
        for k in 0..n {
            if k != i {
                neg += weight(w_u, i, k) * ((inter[(i, k)] / tau).exp() + (intra_u[(i, k)] / tau).exp());
            }
        }
        if let Some(s) = syn_u {
            for k in 0..s.cols() {
                neg += (s[(i, k)] / tau).exp();
            }
        }
        total += (pos / (pos + neg)).ln();

        // anchor v_i
        let mut neg = 0.0;
        for k in 0..n {
            if k != i {
                neg += weight(w_v, i, k) * ((inter[(k, i)] / tau).exp() + (intra_v[(i, k)] / tau).exp());
            }
        }
        if let Some(s) = syn_v {
            for k in 0..s.cols() {
                neg += (s[(i, k)] / tau).exp();
            }
        }
        total += (pos / (pos + neg)).ln();
    }
    -total / (2.0 * n as f64)
}

/// Draws `m` values from `lambda * Beta(a0, b0) + (1 - lambda) * Beta(a1, b1)`.
pub fn beta_mixture_sample(
    r: &mut impl Rng,
    m: usize,
    lambda: f64,
    (a0, b0): (f64, f64),
    (a1, b1): (f64, f64),
) -> Vec<f64> {
    let c0 = Beta::new(a0, b0).unwrap();
    let c1 = Beta::new(a1, b1).unwrap();
    (0..m)
        .map(|_| if r.random_bool(lambda) { c0.sample(r) } else { c1.sample(r) })
        .collect()
}

/// Composite Simpson rule on `[a, b]` with `n` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for k in 1..n {
        let x = a + k as f64 * h;
        s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(x);
    }
    s * h / 3.0
}

/// Random connected graph: a random spanning tree plus extra edges.
pub fn random_connected_edges(r: &mut impl Rng, n: usize, extra: usize) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for i in 1..n {
        edges.push((r.random_range(0..i), i));
    }
    for _ in 0..extra {
        let a = r.random_range(0..n);
        let b = r.random_range(0..n);
        if a != b {
            edges.push((a.min(b), a.max(b)));
        }
    }
    edges
}
