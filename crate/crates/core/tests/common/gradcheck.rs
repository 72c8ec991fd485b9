//! Central finite-difference checks of the contrastive objectives.

use std::sync::Arc;

use progcl::autodiff::Tape;
use progcl::linalg::{CsrMatrix, Matrix};
use progcl::objectives::{contrastive_loss, synthesize_negatives, LossTerms, SimVars, SyntheticTerms};
use rand::Rng;

use super::{normal_matrix, rng, uniform_matrix};

pub const STEP: f64 = 1e-5;
/// Entries smaller than this are compared in absolute terms.
const SCALE_FLOOR: f64 = 1e-6;
pub const MAX_REL_ERR: f64 = 1e-4;

#[derive(Clone, Copy, PartialEq, Debug)]
pub enum Kind {
    Base,
    Weight,
    Mix,
}

struct Instance {
    tau: f64,
    weights: Option<(Arc<Matrix>, Arc<Matrix>)>,
    /// (mixing, gather, group) for each direction.
    mix: Option<[(Arc<CsrMatrix>, Arc<CsrMatrix>, Arc<CsrMatrix>); 2]>,
}

/// Loss and gradients w.r.t. `leaves = [hu, hv]` (projected embeddings).
/// Synthetic negatives mix rows of the opposite view, as in training.
fn evaluate(inst: &Instance, leaves: &[Matrix; 2]) -> (f64, [Matrix; 2]) {
    let mut tape = Tape::new();
    let hu = tape.leaf(leaves[0].clone(), true);
    let hv = tape.leaf(leaves[1].clone(), true);
    let sims = SimVars::from_projected(&mut tape, hu, hv).unwrap();
    let mut terms = LossTerms { weights: inst.weights.clone(), synthetic: None };
    if let Some([(mix_u, gather_u, group_u), (mix_v, gather_v, group_v)]) = &inst.mix {
        let nu = tape.row_normalize(hu);
        let nv = tape.row_normalize(hv);
        let mut side = |mix: &Arc<_>, gather: &Arc<_>, parents, anchors| {
            let mixed = tape.spmm(Arc::clone(mix), parents).unwrap();
            let mixed = tape.row_normalize(mixed);
            let g = tape.spmm(Arc::clone(gather), anchors).unwrap();
            tape.row_dot(g, mixed).unwrap()
        };
        let sims_u = side(mix_u, gather_u, hv, nu);
        let sims_v = side(mix_v, gather_v, hu, nv);
        terms.synthetic = Some(SyntheticTerms { sims_u, sims_v, group_u: group_u.clone(), group_v: group_v.clone() });
    }
    let loss = contrastive_loss(&mut tape, sims, inst.tau, &terms).unwrap();
    let value = tape.scalar(loss);
    let grads = tape.backward(loss).unwrap();
    (value, [grads.get(hu).unwrap().clone(), grads.get(hv).unwrap().clone()])
}

fn make_instance(r: &mut impl Rng, kind: Kind, n: usize) -> Instance {
    let tau = r.random_range(0.2..1.0);
    let weights = (kind == Kind::Weight).then(|| {
        (Arc::new(uniform_matrix(r, n, n, 0.0, 2.0)), Arc::new(uniform_matrix(r, n, n, 0.0, 2.0)))
    });
    let mix = (kind == Kind::Mix).then(|| {
        let pool = r.random_range(2..n);
        let m = r.random_range(1..4);
        let side = |r: &mut _| {
            let hard = uniform_matrix(r, n, n, 0.0, 1.0);
            let post = uniform_matrix(r, n, n, 0.05, 1.0);
            let s = synthesize_negatives(&hard, &post, pool, m, r).unwrap();
            (Arc::new(s.mixing_matrix(n).unwrap()), Arc::new(s.anchor_gather().unwrap()), Arc::new(s.group_sum().unwrap()))
        };
        [side(r), side(r)]
    });
    Instance { tau, weights, mix }
}

pub fn max_rel_error(analytic: &Matrix, numeric: &Matrix) -> f64 {
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &f)| (a - f).abs() / a.abs().max(f.abs()).max(SCALE_FLOOR))
        .fold(0.0, f64::max)
}

pub fn check(kind: Kind, seed: u64) -> f64 {
    let mut r = rng(seed);
    let n = r.random_range(3..=8);
    let d = r.random_range(2..=5);
    let inst = make_instance(&mut r, kind, n);
    let leaves = [normal_matrix(&mut r, n, d), normal_matrix(&mut r, n, d)];
    let (_, analytic) = evaluate(&inst, &leaves);
    let mut worst: f64 = 0.0;
    for which in 0..2 {
        let mut numeric = Matrix::zeros(n, d);
        for idx in 0..n * d {
            let mut plus = leaves.clone();
            plus[which].data_mut()[idx] += STEP;
            let mut minus = leaves.clone();
            minus[which].data_mut()[idx] -= STEP;
            numeric.data_mut()[idx] = (evaluate(&inst, &plus).0 - evaluate(&inst, &minus).0) / (2.0 * STEP);
        }
        worst = worst.max(max_rel_error(&analytic[which], &numeric));
    }
    worst
}

