//! Shows how posterior-based hardness weights and synthetic negatives are
//! derived for one anchor, from embeddings with planted same-class pairs.
//!
//! Usage: cargo run --release --example negative_weighting

use progcl::linalg::Matrix;
use progcl::mixture::{em_fit_bmm, normalize_minmax, TwoComponentMixture};
use progcl::objectives::{compute_weights, synthesize_negatives};
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

fn main() -> progcl::Result<()> {
    let (n, d, classes) = (60, 8, 3);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
    let centers: Vec<Vec<f64>> = (0..classes).map(|_| (0..d).map(|_| Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect()).collect();
    let embed = |rng: &mut rand_chacha::ChaCha8Rng| {
        Matrix::from_fn(n, d, |i, j| 2.0 * centers[i % classes][j] + Distribution::<f64>::sample(&StandardNormal, rng))
    };
    let (u, v) = (embed(&mut rng), embed(&mut rng));
    let cos = |a: &[f64], b: &[f64]| progcl::nn::cosine(a, b);
    let inter = Matrix::from_fn(n, n, |i, k| cos(u.row(i), v.row(k)));

    let off: Vec<f64> = (0..n).flat_map(|i| (0..n).filter(move |&k| k != i).map(move |k| (i, k))).map(|(i, k)| inter[(i, k)]).collect();
    let sample = normalize_minmax(&off)?;
    let fit = em_fit_bmm(&sample, 0.3, 10)?;
    let norm = sample.norm();
    let post = Matrix::from_fn(n, n, |i, k| fit.posterior_true(norm.apply(inter[(i, k)]).0));
    let weights = compute_weights(&inter, &norm, |i, k, _| post[(i, k)])?;

    println!("anchor 0 (class 0): six most similar negatives, then three from the middle");
    let mut order: Vec<usize> = (1..n).collect();
    order.sort_by(|&a, &b| inter[(0, b)].total_cmp(&inter[(0, a)]));
    println!("{:>5} {:>6} {:>10} {:>12} {:>8}", "node", "class", "similarity", "P(true neg)", "weight");
    for &k in order.iter().take(6).chain(order.iter().skip(order.len() / 2).take(3)) {
        println!("{k:>5} {:>6} {:>10.3} {:>12.3} {:>8.3}", k % classes, inter[(0, k)], post[(0, k)], weights.w[(0, k)]);
    }
    let synth = synthesize_negatives(&weights.w, &post, 10, 4, &mut rng)?;
    println!("synthetic negatives for anchor 0 (alpha * v_p + (1 - alpha) * v_q):");
    for s in &synth.per_anchor[0] {
        println!("  p = {:>2} (class {}), q = {:>2} (class {}), alpha = {:.3}", s.p, s.p % classes, s.q, s.q % classes, s.alpha);
    }
    Ok(())
}
