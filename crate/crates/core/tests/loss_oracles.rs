mod common;

use common::{cosine_matrix, normal_matrix, reference_loss, rng, uniform_matrix};
use progcl::linalg::Matrix;
use progcl::mixture::MinMax;
use progcl::nn::ProjectionParams;
use progcl::objectives::{
    compute_weights, loss_infonce, loss_progcl_mix, loss_progcl_weight, synthesize_negatives,
    synthetic_similarities, DirectionalWeights, PairSimilarities, WeightMatrix,
};
use rand::Rng;

fn random_sims(r: &mut impl Rng, n: usize, d: usize, tau: f64) -> PairSimilarities {
    let u = normal_matrix(r, n, d);
    let v = normal_matrix(r, n, d);
    PairSimilarities::new(cosine_matrix(&u, &v), cosine_matrix(&u, &u), cosine_matrix(&v, &v), tau).unwrap()
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

#[test]
fn infonce_matches_reference() {
    for seed in 0..30 {
        let mut r = rng(seed);
        let n = r.random_range(2..12);
        let tau = r.random_range(0.1..1.5);
        let s = random_sims(&mut r, n, 5, tau);
        let ours = loss_infonce(&s).unwrap();
        let oracle = reference_loss(&s.inter, &s.intra_u, &s.intra_v, tau, None, None, None, None);
        assert!(rel_close(ours, oracle, 1e-12), "{ours} vs {oracle}");
    }
}

#[test]
fn weighted_loss_matches_reference_with_hand_weights() {
    for seed in 0..30 {
        let mut r = rng(seed);
        let n = r.random_range(2..10);
        let s = random_sims(&mut r, n, 4, 0.5);
        let wu = uniform_matrix(&mut r, n, n, 0.0, 3.0);
        let wv = uniform_matrix(&mut r, n, n, 0.0, 3.0);
        let w = DirectionalWeights {
            u: WeightMatrix { w: wu.clone(), flagged_rows: vec![] },
            v: WeightMatrix { w: wv.clone(), flagged_rows: vec![] },
        };
        let ours = loss_progcl_weight(&s, &w).unwrap();
        let oracle = reference_loss(&s.inter, &s.intra_u, &s.intra_v, 0.5, Some(&wu), Some(&wv), None, None);
        assert!(rel_close(ours, oracle, 1e-12), "{ours} vs {oracle}");
    }
}

#[test]
fn mixed_loss_matches_reference() {
    for seed in 0..30 {
        let mut r = rng(seed);
        let n = r.random_range(2..10);
        let m = r.random_range(1..6);
        let s = random_sims(&mut r, n, 4, 0.4);
        let su = uniform_matrix(&mut r, n, m, -1.0, 1.0);
        let sv = uniform_matrix(&mut r, n, m, -1.0, 1.0);
        let ours = loss_progcl_mix(&s, &su, &sv).unwrap();
        let oracle = reference_loss(&s.inter, &s.intra_u, &s.intra_v, 0.4, None, None, Some(&su), Some(&sv));
        assert!(rel_close(ours, oracle, 1e-12), "{ours} vs {oracle}");
    }
}

#[test]
fn duplicated_synthetic_counts_twice() {
    let mut r = rng(9);
    let n = 5;
    let s = random_sims(&mut r, n, 3, 0.5);
    let one = uniform_matrix(&mut r, n, 1, -1.0, 1.0);
    let two = Matrix::from_fn(n, 2, |i, _| one[(i, 0)]);
    // Two copies of a synthetic equal one synthetic with twice the mass,
    // which is the same as shifting its similarity by tau * ln 2.
    let shifted = one.map(|x| x + 0.5 * 2f64.ln());
    let a = loss_progcl_mix(&s, &two, &two).unwrap();
    let b = loss_progcl_mix(&s, &shifted, &shifted).unwrap();
    assert!(rel_close(a, b, 1e-12));
}

#[test]
fn hand_computed_two_node_case() {
    // n = 2, every similarity zero: each denominator is 1 + 1 + 1.
    let z = Matrix::zeros(2, 2);
    let s = PairSimilarities::new(z.clone(), z.clone(), z, 1.0).unwrap();
    assert!((loss_infonce(&s).unwrap() - 3f64.ln()).abs() < 1e-15);
    // Weight 2 on every negative: denominator 1 + 2 + 2.
    let w = WeightMatrix::from_matrix(Matrix::filled(2, 2, 2.0)).unwrap();
    let l = loss_progcl_weight(&s, &DirectionalWeights::symmetric(w)).unwrap();
    assert!((l - 5f64.ln()).abs() < 1e-15);
}

#[test]
fn unit_weights_and_empty_synthetics_reduce_to_infonce() {
    for seed in 0..50 {
        let mut r = rng(1000 + seed);
        let n = r.random_range(2..=16);
        let tau = r.random_range(0.05..2.0);
        let s = random_sims(&mut r, n, 6, tau);
        let base = loss_infonce(&s).unwrap();
        let w = loss_progcl_weight(&s, &DirectionalWeights::symmetric(WeightMatrix::uniform(n))).unwrap();
        let m = loss_progcl_mix(&s, &Matrix::zeros(n, 0), &Matrix::zeros(n, 0)).unwrap();
        assert!((w - base).abs() <= 1e-12, "weight {w} vs {base}");
        assert!((m - base).abs() <= 1e-12, "mix {m} vs {base}");
    }
}

#[test]
fn weights_have_unit_row_mean_and_match_formula() {
    for seed in 0..20 {
        let mut r = rng(seed);
        let n = r.random_range(3..20);
        let raw = uniform_matrix(&mut r, n, n, -1.0, 1.0);
        let post = uniform_matrix(&mut r, n, n, 0.0, 1.0);
        let norm = MinMax { min: -1.0, max: 1.0 };
        let w = compute_weights(&raw, &norm, |i, k, _| post[(i, k)]).unwrap();
        assert!(w.flagged_rows.is_empty());
        for i in 0..n {
            let row: Vec<f64> = (0..n).filter(|&k| k != i).map(|k| w.w[(i, k)]).collect();
            let mean = row.iter().sum::<f64>() / (n - 1) as f64;
            assert!((mean - 1.0).abs() < 1e-9);
            // Independent evaluation of the hardness ratio.
            let h = |k: usize| post[(i, k)] * norm.apply(raw[(i, k)]).0;
            let denom = (0..n).filter(|&k| k != i).map(h).sum::<f64>() / (n - 1) as f64;
            for k in (0..n).filter(|&k| k != i) {
                assert!((w.w[(i, k)] - h(k) / denom).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn synthetic_mixing_coefficients_follow_posterior_ratio() {
    let mut r = rng(2);
    let n = 12;
    let hard = uniform_matrix(&mut r, n, n, 0.0, 2.0);
    let post = uniform_matrix(&mut r, n, n, 0.05, 1.0);
    let syn = synthesize_negatives(&hard, &post, 5, 4, &mut r).unwrap();
    for (i, specs) in syn.per_anchor.iter().enumerate() {
        assert_eq!(specs.len(), 4);
        for sp in specs {
            assert!((0.0..=1.0).contains(&sp.alpha));
            let expected = post[(i, sp.p)] / (post[(i, sp.p)] + post[(i, sp.q)]);
            assert!((sp.alpha - expected).abs() < 1e-12);
            assert!(sp.p != sp.q && sp.p != i && sp.q != i);
            assert!(syn.pools[i].contains(&sp.p) && syn.pools[i].contains(&sp.q));
        }
    }
}

#[test]
fn synthetic_similarities_agree_with_direct_mixing() {
    let mut r = rng(4);
    let n = 6;
    let anchors = normal_matrix(&mut r, n, 3);
    let parents = normal_matrix(&mut r, n, 3);
    let hard = uniform_matrix(&mut r, n, n, 0.0, 1.0);
    let post = uniform_matrix(&mut r, n, n, 0.1, 1.0);
    let syn = synthesize_negatives(&hard, &post, 3, 2, &mut r).unwrap();
    let sims = synthetic_similarities(&anchors, &parents, &syn, &ProjectionParams::identity(3)).unwrap();
    for i in 0..n {
        for (k, sp) in syn.per_anchor[i].iter().enumerate() {
            let mixed: Vec<f64> = (0..3)
                .map(|d| sp.alpha * parents[(sp.p, d)] + (1.0 - sp.alpha) * parents[(sp.q, d)])
                .collect();
            let direct = cosine_matrix(
                &Matrix::from_rows(&[anchors.row(i).to_vec()]).unwrap(),
                &Matrix::from_rows(&[mixed]).unwrap(),
            )[(0, 0)];
            assert!((sims[(i, k)] - direct).abs() < 1e-12);
        }
    }
}
