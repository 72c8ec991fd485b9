use std::collections::HashSet;

use progcl::augment::augment;
use progcl::config::{InductiveNegatives, LossMode, PosteriorMode, TrainConfig};
use progcl::data::{generate_sbm, SbmConfig};
use progcl::graph::{bfs_distances, Graph};
use progcl::probe::ProbeConfig;
use progcl::rng;
use progcl::train::{batch_partition, sample_subgraph, train_inductive, train_transductive};

fn graph() -> Graph {
    let cfg = SbmConfig { blocks: 3, nodes_per_block: 8, p_in: 0.6, p_out: 0.05, feature_dim: 6, class_sep: 2.0 };
    generate_sbm(&cfg, 5).unwrap()
}

fn cfg(mode: LossMode) -> TrainConfig {
    TrainConfig {
        mode,
        epochs: 6,
        fit_epoch: 2,
        lr: 1e-2,
        hidden_dim: 8,
        proj_dim: 8,
        m_prime: 10,
        n_prime: 4,
        m: 3,
        w_init: 0.3,
        probe: ProbeConfig { runs: 2, train_fraction: 0.5, ..Default::default() },
        ..Default::default()
    }
}

const MODES: [LossMode; 3] = [LossMode::Base, LossMode::Weight, LossMode::Mix];

#[test]
fn transductive_runs_are_byte_deterministic() {
    let g = graph();
    for mode in MODES {
        for posterior in [PosteriorMode::FrozenMatrix, PosteriorMode::FrozenModel] {
            let c = TrainConfig { posterior, ..cfg(mode) };
            let a = train_transductive(&g, &c).unwrap();
            let b = train_transductive(&g, &c).unwrap();
            assert_eq!(a.metrics_jsonl().unwrap(), b.metrics_jsonl().unwrap(), "{mode} {posterior:?}");
            assert_eq!(a.model, b.model);
        }
    }
}

#[test]
fn inductive_runs_are_byte_deterministic() {
    let g = graph();
    for mode in MODES {
        for neg in [InductiveNegatives::SeedsOnly, InductiveNegatives::AllSubgraphNodes] {
            let c = TrainConfig { batch_size: 12, fanouts: vec![3, 2], inductive_negatives: neg, ..cfg(mode) };
            let a = train_inductive(&g, &c).unwrap();
            let b = train_inductive(&g, &c).unwrap();
            assert_eq!(a.metrics_jsonl().unwrap(), b.metrics_jsonl().unwrap(), "{mode} {neg:?}");
        }
    }
}

#[test]
fn different_seeds_give_different_runs() {
    let g = graph();
    let a = train_transductive(&g, &cfg(LossMode::Base)).unwrap();
    let b = train_transductive(&g, &TrainConfig { seed: 1, ..cfg(LossMode::Base) }).unwrap();
    assert_ne!(a.losses(), b.losses());
}

#[test]
fn unit_weights_reproduce_the_base_objective() {
    let g = graph();
    let base = train_transductive(&g, &cfg(LossMode::Base)).unwrap();
    let unit = train_transductive(&g, &TrainConfig { unit_weights: true, ..cfg(LossMode::Weight) }).unwrap();
    assert!(unit.store.is_some());
    for (a, b) in base.losses().iter().zip(unit.losses()) {
        assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
    }
}

#[test]
fn mixture_is_fitted_once_and_stays_frozen() {
    let g = graph();
    for mode in [LossMode::Weight, LossMode::Mix] {
        let r = train_transductive(&g, &cfg(mode)).unwrap();
        assert_eq!(r.bmm_fits, 1);
        assert!(!r.fell_back_to_base);
        let fitted: Vec<_> = r.epochs.iter().filter(|e| e.fit_event.is_some()).collect();
        assert_eq!(fitted.len(), 1);
        assert_eq!(fitted[0].epoch, 2);
        // One checksum per epoch from the fit on, all equal.
        assert_eq!(r.posterior_checksums.len(), 4);
        assert!(r.posterior_checksums.windows(2).all(|w| w[0] == w[1]));
        assert!(r.epochs[..2].iter().all(|e| e.mode == LossMode::Base));
        assert!(r.epochs[2..].iter().all(|e| e.mode == mode));
    }
}

#[test]
fn base_mode_never_fits() {
    let r = train_transductive(&graph(), &cfg(LossMode::Base)).unwrap();
    assert_eq!(r.bmm_fits, 0);
    assert!(r.store.is_none());
}

#[test]
fn histograms_partition_every_negative_pair() {
    let g = graph();
    let n = g.n_nodes() as u64;
    let r = train_transductive(&g, &cfg(LossMode::Weight)).unwrap();
    for epoch in 0..6 {
        let total: u64 = r
            .histograms
            .iter()
            .filter(|h| h.epoch == epoch)
            .map(|h| h.true_count + h.false_count)
            .sum();
        assert_eq!(total, n * (n - 1), "epoch {epoch}");
    }
}

#[test]
fn inductive_frozen_matrices_cover_every_batch() {
    let g = graph();
    let c = TrainConfig { batch_size: 8, fanouts: vec![2, 2], ..cfg(LossMode::Mix) };
    let r = train_inductive(&g, &c).unwrap();
    let batches = batch_partition(g.n_nodes(), 8, c.seed);
    let store = r.store.unwrap();
    assert_eq!(store.matrices.len(), batches.len());
    for (m, b) in store.matrices.iter().zip(&batches) {
        assert_eq!(m.shape(), (b.len(), b.len()));
    }
}

#[test]
fn batch_partition_covers_nodes_once() {
    let parts = batch_partition(23, 5, 9);
    let mut all: Vec<usize> = parts.concat();
    all.sort_unstable();
    assert_eq!(all, (0..23).collect::<Vec<_>>());
    assert!(parts.iter().all(|p| p.len() <= 5));
}

#[test]
fn sampled_subgraph_stays_within_hop_radius() {
    let g = graph();
    for seed in 0..20 {
        let mut r = rng::indexed_stream(seed, "test", 0);
        let seeds = vec![seed as usize % g.n_nodes(), (seed as usize + 7) % g.n_nodes()];
        let fanouts = [3, 2];
        let s = sample_subgraph(&g, &seeds, &fanouts, &mut r).unwrap();
        assert_eq!(&s.nodes[..2], &seeds[..]);
        let dist = bfs_distances(&g, &seeds);
        for &v in &s.nodes {
            assert!(dist[v].is_some_and(|d| d <= fanouts.len()), "node {v} too far");
        }
        // Every sampled edge is an edge of the original graph.
        for (a, b) in s.graph.edge_list() {
            assert!(g.has_edge(s.nodes[a], s.nodes[b]));
        }
        let bound = seeds.len() * (1 + 3 + 3 * 2);
        assert!(s.nodes.len() <= bound);
    }
}

#[test]
fn augmented_graph_is_a_subgraph() {
    let g = graph();
    let original: HashSet<(usize, usize)> = g.edge_list().into_iter().collect();
    for seed in 0..20 {
        let mut r = rng::indexed_stream(seed, "augment", 0);
        let a = augment(&g, 0.4, 0.3, false, &mut r).unwrap();
        assert_eq!(a.n_nodes(), g.n_nodes());
        for (i, j) in a.edge_list() {
            assert!(original.contains(&(i, j)));
            assert!(a.neighbors(j).contains(&i));
        }
        // Masked columns are entirely zero or untouched.
        for c in 0..g.features().cols() {
            let zeroed = (0..g.n_nodes()).all(|i| a.features()[(i, c)] == 0.0);
            let kept = (0..g.n_nodes()).all(|i| a.features()[(i, c)] == g.features()[(i, c)]);
            assert!(zeroed || kept);
        }
    }
}

#[test]
fn augmentation_rates_match_probabilities() {
    let g = generate_sbm(&SbmConfig { blocks: 2, nodes_per_block: 40, p_in: 0.5, p_out: 0.1, feature_dim: 50, class_sep: 1.0 }, 2)
        .unwrap();
    let (mut kept, mut total, mut masked, mut cols) = (0usize, 0usize, 0usize, 0usize);
    for seed in 0..200 {
        let mut r = rng::indexed_stream(seed, "augment", 0);
        let a = augment(&g, 0.3, 0.2, false, &mut r).unwrap();
        kept += a.n_edges();
        total += g.n_edges();
        masked += (0..50).filter(|&c| (0..g.n_nodes()).all(|i| a.features()[(i, c)] == 0.0)).count();
        cols += 50;
    }
    let keep_rate = kept as f64 / total as f64;
    let mask_rate = masked as f64 / cols as f64;
    assert!((keep_rate - 0.7).abs() < 0.01, "edge keep rate {keep_rate}");
    assert!((mask_rate - 0.2).abs() < 0.02, "feature mask rate {mask_rate}");
}

#[test]
fn augmentation_is_deterministic() {
    let g = graph();
    let a = augment(&g, 0.3, 0.3, true, &mut rng::indexed_stream(4, "augment", 1)).unwrap();
    let b = augment(&g, 0.3, 0.3, true, &mut rng::indexed_stream(4, "augment", 1)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn invalid_configurations_are_rejected() {
    let g = graph();
    let bad_fit = TrainConfig { fit_epoch: 6, ..cfg(LossMode::Weight) };
    assert!(train_transductive(&g, &bad_fit).is_err());
    let big_pool = TrainConfig { n_prime: g.n_nodes(), ..cfg(LossMode::Mix) };
    assert!(train_transductive(&g, &big_pool).is_err());
    // Base mode ignores the fit epoch.
    assert!(train_transductive(&g, &TrainConfig { fit_epoch: 60, ..cfg(LossMode::Base) }).is_ok());
}

#[test]
fn outputs_are_written_to_the_target_directory_only() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let r = train_transductive(&graph(), &cfg(LossMode::Mix)).unwrap();
    let files = r.write_outputs(&out).unwrap();
    let on_disk: HashSet<String> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert_eq!(on_disk, files.into_iter().collect());
    let entries: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
    assert_eq!(entries.len(), 1);
    let metrics = std::fs::read_to_string(out.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().filter(|l| l.contains("\"epoch\"")).count(), 6);
}
