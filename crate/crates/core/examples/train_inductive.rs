//! Minibatch training on sampled neighborhoods with a three-layer
//! mean-aggregation encoder. Posterior matrices are stored per batch at the
//! fit epoch and reused afterwards.
//!
//! Usage: cargo run --release --example train_inductive -- [seeds-only|all-subgraph-nodes]

use progcl::config::{InductiveNegatives, LossMode, TrainConfig};
use progcl::data::{generate_sbm, SbmConfig};
use progcl::nn::EncoderKind;
use progcl::train::train_inductive;

fn main() -> progcl::Result<()> {
    let negatives: InductiveNegatives =
        serde_json::from_value(serde_json::Value::String(std::env::args().nth(1).unwrap_or_else(|| "seeds-only".into())))?;
    let g = generate_sbm(&SbmConfig::default(), 1)?;
    let cfg = TrainConfig {
        seed: 1,
        mode: LossMode::Mix,
        encoder: EncoderKind::SageGcn3,
        epochs: 12,
        fit_epoch: 4,
        lr: 5e-3,
        hidden_dim: 32,
        proj_dim: 32,
        batch_size: 100,
        fanouts: vec![5, 5, 5],
        inductive_negatives: negatives,
        w_init: 0.3,
        n_prime: 20,
        m: 5,
        ..Default::default()
    };
    let report = train_inductive(&g, &cfg)?;
    for e in &report.epochs {
        println!("step {:>3}  loss {:.4}  {}", e.epoch, e.loss, e.mode);
    }
    if let Some(store) = &report.store {
        println!("stored {} posterior matrices at epoch {}", store.matrices.len(), store.fit_epoch);
    }
    if let Some(p) = &report.probe {
        println!("linear probe accuracy {:.4} ± {:.4}", p.acc_mean, p.acc_std);
    }
    Ok(())
}
