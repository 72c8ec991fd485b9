//! Tracks how inter-view similarities of same-class pairs (false negatives)
//! and different-class pairs (true negatives) separate during training.
//!
//! Usage: cargo run --release --example similarity_histogram -- [epochs]

use progcl::config::TrainConfig;
use progcl::data::{generate_sbm, SbmConfig};
use progcl::train::train_transductive;

fn main() -> progcl::Result<()> {
    let epochs: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(40);
    let g = generate_sbm(&SbmConfig { p_in: 0.2, p_out: 0.005, ..SbmConfig::default() }, 0)?;
    let cfg = TrainConfig { epochs, lr: 1e-2, hidden_dim: 64, proj_dim: 64, histogram_bins: 20, ..Default::default() };
    let report = train_transductive(&g, &cfg)?;
    println!("epoch  true-negative mean  false-negative mean");
    for m in report.similarity_means.iter().step_by((epochs / 8).max(1)) {
        println!("{:>5}  {:>18.3}  {:>19.3}", m.epoch, m.true_mean, m.false_mean);
    }
    let last = epochs - 1;
    println!("histogram at epoch {last} (bin center, true count, false count):");
    for h in report.histograms.iter().filter(|h| h.epoch == last && h.true_count + h.false_count > 0) {
        println!("{:>6.2} {:>7} {:>7}", h.bin_center, h.true_count, h.false_count);
    }
    Ok(())
}
