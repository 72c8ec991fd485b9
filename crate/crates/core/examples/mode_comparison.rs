//! Compares base, weight and mix objectives on a 3-block SBM across seeds.
//!
//! Usage: cargo run --release --example mode_comparison -- [seeds] [key=value ...]

use progcl::config::{LossMode, TrainConfig};
use progcl::data::{generate_sbm, SbmConfig};
use progcl::train::train_transductive;

fn main() -> progcl::Result<()> {
    let mut args = std::env::args().skip(1);
    let seeds: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(5);
    let mut base_cfg = TrainConfig { epochs: 100, fit_epoch: 50, hidden_dim: 64, proj_dim: 64, lr: 5e-3, ..Default::default() };
    let mut sbm = SbmConfig { feature_dim: 32, class_sep: 1.0, ..SbmConfig::default() };
    for kv in args {
        let (k, v) = kv.split_once('=').expect("key=value");
        match k {
            "class_sep" => sbm.class_sep = v.parse().unwrap(),
            "feature_dim" => sbm.feature_dim = v.parse().unwrap(),
            _ => base_cfg.set(k, v)?,
        }
    }
    println!("seed,mode,acc_mean,acc_std,final_loss,seconds");
    for seed in 0..seeds {
        let g = generate_sbm(&sbm, seed)?;
        for mode in [LossMode::Base, LossMode::Weight, LossMode::Mix] {
            let cfg = TrainConfig { seed, mode, ..base_cfg.clone() };
            let t = std::time::Instant::now();
            let r = train_transductive(&g, &cfg)?;
            let p = r.probe.clone().expect("labels present");
            if std::env::var_os("VERBOSE").is_some() {
                if let Some(e) = r.epochs.iter().find(|e| e.fit_event.is_some()) {
                    eprintln!("fit: {}", serde_json::to_string(&e.fit_event).unwrap());
                    let m = r.similarity_means[e.epoch];
                    eprintln!("means at fit: true {:.3} false {:.3}", m.true_mean, m.false_mean);
                }
                let last = r.similarity_means.last().unwrap();
                eprintln!("means at end: true {:.3} false {:.3}", last.true_mean, last.false_mean);
            }
            println!(
                "{seed},{mode},{:.4},{:.4},{:.4},{:.2}",
                p.acc_mean,
                p.acc_std,
                r.epochs.last().map_or(f64::NAN, |e| e.loss),
                t.elapsed().as_secs_f64()
            );
        }
    }
    Ok(())
}
