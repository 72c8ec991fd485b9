//! Generates stochastic block model graphs of varying homophily, reports
//! their modularity and writes one to disk in the CLI's file format.
//!
//! Usage: cargo run --release --example sbm_generation -- [out_dir]

use std::path::PathBuf;

use progcl::data::{generate_sbm, modularity, SbmConfig};
use progcl::graph::save_graph;

fn main() -> progcl::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "sbm-out".into()));
    println!("{:>6} {:>6} {:>6} {:>11} {:>10}", "p_in", "p_out", "edges", "mean degree", "modularity");
    for (p_in, p_out) in [(0.1, 0.01), (0.05, 0.02), (0.03, 0.03), (0.3, 0.001)] {
        let cfg = SbmConfig { p_in, p_out, ..SbmConfig::default() };
        let g = generate_sbm(&cfg, 0)?;
        let q = modularity(&g, g.labels().unwrap())?;
        let mean_degree = 2.0 * g.n_edges() as f64 / g.n_nodes() as f64;
        println!("{p_in:>6} {p_out:>6} {:>6} {mean_degree:>11.2} {q:>10.3}", g.n_edges());
    }
    let g = generate_sbm(&SbmConfig::default(), 0)?;
    save_graph(&out, &g)?;
    println!("default graph written to {}", out.display());
    Ok(())
}
