//! Repeated normalized propagation pulls node representations together on
//! connected graphs; this prints the largest pairwise distance ratio after a
//! growing number of steps for a few graph families.
//!
//! Usage: cargo run --release --example propagation_contraction

use progcl::data::named_graph;
use progcl::graph::check_contraction;

fn main() -> progcl::Result<()> {
    let specs = ["complete:6", "cycle:7", "cycle:8", "star:9", "sbm:3,15,0.4,0.05", "triangles:3"];
    println!("{:<20} {:>9} {:>9} {:>8} {:>8} {:>8}", "graph", "connected", "bipartite", "1 step", "10", "50");
    for spec in specs {
        let g = named_graph(spec, 16, 0)?;
        let ratio = |steps| check_contraction(&g, g.features(), steps, 1e-8).map(|r| r.max_pair_ratio);
        let rep = check_contraction(&g, g.features(), 50, 1e-8)?;
        println!(
            "{:<20} {:>9} {:>9} {:>8.4} {:>8.4} {:>8.4}",
            spec,
            rep.connected,
            rep.bipartite_raw,
            ratio(1)?,
            ratio(10)?,
            rep.max_pair_ratio
        );
    }
    Ok(())
}
