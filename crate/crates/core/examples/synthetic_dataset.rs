//! Writes a synthetic biased graph in the dataset directory layout.
//!
//! Usage: `cargo run --example synthetic_dataset -- <dir> [nodes] [seed]`

use std::path::PathBuf;

use gmmd::data::dump_dataset;
use gmmd::synth::{biased_graph, BiasedGraphSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().ok_or("usage: synthetic_dataset <dir> [nodes] [seed]")?);
    let nodes: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1000);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);
    let layout = BiasedGraphSpec {
        nodes,
        p_same: 10.0 / nodes as f64,
        p_cross: 2.0 / nodes as f64,
        ..BiasedGraphSpec::default()
    };
    let graph = biased_graph(&layout, &mut ChaCha8Rng::seed_from_u64(seed))?;
    dump_dataset(&graph, &dir)?;
    println!("wrote {} nodes and {} edges to {}", graph.num_nodes(), graph.num_edges(), dir.display());
    Ok(())
}
