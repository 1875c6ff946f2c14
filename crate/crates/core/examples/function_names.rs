//! Embed function-call-graph nodes by name, with deterministic fallbacks for
//! names missing from the table.
//!
//! ```text
//! cargo run --example function_names
//! ```

use malgraph::features::embed_fne_graph;
use malgraph::nn::{EmbeddingTable, FNE_DIM};
use malgraph::synth::{gen_synthetic, GraphKind, SyntheticSpec};

pub fn run_example() -> malgraph::Result<()> {
    let spec = SyntheticSpec {
        per_class: 2,
        kind: GraphKind::Fcg,
        ..Default::default()
    };
    let graphs: Vec<_> = gen_synthetic(&spec, 3)?
        .into_iter()
        .map(|s| s.graph)
        .collect();

    let known = |seed: f64| {
        (0..FNE_DIM)
            .map(|i| (i as f64 * seed).sin())
            .collect::<Vec<_>>()
    };
    let table = EmbeddingTable::from_pairs([
        ("main".to_string(), known(0.1)),
        ("malloc".to_string(), known(0.2)),
    ])?;

    for g in &graphs {
        let (embedded, report) = embed_fne_graph(g, &table, 0)?;
        println!(
            "{}: {} nodes, {} from table, {} fallback",
            embedded.graph_id(),
            embedded.node_count(),
            report.found,
            report.fallback
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> malgraph::Result<()> {
    run_example()
}
