//! Compare the four graph reductions on a small synthetic corpus.
//!
//! ```text
//! cargo run --example reduce_graphs
//! ```

use malgraph::reduce::{reduce_corpus, ReductionConfig, ReductionMethod};
use malgraph::synth::{gen_synthetic, SyntheticSpec};

pub fn run_example() -> malgraph::Result<()> {
    let spec = SyntheticSpec {
        per_class: 10,
        ..Default::default()
    };
    let graphs: Vec<_> = gen_synthetic(&spec, 7)?
        .into_iter()
        .map(|s| s.graph)
        .collect();

    let configs = [
        ReductionConfig::new(ReductionMethod::LeafPrune),
        ReductionConfig {
            u: 0.5,
            ..ReductionConfig::new(ReductionMethod::CompPrune)
        },
        ReductionConfig {
            k: 2,
            ..ReductionConfig::new(ReductionMethod::Kcore)
        },
        ReductionConfig {
            n_frac: 0.2,
            ..ReductionConfig::new(ReductionMethod::Wis)
        },
    ];
    println!(
        "{:<12} {:>12} {:>14} {:>14}",
        "method", "param", "nodes", "edges"
    );
    for cfg in configs {
        let (_, report) = reduce_corpus(&graphs, &cfg)?;
        let t = report.totals;
        println!(
            "{:<12} {:>12} {:>6} -> {:<5} {:>6} -> {:<5}",
            cfg.method.to_string(),
            cfg.param(),
            t.nodes_before,
            t.nodes_after,
            t.edges_before,
            t.edges_after
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> malgraph::Result<()> {
    run_example()
}
