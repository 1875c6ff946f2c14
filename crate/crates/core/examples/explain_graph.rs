//! Explain one malicious prediction: learn an edge mask, keep the top 25% of
//! edges and compare them with the planted motif.
//!
//! ```text
//! cargo run --release --example explain_graph
//! ```

use malgraph::explain::{explain_graph, precision_at_k, ExplainConfig};
use malgraph::features::{EmbeddingSpec, Featurizer};
use malgraph::nn::{train_gcn, GcnConfig};
use malgraph::pipeline::{featurize, samples};
use malgraph::synth::{gen_synthetic, SyntheticSpec};
use malgraph::x86::Aggregation;

pub fn run_example() -> malgraph::Result<()> {
    let spec = SyntheticSpec {
        per_class: 30,
        ..Default::default()
    };
    let corpus = gen_synthetic(&spec, 5)?;
    let graphs: Vec<_> = corpus.iter().map(|s| s.graph.clone()).collect();
    let featurizer = Featurizer::new(EmbeddingSpec::Raw {
        aggregation: Aggregation::Mean,
    });
    let train = samples(&graphs, featurize(&featurizer, &graphs)?)?;
    let model = train_gcn(
        &train,
        &GcnConfig {
            epochs: 60,
            seed: 5,
            ..Default::default()
        },
    )?
    .model;

    let target = corpus.last().expect("non-empty corpus");
    let g = &target.graph;
    let x = featurizer.features(g)?;
    let (_, result) = explain_graph(&model, g, &x, &ExplainConfig::default(), 5)?;
    let fid = result.fidelity.expect("fidelity recorded");
    println!(
        "{}: P(malicious) original {:.3}, masked {:.3}, top-25% subgraph {:.3}",
        g.graph_id(),
        fid.original[1],
        fid.masked[1],
        fid.subgraph[1]
    );
    let motif = target.motif_edge_set();
    println!(
        "precision@{} against the planted motif: {:.2}",
        motif.len(),
        precision_at_k(g, &result.ranking, &motif, motif.len())
    );
    print!("{}", result.important.to_dot());
    Ok(())
}

#[allow(dead_code)]
fn main() -> malgraph::Result<()> {
    run_example()
}
