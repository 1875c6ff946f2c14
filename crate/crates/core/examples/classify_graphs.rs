//! Train the three-layer GCN on raw instruction encodings and evaluate it.
//!
//! ```text
//! cargo run --release --example classify_graphs
//! ```

use malgraph::features::{EmbeddingSpec, Featurizer};
use malgraph::graph::split_stratified;
use malgraph::nn::{evaluate, train_gcn, GcnConfig};
use malgraph::pipeline::{featurize, samples};
use malgraph::synth::{gen_synthetic, SyntheticSpec};
use malgraph::x86::Aggregation;

pub fn run_example() -> malgraph::Result<()> {
    let spec = SyntheticSpec {
        per_class: 30,
        ..Default::default()
    };
    let graphs: Vec<_> = gen_synthetic(&spec, 11)?
        .into_iter()
        .map(|s| s.graph)
        .collect();
    let (train, test) = split_stratified(graphs, 0.8, 0.2, 11);

    let featurizer = Featurizer::new(EmbeddingSpec::Raw {
        aggregation: Aggregation::Mean,
    });
    let train_set = samples(&train, featurize(&featurizer, &train)?)?;
    let test_set = samples(&test, featurize(&featurizer, &test)?)?;

    let cfg = GcnConfig {
        epochs: 40,
        seed: 11,
        ..Default::default()
    };
    let trained = train_gcn(&train_set, &cfg)?;
    println!(
        "loss {:.4} -> {:.4}",
        trained.loss_log[0],
        trained.loss_log[trained.loss_log.len() - 1]
    );
    let m = evaluate(&trained.model, &test_set)?;
    println!(
        "test: accuracy {:.3}, precision {:.3}, recall {:.3}, f1 {:.3} ({} graphs)",
        m.accuracy,
        m.precision,
        m.recall,
        m.f1,
        m.total()
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> malgraph::Result<()> {
    run_example()
}
