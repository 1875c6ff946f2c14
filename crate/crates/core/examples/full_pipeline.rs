//! The whole pipeline from one config: synthetic data, leaf pruning,
//! autoencoder features, GCN training, evaluation and explainer accuracy.
//!
//! ```text
//! cargo run --release --example full_pipeline
//! ```

use malgraph::nn::{AutoencoderConfig, GcnConfig};
use malgraph::pipeline::{run_pipeline, DataSource, PipelineConfig};
use malgraph::reduce::{ReductionConfig, ReductionMethod};
use malgraph::synth::SyntheticSpec;

pub fn run_example() -> malgraph::Result<()> {
    let out_dir = std::env::temp_dir().join(format!("malgraph-example-{}", std::process::id()));
    let cfg = PipelineConfig {
        seed: 42,
        out_dir: out_dir.clone(),
        data: DataSource::Synthetic {
            spec: SyntheticSpec {
                per_class: 30,
                ..Default::default()
            },
        },
        reduction: ReductionConfig::new(ReductionMethod::LeafPrune),
        embedding: "ae".parse()?,
        autoencoder: AutoencoderConfig {
            epochs: 10,
            ..Default::default()
        },
        gcn: GcnConfig {
            epochs: 60,
            ..Default::default()
        },
        ..Default::default()
    };
    let out = run_pipeline(&cfg)?;
    let t = out.reduction.totals;
    println!("pruned nodes {} -> {}", t.nodes_before, t.nodes_after);
    println!("test accuracy {:.3}", out.metrics.accuracy);
    for row in out.explainer.iter().flatten() {
        println!("  p={:.1}  subgraph accuracy {:.3}", row.p, row.accuracy);
    }
    for entry in std::fs::read_dir(&out_dir)
        .map_err(|e| malgraph::Error::Io {
            path: out_dir.clone(),
            source: e,
        })?
        .flatten()
    {
        println!("wrote {}", entry.path().display());
    }
    let _ = std::fs::remove_dir_all(&out_dir);
    Ok(())
}

#[allow(dead_code)]
fn main() -> malgraph::Result<()> {
    run_example()
}
