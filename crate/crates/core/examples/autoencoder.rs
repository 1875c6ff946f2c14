//! Train the 406 → 64 instruction autoencoder on benign basic blocks.
//!
//! ```text
//! cargo run --release --example autoencoder
//! ```

use malgraph::features::benign_instruction_vectors;
use malgraph::nn::{train_autoencoder, AutoencoderConfig, FeatureMatrix};
use malgraph::synth::{gen_synthetic, SyntheticSpec};
use malgraph::x86::{Aggregation, DIM};

pub fn run_example() -> malgraph::Result<()> {
    let spec = SyntheticSpec {
        per_class: 8,
        ..Default::default()
    };
    let graphs: Vec<_> = gen_synthetic(&spec, 1)?
        .into_iter()
        .map(|s| s.graph)
        .collect();
    let benign = benign_instruction_vectors(&graphs, Aggregation::Mean)?;
    println!("{} benign node vectors", benign.len());

    let cfg = AutoencoderConfig {
        epochs: 20,
        seed: 1,
        ..Default::default()
    };
    let trained = train_autoencoder(&benign, &cfg)?;
    for (epoch, loss) in trained.loss_log.iter().enumerate().step_by(5) {
        println!("epoch {epoch:>3}  mse {loss:.6}");
    }

    let x = FeatureMatrix::from_rows(&benign[..4], DIM)?;
    let codes = trained.model.encode_batch(x.0.view())?;
    println!("codes: {} x {}", codes.nrows(), codes.ncols());
    Ok(())
}

#[allow(dead_code)]
fn main() -> malgraph::Result<()> {
    run_example()
}
