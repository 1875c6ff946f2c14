use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Activation, Adam, DenseLayerParams};
use crate::error::{Error, Result};
use crate::seed::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AutoencoderConfig {
    pub input: usize,
    pub hidden: usize,
    pub code: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        AutoencoderConfig {
            input: crate::x86::DIM,
            hidden: 128,
            code: 64,
            epochs: 50,
            lr: 1e-3,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// Mirrored MLP autoencoder: input → hidden → code → hidden → input.
/// Hidden and code layers use tanh; the reconstruction layer is linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderModel {
    pub encoder: Vec<DenseLayerParams>,
    pub decoder: Vec<DenseLayerParams>,
}

#[derive(Debug, Clone)]
pub struct TrainedAutoencoder {
    pub model: AutoencoderModel,
    /// Mean reconstruction MSE over each epoch's batches.
    pub loss_log: Vec<f64>,
}

struct Trace {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    post: Vec<Array2<f64>>,
}

impl AutoencoderModel {
    pub fn new(input: usize, hidden: usize, code: usize, seed: u64) -> Self {
        let mut rng = stream_rng(seed, "autoencoder/init");
        AutoencoderModel {
            encoder: vec![
                DenseLayerParams::glorot(hidden, input, &mut rng),
                DenseLayerParams::glorot(code, hidden, &mut rng),
            ],
            decoder: vec![
                DenseLayerParams::glorot(hidden, code, &mut rng),
                DenseLayerParams::glorot(input, hidden, &mut rng),
            ],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.encoder[0].in_dim()
    }

    pub fn code_dim(&self) -> usize {
        self.encoder.last().map_or(0, DenseLayerParams::out_dim)
    }

    fn layers(&self) -> impl Iterator<Item = &DenseLayerParams> {
        self.encoder.iter().chain(&self.decoder)
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.encoder.len() + self.decoder.len() {
            Activation::Identity
        } else {
            Activation::Tanh
        }
    }

    fn run(&self, x: ArrayView2<f64>, stop_after: usize) -> Trace {
        let mut trace = Trace {
            inputs: Vec::new(),
            pre: Vec::new(),
            post: Vec::new(),
        };
        let mut h = x.to_owned();
        for (i, layer) in self.layers().take(stop_after).enumerate() {
            let z = layer.forward(&h.view());
            let act = self.activation(i);
            let a = z.mapv(|v| act.apply(v));
            trace.inputs.push(h);
            trace.pre.push(z);
            h = a.clone();
            trace.post.push(a);
        }
        trace
    }

    /// Encoder half applied to each row.
    pub fn encode_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "autoencoder expects width {}, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        let mut t = self.run(x, self.encoder.len());
        Ok(t.post.pop().unwrap_or_else(|| x.to_owned()))
    }

    /// Compresses one 406-wide vector to the code width.
    pub fn encode64(&self, f: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView1::from(f).insert_axis(Axis(0));
        Ok(self.encode_batch(x)?.row(0).to_vec())
    }

    pub fn reconstruct(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let n = self.encoder.len() + self.decoder.len();
        self.run(x, n).post.pop().unwrap_or_else(|| x.to_owned())
    }

    /// Mean squared reconstruction error over all entries.
    pub fn reconstruction_error(&self, x: ArrayView2<f64>) -> f64 {
        let out = self.reconstruct(x);
        (&out - &x).mapv(|d| d * d).mean().unwrap_or(0.0)
    }

    /// Loss and parameter gradients (encoder layers then decoder layers).
    pub fn loss_and_grads(&self, x: ArrayView2<f64>) -> (f64, Vec<DenseLayerParams>) {
        let n_layers = self.encoder.len() + self.decoder.len();
        let trace = self.run(x, n_layers);
        let out = &trace.post[n_layers - 1];
        let diff = out - &x;
        let count = diff.len() as f64;
        let loss = diff.mapv(|d| d * d).sum() / count;
        let mut delta = diff.mapv(|d| 2.0 * d / count);
        let layers: Vec<&DenseLayerParams> = self.layers().collect();
        let mut grads = vec![DenseLayerParams::zeros(0, 0); n_layers];
        for i in (0..n_layers).rev() {
            let act = self.activation(i);
            let mut dz = delta;
            ndarray::Zip::from(&mut dz)
                .and(&trace.pre[i])
                .and(&trace.post[i])
                .for_each(|d, &z, &a| *d *= act.grad(z, a));
            grads[i] = DenseLayerParams {
                weight: dz.t().dot(&trace.inputs[i]),
                bias: dz.sum_axis(Axis(0)),
            };
            delta = dz.dot(&layers[i].weight);
        }
        (loss, grads)
    }

    fn apply_step(&mut self, opt: &mut Adam, grads: &[DenseLayerParams]) {
        let split = self.encoder.len();
        let mut all: Vec<DenseLayerParams> = self
            .encoder
            .drain(..)
            .chain(self.decoder.drain(..))
            .collect();
        opt.step(&mut all, grads);
        self.decoder = all.split_off(split);
        self.encoder = all;
    }
}

/// Trains on benign node features only; deterministic for a given seed.
pub fn train_autoencoder(
    benign: &[Vec<f64>],
    cfg: &AutoencoderConfig,
) -> Result<TrainedAutoencoder> {
    if benign.is_empty() {
        return Err(Error::Config(
            "autoencoder needs at least one benign vector".into(),
        ));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let data = super::FeatureMatrix::from_rows(benign, cfg.input)?.0;
    let mut model = AutoencoderModel::new(cfg.input, cfg.hidden, cfg.code, cfg.seed);
    let mut opt = Adam::new(cfg.lr, &model.layers().cloned().collect::<Vec<_>>());
    let mut rng = stream_rng(cfg.seed, "autoencoder/shuffle");
    let mut order: Vec<usize> = (0..data.nrows()).collect();
    let mut loss_log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.select(Axis(0), chunk);
            let (loss, grads) = model.loss_and_grads(batch.view());
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            model.apply_step(&mut opt, &grads);
            total += loss;
            batches += 1;
        }
        loss_log.push(total / batches as f64);
    }
    Ok(TrainedAutoencoder { model, loss_log })
}
