//! Dense numeric core: layers, Adam, the instruction autoencoder, function-name
//! embeddings, the three-layer GCN classifier and classification metrics.

mod autoencoder;
mod fne;
mod gcn;
mod metrics;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::Rng;

pub use autoencoder::{train_autoencoder, AutoencoderConfig, AutoencoderModel, TrainedAutoencoder};
pub use fne::{fallback_embedding, ingest_fne, EmbeddingTable, FneReport, FNE_DIM};
pub use gcn::{
    evaluate, predict_all, train_gcn, GcnConfig, GcnGradients, GcnModel, GraphSample, Propagation,
    TrainedGcn,
};
pub use metrics::Metrics;

/// Node features, one row per node in the graph's node order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix(pub Array2<f64>);

impl FeatureMatrix {
    pub fn from_rows(rows: &[Vec<f64>], width: usize) -> Result<Self> {
        let mut m = Array2::zeros((rows.len(), width));
        for (i, r) in rows.iter().enumerate() {
            if r.len() != width {
                return Err(Error::ShapeMismatch(format!(
                    "row {i} has width {}, expected {width}",
                    r.len()
                )));
            }
            m.row_mut(i)
                .assign(&ndarray::ArrayView1::from(r.as_slice()));
        }
        Ok(FeatureMatrix(m))
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn width(&self) -> usize {
        self.0.ncols()
    }

    /// Rows at the given node positions, in that order.
    pub fn select(&self, positions: &[usize]) -> FeatureMatrix {
        FeatureMatrix(self.0.select(Axis(0), positions))
    }
}

/// Weight is `out × in`; `forward` computes `x · Wᵀ + b` row-wise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "LayerWire", try_from = "LayerWire")]
pub struct DenseLayerParams {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Serialize, Deserialize)]
struct LayerWire {
    rows: usize,
    cols: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl From<DenseLayerParams> for LayerWire {
    fn from(p: DenseLayerParams) -> Self {
        LayerWire {
            rows: p.weight.nrows(),
            cols: p.weight.ncols(),
            weight: p.weight.iter().copied().collect(),
            bias: p.bias.to_vec(),
        }
    }
}

impl TryFrom<LayerWire> for DenseLayerParams {
    type Error = String;

    fn try_from(w: LayerWire) -> std::result::Result<Self, String> {
        if w.bias.len() != w.rows {
            return Err(format!(
                "bias has {} entries for {} rows",
                w.bias.len(),
                w.rows
            ));
        }
        let weight = Array2::from_shape_vec((w.rows, w.cols), w.weight)
            .map_err(|e| format!("weight shape {}x{}: {e}", w.rows, w.cols))?;
        if weight.iter().chain(&w.bias).any(|x| !x.is_finite()) {
            return Err("non-finite parameter".into());
        }
        Ok(DenseLayerParams {
            weight,
            bias: Array1::from(w.bias),
        })
    }
}

impl DenseLayerParams {
    pub fn zeros(out: usize, input: usize) -> Self {
        DenseLayerParams {
            weight: Array2::zeros((out, input)),
            bias: Array1::zeros(out),
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot(out: usize, input: usize, rng: &mut Rng) -> Self {
        let a = (6.0 / (input + out) as f64).sqrt();
        DenseLayerParams {
            weight: Array2::from_shape_simple_fn((out, input), || rng.gen_range(-a..a)),
            bias: Array1::zeros(out),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn slices_mut(&mut self) -> [&mut [f64]; 2] {
        [
            self.weight.as_slice_mut().expect("standard layout"),
            self.bias.as_slice_mut().expect("standard layout"),
        ]
    }

    fn slices(&self) -> [&[f64]; 2] {
        [
            self.weight.as_slice().expect("standard layout"),
            self.bias.as_slice().expect("standard layout"),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.weight.iter().chain(&self.bias).all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => sigmoid(z),
        }
    }

    /// Derivative given the pre-activation `z` and the output `a`.
    pub fn grad(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Adam moments for a list of dense layers.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<DenseLayerParams>,
    v: Vec<DenseLayerParams>,
}

impl Adam {
    pub fn new(lr: f64, layers: &[DenseLayerParams]) -> Self {
        let zeros: Vec<_> = layers
            .iter()
            .map(|l| DenseLayerParams::zeros(l.out_dim(), l.in_dim()))
            .collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: &mut [DenseLayerParams], grads: &[DenseLayerParams]) {
        self.t += 1;
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            for (((p, g), m), v) in p
                .slices_mut()
                .into_iter()
                .zip(g.slices())
                .zip(m.slices_mut())
                .zip(v.slices_mut())
            {
                adam_update(p, g, m, v, lr, b1, b2, eps, c1, c2);
            }
        }
    }
}

/// Adam for a single flat parameter vector.
#[derive(Debug, Clone)]
pub struct AdamVec {
    lr: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamVec {
    pub fn new(lr: f64, len: usize) -> Self {
        AdamVec {
            lr,
            t: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let (b1, b2): (f64, f64) = (0.9, 0.999);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        adam_update(
            params,
            grads,
            &mut self.m,
            &mut self.v,
            self.lr,
            b1,
            b2,
            1e-8,
            c1,
            c2,
        );
    }
}

#[allow(clippy::too_many_arguments)]
fn adam_update(
    p: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    b1: f64,
    b2: f64,
    eps: f64,
    c1: f64,
    c2: f64,
) {
    for i in 0..p.len() {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::stream_rng;

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1000.0, -1000.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|x| *x >= 0.0));
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn layer_roundtrips_through_json() {
        let layer = DenseLayerParams::glorot(3, 4, &mut stream_rng(1, "t"));
        let text = serde_json::to_string(&layer).unwrap();
        assert!(text.starts_with("{\"rows\":3,\"cols\":4,"));
        let back: DenseLayerParams = serde_json::from_str(&text).unwrap();
        assert_eq!(back, layer);
    }

    #[test]
    fn layer_rejects_bad_shape() {
        let r: std::result::Result<DenseLayerParams, _> =
            serde_json::from_str(r#"{"rows":2,"cols":2,"weight":[1,2,3],"bias":[0,0]}"#);
        assert!(r.is_err());
    }

    #[test]
    fn adam_moves_against_gradient() {
        let mut p = vec![1.0, -1.0];
        let mut opt = AdamVec::new(0.1, 2);
        opt.step(&mut p, &[1.0, -1.0]);
        assert!(p[0] < 1.0 && p[1] > -1.0);
    }
}
