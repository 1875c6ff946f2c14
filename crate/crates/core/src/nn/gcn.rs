//! Three-layer GCN graph classifier with mean pooling, dropout and a softmax head.
//!
//! Propagation uses `Â = D̂^{-1/2} (A_w + A_wᵀ + I) D̂^{-1/2}`, where `A_w` carries
//! one weight per directed edge (1 for plain graphs, the sigmoid of the mask logit
//! when explaining). Backpropagation is written out by hand and also yields the
//! gradient with respect to each edge weight.

use std::collections::HashMap;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{softmax, Adam, DenseLayerParams, FeatureMatrix, Metrics};
use crate::error::{Error, Result};
use crate::graph::{AttrGraph, Label};
use crate::seed::{stream_rng, Rng};

/// Sparse symmetric normalized adjacency with self-loops.
#[derive(Debug, Clone)]
pub struct Propagation {
    n: usize,
    entries: Vec<(usize, usize)>,
    raw: Vec<f64>,
    norm: Vec<f64>,
    deg: Vec<f64>,
    /// Per input edge: the entries it feeds and with what multiplicity.
    edge_slots: Vec<Vec<(usize, f64)>>,
}

impl Propagation {
    pub fn new(g: &AttrGraph) -> Self {
        Self::from_edges(g.node_count(), g.edge_indices(), &vec![1.0; g.edge_count()])
    }

    pub fn weighted(g: &AttrGraph, weights: &[f64]) -> Self {
        Self::from_edges(g.node_count(), g.edge_indices(), weights)
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)], weights: &[f64]) -> Self {
        assert_eq!(edges.len(), weights.len(), "one weight per edge");
        let mut slot_of: HashMap<(usize, usize), usize> = HashMap::new();
        let mut entries = Vec::with_capacity(n + 2 * edges.len());
        let mut raw = Vec::with_capacity(n + 2 * edges.len());
        let mut slot =
            |i: usize, j: usize, entries: &mut Vec<(usize, usize)>, raw: &mut Vec<f64>| {
                *slot_of.entry((i, j)).or_insert_with(|| {
                    entries.push((i, j));
                    raw.push(0.0);
                    entries.len() - 1
                })
            };
        for i in 0..n {
            let k = slot(i, i, &mut entries, &mut raw);
            raw[k] += 1.0;
        }
        let mut edge_slots = Vec::with_capacity(edges.len());
        for (&(s, d), &w) in edges.iter().zip(weights) {
            if s == d {
                let k = slot(s, s, &mut entries, &mut raw);
                raw[k] += 2.0 * w;
                edge_slots.push(vec![(k, 2.0)]);
            } else {
                let a = slot(s, d, &mut entries, &mut raw);
                let b = slot(d, s, &mut entries, &mut raw);
                raw[a] += w;
                raw[b] += w;
                edge_slots.push(vec![(a, 1.0), (b, 1.0)]);
            }
        }
        let mut deg = vec![0.0; n];
        for (&(i, _), &s) in entries.iter().zip(&raw) {
            deg[i] += s;
        }
        let norm = entries
            .iter()
            .zip(&raw)
            .map(|(&(i, j), &s)| s / (deg[i] * deg[j]).sqrt())
            .collect();
        Propagation {
            n,
            entries,
            raw,
            norm,
            deg,
            edge_slots,
        }
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edge_slots.len()
    }

    /// `Â · h`.
    pub fn apply(&self, h: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((self.n, h.ncols()));
        for (&(i, j), &v) in self.entries.iter().zip(&self.norm) {
            out.row_mut(i).scaled_add(v, &h.row(j));
        }
        out
    }

    pub fn dense(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.n, self.n));
        for (&(i, j), &v) in self.entries.iter().zip(&self.norm) {
            m[[i, j]] += v;
        }
        m
    }

    /// Chain rule from `∂L/∂Â` (per entry) to `∂L/∂w` (per input edge).
    fn edge_weight_grads(&self, d_norm: &[f64]) -> Vec<f64> {
        let r: Vec<f64> = self.deg.iter().map(|d| 1.0 / d.sqrt()).collect();
        let mut d_deg = vec![0.0; self.n];
        for (k, &(a, b)) in self.entries.iter().enumerate() {
            let t = -0.5 * d_norm[k] * self.raw[k];
            d_deg[a] += t * r[b] * r[a].powi(3);
            d_deg[b] += t * r[a] * r[b].powi(3);
        }
        let d_raw: Vec<f64> = self
            .entries
            .iter()
            .enumerate()
            .map(|(k, &(a, b))| d_norm[k] * r[a] * r[b] + d_deg[a])
            .collect();
        self.edge_slots
            .iter()
            .map(|slots| slots.iter().map(|&(k, m)| m * d_raw[k]).sum())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GcnConfig {
    pub hidden: usize,
    pub dropout: f64,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for GcnConfig {
    fn default() -> Self {
        GcnConfig {
            hidden: 64,
            dropout: 0.5,
            epochs: 100,
            lr: 1e-3,
            batch_size: 16,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnModel {
    pub convs: Vec<DenseLayerParams>,
    pub head: DenseLayerParams,
    pub dropout: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnGradients {
    pub convs: Vec<DenseLayerParams>,
    pub head: DenseLayerParams,
}

#[derive(Debug, Clone)]
pub struct TrainedGcn {
    pub model: GcnModel,
    /// Mean cross-entropy over each epoch's batches.
    pub loss_log: Vec<f64>,
}

/// A graph ready for the classifier: propagation operator, features, label.
#[derive(Debug, Clone)]
pub struct GraphSample {
    pub graph_id: String,
    pub prop: Propagation,
    pub x: FeatureMatrix,
    pub label: Option<Label>,
}

impl GraphSample {
    pub fn new(g: &AttrGraph, x: FeatureMatrix) -> Result<Self> {
        if x.rows() != g.node_count() {
            return Err(Error::ShapeMismatch(format!(
                "graph `{}` has {} nodes but {} feature rows",
                g.graph_id(),
                g.node_count(),
                x.rows()
            )));
        }
        Ok(GraphSample {
            graph_id: g.graph_id().to_string(),
            prop: Propagation::new(g),
            x,
            label: g.label(),
        })
    }
}

struct Forward {
    inputs: Vec<Array2<f64>>,
    propagated: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    dropped: Array1<f64>,
    keep_mask: Option<Array1<f64>>,
    logits: [f64; 2],
}

fn log_softmax(logits: [f64; 2], class: usize) -> f64 {
    let m = logits[0].max(logits[1]);
    logits[class] - m - ((logits[0] - m).exp() + (logits[1] - m).exp()).ln()
}

impl GcnModel {
    pub fn new(in_dim: usize, hidden: usize, dropout: f64, seed: u64) -> Self {
        let mut rng = stream_rng(seed, "gcn/init");
        GcnModel {
            convs: vec![
                DenseLayerParams::glorot(hidden, in_dim, &mut rng),
                DenseLayerParams::glorot(hidden, hidden, &mut rng),
                DenseLayerParams::glorot(hidden, hidden, &mut rng),
            ],
            head: DenseLayerParams::glorot(2, hidden, &mut rng),
            dropout,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.convs[0].in_dim()
    }

    fn check(&self, prop: &Propagation, x: &FeatureMatrix, id: &str) -> Result<()> {
        if x.rows() != prop.node_count() {
            return Err(Error::ShapeMismatch(format!(
                "{} feature rows for {} nodes",
                x.rows(),
                prop.node_count()
            )));
        }
        if x.width() != self.in_dim() {
            return Err(Error::ShapeMismatch(format!(
                "model expects feature width {}, got {}",
                self.in_dim(),
                x.width()
            )));
        }
        if prop.node_count() == 0 {
            return Err(Error::EmptyGraph(id.to_string()));
        }
        Ok(())
    }

    fn forward(&self, prop: &Propagation, x: &FeatureMatrix, dropout: Option<&mut Rng>) -> Forward {
        let mut h = x.0.clone();
        let mut inputs = Vec::with_capacity(self.convs.len());
        let mut propagated = Vec::with_capacity(self.convs.len());
        let mut pre = Vec::with_capacity(self.convs.len());
        for layer in &self.convs {
            let p = prop.apply(&h);
            let z = layer.forward(&p.view());
            let next = z.mapv(|v| v.max(0.0));
            inputs.push(h);
            propagated.push(p);
            pre.push(z);
            h = next;
        }
        let pooled = h.mean_axis(Axis(0)).expect("non-empty graph");
        let keep_mask = match dropout {
            Some(rng) if self.dropout > 0.0 => {
                let keep = 1.0 - self.dropout;
                Some(Array1::from_shape_simple_fn(pooled.len(), || {
                    if rng.gen::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                }))
            }
            _ => None,
        };
        let dropped = match &keep_mask {
            Some(m) => &pooled * m,
            None => pooled,
        };
        let out = self.head.weight.dot(&dropped) + &self.head.bias;
        Forward {
            inputs,
            propagated,
            pre,
            dropped,
            keep_mask,
            logits: [out[0], out[1]],
        }
    }

    fn backward(
        &self,
        prop: &Propagation,
        fwd: &Forward,
        target: usize,
        want_edges: bool,
    ) -> (GcnGradients, Option<Vec<f64>>) {
        let probs = softmax(&fwd.logits);
        let dlogits = Array1::from(vec![
            probs[0] - f64::from(u8::from(target == 0)),
            probs[1] - f64::from(u8::from(target == 1)),
        ]);
        let head = DenseLayerParams {
            weight: dlogits
                .view()
                .insert_axis(Axis(1))
                .dot(&fwd.dropped.view().insert_axis(Axis(0))),
            bias: dlogits.clone(),
        };
        let mut d_pooled = self.head.weight.t().dot(&dlogits);
        if let Some(m) = &fwd.keep_mask {
            d_pooled *= m;
        }
        let n = prop.node_count() as f64;
        let mut dh = Array2::from_shape_fn((prop.node_count(), d_pooled.len()), |(_, k)| {
            d_pooled[k] / n
        });
        let mut d_norm = want_edges.then(|| vec![0.0; prop.entries.len()]);
        let mut convs = vec![DenseLayerParams::zeros(0, 0); self.convs.len()];
        for l in (0..self.convs.len()).rev() {
            let mut dz = dh;
            ndarray::Zip::from(&mut dz)
                .and(&fwd.pre[l])
                .for_each(|d, &z| {
                    if z <= 0.0 {
                        *d = 0.0
                    }
                });
            convs[l] = DenseLayerParams {
                weight: dz.t().dot(&fwd.propagated[l]),
                bias: dz.sum_axis(Axis(0)),
            };
            let dp = dz.dot(&self.convs[l].weight);
            if let Some(dn) = d_norm.as_mut() {
                let h_in = &fwd.inputs[l];
                for (k, &(i, j)) in prop.entries.iter().enumerate() {
                    dn[k] += dp.row(i).dot(&h_in.row(j));
                }
            }
            dh = if l > 0 || want_edges {
                prop.apply(&dp)
            } else {
                dp
            };
        }
        let edges = d_norm.map(|dn| prop.edge_weight_grads(&dn));
        (GcnGradients { convs, head }, edges)
    }

    /// Class probabilities in evaluation mode.
    pub fn predict_proba(&self, prop: &Propagation, x: &FeatureMatrix) -> Result<[f64; 2]> {
        self.check(prop, x, "<input>")?;
        let p = softmax(&self.forward(prop, x, None).logits);
        Ok([p[0], p[1]])
    }

    /// Like [`GcnModel::predict_proba`], but an empty graph is scored from a zero
    /// pooled embedding (the head bias alone) instead of failing.
    pub fn classify(&self, prop: &Propagation, x: &FeatureMatrix) -> Result<[f64; 2]> {
        if prop.node_count() == 0 {
            let p = softmax(self.head.bias.as_slice().expect("contiguous"));
            return Ok([p[0], p[1]]);
        }
        self.predict_proba(prop, x)
    }

    /// Forward pass over a graph. With `train_mode`, dropout draws from the
    /// `gcn/dropout` stream of `seed`.
    pub fn gcn_forward(
        &self,
        g: &AttrGraph,
        x: &FeatureMatrix,
        train_mode: bool,
        seed: u64,
    ) -> Result<[f64; 2]> {
        let prop = Propagation::new(g);
        self.check(&prop, x, g.graph_id())?;
        let mut rng = stream_rng(seed, "gcn/dropout");
        let fwd = self.forward(&prop, x, train_mode.then_some(&mut rng));
        let p = softmax(&fwd.logits);
        Ok([p[0], p[1]])
    }

    /// Cross-entropy loss and parameter gradients for one graph.
    pub fn loss_and_grads(
        &self,
        prop: &Propagation,
        x: &FeatureMatrix,
        target: usize,
        dropout: Option<&mut Rng>,
    ) -> Result<(f64, GcnGradients)> {
        self.check(prop, x, "<input>")?;
        let fwd = self.forward(prop, x, dropout);
        let (grads, _) = self.backward(prop, &fwd, target, false);
        Ok((-log_softmax(fwd.logits, target), grads))
    }

    /// Cross-entropy for `target` and its gradient with respect to every edge
    /// weight of `prop`, in evaluation mode.
    pub fn loss_and_edge_grads(
        &self,
        prop: &Propagation,
        x: &FeatureMatrix,
        target: usize,
    ) -> Result<(f64, Vec<f64>)> {
        self.check(prop, x, "<input>")?;
        let fwd = self.forward(prop, x, None);
        let (_, edges) = self.backward(prop, &fwd, target, true);
        Ok((-log_softmax(fwd.logits, target), edges.unwrap_or_default()))
    }

    fn layers_mut<F: FnOnce(&mut [DenseLayerParams])>(&mut self, f: F) {
        let mut all: Vec<DenseLayerParams> = self.convs.drain(..).collect();
        all.push(std::mem::replace(
            &mut self.head,
            DenseLayerParams::zeros(0, 0),
        ));
        f(&mut all);
        self.head = all.pop().expect("head");
        self.convs = all;
    }

    pub fn is_finite(&self) -> bool {
        self.convs.iter().all(DenseLayerParams::is_finite) && self.head.is_finite()
    }
}

impl GcnGradients {
    fn zeros_like(m: &GcnModel) -> Self {
        GcnGradients {
            convs: m
                .convs
                .iter()
                .map(|l| DenseLayerParams::zeros(l.out_dim(), l.in_dim()))
                .collect(),
            head: DenseLayerParams::zeros(m.head.out_dim(), m.head.in_dim()),
        }
    }

    fn add_scaled(&mut self, o: &GcnGradients, s: f64) {
        for (a, b) in self
            .convs
            .iter_mut()
            .zip(&o.convs)
            .chain(std::iter::once((&mut self.head, &o.head)))
        {
            a.weight.scaled_add(s, &b.weight);
            a.bias.scaled_add(s, &b.bias);
        }
    }

    fn into_layers(self) -> Vec<DenseLayerParams> {
        let mut v = self.convs;
        v.push(self.head);
        v
    }
}

/// Mini-batch Adam on cross-entropy. Deterministic for a given seed.
pub fn train_gcn(samples: &[GraphSample], cfg: &GcnConfig) -> Result<TrainedGcn> {
    if samples.len() < 2 {
        return Err(Error::DegenerateSplit(format!(
            "need at least 2 training graphs, got {}",
            samples.len()
        )));
    }
    let mut labels = Vec::with_capacity(samples.len());
    for s in samples {
        let label = s.label.ok_or_else(|| {
            Error::DegenerateSplit(format!("training graph `{}` has no label", s.graph_id))
        })?;
        if s.prop.node_count() == 0 {
            return Err(Error::EmptyGraph(s.graph_id.clone()));
        }
        labels.push(label.index());
    }
    if !labels.contains(&0) || !labels.contains(&1) {
        return Err(Error::DegenerateSplit(
            "training set must contain both labels".into(),
        ));
    }
    if cfg.batch_size == 0 || !(0.0..1.0).contains(&cfg.dropout) {
        return Err(Error::Config(
            "batch_size must be positive and dropout in [0,1)".into(),
        ));
    }
    let in_dim = samples[0].x.width();
    let mut model = GcnModel::new(in_dim, cfg.hidden, cfg.dropout, cfg.seed);
    let mut opt = {
        let mut layers = model.convs.clone();
        layers.push(model.head.clone());
        Adam::new(cfg.lr, &layers)
    };
    let mut shuffle = stream_rng(cfg.seed, "gcn/shuffle");
    let mut dropout = stream_rng(cfg.seed, "gcn/dropout");
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut loss_log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut acc = GcnGradients::zeros_like(&model);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let s = &samples[i];
                let (loss, g) =
                    model.loss_and_grads(&s.prop, &s.x, labels[i], Some(&mut dropout))?;
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch });
                }
                total += loss;
                acc.add_scaled(&g, scale);
            }
            let grads = acc.into_layers();
            model.layers_mut(|layers| opt.step(layers, &grads));
        }
        if !model.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        loss_log.push(total / samples.len() as f64);
    }
    Ok(TrainedGcn { model, loss_log })
}

/// Predicted class per sample (argmax, ties to benign), evaluated in parallel.
pub fn predict_all(model: &GcnModel, samples: &[GraphSample]) -> Result<Vec<usize>> {
    samples
        .par_iter()
        .map(|s| {
            let p = model.classify(&s.prop, &s.x)?;
            Ok(usize::from(p[1] > p[0]))
        })
        .collect()
}

/// Metrics over labeled samples; unlabeled samples are ignored.
pub fn evaluate(model: &GcnModel, samples: &[GraphSample]) -> Result<Metrics> {
    let preds = predict_all(model, samples)?;
    Ok(Metrics::from_predictions(
        preds
            .into_iter()
            .zip(samples)
            .filter_map(|(p, s)| s.label.map(|l| (p, l.index()))),
    ))
}
