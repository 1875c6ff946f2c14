//! Edge-mask explanations for the GCN classifier and top-p subgraph extraction.
//!
//! A logit `M_e` per edge is optimized so that the model, run on the adjacency
//! with edge weights `σ(M_e)`, keeps predicting the label it gives the full
//! graph. An optional sparsity term `λ · mean σ(M)` discourages all-ones masks.

use std::collections::BTreeSet;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::AttrGraph;
use crate::nn::{sigmoid, AdamVec, FeatureMatrix, GcnModel, Propagation};
use crate::seed::{derive_seed, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub sparsity_lambda: f64,
    pub top_p: f64,
    /// Mask logits start uniform in `[-init_range, init_range]`.
    pub init_range: f64,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig {
            epochs: 100,
            lr: 0.1,
            sparsity_lambda: 0.005,
            top_p: 0.25,
            init_range: 0.1,
        }
    }
}

impl ExplainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Config(format!(
                "top_p must be in (0,1], got {}",
                self.top_p
            )));
        }
        if self.sparsity_lambda < 0.0 || self.lr < 0.0 || self.init_range < 0.0 {
            return Err(Error::Config(
                "sparsity_lambda, lr and init_range must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// One unbounded logit per edge, in the graph's edge order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeMask {
    pub logits: Vec<f64>,
}

impl EdgeMask {
    pub fn importance(&self) -> Vec<f64> {
        self.logits.iter().map(|&m| sigmoid(m)).collect()
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }
}

/// Loss and gradient of the mask objective with respect to the mask logits.
pub fn mask_objective(
    model: &GcnModel,
    g: &AttrGraph,
    x: &FeatureMatrix,
    mask: &EdgeMask,
    target: usize,
    sparsity_lambda: f64,
) -> Result<(f64, Vec<f64>)> {
    let weights = mask.importance();
    let prop = Propagation::weighted(g, &weights);
    let (ce, dw) = model.loss_and_edge_grads(&prop, x, target)?;
    let e = weights.len().max(1) as f64;
    let loss = ce + sparsity_lambda * weights.iter().sum::<f64>() / e;
    let grad = weights
        .iter()
        .zip(dw)
        .map(|(&s, d)| (d + sparsity_lambda / e) * s * (1.0 - s))
        .collect();
    Ok((loss, grad))
}

fn argmax(p: [f64; 2]) -> usize {
    usize::from(p[1] > p[0])
}

/// Learns an edge mask explaining the model's own prediction on `g`.
pub fn learn_mask(
    model: &GcnModel,
    g: &AttrGraph,
    x: &FeatureMatrix,
    cfg: &ExplainConfig,
    seed: u64,
) -> Result<EdgeMask> {
    cfg.validate()?;
    if g.edge_count() == 0 {
        return Err(Error::NoEdges(g.graph_id().to_string()));
    }
    let target = argmax(model.predict_proba(&Propagation::new(g), x)?);
    let mut rng = stream_rng(seed, "explain/init");
    let r = cfg.init_range;
    let mut mask = EdgeMask {
        logits: (0..g.edge_count())
            .map(|_| if r > 0.0 { rng.gen_range(-r..=r) } else { 0.0 })
            .collect(),
    };
    let mut opt = AdamVec::new(cfg.lr, mask.len());
    for epoch in 0..cfg.epochs {
        let (loss, grad) = mask_objective(model, g, x, &mask, target, cfg.sparsity_lambda)?;
        if !loss.is_finite() || grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLoss { epoch });
        }
        opt.step(&mut mask.logits, &grad);
    }
    Ok(mask)
}

/// Uniform random logits, used as a baseline ranking.
pub fn random_mask(g: &AttrGraph, seed: u64) -> EdgeMask {
    let mut rng = stream_rng(seed, "explain/random");
    EdgeMask {
        logits: (0..g.edge_count())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect(),
    }
}

/// Edge positions by importance descending, ties by (src_id, dst_id) ascending.
pub fn edge_ranking(g: &AttrGraph, mask: &EdgeMask) -> Vec<usize> {
    let imp = mask.importance();
    let key = |e: usize| {
        let (s, d) = g.edge_indices()[e];
        (g.nodes()[s].id.as_bytes(), g.nodes()[d].id.as_bytes())
    };
    let mut order: Vec<usize> = (0..g.edge_count()).collect();
    order.sort_by(|&a, &b| imp[b].total_cmp(&imp[a]).then_with(|| key(a).cmp(&key(b))));
    order
}

/// Number of edges kept at fraction `p`: ceil(p·|E|), so any p > 0 keeps one edge.
pub fn kept_edge_count(p: f64, edges: usize) -> usize {
    ((p * edges as f64 - 1e-9).ceil().max(0.0) as usize).min(edges)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Fidelity {
    pub original: [f64; 2],
    pub masked: [f64; 2],
    pub subgraph: [f64; 2],
}

#[derive(Debug, Clone)]
pub struct ExplanationResult {
    /// Edge positions of the input graph, most important first.
    pub ranking: Vec<usize>,
    pub kept: usize,
    pub important: AttrGraph,
    pub unimportant: AttrGraph,
    pub fidelity: Option<Fidelity>,
}

/// Subgraph spanned by the given edges: those edges plus their endpoints.
fn edge_subgraph(g: &AttrGraph, edges: &[usize]) -> AttrGraph {
    let mut keep_nodes = vec![false; g.node_count()];
    let mut keep_edges = vec![false; g.edge_count()];
    for &e in edges {
        let (s, d) = g.edge_indices()[e];
        keep_nodes[s] = true;
        keep_nodes[d] = true;
        keep_edges[e] = true;
    }
    g.retain_edges(&keep_edges).retain_nodes(&keep_nodes)
}

/// Keeps the top ceil(top_p·|E|) edges and their endpoints; the remaining edges form
/// the unimportant complement. Keeping every edge returns the input unchanged,
/// isolated nodes included.
pub fn extract_subgraph(g: &AttrGraph, mask: &EdgeMask, top_p: f64) -> ExplanationResult {
    let ranking = edge_ranking(g, mask);
    let kept = kept_edge_count(top_p, g.edge_count());
    let important = if kept == g.edge_count() {
        g.clone()
    } else {
        edge_subgraph(g, &ranking[..kept])
    };
    let unimportant = edge_subgraph(g, &ranking[kept..]);
    ExplanationResult {
        ranking,
        kept,
        important,
        unimportant,
        fidelity: None,
    }
}

/// Feature rows of `sub`'s nodes, looked up by id in `g`.
pub fn subgraph_features(
    g: &AttrGraph,
    sub: &AttrGraph,
    x: &FeatureMatrix,
) -> Result<FeatureMatrix> {
    let positions = sub
        .nodes()
        .iter()
        .map(|n| {
            g.position(&n.id).ok_or_else(|| Error::UnknownNode {
                graph_id: g.graph_id().to_string(),
                node_id: n.id.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(x.select(&positions))
}

/// Learns a mask, extracts the top-p subgraph and records the three predictions.
pub fn explain_graph(
    model: &GcnModel,
    g: &AttrGraph,
    x: &FeatureMatrix,
    cfg: &ExplainConfig,
    seed: u64,
) -> Result<(EdgeMask, ExplanationResult)> {
    let mask = learn_mask(model, g, x, cfg, seed)?;
    let mut result = extract_subgraph(g, &mask, cfg.top_p);
    let original = model.predict_proba(&Propagation::new(g), x)?;
    let masked = model.predict_proba(&Propagation::weighted(g, &mask.importance()), x)?;
    let sub_x = subgraph_features(g, &result.important, x)?;
    let subgraph = model.classify(&Propagation::new(&result.important), &sub_x)?;
    result.fidelity = Some(Fidelity {
        original,
        masked,
        subgraph,
    });
    Ok((mask, result))
}

/// Fraction of the top-k ranked edges that belong to `relevant` (as id pairs).
pub fn precision_at_k(
    g: &AttrGraph,
    ranking: &[usize],
    relevant: &BTreeSet<(String, String)>,
    k: usize,
) -> f64 {
    if k == 0 {
        return 0.0;
    }
    let hits = ranking
        .iter()
        .take(k)
        .filter(|&&e| {
            let (s, d) = g.edge_indices()[e];
            relevant.contains(&(g.nodes()[s].id.clone(), g.nodes()[d].id.clone()))
        })
        .count();
    hits as f64 / k as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PAccuracy {
    pub p: f64,
    pub accuracy: f64,
    pub correct: usize,
    pub evaluated: usize,
}

/// `[0.1, 0.2, ..., 1.0]`.
pub fn default_p_grid() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 10.0).collect()
}

/// Classifies the top-p subgraph of every labeled graph for each p, using masks
/// from `make_mask`. Graphs without edges are skipped and logged.
pub fn explainer_accuracy_with<F>(
    model: &GcnModel,
    corpus: &[(AttrGraph, FeatureMatrix)],
    p_grid: &[f64],
    make_mask: F,
) -> Result<Vec<PAccuracy>>
where
    F: Fn(&AttrGraph, &FeatureMatrix) -> Result<EdgeMask> + Sync,
{
    let per_graph: Vec<Option<Vec<bool>>> = corpus
        .par_iter()
        .map(|(g, x)| {
            let Some(label) = g.label() else {
                log::warn!("graph `{}` has no label; skipped", g.graph_id());
                return Ok(None);
            };
            if g.edge_count() == 0 {
                log::warn!("graph `{}` has no edges; skipped", g.graph_id());
                return Ok(None);
            }
            let mask = make_mask(g, x)?;
            p_grid
                .iter()
                .map(|&p| {
                    let sub = extract_subgraph(g, &mask, p).important;
                    let sub_x = subgraph_features(g, &sub, x)?;
                    let probs = model.classify(&Propagation::new(&sub), &sub_x)?;
                    Ok(argmax(probs) == label.index())
                })
                .collect::<Result<Vec<bool>>>()
                .map(Some)
        })
        .collect::<Result<_>>()?;
    let evaluated = per_graph.iter().flatten().count();
    Ok(p_grid
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let correct = per_graph.iter().flatten().filter(|hits| hits[i]).count();
            PAccuracy {
                p,
                accuracy: if evaluated == 0 {
                    0.0
                } else {
                    correct as f64 / evaluated as f64
                },
                correct,
                evaluated,
            }
        })
        .collect())
}

/// Explainer accuracy with learned masks; each graph's mask seed is derived
/// from `seed` and its graph id.
pub fn explainer_accuracy(
    model: &GcnModel,
    corpus: &[(AttrGraph, FeatureMatrix)],
    cfg: &ExplainConfig,
    p_grid: &[f64],
    seed: u64,
) -> Result<Vec<PAccuracy>> {
    cfg.validate()?;
    explainer_accuracy_with(model, corpus, p_grid, |g, x| {
        learn_mask(model, g, x, cfg, derive_seed(seed, g.graph_id()))
    })
}

pub fn write_accuracy_csv<W: std::io::Write>(rows: &[PAccuracy], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["p", "accuracy", "correct", "evaluated"])?;
    for r in rows {
        w.write_record([
            format!("{:.2}", r.p),
            format!("{:.6}", r.accuracy),
            r.correct.to_string(),
            r.evaluated.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))
}
