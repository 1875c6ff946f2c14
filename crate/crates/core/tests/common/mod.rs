//! Independent oracles and fixtures shared by the integration tests. Nothing
//! here calls the library's own graph algorithms.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use malgraph::graph::{AttrGraph, Label, NodeRecord, Payload};
use malgraph::nn::FeatureMatrix;
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Edge = (String, String);

/// Builds a graph with string ids `v{perm[i]}` so that lexicographic and
/// numeric order disagree (`v10 < v2`).
pub fn build(n: usize, perm: &[usize], edges: &[(usize, usize)]) -> AttrGraph {
    let id = |i: usize| format!("v{}", perm[i]);
    let mut seen = BTreeSet::new();
    let edge_ids: Vec<Edge> = edges
        .iter()
        .filter(|e| seen.insert(**e))
        .map(|&(s, d)| (id(s), id(d)))
        .collect();
    AttrGraph::new(
        "prop",
        None,
        (0..n)
            .map(|i| NodeRecord::new(id(i), Payload::FunctionName(format!("f{i}"))))
            .collect(),
        edge_ids,
    )
    .expect("generated graph is valid")
}

/// Random graphs with up to `max_nodes` nodes and `max_edges` candidate edges
/// (duplicates removed, self-loops allowed).
pub fn arb_graph(max_nodes: usize, max_edges: usize) -> impl Strategy<Value = AttrGraph> {
    (0..=max_nodes)
        .prop_flat_map(move |n| {
            let edges = if n == 0 {
                Just(Vec::new()).boxed()
            } else {
                prop::collection::vec((0..n, 0..n), 0..=max_edges).boxed()
            };
            (
                Just(n),
                Just((0..n).collect::<Vec<_>>()).prop_shuffle(),
                edges,
            )
        })
        .prop_map(|(n, perm, edges)| build(n, &perm, &edges))
}

/// Seeded random graph for non-proptest loops.
pub fn random_graph(rng: &mut ChaCha8Rng, max_nodes: usize, max_edges: usize) -> AttrGraph {
    let n = rng.gen_range(1..=max_nodes);
    let m = rng.gen_range(0..=max_edges);
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        perm.swap(i, rng.gen_range(0..=i));
    }
    let edges: Vec<(usize, usize)> = (0..m)
        .map(|_| (rng.gen_range(0..n), rng.gen_range(0..n)))
        .collect();
    build(n, &perm, &edges)
}

pub fn edge_list(g: &AttrGraph) -> Vec<Edge> {
    g.edges()
        .map(|(s, d)| (s.to_string(), d.to_string()))
        .collect()
}

pub fn node_set(g: &AttrGraph) -> BTreeSet<String> {
    g.nodes().iter().map(|n| n.id.clone()).collect()
}

/// Total degree by counting endpoints; a self-loop contributes two.
pub fn degree_oracle(nodes: &BTreeSet<String>, edges: &[Edge]) -> BTreeMap<String, usize> {
    let mut deg: BTreeMap<String, usize> = nodes.iter().map(|n| (n.clone(), 0)).collect();
    for (s, d) in edges {
        *deg.get_mut(s).unwrap() += 1;
        *deg.get_mut(d).unwrap() += 1;
    }
    deg
}

pub fn leaf_oracle(g: &AttrGraph) -> BTreeSet<String> {
    degree_oracle(&node_set(g), &edge_list(g))
        .into_iter()
        .filter(|(_, d)| *d >= 2)
        .map(|(n, _)| n)
        .collect()
}

/// Weakly connected components by repeated flooding over an undirected adjacency map.
pub fn components_oracle(g: &AttrGraph) -> Vec<BTreeSet<String>> {
    let mut adj: BTreeMap<String, BTreeSet<String>> = node_set(g)
        .into_iter()
        .map(|n| (n, BTreeSet::new()))
        .collect();
    for (s, d) in edge_list(g) {
        adj.get_mut(&s).unwrap().insert(d.clone());
        adj.get_mut(&d).unwrap().insert(s);
    }
    let mut unseen: BTreeSet<String> = adj.keys().cloned().collect();
    let mut out = Vec::new();
    while let Some(start) = unseen.pop_first() {
        let mut comp = BTreeSet::from([start.clone()]);
        let mut stack = vec![start];
        while let Some(v) = stack.pop() {
            for w in &adj[&v] {
                if unseen.remove(w) {
                    comp.insert(w.clone());
                    stack.push(w.clone());
                }
            }
        }
        out.push(comp);
    }
    out
}

/// Every node subset (as bitmask) whose induced subgraph has min degree ≥ k;
/// the k-core is their union. Exponential: only for tiny graphs.
pub fn kcore_oracle(g: &AttrGraph, k: usize) -> BTreeSet<String> {
    let ids: Vec<String> = g.nodes().iter().map(|n| n.id.clone()).collect();
    let n = ids.len();
    assert!(n <= 20, "exhaustive k-core oracle is limited to 20 nodes");
    let edges: Vec<(usize, usize)> = g.edge_indices().to_vec();
    let mut union = 0u32;
    let mut deg = vec![0usize; n];
    for mask in 1u32..(1u32 << n) {
        if mask & !union == 0 {
            continue;
        }
        deg.iter_mut().for_each(|d| *d = 0);
        for &(s, d) in &edges {
            if mask >> s & 1 == 1 && mask >> d & 1 == 1 {
                deg[s] += 1;
                deg[d] += 1;
            }
        }
        if (0..n).filter(|&v| mask >> v & 1 == 1).all(|v| deg[v] >= k) {
            union |= mask;
        }
    }
    (0..n)
        .filter(|&v| union >> v & 1 == 1)
        .map(|v| ids[v].clone())
        .collect()
}

/// WIS removal sequence: at every step recompute all degrees from the surviving
/// edge list and remove the minimum of (min endpoint degree, max endpoint degree,
/// src id, dst id).
pub fn wis_oracle(g: &AttrGraph, removals: usize) -> Vec<Edge> {
    let nodes = node_set(g);
    let mut alive = edge_list(g);
    let mut removed = Vec::new();
    for _ in 0..removals.min(alive.len()) {
        let deg = degree_oracle(&nodes, &alive);
        let (pos, _) = alive
            .iter()
            .enumerate()
            .map(|(i, (s, d))| {
                let (a, b) = (deg[s], deg[d]);
                (
                    i,
                    (
                        a.min(b),
                        a.max(b),
                        s.as_bytes().to_vec(),
                        d.as_bytes().to_vec(),
                    ),
                )
            })
            .min_by(|x, y| x.1.cmp(&y.1))
            .unwrap();
        removed.push(alive.remove(pos));
    }
    removed
}

/// Five-node graph with mixed directions and one self-loop.
pub fn small_graph(label: Option<Label>) -> AttrGraph {
    let ids = ["a", "b", "c", "d", "e"];
    let edges = [
        ("a", "b"),
        ("b", "c"),
        ("c", "a"),
        ("c", "d"),
        ("d", "e"),
        ("e", "e"),
        ("e", "b"),
    ];
    AttrGraph::new(
        "small",
        label,
        ids.iter()
            .map(|i| NodeRecord::new(*i, Payload::FunctionName((*i).into())))
            .collect(),
        edges
            .iter()
            .map(|(s, d)| (s.to_string(), d.to_string()))
            .collect(),
    )
    .unwrap()
}

/// Random 5-node graph (at least a spanning path plus extras) with 8-wide features.
pub fn small_instance(rng: &mut ChaCha8Rng) -> (AttrGraph, FeatureMatrix) {
    let mut edges: Vec<(usize, usize)> = (1..5).map(|i| (rng.gen_range(0..i), i)).collect();
    for _ in 0..rng.gen_range(0..4) {
        edges.push((rng.gen_range(0..5), rng.gen_range(0..5)));
    }
    let g = build(5, &[0, 1, 2, 3, 4], &edges);
    let x = FeatureMatrix(Array2::from_shape_fn((5, 8), |_| rng.gen_range(-1.0..1.0)));
    (g, x)
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Elementwise relative error with a small absolute floor on the scale.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Central difference of `f` at `params[i]`.
pub fn central_diff<F: FnMut(&[f64]) -> f64>(params: &[f64], i: usize, h: f64, mut f: F) -> f64 {
    let mut p = params.to_vec();
    p[i] = params[i] + h;
    let up = f(&p);
    p[i] = params[i] - h;
    let down = f(&p);
    (up - down) / (2.0 * h)
}

pub mod gradcheck {
    //! Finite-difference checks on small instances: 5-node graphs, 8-wide features.

    use malgraph::explain::{mask_objective, EdgeMask};
    use malgraph::nn::{AutoencoderModel, DenseLayerParams, FeatureMatrix, GcnModel, Propagation};
    use ndarray::Array2;
    use rand::Rng;

    use super::{central_diff, rel_err, seeded, small_instance};

    const H: f64 = 1e-6;

    fn flatten(layers: &[DenseLayerParams]) -> Vec<f64> {
        layers
            .iter()
            .flat_map(|l| {
                l.weight
                    .iter()
                    .chain(l.bias.iter())
                    .copied()
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    fn unflatten(template: &[DenseLayerParams], flat: &[f64]) -> Vec<DenseLayerParams> {
        let mut at = 0;
        template
            .iter()
            .map(|l| {
                let mut out = l.clone();
                for w in out.weight.iter_mut().chain(out.bias.iter_mut()) {
                    *w = flat[at];
                    at += 1;
                }
                out
            })
            .collect()
    }

    fn max_err(analytic: &[f64], params: &[f64], mut loss: impl FnMut(&[f64]) -> f64) -> f64 {
        assert_eq!(analytic.len(), params.len());
        (0..params.len())
            .map(|i| rel_err(analytic[i], central_diff(params, i, H, &mut loss)))
            .fold(0.0, f64::max)
    }

    /// Worst relative error over every autoencoder parameter (8 → 6 → 4 → 6 → 8).
    pub fn autoencoder(seed: u64) -> f64 {
        let mut rng = seeded(seed);
        let model = AutoencoderModel::new(8, 6, 4, seed);
        let x = Array2::from_shape_fn((3, 8), |_| rng.gen_range(-1.0..1.0));
        let (_, grads) = model.loss_and_grads(x.view());
        let layers: Vec<DenseLayerParams> = model
            .encoder
            .iter()
            .chain(&model.decoder)
            .cloned()
            .collect();
        let split = model.encoder.len();
        max_err(&flatten(&grads), &flatten(&layers), |p| {
            let mut all = unflatten(&layers, p);
            let decoder = all.split_off(split);
            let m = AutoencoderModel {
                encoder: all,
                decoder,
            };
            m.loss_and_grads(x.view()).0
        })
    }

    /// Worst relative error over every GCN parameter (three convs of width 6 plus head).
    pub fn gcn(seed: u64) -> f64 {
        let mut rng = seeded(seed);
        let (g, x) = small_instance(&mut rng);
        let target = rng.gen_range(0..2);
        let model = GcnModel::new(8, 6, 0.0, seed);
        let prop = Propagation::new(&g);
        let (_, grads) = model.loss_and_grads(&prop, &x, target, None).unwrap();
        let mut analytic = grads.convs.clone();
        analytic.push(grads.head.clone());
        let mut layers = model.convs.clone();
        layers.push(model.head.clone());
        max_err(&flatten(&analytic), &flatten(&layers), |p| {
            let mut all = unflatten(&layers, p);
            let head = all.pop().unwrap();
            let m = GcnModel {
                convs: all,
                head,
                dropout: 0.0,
            };
            m.loss_and_grads(&prop, &x, target, None).unwrap().0
        })
    }

    /// Worst relative error over the mask logits, sparsity term included.
    pub fn mask(seed: u64) -> f64 {
        let mut rng = seeded(seed);
        let (g, x): (_, FeatureMatrix) = small_instance(&mut rng);
        let target = rng.gen_range(0..2);
        let model = GcnModel::new(8, 6, 0.0, seed ^ 0x5eed);
        let logits: Vec<f64> = (0..g.edge_count())
            .map(|_| rng.gen_range(-2.0..2.0))
            .collect();
        let lambda = 0.05;
        let (_, grad) = mask_objective(
            &model,
            &g,
            &x,
            &EdgeMask {
                logits: logits.clone(),
            },
            target,
            lambda,
        )
        .unwrap();
        max_err(&grad, &logits, |p| {
            mask_objective(
                &model,
                &g,
                &x,
                &EdgeMask { logits: p.to_vec() },
                target,
                lambda,
            )
            .unwrap()
            .0
        })
    }
}
