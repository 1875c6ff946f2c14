//! Graph reduction: leaf pruning, component pruning, k-core peeling and
//! degree-ranked edge sparsification (WIS), with before/after structure reports.

use std::collections::VecDeque;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::AttrGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReductionMethod {
    None,
    LeafPrune,
    CompPrune,
    Kcore,
    Wis,
}

impl ReductionMethod {
    pub fn name(self) -> &'static str {
        match self {
            ReductionMethod::None => "none",
            ReductionMethod::LeafPrune => "leaf_prune",
            ReductionMethod::CompPrune => "comp_prune",
            ReductionMethod::Kcore => "kcore",
            ReductionMethod::Wis => "wis",
        }
    }
}

impl fmt::Display for ReductionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ReductionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => ReductionMethod::None,
            "leaf" | "leaf_prune" => ReductionMethod::LeafPrune,
            "comp" | "comp_prune" => ReductionMethod::CompPrune,
            "kcore" => ReductionMethod::Kcore,
            "wis" => ReductionMethod::Wis,
            other => return Err(Error::Config(format!("unknown reduction method `{other}`"))),
        })
    }
}

/// Only the parameter belonging to `method` is consulted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReductionConfig {
    pub method: ReductionMethod,
    /// Fraction of smallest components removed by comp prune.
    pub u: f64,
    /// Minimum degree kept by k-core.
    pub k: usize,
    /// Fraction of edges removed by WIS.
    pub n_frac: f64,
    /// Rank WIS edges once on the input degrees instead of after every removal.
    pub wis_batch: bool,
}

impl Default for ReductionConfig {
    fn default() -> Self {
        ReductionConfig {
            method: ReductionMethod::None,
            u: 0.5,
            k: 1,
            n_frac: 0.2,
            wis_batch: false,
        }
    }
}

impl ReductionConfig {
    pub fn new(method: ReductionMethod) -> Self {
        ReductionConfig {
            method,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let frac_ok = |x: f64| (0.0..=1.0).contains(&x);
        match self.method {
            ReductionMethod::CompPrune if !frac_ok(self.u) => {
                Err(Error::Config(format!("u must be in [0,1], got {}", self.u)))
            }
            ReductionMethod::Wis if !frac_ok(self.n_frac) => Err(Error::Config(format!(
                "n_frac must be in [0,1], got {}",
                self.n_frac
            ))),
            _ => Ok(()),
        }
    }

    /// The consulted parameter as text, empty for parameterless methods.
    pub fn param(&self) -> String {
        match self.method {
            ReductionMethod::None | ReductionMethod::LeafPrune => String::new(),
            ReductionMethod::CompPrune => format!("u={}", self.u),
            ReductionMethod::Kcore => format!("k={}", self.k),
            ReductionMethod::Wis if self.wis_batch => format!("n_frac={};batch", self.n_frac),
            ReductionMethod::Wis => format!("n_frac={}", self.n_frac),
        }
    }

    pub fn apply(&self, g: &AttrGraph) -> Result<(AttrGraph, ReductionReport)> {
        self.validate()?;
        Ok(match self.method {
            ReductionMethod::None => timed(g, self, |g| g.clone()),
            ReductionMethod::LeafPrune => leaf_prune(g),
            ReductionMethod::CompPrune => comp_prune(g, self.u),
            ReductionMethod::Kcore => kcore(g, self.k),
            ReductionMethod::Wis if self.wis_batch => {
                timed(g, self, |g| wis_batch_graph(g, self.n_frac))
            }
            ReductionMethod::Wis => wis(g, self.n_frac),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReductionReport {
    pub graph_id: String,
    pub method: ReductionMethod,
    pub param: String,
    pub nodes_before: usize,
    pub nodes_after: usize,
    pub edges_before: usize,
    pub edges_after: usize,
    pub components_before: usize,
    pub components_after: usize,
    pub wall_time: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ReductionTotals {
    pub graphs: usize,
    pub nodes_before: usize,
    pub nodes_after: usize,
    pub edges_before: usize,
    pub edges_after: usize,
    pub components_before: usize,
    pub components_after: usize,
}

impl ReductionTotals {
    pub fn include(mut self, r: &ReductionReport) -> Self {
        self.graphs += 1;
        self.nodes_before += r.nodes_before;
        self.nodes_after += r.nodes_after;
        self.edges_before += r.edges_before;
        self.edges_after += r.edges_after;
        self.components_before += r.components_before;
        self.components_after += r.components_after;
        self
    }

    pub fn merge(mut self, o: ReductionTotals) -> Self {
        self.graphs += o.graphs;
        self.nodes_before += o.nodes_before;
        self.nodes_after += o.nodes_after;
        self.edges_before += o.edges_before;
        self.edges_after += o.edges_after;
        self.components_before += o.components_before;
        self.components_after += o.components_after;
        self
    }
}

#[derive(Debug, Clone)]
pub struct CorpusReport {
    pub rows: Vec<ReductionReport>,
    pub totals: ReductionTotals,
}

/// Whether wall-clock times are written to report CSVs. Off by default so reruns
/// produce byte-identical files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Timing {
    #[default]
    Omit,
    Record,
}

impl CorpusReport {
    pub fn write_csv<W: Write>(&self, out: W, timing: Timing) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "graph_id",
            "method",
            "param",
            "nodes_before",
            "nodes_after",
            "edges_before",
            "edges_after",
            "comps_before",
            "comps_after",
            "wall_time_s",
        ])?;
        for r in &self.rows {
            let time = match timing {
                Timing::Omit => String::new(),
                Timing::Record => format!("{:.6}", r.wall_time),
            };
            w.write_record([
                r.graph_id.clone(),
                r.method.to_string(),
                r.param.clone(),
                r.nodes_before.to_string(),
                r.nodes_after.to_string(),
                r.edges_before.to_string(),
                r.edges_after.to_string(),
                r.components_before.to_string(),
                r.components_after.to_string(),
                time,
            ])?;
        }
        w.flush().map_err(|e| Error::Csv(e.into()))
    }
}

fn report(
    before: &AttrGraph,
    after: &AttrGraph,
    cfg: &ReductionConfig,
    wall_time: f64,
) -> ReductionReport {
    ReductionReport {
        graph_id: before.graph_id().to_string(),
        method: cfg.method,
        param: cfg.param(),
        nodes_before: before.node_count(),
        nodes_after: after.node_count(),
        edges_before: before.edge_count(),
        edges_after: after.edge_count(),
        components_before: before.component_count(),
        components_after: after.component_count(),
        wall_time,
    }
}

fn timed<F>(g: &AttrGraph, cfg: &ReductionConfig, f: F) -> (AttrGraph, ReductionReport)
where
    F: FnOnce(&AttrGraph) -> AttrGraph,
{
    let start = Instant::now();
    let out = f(g);
    let secs = start.elapsed().as_secs_f64();
    let r = report(g, &out, cfg, secs);
    (out, r)
}

/// Removes every node whose degree in the input graph is at most 1, in one pass.
pub fn leaf_prune(g: &AttrGraph) -> (AttrGraph, ReductionReport) {
    timed(g, &ReductionConfig::new(ReductionMethod::LeafPrune), |g| {
        let keep: Vec<bool> = g.degree_vec().iter().map(|&d| d >= 2).collect();
        g.retain_nodes(&keep)
    })
}

/// Number of smallest components removed: floor(u·n), with a small tolerance so
/// products like 0.29·100 are not floored one short.
pub fn comp_prune_count(u: f64, n: usize) -> usize {
    (((u * n as f64) + 1e-9).floor() as usize).min(n)
}

pub fn comp_prune(g: &AttrGraph, u: f64) -> (AttrGraph, ReductionReport) {
    let cfg = ReductionConfig {
        u,
        ..ReductionConfig::new(ReductionMethod::CompPrune)
    };
    timed(g, &cfg, |g| {
        let parts = g.components();
        let drop = comp_prune_count(u, parts.len());
        let mut keep = vec![true; g.node_count()];
        for comp in &parts.components[..drop] {
            for id in comp {
                if let Some(p) = g.position(id) {
                    keep[p] = false;
                }
            }
        }
        g.retain_nodes(&keep)
    })
}

/// Node mask of the k-core: peel nodes of current degree < k until none remain.
pub fn kcore_mask(g: &AttrGraph, k: usize) -> Vec<bool> {
    let n = g.node_count();
    let mut deg = g.degree_vec();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(s, d) in g.edge_indices() {
        adj[s].push(d);
        adj[d].push(s);
    }
    let mut alive = vec![true; n];
    let mut queue: VecDeque<usize> = (0..n).filter(|&v| deg[v] < k).collect();
    for &v in &queue {
        alive[v] = false;
    }
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if w == v {
                continue;
            }
            deg[w] -= 1;
            if alive[w] && deg[w] < k {
                alive[w] = false;
                queue.push_back(w);
            }
        }
    }
    alive
}

pub fn kcore(g: &AttrGraph, k: usize) -> (AttrGraph, ReductionReport) {
    let cfg = ReductionConfig {
        k,
        ..ReductionConfig::new(ReductionMethod::Kcore)
    };
    timed(g, &cfg, |g| g.retain_nodes(&kcore_mask(g, k)))
}

/// Number of WIS removals: round-half-up of n_frac·|E|.
pub fn wis_removal_count(n_frac: f64, edges: usize) -> usize {
    ((n_frac * edges as f64 + 0.5 + 1e-9).floor() as usize).min(edges)
}

/// Position of every edge under byte-wise (src_id, dst_id) ordering.
fn lexicographic_rank(g: &AttrGraph) -> Vec<usize> {
    let mut order: Vec<usize> = (0..g.edge_count()).collect();
    let ids = |e: usize| {
        let (s, d) = g.edge_indices()[e];
        (g.nodes()[s].id.as_bytes(), g.nodes()[d].id.as_bytes())
    };
    order.sort_by(|&a, &b| ids(a).cmp(&ids(b)));
    let mut rank = vec![0; order.len()];
    for (r, e) in order.into_iter().enumerate() {
        rank[e] = r;
    }
    rank
}

fn wis_key(deg: &[usize], (s, d): (usize, usize), lex: usize) -> (usize, usize, usize) {
    let (a, b) = (deg[s], deg[d]);
    (a.min(b), a.max(b), lex)
}

/// Edge positions in WIS removal order, recomputing degrees after every removal.
pub fn wis_order(g: &AttrGraph, removals: usize) -> Vec<usize> {
    let lex = lexicographic_rank(g);
    let edges = g.edge_indices();
    let mut deg = g.degree_vec();
    let mut alive = vec![true; edges.len()];
    let mut order = Vec::with_capacity(removals);
    for _ in 0..removals {
        let best = (0..edges.len())
            .filter(|&e| alive[e])
            .min_by_key(|&e| wis_key(&deg, edges[e], lex[e]));
        let Some(e) = best else { break };
        alive[e] = false;
        let (s, d) = edges[e];
        deg[s] -= 1;
        deg[d] -= 1;
        order.push(e);
    }
    order
}

/// Iterative WIS: removes round(n_frac·|E|) edges, keeping every node.
pub fn wis(g: &AttrGraph, n_frac: f64) -> (AttrGraph, ReductionReport) {
    let cfg = ReductionConfig {
        n_frac,
        ..ReductionConfig::new(ReductionMethod::Wis)
    };
    timed(g, &cfg, |g| {
        let mut keep = vec![true; g.edge_count()];
        for e in wis_order(g, wis_removal_count(n_frac, g.edge_count())) {
            keep[e] = false;
        }
        g.retain_edges(&keep)
    })
}

fn wis_batch_graph(g: &AttrGraph, n_frac: f64) -> AttrGraph {
    let lex = lexicographic_rank(g);
    let deg = g.degree_vec();
    let edges = g.edge_indices();
    let mut order: Vec<usize> = (0..edges.len()).collect();
    order.sort_by_key(|&e| wis_key(&deg, edges[e], lex[e]));
    let mut keep = vec![true; edges.len()];
    for &e in &order[..wis_removal_count(n_frac, edges.len())] {
        keep[e] = false;
    }
    g.retain_edges(&keep)
}

/// Applies `cfg` to every graph (in parallel, output order preserved) and sums the reports.
pub fn reduce_corpus(
    graphs: &[AttrGraph],
    cfg: &ReductionConfig,
) -> Result<(Vec<AttrGraph>, CorpusReport)> {
    cfg.validate()?;
    let results: Vec<(AttrGraph, ReductionReport)> = graphs
        .par_iter()
        .map(|g| {
            cfg.apply(g).map_err(|e| Error::InvariantViolation {
                graph_id: g.graph_id().to_string(),
                detail: e.to_string(),
            })
        })
        .collect::<Result<_>>()?;
    let (out, rows): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let totals = rows
        .par_iter()
        .fold(ReductionTotals::default, ReductionTotals::include)
        .reduce(ReductionTotals::default, ReductionTotals::merge);
    Ok((out, CorpusReport { rows, totals }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{NodeRecord, Payload};

    fn plain(nodes: &[&str], edges: &[(&str, &str)]) -> AttrGraph {
        AttrGraph::new(
            "t",
            None,
            nodes
                .iter()
                .map(|n| NodeRecord::new(*n, Payload::FunctionName(n.to_string())))
                .collect(),
            edges
                .iter()
                .map(|(s, d)| (s.to_string(), d.to_string()))
                .collect(),
        )
        .unwrap()
    }

    fn ids(g: &AttrGraph) -> Vec<&str> {
        g.nodes().iter().map(|n| n.id.as_str()).collect()
    }

    fn triangle() -> AttrGraph {
        plain(&["a", "b", "c"], &[("a", "b"), ("b", "c"), ("c", "a")])
    }

    #[test]
    fn leaf_prune_is_single_pass() {
        let (out, r) = leaf_prune(&plain(&["a", "b", "c"], &[("a", "b"), ("b", "c")]));
        assert_eq!(ids(&out), vec!["b"]);
        assert_eq!(out.edge_count(), 0);
        assert_eq!((r.nodes_before, r.nodes_after), (3, 1));
    }

    #[test]
    fn leaf_prune_keeps_triangle_and_star_center() {
        assert_eq!(leaf_prune(&triangle()).0, triangle());
        let star = plain(
            &["c", "l1", "l2", "l3"],
            &[("c", "l1"), ("c", "l2"), ("c", "l3")],
        );
        let (out, _) = leaf_prune(&star);
        assert_eq!(ids(&out), vec!["c"]);
        assert_eq!(out.edge_count(), 0);
    }

    #[test]
    fn comp_prune_cases() {
        assert_eq!(comp_prune(&triangle(), 0.0).0, triangle());
        assert_eq!(comp_prune(&triangle(), 0.9).0, triangle());
        // components of sizes 4, 3, 2, 1
        let g = plain(
            &["a", "b", "c", "d", "e", "f", "g", "h", "i", "j"],
            &[
                ("a", "b"),
                ("b", "c"),
                ("c", "d"),
                ("e", "f"),
                ("f", "g"),
                ("h", "i"),
            ],
        );
        let (out, r) = comp_prune(&g, 0.5);
        assert_eq!(out.node_count(), 7);
        assert_eq!(r.components_after, 2);
        assert!(out.position("j").is_none() && out.position("h").is_none());
    }

    #[test]
    fn comp_prune_count_floor() {
        assert_eq!(comp_prune_count(0.29, 100), 29);
        assert_eq!(comp_prune_count(0.5, 3), 1);
        assert_eq!(comp_prune_count(1.0, 3), 3);
    }

    #[test]
    fn kcore_cases() {
        assert_eq!(kcore(&triangle(), 0).0, triangle());
        let (path, _) = kcore(&plain(&["a", "b", "c"], &[("a", "b"), ("b", "c")]), 2);
        assert_eq!(path.node_count(), 0);
        let g = plain(
            &["a", "b", "c", "d"],
            &[("a", "b"), ("b", "c"), ("c", "a"), ("a", "d")],
        );
        let (out, _) = kcore(&g, 2);
        assert_eq!(ids(&out), vec!["a", "b", "c"]);
        assert_eq!(out.edge_count(), 3);
    }

    #[test]
    fn wis_removes_lowest_deg_min_first() {
        let g = plain(
            &["c", "l1", "l2", "l3"],
            &[("c", "l1"), ("c", "l2"), ("c", "l3"), ("l1", "l2")],
        );
        let (out, r) = wis(&g, 0.25);
        assert_eq!(r.edges_after, 3);
        assert!(!out.contains_edge("c", "l3"));
        assert_eq!(out.node_count(), 4);
    }

    #[test]
    fn wis_extremes() {
        assert_eq!(wis(&triangle(), 0.0).0, triangle());
        let (out, _) = wis(&triangle(), 1.0);
        assert_eq!(out.edge_count(), 0);
        assert_eq!(out.node_count(), 3);
    }

    #[test]
    fn wis_rounds_half_up() {
        assert_eq!(wis_removal_count(0.5, 3), 2);
        assert_eq!(wis_removal_count(0.2, 7), 1);
        assert_eq!(wis_removal_count(0.4, 5), 2);
    }

    #[test]
    fn wis_batch_differs_only_in_recomputation() {
        let g = plain(
            &["c", "l1", "l2", "l3"],
            &[("c", "l1"), ("c", "l2"), ("c", "l3"), ("l1", "l2")],
        );
        let cfg = ReductionConfig {
            n_frac: 0.5,
            wis_batch: true,
            ..ReductionConfig::new(ReductionMethod::Wis)
        };
        let (out, r) = cfg.apply(&g).unwrap();
        assert_eq!(r.edges_after, 2);
        assert_eq!(out.node_count(), 4);
        assert!(r.param.ends_with("batch"));
    }

    #[test]
    fn degenerate_inputs() {
        let empty = plain(&[], &[]);
        let single = plain(&["a"], &[]);
        for g in [&empty, &single] {
            for m in ["none", "leaf", "comp", "kcore", "wis"] {
                let cfg = ReductionConfig::new(m.parse().unwrap());
                let (out, _) = cfg.apply(g).unwrap();
                assert!(out.node_count() <= g.node_count());
            }
        }
    }

    #[test]
    fn corpus_totals() {
        let graphs = vec![triangle(), triangle()];
        let (_, rep) =
            reduce_corpus(&graphs, &ReductionConfig::new(ReductionMethod::LeafPrune)).unwrap();
        assert_eq!(rep.totals.nodes_before, rep.totals.nodes_after);
        assert_eq!(rep.totals.edges_before, 6);
        let (_, none) = reduce_corpus(&graphs, &ReductionConfig::default()).unwrap();
        assert_eq!(none.totals.nodes_before, none.totals.nodes_after);
        assert_eq!(none.totals.components_before, none.totals.components_after);
    }

    #[test]
    fn invalid_fraction_rejected() {
        let cfg = ReductionConfig {
            u: 1.5,
            ..ReductionConfig::new(ReductionMethod::CompPrune)
        };
        assert!(matches!(cfg.apply(&triangle()), Err(Error::Config(_))));
    }

    #[test]
    fn csv_header_and_timing_column() {
        let (_, rep) = reduce_corpus(&[triangle()], &ReductionConfig::default()).unwrap();
        let mut buf = Vec::new();
        rep.write_csv(&mut buf, Timing::Omit).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(
            "graph_id,method,param,nodes_before,nodes_after,edges_before,edges_after,comps_before,comps_after,wall_time_s\n"
        ));
        assert!(text.contains("t,none,,3,3,3,3,1,1,\n"));
    }
}
