//! Attributed directed graphs for control-flow and function-call graphs.
//!
//! Nodes carry exactly one payload (raw instruction bytes, a function name, or a
//! precomputed feature vector). Edges are ordered pairs of node ids; self-loops
//! are allowed, duplicate edges are not.

mod io;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use crate::error::{Error, Result};

pub use io::{
    load_graphs, parse_graph_line, read_graphs, split_stratified, write_graphs, DatasetManifest,
    SplitSpec,
};

/// Feature-vector widths accepted in node payloads: raw instruction encoding,
/// autoencoder code, and function-name embedding.
pub const FEATURE_WIDTHS: [usize; 3] = [406, 64, 384];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Benign = 0,
    Malicious = 1,
}

impl Label {
    pub fn from_index(value: usize) -> Option<Self> {
        match value {
            0 => Some(Label::Benign),
            1 => Some(Label::Malicious),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    /// One hex string per instruction, e.g. `"B805000000"`.
    InstrBytes(Vec<String>),
    FunctionName(String),
    Features(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeRecord {
    pub id: String,
    pub payload: Payload,
}

impl NodeRecord {
    pub fn new(id: impl Into<String>, payload: Payload) -> Self {
        NodeRecord {
            id: id.into(),
            payload,
        }
    }
}

/// A validated attributed graph. Edges are stored by node position.
#[derive(Debug, Clone)]
pub struct AttrGraph {
    graph_id: String,
    label: Option<Label>,
    nodes: Vec<NodeRecord>,
    edges: Vec<(usize, usize)>,
    index: HashMap<String, usize>,
}

impl PartialEq for AttrGraph {
    fn eq(&self, other: &Self) -> bool {
        self.graph_id == other.graph_id
            && self.label == other.label
            && self.nodes == other.nodes
            && self.edges == other.edges
    }
}

/// Total degree (in + out) per node id. A self-loop counts twice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DegreeTable(pub BTreeMap<String, usize>);

impl DegreeTable {
    pub fn get(&self, node_id: &str) -> Option<usize> {
        self.0.get(node_id).copied()
    }

    pub fn total(&self) -> usize {
        self.0.values().sum()
    }
}

/// Weakly connected components, ascending by size, ties broken by the smallest member id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentPartition {
    pub components: Vec<BTreeSet<String>>,
}

impl ComponentPartition {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.components.iter().map(BTreeSet::len).collect()
    }
}

impl AttrGraph {
    /// Builds a graph from node records and id-pair edges, checking every invariant.
    pub fn new(
        graph_id: impl Into<String>,
        label: Option<Label>,
        nodes: Vec<NodeRecord>,
        edges: Vec<(String, String)>,
    ) -> Result<Self> {
        let graph_id = graph_id.into();
        let mut index = HashMap::with_capacity(nodes.len());
        for (pos, node) in nodes.iter().enumerate() {
            if index.insert(node.id.clone(), pos).is_some() {
                return Err(Error::invariant(
                    &graph_id,
                    format!("duplicate node id `{}`", node.id),
                ));
            }
            validate_payload(&graph_id, node)?;
        }
        let mut seen = BTreeSet::new();
        let mut resolved = Vec::with_capacity(edges.len());
        for (src, dst) in &edges {
            let lookup = |id: &String| {
                index.get(id).copied().ok_or_else(|| {
                    Error::invariant(&graph_id, format!("edge endpoint `{id}` is not a node"))
                })
            };
            let pair = (lookup(src)?, lookup(dst)?);
            if !seen.insert(pair) {
                return Err(Error::invariant(
                    &graph_id,
                    format!("duplicate edge `{src}` -> `{dst}`"),
                ));
            }
            resolved.push(pair);
        }
        Ok(AttrGraph {
            graph_id,
            label,
            nodes,
            edges: resolved,
            index,
        })
    }

    /// Builds a graph from positional edges. Positions must be in range and unique.
    pub(crate) fn from_parts(
        graph_id: String,
        label: Option<Label>,
        nodes: Vec<NodeRecord>,
        edges: Vec<(usize, usize)>,
    ) -> Self {
        let index = nodes
            .iter()
            .enumerate()
            .map(|(pos, n)| (n.id.clone(), pos))
            .collect();
        AttrGraph {
            graph_id,
            label,
            nodes,
            edges,
            index,
        }
    }

    pub fn graph_id(&self) -> &str {
        &self.graph_id
    }

    pub fn label(&self) -> Option<Label> {
        self.label
    }

    pub fn set_label(&mut self, label: Option<Label>) {
        self.label = label;
    }

    pub fn nodes(&self) -> &[NodeRecord] {
        &self.nodes
    }

    /// Edges as node positions into [`AttrGraph::nodes`].
    pub fn edge_indices(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edges(&self) -> impl Iterator<Item = (&str, &str)> + '_ {
        self.edges
            .iter()
            .map(|&(s, d)| (self.nodes[s].id.as_str(), self.nodes[d].id.as_str()))
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn position(&self, node_id: &str) -> Option<usize> {
        self.index.get(node_id).copied()
    }

    pub fn contains_edge(&self, src: &str, dst: &str) -> bool {
        match (self.position(src), self.position(dst)) {
            (Some(s), Some(d)) => self.edges.contains(&(s, d)),
            _ => false,
        }
    }

    /// Replaces node payloads in place, keeping ids and structure.
    pub fn map_payloads<F>(&self, mut f: F) -> Result<AttrGraph>
    where
        F: FnMut(&NodeRecord) -> Result<Payload>,
    {
        let nodes = self
            .nodes
            .iter()
            .map(|n| Ok(NodeRecord::new(n.id.clone(), f(n)?)))
            .collect::<Result<Vec<_>>>()?;
        for node in &nodes {
            validate_payload(&self.graph_id, node)?;
        }
        Ok(AttrGraph::from_parts(
            self.graph_id.clone(),
            self.label,
            nodes,
            self.edges.clone(),
        ))
    }

    /// Total degree by node position.
    pub fn degree_vec(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.nodes.len()];
        for &(s, d) in &self.edges {
            deg[s] += 1;
            deg[d] += 1;
        }
        deg
    }

    pub fn degrees(&self) -> DegreeTable {
        DegreeTable(
            self.degree_vec()
                .into_iter()
                .enumerate()
                .map(|(pos, d)| (self.nodes[pos].id.clone(), d))
                .collect(),
        )
    }

    /// Component id per node position (weak connectivity), numbered arbitrarily.
    pub(crate) fn component_ids(&self) -> Vec<usize> {
        let mut parent: Vec<usize> = (0..self.nodes.len()).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for &(s, d) in &self.edges {
            let (a, b) = (find(&mut parent, s), find(&mut parent, d));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
        (0..self.nodes.len())
            .map(|x| find(&mut parent, x))
            .collect()
    }

    pub fn component_count(&self) -> usize {
        let ids = self.component_ids();
        ids.iter()
            .enumerate()
            .filter(|&(pos, &root)| pos == root)
            .count()
    }

    pub fn components(&self) -> ComponentPartition {
        let mut groups: BTreeMap<usize, BTreeSet<String>> = BTreeMap::new();
        for (pos, root) in self.component_ids().into_iter().enumerate() {
            groups
                .entry(root)
                .or_default()
                .insert(self.nodes[pos].id.clone());
        }
        let mut components: Vec<BTreeSet<String>> = groups.into_values().collect();
        components.sort_by(|a, b| {
            a.len()
                .cmp(&b.len())
                .then_with(|| a.first().cmp(&b.first()))
        });
        ComponentPartition { components }
    }

    /// Subgraph on `keep` with every original edge whose endpoints both survive.
    pub fn induced_subgraph<'a, I>(&self, keep: I) -> Result<AttrGraph>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut mask = vec![false; self.nodes.len()];
        for id in keep {
            let pos = self.position(id).ok_or_else(|| Error::UnknownNode {
                graph_id: self.graph_id.clone(),
                node_id: id.to_string(),
            })?;
            mask[pos] = true;
        }
        Ok(self.retain_nodes(&mask))
    }

    /// Induced subgraph by position mask. Node order is preserved.
    pub(crate) fn retain_nodes(&self, keep: &[bool]) -> AttrGraph {
        let mut remap = vec![usize::MAX; self.nodes.len()];
        let mut nodes = Vec::new();
        for (pos, node) in self.nodes.iter().enumerate() {
            if keep[pos] {
                remap[pos] = nodes.len();
                nodes.push(node.clone());
            }
        }
        let edges = self
            .edges
            .iter()
            .filter(|&&(s, d)| keep[s] && keep[d])
            .map(|&(s, d)| (remap[s], remap[d]))
            .collect();
        AttrGraph::from_parts(self.graph_id.clone(), self.label, nodes, edges)
    }

    /// Same node set, edges filtered by position mask.
    pub(crate) fn retain_edges(&self, keep: &[bool]) -> AttrGraph {
        let edges = self
            .edges
            .iter()
            .zip(keep)
            .filter(|(_, &k)| k)
            .map(|(&e, _)| e)
            .collect();
        AttrGraph::from_parts(self.graph_id.clone(), self.label, self.nodes.clone(), edges)
    }

    /// Graphviz rendering with node ids as labels.
    pub fn to_dot(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "digraph \"{}\" {{", escape_dot(&self.graph_id));
        for node in &self.nodes {
            let id = escape_dot(&node.id);
            let _ = writeln!(out, "  \"{id}\" [label=\"{id}\"];");
        }
        for (s, d) in self.edges() {
            let _ = writeln!(out, "  \"{}\" -> \"{}\";", escape_dot(s), escape_dot(d));
        }
        out.push_str("}\n");
        out
    }
}

fn escape_dot(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

fn validate_payload(graph_id: &str, node: &NodeRecord) -> Result<()> {
    match &node.payload {
        Payload::Features(v) => {
            if !FEATURE_WIDTHS.contains(&v.len()) {
                return Err(Error::invariant(
                    graph_id,
                    format!(
                        "node `{}` feature vector has length {}, expected one of {:?}",
                        node.id,
                        v.len(),
                        FEATURE_WIDTHS
                    ),
                ));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::invariant(
                    graph_id,
                    format!("node `{}` has a non-finite feature", node.id),
                ));
            }
        }
        Payload::InstrBytes(list) => {
            for hex in list {
                if crate::x86::parse_hex(hex).is_none() {
                    return Err(Error::invariant(
                        graph_id,
                        format!("node `{}` has malformed instruction hex `{hex}`", node.id),
                    ));
                }
            }
        }
        Payload::FunctionName(_) => {}
    }
    Ok(())
}
