use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{AttrGraph, Label, NodeRecord, Payload};
use crate::error::{Error, Result};
use crate::seed::stream_rng;

#[derive(Debug, Serialize, Deserialize)]
struct GraphLine {
    graph_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<u8>,
    nodes: Vec<NodeLine>,
    edges: Vec<(String, String)>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeLine {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    instr_bytes: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    function_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    features: Option<Vec<f64>>,
}

/// Parses one JSON-lines record. `line` is 1-based and only used in error messages.
pub fn parse_graph_line(text: &str, line: usize) -> Result<AttrGraph> {
    let raw: GraphLine = serde_json::from_str(text).map_err(|e| Error::Parse {
        line,
        reason: e.to_string(),
    })?;
    let label = match raw.label {
        None => None,
        Some(v) => Some(Label::from_index(v as usize).ok_or_else(|| Error::Parse {
            line,
            reason: format!("label must be 0 or 1, got {v}"),
        })?),
    };
    let mut nodes = Vec::with_capacity(raw.nodes.len());
    for n in raw.nodes {
        let payload = match (n.instr_bytes, n.function_name, n.features) {
            (Some(b), None, None) => Payload::InstrBytes(b),
            (None, Some(f), None) => Payload::FunctionName(f),
            (None, None, Some(v)) => Payload::Features(v),
            _ => {
                return Err(Error::invariant(
                    &raw.graph_id,
                    format!("node `{}` must carry exactly one payload", n.id),
                ))
            }
        };
        nodes.push(NodeRecord::new(n.id, payload));
    }
    AttrGraph::new(raw.graph_id, label, nodes, raw.edges)
}

fn to_line(g: &AttrGraph) -> GraphLine {
    GraphLine {
        graph_id: g.graph_id.clone(),
        label: g.label.map(|l| l as u8),
        nodes: g
            .nodes
            .iter()
            .map(|n| {
                let mut line = NodeLine {
                    id: n.id.clone(),
                    instr_bytes: None,
                    function_name: None,
                    features: None,
                };
                match &n.payload {
                    Payload::InstrBytes(b) => line.instr_bytes = Some(b.clone()),
                    Payload::FunctionName(f) => line.function_name = Some(f.clone()),
                    Payload::Features(v) => line.features = Some(v.clone()),
                }
                line
            })
            .collect(),
        edges: g
            .edges()
            .map(|(s, d)| (s.to_string(), d.to_string()))
            .collect(),
    }
}

/// Reads graphs from any buffered source; blank lines are skipped.
pub fn read_graphs<R: BufRead>(reader: R) -> Result<Vec<AttrGraph>> {
    let mut graphs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        graphs.push(parse_graph_line(&line, i + 1)?);
    }
    Ok(graphs)
}

pub fn load_graphs(path: impl AsRef<Path>) -> Result<Vec<AttrGraph>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_graphs(BufReader::new(file))
}

pub fn write_graphs<'a, I>(path: impl AsRef<Path>, graphs: I) -> Result<()>
where
    I: IntoIterator<Item = &'a AttrGraph>,
{
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for g in graphs {
        serde_json::to_writer(&mut out, &to_line(g))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub test: f64,
    pub seed: u64,
}

/// Dataset manifest: named list of graph files plus a seeded train/test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub graphs: Vec<PathBuf>,
    pub split: SplitSpec,
}

impl DatasetManifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: DatasetManifest = serde_json::from_str(&text)?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        let SplitSpec { train, test, .. } = self.split;
        if !(0.0..=1.0).contains(&train)
            || !(0.0..=1.0).contains(&test)
            || train + test > 1.0 + 1e-9
        {
            return Err(Error::Config(format!(
                "manifest `{}`: split fractions train={train} test={test} are invalid",
                self.name
            )));
        }
        Ok(())
    }

    /// Loads every listed file; relative paths resolve against `base`.
    pub fn load(&self, base: &Path) -> Result<Vec<AttrGraph>> {
        let mut all = Vec::new();
        for p in &self.graphs {
            let full = if p.is_absolute() {
                p.clone()
            } else {
                base.join(p)
            };
            all.extend(load_graphs(full)?);
        }
        Ok(all)
    }

    /// Stratified seeded split: each label class is shuffled and cut at the train fraction.
    pub fn split(&self, graphs: Vec<AttrGraph>) -> (Vec<AttrGraph>, Vec<AttrGraph>) {
        split_stratified(graphs, self.split.train, self.split.test, self.split.seed)
    }
}

/// Per-label seeded shuffle, then cut each class at the train and test fractions.
pub fn split_stratified(
    graphs: Vec<AttrGraph>,
    train_frac: f64,
    test_frac: f64,
    seed: u64,
) -> (Vec<AttrGraph>, Vec<AttrGraph>) {
    let mut rng = stream_rng(seed, "split");
    let mut buckets: [Vec<usize>; 3] = Default::default();
    for (i, g) in graphs.iter().enumerate() {
        let slot = g.label.map_or(2, Label::index);
        buckets[slot].push(i);
    }
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for bucket in buckets.iter_mut() {
        bucket.shuffle(&mut rng);
        let n = bucket.len();
        let n_train = ((n as f64) * train_frac).round() as usize;
        let n_test = (((n as f64) * test_frac).round() as usize).min(n - n_train.min(n));
        train_idx.extend_from_slice(&bucket[..n_train.min(n)]);
        test_idx.extend_from_slice(&bucket[n_train.min(n)..n_train.min(n) + n_test]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    let mut slots: Vec<Option<AttrGraph>> = graphs.into_iter().map(Some).collect();
    let train = train_idx.iter().filter_map(|&i| slots[i].take()).collect();
    let test = test_idx.iter().filter_map(|&i| slots[i].take()).collect();
    (train, test)
}
