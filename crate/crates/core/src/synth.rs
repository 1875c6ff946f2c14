//! Seeded synthetic CFG/FCG corpora with a planted malicious motif.
//!
//! Each graph has a chain of basic blocks with random branch edges and a set of
//! degree-1 stub nodes. Malicious graphs additionally carry a small clique whose
//! node payloads come mostly from a separate instruction (or API name) pool.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{
    split_stratified, write_graphs, AttrGraph, DatasetManifest, Label, NodeRecord, Payload,
    SplitSpec,
};
use crate::seed::{stream_rng, Rng};

/// Everyday function prologue/epilogue, arithmetic and branch instructions.
pub const BENIGN_INSTRUCTIONS: &[&str] = &[
    "55",
    "4889E5",
    "4883EC20",
    "8B45FC",
    "8945F8",
    "E800000000",
    "85C0",
    "7405",
    "EB03",
    "4883C420",
    "5D",
    "C3",
    "90",
    "31C0",
    "488D4510",
    "B801000000",
    "3B45F4",
    "0345F8",
    "83C001",
    "4889C7",
];

/// Segment-relative loads, locked adds, int3 and immediate xors.
pub const SHIFTED_INSTRUCTIONS_A: &[&str] =
    &["648B042530000000", "F0010B", "CC", "35EFBEADDE", "80F155"];

/// Byte stores, movabs, indirect calls and small pushes.
pub const SHIFTED_INSTRUCTIONS_B: &[&str] =
    &["C6003A", "48B8EFBEADDEEFBEADDE", "FFD0", "6A40", "30C8"];

pub const BENIGN_FUNCTIONS: &[&str] = &[
    "main",
    "printf",
    "malloc",
    "free",
    "strlen",
    "memcpy",
    "fopen",
    "fclose",
    "read",
    "write",
    "atexit",
    "sub_401000",
    "sub_401200",
    "qsort",
    "strcmp",
    "exit",
];

pub const SHIFTED_FUNCTIONS_A: &[&str] = &[
    "VirtualAllocEx",
    "WriteProcessMemory",
    "GetProcAddress",
    "LoadLibraryA",
];

pub const SHIFTED_FUNCTIONS_B: &[&str] = &[
    "CreateRemoteThread",
    "RegSetValueExA",
    "InternetOpenUrlA",
    "CryptEncrypt",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphKind {
    /// Nodes carry instruction bytes.
    Cfg,
    /// Nodes carry function names.
    Fcg,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotifSpec {
    /// Clique size.
    pub size: usize,
    /// Probability that a motif payload item comes from the shifted pool.
    pub shift: f64,
    /// Give benign graphs the same shifted nodes as two separate cliques (pool A
    /// only, pool B only), so only A–B adjacency separates the classes.
    pub decoys: bool,
}

impl Default for MotifSpec {
    fn default() -> Self {
        MotifSpec {
            size: 5,
            shift: 0.8,
            decoys: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub per_class: usize,
    /// Overrides the malicious count for imbalanced corpora.
    pub malicious: Option<usize>,
    pub min_nodes: usize,
    pub max_nodes: usize,
    /// Expected extra branch edges per basic block.
    pub edge_density: f64,
    /// Share of nodes that are degree-1 stubs.
    pub leaf_fraction: f64,
    pub min_instrs: usize,
    pub max_instrs: usize,
    pub kind: GraphKind,
    /// `None` generates both classes from the same distribution.
    pub motif: Option<MotifSpec>,
    pub train_fraction: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            per_class: 100,
            malicious: None,
            min_nodes: 20,
            max_nodes: 40,
            edge_density: 0.3,
            leaf_fraction: 0.3,
            min_instrs: 2,
            max_instrs: 6,
            kind: GraphKind::Cfg,
            motif: Some(MotifSpec::default()),
            train_fraction: 0.8,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::BadSpec(m.to_string()));
        if self.per_class == 0 {
            return bad("per_class must be positive");
        }
        if self.min_nodes < 3 || self.min_nodes > self.max_nodes {
            return bad("need 3 <= min_nodes <= max_nodes");
        }
        if self.min_instrs == 0 || self.min_instrs > self.max_instrs {
            return bad("need 1 <= min_instrs <= max_instrs");
        }
        if !(0.0..=1.0).contains(&self.edge_density)
            || !(0.0..0.9).contains(&self.leaf_fraction)
            || !(0.0..=1.0).contains(&self.train_fraction)
        {
            return bad("edge_density, leaf_fraction and train_fraction must be fractions");
        }
        if let Some(m) = &self.motif {
            if m.size < 2 || !(0.0..=1.0).contains(&m.shift) {
                return bad("motif needs size >= 2 and shift in [0,1]");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticGraph {
    pub graph: AttrGraph,
    /// Planted clique edges as (src, dst) ids; empty for benign graphs.
    pub motif_edges: Vec<(String, String)>,
}

impl SyntheticGraph {
    pub fn motif_edge_set(&self) -> BTreeSet<(String, String)> {
        self.motif_edges.iter().cloned().collect()
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Pool {
    Benign,
    A,
    B,
}

fn payload(rng: &mut Rng, spec: &SyntheticSpec, pool: Pool) -> Payload {
    let shift = spec.motif.map_or(0.0, |m| m.shift);
    let pick = |rng: &mut Rng, benign: &[&'static str], a: &[&'static str], b: &[&'static str]| {
        let odd = match pool {
            Pool::A => a,
            Pool::B => b,
            Pool::Benign => benign,
        };
        let chosen = if rng.gen::<f64>() < shift {
            odd
        } else {
            benign
        };
        chosen.choose(rng).expect("non-empty pool").to_string()
    };
    match spec.kind {
        GraphKind::Cfg => {
            let n = rng.gen_range(spec.min_instrs..=spec.max_instrs);
            Payload::InstrBytes(
                (0..n)
                    .map(|_| {
                        pick(
                            rng,
                            BENIGN_INSTRUCTIONS,
                            SHIFTED_INSTRUCTIONS_A,
                            SHIFTED_INSTRUCTIONS_B,
                        )
                    })
                    .collect(),
            )
        }
        GraphKind::Fcg => Payload::FunctionName(pick(
            rng,
            BENIGN_FUNCTIONS,
            SHIFTED_FUNCTIONS_A,
            SHIFTED_FUNCTIONS_B,
        )),
    }
}

fn generate_one(
    rng: &mut Rng,
    spec: &SyntheticSpec,
    graph_id: String,
    label: Label,
) -> SyntheticGraph {
    let n = rng.gen_range(spec.min_nodes..=spec.max_nodes);
    let stubs = ((n as f64) * spec.leaf_fraction).round() as usize;
    let blocks = (n - stubs).max(2);
    let mut pools = vec![Pool::Benign; blocks + stubs];

    // planted cliques: the malicious motif alternates A and B; benign decoys
    // split the same multiset into an A-only and a B-only clique
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut motif_group = None;
    match (label, spec.motif) {
        (Label::Malicious, Some(m)) => {
            motif_group = Some(0);
            groups.push((0..m.size).map(|i| pools.len() + i).collect());
            pools.extend((0..m.size).map(|i| if i % 2 == 0 { Pool::A } else { Pool::B }));
        }
        (Label::Benign, Some(m)) if m.decoys => {
            for (pool, size) in [(Pool::A, m.size.div_ceil(2)), (Pool::B, m.size / 2)] {
                groups.push((0..size).map(|i| pools.len() + i).collect());
                pools.extend(std::iter::repeat_n(pool, size));
            }
        }
        _ => {}
    }

    // ids are shuffled so they say nothing about a node's role
    let mut slots: Vec<usize> = (0..pools.len()).collect();
    slots.shuffle(rng);
    let width = pools.len().to_string().len();
    let id_of = |i: usize| format!("v{:0width$}", slots[i]);

    let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut ordered: Vec<(usize, usize)> = Vec::new();
    let mut add = |e: (usize, usize)| {
        if edges.insert(e) {
            ordered.push(e);
        }
    };
    for b in 1..blocks {
        add((b - 1, b));
    }
    for b in 0..blocks {
        if rng.gen::<f64>() < spec.edge_density {
            let target = rng.gen_range(0..blocks);
            if target != b && target != b + 1 {
                add((b, target));
            }
        }
    }
    for s in blocks..blocks + stubs {
        add((rng.gen_range(0..blocks), s));
    }
    let mut motif_edges = Vec::new();
    for (gi, group) in groups.iter().enumerate() {
        for (x, &i) in group.iter().enumerate() {
            for &j in &group[x + 1..] {
                add((i, j));
                if motif_group == Some(gi) {
                    motif_edges.push((id_of(i), id_of(j)));
                }
            }
        }
        if let (Some(&first), Some(&last)) = (group.first(), group.last()) {
            add((rng.gen_range(0..blocks), first));
            add((last, rng.gen_range(0..blocks)));
        }
    }

    let mut nodes: Vec<(String, Payload)> = pools
        .iter()
        .enumerate()
        .map(|(i, &pool)| (id_of(i), payload(rng, spec, pool)))
        .collect();
    let edge_ids: Vec<(String, String)> =
        ordered.iter().map(|&(s, d)| (id_of(s), id_of(d))).collect();
    nodes.sort_by(|a, b| a.0.cmp(&b.0));
    let graph = AttrGraph::new(
        graph_id,
        Some(label),
        nodes
            .into_iter()
            .map(|(id, p)| NodeRecord::new(id, p))
            .collect(),
        edge_ids,
    )
    .expect("generator produces valid graphs");
    SyntheticGraph { graph, motif_edges }
}

/// Generates the corpus: benign graphs first, then malicious, ids `syn-00000`...
pub fn gen_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Vec<SyntheticGraph>> {
    spec.validate()?;
    let mut rng = stream_rng(seed, "synth");
    let malicious = spec.malicious.unwrap_or(spec.per_class);
    let labels = std::iter::repeat_n(Label::Benign, spec.per_class)
        .chain(std::iter::repeat_n(Label::Malicious, malicious));
    Ok(labels
        .enumerate()
        .map(|(i, label)| generate_one(&mut rng, spec, format!("syn-{i:05}"), label))
        .collect())
}

#[derive(Debug, Serialize, Deserialize)]
struct MotifLine {
    graph_id: String,
    motif_edges: Vec<(String, String)>,
}

/// Files written by [`write_synthetic`].
#[derive(Debug, Clone)]
pub struct SyntheticFiles {
    pub graphs: PathBuf,
    pub train: PathBuf,
    pub test: PathBuf,
    pub motifs: PathBuf,
    pub manifest: PathBuf,
}

/// Writes `graphs.jsonl`, the stratified `train.jsonl`/`test.jsonl` split,
/// `motifs.jsonl` (ground-truth motif edges) and `manifest.json` into `dir`.
pub fn write_synthetic(dir: &Path, spec: &SyntheticSpec, seed: u64) -> Result<SyntheticFiles> {
    let corpus = gen_synthetic(spec, seed)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = SyntheticFiles {
        graphs: dir.join("graphs.jsonl"),
        train: dir.join("train.jsonl"),
        test: dir.join("test.jsonl"),
        motifs: dir.join("motifs.jsonl"),
        manifest: dir.join("manifest.json"),
    };
    let graphs: Vec<AttrGraph> = corpus.iter().map(|s| s.graph.clone()).collect();
    write_graphs(&files.graphs, &graphs)?;
    let split = SplitSpec {
        train: spec.train_fraction,
        test: 1.0 - spec.train_fraction,
        seed,
    };
    let (train, test) = split_stratified(graphs, split.train, split.test, split.seed);
    write_graphs(&files.train, &train)?;
    write_graphs(&files.test, &test)?;
    let mut motif_text = String::new();
    for s in corpus.iter().filter(|s| !s.motif_edges.is_empty()) {
        motif_text.push_str(&serde_json::to_string(&MotifLine {
            graph_id: s.graph.graph_id().to_string(),
            motif_edges: s.motif_edges.clone(),
        })?);
        motif_text.push('\n');
    }
    std::fs::write(&files.motifs, motif_text).map_err(|e| Error::io(&files.motifs, e))?;
    DatasetManifest {
        name: format!("synthetic-{seed}"),
        graphs: vec![PathBuf::from("graphs.jsonl")],
        split,
    }
    .write(&files.manifest)?;
    Ok(files)
}

/// Graph id and its planted motif edges.
pub type MotifRecord = (String, Vec<(String, String)>);

/// Reads `motifs.jsonl` back into (graph_id, motif edges) pairs.
pub fn read_motifs(path: &Path) -> Result<Vec<MotifRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let m: MotifLine = serde_json::from_str(l)?;
            Ok((m.graph_id, m.motif_edges))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::x86::decode_hex;

    #[test]
    fn pools_decode() {
        let pools = [
            BENIGN_INSTRUCTIONS,
            SHIFTED_INSTRUCTIONS_A,
            SHIFTED_INSTRUCTIONS_B,
        ];
        for hex in pools.concat() {
            assert!(decode_hex(hex).is_ok(), "{hex}");
        }
    }

    #[test]
    fn counts_and_labels() {
        let spec = SyntheticSpec {
            per_class: 10,
            ..Default::default()
        };
        let corpus = gen_synthetic(&spec, 1).unwrap();
        assert_eq!(corpus.len(), 20);
        let malicious = corpus
            .iter()
            .filter(|s| s.graph.label() == Some(Label::Malicious))
            .count();
        assert_eq!(malicious, 10);
        for s in &corpus {
            let has_motif = !s.motif_edges.is_empty();
            assert_eq!(has_motif, s.graph.label() == Some(Label::Malicious));
            for (a, b) in &s.motif_edges {
                assert!(s.graph.contains_edge(a, b));
            }
        }
    }

    #[test]
    fn same_seed_same_corpus() {
        let spec = SyntheticSpec {
            per_class: 3,
            kind: GraphKind::Fcg,
            ..Default::default()
        };
        let a: Vec<_> = gen_synthetic(&spec, 5)
            .unwrap()
            .into_iter()
            .map(|s| s.graph)
            .collect();
        let b: Vec<_> = gen_synthetic(&spec, 5)
            .unwrap()
            .into_iter()
            .map(|s| s.graph)
            .collect();
        assert_eq!(a, b);
    }

    #[test]
    fn bad_spec() {
        let spec = SyntheticSpec {
            min_nodes: 10,
            max_nodes: 5,
            ..Default::default()
        };
        assert!(matches!(gen_synthetic(&spec, 0), Err(Error::BadSpec(_))));
    }
}
