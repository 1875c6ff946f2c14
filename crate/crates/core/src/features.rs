//! Turning node payloads into feature matrices, and the model checkpoint files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{AttrGraph, Payload};
use crate::nn::{
    fallback_embedding, AutoencoderConfig, AutoencoderModel, EmbeddingTable, FeatureMatrix,
    FneReport, GcnConfig, GcnModel, FNE_DIM,
};
use crate::x86::{encode_node_with, Aggregation, DIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    /// Autoencoder-compressed instruction encodings (64 wide).
    Ae,
    /// Function-name embeddings (384 wide).
    Fne,
    /// Instruction encodings as-is (406 wide), or feature payloads unchanged.
    Raw,
}

impl std::str::FromStr for EmbeddingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ae" => Ok(EmbeddingKind::Ae),
            "fne" => Ok(EmbeddingKind::Fne),
            "raw" => Ok(EmbeddingKind::Raw),
            other => Err(Error::Config(format!("unknown embedding `{other}`"))),
        }
    }
}

/// How node features were produced; stored in the classifier checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbeddingSpec {
    Raw {
        #[serde(default)]
        aggregation: Aggregation,
    },
    Ae {
        #[serde(default)]
        aggregation: Aggregation,
        autoencoder: AutoencoderModel,
    },
    Fne {
        seed: u64,
    },
}

impl EmbeddingSpec {
    pub fn kind(&self) -> EmbeddingKind {
        match self {
            EmbeddingSpec::Raw { .. } => EmbeddingKind::Raw,
            EmbeddingSpec::Ae { .. } => EmbeddingKind::Ae,
            EmbeddingSpec::Fne { .. } => EmbeddingKind::Fne,
        }
    }
}

/// An embedding spec plus the function-name table (which is not checkpointed).
#[derive(Debug, Clone)]
pub struct Featurizer {
    pub spec: EmbeddingSpec,
    pub table: EmbeddingTable,
}

fn instr_406(
    g: &AttrGraph,
    node_id: &str,
    instrs: &[String],
    agg: Aggregation,
) -> Result<Vec<f64>> {
    encode_node_with(instrs, agg)
        .map(|f| f.values)
        .map_err(|(index, source)| Error::Decode {
            graph_id: g.graph_id().to_string(),
            node_id: node_id.to_string(),
            index,
            source,
        })
}

impl Featurizer {
    pub fn new(spec: EmbeddingSpec) -> Self {
        Featurizer {
            spec,
            table: EmbeddingTable::default(),
        }
    }

    pub fn with_table(mut self, table: EmbeddingTable) -> Self {
        self.table = table;
        self
    }

    pub fn width(&self) -> usize {
        match &self.spec {
            EmbeddingSpec::Raw { .. } => DIM,
            EmbeddingSpec::Ae { autoencoder, .. } => autoencoder.code_dim(),
            EmbeddingSpec::Fne { .. } => FNE_DIM,
        }
    }

    fn node_row(&self, g: &AttrGraph, id: &str, payload: &Payload) -> Result<Vec<f64>> {
        let wrong = |what: &str| {
            Error::ShapeMismatch(format!(
                "graph `{}`, node `{id}`: {what} cannot feed a {:?} embedding",
                g.graph_id(),
                self.spec.kind()
            ))
        };
        match (&self.spec, payload) {
            (EmbeddingSpec::Raw { aggregation }, Payload::InstrBytes(b)) => {
                instr_406(g, id, b, *aggregation)
            }
            (EmbeddingSpec::Raw { .. }, Payload::Features(v)) => Ok(v.clone()),
            (
                EmbeddingSpec::Ae {
                    aggregation,
                    autoencoder,
                },
                Payload::InstrBytes(b),
            ) => autoencoder.encode64(&instr_406(g, id, b, *aggregation)?),
            (EmbeddingSpec::Ae { autoencoder, .. }, Payload::Features(v)) => {
                if v.len() == autoencoder.code_dim() {
                    Ok(v.clone())
                } else {
                    autoencoder.encode64(v)
                }
            }
            (EmbeddingSpec::Fne { seed }, Payload::FunctionName(name)) => Ok(self
                .table
                .get(name)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| fallback_embedding(name, *seed))),
            (EmbeddingSpec::Fne { .. }, Payload::Features(v)) => Ok(v.clone()),
            (_, Payload::InstrBytes(_)) => Err(wrong("instruction bytes")),
            (_, Payload::FunctionName(_)) => Err(wrong("a function name")),
        }
    }

    /// One row per node, in node order.
    pub fn features(&self, g: &AttrGraph) -> Result<FeatureMatrix> {
        let rows = g
            .nodes()
            .iter()
            .map(|n| self.node_row(g, &n.id, &n.payload))
            .collect::<Result<Vec<_>>>()?;
        FeatureMatrix::from_rows(&rows, self.width())
    }
}

/// Replaces instruction-byte payloads with 406-wide encodings. With `skip_bad`,
/// undecodable nodes are dropped (with their edges) and reported instead of failing.
pub fn encode_graph(
    g: &AttrGraph,
    agg: Aggregation,
    skip_bad: bool,
) -> Result<(AttrGraph, Vec<String>)> {
    let mut bad = Vec::new();
    let mut keep = Vec::with_capacity(g.node_count());
    for n in g.nodes() {
        if let Payload::InstrBytes(b) = &n.payload {
            if let Err(e) = instr_406(g, &n.id, b, agg) {
                if !skip_bad {
                    return Err(e);
                }
                log::warn!("{e}; node dropped");
                bad.push(n.id.clone());
                continue;
            }
        }
        keep.push(n.id.as_str());
    }
    let kept = g.induced_subgraph(keep)?;
    let out = kept.map_payloads(|n| match &n.payload {
        Payload::InstrBytes(b) => Ok(Payload::Features(instr_406(g, &n.id, b, agg)?)),
        other => Ok(other.clone()),
    })?;
    Ok((out, bad))
}

/// Replaces function-name payloads with table vectors or deterministic fallbacks.
pub fn embed_fne_graph(
    g: &AttrGraph,
    table: &EmbeddingTable,
    seed: u64,
) -> Result<(AttrGraph, FneReport)> {
    let mut report = FneReport::default();
    let out = g.map_payloads(|n| match &n.payload {
        Payload::FunctionName(name) => Ok(Payload::Features(match table.get(name) {
            Some(v) => {
                report.found += 1;
                v.to_vec()
            }
            None => {
                report.fallback += 1;
                fallback_embedding(name, seed)
            }
        })),
        other => Ok(other.clone()),
    })?;
    Ok((out, report))
}

/// Node feature vectors of benign graphs, the autoencoder's training set.
pub fn benign_instruction_vectors(graphs: &[AttrGraph], agg: Aggregation) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::new();
    for g in graphs
        .iter()
        .filter(|g| g.label() != Some(crate::Label::Malicious))
    {
        for n in g.nodes() {
            match &n.payload {
                Payload::InstrBytes(b) => out.push(instr_406(g, &n.id, b, agg)?),
                Payload::Features(v) if v.len() == DIM => out.push(v.clone()),
                _ => {}
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename = "autoencoder")]
pub struct AutoencoderCheckpoint {
    pub config: AutoencoderConfig,
    pub model: AutoencoderModel,
    pub loss_log: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename = "gcn")]
pub struct GcnCheckpoint {
    pub config: GcnConfig,
    pub embedding: EmbeddingSpec,
    pub model: GcnModel,
    pub loss_log: Vec<f64>,
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::NodeRecord;

    fn cfg_graph() -> AttrGraph {
        AttrGraph::new(
            "g",
            None,
            vec![
                NodeRecord::new("a", Payload::InstrBytes(vec!["90".into()])),
                NodeRecord::new("b", Payload::InstrBytes(vec!["0F05".into()])),
                NodeRecord::new("c", Payload::InstrBytes(vec!["C3".into()])),
            ],
            vec![("a".into(), "b".into()), ("a".into(), "c".into())],
        )
        .unwrap()
    }

    #[test]
    fn encode_graph_skips_or_fails() {
        let g = cfg_graph();
        assert!(matches!(
            encode_graph(&g, Aggregation::Mean, false),
            Err(Error::Decode { index: 0, .. })
        ));
        let (out, bad) = encode_graph(&g, Aggregation::Mean, true).unwrap();
        assert_eq!(bad, vec!["b".to_string()]);
        assert_eq!(out.node_count(), 2);
        assert_eq!(out.edges().collect::<Vec<_>>(), vec![("a", "c")]);
        assert!(matches!(&out.nodes()[0].payload, Payload::Features(v) if v.len() == DIM));
    }

    #[test]
    fn raw_featurizer_matches_encoded_payloads() {
        let (encoded, _) = encode_graph(&cfg_graph(), Aggregation::Mean, true).unwrap();
        let g = cfg_graph().induced_subgraph(["a", "c"]).unwrap();
        let f = Featurizer::new(EmbeddingSpec::Raw {
            aggregation: Aggregation::Mean,
        });
        assert_eq!(f.features(&g).unwrap(), f.features(&encoded).unwrap());
        assert_eq!(f.features(&g).unwrap().width(), DIM);
    }

    #[test]
    fn ae_featurizer_width() {
        let g = cfg_graph().induced_subgraph(["a", "c"]).unwrap();
        let f = Featurizer::new(EmbeddingSpec::Ae {
            aggregation: Aggregation::Mean,
            autoencoder: AutoencoderModel::new(DIM, 128, 64, 0),
        });
        assert_eq!(f.features(&g).unwrap().width(), 64);
    }

    #[test]
    fn fne_rejects_instruction_payloads() {
        let f = Featurizer::new(EmbeddingSpec::Fne { seed: 0 });
        assert!(matches!(
            f.features(&cfg_graph()),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn embedding_spec_tags() {
        let text = serde_json::to_string(&EmbeddingSpec::Fne { seed: 5 }).unwrap();
        assert_eq!(text, r#"{"kind":"fne","seed":5}"#);
    }
}
