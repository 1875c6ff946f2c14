use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use rand::Rng as _;
use serde::Deserialize;

use super::FeatureMatrix;
use crate::error::{Error, Result};
use crate::seed::stream_rng;

/// Width of precomputed sentence embeddings for function names.
pub const FNE_DIM: usize = 384;

/// Precomputed function-name embeddings, one JSON object per line:
/// `{"name": "CreateFileW", "vector": [384 numbers]}`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingTable {
    vectors: HashMap<String, Vec<f64>>,
}

#[derive(Deserialize)]
struct TableLine {
    name: String,
    vector: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FneReport {
    pub found: usize,
    pub fallback: usize,
}

impl EmbeddingTable {
    pub fn from_pairs<I>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Vec<f64>)>,
    {
        let mut vectors = HashMap::new();
        for (name, v) in pairs {
            if v.len() != FNE_DIM {
                return Err(Error::BadTable(format!(
                    "`{name}` has {} entries, expected {FNE_DIM}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::BadTable(format!("`{name}` has a non-finite entry")));
            }
            vectors.insert(name, v);
        }
        Ok(EmbeddingTable { vectors })
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::Parse {
                line: i + 1,
                reason: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let row: TableLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                reason: e.to_string(),
            })?;
            pairs.push((row.name, row.vector));
        }
        Self::from_pairs(pairs)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(std::io::BufReader::new(f))
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.vectors.get(name).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

/// Pseudo-embedding for names missing from the table: uniform in [-1, 1]^384,
/// drawn from a stream keyed by the seed and the name itself.
pub fn fallback_embedding(name: &str, seed: u64) -> Vec<f64> {
    let mut rng = stream_rng(seed, &format!("fne/{name}"));
    (0..FNE_DIM).map(|_| rng.gen_range(-1.0..=1.0)).collect()
}

/// Looks up each name, falling back to [`fallback_embedding`] and counting misses.
pub fn ingest_fne<S: AsRef<str>>(
    names: &[S],
    table: &EmbeddingTable,
    seed: u64,
) -> Result<(FeatureMatrix, FneReport)> {
    let mut report = FneReport::default();
    let rows: Vec<Vec<f64>> = names
        .iter()
        .map(|n| match table.get(n.as_ref()) {
            Some(v) => {
                report.found += 1;
                v.to_vec()
            }
            None => {
                report.fallback += 1;
                fallback_embedding(n.as_ref(), seed)
            }
        })
        .collect();
    Ok((FeatureMatrix::from_rows(&rows, FNE_DIM)?, report))
}
