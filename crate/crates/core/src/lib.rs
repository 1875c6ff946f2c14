//! Graph-based malware detection toolkit: attributed CFG/FCG graphs, graph
//! reduction, x86-64 instruction embedding, a GCN classifier and edge-mask
//! explanations.

pub mod error;
pub mod explain;
pub mod features;
pub mod graph;
pub mod nn;
pub mod pipeline;
pub mod reduce;
pub mod seed;
pub mod synth;
pub mod x86;

pub use error::{Error, Result};
pub use graph::{AttrGraph, Label, NodeRecord, Payload};
