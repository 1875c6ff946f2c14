use std::ops::Range;

use super::{decode_instr, parse_hex, DecodeError, InstrComponents};

/// Block ranges inside the 406-wide vector.
pub const PRESENCE: Range<usize> = 0..5;
pub const PREFIX: Range<usize> = 5..14;
pub const OPCODE: Range<usize> = 14..270;
pub const MODRM: Range<usize> = 270..290;
pub const SIB: Range<usize> = 290..310;
pub const DISP: Range<usize> = 310..342;
pub const IMM: Range<usize> = 342..406;
pub const DIM: usize = 406;

const PRESENT_PREFIX: usize = 0;
const PRESENT_MODRM: usize = 1;
const PRESENT_SIB: usize = 2;
const PRESENT_DISP: usize = 3;
const PRESENT_IMM: usize = 4;

/// Rule-based encoding of a single instruction.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedVector406(pub Vec<f64>);

impl EncodedVector406 {
    pub fn block(&self, range: Range<usize>) -> &[f64] {
        &self.0[range]
    }
}

/// Aggregate of a node's instruction encodings.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeFeature406 {
    pub values: Vec<f64>,
    pub instr_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Mean,
    Sum,
}

/// Writes `mod/reg/rm` (or `scale/index/base`) as 4 + 8 + 8 one-hots.
fn split_byte(v: &mut [f64], byte: u8) {
    v[(byte >> 6) as usize] = 1.0;
    v[4 + ((byte >> 3) & 7) as usize] = 1.0;
    v[12 + (byte & 7) as usize] = 1.0;
}

/// Little-endian bytes laid out LSB-first; shorter fields are zero-extended.
fn bits(v: &mut [f64], bytes: &[u8]) {
    for (i, b) in bytes.iter().enumerate() {
        for bit in 0..8 {
            if b >> bit & 1 == 1 {
                v[i * 8 + bit] = 1.0;
            }
        }
    }
}

pub fn encode_instr(c: &InstrComponents) -> EncodedVector406 {
    let mut v = vec![0.0; DIM];
    let presence = &mut v[PRESENCE];
    presence[PRESENT_PREFIX] = f64::from(u8::from(c.has_prefix()));
    presence[PRESENT_MODRM] = f64::from(u8::from(c.modrm.is_some()));
    presence[PRESENT_SIB] = f64::from(u8::from(c.sib.is_some()));
    presence[PRESENT_DISP] = f64::from(u8::from(c.disp.is_some()));
    presence[PRESENT_IMM] = f64::from(u8::from(c.imm.is_some()));

    let prefix = &mut v[PREFIX];
    if let Some(slot) = c.seg_override.slot() {
        prefix[slot] = 1.0;
    }
    prefix[6] = f64::from(u8::from(c.op_size_override));
    prefix[7] = f64::from(u8::from(c.addr_size_override));
    prefix[8] = f64::from(u8::from(c.lock));

    v[OPCODE.start + c.opcode as usize] = 1.0;
    if let Some(m) = c.modrm {
        split_byte(&mut v[MODRM], m);
    }
    if let Some(s) = c.sib {
        split_byte(&mut v[SIB], s);
    }
    if let Some(d) = &c.disp {
        bits(&mut v[DISP], &d[..d.len().min(4)]);
    }
    if let Some(i) = &c.imm {
        bits(&mut v[IMM], &i[..i.len().min(8)]);
    }
    EncodedVector406(v)
}

/// Decodes and encodes every instruction, returning the element-wise mean.
pub fn encode_node<S: AsRef<str>>(instrs: &[S]) -> Result<NodeFeature406, (usize, DecodeError)> {
    encode_node_with(instrs, Aggregation::Mean)
}

pub fn encode_node_with<S: AsRef<str>>(
    instrs: &[S],
    agg: Aggregation,
) -> Result<NodeFeature406, (usize, DecodeError)> {
    if instrs.is_empty() {
        return Err((0, DecodeError::Empty));
    }
    let mut acc = vec![0.0; DIM];
    for (i, hex) in instrs.iter().enumerate() {
        let bytes = parse_hex(hex.as_ref()).ok_or((i, DecodeError::BadHex))?;
        let c = decode_instr(&bytes).map_err(|e| (i, e))?;
        for (a, x) in acc.iter_mut().zip(encode_instr(&c).0) {
            *a += x;
        }
    }
    if agg == Aggregation::Mean {
        let n = instrs.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
    }
    Ok(NodeFeature406 {
        values: acc,
        instr_count: instrs.len(),
    })
}
