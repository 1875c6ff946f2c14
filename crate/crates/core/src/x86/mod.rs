//! Table-driven decoding of a one-byte-opcode subset of x86-64 and the
//! 406-dimensional rule-based instruction encoding built on top of it.
//!
//! Covered: mov, lea, add/or/and/sub/xor/cmp/test (including the 0x80-0x83
//! immediate group and F6/F7 /0), push/pop, inc/dec (FE/FF), jmp/jcc rel8/rel32,
//! call rel32 and FF indirect forms, ret, leave, nop, int3, hlt. Two-byte (0x0F)
//! opcodes, VEX/EVEX and REP prefixes report [`DecodeError::UnknownOpcode`].

mod encode;

use thiserror::Error;

pub use encode::{
    encode_instr, encode_node, encode_node_with, Aggregation, EncodedVector406, NodeFeature406,
    DIM, DISP, IMM, MODRM, OPCODE, PREFIX, PRESENCE, SIB,
};

/// Longest legal x86 instruction.
pub const MAX_INSTR_LEN: usize = 15;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("empty instruction")]
    Empty,
    #[error("unknown opcode {0:#04x}")]
    UnknownOpcode(u8),
    #[error("truncated instruction: needed {needed} bytes, have {have}")]
    TruncatedInstruction { needed: usize, have: usize },
    #[error("{extra} trailing bytes after a {consumed}-byte instruction")]
    TrailingBytes { consumed: usize, extra: usize },
    #[error("instruction longer than {MAX_INSTR_LEN} bytes")]
    TooLong,
    #[error("malformed hex string")]
    BadHex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Segment {
    #[default]
    None,
    Es,
    Cs,
    Ss,
    Ds,
    Fs,
    Gs,
}

impl Segment {
    fn from_prefix(byte: u8) -> Option<Segment> {
        Some(match byte {
            0x26 => Segment::Es,
            0x2E => Segment::Cs,
            0x36 => Segment::Ss,
            0x3E => Segment::Ds,
            0x64 => Segment::Fs,
            0x65 => Segment::Gs,
            _ => return None,
        })
    }

    /// Slot in the six-way one-hot, `None` for no override.
    pub fn slot(self) -> Option<usize> {
        match self {
            Segment::None => None,
            Segment::Es => Some(0),
            Segment::Cs => Some(1),
            Segment::Ss => Some(2),
            Segment::Ds => Some(3),
            Segment::Fs => Some(4),
            Segment::Gs => Some(5),
        }
    }
}

/// Decoded instruction parts. `disp` and `imm` keep their raw little-endian bytes.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct InstrComponents {
    pub seg_override: Segment,
    pub op_size_override: bool,
    pub addr_size_override: bool,
    pub lock: bool,
    pub opcode: u8,
    pub modrm: Option<u8>,
    pub sib: Option<u8>,
    pub disp: Option<Vec<u8>>,
    pub imm: Option<Vec<u8>>,
}

impl InstrComponents {
    pub fn has_prefix(&self) -> bool {
        self.seg_override != Segment::None
            || self.op_size_override
            || self.addr_size_override
            || self.lock
    }

    /// Checks the structural invariants (SIB needs ModRM, field widths).
    pub fn is_valid(&self) -> bool {
        (self.sib.is_none() || self.modrm.is_some())
            && self
                .disp
                .as_ref()
                .is_none_or(|d| matches!(d.len(), 1 | 2 | 4))
            && self
                .imm
                .as_ref()
                .is_none_or(|i| matches!(i.len(), 1 | 2 | 4 | 8))
    }
}

/// Immediate operand width for an opcode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Imm {
    None,
    /// One byte.
    B,
    /// Two bytes (ret imm16).
    W,
    /// Four bytes, two with 0x66.
    Z,
    /// Four bytes, two with 0x66, eight with REX.W (mov r64, imm64).
    V,
    /// Only for F6/F7 when ModRM.reg selects TEST.
    TestB,
    TestZ,
}

#[derive(Debug, Clone, Copy)]
struct Format {
    modrm: bool,
    imm: Imm,
}

const fn fmt(modrm: bool, imm: Imm) -> Option<Format> {
    Some(Format { modrm, imm })
}

fn opcode_format(op: u8) -> Option<Format> {
    match op {
        // add, or, and, sub, xor, cmp: r/m forms then AL/eAX immediate forms
        0x00..=0x03 | 0x08..=0x0B | 0x20..=0x23 | 0x28..=0x2B | 0x30..=0x33 | 0x38..=0x3B => {
            fmt(true, Imm::None)
        }
        0x04 | 0x0C | 0x24 | 0x2C | 0x34 | 0x3C => fmt(false, Imm::B),
        0x05 | 0x0D | 0x25 | 0x2D | 0x35 | 0x3D => fmt(false, Imm::Z),
        0x50..=0x5F => fmt(false, Imm::None),
        0x68 => fmt(false, Imm::Z),
        0x6A => fmt(false, Imm::B),
        0x70..=0x7F => fmt(false, Imm::B),
        0x80 | 0x83 => fmt(true, Imm::B),
        0x81 => fmt(true, Imm::Z),
        0x84 | 0x85 => fmt(true, Imm::None),
        0x88..=0x8B | 0x8D | 0x8F => fmt(true, Imm::None),
        0x90 => fmt(false, Imm::None),
        0xA8 => fmt(false, Imm::B),
        0xA9 => fmt(false, Imm::Z),
        0xB0..=0xB7 => fmt(false, Imm::B),
        0xB8..=0xBF => fmt(false, Imm::V),
        0xC2 => fmt(false, Imm::W),
        0xC3 | 0xC9 | 0xCC | 0xF4 => fmt(false, Imm::None),
        0xC6 => fmt(true, Imm::B),
        0xC7 => fmt(true, Imm::Z),
        0xE8 | 0xE9 => fmt(false, Imm::Z),
        0xEB => fmt(false, Imm::B),
        0xF6 => fmt(true, Imm::TestB),
        0xF7 => fmt(true, Imm::TestZ),
        0xFE | 0xFF => fmt(true, Imm::None),
        _ => None,
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], DecodeError> {
        let end = self.pos + n;
        if end > MAX_INSTR_LEN {
            return Err(DecodeError::TooLong);
        }
        if end > self.bytes.len() {
            return Err(DecodeError::TruncatedInstruction {
                needed: end,
                have: self.bytes.len(),
            });
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn byte(&mut self) -> Result<u8, DecodeError> {
        self.take(1).map(|b| b[0])
    }
}

/// Decodes one instruction from the front of `bytes`, returning its parts and length.
pub fn decode_prefix(bytes: &[u8]) -> Result<(InstrComponents, usize), DecodeError> {
    if bytes.is_empty() {
        return Err(DecodeError::Empty);
    }
    let mut cur = Cursor { bytes, pos: 0 };
    let mut c = InstrComponents::default();
    let mut rex_w = false;
    let opcode = loop {
        let b = cur.byte()?;
        if let Some(seg) = Segment::from_prefix(b) {
            c.seg_override = seg;
            rex_w = false;
        } else if b == 0x66 {
            c.op_size_override = true;
            rex_w = false;
        } else if b == 0x67 {
            c.addr_size_override = true;
            rex_w = false;
        } else if b == 0xF0 {
            c.lock = true;
            rex_w = false;
        } else if (0x40..=0x4F).contains(&b) {
            // REX only counts when it directly precedes the opcode
            rex_w = b & 0x08 != 0;
        } else {
            break b;
        }
    };
    c.opcode = opcode;
    let format = opcode_format(opcode).ok_or(DecodeError::UnknownOpcode(opcode))?;

    if format.modrm {
        let modrm = cur.byte()?;
        c.modrm = Some(modrm);
        let (mode, reg, rm) = (modrm >> 6, (modrm >> 3) & 7, modrm & 7);
        match (opcode, reg) {
            (0xFE, 2..=7) | (0xFF, 7) | (0x8F, 1..=7) => {
                return Err(DecodeError::UnknownOpcode(opcode))
            }
            _ => {}
        }
        let mut disp_len = match mode {
            0 if rm == 5 => 4,
            1 => 1,
            2 => 4,
            _ => 0,
        };
        if mode != 3 && rm == 4 {
            let sib = cur.byte()?;
            c.sib = Some(sib);
            if mode == 0 && sib & 7 == 5 {
                disp_len = 4;
            }
        }
        if disp_len > 0 {
            c.disp = Some(cur.take(disp_len)?.to_vec());
        }
    }

    let z = if c.op_size_override { 2 } else { 4 };
    let test_form = c.modrm.is_some_and(|m| (m >> 3) & 7 <= 1);
    let imm_len = match format.imm {
        Imm::None => 0,
        Imm::B => 1,
        Imm::W => 2,
        Imm::Z => match opcode {
            // near branches ignore the operand-size prefix in 64-bit mode
            0xE8 | 0xE9 => 4,
            _ => z,
        },
        Imm::V if rex_w => 8,
        Imm::V => z,
        Imm::TestB if test_form => 1,
        Imm::TestZ if test_form => z,
        Imm::TestB | Imm::TestZ => 0,
    };
    if imm_len > 0 {
        c.imm = Some(cur.take(imm_len)?.to_vec());
    }
    Ok((c, cur.pos))
}

/// Decodes exactly one instruction; trailing bytes are an error.
pub fn decode_instr(bytes: &[u8]) -> Result<InstrComponents, DecodeError> {
    let (c, used) = decode_prefix(bytes)?;
    if used != bytes.len() {
        return Err(DecodeError::TrailingBytes {
            consumed: used,
            extra: bytes.len() - used,
        });
    }
    Ok(c)
}

pub fn decode_hex(hex: &str) -> Result<InstrComponents, DecodeError> {
    decode_instr(&parse_hex(hex).ok_or(DecodeError::BadHex)?)
}

/// Parses a non-empty, even-length hex string (case-insensitive, no separators).
pub fn parse_hex(hex: &str) -> Option<Vec<u8>> {
    let hex = hex.trim();
    if hex.is_empty() || !hex.len().is_multiple_of(2) || !hex.is_ascii() {
        return None;
    }
    (0..hex.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&hex[i..i + 2], 16).ok())
        .collect()
}
