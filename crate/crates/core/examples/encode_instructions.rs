//! Decode x86-64 instructions and look at their 406-wide bit encodings.
//!
//! ```text
//! cargo run --example encode_instructions
//! ```

use malgraph::x86::{
    decode_hex, encode_instr, encode_node, DIM, DISP, IMM, MODRM, OPCODE, PREFIX, PRESENCE, SIB,
};

pub fn run_example() -> malgraph::Result<()> {
    let blocks = [
        ("presence", PRESENCE),
        ("prefix", PREFIX),
        ("opcode", OPCODE),
        ("modrm", MODRM),
        ("sib", SIB),
        ("disp", DISP),
        ("imm", IMM),
    ];
    for hex in [
        "90",
        "4883EC20",
        "8B4424F8",
        "648B042530000000",
        "48B8EFBEADDEEFBEADDE",
        "0F05",
    ] {
        match decode_hex(hex) {
            Ok(instr) => {
                let v = encode_instr(&instr);
                let set: Vec<String> = blocks
                    .iter()
                    .map(|(name, r)| format!("{name}={}", v.block(r.clone()).iter().sum::<f64>()))
                    .collect();
                println!(
                    "{hex:<22} opcode {:02X}  bits set: {}",
                    instr.opcode,
                    set.join(" ")
                );
            }
            Err(e) => println!("{hex:<22} rejected: {e}"),
        }
    }

    let node = encode_node(&["55", "4889E5", "C3"]).expect("prologue decodes");
    assert_eq!(node.values.len(), DIM);
    println!(
        "node of {} instructions: mean vector, {} non-zero entries",
        node.instr_count,
        node.values.iter().filter(|x| **x != 0.0).count()
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> malgraph::Result<()> {
    run_example()
}
