//! Constant materialization for the `li` pseudo-instruction.
//!
//! Follows the usual RV64 recipe: `lui`/`addiw` for 32-bit values, and for
//! wider values a recursive prefix followed by `slli` and `addi`.

use super::expr::{hi20, lo12};
use crate::isa::{Instruction, Op};

/// Instruction sequence leaving `value` in `rd`. Never empty.
pub fn li_sequence(rd: u8, value: i64) -> Vec<Instruction> {
    let mut out = Vec::new();
    build(rd, value, &mut out);
    out
}

fn build(rd: u8, value: i64, out: &mut Vec<Instruction>) {
    if i64::from(value as i32) == value {
        let hi = hi20(value);
        let lo = lo12(value);
        if hi != 0 {
            let upper = i64::from(((hi << 12) as u32) as i32);
            out.push(Instruction::new(Op::Lui, rd, 0, 0, upper, 0));
            if lo != 0 {
                out.push(Instruction::new(Op::Addiw, rd, rd, 0, lo, 0));
            }
        } else {
            out.push(Instruction::new(Op::Addi, rd, 0, 0, lo, 0));
        }
        return;
    }
    let lo = lo12(value);
    // Upper 52 bits, rounded so the signed low part can be added back.
    let hi52_raw = (value as u64).wrapping_add(0x800) >> 12;
    let hi52 = ((hi52_raw << 12) as i64) >> 12;
    let tz = hi52.trailing_zeros();
    let shift = 12 + tz;
    build(rd, hi52 >> tz, out);
    out.push(Instruction::new(Op::Slli, rd, rd, 0, i64::from(shift), 0));
    if lo != 0 {
        out.push(Instruction::new(Op::Addi, rd, rd, 0, lo, 0));
    }
}
