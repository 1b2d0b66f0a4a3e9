//! RV64I + Zicsr instruction model, plus the custom-0 `dasicscall.jr`.
//!
//! Decoding is strict: a word decodes only if [`encode`] would reproduce it
//! bit for bit, so `encode(decode(w)?) == w` holds for every accepted word.

mod regs;

pub use regs::{parse_reg, reg_name, RegisterFile};

use std::fmt;

use thiserror::Error;

const OPC_LOAD: u32 = 0b000_0011;
const OPC_CUSTOM0: u32 = 0b000_1011;
const OPC_MISC_MEM: u32 = 0b000_1111;
const OPC_OP_IMM: u32 = 0b001_0011;
const OPC_AUIPC: u32 = 0b001_0111;
const OPC_OP_IMM_32: u32 = 0b001_1011;
const OPC_STORE: u32 = 0b010_0011;
const OPC_OP: u32 = 0b011_0011;
const OPC_LUI: u32 = 0b011_0111;
const OPC_OP_32: u32 = 0b011_1011;
const OPC_BRANCH: u32 = 0b110_0011;
const OPC_JALR: u32 = 0b110_0111;
const OPC_JAL: u32 = 0b110_1111;
const OPC_SYSTEM: u32 = 0b111_0011;

const WORD_ECALL: u32 = 0x0000_0073;
const WORD_EBREAK: u32 = 0x0010_0073;
const WORD_URET: u32 = 0x0020_0073;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("illegal or unsupported instruction word {word:#010x}")]
pub struct DecodeError {
    pub word: u32,
}

/// Every supported instruction form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Op {
    Lui,
    Auipc,
    Jal,
    Jalr,
    Beq,
    Bne,
    Blt,
    Bge,
    Bltu,
    Bgeu,
    Lb,
    Lh,
    Lw,
    Ld,
    Lbu,
    Lhu,
    Lwu,
    Sb,
    Sh,
    Sw,
    Sd,
    Addi,
    Slti,
    Sltiu,
    Xori,
    Ori,
    Andi,
    Slli,
    Srli,
    Srai,
    Add,
    Sub,
    Sll,
    Slt,
    Sltu,
    Xor,
    Srl,
    Sra,
    Or,
    And,
    Addiw,
    Slliw,
    Srliw,
    Sraiw,
    Addw,
    Subw,
    Sllw,
    Srlw,
    Sraw,
    Fence,
    Ecall,
    Ebreak,
    Uret,
    Csrrw,
    Csrrs,
    Csrrc,
    Csrrwi,
    Csrrsi,
    Csrrci,
    DasicscallJr,
}

impl Op {
    pub const ALL: [Op; 60] = [
        Op::Lui,
        Op::Auipc,
        Op::Jal,
        Op::Jalr,
        Op::Beq,
        Op::Bne,
        Op::Blt,
        Op::Bge,
        Op::Bltu,
        Op::Bgeu,
        Op::Lb,
        Op::Lh,
        Op::Lw,
        Op::Ld,
        Op::Lbu,
        Op::Lhu,
        Op::Lwu,
        Op::Sb,
        Op::Sh,
        Op::Sw,
        Op::Sd,
        Op::Addi,
        Op::Slti,
        Op::Sltiu,
        Op::Xori,
        Op::Ori,
        Op::Andi,
        Op::Slli,
        Op::Srli,
        Op::Srai,
        Op::Add,
        Op::Sub,
        Op::Sll,
        Op::Slt,
        Op::Sltu,
        Op::Xor,
        Op::Srl,
        Op::Sra,
        Op::Or,
        Op::And,
        Op::Addiw,
        Op::Slliw,
        Op::Srliw,
        Op::Sraiw,
        Op::Addw,
        Op::Subw,
        Op::Sllw,
        Op::Srlw,
        Op::Sraw,
        Op::Fence,
        Op::Ecall,
        Op::Ebreak,
        Op::Uret,
        Op::Csrrw,
        Op::Csrrs,
        Op::Csrrc,
        Op::Csrrwi,
        Op::Csrrsi,
        Op::Csrrci,
        Op::DasicscallJr,
    ];

    pub fn mnemonic(self) -> &'static str {
        match self {
            Op::Lui => "lui",
            Op::Auipc => "auipc",
            Op::Jal => "jal",
            Op::Jalr => "jalr",
            Op::Beq => "beq",
            Op::Bne => "bne",
            Op::Blt => "blt",
            Op::Bge => "bge",
            Op::Bltu => "bltu",
            Op::Bgeu => "bgeu",
            Op::Lb => "lb",
            Op::Lh => "lh",
            Op::Lw => "lw",
            Op::Ld => "ld",
            Op::Lbu => "lbu",
            Op::Lhu => "lhu",
            Op::Lwu => "lwu",
            Op::Sb => "sb",
            Op::Sh => "sh",
            Op::Sw => "sw",
            Op::Sd => "sd",
            Op::Addi => "addi",
            Op::Slti => "slti",
            Op::Sltiu => "sltiu",
            Op::Xori => "xori",
            Op::Ori => "ori",
            Op::Andi => "andi",
            Op::Slli => "slli",
            Op::Srli => "srli",
            Op::Srai => "srai",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Sll => "sll",
            Op::Slt => "slt",
            Op::Sltu => "sltu",
            Op::Xor => "xor",
            Op::Srl => "srl",
            Op::Sra => "sra",
            Op::Or => "or",
            Op::And => "and",
            Op::Addiw => "addiw",
            Op::Slliw => "slliw",
            Op::Srliw => "srliw",
            Op::Sraiw => "sraiw",
            Op::Addw => "addw",
            Op::Subw => "subw",
            Op::Sllw => "sllw",
            Op::Srlw => "srlw",
            Op::Sraw => "sraw",
            Op::Fence => "fence",
            Op::Ecall => "ecall",
            Op::Ebreak => "ebreak",
            Op::Uret => "uret",
            Op::Csrrw => "csrrw",
            Op::Csrrs => "csrrs",
            Op::Csrrc => "csrrc",
            Op::Csrrwi => "csrrwi",
            Op::Csrrsi => "csrrsi",
            Op::Csrrci => "csrrci",
            Op::DasicscallJr => "dasicscall.jr",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<Op> {
        Op::ALL.iter().copied().find(|op| op.mnemonic() == s)
    }

    pub fn format(self) -> Format {
        use Op::*;
        match self {
            Lui | Auipc => Format::U,
            Jal => Format::J,
            Jalr | Lb | Lh | Lw | Ld | Lbu | Lhu | Lwu | Addi | Slti | Sltiu | Xori | Ori
            | Andi | Addiw => Format::I,
            Slli | Srli | Srai | Slliw | Srliw | Sraiw => Format::Shift,
            Beq | Bne | Blt | Bge | Bltu | Bgeu => Format::B,
            Sb | Sh | Sw | Sd => Format::S,
            Add | Sub | Sll | Slt | Sltu | Xor | Srl | Sra | Or | And | Addw | Subw | Sllw
            | Srlw | Sraw => Format::R,
            Fence => Format::Fence,
            Ecall | Ebreak | Uret => Format::System,
            Csrrw | Csrrs | Csrrc => Format::Csr,
            Csrrwi | Csrrsi | Csrrci => Format::CsrImm,
            DasicscallJr => Format::Dasicscall,
        }
    }

    pub fn is_load(self) -> bool {
        matches!(
            self,
            Op::Lb | Op::Lh | Op::Lw | Op::Ld | Op::Lbu | Op::Lhu | Op::Lwu
        )
    }

    pub fn is_store(self) -> bool {
        matches!(self, Op::Sb | Op::Sh | Op::Sw | Op::Sd)
    }

    pub fn is_branch(self) -> bool {
        self.format() == Format::B
    }

    pub fn is_csr(self) -> bool {
        matches!(self.format(), Format::Csr | Format::CsrImm)
    }

    /// Access width in bytes for loads and stores.
    pub fn access_width(self) -> Option<u8> {
        match self {
            Op::Lb | Op::Lbu | Op::Sb => Some(1),
            Op::Lh | Op::Lhu | Op::Sh => Some(2),
            Op::Lw | Op::Lwu | Op::Sw => Some(4),
            Op::Ld | Op::Sd => Some(8),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    R,
    I,
    Shift,
    S,
    B,
    U,
    J,
    Fence,
    System,
    Csr,
    CsrImm,
    Dasicscall,
}

/// A decoded instruction.
///
/// `imm` is the sign-extended immediate; for shifts it holds the shift
/// amount, for `fence` the raw bits [31:20], and for CSR immediate forms the
/// 5-bit `zimm`. `csr` is meaningful only for CSR forms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Instruction {
    pub op: Op,
    pub rd: u8,
    pub rs1: u8,
    pub rs2: u8,
    pub imm: i64,
    pub csr: u16,
    pub raw: u32,
}

impl Instruction {
    /// Builds an instruction from fields and fills `raw` by encoding it.
    pub fn new(op: Op, rd: u8, rs1: u8, rs2: u8, imm: i64, csr: u16) -> Instruction {
        let mut inst = Instruction {
            op,
            rd,
            rs1,
            rs2,
            imm,
            csr,
            raw: 0,
        };
        inst.raw = encode(&inst);
        inst
    }
}

fn bits(word: u32, hi: u32, lo: u32) -> u32 {
    (word >> lo) & ((1u32 << (hi - lo + 1)) - 1)
}

fn sext(value: u64, width: u32) -> i64 {
    let shift = 64 - width;
    ((value << shift) as i64) >> shift
}

pub fn decode(word: u32) -> Result<Instruction, DecodeError> {
    let err = DecodeError { word };
    let opcode = bits(word, 6, 0);
    let rd = bits(word, 11, 7) as u8;
    let funct3 = bits(word, 14, 12);
    let rs1 = bits(word, 19, 15) as u8;
    let rs2 = bits(word, 24, 20) as u8;
    let funct7 = bits(word, 31, 25);
    let i_imm = sext(u64::from(word >> 20), 12);

    let mk = |op: Op, rd: u8, rs1: u8, rs2: u8, imm: i64, csr: u16| Instruction {
        op,
        rd,
        rs1,
        rs2,
        imm,
        csr,
        raw: word,
    };

    let inst = match opcode {
        OPC_LUI | OPC_AUIPC => {
            let op = if opcode == OPC_LUI {
                Op::Lui
            } else {
                Op::Auipc
            };
            mk(op, rd, 0, 0, sext(u64::from(word & 0xFFFF_F000), 32), 0)
        }
        OPC_JAL => {
            let imm = (bits(word, 31, 31) << 20)
                | (bits(word, 19, 12) << 12)
                | (bits(word, 20, 20) << 11)
                | (bits(word, 30, 21) << 1);
            mk(Op::Jal, rd, 0, 0, sext(u64::from(imm), 21), 0)
        }
        OPC_JALR if funct3 == 0 => mk(Op::Jalr, rd, rs1, 0, i_imm, 0),
        OPC_BRANCH => {
            let op = match funct3 {
                0b000 => Op::Beq,
                0b001 => Op::Bne,
                0b100 => Op::Blt,
                0b101 => Op::Bge,
                0b110 => Op::Bltu,
                0b111 => Op::Bgeu,
                _ => return Err(err),
            };
            let imm = (bits(word, 31, 31) << 12)
                | (bits(word, 7, 7) << 11)
                | (bits(word, 30, 25) << 5)
                | (bits(word, 11, 8) << 1);
            mk(op, 0, rs1, rs2, sext(u64::from(imm), 13), 0)
        }
        OPC_LOAD => {
            let op = match funct3 {
                0b000 => Op::Lb,
                0b001 => Op::Lh,
                0b010 => Op::Lw,
                0b011 => Op::Ld,
                0b100 => Op::Lbu,
                0b101 => Op::Lhu,
                0b110 => Op::Lwu,
                _ => return Err(err),
            };
            mk(op, rd, rs1, 0, i_imm, 0)
        }
        OPC_STORE => {
            let op = match funct3 {
                0b000 => Op::Sb,
                0b001 => Op::Sh,
                0b010 => Op::Sw,
                0b011 => Op::Sd,
                _ => return Err(err),
            };
            let imm = (bits(word, 31, 25) << 5) | bits(word, 11, 7);
            mk(op, 0, rs1, rs2, sext(u64::from(imm), 12), 0)
        }
        OPC_OP_IMM => {
            let op = match funct3 {
                0b000 => Op::Addi,
                0b010 => Op::Slti,
                0b011 => Op::Sltiu,
                0b100 => Op::Xori,
                0b110 => Op::Ori,
                0b111 => Op::Andi,
                0b001 | 0b101 => {
                    let funct6 = bits(word, 31, 26);
                    let shamt = i64::from(bits(word, 25, 20));
                    let op = match (funct3, funct6) {
                        (0b001, 0) => Op::Slli,
                        (0b101, 0) => Op::Srli,
                        (0b101, 0b01_0000) => Op::Srai,
                        _ => return Err(err),
                    };
                    return Ok(mk(op, rd, rs1, 0, shamt, 0));
                }
                _ => return Err(err),
            };
            mk(op, rd, rs1, 0, i_imm, 0)
        }
        OPC_OP_IMM_32 => match funct3 {
            0b000 => mk(Op::Addiw, rd, rs1, 0, i_imm, 0),
            0b001 | 0b101 => {
                let op = match (funct3, funct7) {
                    (0b001, 0) => Op::Slliw,
                    (0b101, 0) => Op::Srliw,
                    (0b101, 0b010_0000) => Op::Sraiw,
                    _ => return Err(err),
                };
                mk(op, rd, rs1, 0, i64::from(rs2), 0)
            }
            _ => return Err(err),
        },
        OPC_OP => {
            let op = match (funct7, funct3) {
                (0, 0b000) => Op::Add,
                (0b010_0000, 0b000) => Op::Sub,
                (0, 0b001) => Op::Sll,
                (0, 0b010) => Op::Slt,
                (0, 0b011) => Op::Sltu,
                (0, 0b100) => Op::Xor,
                (0, 0b101) => Op::Srl,
                (0b010_0000, 0b101) => Op::Sra,
                (0, 0b110) => Op::Or,
                (0, 0b111) => Op::And,
                _ => return Err(err),
            };
            mk(op, rd, rs1, rs2, 0, 0)
        }
        OPC_OP_32 => {
            let op = match (funct7, funct3) {
                (0, 0b000) => Op::Addw,
                (0b010_0000, 0b000) => Op::Subw,
                (0, 0b001) => Op::Sllw,
                (0, 0b101) => Op::Srlw,
                (0b010_0000, 0b101) => Op::Sraw,
                _ => return Err(err),
            };
            mk(op, rd, rs1, rs2, 0, 0)
        }
        OPC_MISC_MEM if funct3 == 0 => mk(Op::Fence, rd, rs1, 0, i64::from(word >> 20), 0),
        OPC_SYSTEM => match funct3 {
            0 => match word {
                WORD_ECALL => mk(Op::Ecall, 0, 0, 0, 0, 0),
                WORD_EBREAK => mk(Op::Ebreak, 0, 0, 0, 0, 0),
                WORD_URET => mk(Op::Uret, 0, 0, 0, 0, 0),
                _ => return Err(err),
            },
            0b001..=0b011 => {
                let op = [Op::Csrrw, Op::Csrrs, Op::Csrrc][funct3 as usize - 1];
                mk(op, rd, rs1, 0, 0, (word >> 20) as u16)
            }
            0b101..=0b111 => {
                let op = [Op::Csrrwi, Op::Csrrsi, Op::Csrrci][funct3 as usize - 5];
                mk(op, rd, 0, 0, i64::from(rs1), (word >> 20) as u16)
            }
            _ => return Err(err),
        },
        OPC_CUSTOM0 if funct3 == 0 && rd == 0 && word >> 20 == 0 => {
            mk(Op::DasicscallJr, 0, rs1, 0, 0, 0)
        }
        _ => return Err(err),
    };
    Ok(inst)
}

/// Encodes the instruction fields (ignoring `raw`).
pub fn encode(inst: &Instruction) -> u32 {
    let rd = u32::from(inst.rd & 31) << 7;
    let rs1 = u32::from(inst.rs1 & 31) << 15;
    let rs2 = u32::from(inst.rs2 & 31) << 20;
    let imm = inst.imm as u64 as u32;
    let f3 = |f: u32| f << 12;
    let i_type = |opc: u32, funct3: u32| ((imm & 0xFFF) << 20) | rs1 | f3(funct3) | rd | opc;
    let r_type =
        |opc: u32, funct7: u32, funct3: u32| (funct7 << 25) | rs2 | rs1 | f3(funct3) | rd | opc;
    let s_type = |funct3: u32| {
        (((imm >> 5) & 0x7F) << 25) | rs2 | rs1 | f3(funct3) | ((imm & 0x1F) << 7) | OPC_STORE
    };
    let b_type = |funct3: u32| {
        (((imm >> 12) & 1) << 31)
            | (((imm >> 5) & 0x3F) << 25)
            | rs2
            | rs1
            | f3(funct3)
            | (((imm >> 1) & 0xF) << 8)
            | (((imm >> 11) & 1) << 7)
            | OPC_BRANCH
    };
    let shift = |opc: u32, hi: u32, funct3: u32, mask: u32| {
        (hi << 26) | ((imm & mask) << 20) | rs1 | f3(funct3) | rd | opc
    };
    let csr = u32::from(inst.csr & 0xFFF) << 20;

    match inst.op {
        Op::Lui => (imm & 0xFFFF_F000) | rd | OPC_LUI,
        Op::Auipc => (imm & 0xFFFF_F000) | rd | OPC_AUIPC,
        Op::Jal => {
            (((imm >> 20) & 1) << 31)
                | (((imm >> 1) & 0x3FF) << 21)
                | (((imm >> 11) & 1) << 20)
                | (((imm >> 12) & 0xFF) << 12)
                | rd
                | OPC_JAL
        }
        Op::Jalr => i_type(OPC_JALR, 0),
        Op::Beq => b_type(0b000),
        Op::Bne => b_type(0b001),
        Op::Blt => b_type(0b100),
        Op::Bge => b_type(0b101),
        Op::Bltu => b_type(0b110),
        Op::Bgeu => b_type(0b111),
        Op::Lb => i_type(OPC_LOAD, 0b000),
        Op::Lh => i_type(OPC_LOAD, 0b001),
        Op::Lw => i_type(OPC_LOAD, 0b010),
        Op::Ld => i_type(OPC_LOAD, 0b011),
        Op::Lbu => i_type(OPC_LOAD, 0b100),
        Op::Lhu => i_type(OPC_LOAD, 0b101),
        Op::Lwu => i_type(OPC_LOAD, 0b110),
        Op::Sb => s_type(0b000),
        Op::Sh => s_type(0b001),
        Op::Sw => s_type(0b010),
        Op::Sd => s_type(0b011),
        Op::Addi => i_type(OPC_OP_IMM, 0b000),
        Op::Slti => i_type(OPC_OP_IMM, 0b010),
        Op::Sltiu => i_type(OPC_OP_IMM, 0b011),
        Op::Xori => i_type(OPC_OP_IMM, 0b100),
        Op::Ori => i_type(OPC_OP_IMM, 0b110),
        Op::Andi => i_type(OPC_OP_IMM, 0b111),
        Op::Slli => shift(OPC_OP_IMM, 0, 0b001, 0x3F),
        Op::Srli => shift(OPC_OP_IMM, 0, 0b101, 0x3F),
        Op::Srai => shift(OPC_OP_IMM, 0b01_0000, 0b101, 0x3F),
        Op::Add => r_type(OPC_OP, 0, 0b000),
        Op::Sub => r_type(OPC_OP, 0b010_0000, 0b000),
        Op::Sll => r_type(OPC_OP, 0, 0b001),
        Op::Slt => r_type(OPC_OP, 0, 0b010),
        Op::Sltu => r_type(OPC_OP, 0, 0b011),
        Op::Xor => r_type(OPC_OP, 0, 0b100),
        Op::Srl => r_type(OPC_OP, 0, 0b101),
        Op::Sra => r_type(OPC_OP, 0b010_0000, 0b101),
        Op::Or => r_type(OPC_OP, 0, 0b110),
        Op::And => r_type(OPC_OP, 0, 0b111),
        Op::Addiw => i_type(OPC_OP_IMM_32, 0b000),
        Op::Slliw => shift(OPC_OP_IMM_32, 0, 0b001, 0x1F),
        Op::Srliw => shift(OPC_OP_IMM_32, 0, 0b101, 0x1F),
        Op::Sraiw => shift(OPC_OP_IMM_32, 0b01_0000, 0b101, 0x1F),
        Op::Addw => r_type(OPC_OP_32, 0, 0b000),
        Op::Subw => r_type(OPC_OP_32, 0b010_0000, 0b000),
        Op::Sllw => r_type(OPC_OP_32, 0, 0b001),
        Op::Srlw => r_type(OPC_OP_32, 0, 0b101),
        Op::Sraw => r_type(OPC_OP_32, 0b010_0000, 0b101),
        Op::Fence => ((imm & 0xFFF) << 20) | rs1 | rd | OPC_MISC_MEM,
        Op::Ecall => WORD_ECALL,
        Op::Ebreak => WORD_EBREAK,
        Op::Uret => WORD_URET,
        Op::Csrrw => csr | rs1 | f3(0b001) | rd | OPC_SYSTEM,
        Op::Csrrs => csr | rs1 | f3(0b010) | rd | OPC_SYSTEM,
        Op::Csrrc => csr | rs1 | f3(0b011) | rd | OPC_SYSTEM,
        Op::Csrrwi => csr | ((imm & 0x1F) << 15) | f3(0b101) | rd | OPC_SYSTEM,
        Op::Csrrsi => csr | ((imm & 0x1F) << 15) | f3(0b110) | rd | OPC_SYSTEM,
        Op::Csrrci => csr | ((imm & 0x1F) << 15) | f3(0b111) | rd | OPC_SYSTEM,
        Op::DasicscallJr => rs1 | OPC_CUSTOM0,
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = self.op.mnemonic();
        let rd = reg_name(self.rd);
        let rs1 = reg_name(self.rs1);
        let rs2 = reg_name(self.rs2);
        match self.op.format() {
            Format::R => write!(f, "{m} {rd}, {rs1}, {rs2}"),
            Format::I if self.op.is_load() || self.op == Op::Jalr => {
                write!(f, "{m} {rd}, {}({rs1})", self.imm)
            }
            Format::I | Format::Shift => write!(f, "{m} {rd}, {rs1}, {}", self.imm),
            Format::S => write!(f, "{m} {rs2}, {}({rs1})", self.imm),
            Format::B => write!(f, "{m} {rs1}, {rs2}, {:+}", self.imm),
            Format::U => write!(f, "{m} {rd}, {:#x}", (self.imm >> 12) & 0xFFFFF),
            Format::J => write!(f, "{m} {rd}, {:+}", self.imm),
            Format::Fence => write!(f, "{m}"),
            Format::System => write!(f, "{m}"),
            Format::Csr => write!(
                f,
                "{m} {rd}, {}, {rs1}",
                crate::csr::csr_name(self.csr)
                    .map(str::to_owned)
                    .unwrap_or_else(|| format!("{:#x}", self.csr))
            ),
            Format::CsrImm => write!(
                f,
                "{m} {rd}, {}, {}",
                crate::csr::csr_name(self.csr)
                    .map(str::to_owned)
                    .unwrap_or_else(|| format!("{:#x}", self.csr)),
                self.imm
            ),
            Format::Dasicscall => write!(f, "{m} {rs1}"),
        }
    }
}
