//! Two-pass assembler for the guest dialect.
//!
//! Several source units can be assembled together; they share one symbol
//! table, so a label defined in one file may be referenced from another.
//! Each unit starts at its own base address and `.org` opens a new chunk at
//! an absolute address.

mod expr;
mod li;

pub use expr::{hi20, lo12};
pub use li::li_sequence;

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::csr::csr_by_name;
use crate::isa::{parse_reg, Format, Instruction, Op};
use expr::{is_symbol_char, is_symbol_start, parse_expr, unescape_one, Expr};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{file}:{line}: {message}")]
pub struct AsmError {
    pub file: String,
    pub line: usize,
    pub message: String,
}

/// One input file and the address its first byte is placed at.
#[derive(Debug, Clone, Copy)]
pub struct SourceUnit<'a> {
    pub name: &'a str,
    pub text: &'a str,
    pub base: u64,
}

/// A contiguous run of output bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunk {
    pub base: u64,
    pub bytes: Vec<u8>,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    pub chunks: Vec<Chunk>,
    pub symbols: BTreeMap<String, u64>,
}

impl Program {
    pub fn symbol(&self, name: &str) -> Option<u64> {
        self.symbols.get(name).copied()
    }

    /// Lays the chunks out in one zero-filled buffer starting at the lowest base.
    pub fn flatten(&self) -> Result<(u64, Vec<u8>), String> {
        let Some(base) = self.chunks.iter().map(|c| c.base).min() else {
            return Ok((0, Vec::new()));
        };
        let end = self
            .chunks
            .iter()
            .map(|c| u128::from(c.base) + c.bytes.len() as u128)
            .max()
            .unwrap_or(u128::from(base));
        let size = end - u128::from(base);
        if size > crate::memory::DEFAULT_CAP as u128 {
            return Err(format!(
                "image spans {size} bytes, more than the memory cap"
            ));
        }
        let mut out = vec![0u8; size as usize];
        let mut written = vec![false; size as usize];
        for c in &self.chunks {
            let off = (c.base - base) as usize;
            for (i, b) in c.bytes.iter().enumerate() {
                if written[off + i] {
                    return Err(format!("chunk `{}` overlaps another chunk", c.label));
                }
                written[off + i] = true;
                out[off + i] = *b;
            }
        }
        Ok((base, out))
    }
}

/// Assembles a single source placed at address 0.
pub fn assemble(text: &str) -> Result<Program, AsmError> {
    assemble_units(&[SourceUnit {
        name: "<input>",
        text,
        base: 0,
    }])
}

pub fn assemble_units(units: &[SourceUnit<'_>]) -> Result<Program, AsmError> {
    let mut lines = Vec::new();
    for (u, unit) in units.iter().enumerate() {
        for (i, raw) in unit.text.lines().enumerate() {
            let line = parse_line(raw).map_err(|message| AsmError {
                file: unit.name.to_owned(),
                line: i + 1,
                message,
            })?;
            lines.push((u, i + 1, line));
        }
    }
    let mut asm = Assembler {
        units,
        symbols: HashMap::new(),
        final_pass: false,
        chunks: Vec::new(),
        cur: None,
    };
    asm.pass(&lines)?;
    asm.final_pass = true;
    asm.chunks.clear();
    asm.pass(&lines)?;
    let symbols = asm
        .symbols
        .iter()
        .map(|(k, v)| (k.clone(), *v as u64))
        .collect();
    Ok(Program {
        chunks: asm.chunks,
        symbols,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Line {
    labels: Vec<String>,
    mnemonic: Option<String>,
    operands: Vec<String>,
}

/// Removes a trailing `#` comment, leaving quoted text intact.
fn strip_comment(raw: &str) -> &str {
    let mut in_str = false;
    let mut in_chr = false;
    let mut escaped = false;
    for (i, c) in raw.char_indices() {
        if escaped {
            escaped = false;
            continue;
        }
        match c {
            '\\' if in_str || in_chr => escaped = true,
            '"' if !in_chr => in_str = !in_str,
            '\'' if !in_str => in_chr = !in_chr,
            '#' if !in_str && !in_chr => return &raw[..i],
            _ => {}
        }
    }
    raw
}

fn split_operands(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut in_str = false;
    let mut in_chr = false;
    let mut escaped = false;
    let mut cur = String::new();
    for c in s.chars() {
        if escaped {
            escaped = false;
            cur.push(c);
            continue;
        }
        match c {
            '\\' if in_str || in_chr => escaped = true,
            '"' if !in_chr => in_str = !in_str,
            '\'' if !in_str => in_chr = !in_chr,
            '(' if !in_str && !in_chr => depth += 1,
            ')' if !in_str && !in_chr => depth -= 1,
            ',' if depth == 0 && !in_str && !in_chr => {
                out.push(cur.trim().to_owned());
                cur.clear();
                continue;
            }
            _ => {}
        }
        cur.push(c);
    }
    if !cur.trim().is_empty() || !out.is_empty() {
        out.push(cur.trim().to_owned());
    }
    out
}

fn parse_line(raw: &str) -> Result<Line, String> {
    let mut rest = strip_comment(raw).trim();
    let mut labels = Vec::new();
    while let Some(first) = rest.chars().next() {
        if !is_symbol_start(first) {
            break;
        }
        let len = rest
            .find(|c: char| !is_symbol_char(c))
            .unwrap_or(rest.len());
        if rest[len..].starts_with(':') {
            labels.push(rest[..len].to_owned());
            rest = rest[len + 1..].trim_start();
        } else {
            break;
        }
    }
    if rest.is_empty() {
        return Ok(Line {
            labels,
            mnemonic: None,
            operands: Vec::new(),
        });
    }
    let split = rest.find(char::is_whitespace).unwrap_or(rest.len());
    let mnemonic = rest[..split].to_ascii_lowercase();
    let operands = split_operands(rest[split..].trim());
    if operands.iter().any(String::is_empty) {
        return Err("empty operand".into());
    }
    Ok(Line {
        labels,
        mnemonic: Some(mnemonic),
        operands,
    })
}

fn parse_string(s: &str) -> Result<Vec<u8>, String> {
    let inner = s
        .strip_prefix('"')
        .and_then(|t| t.strip_suffix('"'))
        .ok_or_else(|| format!("expected a quoted string, found `{s}`"))?;
    let mut out = Vec::new();
    let mut i = 0;
    while i < inner.len() {
        let (b, used) =
            unescape_one(&inner[i..]).ok_or_else(|| format!("bad escape in string `{s}`"))?;
        out.push(b);
        i += used;
    }
    Ok(out)
}

fn fits_signed(v: i64, bits: u32) -> bool {
    let lim = 1i64 << (bits - 1);
    (-lim..lim).contains(&v)
}

/// Splits `off(reg)` into its offset text and register text.
fn split_mem(s: &str) -> Option<(&str, &str)> {
    let s = s.trim();
    let body = s.strip_suffix(')')?;
    let open = body.rfind('(')?;
    Some((body[..open].trim(), body[open + 1..].trim()))
}

struct Assembler<'a> {
    units: &'a [SourceUnit<'a>],
    symbols: HashMap<String, i64>,
    final_pass: bool,
    chunks: Vec<Chunk>,
    cur: Option<Chunk>,
}

type R<T> = Result<T, String>;

impl Assembler<'_> {
    fn here(&self) -> u64 {
        let c = self.cur.as_ref().expect("open chunk");
        c.base.wrapping_add(c.bytes.len() as u64)
    }

    fn open_chunk(&mut self, base: u64, label: String) {
        self.close_chunk();
        self.cur = Some(Chunk {
            base,
            bytes: Vec::new(),
            label,
        });
    }

    fn close_chunk(&mut self) {
        if let Some(c) = self.cur.take() {
            if !c.bytes.is_empty() {
                self.chunks.push(c);
            }
        }
    }

    fn emit(&mut self, bytes: &[u8]) {
        self.cur
            .as_mut()
            .expect("open chunk")
            .bytes
            .extend_from_slice(bytes);
    }

    fn emit_inst(&mut self, inst: Instruction) {
        self.emit(&inst.raw.to_le_bytes());
    }

    /// Evaluates an expression. Unless `strict`, the first pass tolerates
    /// symbols that are not yet defined.
    fn eval(&self, s: &str, strict: bool) -> R<i64> {
        let e = parse_expr(s)?;
        self.eval_expr(&e, strict)
    }

    fn eval_expr(&self, e: &Expr, strict: bool) -> R<i64> {
        let lookup = |name: &str| self.symbols.get(name).copied();
        match e.eval(self.here(), &lookup) {
            Ok(v) => Ok(v),
            Err(_) if !strict && !self.final_pass => Ok(0),
            Err(err) => Err(err.to_string()),
        }
    }

    fn reg(&self, s: &str) -> R<u8> {
        parse_reg(s.trim()).ok_or_else(|| format!("unknown register `{s}`"))
    }

    fn imm(&self, s: &str, bits: u32) -> R<i64> {
        let v = self.eval(s, false)?;
        if self.final_pass && !fits_signed(v, bits) {
            return Err(format!("immediate {v} out of range for {bits}-bit field"));
        }
        Ok(v)
    }

    fn uimm(&self, s: &str, max: i64) -> R<i64> {
        let v = self.eval(s, false)?;
        if self.final_pass && !(0..=max).contains(&v) {
            return Err(format!("value {v} out of range 0..={max}"));
        }
        Ok(v)
    }

    fn pc_offset(&self, s: &str, bits: u32) -> R<i64> {
        let target = self.eval(s, false)?;
        if !self.final_pass {
            return Ok(0);
        }
        let off = target.wrapping_sub(self.here() as i64);
        if off % 2 != 0 || !fits_signed(off, bits) {
            return Err(format!(
                "target {target:#x} out of range ({off:+} bytes away)"
            ));
        }
        Ok(off)
    }

    fn csr(&self, s: &str) -> R<u16> {
        if let Some(addr) = csr_by_name(s.trim()) {
            return Ok(addr);
        }
        let v = self
            .eval(s, true)
            .map_err(|_| format!("unknown CSR `{s}`"))?;
        if !(0..0x1000).contains(&v) {
            return Err(format!("CSR address {v:#x} out of range"));
        }
        Ok(v as u16)
    }

    fn mem(&self, s: &str) -> R<(i64, u8)> {
        let (off, reg) =
            split_mem(s).ok_or_else(|| format!("expected `offset(reg)`, found `{s}`"))?;
        let off = if off.is_empty() {
            0
        } else {
            self.imm(off, 12)?
        };
        Ok((off, self.reg(reg)?))
    }

    fn define(&mut self, name: &str, value: i64) -> R<()> {
        if self.final_pass {
            return Ok(());
        }
        if self.symbols.insert(name.to_owned(), value).is_some() {
            return Err(format!("symbol `{name}` defined more than once"));
        }
        Ok(())
    }

    fn pass(&mut self, lines: &[(usize, usize, Line)]) -> Result<(), AsmError> {
        let mut unit = usize::MAX;
        for (u, number, line) in lines {
            if *u != unit {
                unit = *u;
                let src = &self.units[unit];
                self.open_chunk(src.base, format!("{}@{:#x}", src.name, src.base));
            }
            self.line(line).map_err(|message| AsmError {
                file: self.units[unit].name.to_owned(),
                line: *number,
                message,
            })?;
        }
        self.close_chunk();
        Ok(())
    }

    fn line(&mut self, line: &Line) -> R<()> {
        for label in &line.labels {
            let here = self.here() as i64;
            self.define(label, here)?;
        }
        let Some(m) = line.mnemonic.as_deref() else {
            return Ok(());
        };
        let ops: Vec<&str> = line.operands.iter().map(String::as_str).collect();
        if m.starts_with('.') {
            self.directive(m, &ops)
        } else {
            self.instruction(m, &ops)
        }
    }

    fn directive(&mut self, m: &str, ops: &[&str]) -> R<()> {
        let want = |n: usize| -> R<()> {
            if ops.len() == n {
                Ok(())
            } else {
                Err(format!("`{m}` takes {n} operand(s)"))
            }
        };
        match m {
            ".org" => {
                want(1)?;
                let base = self.eval(ops[0], true)? as u64;
                let label = format!(
                    "{}@{base:#x}",
                    self.cur
                        .as_ref()
                        .map_or("", |c| c.label.split('@').next().unwrap_or(""))
                );
                self.open_chunk(base, label);
            }
            ".byte" | ".half" | ".word" | ".dword" => {
                if ops.is_empty() {
                    return Err(format!("`{m}` needs at least one value"));
                }
                let width: u32 = match m {
                    ".byte" => 1,
                    ".half" => 2,
                    ".word" => 4,
                    _ => 8,
                };
                for op in ops {
                    let v = self.eval(op, false)?;
                    if width < 8 && self.final_pass {
                        let bits = 8 * width;
                        let ok = fits_signed(v, bits) || (0..(1i64 << bits)).contains(&v);
                        if !ok {
                            return Err(format!("value {v:#x} does not fit in `{m}`"));
                        }
                    }
                    self.emit(&v.to_le_bytes()[..width as usize]);
                }
            }
            ".ascii" | ".asciz" | ".string" => {
                if ops.is_empty() {
                    return Err(format!("`{m}` needs a string"));
                }
                for op in ops {
                    let mut bytes = parse_string(op)?;
                    if m != ".ascii" {
                        bytes.push(0);
                    }
                    self.emit(&bytes);
                }
            }
            ".align" | ".balign" => {
                want(1)?;
                let n = self.eval(ops[0], true)?;
                let align = if m == ".align" {
                    if !(0..=16).contains(&n) {
                        return Err(format!("alignment exponent {n} out of range 0..=16"));
                    }
                    1u64 << n
                } else {
                    if n <= 0 || n & (n - 1) != 0 || n > 1 << 16 {
                        return Err(format!("alignment {n} is not a power of two"));
                    }
                    n as u64
                };
                let pad = (align - self.here() % align) % align;
                self.emit(&vec![0; pad as usize]);
            }
            ".zero" | ".space" => {
                want(1)?;
                let n = self.eval(ops[0], true)?;
                if !(0..=1 << 24).contains(&n) {
                    return Err(format!("size {n} out of range"));
                }
                self.emit(&vec![0; n as usize]);
            }
            ".equ" | ".set" => {
                want(2)?;
                let name = ops[0];
                if name.is_empty()
                    || !name.starts_with(is_symbol_start)
                    || !name.chars().all(is_symbol_char)
                {
                    return Err(format!("invalid symbol name `{name}`"));
                }
                let v = self.eval(ops[1], true)?;
                self.define(name, v)?;
            }
            ".globl" | ".global" => {}
            _ => return Err(format!("unknown directive `{m}`")),
        }
        Ok(())
    }

    fn instruction(&mut self, m: &str, ops: &[&str]) -> R<()> {
        if self.pseudo(m, ops)? {
            return Ok(());
        }
        let op = Op::from_mnemonic(m).ok_or_else(|| format!("unknown instruction `{m}`"))?;
        let want = |n: usize| -> R<()> {
            if ops.len() == n {
                Ok(())
            } else {
                Err(format!("`{m}` takes {n} operand(s)"))
            }
        };
        let inst = match op.format() {
            Format::R => {
                want(3)?;
                Instruction::new(
                    op,
                    self.reg(ops[0])?,
                    self.reg(ops[1])?,
                    self.reg(ops[2])?,
                    0,
                    0,
                )
            }
            Format::I if op == Op::Jalr => return self.jalr(ops),
            Format::I if op.is_load() => {
                want(2)?;
                let (off, rs1) = self.mem(ops[1])?;
                Instruction::new(op, self.reg(ops[0])?, rs1, 0, off, 0)
            }
            Format::I => {
                want(3)?;
                let imm = self.imm(ops[2], 12)?;
                Instruction::new(op, self.reg(ops[0])?, self.reg(ops[1])?, 0, imm, 0)
            }
            Format::Shift => {
                want(3)?;
                let max = if matches!(op, Op::Slliw | Op::Srliw | Op::Sraiw) {
                    31
                } else {
                    63
                };
                let sh = self.uimm(ops[2], max)?;
                Instruction::new(op, self.reg(ops[0])?, self.reg(ops[1])?, 0, sh, 0)
            }
            Format::S => {
                want(2)?;
                let (off, rs1) = self.mem(ops[1])?;
                Instruction::new(op, 0, rs1, self.reg(ops[0])?, off, 0)
            }
            Format::B => {
                want(3)?;
                let off = self.pc_offset(ops[2], 13)?;
                Instruction::new(op, 0, self.reg(ops[0])?, self.reg(ops[1])?, off, 0)
            }
            Format::U => {
                want(2)?;
                let v = self.eval(ops[1], false)?;
                if self.final_pass && !(-0x8_0000..=0xF_FFFF).contains(&v) {
                    return Err(format!("upper immediate {v:#x} out of range"));
                }
                let imm = i64::from((((v & 0xF_FFFF) << 12) as u32) as i32);
                Instruction::new(op, self.reg(ops[0])?, 0, 0, imm, 0)
            }
            Format::J => {
                let (rd, target) = match ops {
                    [t] => (1, *t),
                    [rd, t] => (self.reg(rd)?, *t),
                    _ => return Err("`jal` takes 1 or 2 operands".into()),
                };
                let off = self.pc_offset(target, 21)?;
                Instruction::new(op, rd, 0, 0, off, 0)
            }
            Format::Fence => {
                want(0)?;
                Instruction::new(op, 0, 0, 0, 0x0FF, 0)
            }
            Format::System => {
                want(0)?;
                Instruction::new(op, 0, 0, 0, 0, 0)
            }
            Format::Csr => {
                want(3)?;
                Instruction::new(
                    op,
                    self.reg(ops[0])?,
                    self.reg(ops[2])?,
                    0,
                    0,
                    self.csr(ops[1])?,
                )
            }
            Format::CsrImm => {
                want(3)?;
                let z = self.uimm(ops[2], 31)?;
                Instruction::new(op, self.reg(ops[0])?, 0, 0, z, self.csr(ops[1])?)
            }
            Format::Dasicscall => {
                want(1)?;
                Instruction::new(op, 0, self.reg(ops[0])?, 0, 0, 0)
            }
        };
        self.emit_inst(inst);
        Ok(())
    }

    fn jalr(&mut self, ops: &[&str]) -> R<()> {
        let (rd, off, rs1) = match ops {
            [rs1] => (1, 0, self.reg(rs1)?),
            [rd, m] if split_mem(m).is_some() => {
                let (off, rs1) = self.mem(m)?;
                (self.reg(rd)?, off, rs1)
            }
            [rd, rs1] => (self.reg(rd)?, 0, self.reg(rs1)?),
            [rd, rs1, off] => (self.reg(rd)?, self.imm(off, 12)?, self.reg(rs1)?),
            _ => return Err("`jalr` takes 1 to 3 operands".into()),
        };
        self.emit_inst(Instruction::new(Op::Jalr, rd, rs1, 0, off, 0));
        Ok(())
    }

    /// Expands a pseudo-instruction; returns false if `m` is not one.
    fn pseudo(&mut self, m: &str, ops: &[&str]) -> R<bool> {
        let want = |n: usize| -> R<()> {
            if ops.len() == n {
                Ok(())
            } else {
                Err(format!("`{m}` takes {n} operand(s)"))
            }
        };
        let zero = "zero";
        match m {
            "nop" => {
                want(0)?;
                self.instruction("addi", &[zero, zero, "0"])?;
            }
            "mv" => {
                want(2)?;
                self.instruction("addi", &[ops[0], ops[1], "0"])?;
            }
            "not" => {
                want(2)?;
                self.instruction("xori", &[ops[0], ops[1], "-1"])?;
            }
            "neg" => {
                want(2)?;
                self.instruction("sub", &[ops[0], zero, ops[1]])?;
            }
            "sext.w" => {
                want(2)?;
                self.instruction("addiw", &[ops[0], ops[1], "0"])?;
            }
            "seqz" => {
                want(2)?;
                self.instruction("sltiu", &[ops[0], ops[1], "1"])?;
            }
            "snez" => {
                want(2)?;
                self.instruction("sltu", &[ops[0], zero, ops[1]])?;
            }
            "j" => {
                want(1)?;
                self.instruction("jal", &[zero, ops[0]])?;
            }
            "jr" => {
                want(1)?;
                self.instruction("jalr", &[zero, ops[0], "0"])?;
            }
            "ret" => {
                want(0)?;
                self.instruction("jalr", &[zero, "ra", "0"])?;
            }
            "call" | "la" => {
                let (rd, target) = match (m, ops) {
                    ("call", [t]) => ("ra", *t),
                    ("la", [rd, t]) => (*rd, *t),
                    _ => return Err(format!("wrong operand count for `{m}`")),
                };
                let rd = self.reg(rd)?;
                let target = self.eval(target, false)?;
                let off = target.wrapping_sub(self.here() as i64);
                if self.final_pass && !fits_signed(off.wrapping_add(0x800), 32) {
                    return Err(format!("target {target:#x} out of pc-relative range"));
                }
                let hi = i64::from(((hi20(off) << 12) as u32) as i32);
                let lo = lo12(off);
                self.emit_inst(Instruction::new(Op::Auipc, rd, 0, 0, hi, 0));
                let second = if m == "call" {
                    Instruction::new(Op::Jalr, rd, rd, 0, lo, 0)
                } else {
                    Instruction::new(Op::Addi, rd, rd, 0, lo, 0)
                };
                self.emit_inst(second);
            }
            "li" => {
                want(2)?;
                let rd = self.reg(ops[0])?;
                let v = self
                    .eval(ops[1], true)
                    .map_err(|e| format!("`li` needs a value known at this point: {e}"))?;
                for inst in li_sequence(rd, v) {
                    self.emit_inst(inst);
                }
            }
            "beqz" | "bnez" | "bltz" | "bgez" => {
                want(2)?;
                let real = &m[..3];
                self.instruction(real, &[ops[0], zero, ops[1]])?;
            }
            "blez" | "bgtz" => {
                want(2)?;
                let real = if m == "blez" { "bge" } else { "blt" };
                self.instruction(real, &[zero, ops[0], ops[1]])?;
            }
            "bgt" | "ble" | "bgtu" | "bleu" => {
                want(3)?;
                let real = match m {
                    "bgt" => "blt",
                    "ble" => "bge",
                    "bgtu" => "bltu",
                    _ => "bgeu",
                };
                self.instruction(real, &[ops[1], ops[0], ops[2]])?;
            }
            "csrr" => {
                want(2)?;
                self.instruction("csrrs", &[ops[0], ops[1], zero])?;
            }
            "csrw" | "csrs" | "csrc" => {
                want(2)?;
                let real = format!("csrr{}", &m[3..]);
                self.instruction(&real, &[zero, ops[0], ops[1]])?;
            }
            "csrwi" | "csrsi" | "csrci" => {
                want(2)?;
                let real = format!("csrr{}", &m[3..]);
                self.instruction(&real, &[zero, ops[0], ops[1]])?;
            }
            _ => return Ok(false),
        }
        Ok(true)
    }
}
