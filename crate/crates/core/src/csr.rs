//! Control/status registers: the user-trap subset and the DASICS bank.
//!
//! Address map (inclusive bounds everywhere):
//!
//! | address            | register                                   |
//! |--------------------|--------------------------------------------|
//! | `0x880 + 2i`       | `libbound_lo{i}`, i in 0..16               |
//! | `0x881 + 2i`       | `libbound_hi{i}`                           |
//! | `0x8A0`            | `libcfg`, 16 nibbles `{valid, R, W, -}`    |
//! | `0x8C0 + 2j`       | `jmpbound_lo{j}`, j in 0..4                |
//! | `0x8C1 + 2j`       | `jmpbound_hi{j}`                           |
//! | `0x8C8`            | `jmpcfg`, 4 valid bits                     |
//! | `0x8D0`..`0x8D3`   | ret pc / ret valid / maincall entry / valid|
//! | `0x9C0`..`0x9C2`   | `umain_lo` / `umain_hi` / `umain_cfg`      |
//!
//! The `umain` registers can only be written by the host loader.

use thiserror::Error;

use crate::engine::{CodeTag, DasicsState, JumpBound, MemBound, RetSlot};

pub const NUM_MEM_BOUNDS: usize = 16;
pub const NUM_JUMP_BOUNDS: usize = 4;

pub const USTATUS: u16 = 0x000;
pub const UTVEC: u16 = 0x005;
pub const USCRATCH: u16 = 0x040;
pub const UEPC: u16 = 0x041;
pub const UCAUSE: u16 = 0x042;
pub const UTVAL: u16 = 0x043;

pub const LIBBOUND_BASE: u16 = 0x880;
pub const LIBCFG: u16 = 0x8A0;
pub const JMPBOUND_BASE: u16 = 0x8C0;
pub const JMPCFG: u16 = 0x8C8;
pub const DASICS_RET_PC: u16 = 0x8D0;
pub const DASICS_RET_VALID: u16 = 0x8D1;
pub const DASICS_MAINCALL_ENTRY: u16 = 0x8D2;
pub const DASICS_MAINCALL_VALID: u16 = 0x8D3;
pub const UMAIN_LO: u16 = 0x9C0;
pub const UMAIN_HI: u16 = 0x9C1;
pub const UMAIN_CFG: u16 = 0x9C2;

pub const USTATUS_UIE: u64 = 1 << 0;
pub const USTATUS_UPIE: u64 = 1 << 4;

pub const CFG_VALID: u64 = 0b001;
pub const CFG_READ: u64 = 0b010;
pub const CFG_WRITE: u64 = 0b100;

const LIBCFG_MASK: u64 = 0x7777_7777_7777_7777;
const JMPCFG_MASK: u64 = 0xF;

pub const fn libbound_lo(i: usize) -> u16 {
    LIBBOUND_BASE + 2 * i as u16
}

pub const fn libbound_hi(i: usize) -> u16 {
    LIBBOUND_BASE + 2 * i as u16 + 1
}

pub const fn jmpbound_lo(j: usize) -> u16 {
    JMPBOUND_BASE + 2 * j as u16
}

pub const fn jmpbound_hi(j: usize) -> u16 {
    JMPBOUND_BASE + 2 * j as u16 + 1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum CsrError {
    #[error("illegal access to CSR {addr:#05x}: {reason}")]
    IllegalAccess { addr: u16, reason: IllegalReason },
    #[error("umain bounds inverted: lo {lo:#x} > hi {hi:#x}")]
    BadBounds { lo: u64, hi: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IllegalReason {
    Unknown,
    UntrustedAccess,
    HostOnly,
}

impl std::fmt::Display for IllegalReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            IllegalReason::Unknown => "no such CSR",
            IllegalReason::UntrustedAccess => "guarded register accessed from untrusted code",
            IllegalReason::HostOnly => "register is writable only by the loader",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsrOp {
    Read,
    Write,
    Set,
    Clear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CsrClass {
    UserTrap,
    Dasics,
    Umain,
}

fn classify(addr: u16) -> Option<CsrClass> {
    match addr {
        USTATUS | UTVEC | USCRATCH | UEPC | UCAUSE | UTVAL => Some(CsrClass::UserTrap),
        0x880..=0x89F | LIBCFG | 0x8C0..=0x8C7 | JMPCFG => Some(CsrClass::Dasics),
        DASICS_RET_PC..=DASICS_MAINCALL_VALID => Some(CsrClass::Dasics),
        UMAIN_LO..=UMAIN_CFG => Some(CsrClass::Umain),
        _ => None,
    }
}

/// Symbolic name used by the assembler and the trace.
pub fn csr_name(addr: u16) -> Option<&'static str> {
    CSR_NAMES.iter().find(|(_, a)| *a == addr).map(|(n, _)| *n)
}

pub fn csr_by_name(name: &str) -> Option<u16> {
    CSR_NAMES.iter().find(|(n, _)| *n == name).map(|(_, a)| *a)
}

static CSR_NAMES: std::sync::LazyLock<Vec<(&'static str, u16)>> = std::sync::LazyLock::new(|| {
    let mut names = vec![
        ("ustatus", USTATUS),
        ("utvec", UTVEC),
        ("uscratch", USCRATCH),
        ("uepc", UEPC),
        ("ucause", UCAUSE),
        ("utval", UTVAL),
        ("libcfg", LIBCFG),
        ("jmpcfg", JMPCFG),
        ("dasics_ret_pc", DASICS_RET_PC),
        ("dasics_ret_valid", DASICS_RET_VALID),
        ("dasics_maincall_entry", DASICS_MAINCALL_ENTRY),
        ("dasics_maincall_valid", DASICS_MAINCALL_VALID),
        ("umain_lo", UMAIN_LO),
        ("umain_hi", UMAIN_HI),
        ("umain_cfg", UMAIN_CFG),
    ];
    let leak = |s: String| -> &'static str { Box::leak(s.into_boxed_str()) };
    for i in 0..NUM_MEM_BOUNDS {
        names.push((leak(format!("libbound_lo{i}")), libbound_lo(i)));
        names.push((leak(format!("libbound_hi{i}")), libbound_hi(i)));
    }
    for j in 0..NUM_JUMP_BOUNDS {
        names.push((leak(format!("jmpbound_lo{j}")), jmpbound_lo(j)));
        names.push((leak(format!("jmpbound_hi{j}")), jmpbound_hi(j)));
    }
    names
});

/// Every implemented CSR address, in ascending order.
pub fn implemented_csrs() -> Vec<u16> {
    let mut addrs: Vec<u16> = CSR_NAMES.iter().map(|(_, a)| *a).collect();
    addrs.sort_unstable();
    addrs
}

/// True for registers whose contents make up the DASICS configuration.
pub fn is_dasics_bank(addr: u16) -> bool {
    matches!(classify(addr), Some(CsrClass::Dasics | CsrClass::Umain))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CsrFile {
    pub ustatus: u64,
    pub utvec: u64,
    pub uscratch: u64,
    pub uepc: u64,
    pub ucause: u64,
    pub utval: u64,
    libbound: [(u64, u64); NUM_MEM_BOUNDS],
    libcfg: u64,
    jmpbound: [(u64, u64); NUM_JUMP_BOUNDS],
    jmpcfg: u64,
    ret_pc: u64,
    ret_valid: u64,
    maincall_entry: u64,
    maincall_valid: u64,
    umain_lo: u64,
    umain_hi: u64,
    umain_cfg: u64,
}

impl CsrFile {
    pub fn new() -> Self {
        Self::default()
    }

    fn raw_read(&self, addr: u16) -> u64 {
        match addr {
            USTATUS => self.ustatus,
            UTVEC => self.utvec,
            USCRATCH => self.uscratch,
            UEPC => self.uepc,
            UCAUSE => self.ucause,
            UTVAL => self.utval,
            0x880..=0x89F => {
                let (lo, hi) = self.libbound[usize::from((addr - LIBBOUND_BASE) / 2)];
                if addr.is_multiple_of(2) {
                    lo
                } else {
                    hi
                }
            }
            LIBCFG => self.libcfg,
            0x8C0..=0x8C7 => {
                let (lo, hi) = self.jmpbound[usize::from((addr - JMPBOUND_BASE) / 2)];
                if addr.is_multiple_of(2) {
                    lo
                } else {
                    hi
                }
            }
            JMPCFG => self.jmpcfg,
            DASICS_RET_PC => self.ret_pc,
            DASICS_RET_VALID => self.ret_valid,
            DASICS_MAINCALL_ENTRY => self.maincall_entry,
            DASICS_MAINCALL_VALID => self.maincall_valid,
            UMAIN_LO => self.umain_lo,
            UMAIN_HI => self.umain_hi,
            UMAIN_CFG => self.umain_cfg,
            _ => unreachable!("unclassified CSR {addr:#x}"),
        }
    }

    /// Stores `value` with reserved bits cleared.
    fn raw_write(&mut self, addr: u16, value: u64) {
        match addr {
            USTATUS => self.ustatus = value & (USTATUS_UIE | USTATUS_UPIE),
            UTVEC => self.utvec = value & !3,
            USCRATCH => self.uscratch = value,
            UEPC => self.uepc = value & !3,
            UCAUSE => self.ucause = value,
            UTVAL => self.utval = value,
            0x880..=0x89F => {
                let slot = &mut self.libbound[usize::from((addr - LIBBOUND_BASE) / 2)];
                if addr.is_multiple_of(2) {
                    slot.0 = value
                } else {
                    slot.1 = value
                }
            }
            LIBCFG => self.libcfg = value & LIBCFG_MASK,
            0x8C0..=0x8C7 => {
                let slot = &mut self.jmpbound[usize::from((addr - JMPBOUND_BASE) / 2)];
                if addr.is_multiple_of(2) {
                    slot.0 = value
                } else {
                    slot.1 = value
                }
            }
            JMPCFG => self.jmpcfg = value & JMPCFG_MASK,
            DASICS_RET_PC => self.ret_pc = value,
            DASICS_RET_VALID => self.ret_valid = value & 1,
            DASICS_MAINCALL_ENTRY => self.maincall_entry = value,
            DASICS_MAINCALL_VALID => self.maincall_valid = value & 1,
            UMAIN_LO => self.umain_lo = value,
            UMAIN_HI => self.umain_hi = value,
            UMAIN_CFG => self.umain_cfg = value & 1,
            _ => unreachable!("unclassified CSR {addr:#x}"),
        }
    }

    /// Guarded access on behalf of a guest CSR instruction.
    ///
    /// Returns the prior value. On error nothing changes.
    pub fn access(
        &mut self,
        tag: CodeTag,
        addr: u16,
        op: CsrOp,
        value: u64,
    ) -> Result<u64, CsrError> {
        let illegal = |reason| CsrError::IllegalAccess { addr, reason };
        let class = classify(addr).ok_or(illegal(IllegalReason::Unknown))?;
        if tag == CodeTag::Untrusted {
            return Err(illegal(IllegalReason::UntrustedAccess));
        }
        if class == CsrClass::Umain && op != CsrOp::Read {
            return Err(illegal(IllegalReason::HostOnly));
        }
        let old = self.raw_read(addr);
        let new = match op {
            CsrOp::Read => return Ok(old),
            CsrOp::Write => value,
            CsrOp::Set => old | value,
            CsrOp::Clear => old & !value,
        };
        self.raw_write(addr, new);
        Ok(old)
    }

    /// Unguarded read for the host (loader, tracer, tests).
    pub fn peek(&self, addr: u16) -> Option<u64> {
        classify(addr).map(|_| self.raw_read(addr))
    }

    /// Unguarded write for the host; used by the loader and by tests that
    /// stage a configuration directly.
    pub fn poke(&mut self, addr: u16, value: u64) -> bool {
        if classify(addr).is_none() {
            return false;
        }
        self.raw_write(addr, value);
        true
    }

    /// Installs the trusted-zone bounds. Loader-only path.
    pub fn host_set_umain(&mut self, lo: u64, hi: u64, enable: bool) -> Result<(), CsrError> {
        if lo > hi {
            return Err(CsrError::BadBounds { lo, hi });
        }
        self.umain_lo = lo;
        self.umain_hi = hi;
        self.umain_cfg = u64::from(enable);
        Ok(())
    }

    /// Decoded view of the DASICS bank.
    pub fn dasics_state(&self) -> DasicsState {
        let mut membounds = [MemBound::default(); NUM_MEM_BOUNDS];
        for (i, b) in membounds.iter_mut().enumerate() {
            let cfg = (self.libcfg >> (4 * i)) & 0xF;
            *b = MemBound {
                lo: self.libbound[i].0,
                hi: self.libbound[i].1,
                valid: cfg & CFG_VALID != 0,
                read: cfg & CFG_READ != 0,
                write: cfg & CFG_WRITE != 0,
            };
        }
        let mut jmpbounds = [JumpBound::default(); NUM_JUMP_BOUNDS];
        for (j, b) in jmpbounds.iter_mut().enumerate() {
            *b = JumpBound {
                lo: self.jmpbound[j].0,
                hi: self.jmpbound[j].1,
                valid: (self.jmpcfg >> j) & 1 != 0,
            };
        }
        DasicsState {
            enable: self.umain_cfg & 1 != 0,
            umain_lo: self.umain_lo,
            umain_hi: self.umain_hi,
            membounds,
            jmpbounds,
            ret_pc: RetSlot {
                addr: self.ret_pc,
                valid: self.ret_valid & 1 != 0,
            },
            maincall: RetSlot {
                addr: self.maincall_entry,
                valid: self.maincall_valid & 1 != 0,
            },
        }
    }

    /// Writes back the return slot after a check or an arm.
    pub fn set_ret_slot(&mut self, slot: RetSlot) {
        self.ret_pc = slot.addr;
        self.ret_valid = u64::from(slot.valid);
    }

    /// Values of every DASICS-bank register, in address order.
    pub fn dasics_bank(&self) -> Vec<(u16, u64)> {
        implemented_csrs()
            .into_iter()
            .filter(|a| is_dasics_bank(*a))
            .map(|a| (a, self.raw_read(a)))
            .collect()
    }
}
