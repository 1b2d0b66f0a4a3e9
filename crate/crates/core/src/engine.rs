//! DASICS decision core.
//!
//! Every function here is a pure decision over a decoded [`DasicsState`].
//! The only state a check can change is the single-use validity of the
//! recorded return address, and that change is reported back to the caller
//! rather than applied in place.

use std::fmt;

use crate::csr::{NUM_JUMP_BOUNDS, NUM_MEM_BOUNDS};
use crate::trap::TrapKind;

/// Trusted/untrusted classification of a program-counter value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CodeTag {
    Trusted,
    Untrusted,
}

impl CodeTag {
    pub fn letter(self) -> char {
        match self {
            CodeTag::Trusted => 'T',
            CodeTag::Untrusted => 'U',
        }
    }
}

/// One data bound register. `lo` and `hi` are inclusive.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MemBound {
    pub lo: u64,
    pub hi: u64,
    pub valid: bool,
    pub read: bool,
    pub write: bool,
}

/// One jump bound register. `lo` and `hi` are inclusive.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct JumpBound {
    pub lo: u64,
    pub hi: u64,
    pub valid: bool,
}

impl JumpBound {
    pub fn contains(&self, addr: u64) -> bool {
        self.valid && self.lo <= addr && addr <= self.hi
    }
}

/// An address register paired with a validity bit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RetSlot {
    pub addr: u64,
    pub valid: bool,
}

impl RetSlot {
    fn matches(&self, target: u64) -> bool {
        self.valid && self.addr == target
    }
}

/// Decoded view of the DASICS CSR bank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DasicsState {
    pub enable: bool,
    pub umain_lo: u64,
    pub umain_hi: u64,
    pub membounds: [MemBound; NUM_MEM_BOUNDS],
    pub jmpbounds: [JumpBound; NUM_JUMP_BOUNDS],
    pub ret_pc: RetSlot,
    pub maincall: RetSlot,
}

impl Default for DasicsState {
    fn default() -> Self {
        DasicsState {
            enable: false,
            umain_lo: 0,
            umain_hi: 0,
            membounds: [MemBound::default(); NUM_MEM_BOUNDS],
            jmpbounds: [JumpBound::default(); NUM_JUMP_BOUNDS],
            ret_pc: RetSlot::default(),
            maincall: RetSlot::default(),
        }
    }
}

impl DasicsState {
    /// Index of the first valid jump bound containing `addr`.
    pub fn active_zone_hit(&self, addr: u64) -> Option<usize> {
        self.jmpbounds.iter().position(|b| b.contains(addr))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessKind {
    Load,
    Store,
}

impl AccessKind {
    pub fn name(self) -> &'static str {
        match self {
            AccessKind::Load => "load",
            AccessKind::Store => "store",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransferKind {
    Jal,
    Jalr,
    BranchTaken,
    Dasicscall,
}

impl TransferKind {
    pub fn name(self) -> &'static str {
        match self {
            TransferKind::Jal => "jal",
            TransferKind::Jalr => "jalr",
            TransferKind::BranchTaken => "branch",
            TransferKind::Dasicscall => "dasicscall",
        }
    }
}

/// How control reached the pc about to be fetched.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arrival {
    /// First instruction after load.
    Reset,
    /// Fall-through from the previous instruction.
    Sequential,
    /// A control transfer that has already been vetted.
    Transfer,
    /// Trap delivery to `utvec`.
    TrapEntry,
}

/// Which rule decided a check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    Trusted,
    MemBound(usize),
    JumpBound(usize),
    RetPc,
    MaincallEntry,
    /// No rule admitted the access or transfer.
    NoMatch,
    /// Sequential flow from untrusted code into the trusted zone.
    FallThrough,
    /// Entry into the trusted zone through a vetted transfer or trap.
    VettedEntry,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rule::Trusted => f.write_str("trusted"),
            Rule::MemBound(i) => write!(f, "membound[{i}]"),
            Rule::JumpBound(j) => write!(f, "jmpbound[{j}]"),
            Rule::RetPc => f.write_str("ret_pc"),
            Rule::MaincallEntry => f.write_str("maincall_entry"),
            Rule::NoMatch => f.write_str("none"),
            Rule::FallThrough => f.write_str("fallthrough"),
            Rule::VettedEntry => f.write_str("vetted_entry"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fault(TrapKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckResult {
    pub verdict: Verdict,
    pub rule: Rule,
}

impl CheckResult {
    fn pass(rule: Rule) -> Self {
        CheckResult {
            verdict: Verdict::Pass,
            rule,
        }
    }

    fn fault(kind: TrapKind, rule: Rule) -> Self {
        CheckResult {
            verdict: Verdict::Fault(kind),
            rule,
        }
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

/// Result of a transfer check: the verdict plus whether the recorded
/// return address was consumed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransferCheck {
    pub result: CheckResult,
    pub consumed_ret: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EcallRoute {
    ToUserHandler,
    ToEmulatedKernel,
}

pub fn tag_pc(pc: u64, state: &DasicsState) -> CodeTag {
    if !state.enable || (state.umain_lo <= pc && pc <= state.umain_hi) {
        CodeTag::Trusted
    } else {
        CodeTag::Untrusted
    }
}

/// Data-flow check. An untrusted access passes only if one valid bound
/// contains every byte and grants the needed permission.
pub fn check_memory(
    tag: CodeTag,
    addr: u64,
    len: u8,
    kind: AccessKind,
    state: &DasicsState,
) -> CheckResult {
    if tag == CodeTag::Trusted {
        return CheckResult::pass(Rule::Trusted);
    }
    let fault_kind = match kind {
        AccessKind::Load => TrapKind::DasicsLoadFault,
        AccessKind::Store => TrapKind::DasicsStoreFault,
    };
    let Some(last) = addr.checked_add(u64::from(len) - 1) else {
        return CheckResult::fault(fault_kind, Rule::NoMatch);
    };
    let hit = state.membounds.iter().position(|b| {
        let perm = match kind {
            AccessKind::Load => b.read,
            AccessKind::Store => b.write,
        };
        b.valid && perm && b.lo <= addr && last <= b.hi
    });
    match hit {
        Some(i) => CheckResult::pass(Rule::MemBound(i)),
        None => CheckResult::fault(fault_kind, Rule::NoMatch),
    }
}

/// Control-flow check for a transfer whose final target is already known.
pub fn check_transfer(
    tag: CodeTag,
    kind: TransferKind,
    target: u64,
    state: &DasicsState,
) -> TransferCheck {
    let plain = |result| TransferCheck {
        result,
        consumed_ret: false,
    };
    if tag == CodeTag::Trusted {
        return plain(CheckResult::pass(Rule::Trusted));
    }
    if kind != TransferKind::BranchTaken {
        if state.ret_pc.matches(target) {
            return TransferCheck {
                result: CheckResult::pass(Rule::RetPc),
                consumed_ret: true,
            };
        }
        if state.maincall.matches(target) {
            return plain(CheckResult::pass(Rule::MaincallEntry));
        }
    }
    match state.active_zone_hit(target) {
        Some(j) => plain(CheckResult::pass(Rule::JumpBound(j))),
        None => plain(CheckResult::fault(TrapKind::DasicsJumpFault, Rule::NoMatch)),
    }
}

/// Guards entry into the trusted zone: untrusted code may not fall through
/// into it. Transfers and trap entries were vetted elsewhere.
pub fn check_tag_transition(
    prev_tag: CodeTag,
    new_pc: u64,
    arrival: Arrival,
    state: &DasicsState,
) -> CheckResult {
    if prev_tag == CodeTag::Untrusted && tag_pc(new_pc, state) == CodeTag::Trusted {
        if arrival == Arrival::Sequential {
            CheckResult::fault(TrapKind::DasicsJumpFault, Rule::FallThrough)
        } else {
            CheckResult::pass(Rule::VettedEntry)
        }
    } else {
        CheckResult::pass(Rule::Trusted)
    }
}

pub fn intercept_ecall(tag: CodeTag, state: &DasicsState) -> EcallRoute {
    if state.enable && tag == CodeTag::Untrusted {
        EcallRoute::ToUserHandler
    } else {
        EcallRoute::ToEmulatedKernel
    }
}

/// Records the return address for a `dasicscall.jr` issued by trusted code.
pub fn arm_return(pc_next: u64, state: &mut DasicsState) {
    state.ret_pc = RetSlot {
        addr: pc_next,
        valid: true,
    };
}
