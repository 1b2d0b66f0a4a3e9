//! Same-privilege trap delivery (user-level, N-extension style).

use std::fmt;

use thiserror::Error;

use crate::csr::{CsrFile, USTATUS_UIE, USTATUS_UPIE};
use crate::isa::RegisterFile;

/// Trap cause codes. DASICS causes live in the custom range starting at 24.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrapKind {
    InstructionAddressMisaligned,
    InstructionAccessFault,
    IllegalInstruction,
    Breakpoint,
    LoadAddressMisaligned,
    LoadAccessFault,
    StoreAddressMisaligned,
    StoreAccessFault,
    EcallFromU,
    DasicsLoadFault,
    DasicsStoreFault,
    DasicsJumpFault,
    DasicsEcallFault,
}

impl TrapKind {
    pub const ALL: [TrapKind; 13] = [
        TrapKind::InstructionAddressMisaligned,
        TrapKind::InstructionAccessFault,
        TrapKind::IllegalInstruction,
        TrapKind::Breakpoint,
        TrapKind::LoadAddressMisaligned,
        TrapKind::LoadAccessFault,
        TrapKind::StoreAddressMisaligned,
        TrapKind::StoreAccessFault,
        TrapKind::EcallFromU,
        TrapKind::DasicsLoadFault,
        TrapKind::DasicsStoreFault,
        TrapKind::DasicsJumpFault,
        TrapKind::DasicsEcallFault,
    ];

    pub fn code(self) -> u64 {
        match self {
            TrapKind::InstructionAddressMisaligned => 0,
            TrapKind::InstructionAccessFault => 1,
            TrapKind::IllegalInstruction => 2,
            TrapKind::Breakpoint => 3,
            TrapKind::LoadAddressMisaligned => 4,
            TrapKind::LoadAccessFault => 5,
            TrapKind::StoreAddressMisaligned => 6,
            TrapKind::StoreAccessFault => 7,
            TrapKind::EcallFromU => 8,
            TrapKind::DasicsLoadFault => 24,
            TrapKind::DasicsStoreFault => 25,
            TrapKind::DasicsJumpFault => 26,
            TrapKind::DasicsEcallFault => 27,
        }
    }

    pub fn from_code(code: u64) -> Option<TrapKind> {
        TrapKind::ALL.into_iter().find(|k| k.code() == code)
    }

    pub fn is_dasics(self) -> bool {
        self.code() >= 24
    }
}

impl fmt::Display for TrapKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrapCause {
    pub kind: TrapKind,
    pub tval: u64,
}

impl TrapCause {
    pub fn new(kind: TrapKind, tval: u64) -> Self {
        TrapCause { kind, tval }
    }

    pub fn code(&self) -> u64 {
        self.kind.code()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum FatalReason {
    #[error("trap {cause} taken with no handler installed (utvec = 0)")]
    NoHandler { cause: TrapKind },
}

/// Enters the user trap handler.
pub fn raise_user_trap(
    csrs: &mut CsrFile,
    regs: &mut RegisterFile,
    cause: TrapCause,
    epc: u64,
) -> Result<(), FatalReason> {
    if csrs.utvec == 0 {
        return Err(FatalReason::NoHandler { cause: cause.kind });
    }
    csrs.uepc = epc & !3;
    csrs.ucause = cause.code();
    csrs.utval = cause.tval;
    let uie = csrs.ustatus & USTATUS_UIE != 0;
    csrs.ustatus &= !(USTATUS_UIE | USTATUS_UPIE);
    if uie {
        csrs.ustatus |= USTATUS_UPIE;
    }
    regs.pc = csrs.utvec;
    Ok(())
}

/// Returns from the user trap handler. The caller has already checked that
/// the issuing pc is trusted.
pub fn uret(csrs: &mut CsrFile, regs: &mut RegisterFile) {
    let upie = csrs.ustatus & USTATUS_UPIE != 0;
    csrs.ustatus = USTATUS_UPIE | if upie { USTATUS_UIE } else { 0 };
    regs.pc = csrs.uepc;
}
