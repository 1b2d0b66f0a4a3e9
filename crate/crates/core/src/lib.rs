//! RV64I emulator with the DASICS in-address-space compartmentalization
//! extension: trusted-zone tagging, bound-register checks on data and
//! control flow, same-privilege trap delivery, and syscall interception.
//!
//! The crate also carries the guest toolchain used to build images: a small
//! two-pass assembler, a manifest loader, and an emulated kernel backed by an
//! in-memory filesystem.

pub mod asm;
pub mod csr;
pub mod engine;
pub mod isa;
pub mod loader;
pub mod machine;
pub mod memory;
pub mod syscall;
pub mod trace;
pub mod trap;

pub use asm::{assemble, assemble_units, AsmError, Program, SourceUnit};
pub use csr::{CsrError, CsrFile, CsrOp};
pub use engine::{
    check_memory, check_tag_transition, check_transfer, intercept_ecall, tag_pc, AccessKind,
    Arrival, CheckResult, CodeTag, DasicsState, EcallRoute, JumpBound, MemBound, RetSlot, Rule,
    TransferKind, Verdict,
};
pub use isa::{decode, encode, DecodeError, Instruction, Op, RegisterFile};
pub use loader::{load, Image, LoadError, LoadOptions, Manifest};
pub use machine::{
    FaultPolicy, Machine, MachineConfig, OutcomeKind, RunEnd, RunResult, StepOutcome,
};
pub use memory::{MemError, Memory};
pub use syscall::{Kernel, VirtualFs};
pub use trace::{render, CheckSubject, EventKind, SyscallRoute, TraceEvent};
pub use trap::{FatalReason, TrapCause, TrapKind};
