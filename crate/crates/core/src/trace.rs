//! Structured trace events and their one-line text form.
//!
//! The text form is a stable contract: field order and spelling never change
//! for identical inputs, so traces can be compared byte for byte.

use std::fmt;

use crate::engine::{AccessKind, CheckResult, CodeTag, TransferKind, Verdict};
use crate::isa::Instruction;
use crate::syscall::syscall_name;
use crate::trap::TrapCause;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckSubject {
    Memory {
        kind: AccessKind,
        addr: u64,
        len: u8,
    },
    Transfer {
        kind: TransferKind,
        target: u64,
    },
    /// Arrival in the trusted zone from untrusted code.
    Entry {
        target: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyscallRoute {
    Kernel,
    Intercept,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventKind {
    Exec {
        pc: u64,
        tag: CodeTag,
        inst: Instruction,
    },
    Check {
        pc: u64,
        subject: CheckSubject,
        result: CheckResult,
    },
    Trap {
        cause: TrapCause,
        epc: u64,
        handler: u64,
    },
    Syscall {
        route: SyscallRoute,
        nr: u64,
        args: [u64; 6],
        ret: Option<i64>,
        data: Option<Vec<u8>>,
    },
    CsrWrite {
        pc: u64,
        csr: u16,
        old: u64,
        new: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEvent {
    pub step: u64,
    pub kind: EventKind,
}

impl TraceEvent {
    pub fn is_check(&self) -> bool {
        matches!(self.kind, EventKind::Check { .. })
    }
}

fn verdict_text(v: Verdict) -> String {
    match v {
        Verdict::Pass => "pass".to_owned(),
        Verdict::Fault(kind) => format!("fault({kind})"),
    }
}

fn csr_label(addr: u16) -> String {
    match crate::csr::csr_name(addr) {
        Some(name) => format!("{name}({addr:#05x})"),
        None => format!("{addr:#05x}"),
    }
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:06} ", self.step)?;
        match &self.kind {
            EventKind::Exec { pc, tag, inst } => write!(
                f,
                "EXEC pc={pc:#018x} tag={} word={:#010x} {inst}",
                tag.letter(),
                inst.raw
            ),
            EventKind::Check {
                pc,
                subject,
                result,
            } => {
                write!(f, "CHECK pc={pc:#018x} ")?;
                match subject {
                    CheckSubject::Memory { kind, addr, len } => {
                        write!(f, "kind={} addr={addr:#018x} len={len}", kind.name())?
                    }
                    CheckSubject::Transfer { kind, target } => {
                        write!(f, "kind={} target={target:#018x}", kind.name())?
                    }
                    CheckSubject::Entry { target } => {
                        write!(f, "kind=entry target={target:#018x}")?
                    }
                }
                write!(
                    f,
                    " verdict={} rule={}",
                    verdict_text(result.verdict),
                    result.rule
                )
            }
            EventKind::Trap {
                cause,
                epc,
                handler,
            } => write!(
                f,
                "TRAP cause={} code={} epc={epc:#018x} tval={:#018x} handler={handler:#018x}",
                cause.kind,
                cause.code(),
                cause.tval
            ),
            EventKind::Syscall {
                route,
                nr,
                args,
                ret,
                data,
            } => {
                let route = match route {
                    SyscallRoute::Kernel => "kernel",
                    SyscallRoute::Intercept => "intercept",
                };
                let args: Vec<String> = args.iter().map(|a| format!("{a:#x}")).collect();
                write!(
                    f,
                    "SYSCALL route={route} nr={nr} name={} args={}",
                    syscall_name(*nr),
                    args.join(",")
                )?;
                if let Some(ret) = ret {
                    write!(f, " ret={ret}")?;
                }
                if let Some(data) = data {
                    write!(f, " data=\"{}\"", data.escape_ascii())?;
                }
                Ok(())
            }
            EventKind::CsrWrite { pc, csr, old, new } => write!(
                f,
                "CSRW pc={pc:#018x} csr={} old={old:#x} new={new:#x}",
                csr_label(*csr)
            ),
        }
    }
}

/// Renders events one per line, each terminated by a newline.
pub fn render(events: &[TraceEvent]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&e.to_string());
        out.push('\n');
    }
    out
}
