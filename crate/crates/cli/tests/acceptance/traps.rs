//! Criterion 8: a trap followed by an immediate `uret` restores the exact
//! pre-fault state, and a handler that widens a bound can resume the faulting
//! instruction, which then passes.

use dasics_cli::{run_image, RunOptions};
use dasics_core::csr::{libbound_hi, UCAUSE, UEPC, UTVAL};
use dasics_core::{
    CheckSubject, CsrFile, EventKind, FaultPolicy, Image, Kernel, Machine, Memory, OutcomeKind,
    RegisterFile, Rule, RunEnd, TrapKind, Verdict,
};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

use crate::support::{ensure, fixture, image_from_sources, machine, Outcome};

const MANIFEST: &str = "entry main
trusted 0x10000 0x10fff
handler handler
segment 0x10000 main.s
segment 0x20000 data.s
";

const MAIN: &str = "
main:
    li t0, 0x20000
    csrw libbound_lo0, t0
    li t0, 0x200ff
    csrw libbound_hi0, t0
    li t0, 7
    csrw libcfg, t0
    la t0, lib
    csrw jmpbound_lo0, t0
    la t0, lib_end
    addi t0, t0, -1
    csrw jmpbound_hi0, t0
    csrwi jmpcfg, 1
    la ra, done
    dasicscall.jr s0
done:
    li a0, 0
    li a7, 93
    ecall
handler:
    uret
    .align 12
    .org 0x11000
lib:
    ld t1, 0(a0)
    sd t1, 0(a0)
    jalr zero, 0(a1)
    beq zero, zero, main + 16
    csrr t1, libcfg
    ecall
    ld t1, 1(a2)
    uret
lib_end:
";

/// (expected cause, a0, a1, a2) for each faulting instruction in `lib`.
const CASES: [(TrapKind, u64, u64, u64); 8] = [
    (TrapKind::DasicsLoadFault, 0x20100, 0, 0),
    (TrapKind::DasicsStoreFault, 0x20100, 0, 0),
    (TrapKind::DasicsJumpFault, 0, 0x10004, 0),
    (TrapKind::DasicsJumpFault, 0, 0, 0),
    (TrapKind::IllegalInstruction, 0, 0, 0),
    (TrapKind::DasicsEcallFault, 0, 0, 0),
    (TrapKind::LoadAddressMisaligned, 0, 0, 0x20010),
    (TrapKind::IllegalInstruction, 0, 0, 0),
];

/// Architectural state minus the three CSRs a trap necessarily writes.
fn visible(m: &Machine) -> (RegisterFile, Memory, CsrFile, Kernel) {
    let mut csrs = m.csrs.clone();
    for csr in [UEPC, UCAUSE, UTVAL] {
        csrs.poke(csr, 0);
    }
    (m.regs.clone(), m.mem.clone(), csrs, m.kernel.clone())
}

fn round_trip(image: &Image, case: usize, regs: &[u64]) -> Result<(), TestCaseError> {
    let (kind, a0, a1, a2) = CASES[case];
    let target = image.symbols["lib"] + 4 * case as u64;
    let mut m = machine(image, true, FaultPolicy::ResumeViaHandler);
    m.regs.set(8, target);
    while m.regs.pc != target {
        let out = m.step();
        prop_assert_eq!(out.kind, OutcomeKind::Continue);
    }
    for (r, v) in (1..32).zip(regs) {
        if r != 8 {
            m.regs.set(r, *v);
        }
    }
    m.regs.set(10, a0);
    m.regs.set(11, a1);
    m.regs.set(12, a2);
    let before = visible(&m);
    let bank = m.csrs.dasics_bank();

    let trap = m.step();
    let OutcomeKind::Trapped(cause) = trap.kind else {
        return Err(TestCaseError::fail(format!(
            "case {case}: no trap, got {:?}",
            trap.kind
        )));
    };
    prop_assert_eq!(cause.kind, kind);
    prop_assert_eq!(m.regs.pc, image.symbols["handler"]);
    prop_assert_eq!(m.csrs.peek(UEPC), Some(target));
    prop_assert_eq!(m.csrs.ustatus & 1, 0, "UIE cleared in the handler");

    let back = m.step();
    prop_assert_eq!(back.kind, OutcomeKind::Continue);
    prop_assert_eq!(m.csrs.dasics_bank(), bank);
    prop_assert!(visible(&m) == before, "case {case}: state not restored");
    Ok(())
}

fn resume_after_widening() -> Outcome {
    let image = Image::from_manifest_path(&fixture("resume_widen")).map_err(|e| e.to_string())?;
    let shared = image.symbols["shared"];
    let report = run_image(
        &image,
        &RunOptions {
            fault_policy: FaultPolicy::ResumeViaHandler,
            ..RunOptions::default()
        },
    );
    ensure!(
        report.result.end == RunEnd::Halted(0),
        "resume ended {:?}",
        report.result.end
    );
    ensure!(
        report.result.traps.len() == 1
            && report.result.traps[0].kind == TrapKind::DasicsStoreFault
            && report.result.traps[0].tval == shared + 32,
        "traps {:?}",
        report.result.traps
    );
    let mut seen_fault = None;
    let mut seen_widen = false;
    let mut retried = false;
    for e in &report.result.events {
        match &e.kind {
            EventKind::Check {
                pc,
                subject: CheckSubject::Memory { addr, .. },
                result,
            } if *addr == shared + 32 => match (seen_fault, result.verdict) {
                (None, Verdict::Fault(TrapKind::DasicsStoreFault)) => seen_fault = Some(*pc),
                (Some(fpc), Verdict::Pass) => {
                    ensure!(*pc == fpc, "retry at {pc:#x}, fault was at {fpc:#x}");
                    ensure!(seen_widen, "retry passed before the bound was widened");
                    ensure!(
                        result.rule == Rule::MemBound(0),
                        "retry passed via {}",
                        result.rule
                    );
                    retried = true;
                }
                other => return Err(format!("unexpected check sequence {other:?}")),
            },
            EventKind::CsrWrite { csr, new, .. } if *csr == libbound_hi(0) => {
                seen_widen = seen_fault.is_some() && *new == shared + 63;
            }
            _ => {}
        }
    }
    ensure!(retried, "faulting store was not re-executed");
    ensure!(
        report.stdout == b"stored=0x0000000000005a5a\n",
        "output {:?}",
        String::from_utf8_lossy(&report.stdout)
    );
    Ok("widened bound, re-executed store passed".into())
}

pub fn run() -> Outcome {
    let image = image_from_sources(MANIFEST, &[("main.s", MAIN), ("data.s", "    .zero 256\n")])
        .map_err(|e| e.to_string())?;
    let mut runner = TestRunner::new(Config {
        cases: 128,
        failure_persistence: None,
        ..Config::default()
    });
    let strategy = (0..CASES.len(), prop::collection::vec(any::<u64>(), 31));
    runner
        .run(&strategy, |(case, regs)| round_trip(&image, case, &regs))
        .map_err(|e| e.to_string())?;
    for case in 0..CASES.len() {
        round_trip(&image, case, &[0; 31]).map_err(|e| format!("case {case}: {e}"))?;
    }
    let resume = resume_after_widening()?;
    Ok(format!(
        "{} trap kinds round-trip exactly (136 cases); {resume}",
        CASES.len()
    ))
}
