//! Criteria 3 and 4: the two case studies, run in-process from the shipped
//! fixtures.

use dasics_cli::{run_image, RunOptions, RunReport};
use dasics_core::{
    CheckSubject, EventKind, Image, RunEnd, SyscallRoute, TransferKind, TrapKind, Verdict,
};

use crate::support::{contains_bytes, ensure, fixture, memory_checks, overlaps, Outcome};

// Frame layout of case1_main.s: sp = 0x40000 - 112.
const FRAME: u64 = 0x4_0000 - 112;
const SECRET: (u64, u64) = (FRAME + 64, FRAME + 96);
const REG_SAVE: (u64, u64) = (FRAME + 96, FRAME + 112);
const SECRET_TEXT: &[u8] = b"TOP-SECRET:k3y=0xC0FFEE;pin=4242";

fn image(name: &str) -> Result<Image, String> {
    Image::from_manifest_path(&fixture(name)).map_err(|e| format!("{name}: {e}"))
}

fn run(image: &Image, dasics: bool) -> RunReport {
    run_image(
        image,
        &RunOptions {
            dasics,
            ..RunOptions::default()
        },
    )
}

fn fault_kind(r: &RunReport) -> Option<TrapKind> {
    match r.result.end {
        RunEnd::FaultTerminated(c) => Some(c.kind),
        _ => None,
    }
}

fn leaked_in_syscalls(r: &RunReport) -> bool {
    r.result.events.iter().any(|e| match &e.kind {
        EventKind::Syscall { data: Some(d), .. } => contains_bytes(d, SECRET_TEXT),
        _ => false,
    })
}

pub fn case1() -> Outcome {
    // benign: identical output with and without DASICS
    let benign = image("case1_benign")?;
    let on = run(&benign, true);
    let off = run(&benign, false);
    ensure!(
        on.result.end == RunEnd::Halted(0),
        "benign ended {:?}",
        on.result.end
    );
    ensure!(
        on.stdout == off.stdout,
        "benign output differs between on and off"
    );
    ensure!(
        on.stdout == b"result=0x0000000000000820\n",
        "benign output {:?}",
        String::from_utf8_lossy(&on.stdout)
    );

    // overread: faults on the first secret byte; off leaks it
    let overread = image("case1_overread")?;
    let on = run(&overread, true);
    ensure!(
        fault_kind(&on) == Some(TrapKind::DasicsLoadFault),
        "overread ended {:?}",
        on.result.end
    );
    let secret_loads_passed = memory_checks(&on.result.events)
        .iter()
        .any(|(_, a, l, pass, _)| *pass && overlaps(*a, *l, SECRET.0, SECRET.1));
    ensure!(
        !secret_loads_passed,
        "an untrusted access to the secret passed"
    );
    ensure!(
        !leaked_in_syscalls(&on) && !contains_bytes(&on.stdout, SECRET_TEXT),
        "secret leaked with DASICS on"
    );
    let lib_stack = on
        .machine
        .mem
        .read_bytes(FRAME - 1024, 1024)
        .map_err(|e| e.to_string())?;
    ensure!(
        !contains_bytes(&lib_stack, &SECRET_TEXT[..8]),
        "secret bytes reached the library's stack"
    );
    let off = run(&overread, false);
    ensure!(
        off.result.end == RunEnd::Halted(0),
        "overread off ended {:?}",
        off.result.end
    );
    ensure!(
        leaked_in_syscalls(&off) && contains_bytes(&off.stdout, SECRET_TEXT),
        "overread off did not exfiltrate the secret"
    );

    // tamper: store into the saved registers faults; off diverts to the gadget
    let tamper = image("case1_tamper")?;
    let on = run(&tamper, true);
    ensure!(
        fault_kind(&on) == Some(TrapKind::DasicsStoreFault),
        "tamper ended {:?}",
        on.result.end
    );
    let slot_stores_passed = memory_checks(&on.result.events)
        .iter()
        .any(|(k, a, l, pass, _)| {
            *k == "store" && *pass && overlaps(*a, *l, REG_SAVE.0, REG_SAVE.1)
        });
    ensure!(
        !slot_stores_passed,
        "an untrusted store to the saved registers passed"
    );
    let off = run(&tamper, false);
    ensure!(
        off.result.end == RunEnd::Halted(66),
        "tamper off ended {:?}",
        off.result.end
    );

    // forge: with the slot inside the bound, the jump to the gadget faults
    let forge = image("case1_forge")?;
    let gadget = forge.symbols["gadget"];
    let on = run(&forge, true);
    ensure!(
        on.result.end
            == RunEnd::FaultTerminated(dasics_core::TrapCause::new(
                TrapKind::DasicsJumpFault,
                gadget
            )),
        "forge ended {:?}",
        on.result.end
    );
    ensure!(
        !on.stdout.starts_with(b"gadget"),
        "gadget ran with DASICS on"
    );
    let off = run(&forge, false);
    ensure!(
        off.result.end == RunEnd::Halted(66),
        "forge off ended {:?}",
        off.result.end
    );

    // rop probe: the taken branch is refused by the active-zone rule
    let rop = image("case1_rop_probe")?;
    let on = run(&rop, true);
    ensure!(
        fault_kind(&on) == Some(TrapKind::DasicsJumpFault),
        "rop ended {:?}",
        on.result.end
    );
    let branch_fault = on.result.events.iter().any(|e| {
        matches!(
            &e.kind,
            EventKind::Check {
                subject: CheckSubject::Transfer { kind: TransferKind::BranchTaken, target },
                result,
                ..
            } if *target == gadget && result.verdict == Verdict::Fault(TrapKind::DasicsJumpFault)
        )
    });
    ensure!(branch_fault, "no faulting branch check into the gadget");
    let off = run(&rop, false);
    ensure!(
        off.result.end == RunEnd::Halted(66),
        "rop off ended {:?}",
        off.result.end
    );

    Ok("overread→LoadFault, tamper→StoreFault, forge/rop→JumpFault, benign on==off, off leaks secret".into())
}

pub fn case2() -> Outcome {
    let ls = image("case2_ls")?;
    let on = run(&ls, true);
    let off = run(&ls, false);
    ensure!(
        on.result.end == RunEnd::Halted(0),
        "case2 on ended {:?}",
        on.result.end
    );
    ensure!(
        off.result.end == RunEnd::Halted(0),
        "case2 off ended {:?}",
        off.result.end
    );
    ensure!(
        on.stdout == off.stdout,
        "handler-emulated output differs from the plain run"
    );
    ensure!(
        on.stdout == b"alpha.txt\nbeta.csv\ngamma.log\n",
        "listing {:?}",
        String::from_utf8_lossy(&on.stdout)
    );

    let intercepts: Vec<(u64, [u64; 6])> = on
        .result
        .events
        .iter()
        .filter_map(|e| match &e.kind {
            EventKind::Syscall {
                route: SyscallRoute::Intercept,
                nr,
                args,
                ..
            } => Some((*nr, *args)),
            _ => None,
        })
        .collect();
    let mut nrs: Vec<u64> = intercepts.iter().map(|(n, _)| *n).collect();
    nrs.sort_unstable();
    ensure!(nrs == [56, 61, 79], "intercepted syscalls {nrs:?}");
    let off_intercepts = off.result.events.iter().any(|e| {
        matches!(
            &e.kind,
            EventKind::Syscall {
                route: SyscallRoute::Intercept,
                ..
            }
        )
    });
    ensure!(!off_intercepts, "interception happened with DASICS off");

    // the handler logged each call's parameters
    let log = String::from_utf8_lossy(&on.stderr);
    for (nr, args) in &intercepts {
        let name = dasics_core::syscall::syscall_name(*nr);
        let line = format!(
            "[dasics] {name}({:#018x}, {:#018x}, {:#018x}, {:#018x})",
            args[0], args[1], args[2], args[3]
        );
        ensure!(log.contains(&line), "missing handler log line `{line}`");
    }
    Ok(format!(
        "3 intercepts (fstatat, openat, getdents) logged; stdout identical ({} bytes)",
        on.stdout.len()
    ))
}
