//! Criterion 6: ret_pc is single use. Arm→return repeated any number of
//! times passes every time; jumping again to a consumed target faults,
//! whether or not a newer return address is armed.

use dasics_core::csr::DASICS_RET_VALID;
use dasics_core::{
    CheckSubject, EventKind, FaultPolicy, Rule, RunEnd, TransferKind, TrapCause, TrapKind, Verdict,
};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

use crate::support::{image_from_sources, machine, Outcome};

const MANIFEST: &str =
    "entry main\ntrusted 0x10000 0x10fff\nhandler handler\nsegment 0x10000 main.s\n";

#[derive(Debug, Clone, Copy)]
enum Replay {
    None,
    /// Plain jump from trusted code into the library, nothing armed.
    Unarmed,
    /// A fresh dasicscall arms a new return address first.
    WhileArmed,
}

fn program(rounds: u32, replay: Replay, target: u32, pad: u32) -> String {
    let mut s = String::from(
        "main:
    la t0, lib_start
    csrw jmpbound_lo0, t0
    la t0, lib_end
    addi t0, t0, -1
    csrw jmpbound_hi0, t0
    csrwi jmpcfg, 1
    la s0, lib
",
    );
    for r in 0..rounds {
        s += &format!("    la ra, back{r}\n    dasicscall.jr s0\nback{r}:\n");
    }
    match replay {
        Replay::None => {}
        Replay::Unarmed => s += &format!("    la t1, back{target}\n    la t0, lib_replay\n    jr t0\n"),
        Replay::WhileArmed => {
            s += &format!("    la t1, back{target}\n    la ra, fresh\n    la t0, lib_replay\n    dasicscall.jr t0\nfresh:\n")
        }
    }
    s += &format!(
        "    li a0, 0
    li a7, 93
    ecall
handler:
    li a0, 1
    li a7, 93
    ecall
    .align 12
    .org 0x11000
lib_start:
    .zero {pad}
lib:
    jr ra
lib_replay:
    jr t1
lib_end:
",
        pad = 4 * pad
    );
    s
}

fn case(rounds: u32, replay: Replay, target: u32, pad: u32) -> Result<(), TestCaseError> {
    let src = program(rounds, replay, target, pad);
    let image = image_from_sources(MANIFEST, &[("main.s", &src)])
        .map_err(|e| TestCaseError::fail(e.to_string()))?;
    let mut m = machine(&image, true, FaultPolicy::ExitOnFault);
    let result = m.run(10_000);

    let returns: Vec<(u64, bool, Rule)> = result
        .events
        .iter()
        .filter_map(|e| match &e.kind {
            EventKind::Check {
                subject:
                    CheckSubject::Transfer {
                        kind: TransferKind::Jalr,
                        target,
                    },
                result,
                ..
            } => Some((*target, result.verdict == Verdict::Pass, result.rule)),
            _ => None,
        })
        .collect();
    let passes: Vec<u64> = returns
        .iter()
        .filter(|(_, ok, rule)| *ok && *rule == Rule::RetPc)
        .map(|(t, _, _)| *t)
        .collect();
    let expected: Vec<u64> = (0..rounds)
        .map(|r| image.symbols[&format!("back{r}")])
        .collect();
    prop_assert_eq!(&passes, &expected, "every armed return passes once");

    match replay {
        Replay::None => {
            prop_assert_eq!(result.end, RunEnd::Halted(0));
            prop_assert_eq!(m.csrs.peek(DASICS_RET_VALID), Some(0));
        }
        Replay::Unarmed | Replay::WhileArmed => {
            let stale = expected[target as usize];
            prop_assert_eq!(
                result.end,
                RunEnd::FaultTerminated(TrapCause::new(TrapKind::DasicsJumpFault, stale))
            );
            prop_assert_eq!(returns.last().copied(), Some((stale, false, Rule::NoMatch)));
            let armed = matches!(replay, Replay::WhileArmed);
            prop_assert_eq!(m.csrs.peek(DASICS_RET_VALID), Some(u64::from(armed)));
        }
    }
    Ok(())
}

pub fn run() -> Outcome {
    let mut runner = TestRunner::new(Config {
        cases: 96,
        failure_persistence: None,
        ..Config::default()
    });
    let strategy = (1u32..=4, 0u32..3, any::<prop::sample::Index>(), 0u32..32);
    runner
        .run(&strategy, |(rounds, mode, target, pad)| {
            let replay = [Replay::None, Replay::Unarmed, Replay::WhileArmed][mode as usize];
            case(rounds, replay, target.index(rounds as usize) as u32, pad)
        })
        .map_err(|e| e.to_string())?;
    // the fixed arm→return→re-arm→return sequence
    case(2, Replay::None, 0, 0).map_err(|e| e.to_string())?;
    Ok("96 generated cases + arm/return/re-arm/return; replays of consumed targets fault".into())
}
