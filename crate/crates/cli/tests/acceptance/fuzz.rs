//! Criterion 5: random instruction sequences confined to an untrusted region
//! never change the DASICS bank, never enter trusted code except through
//! ret_pc, maincall_entry or trap delivery, and never reach the kernel.

use dasics_core::csr::{self, implemented_csrs, CFG_READ, CFG_VALID, CFG_WRITE};
use dasics_core::{
    encode, CheckSubject, CodeTag, EventKind, FaultPolicy, Image, Instruction, Machine, Op, Rule,
    SyscallRoute, Verdict,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::support::{ensure, image_from_sources, machine, Outcome};

pub const SEQUENCES: u64 = 10_000;
const MAX_STEPS: u64 = 400;
const REGION: u64 = 0xF000;
const REGION_WORDS: u64 = 1024;
const TRUSTED_LO: u64 = 0x10000;
const TRUSTED_HI: u64 = 0x10FFF;
const DATA: u64 = 0x20000;

const MANIFEST: &str = "entry stub
trusted 0x10000 0x10fff
handler handler
segment 0x10000 trusted.s
segment 0xf000 region.s
segment 0x20000 data.s
segment 0x30000 stack.s
";

const TRUSTED: &str = "
stub:
    dasicscall.jr t6
return_point:
    li a0, 0
    li a7, 93
    ecall
# Skips the faulting instruction unless that would resume in trusted code.
handler:
    csrr t0, uepc
    addi t0, t0, 4
    li t1, 0x10000
    bltu t0, t1, handler_resume
    li t1, 0x10fff
    bgtu t0, t1, handler_resume
    li a0, 100
    li a7, 93
    ecall
handler_resume:
    csrw uepc, t0
    uret
# Returns to the caller unless the return address is trusted.
gateway:
    li t1, 0x10000
    bltu ra, t1, gateway_ok
    li t1, 0x10fff
    bgtu ra, t1, gateway_ok
    li a0, 101
    li a7, 93
    ecall
gateway_ok:
    jr ra
    .align 12
";

struct Harness {
    base: Machine,
    return_point: u64,
    handler: u64,
    gateway: u64,
}

fn harness() -> Result<Harness, String> {
    let image: Image = image_from_sources(
        MANIFEST,
        &[
            ("trusted.s", TRUSTED),
            ("region.s", "    .zero 4096\n"),
            ("data.s", "    .zero 1024\n"),
            ("stack.s", "    .zero 0x10000\n"),
        ],
    )
    .map_err(|e| e.to_string())?;
    let mut m = machine(&image, true, FaultPolicy::ResumeViaHandler);
    let gateway = image.symbols["gateway"];
    let pokes = [
        (csr::libbound_lo(0), DATA),
        (csr::libbound_hi(0), DATA + 0xFF),
        (csr::libbound_lo(1), DATA + 0x100),
        (csr::libbound_hi(1), DATA + 0x1FF),
        (
            csr::LIBCFG,
            ((CFG_VALID | CFG_READ) << 4) | CFG_VALID | CFG_READ | CFG_WRITE,
        ),
        (csr::jmpbound_lo(0), REGION),
        (csr::jmpbound_hi(0), REGION + 4 * REGION_WORDS - 1),
        (csr::JMPCFG, 1),
        (csr::DASICS_MAINCALL_ENTRY, gateway),
        (csr::DASICS_MAINCALL_VALID, 1),
    ];
    for (addr, value) in pokes {
        m.csrs.poke(addr, value);
    }
    Ok(Harness {
        base: m,
        return_point: image.symbols["return_point"],
        handler: image.symbols["handler"],
        gateway,
    })
}

const SENSITIVE: [Op; 10] = [
    Op::Ecall,
    Op::DasicscallJr,
    Op::Uret,
    Op::Csrrw,
    Op::Csrrs,
    Op::Csrrc,
    Op::Csrrwi,
    Op::Csrrsi,
    Op::Jalr,
    Op::Jal,
];

fn random_word(rng: &mut ChaCha8Rng, csrs: &[u16]) -> u32 {
    if rng.gen_ratio(1, 12) {
        return rng.gen();
    }
    let op = if rng.gen_ratio(1, 4) {
        SENSITIVE[rng.gen_range(0..SENSITIVE.len())]
    } else {
        Op::ALL[rng.gen_range(0..Op::ALL.len())]
    };
    let imm: i64 = if op == Op::Jal {
        if rng.gen_ratio(1, 8) {
            rng.gen_range(-(1 << 20)..(1 << 20)) & !1
        } else {
            4 * rng.gen_range(-1024..1024)
        }
    } else if op.is_branch() {
        4 * rng.gen_range(-512..512)
    } else if op.is_load() || op.is_store() || op == Op::Jalr {
        rng.gen_range(-64..64)
    } else if matches!(op, Op::Lui | Op::Auipc) {
        i64::from(rng.gen::<u32>() & 0xFFFF_F000)
    } else {
        rng.gen_range(-2048..2048)
    };
    let csr = if rng.gen_ratio(1, 5) {
        rng.gen_range(0..0x1000)
    } else {
        csrs[rng.gen_range(0..csrs.len())]
    };
    encode(&Instruction::new(
        op,
        rng.gen_range(0..32),
        rng.gen_range(0..32),
        rng.gen_range(0..32),
        imm,
        csr,
    ))
}

fn random_reg(rng: &mut ChaCha8Rng, h: &Harness) -> u64 {
    match rng.gen_range(0..9) {
        0 => DATA + rng.gen_range(0..0x200),
        1 => TRUSTED_LO + 4 * rng.gen_range(0..0x400),
        2 => REGION + 4 * rng.gen_range(0..REGION_WORDS),
        3 => [h.gateway, h.return_point, h.handler][rng.gen_range(0..3)],
        4 => 0x40000 - rng.gen_range(0..0x1000),
        5 => rng.gen_range(0..128),
        6 => [93, 64, 56, 61, 79, 57, 63][rng.gen_range(0..7)],
        _ => rng.gen(),
    }
}

#[derive(Default)]
struct Stats {
    steps: u64,
    traps: u64,
    intercepts: u64,
    ret_entries: u64,
    gateway_entries: u64,
    trap_entries: u64,
}

fn audit(h: &Harness, seq: u64, m: &mut Machine, stats: &mut Stats) -> Result<(), String> {
    // the trusted stub arms ret_pc and enters the region
    let first = m.step();
    ensure!(
        first.events.iter().all(|e| !e.is_check()),
        "sequence {seq}: stub was checked"
    );
    let before = m.csrs.dasics_bank();
    let result = m.run(MAX_STEPS);
    stats.steps += result.steps;
    stats.traps += result.traps.len() as u64;

    let trusted = |pc: u64| (TRUSTED_LO..=TRUSTED_HI).contains(&pc);
    let mut ret_consumed = false;
    let mut ret_pending_step = None;
    let mut last_exec: Option<CodeTag> = None;
    let mut trap_since_exec = false;
    let mut exec_tag_by_step = std::collections::HashMap::new();
    for e in &result.events {
        match &e.kind {
            EventKind::Exec { pc, tag, .. } => {
                ensure!(
                    (*tag == CodeTag::Trusted) == trusted(*pc),
                    "sequence {seq}: pc {pc:#x} tagged {tag:?}"
                );
                if *tag == CodeTag::Trusted && last_exec == Some(CodeTag::Untrusted) {
                    if trap_since_exec {
                        ensure!(*pc == h.handler, "sequence {seq}: trap entry at {pc:#x}");
                        stats.trap_entries += 1;
                    } else if *pc == h.gateway {
                        stats.gateway_entries += 1;
                    } else if *pc == h.return_point && ret_pending_step == Some(e.step - 1) {
                        ret_pending_step = None;
                        stats.ret_entries += 1;
                    } else {
                        return Err(format!(
                            "sequence {seq}: untrusted code entered trusted pc {pc:#x} at step {}",
                            e.step
                        ));
                    }
                }
                exec_tag_by_step.insert(e.step, *tag);
                last_exec = Some(*tag);
                trap_since_exec = false;
            }
            EventKind::Trap { .. } => trap_since_exec = true,
            EventKind::CsrWrite { pc, csr, .. } => {
                ensure!(
                    trusted(*pc),
                    "sequence {seq}: CSR {csr:#x} written from {pc:#x}"
                );
                ensure!(
                    !csr::is_dasics_bank(*csr),
                    "sequence {seq}: DASICS CSR {csr:#x} written"
                );
            }
            EventKind::Syscall { route, nr, .. } => match route {
                SyscallRoute::Intercept => stats.intercepts += 1,
                SyscallRoute::Kernel => ensure!(
                    exec_tag_by_step.get(&e.step) == Some(&CodeTag::Trusted),
                    "sequence {seq}: kernel syscall {nr} dispatched from untrusted code"
                ),
            },
            EventKind::Check {
                subject: CheckSubject::Transfer { target, .. },
                result,
                ..
            } if result.rule == Rule::RetPc => {
                ensure!(
                    result.verdict == Verdict::Pass && *target == h.return_point && !ret_consumed,
                    "sequence {seq}: ret_pc matched twice or for the wrong target"
                );
                ret_consumed = true;
                ret_pending_step = Some(e.step);
            }
            _ => {}
        }
    }

    let after = m.csrs.dasics_bank();
    for ((addr, old), (_, new)) in before.iter().zip(&after) {
        if old == new {
            continue;
        }
        let consumed = *addr == csr::DASICS_RET_VALID && *old == 1 && *new == 0 && ret_consumed;
        ensure!(
            consumed,
            "sequence {seq}: DASICS CSR {addr:#x} changed {old:#x} -> {new:#x}"
        );
    }
    Ok(())
}

pub fn run() -> Outcome {
    let h = harness()?;
    let csrs = implemented_csrs();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0005);
    let mut stats = Stats::default();
    for seq in 0..SEQUENCES {
        let mut m = h.base.clone();
        let words: Vec<u8> = (0..REGION_WORDS)
            .flat_map(|_| random_word(&mut rng, &csrs).to_le_bytes())
            .collect();
        m.mem
            .write_bytes(REGION, &words)
            .map_err(|e| e.to_string())?;
        for r in 1..32 {
            let v = random_reg(&mut rng, &h);
            m.regs.set(r, v);
        }
        let entry_word = if rng.gen_ratio(1, 5) {
            rng.gen_range(REGION_WORDS - 24..REGION_WORDS)
        } else {
            rng.gen_range(0..REGION_WORDS)
        };
        m.regs.set(31, REGION + 4 * entry_word);
        m.regs.set(1, h.return_point);
        audit(&h, seq, &mut m, &mut stats)?;
    }
    ensure!(stats.ret_entries > 0, "no sequence returned through ret_pc");
    ensure!(stats.gateway_entries > 0, "no sequence reached the gateway");
    Ok(format!(
        "{SEQUENCES} sequences, {} steps, {} traps ({} intercepted ecalls); entries: {} ret_pc, {} gateway, {} trap; 0 violations",
        stats.steps, stats.traps, stats.intercepts, stats.ret_entries, stats.gateway_entries, stats.trap_entries
    ))
}
