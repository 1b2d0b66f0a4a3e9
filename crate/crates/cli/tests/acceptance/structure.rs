//! Criterion 2: sixteen memory bounds and four jump bounds, each visible in
//! the CSR map and each actually consulted by the checker.

use dasics_core::csr::{self, csr_by_name, implemented_csrs, NUM_JUMP_BOUNDS, NUM_MEM_BOUNDS};
use dasics_core::{CheckSubject, EventKind, FaultPolicy, TransferKind, Verdict};

use crate::support::{ensure, image_from_sources, machine, Outcome};

const MANIFEST: &str = "entry main\ntrusted 0x10000 0x10fff\nsegment 0x10000 main.s\n";
const DATA: u64 = 0x2_0000;

fn program(i: usize, j: usize, probe_offset: u64) -> String {
    let addr = DATA + 16 * i as u64;
    format!(
        "main:
    li t0, {addr:#x}
    csrw libbound_lo{i}, t0
    addi t0, t0, 7
    csrw libbound_hi{i}, t0
    li t0, {mcfg:#x}
    csrw libcfg, t0
    la t0, lib
    csrw jmpbound_lo{j}, t0
    la t0, lib_end
    addi t0, t0, -1
    csrw jmpbound_hi{j}, t0
    li t0, {jcfg:#x}
    csrw jmpcfg, t0
    li a0, {probe:#x}
    la ra, back
    la t0, lib
    dasicscall.jr t0
back:
    li a0, 0
    li a7, 93
    ecall
    .align 12
    .org 0x11000
lib:
    j lib_load
lib_load:
    ld t1, 0(a0)
    ret
lib_end:
    .org 0x20000
data:
    .zero 512
",
        mcfg = 0x3u64 << (4 * i),
        jcfg = 1u64 << j,
        probe = addr + probe_offset,
    )
}

/// Runs the probe and returns (load verdict/rule, jal verdict/rule).
fn probe(i: usize, j: usize, offset: u64) -> Result<(String, String), String> {
    let src = program(i, j, offset);
    let image = image_from_sources(MANIFEST, &[("main.s", &src)]).map_err(|e| e.to_string())?;
    let mut m = machine(&image, true, FaultPolicy::ExitOnFault);
    let result = m.run(200);
    let mut load = None;
    let mut jal = None;
    for e in &result.events {
        if let EventKind::Check {
            subject, result, ..
        } = &e.kind
        {
            let text = format!(
                "{}:{}",
                if result.verdict == Verdict::Pass {
                    "pass"
                } else {
                    "fault"
                },
                result.rule
            );
            match subject {
                CheckSubject::Memory { .. } => load = load.or(Some(text)),
                CheckSubject::Transfer {
                    kind: TransferKind::Jal,
                    ..
                } => jal = jal.or(Some(text)),
                _ => {}
            }
        }
    }
    Ok((
        load.ok_or("no load check event")?,
        jal.ok_or("no jal check event")?,
    ))
}

pub fn run() -> Outcome {
    ensure!(NUM_MEM_BOUNDS == 16, "NUM_MEM_BOUNDS = {NUM_MEM_BOUNDS}");
    ensure!(NUM_JUMP_BOUNDS == 4, "NUM_JUMP_BOUNDS = {NUM_JUMP_BOUNDS}");

    let all = implemented_csrs();
    let in_range = |lo: u16, hi: u16| all.iter().filter(|a| (lo..=hi).contains(*a)).count();
    ensure!(
        in_range(csr::LIBBOUND_BASE, csr::LIBCFG - 1) == 32,
        "memory bound CSRs: {}",
        in_range(csr::LIBBOUND_BASE, csr::LIBCFG - 1)
    );
    ensure!(
        in_range(csr::JMPBOUND_BASE, csr::JMPCFG - 1) == 8,
        "jump bound CSRs: {}",
        in_range(csr::JMPBOUND_BASE, csr::JMPCFG - 1)
    );
    for i in 0..16 {
        ensure!(
            csr_by_name(&format!("libbound_lo{i}")) == Some(0x880 + 2 * i as u16)
                && csr_by_name(&format!("libbound_hi{i}")) == Some(0x881 + 2 * i as u16),
            "libbound{i} address"
        );
    }
    for j in 0..4 {
        ensure!(
            csr_by_name(&format!("jmpbound_lo{j}")) == Some(0x8C0 + 2 * j as u16)
                && csr_by_name(&format!("jmpbound_hi{j}")) == Some(0x8C1 + 2 * j as u16),
            "jmpbound{j} address"
        );
    }
    ensure!(
        csr_by_name("libbound_lo16").is_none(),
        "a 17th memory bound exists"
    );
    ensure!(
        csr_by_name("jmpbound_lo4").is_none(),
        "a 5th jump bound exists"
    );

    let mut audited = 0;
    for i in 0..NUM_MEM_BOUNDS {
        let j = i % NUM_JUMP_BOUNDS;
        let (load, jal) = probe(i, j, 0)?;
        ensure!(
            load == format!("pass:membound[{i}]"),
            "bound {i}: load check {load}"
        );
        ensure!(
            jal == format!("pass:jmpbound[{j}]"),
            "jump bound {j}: jal check {jal}"
        );
        let (load, _) = probe(i, j, 8)?;
        ensure!(
            load == "fault:none",
            "bound {i}: out-of-range load gave {load}"
        );
        audited += 2;
    }
    Ok(format!(
        "16 memory + 4 jump bounds in the CSR map; {audited} probe runs matched their own bound"
    ))
}
