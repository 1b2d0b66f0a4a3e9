//! The stepping interpreter. DASICS checks are hooked into fetch, the
//! branch unit and the memory unit.

use crate::csr::{CsrError, CsrFile, CsrOp};
use crate::engine::{
    arm_return, check_memory, check_tag_transition, check_transfer, intercept_ecall, tag_pc,
    AccessKind, Arrival, CodeTag, DasicsState, EcallRoute, RetSlot, TransferKind, Verdict,
};
use crate::isa::{decode, Instruction, Op, RegisterFile};
use crate::memory::Memory;
use crate::syscall::{Kernel, SyscallEffect};
use crate::trace::{CheckSubject, EventKind, SyscallRoute, TraceEvent};
use crate::trap::{raise_user_trap, uret, FatalReason, TrapCause, TrapKind};

/// What `run` does after a trap has been delivered.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum FaultPolicy {
    /// Stop the run once any trap other than syscall interception is taken.
    #[default]
    ExitOnFault,
    /// Keep running in the guest handler.
    ResumeViaHandler,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MachineConfig {
    pub fault_policy: FaultPolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutcomeKind {
    Continue,
    Trapped(TrapCause),
    Halted(i64),
    FatalError(FatalReason),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepOutcome {
    pub kind: OutcomeKind,
    pub events: Vec<TraceEvent>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunEnd {
    Halted(i64),
    FaultTerminated(TrapCause),
    Fatal(FatalReason),
    StepLimitExceeded,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunResult {
    pub end: RunEnd,
    pub events: Vec<TraceEvent>,
    pub steps: u64,
    /// Every trap taken during the run, in order.
    pub traps: Vec<TrapCause>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stopped {
    Halted(i64),
    Fatal(FatalReason),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Machine {
    pub regs: RegisterFile,
    pub mem: Memory,
    pub csrs: CsrFile,
    pub kernel: Kernel,
    pub config: MachineConfig,
    steps: u64,
    prev: Option<(CodeTag, u64)>,
    arrival: Arrival,
    stopped: Option<Stopped>,
}

impl Default for Machine {
    fn default() -> Self {
        Machine::new(MachineConfig::default())
    }
}

/// Non-trap result of executing one instruction.
enum Effect {
    Next,
    Jump(u64),
    Exit(i64),
}

type Exec = Result<Effect, (TrapCause, u64)>;

fn sext32(v: u64) -> u64 {
    v as u32 as i32 as i64 as u64
}

impl Machine {
    pub fn new(config: MachineConfig) -> Self {
        Machine {
            regs: RegisterFile::new(0),
            mem: Memory::new(),
            csrs: CsrFile::new(),
            kernel: Kernel::default(),
            config,
            steps: 0,
            prev: None,
            arrival: Arrival::Reset,
            stopped: None,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn exit_code(&self) -> Option<i64> {
        match self.stopped {
            Some(Stopped::Halted(code)) => Some(code),
            _ => None,
        }
    }

    /// Executes one instruction or takes one trap.
    pub fn step(&mut self) -> StepOutcome {
        let mut events = Vec::new();
        match self.stopped {
            Some(Stopped::Halted(code)) => {
                return StepOutcome {
                    kind: OutcomeKind::Halted(code),
                    events,
                }
            }
            Some(Stopped::Fatal(reason)) => {
                return StepOutcome {
                    kind: OutcomeKind::FatalError(reason),
                    events,
                }
            }
            None => {}
        }
        let step = self.steps;
        self.steps += 1;
        let state = self.csrs.dasics_state();
        let pc = self.regs.pc;
        let tag = tag_pc(pc, &state);

        let result = self.step_inner(step, pc, tag, &state, &mut events);
        let kind = match result {
            Ok(Effect::Exit(code)) => {
                self.stopped = Some(Stopped::Halted(code));
                OutcomeKind::Halted(code)
            }
            Ok(effect) => {
                self.arrival = match effect {
                    Effect::Jump(target) => {
                        self.regs.pc = target;
                        Arrival::Transfer
                    }
                    _ => {
                        self.regs.pc = pc.wrapping_add(4);
                        Arrival::Sequential
                    }
                };
                self.prev = Some((tag, pc));
                OutcomeKind::Continue
            }
            Err((cause, epc)) => {
                events.push(TraceEvent {
                    step,
                    kind: EventKind::Trap {
                        cause,
                        epc,
                        handler: self.csrs.utvec,
                    },
                });
                match raise_user_trap(&mut self.csrs, &mut self.regs, cause, epc) {
                    Ok(()) => {
                        self.prev = Some((tag, pc));
                        self.arrival = Arrival::TrapEntry;
                        OutcomeKind::Trapped(cause)
                    }
                    Err(reason) => {
                        self.stopped = Some(Stopped::Fatal(reason));
                        OutcomeKind::FatalError(reason)
                    }
                }
            }
        };
        StepOutcome { kind, events }
    }

    fn step_inner(
        &mut self,
        step: u64,
        pc: u64,
        tag: CodeTag,
        state: &DasicsState,
        events: &mut Vec<TraceEvent>,
    ) -> Exec {
        if let Some((prev_tag, prev_pc)) = self.prev {
            if prev_tag == CodeTag::Untrusted && tag == CodeTag::Trusted {
                let result = check_tag_transition(prev_tag, pc, self.arrival, state);
                events.push(TraceEvent {
                    step,
                    kind: EventKind::Check {
                        pc: prev_pc,
                        subject: CheckSubject::Entry { target: pc },
                        result,
                    },
                });
                if let Verdict::Fault(kind) = result.verdict {
                    return Err((TrapCause::new(kind, pc), pc));
                }
            }
        }
        if !pc.is_multiple_of(4) {
            return Err((
                TrapCause::new(TrapKind::InstructionAddressMisaligned, pc),
                pc,
            ));
        }
        let word = self
            .mem
            .read(pc, 4)
            .map_err(|_| (TrapCause::new(TrapKind::InstructionAccessFault, pc), pc))?
            as u32;
        let inst = decode(word).map_err(|_| {
            (
                TrapCause::new(TrapKind::IllegalInstruction, u64::from(word)),
                pc,
            )
        })?;
        events.push(TraceEvent {
            step,
            kind: EventKind::Exec { pc, tag, inst },
        });
        self.execute(step, pc, tag, state, &inst, events)
    }

    /// Vets a control transfer and returns the committed target.
    #[allow(clippy::too_many_arguments)]
    fn transfer(
        &mut self,
        step: u64,
        pc: u64,
        tag: CodeTag,
        state: &DasicsState,
        kind: TransferKind,
        target: u64,
        events: &mut Vec<TraceEvent>,
    ) -> Exec {
        if !target.is_multiple_of(4) {
            return Err((
                TrapCause::new(TrapKind::InstructionAddressMisaligned, target),
                pc,
            ));
        }
        if tag == CodeTag::Untrusted {
            let check = check_transfer(tag, kind, target, state);
            events.push(TraceEvent {
                step,
                kind: EventKind::Check {
                    pc,
                    subject: CheckSubject::Transfer { kind, target },
                    result: check.result,
                },
            });
            if let Verdict::Fault(k) = check.result.verdict {
                return Err((TrapCause::new(k, target), pc));
            }
            if check.consumed_ret {
                self.csrs.set_ret_slot(RetSlot {
                    addr: state.ret_pc.addr,
                    valid: false,
                });
            }
        }
        Ok(Effect::Jump(target))
    }

    #[allow(clippy::too_many_arguments)]
    fn memory_access(
        &mut self,
        step: u64,
        pc: u64,
        tag: CodeTag,
        state: &DasicsState,
        kind: AccessKind,
        addr: u64,
        width: u8,
        events: &mut Vec<TraceEvent>,
    ) -> Result<(), (TrapCause, u64)> {
        let (misaligned, access) = match kind {
            AccessKind::Load => (TrapKind::LoadAddressMisaligned, TrapKind::LoadAccessFault),
            AccessKind::Store => (TrapKind::StoreAddressMisaligned, TrapKind::StoreAccessFault),
        };
        if !addr.is_multiple_of(u64::from(width)) {
            return Err((TrapCause::new(misaligned, addr), pc));
        }
        if tag == CodeTag::Untrusted {
            let result = check_memory(tag, addr, width, kind, state);
            events.push(TraceEvent {
                step,
                kind: EventKind::Check {
                    pc,
                    subject: CheckSubject::Memory {
                        kind,
                        addr,
                        len: width,
                    },
                    result,
                },
            });
            if let Verdict::Fault(k) = result.verdict {
                return Err((TrapCause::new(k, addr), pc));
            }
        }
        if !self.mem.is_range_mapped(addr, u64::from(width)) {
            return Err((TrapCause::new(access, addr), pc));
        }
        Ok(())
    }

    fn execute(
        &mut self,
        step: u64,
        pc: u64,
        tag: CodeTag,
        state: &DasicsState,
        inst: &Instruction,
        events: &mut Vec<TraceEvent>,
    ) -> Exec {
        let rs1 = self.regs.get(inst.rs1);
        let rs2 = self.regs.get(inst.rs2);
        let imm = inst.imm as u64;
        let shamt = (inst.imm & 63) as u32;
        let illegal = || {
            (
                TrapCause::new(TrapKind::IllegalInstruction, u64::from(inst.raw)),
                pc,
            )
        };
        let alu = match inst.op {
            Op::Lui => Some(imm),
            Op::Auipc => Some(pc.wrapping_add(imm)),
            Op::Addi => Some(rs1.wrapping_add(imm)),
            Op::Slti => Some(u64::from((rs1 as i64) < inst.imm)),
            Op::Sltiu => Some(u64::from(rs1 < imm)),
            Op::Xori => Some(rs1 ^ imm),
            Op::Ori => Some(rs1 | imm),
            Op::Andi => Some(rs1 & imm),
            Op::Slli => Some(rs1 << shamt),
            Op::Srli => Some(rs1 >> shamt),
            Op::Srai => Some(((rs1 as i64) >> shamt) as u64),
            Op::Add => Some(rs1.wrapping_add(rs2)),
            Op::Sub => Some(rs1.wrapping_sub(rs2)),
            Op::Sll => Some(rs1 << (rs2 & 63)),
            Op::Slt => Some(u64::from((rs1 as i64) < (rs2 as i64))),
            Op::Sltu => Some(u64::from(rs1 < rs2)),
            Op::Xor => Some(rs1 ^ rs2),
            Op::Srl => Some(rs1 >> (rs2 & 63)),
            Op::Sra => Some(((rs1 as i64) >> (rs2 & 63)) as u64),
            Op::Or => Some(rs1 | rs2),
            Op::And => Some(rs1 & rs2),
            Op::Addiw => Some(sext32(rs1.wrapping_add(imm))),
            Op::Slliw => Some(sext32((rs1 as u32).wrapping_shl(shamt) as u64)),
            Op::Srliw => Some(sext32(((rs1 as u32) >> (shamt & 31)) as u64)),
            Op::Sraiw => Some(((rs1 as i32) >> (shamt & 31)) as i64 as u64),
            Op::Addw => Some(sext32(rs1.wrapping_add(rs2))),
            Op::Subw => Some(sext32(rs1.wrapping_sub(rs2))),
            Op::Sllw => Some(sext32(((rs1 as u32) << (rs2 & 31)) as u64)),
            Op::Srlw => Some(sext32(((rs1 as u32) >> (rs2 & 31)) as u64)),
            Op::Sraw => Some(((rs1 as i32) >> (rs2 & 31)) as i64 as u64),
            _ => None,
        };
        if let Some(value) = alu {
            self.regs.set(inst.rd, value);
            return Ok(Effect::Next);
        }

        match inst.op {
            Op::Lb | Op::Lh | Op::Lw | Op::Ld | Op::Lbu | Op::Lhu | Op::Lwu => {
                let width = inst.op.access_width().expect("load width");
                let addr = rs1.wrapping_add(imm);
                self.memory_access(step, pc, tag, state, AccessKind::Load, addr, width, events)?;
                let raw = self
                    .mem
                    .read(addr, width)
                    .map_err(|_| (TrapCause::new(TrapKind::LoadAccessFault, addr), pc))?;
                let value = match inst.op {
                    Op::Lb => raw as u8 as i8 as i64 as u64,
                    Op::Lh => raw as u16 as i16 as i64 as u64,
                    Op::Lw => sext32(raw),
                    _ => raw,
                };
                self.regs.set(inst.rd, value);
                Ok(Effect::Next)
            }
            Op::Sb | Op::Sh | Op::Sw | Op::Sd => {
                let width = inst.op.access_width().expect("store width");
                let addr = rs1.wrapping_add(imm);
                self.memory_access(step, pc, tag, state, AccessKind::Store, addr, width, events)?;
                self.mem
                    .write(addr, width, rs2)
                    .map_err(|_| (TrapCause::new(TrapKind::StoreAccessFault, addr), pc))?;
                Ok(Effect::Next)
            }
            Op::Beq | Op::Bne | Op::Blt | Op::Bge | Op::Bltu | Op::Bgeu => {
                let taken = match inst.op {
                    Op::Beq => rs1 == rs2,
                    Op::Bne => rs1 != rs2,
                    Op::Blt => (rs1 as i64) < (rs2 as i64),
                    Op::Bge => (rs1 as i64) >= (rs2 as i64),
                    Op::Bltu => rs1 < rs2,
                    _ => rs1 >= rs2,
                };
                if !taken {
                    return Ok(Effect::Next);
                }
                let target = pc.wrapping_add(imm);
                self.transfer(
                    step,
                    pc,
                    tag,
                    state,
                    TransferKind::BranchTaken,
                    target,
                    events,
                )
            }
            Op::Jal => {
                let target = pc.wrapping_add(imm);
                let effect =
                    self.transfer(step, pc, tag, state, TransferKind::Jal, target, events)?;
                self.regs.set(inst.rd, pc.wrapping_add(4));
                Ok(effect)
            }
            Op::Jalr => {
                let target = rs1.wrapping_add(imm) & !1;
                let effect =
                    self.transfer(step, pc, tag, state, TransferKind::Jalr, target, events)?;
                self.regs.set(inst.rd, pc.wrapping_add(4));
                Ok(effect)
            }
            Op::DasicscallJr => {
                let effect =
                    self.transfer(step, pc, tag, state, TransferKind::Dasicscall, rs1, events)?;
                if tag == CodeTag::Trusted {
                    let mut armed = state.clone();
                    arm_return(pc.wrapping_add(4), &mut armed);
                    self.csrs.set_ret_slot(armed.ret_pc);
                }
                Ok(effect)
            }
            Op::Fence => Ok(Effect::Next),
            Op::Ebreak => Err((TrapCause::new(TrapKind::Breakpoint, pc), pc)),
            Op::Uret => {
                if tag == CodeTag::Untrusted {
                    return Err(illegal());
                }
                uret(&mut self.csrs, &mut self.regs);
                Ok(Effect::Jump(self.regs.pc))
            }
            Op::Ecall => self.ecall(step, tag, state, pc, events),
            Op::Csrrw | Op::Csrrs | Op::Csrrc | Op::Csrrwi | Op::Csrrsi | Op::Csrrci => {
                let (operand, src_is_zero) = match inst.op {
                    Op::Csrrw | Op::Csrrs | Op::Csrrc => (rs1, inst.rs1 == 0),
                    _ => (imm & 0x1F, imm & 0x1F == 0),
                };
                let op = match inst.op {
                    Op::Csrrw | Op::Csrrwi => CsrOp::Write,
                    Op::Csrrs | Op::Csrrsi if src_is_zero => CsrOp::Read,
                    Op::Csrrc | Op::Csrrci if src_is_zero => CsrOp::Read,
                    Op::Csrrs | Op::Csrrsi => CsrOp::Set,
                    _ => CsrOp::Clear,
                };
                let old = match self.csrs.access(tag, inst.csr, op, operand) {
                    Ok(old) => old,
                    Err(CsrError::IllegalAccess { .. } | CsrError::BadBounds { .. }) => {
                        return Err(illegal())
                    }
                };
                if op != CsrOp::Read {
                    let new = self.csrs.peek(inst.csr).unwrap_or_default();
                    events.push(TraceEvent {
                        step,
                        kind: EventKind::CsrWrite {
                            pc,
                            csr: inst.csr,
                            old,
                            new,
                        },
                    });
                }
                self.regs.set(inst.rd, old);
                Ok(Effect::Next)
            }
            _ => unreachable!("ALU ops handled above"),
        }
    }

    fn ecall(
        &mut self,
        step: u64,
        tag: CodeTag,
        state: &DasicsState,
        pc: u64,
        events: &mut Vec<TraceEvent>,
    ) -> Exec {
        let nr = self.regs.get(17);
        let args: [u64; 6] = std::array::from_fn(|i| self.regs.get(10 + i as u8));
        match intercept_ecall(tag, state) {
            EcallRoute::ToUserHandler => {
                events.push(TraceEvent {
                    step,
                    kind: EventKind::Syscall {
                        route: SyscallRoute::Intercept,
                        nr,
                        args,
                        ret: None,
                        data: None,
                    },
                });
                Err((TrapCause::new(TrapKind::DasicsEcallFault, 0), pc))
            }
            EcallRoute::ToEmulatedKernel => {
                let record = self
                    .kernel
                    .handle_ecall(&self.regs, &mut self.mem)
                    .map_err(|cause| (cause, pc))?;
                let ret = match record.effect {
                    SyscallEffect::Return(v) => Some(v),
                    SyscallEffect::Exit(_) => None,
                };
                events.push(TraceEvent {
                    step,
                    kind: EventKind::Syscall {
                        route: SyscallRoute::Kernel,
                        nr,
                        args,
                        ret,
                        data: record.data,
                    },
                });
                match record.effect {
                    SyscallEffect::Return(v) => {
                        self.regs.set(10, v as u64);
                        Ok(Effect::Next)
                    }
                    SyscallEffect::Exit(code) => Ok(Effect::Exit(code)),
                }
            }
        }
    }

    /// Steps until the guest halts, a fatal error occurs, the fault policy
    /// stops the run, or `max_steps` steps have executed.
    pub fn run(&mut self, max_steps: u64) -> RunResult {
        let mut events = Vec::new();
        let mut traps = Vec::new();
        let start = self.steps;
        let end = loop {
            if self.steps - start >= max_steps {
                break RunEnd::StepLimitExceeded;
            }
            let outcome = self.step();
            events.extend(outcome.events);
            match outcome.kind {
                OutcomeKind::Continue => {}
                OutcomeKind::Halted(code) => break RunEnd::Halted(code),
                OutcomeKind::FatalError(reason) => break RunEnd::Fatal(reason),
                OutcomeKind::Trapped(cause) => {
                    traps.push(cause);
                    if self.config.fault_policy == FaultPolicy::ExitOnFault
                        && cause.kind != TrapKind::DasicsEcallFault
                    {
                        break RunEnd::FaultTerminated(cause);
                    }
                }
            }
        };
        RunResult {
            end,
            events,
            steps: self.steps - start,
            traps,
        }
    }
}
