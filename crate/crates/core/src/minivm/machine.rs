use serde::{Deserialize, Serialize};

use super::isa::{Instruction, Operand, INSN_SIZE, NUM_REGS, SP};
use super::layout::{MemoryLayout, PagedBytes, DEFAULT_STEP_BUDGET};
use super::program::Program;
use crate::cfg::Edge;
use crate::error::VmError;
use crate::fuzz::FuzzHook;
use crate::shadow::{DetectorReport, MemOp, ShadowMemory};

/// Gap left below every heap allocation so neighbouring buffers never touch.
pub const HEAP_GAP: u32 = 16;

/// Maximum depth of the internal call stack.
pub const MAX_CALL_DEPTH: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VmConfig {
    pub layout: MemoryLayout,
    pub step_budget: u64,
}

impl Default for VmConfig {
    fn default() -> Self {
        VmConfig {
            layout: MemoryLayout::default(),
            step_budget: DEFAULT_STEP_BUDGET,
        }
    }
}

impl VmConfig {
    pub fn with_budget(step_budget: u64) -> Self {
        VmConfig {
            step_budget,
            ..VmConfig::default()
        }
    }
}

/// Complete machine state. Snapshots are values of this type.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VmState {
    pub pc: u32,
    pub regs: [u32; NUM_REGS],
    pub mem: PagedBytes,
    pub halted: bool,
    pub shadow: ShadowMemory,
    /// Addresses of active `CALL` instructions, outermost first.
    pub call_stack: Vec<u32>,
    pub heap_cursor: u32,
    pub program_fingerprint: u64,
}

impl VmState {
    pub fn initial(program: &Program, layout: &MemoryLayout) -> Self {
        let mut shadow = ShadowMemory::new(layout.heap_start, layout.heap_end);
        let mut heap_cursor = layout.heap_start;
        for &(base, len) in program.rodata() {
            shadow.mark_readable(base, len);
            heap_cursor = heap_cursor.max(base.saturating_add(len));
        }
        let mut regs = [0u32; NUM_REGS];
        regs[SP as usize] = layout.stack_top();
        VmState {
            pc: program.entry(),
            regs,
            mem: PagedBytes::new(layout.mem_size, 0),
            halted: false,
            shadow,
            call_stack: Vec::new(),
            heap_cursor,
            program_fingerprint: program.fingerprint(),
        }
    }

    pub fn read_u8(&self, addr: u32) -> u8 {
        self.mem.get(addr)
    }

    pub fn read_u32(&self, addr: u32) -> u32 {
        u32::from_le_bytes([
            self.mem.get(addr),
            self.mem.get(addr + 1),
            self.mem.get(addr + 2),
            self.mem.get(addr + 3),
        ])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    Halted,
    Crashed,
    BreakpointHit,
    BudgetExhausted,
}

/// Crash causes that are not shadow-memory detector reports.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "fault", rename_all = "snake_case")]
pub enum FaultKind {
    Unmapped {
        #[serde(with = "crate::hexfmt")]
        address: u32,
        operation: MemOp,
    },
    ReturnWithoutCall,
    StackCorruption {
        #[serde(with = "crate::hexfmt")]
        expected: u32,
        #[serde(with = "crate::hexfmt")]
        found: u32,
    },
    CallDepthExceeded,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Fault {
    #[serde(flatten)]
    pub kind: FaultKind,
    #[serde(with = "crate::hexfmt")]
    pub pc: u32,
    #[serde(with = "crate::hexfmt::list")]
    pub backtrace: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExecOutcome {
    pub status: ExecStatus,
    /// Inter-block transitions in execution order.
    pub edge_trace: Vec<Edge>,
    pub violations: Vec<DetectorReport>,
    pub fault: Option<Fault>,
    pub steps_used: u64,
    /// Allocations still live when the program halted, as `(base, len)`.
    pub leaks: Vec<(u32, u32)>,
}

impl ExecOutcome {
    /// True when the trace enters, or starts in, block `addr`.
    pub fn reaches(&self, addr: u32) -> bool {
        self.edge_trace
            .iter()
            .any(|e| e.dst == addr || e.src == addr)
    }
}

/// Result of a single instruction step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepEvent {
    /// Block transition taken by this step.
    pub edge: Option<Edge>,
    /// Set once execution has stopped.
    pub stop: Option<ExecStatus>,
}

/// A running interpreter instance bound to one program.
#[derive(Clone, Debug)]
pub struct Machine<'p> {
    program: &'p Program,
    config: VmConfig,
    state: VmState,
    trace: Vec<Edge>,
    record_trace: bool,
    violations: Vec<DetectorReport>,
    fault: Option<Fault>,
    steps: u64,
    status: Option<ExecStatus>,
    breakpoint: Option<u32>,
}

impl<'p> Machine<'p> {
    pub fn new(program: &'p Program, config: VmConfig) -> Self {
        let state = VmState::initial(program, &config.layout);
        Machine::with_state(program, config, state)
    }

    /// Resumes from a snapshot taken on the same program.
    pub fn restore(
        program: &'p Program,
        config: VmConfig,
        snapshot: VmState,
    ) -> Result<Self, VmError> {
        if snapshot.program_fingerprint != program.fingerprint() {
            return Err(VmError::SnapshotMismatch);
        }
        Ok(Machine::with_state(program, config, snapshot))
    }

    fn with_state(program: &'p Program, config: VmConfig, state: VmState) -> Self {
        let status = state.halted.then_some(ExecStatus::Halted);
        Machine {
            program,
            config,
            state,
            trace: Vec::new(),
            record_trace: true,
            violations: Vec::new(),
            fault: None,
            steps: 0,
            status,
            breakpoint: None,
        }
    }

    pub fn program(&self) -> &'p Program {
        self.program
    }

    pub fn config(&self) -> &VmConfig {
        &self.config
    }

    pub fn state(&self) -> &VmState {
        &self.state
    }

    pub fn status(&self) -> Option<ExecStatus> {
        self.status
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn trace(&self) -> &[Edge] {
        &self.trace
    }

    pub fn set_record_trace(&mut self, on: bool) {
        self.record_trace = on;
    }

    pub fn set_breakpoint(&mut self, addr: Option<u32>) {
        self.breakpoint = addr;
    }

    /// Instruction about to execute, if still running.
    pub fn current(&self) -> Option<&'p Instruction> {
        if self.status.is_some() {
            return None;
        }
        self.program.fetch(self.state.pc)
    }

    /// Start address of the block containing pc.
    pub fn current_block(&self) -> u32 {
        self.program
            .block_of(self.state.pc)
            .unwrap_or(self.state.pc)
    }

    pub fn at_block_boundary(&self) -> bool {
        self.program.is_leader(self.state.pc)
    }

    pub fn snapshot(&self) -> Result<VmState, VmError> {
        if !self.at_block_boundary() {
            return Err(VmError::NotAtBlockBoundary(self.state.pc));
        }
        Ok(self.state.clone())
    }

    /// Current backtrace: pc first, then active call sites innermost first.
    pub fn backtrace(&self) -> Vec<u32> {
        std::iter::once(self.state.pc)
            .chain(self.state.call_stack.iter().rev().copied())
            .collect()
    }

    pub fn step(&mut self, input: &[u8]) -> StepEvent {
        self.step_forced(input, None)
    }

    /// Executes one instruction. `force` overrides the direction of a
    /// conditional branch; it is ignored for other instructions.
    pub fn step_forced(&mut self, input: &[u8], force: Option<bool>) -> StepEvent {
        if let Some(status) = self.status {
            return StepEvent {
                edge: None,
                stop: Some(status),
            };
        }
        if self.steps >= self.config.step_budget {
            return self.stop(ExecStatus::BudgetExhausted);
        }
        let pc = self.state.pc;
        let insn = *self
            .program
            .fetch(pc)
            .expect("pc always addresses a valid instruction");
        let mut next = pc + INSN_SIZE;

        macro_rules! mem {
            ($e:expr) => {
                match $e {
                    Ok(v) => v,
                    Err(()) => {
                        self.steps += 1;
                        return self.stop(ExecStatus::Crashed);
                    }
                }
            };
        }

        match insn {
            Instruction::LoadI { rd, imm } => self.set_reg(rd, imm),
            Instruction::Mov { rd, rs } => self.set_reg(rd, self.reg(rs)),
            Instruction::Alu { op, rd, rs, src } => {
                let v = op.apply(self.reg(rs), self.operand(src));
                self.set_reg(rd, v);
            }
            Instruction::Branch {
                cond,
                rs,
                src,
                target,
            } => {
                let taken = force.unwrap_or_else(|| cond.holds(self.reg(rs), self.operand(src)));
                if taken {
                    next = target;
                }
            }
            Instruction::Jmp { target } => next = target,
            Instruction::Call { target } => {
                if self.state.call_stack.len() >= MAX_CALL_DEPTH {
                    self.raise(FaultKind::CallDepthExceeded);
                    self.steps += 1;
                    return self.stop(ExecStatus::Crashed);
                }
                let sp = self.reg(SP).wrapping_sub(4);
                mem!(self.store(sp, &(pc + INSN_SIZE).to_le_bytes()));
                self.set_reg(SP, sp);
                self.state.call_stack.push(pc);
                next = target;
            }
            Instruction::Ret => {
                let Some(&site) = self.state.call_stack.last() else {
                    self.raise(FaultKind::ReturnWithoutCall);
                    self.steps += 1;
                    return self.stop(ExecStatus::Crashed);
                };
                let sp = self.reg(SP);
                let found = mem!(self.load(sp, 4));
                let expected = site + INSN_SIZE;
                if found != expected {
                    self.raise(FaultKind::StackCorruption { expected, found });
                    self.steps += 1;
                    return self.stop(ExecStatus::Crashed);
                }
                self.state.call_stack.pop();
                self.set_reg(SP, sp.wrapping_add(4));
                next = expected;
            }
            Instruction::LoadB { rd, base, offset } => {
                let v = mem!(self.load(self.reg(base).wrapping_add(offset), 1));
                self.set_reg(rd, v);
            }
            Instruction::LoadW { rd, base, offset } => {
                let v = mem!(self.load(self.reg(base).wrapping_add(offset), 4));
                self.set_reg(rd, v);
            }
            Instruction::StoreB { rs, base, offset } => {
                let b = [self.reg(rs) as u8];
                mem!(self.store(self.reg(base).wrapping_add(offset), &b));
            }
            Instruction::StoreW { rs, base, offset } => {
                let b = self.reg(rs).to_le_bytes();
                mem!(self.store(self.reg(base).wrapping_add(offset), &b));
            }
            Instruction::Alloc { rd, len } => {
                let len = self.operand(len);
                let base = self.allocate(len);
                self.set_reg(rd, base);
            }
            Instruction::Free { rs } => {
                let addr = self.reg(rs);
                if addr != 0 {
                    let bt = self.backtrace();
                    if let Err(report) = self.state.shadow.on_free(addr, pc, &bt) {
                        self.violations.push(report);
                        self.steps += 1;
                        return self.stop(ExecStatus::Crashed);
                    }
                }
            }
            Instruction::In { rd, index } => {
                let v = input.get(index as usize).copied().unwrap_or(0);
                self.set_reg(rd, v as u32);
            }
            Instruction::Halt => {
                self.steps += 1;
                self.state.halted = true;
                return self.stop(ExecStatus::Halted);
            }
        }
        self.steps += 1;

        let mut edge = None;
        if self.program.is_leader(next) {
            let e = Edge::new(self.current_block(), next);
            if self.record_trace {
                self.trace.push(e);
            }
            edge = Some(e);
        }
        self.state.pc = next;
        if edge.is_some() && self.breakpoint == Some(next) {
            let mut ev = self.stop(ExecStatus::BreakpointHit);
            ev.edge = edge;
            return ev;
        }
        StepEvent { edge, stop: None }
    }

    /// Runs to completion and returns the outcome.
    pub fn run(mut self, input: &[u8]) -> ExecOutcome {
        while self.step(input).stop.is_none() {}
        self.into_outcome()
    }

    pub fn into_outcome(self) -> ExecOutcome {
        let status = self.status.unwrap_or(ExecStatus::BudgetExhausted);
        let leaks = if status == ExecStatus::Halted {
            self.state
                .shadow
                .live_allocations()
                .map(|a| (a.base, a.len))
                .collect()
        } else {
            Vec::new()
        };
        ExecOutcome {
            status,
            edge_trace: self.trace,
            violations: self.violations,
            fault: self.fault,
            steps_used: self.steps,
            leaks,
        }
    }

    fn stop(&mut self, status: ExecStatus) -> StepEvent {
        self.status = Some(status);
        StepEvent {
            edge: None,
            stop: Some(status),
        }
    }

    fn raise(&mut self, kind: FaultKind) {
        self.fault = Some(Fault {
            kind,
            pc: self.state.pc,
            backtrace: self.backtrace(),
        });
    }

    #[inline]
    fn reg(&self, r: u8) -> u32 {
        self.state.regs[r as usize]
    }

    #[inline]
    fn set_reg(&mut self, r: u8, v: u32) {
        self.state.regs[r as usize] = v;
    }

    fn operand(&self, op: Operand) -> u32 {
        match op {
            Operand::Reg(r) => self.reg(r),
            Operand::Imm(v) => v,
        }
    }

    fn mapped(&mut self, addr: u32, len: u32, op: MemOp) -> Result<(), ()> {
        let layout = self.config.layout;
        let end = addr as u64 + len as u64;
        if addr < layout.null_guard || end > layout.mem_size as u64 {
            self.raise(FaultKind::Unmapped {
                address: addr,
                operation: op,
            });
            return Err(());
        }
        Ok(())
    }

    fn load(&mut self, addr: u32, len: u32) -> Result<u32, ()> {
        self.mapped(addr, len, MemOp::Read)?;
        if self.touches_heap(addr, len) {
            let bt = self.backtrace();
            if let Err(report) = self.state.shadow.on_read(addr, len, self.state.pc, &bt) {
                self.violations.push(report);
                return Err(());
            }
        }
        let mut v = 0u32;
        for i in (0..len).rev() {
            v = (v << 8) | self.state.mem.get(addr + i) as u32;
        }
        Ok(v)
    }

    fn store(&mut self, addr: u32, bytes: &[u8]) -> Result<(), ()> {
        let len = bytes.len() as u32;
        self.mapped(addr, len, MemOp::Write)?;
        if self.touches_heap(addr, len) {
            let bt = self.backtrace();
            if let Err(report) = self.state.shadow.on_write(addr, len, self.state.pc, &bt) {
                // Bytes before the faulting one are committed, matching the shadow.
                let committed = report.address.saturating_sub(addr).min(len);
                for (i, &b) in bytes.iter().take(committed as usize).enumerate() {
                    self.state.mem.set(addr + i as u32, b);
                }
                self.violations.push(report);
                return Err(());
            }
        }
        for (i, &b) in bytes.iter().enumerate() {
            self.state.mem.set(addr + i as u32, b);
        }
        Ok(())
    }

    fn touches_heap(&self, addr: u32, len: u32) -> bool {
        let layout = &self.config.layout;
        let end = addr as u64 + len as u64;
        (addr as u64) < layout.heap_end as u64 && end > layout.heap_start as u64
    }

    fn allocate(&mut self, len: u32) -> u32 {
        let heap_end = self.config.layout.heap_end as u64;
        let base = (self.state.heap_cursor as u64 + HEAP_GAP as u64 + 7) & !7;
        if base + len as u64 + HEAP_GAP as u64 > heap_end {
            return 0;
        }
        let base = base as u32;
        if self.state.shadow.on_alloc(base, len).is_err() {
            return 0;
        }
        self.state.heap_cursor = base + len.max(1);
        base
    }
}

/// Runs `program` on `input` from its entry point.
///
/// With a hook, the breakpoint arms once execution first enters
/// `hook.start`; reaching it afterwards stops with `BreakpointHit`.
pub fn execute(
    program: &Program,
    input: &[u8],
    hook: Option<&FuzzHook>,
    budget: u64,
) -> Result<ExecOutcome, VmError> {
    if budget == 0 {
        return Err(VmError::ZeroBudget);
    }
    let mut machine = Machine::new(program, VmConfig::with_budget(budget));
    let Some(hook) = hook else {
        return Ok(machine.run(input));
    };
    hook.validate(program)?;
    let mut armed = false;
    loop {
        if !armed && machine.state().pc == hook.start && machine.at_block_boundary() {
            armed = true;
            machine.set_breakpoint(Some(hook.breakpoint));
        }
        if machine.step(input).stop.is_some() {
            break;
        }
    }
    Ok(machine.into_outcome())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::minivm::assemble;
    use crate::shadow::DetectorKind;

    #[test]
    fn minimal_program_halts() {
        let p = assemble("LOADI r0, 5\nHALT").unwrap();
        let m = Machine::new(&p, VmConfig::default());
        let mut m2 = m.clone();
        let out = m.run(&[]);
        assert_eq!(out.status, ExecStatus::Halted);
        assert!(out.edge_trace.is_empty());
        while m2.step(&[]).stop.is_none() {}
        assert_eq!(m2.state().regs[0], 5);
    }

    #[test]
    fn both_conditionals_true_path() {
        let p = fixtures::checks();
        let out = execute(&p, &[0x41, 0x42], None, 1000).unwrap();
        assert_eq!(out.status, ExecStatus::Halted);
        let blocks: Vec<u32> = std::iter::once(out.edge_trace[0].src)
            .chain(out.edge_trace.iter().map(|e| e.dst))
            .collect();
        assert_eq!(blocks, vec![0x00, 0x04, 0x08, 0x10, 0x18]);
    }

    #[test]
    fn twenty_byte_overflow_reports_offset_16() {
        let src = "
            ALLOC r1, 16
            LOADI r2, 0
        loop:
            ADD r3, r1, r2
            STOREB r2, r3, 0
            ADD r2, r2, 1
            BLT r2, 20, loop
            HALT
        ";
        let p = assemble(src).unwrap();
        let out = execute(&p, &[], None, 10_000).unwrap();
        assert_eq!(out.status, ExecStatus::Crashed);
        assert_eq!(out.violations.len(), 1);
        let r = &out.violations[0];
        assert_eq!(r.kind, DetectorKind::BufferOverflow);
        let base = 0x1000 + HEAP_GAP;
        assert_eq!(r.address, base + 16);
        assert_eq!(r.operation, MemOp::Write);
        assert!(!r.backtrace.is_empty());
    }

    #[test]
    fn budget_exhaustion() {
        let p = assemble("spin: JMP spin").unwrap();
        let out = execute(&p, &[], None, 50).unwrap();
        assert_eq!(out.status, ExecStatus::BudgetExhausted);
        assert_eq!(out.steps_used, 50);
        assert!(matches!(
            execute(&p, &[], None, 0),
            Err(VmError::ZeroBudget)
        ));
    }

    #[test]
    fn unmapped_access_crashes_with_diagnostic() {
        let p = assemble("CALL f\nHALT\nf: LOADI r1, 0x20000\nLOADB r0, r1, 0\nRET").unwrap();
        let out = execute(&p, &[], None, 100).unwrap();
        assert_eq!(out.status, ExecStatus::Crashed);
        let fault = out.fault.unwrap();
        assert_eq!(
            fault.kind,
            FaultKind::Unmapped {
                address: 0x20000,
                operation: MemOp::Read
            }
        );
        assert_eq!(fault.backtrace, vec![0x0C, 0x00]);
        let p = assemble("LOADI r1, 4\nSTOREW r0, r1, 0\nHALT").unwrap();
        let out = execute(&p, &[], None, 100).unwrap();
        assert!(matches!(
            out.fault.unwrap().kind,
            FaultKind::Unmapped {
                address: 4,
                operation: MemOp::Write
            }
        ));
    }

    #[test]
    fn in_past_input_reads_zero() {
        let p = assemble(".input 8\nIN r0, 7\nHALT").unwrap();
        let mut m = Machine::new(&p, VmConfig::default());
        m.step(&[1, 2]);
        assert_eq!(m.state().regs[0], 0);
    }

    #[test]
    fn calls_return_through_the_stack() {
        let src = "
            CALL add_one
            CALL add_one
            HALT
        add_one:
            ADD r0, r0, 1
            RET
        ";
        let p = assemble(src).unwrap();
        let mut m = Machine::new(&p, VmConfig::default());
        while m.step(&[]).stop.is_none() {}
        assert_eq!(m.state().regs[0], 2);
        assert_eq!(m.state().regs[7], 0x10000);
    }

    #[test]
    fn corrupted_return_address_crashes() {
        let src = "
            CALL f
            HALT
        f:
            LOADI r1, 0
            STOREW r1, r7, 0
            RET
        ";
        let p = assemble(src).unwrap();
        let out = execute(&p, &[], None, 100).unwrap();
        assert_eq!(out.status, ExecStatus::Crashed);
        assert!(matches!(
            out.fault.unwrap().kind,
            FaultKind::StackCorruption {
                expected: 4,
                found: 0
            }
        ));
    }

    #[test]
    fn snapshot_at_entry_round_trips() {
        let p = fixtures::checks();
        let m = Machine::new(&p, VmConfig::default());
        let snap = m.snapshot().unwrap();
        let resumed = Machine::restore(&p, VmConfig::default(), snap).unwrap();
        assert_eq!(
            resumed.run(&[0x41, 0]),
            execute(&p, &[0x41, 0], None, 1_000_000).unwrap()
        );
    }

    #[test]
    fn snapshot_mid_program_matches_reference_suffix() {
        let p = fixtures::checks();
        let input = [0x41, 0x42];
        let reference = execute(&p, &input, None, 1000).unwrap();
        let mut m = Machine::new(&p, VmConfig::default());
        while m.state().pc != 0x10 {
            m.step(&input);
        }
        let snap = m.snapshot().unwrap();
        let resumed = Machine::restore(&p, VmConfig::default(), snap)
            .unwrap()
            .run(&input);
        let from = reference
            .edge_trace
            .iter()
            .position(|e| e.src == 0x10)
            .unwrap();
        assert_eq!(resumed.edge_trace, reference.edge_trace[from..]);
        assert_eq!(resumed.status, reference.status);
    }

    #[test]
    fn snapshot_requires_block_boundary_and_matching_program() {
        let p = assemble("LOADI r0, 1\nLOADI r1, 2\nHALT").unwrap();
        let mut m = Machine::new(&p, VmConfig::default());
        m.step(&[]);
        assert_eq!(m.snapshot(), Err(VmError::NotAtBlockBoundary(4)));
        let other = assemble("LOADI r0, 9\nHALT").unwrap();
        let snap = Machine::new(&p, VmConfig::default()).snapshot().unwrap();
        assert!(matches!(
            Machine::restore(&other, VmConfig::default(), snap),
            Err(VmError::SnapshotMismatch)
        ));
    }

    #[test]
    fn hook_breakpoint_stops_execution() {
        let p = fixtures::checks();
        let hook = FuzzHook {
            start: 0x08,
            mutation_offset: 0,
            mutation_size: 2,
            breakpoint: 0x10,
        };
        let out = execute(&p, &[0x41, 0x42], Some(&hook), 1000).unwrap();
        assert_eq!(out.status, ExecStatus::BreakpointHit);
        assert_eq!(out.edge_trace.last().unwrap().dst, 0x10);
    }

    #[test]
    fn leaks_are_reported_at_halt() {
        let p = assemble("ALLOC r0, 8\nHALT").unwrap();
        let out = execute(&p, &[], None, 10).unwrap();
        assert_eq!(out.leaks, vec![(0x1000 + HEAP_GAP, 8)]);
    }
}
