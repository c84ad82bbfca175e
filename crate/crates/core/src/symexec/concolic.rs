use std::collections::{BTreeMap, BTreeSet};

use super::expr::{BinOp, CmpOp, Expr, ExprRef};
use crate::minivm::{Instruction, Machine, Operand, StepEvent, NUM_REGS};

/// Which input bytes `IN` turns into symbols.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Symbolize {
    All,
    Only(BTreeSet<u32>),
    None,
}

impl Symbolize {
    pub fn contains(&self, k: u32) -> bool {
        match self {
            Symbolize::All => true,
            Symbolize::Only(s) => s.contains(&k),
            Symbolize::None => false,
        }
    }
}

/// An input-dependent branch met while stepping.
#[derive(Clone, Debug)]
pub struct BranchEvent {
    pub pc: u32,
    /// Condition for the direction actually taken.
    pub cond: ExprRef,
    pub taken: bool,
}

#[derive(Clone, Debug)]
pub struct ConcolicStep {
    pub event: StepEvent,
    pub branch: Option<BranchEvent>,
    /// Address-concretization constraints introduced by this step.
    pub pins: Vec<ExprRef>,
}

/// A concrete machine shadowed by symbolic expressions for registers and
/// memory bytes whose values depend on symbolic input.
#[derive(Clone, Debug)]
pub struct Concolic<'p> {
    pub machine: Machine<'p>,
    pub regs: [Option<ExprRef>; NUM_REGS],
    pub mem: BTreeMap<u32, ExprRef>,
    pub symbolize: Symbolize,
    /// Set when a symbolic address or length was concretized.
    pub imprecise: bool,
}

impl<'p> Concolic<'p> {
    pub fn new(machine: Machine<'p>, symbolize: Symbolize) -> Self {
        Concolic {
            machine,
            regs: Default::default(),
            mem: BTreeMap::new(),
            symbolize,
            imprecise: false,
        }
    }

    fn reg(&self, r: u8) -> ExprRef {
        self.regs[r as usize]
            .clone()
            .unwrap_or_else(|| Expr::constant(self.machine.state().regs[r as usize]))
    }

    fn is_sym(&self, r: u8) -> bool {
        self.regs[r as usize].is_some()
    }

    fn operand(&self, op: Operand) -> (ExprRef, bool) {
        match op {
            Operand::Reg(r) => (self.reg(r), self.is_sym(r)),
            Operand::Imm(v) => (Expr::constant(v), false),
        }
    }

    fn mem_byte(&self, addr: u32) -> ExprRef {
        if let Some(e) = self.mem.get(&addr) {
            return e.clone();
        }
        let state = self.machine.state();
        let v = if addr < state.mem.len() {
            state.read_u8(addr)
        } else {
            0
        };
        Expr::constant(v as u32)
    }

    /// Symbolic condition of the branch about to execute, if it depends on input.
    pub fn pending_branch(&self) -> Option<ExprRef> {
        if let Some(Instruction::Branch { cond, rs, src, .. }) = self.machine.current() {
            let (b, bs) = self.operand(*src);
            if self.is_sym(*rs) || bs {
                let c = Expr::cmp(CmpOp::from(*cond), self.reg(*rs), b);
                return c.as_const().is_none().then_some(c);
            }
        }
        None
    }

    /// Address operand expression: a pin constraint is needed when symbolic.
    fn address(
        &mut self,
        base: u8,
        offset: u32,
        pins: &mut Vec<ExprRef>,
    ) -> (u32, Option<ExprRef>) {
        let conc = self.machine.state().regs[base as usize].wrapping_add(offset);
        if !self.is_sym(base) {
            return (conc, None);
        }
        let e = Expr::bin(BinOp::Add, self.reg(base), Expr::constant(offset));
        if e.as_const().is_some() {
            return (conc, None);
        }
        self.imprecise = true;
        pins.push(Expr::cmp(CmpOp::Eq, e.clone(), Expr::constant(conc)));
        (conc, Some(e))
    }

    pub fn step(&mut self, input: &[u8], force: Option<bool>) -> ConcolicStep {
        let Some(&insn) = self.machine.current() else {
            return ConcolicStep {
                event: self.machine.step_forced(input, force),
                branch: None,
                pins: Vec::new(),
            };
        };
        let mut pins = Vec::new();
        let mut branch = None;
        let mut regs = self.regs.clone();
        let mut mem_updates: Vec<(u32, Option<ExprRef>)> = Vec::new();
        let mut set =
            |r: u8, e: Option<ExprRef>| regs[r as usize] = e.filter(|e| e.as_const().is_none());

        match insn {
            Instruction::LoadI { rd, .. } => set(rd, None),
            Instruction::Mov { rd, rs } => set(rd, self.regs[rs as usize].clone()),
            Instruction::Alu { op, rd, rs, src } => {
                let (b, bs) = self.operand(src);
                let v =
                    (self.is_sym(rs) || bs).then(|| Expr::bin(BinOp::from(op), self.reg(rs), b));
                set(rd, v);
            }
            Instruction::Branch { cond, rs, src, .. } => {
                let (b, bs) = self.operand(src);
                if self.is_sym(rs) || bs {
                    let c = Expr::cmp(CmpOp::from(cond), self.reg(rs), b);
                    if c.as_const().is_none() {
                        let s = self.machine.state();
                        let a = s.regs[rs as usize];
                        let bv = match src {
                            Operand::Reg(r) => s.regs[r as usize],
                            Operand::Imm(v) => v,
                        };
                        let taken = force.unwrap_or_else(|| cond.holds(a, bv));
                        let cond = if taken { c } else { Expr::negate(&c) };
                        branch = Some(BranchEvent {
                            pc: s.pc,
                            cond,
                            taken,
                        });
                    }
                }
            }
            Instruction::Jmp { .. } | Instruction::Halt | Instruction::Free { .. } => {}
            Instruction::Call { .. } => {
                let sp = self.machine.state().regs[7].wrapping_sub(4);
                for i in 0..4 {
                    mem_updates.push((sp.wrapping_add(i), None));
                }
            }
            Instruction::Ret => {}
            Instruction::LoadB { rd, base, offset } => {
                let (addr, sym) = self.address(base, offset, &mut pins);
                let mut v = self.mem_byte(addr);
                if let Some(a) = sym {
                    v = Expr::pin(v, a);
                }
                set(rd, Some(v));
            }
            Instruction::LoadW { rd, base, offset } => {
                let (addr, sym) = self.address(base, offset, &mut pins);
                let any = (0..4).any(|i| self.mem.contains_key(&addr.wrapping_add(i)));
                let mut v = if any
                    || addr
                        .checked_add(4)
                        .is_none_or(|end| end > self.machine.state().mem.len())
                {
                    (0..4u32).fold(Expr::constant(0), |acc, i| {
                        let b = self.mem_byte(addr.wrapping_add(i));
                        let shifted = Expr::bin(BinOp::Shl, b, Expr::constant(8 * i));
                        Expr::bin(BinOp::Or, acc, shifted)
                    })
                } else {
                    Expr::constant(self.machine.state().read_u32(addr))
                };
                if let Some(a) = sym {
                    v = Expr::pin(v, a);
                }
                set(rd, Some(v));
            }
            Instruction::StoreB { rs, base, offset } => {
                let (addr, sym) = self.address(base, offset, &mut pins);
                let v = self.regs[rs as usize]
                    .clone()
                    .map(|e| Expr::bin(BinOp::And, e, Expr::constant(0xFF)));
                let v = match (v, sym) {
                    (Some(v), Some(a)) => Some(Expr::pin(v, a)),
                    (None, Some(a)) => Some(Expr::pin(Expr::constant(self.reg_conc(rs) & 0xFF), a)),
                    (v, None) => v,
                };
                mem_updates.push((addr, v));
            }
            Instruction::StoreW { rs, base, offset } => {
                let (addr, sym) = self.address(base, offset, &mut pins);
                for i in 0..4u32 {
                    let v = self.regs[rs as usize].clone().map(|e| {
                        let sh = Expr::bin(BinOp::Shr, e, Expr::constant(8 * i));
                        Expr::bin(BinOp::And, sh, Expr::constant(0xFF))
                    });
                    let v = match (v, &sym) {
                        (Some(v), Some(a)) => Some(Expr::pin(v, a.clone())),
                        (None, Some(a)) => Some(Expr::pin(
                            Expr::constant((self.reg_conc(rs) >> (8 * i)) & 0xFF),
                            a.clone(),
                        )),
                        (v, None) => v,
                    };
                    mem_updates.push((addr.wrapping_add(i), v));
                }
            }
            Instruction::Alloc { rd, len } => {
                let (l, ls) = self.operand(len);
                if ls {
                    self.imprecise = true;
                    let lc = match len {
                        Operand::Reg(r) => self.reg_conc(r),
                        Operand::Imm(v) => v,
                    };
                    pins.push(Expr::cmp(CmpOp::Eq, l.clone(), Expr::constant(lc)));
                }
                set(rd, None);
            }
            Instruction::In { rd, index } => {
                let v = self.symbolize.contains(index).then(|| Expr::byte(index));
                set(rd, v);
            }
        }

        let event = self.machine.step_forced(input, force);
        if event.stop.is_some()
            && self.machine.status() != Some(crate::minivm::ExecStatus::BreakpointHit)
        {
            return ConcolicStep {
                event,
                branch: None,
                pins: Vec::new(),
            };
        }
        self.regs = regs;
        for (addr, v) in mem_updates {
            match v {
                Some(e) if e.as_const().is_none() => {
                    self.mem.insert(addr, e);
                }
                _ => {
                    self.mem.remove(&addr);
                }
            }
        }
        ConcolicStep {
            event,
            branch,
            pins,
        }
    }

    fn reg_conc(&self, r: u8) -> u32 {
        self.machine.state().regs[r as usize]
    }

    /// Replaces bytes for which `f` yields a value by constants everywhere.
    pub fn concretize_bytes(&mut self, f: &impl Fn(u32) -> Option<u8>) {
        for r in self.regs.iter_mut() {
            if let Some(e) = r.take() {
                let e = Expr::substitute(&e, f);
                *r = e.as_const().is_none().then_some(e);
            }
        }
        let mem = std::mem::take(&mut self.mem);
        for (a, e) in mem {
            let e = Expr::substitute(&e, f);
            if e.as_const().is_none() {
                self.mem.insert(a, e);
            }
        }
    }
}
