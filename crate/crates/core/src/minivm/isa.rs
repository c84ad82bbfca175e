//! Instruction set of the MiniVM.
//!
//! Every instruction occupies one 4-byte code slot, so the code address of
//! instruction `n` is `n * 4`. Control flow is direct only: every branch,
//! jump and call names its target statically.

use std::fmt;

/// Size of one instruction slot in the code address space.
pub const INSN_SIZE: u32 = 4;

/// Number of general purpose registers. `r7` doubles as the stack pointer.
pub const NUM_REGS: usize = 8;

/// Register used as the in-memory stack pointer by `CALL`/`RET`.
pub const SP: u8 = 7;

pub type Reg = u8;

/// Second source operand of ALU, branch, and `ALLOC` instructions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Operand {
    Reg(Reg),
    Imm(u32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AluOp {
    Add,
    Sub,
    Xor,
    And,
    Or,
    Shl,
    Shr,
}

impl AluOp {
    pub fn apply(self, a: u32, b: u32) -> u32 {
        match self {
            AluOp::Add => a.wrapping_add(b),
            AluOp::Sub => a.wrapping_sub(b),
            AluOp::Xor => a ^ b,
            AluOp::And => a & b,
            AluOp::Or => a | b,
            AluOp::Shl => a.wrapping_shl(b & 31),
            AluOp::Shr => a.wrapping_shr(b & 31),
        }
    }
}

/// Branch conditions. Ordering comparisons are unsigned.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Cond {
    Eq,
    Ne,
    Lt,
    Ge,
}

impl Cond {
    pub fn holds(self, a: u32, b: u32) -> bool {
        match self {
            Cond::Eq => a == b,
            Cond::Ne => a != b,
            Cond::Lt => a < b,
            Cond::Ge => a >= b,
        }
    }
}

/// Mnemonic of an instruction, independent of its operands.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Opcode {
    LoadI = 0,
    Mov,
    Add,
    Sub,
    Xor,
    And,
    Or,
    Shl,
    Shr,
    Beq,
    Bne,
    Blt,
    Bge,
    Jmp,
    Call,
    Ret,
    LoadB,
    LoadW,
    StoreB,
    StoreW,
    Alloc,
    Free,
    In,
    Halt,
}

impl Opcode {
    pub const ALL: [Opcode; 24] = [
        Opcode::LoadI,
        Opcode::Mov,
        Opcode::Add,
        Opcode::Sub,
        Opcode::Xor,
        Opcode::And,
        Opcode::Or,
        Opcode::Shl,
        Opcode::Shr,
        Opcode::Beq,
        Opcode::Bne,
        Opcode::Blt,
        Opcode::Bge,
        Opcode::Jmp,
        Opcode::Call,
        Opcode::Ret,
        Opcode::LoadB,
        Opcode::LoadW,
        Opcode::StoreB,
        Opcode::StoreW,
        Opcode::Alloc,
        Opcode::Free,
        Opcode::In,
        Opcode::Halt,
    ];

    pub fn mnemonic(self) -> &'static str {
        match self {
            Opcode::LoadI => "LOADI",
            Opcode::Mov => "MOV",
            Opcode::Add => "ADD",
            Opcode::Sub => "SUB",
            Opcode::Xor => "XOR",
            Opcode::And => "AND",
            Opcode::Or => "OR",
            Opcode::Shl => "SHL",
            Opcode::Shr => "SHR",
            Opcode::Beq => "BEQ",
            Opcode::Bne => "BNE",
            Opcode::Blt => "BLT",
            Opcode::Bge => "BGE",
            Opcode::Jmp => "JMP",
            Opcode::Call => "CALL",
            Opcode::Ret => "RET",
            Opcode::LoadB => "LOADB",
            Opcode::LoadW => "LOADW",
            Opcode::StoreB => "STOREB",
            Opcode::StoreW => "STOREW",
            Opcode::Alloc => "ALLOC",
            Opcode::Free => "FREE",
            Opcode::In => "IN",
            Opcode::Halt => "HALT",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<Opcode> {
        let upper = s.to_ascii_uppercase();
        Opcode::ALL
            .iter()
            .copied()
            .find(|op| op.mnemonic() == upper)
    }

    pub fn from_u8(v: u8) -> Option<Opcode> {
        Opcode::ALL.get(v as usize).copied()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Instruction {
    LoadI {
        rd: Reg,
        imm: u32,
    },
    Mov {
        rd: Reg,
        rs: Reg,
    },
    Alu {
        op: AluOp,
        rd: Reg,
        rs: Reg,
        src: Operand,
    },
    Branch {
        cond: Cond,
        rs: Reg,
        src: Operand,
        target: u32,
    },
    Jmp {
        target: u32,
    },
    Call {
        target: u32,
    },
    Ret,
    /// `rd = mem[base + offset]`
    LoadB {
        rd: Reg,
        base: Reg,
        offset: u32,
    },
    /// `rd = le32(mem[base + offset..+4])`
    LoadW {
        rd: Reg,
        base: Reg,
        offset: u32,
    },
    /// `mem[base + offset] = rs & 0xff`
    StoreB {
        rs: Reg,
        base: Reg,
        offset: u32,
    },
    StoreW {
        rs: Reg,
        base: Reg,
        offset: u32,
    },
    /// `rd = heap allocation of len bytes`, 0 when the heap is exhausted.
    Alloc {
        rd: Reg,
        len: Operand,
    },
    Free {
        rs: Reg,
    },
    /// `rd = input[index]`, 0 past the end of the input.
    In {
        rd: Reg,
        index: u32,
    },
    Halt,
}

impl Instruction {
    pub fn opcode(&self) -> Opcode {
        match self {
            Instruction::LoadI { .. } => Opcode::LoadI,
            Instruction::Mov { .. } => Opcode::Mov,
            Instruction::Alu { op, .. } => match op {
                AluOp::Add => Opcode::Add,
                AluOp::Sub => Opcode::Sub,
                AluOp::Xor => Opcode::Xor,
                AluOp::And => Opcode::And,
                AluOp::Or => Opcode::Or,
                AluOp::Shl => Opcode::Shl,
                AluOp::Shr => Opcode::Shr,
            },
            Instruction::Branch { cond, .. } => match cond {
                Cond::Eq => Opcode::Beq,
                Cond::Ne => Opcode::Bne,
                Cond::Lt => Opcode::Blt,
                Cond::Ge => Opcode::Bge,
            },
            Instruction::Jmp { .. } => Opcode::Jmp,
            Instruction::Call { .. } => Opcode::Call,
            Instruction::Ret => Opcode::Ret,
            Instruction::LoadB { .. } => Opcode::LoadB,
            Instruction::LoadW { .. } => Opcode::LoadW,
            Instruction::StoreB { .. } => Opcode::StoreB,
            Instruction::StoreW { .. } => Opcode::StoreW,
            Instruction::Alloc { .. } => Opcode::Alloc,
            Instruction::Free { .. } => Opcode::Free,
            Instruction::In { .. } => Opcode::In,
            Instruction::Halt => Opcode::Halt,
        }
    }

    /// Static control-flow target, if the instruction has one.
    pub fn target(&self) -> Option<u32> {
        match *self {
            Instruction::Branch { target, .. }
            | Instruction::Jmp { target }
            | Instruction::Call { target } => Some(target),
            _ => None,
        }
    }

    /// True when the instruction ends a basic block.
    pub fn is_terminator(&self) -> bool {
        matches!(
            self,
            Instruction::Branch { .. }
                | Instruction::Jmp { .. }
                | Instruction::Call { .. }
                | Instruction::Ret
                | Instruction::Halt
        )
    }

    /// True when execution may continue at the next slot.
    pub fn falls_through(&self) -> bool {
        !matches!(
            self,
            Instruction::Jmp { .. } | Instruction::Ret | Instruction::Halt
        )
    }

    /// Registers read by the instruction.
    pub fn reads(&self) -> Vec<Reg> {
        let mut regs = Vec::new();
        let push_op = |op: &Operand, regs: &mut Vec<Reg>| {
            if let Operand::Reg(r) = op {
                regs.push(*r);
            }
        };
        match self {
            Instruction::Mov { rs, .. } => regs.push(*rs),
            Instruction::Alu { rs, src, .. } | Instruction::Branch { rs, src, .. } => {
                regs.push(*rs);
                push_op(src, &mut regs);
            }
            Instruction::LoadB { base, .. } | Instruction::LoadW { base, .. } => regs.push(*base),
            Instruction::StoreB { rs, base, .. } | Instruction::StoreW { rs, base, .. } => {
                regs.push(*rs);
                regs.push(*base);
            }
            Instruction::Alloc { len, .. } => push_op(len, &mut regs),
            Instruction::Free { rs } => regs.push(*rs),
            Instruction::Call { .. } | Instruction::Ret => regs.push(SP),
            _ => {}
        }
        regs
    }
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Reg(r) => write!(f, "r{r}"),
            Operand::Imm(v) => write!(f, "{v:#x}"),
        }
    }
}
