//! Binary program container.
//!
//! All integers little-endian.
//!
//! ```text
//! magic      4  b"MVM\0"
//! version    2  = 1
//! reserved   2  = 0
//! entry      4
//! input_size 4
//! n_insn     4
//! n_labels   4
//! n_rodata   4
//! insn       12 * n_insn   opcode u8, a u8, b u8, kind u8, imm u32, target u32
//! label      (len u16, utf-8 name, addr u32) * n_labels
//! rodata     (base u32, len u32) * n_rodata
//! ```
//!
//! `kind` is 0 when `imm` holds an immediate and 1 when it holds a register.

use std::collections::BTreeMap;

use super::isa::{AluOp, Cond, Instruction, Opcode, Operand};
use super::program::Program;
use crate::error::DecodeError;

pub const MAGIC: &[u8; 4] = b"MVM\0";
pub const VERSION: u16 = 1;

pub fn encode(program: &Program) -> Vec<u8> {
    let mut out = Vec::with_capacity(28 + program.instructions().len() * 12);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    for v in [
        program.entry(),
        program.input_size(),
        program.instructions().len() as u32,
        program.labels().len() as u32,
        program.rodata().len() as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for insn in program.instructions() {
        let (a, b, src, target) = fields(insn);
        let (kind, imm) = match src {
            Operand::Imm(v) => (0u8, v),
            Operand::Reg(r) => (1u8, r as u32),
        };
        out.extend_from_slice(&[insn.opcode() as u8, a, b, kind]);
        out.extend_from_slice(&imm.to_le_bytes());
        out.extend_from_slice(&target.to_le_bytes());
    }
    for (name, addr) in program.labels() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&addr.to_le_bytes());
    }
    for &(base, len) in program.rodata() {
        out.extend_from_slice(&base.to_le_bytes());
        out.extend_from_slice(&len.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Program, DecodeError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(DecodeError::BadMagic);
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(DecodeError::UnsupportedVersion(version));
    }
    r.u16()?;
    let entry = r.u32()?;
    let input_size = r.u32()?;
    let n_insn = r.u32()? as usize;
    let n_labels = r.u32()? as usize;
    let n_rodata = r.u32()? as usize;
    if n_insn.saturating_mul(12) > bytes.len() {
        return Err(DecodeError::Truncated);
    }
    let mut instructions = Vec::with_capacity(n_insn);
    for _ in 0..n_insn {
        let head = r.take(4)?;
        let (op, a, b, kind) = (head[0], head[1], head[2], head[3]);
        let imm = r.u32()?;
        let target = r.u32()?;
        let opcode = Opcode::from_u8(op).ok_or(DecodeError::BadOpcode(op))?;
        let src = match kind {
            0 => Operand::Imm(imm),
            1 if imm <= u8::MAX as u32 => Operand::Reg(imm as u8),
            _ => return Err(DecodeError::BadOperand),
        };
        instructions.push(build(opcode, a, b, src, target)?);
    }
    let mut labels = BTreeMap::new();
    for _ in 0..n_labels {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| DecodeError::BadLabel)?;
        let addr = r.u32()?;
        labels.insert(name.to_string(), addr);
    }
    let mut rodata = Vec::with_capacity(n_rodata.min(1024));
    for _ in 0..n_rodata {
        rodata.push((r.u32()?, r.u32()?));
    }
    Ok(Program::new(
        instructions,
        entry,
        labels,
        input_size,
        rodata,
    )?)
}

/// Returns `(a, b, src, target)` register/operand fields for encoding.
fn fields(insn: &Instruction) -> (u8, u8, Operand, u32) {
    let none = Operand::Imm(0);
    match *insn {
        Instruction::LoadI { rd, imm } => (rd, 0, Operand::Imm(imm), 0),
        Instruction::Mov { rd, rs } => (rd, rs, none, 0),
        Instruction::Alu { rd, rs, src, .. } => (rd, rs, src, 0),
        Instruction::Branch {
            rs, src, target, ..
        } => (rs, 0, src, target),
        Instruction::Jmp { target } | Instruction::Call { target } => (0, 0, none, target),
        Instruction::Ret | Instruction::Halt => (0, 0, none, 0),
        Instruction::LoadB { rd, base, offset } | Instruction::LoadW { rd, base, offset } => {
            (rd, base, Operand::Imm(offset), 0)
        }
        Instruction::StoreB { rs, base, offset } | Instruction::StoreW { rs, base, offset } => {
            (rs, base, Operand::Imm(offset), 0)
        }
        Instruction::Alloc { rd, len } => (rd, 0, len, 0),
        Instruction::Free { rs } => (rs, 0, none, 0),
        Instruction::In { rd, index } => (rd, 0, Operand::Imm(index), 0),
    }
}

fn build(op: Opcode, a: u8, b: u8, src: Operand, target: u32) -> Result<Instruction, DecodeError> {
    let imm = || match src {
        Operand::Imm(v) => Ok(v),
        Operand::Reg(_) => Err(DecodeError::BadOperand),
    };
    let alu = |op: AluOp| Instruction::Alu {
        op,
        rd: a,
        rs: b,
        src,
    };
    let branch = |cond: Cond| Instruction::Branch {
        cond,
        rs: a,
        src,
        target,
    };
    Ok(match op {
        Opcode::LoadI => Instruction::LoadI { rd: a, imm: imm()? },
        Opcode::Mov => Instruction::Mov { rd: a, rs: b },
        Opcode::Add => alu(AluOp::Add),
        Opcode::Sub => alu(AluOp::Sub),
        Opcode::Xor => alu(AluOp::Xor),
        Opcode::And => alu(AluOp::And),
        Opcode::Or => alu(AluOp::Or),
        Opcode::Shl => alu(AluOp::Shl),
        Opcode::Shr => alu(AluOp::Shr),
        Opcode::Beq => branch(Cond::Eq),
        Opcode::Bne => branch(Cond::Ne),
        Opcode::Blt => branch(Cond::Lt),
        Opcode::Bge => branch(Cond::Ge),
        Opcode::Jmp => Instruction::Jmp { target },
        Opcode::Call => Instruction::Call { target },
        Opcode::Ret => Instruction::Ret,
        Opcode::LoadB => Instruction::LoadB {
            rd: a,
            base: b,
            offset: imm()?,
        },
        Opcode::LoadW => Instruction::LoadW {
            rd: a,
            base: b,
            offset: imm()?,
        },
        Opcode::StoreB => Instruction::StoreB {
            rs: a,
            base: b,
            offset: imm()?,
        },
        Opcode::StoreW => Instruction::StoreW {
            rs: a,
            base: b,
            offset: imm()?,
        },
        Opcode::Alloc => Instruction::Alloc { rd: a, len: src },
        Opcode::Free => Instruction::Free { rs: a },
        Opcode::In => Instruction::In {
            rd: a,
            index: imm()?,
        },
        Opcode::Halt => Instruction::Halt,
    })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        let end = self.pos.checked_add(n).ok_or(DecodeError::Truncated)?;
        let slice = self
            .bytes
            .get(self.pos..end)
            .ok_or(DecodeError::Truncated)?;
        self.pos = end;
        Ok(slice)
    }

    fn u16(&mut self) -> Result<u16, DecodeError> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, DecodeError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
