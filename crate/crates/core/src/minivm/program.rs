use std::collections::BTreeMap;

use super::isa::{Instruction, Operand, INSN_SIZE, NUM_REGS};
use super::layout::MemoryLayout;
use crate::error::ProgramError;

/// A loaded MiniVM program.
///
/// Block leaders are computed once at construction and shared by the
/// interpreter and the CFG builder, so both agree on block boundaries by
/// construction. A label always starts a new block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Program {
    instructions: Vec<Instruction>,
    entry: u32,
    labels: BTreeMap<String, u32>,
    input_size: u32,
    rodata: Vec<(u32, u32)>,
    block_of: Vec<u32>,
    leader: Vec<bool>,
    fingerprint: u64,
}

impl Program {
    pub fn new(
        instructions: Vec<Instruction>,
        entry: u32,
        labels: BTreeMap<String, u32>,
        input_size: u32,
        rodata: Vec<(u32, u32)>,
    ) -> Result<Self, ProgramError> {
        if instructions.is_empty() {
            return Err(ProgramError::Empty);
        }
        let code_end = instructions.len() as u32 * INSN_SIZE;
        let valid = |addr: u32| addr.is_multiple_of(INSN_SIZE) && addr < code_end;
        if !valid(entry) {
            return Err(ProgramError::BadEntry(entry));
        }
        for (name, &addr) in &labels {
            if !valid(addr) {
                return Err(ProgramError::BadLabel {
                    name: name.clone(),
                    addr,
                });
            }
        }
        for (idx, insn) in instructions.iter().enumerate() {
            let addr = idx as u32 * INSN_SIZE;
            check_regs(insn, addr)?;
            if let Some(t) = insn.target() {
                if !valid(t) {
                    return Err(ProgramError::BadTarget {
                        at: addr,
                        target: t,
                    });
                }
            }
            if let Instruction::In { index, .. } = insn {
                if *index >= input_size {
                    return Err(ProgramError::InputIndex {
                        at: addr,
                        index: *index,
                        input_size,
                    });
                }
            }
            if insn.falls_through() && addr + INSN_SIZE >= code_end {
                return Err(ProgramError::FallsOffEnd(addr));
            }
        }
        let layout = MemoryLayout::default();
        for &(base, len) in &rodata {
            let end = base as u64 + len as u64;
            if (base as u64) < layout.heap_start as u64 || end > layout.heap_end as u64 {
                return Err(ProgramError::RodataOutsideHeap { base, len });
            }
        }

        let n = instructions.len();
        let mut leader = vec![false; n];
        leader[0] = true;
        leader[(entry / INSN_SIZE) as usize] = true;
        for &addr in labels.values() {
            leader[(addr / INSN_SIZE) as usize] = true;
        }
        for (idx, insn) in instructions.iter().enumerate() {
            if let Some(t) = insn.target() {
                leader[(t / INSN_SIZE) as usize] = true;
            }
            if insn.is_terminator() && idx + 1 < n {
                leader[idx + 1] = true;
            }
        }
        let mut block_of = Vec::with_capacity(n);
        let mut current = 0u32;
        for (idx, &is_leader) in leader.iter().enumerate() {
            if is_leader {
                current = idx as u32 * INSN_SIZE;
            }
            block_of.push(current);
        }

        let mut program = Program {
            instructions,
            entry,
            labels,
            input_size,
            rodata,
            block_of,
            leader,
            fingerprint: 0,
        };
        program.fingerprint = fnv1a(&super::binary::encode(&program));
        Ok(program)
    }

    pub fn instructions(&self) -> &[Instruction] {
        &self.instructions
    }

    pub fn entry(&self) -> u32 {
        self.entry
    }

    pub fn labels(&self) -> &BTreeMap<String, u32> {
        &self.labels
    }

    /// Number of input bytes the program's `IN` instructions may address.
    pub fn input_size(&self) -> u32 {
        self.input_size
    }

    /// Read-only heap ranges as `(base, len)`.
    pub fn rodata(&self) -> &[(u32, u32)] {
        &self.rodata
    }

    pub fn code_end(&self) -> u32 {
        self.instructions.len() as u32 * INSN_SIZE
    }

    pub fn fetch(&self, addr: u32) -> Option<&Instruction> {
        if !addr.is_multiple_of(INSN_SIZE) {
            return None;
        }
        self.instructions.get((addr / INSN_SIZE) as usize)
    }

    pub fn is_valid_addr(&self, addr: u32) -> bool {
        addr.is_multiple_of(INSN_SIZE) && addr < self.code_end()
    }

    /// True when `addr` is the first instruction of a basic block.
    pub fn is_leader(&self, addr: u32) -> bool {
        self.is_valid_addr(addr) && self.leader[(addr / INSN_SIZE) as usize]
    }

    /// Start address of the block containing `addr`.
    pub fn block_of(&self, addr: u32) -> Option<u32> {
        if !self.is_valid_addr(addr) {
            return None;
        }
        Some(self.block_of[(addr / INSN_SIZE) as usize])
    }

    /// Start addresses of all blocks, ascending.
    pub fn leaders(&self) -> impl Iterator<Item = u32> + '_ {
        self.leader
            .iter()
            .enumerate()
            .filter(|(_, &l)| l)
            .map(|(i, _)| i as u32 * INSN_SIZE)
    }

    /// Address of the last instruction of the block starting at `start`.
    pub fn block_end(&self, start: u32) -> u32 {
        let mut idx = (start / INSN_SIZE) as usize;
        while idx + 1 < self.leader.len() && !self.leader[idx + 1] {
            idx += 1;
        }
        idx as u32 * INSN_SIZE
    }

    /// Label naming `addr`, if any.
    pub fn label_at(&self, addr: u32) -> Option<&str> {
        self.labels
            .iter()
            .find(|(_, &a)| a == addr)
            .map(|(n, _)| n.as_str())
    }

    /// Stable content hash used to bind snapshots to their program.
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }
}

fn check_regs(insn: &Instruction, at: u32) -> Result<(), ProgramError> {
    let mut regs = insn.reads();
    match insn {
        Instruction::LoadI { rd, .. }
        | Instruction::Mov { rd, .. }
        | Instruction::Alu { rd, .. }
        | Instruction::LoadB { rd, .. }
        | Instruction::LoadW { rd, .. }
        | Instruction::Alloc { rd, .. }
        | Instruction::In { rd, .. } => regs.push(*rd),
        _ => {}
    }
    if let Instruction::Alu {
        src: Operand::Reg(r),
        ..
    } = insn
    {
        regs.push(*r);
    }
    match regs.into_iter().find(|&r| r as usize >= NUM_REGS) {
        Some(reg) => Err(ProgramError::BadRegister { at, reg }),
        None => Ok(()),
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}
