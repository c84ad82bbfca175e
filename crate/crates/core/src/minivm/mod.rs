//! The MiniVM target: ISA, assembler, binary container and interpreter.

pub mod asm;
pub mod binary;
pub mod isa;
pub mod layout;
pub mod machine;
pub mod program;

pub use asm::{assemble, disassemble};
pub use binary::{decode, encode};
pub use isa::{AluOp, Cond, Instruction, Opcode, Operand, Reg, INSN_SIZE, NUM_REGS, SP};
pub use layout::{MemoryLayout, PagedBytes, DEFAULT_MEM_SIZE, DEFAULT_STEP_BUDGET};
pub use machine::{
    execute, ExecOutcome, ExecStatus, Fault, FaultKind, Machine, StepEvent, VmConfig, VmState,
};
pub use program::Program;
