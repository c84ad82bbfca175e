use std::path::PathBuf;

use thiserror::Error;

use crate::cfg::Edge;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProgramError {
    #[error("program has no instructions")]
    Empty,
    #[error("entry address {0:#x} is not an instruction")]
    BadEntry(u32),
    #[error("label `{name}` points at invalid address {addr:#x}")]
    BadLabel { name: String, addr: u32 },
    #[error("instruction at {at:#x} targets invalid address {target:#x}")]
    BadTarget { at: u32, target: u32 },
    #[error("instruction at {at:#x} uses register r{reg}: only r0-r7 exist")]
    BadRegister { at: u32, reg: u8 },
    #[error("IN at {at:#x} reads input byte {index} but the input size is {input_size}")]
    InputIndex {
        at: u32,
        index: u32,
        input_size: u32,
    },
    #[error("instruction at {0:#x} falls through past the end of the code")]
    FallsOffEnd(u32),
    #[error("read-only region {base:#x}+{len} lies outside the heap")]
    RodataOutsideHeap { base: u32, len: u32 },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AsmErrorKind {
    #[error("{0}")]
    Syntax(String),
    #[error("undefined label `{0}`")]
    UndefinedLabel(String),
    #[error("duplicate label `{0}`")]
    DuplicateLabel(String),
    #[error("register index r{0} out of range (r0-r7)")]
    BadRegister(u32),
    #[error("unknown mnemonic `{0}`")]
    UnknownMnemonic(String),
    #[error("{0}")]
    Program(ProgramError),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("line {line}: {kind}")]
pub struct AsmError {
    pub line: usize,
    pub kind: AsmErrorKind,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("not a MiniVM program container (bad magic)")]
    BadMagic,
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u16),
    #[error("container truncated")]
    Truncated,
    #[error("invalid opcode {0} in container")]
    BadOpcode(u8),
    #[error("invalid operand encoding in container")]
    BadOperand,
    #[error("label name is not valid UTF-8")]
    BadLabel,
    #[error(transparent)]
    Program(#[from] ProgramError),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VmError {
    #[error("snapshot belongs to a different program")]
    SnapshotMismatch,
    #[error("snapshot requested mid-block at {0:#x}")]
    NotAtBlockBoundary(u32),
    #[error("step budget must be positive")]
    ZeroBudget,
    #[error("hook address {0:#x} is not a block entry")]
    HookAddress(u32),
    #[error("hook mutation range {offset}+{size} exceeds input size {input_size}")]
    HookRange {
        offset: u32,
        size: u32,
        input_size: u32,
    },
    #[error("seed input never reaches hook start {0:#x}")]
    HookStartNotReached(u32),
}

/// The VM emitted a transition that the static CFG does not contain.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("trace edge {edge} is not in the static CFG")]
pub struct IntegrityError {
    pub edge: Edge,
}

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("campaign needs at least one seed")]
    NoSeeds,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Vm(#[from] VmError),
    #[error(transparent)]
    Integrity(#[from] IntegrityError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CampaignError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CampaignError::Io {
            path: path.into(),
            source,
        }
    }
}
