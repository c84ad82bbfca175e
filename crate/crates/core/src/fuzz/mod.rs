//! Coverage-guided mutation engine.

mod batch;
mod corpus;
mod mutate;

use serde::{Deserialize, Serialize};

use crate::error::VmError;
use crate::minivm::Program;

pub use batch::{run_batch, BatchResult, CrashLog, CrashRecord, CrashReport, FuzzTarget};
pub use corpus::{schedule, Corpus, CorpusEntry, FAVORED_PROBABILITY};
pub use mutate::{
    apply_op, mutate, MutationOp, ARITH_MAX, INTERESTING_16, INTERESTING_32, INTERESTING_8,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Seed,
    Mutation,
    Symbolic,
}

impl Origin {
    pub fn name(self) -> &'static str {
        match self {
            Origin::Seed => "seed",
            Origin::Mutation => "mutation",
            Origin::Symbolic => "symbolic",
        }
    }

    pub fn from_name(s: &str) -> Option<Origin> {
        match s {
            "seed" => Some(Origin::Seed),
            "mutation" => Some(Origin::Mutation),
            "symbolic" => Some(Origin::Symbolic),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TestInput {
    pub bytes: Vec<u8>,
    pub origin: Origin,
    pub parent: Option<usize>,
    /// New edges this input contributed when it was admitted.
    pub discovered_edges: usize,
    /// Iteration at which the input was admitted (0 for seeds).
    pub iteration: u64,
    /// Destination block a symbolic input was solved for.
    pub target: Option<u32>,
}

impl TestInput {
    pub fn seed(bytes: Vec<u8>) -> Self {
        TestInput {
            bytes,
            origin: Origin::Seed,
            parent: None,
            discovered_edges: 0,
            iteration: 0,
            target: None,
        }
    }
}

/// Focused-fuzzing hook: execution resumes at `start` and every mutation
/// stays inside the byte range; reaching `breakpoint` ends the run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FuzzHook {
    pub start: u32,
    pub mutation_offset: u32,
    pub mutation_size: u32,
    pub breakpoint: u32,
}

impl FuzzHook {
    pub fn validate(&self, program: &Program) -> Result<(), VmError> {
        for addr in [self.start, self.breakpoint] {
            if !program.is_leader(addr) {
                return Err(VmError::HookAddress(addr));
            }
        }
        let end = self.mutation_offset as u64 + self.mutation_size as u64;
        if self.mutation_size == 0 || end > program.input_size() as u64 {
            return Err(VmError::HookRange {
                offset: self.mutation_offset,
                size: self.mutation_size,
                input_size: program.input_size(),
            });
        }
        Ok(())
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.mutation_offset as usize..(self.mutation_offset + self.mutation_size) as usize
    }

    /// Parses `start:offset:len:breakpoint`.
    pub fn parse(s: &str) -> Option<FuzzHook> {
        let parts: Vec<u32> = s
            .split(':')
            .map(crate::hexfmt::parse)
            .collect::<Option<_>>()?;
        match parts[..] {
            [start, mutation_offset, mutation_size, breakpoint] => Some(FuzzHook {
                start,
                mutation_offset,
                mutation_size,
                breakpoint,
            }),
            _ => None,
        }
    }
}

impl std::fmt::Display for FuzzHook {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:#x}:{}:{}:{:#x}",
            self.start, self.mutation_offset, self.mutation_size, self.breakpoint
        )
    }
}

/// Pads or truncates `bytes` to the program's input size.
pub fn fit_input(bytes: &[u8], input_size: u32) -> Vec<u8> {
    let mut v = bytes.to_vec();
    v.resize(input_size as usize, 0);
    v
}
