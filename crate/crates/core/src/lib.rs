//! Hybrid greybox fuzzing with selective symbolic execution.
//!
//! The crate bundles a small deterministic virtual machine ([`minivm`]) as
//! the target, static CFG construction and edge coverage ([`cfg`]), heap
//! shadow memory with ten detector classes ([`shadow`]), a coverage-guided
//! mutation engine ([`fuzz`]), sliding-window plateau detection
//! ([`plateau`]), frontier extraction and prioritisation ([`frontier`]),
//! snapshot-based concolic exploration with an in-repo bitvector solver
//! ([`symexec`]), and the orchestrating loop with reporting ([`campaign`]).

pub mod campaign;
pub mod cfg;
pub mod error;
pub mod fixtures;
pub mod frontier;
pub mod fuzz;
pub mod hexfmt;
pub mod minivm;
pub mod plateau;
pub mod shadow;
pub mod symexec;

pub use error::{AsmError, CampaignError, DecodeError, IntegrityError, ProgramError, VmError};
