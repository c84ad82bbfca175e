//! Heap shadow memory and memory-safety detectors.
//!
//! Every heap byte carries one of four states. Allocation, free and every
//! load/store go through [`ShadowMemory`], which classifies illegal events
//! into the ten [`DetectorKind`] classes.
//!
//! Classification of an access to an `Unaddressable` byte, first match wins:
//!
//! 1. the access started inside a live allocation and ran past its end:
//!    overflow (write) / over-read (read);
//! 2. the byte lies inside a freed allocation: use-after-free;
//! 3. the nearest allocation, live or freed, within [`ADJACENCY_WINDOW`]
//!    bytes: overflow/over-read when the byte is past its end,
//!    underflow/under-read when before its base (ties go to past-end);
//! 4. otherwise invalid read / invalid write.
//!
//! Multi-byte accesses are checked byte by byte in address order and the
//! first violating byte determines the single report.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::minivm::layout::PagedBytes;

/// Attribution radius for over/underflow classification.
pub const ADJACENCY_WINDOW: u32 = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum ShadowState {
    Unaddressable = 0,
    Uninitialized = 1,
    Defined = 2,
    Readable = 3,
}

impl ShadowState {
    fn from_u8(v: u8) -> ShadowState {
        match v {
            1 => ShadowState::Uninitialized,
            2 => ShadowState::Defined,
            3 => ShadowState::Readable,
            _ => ShadowState::Unaddressable,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    BufferOverflow,
    BufferOverRead,
    BufferUnderflow,
    BufferUnderRead,
    DoubleFree,
    UseAfterFree,
    WildFree,
    UninitializedAccess,
    InvalidRead,
    InvalidWrite,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 10] = [
        DetectorKind::BufferOverflow,
        DetectorKind::BufferOverRead,
        DetectorKind::BufferUnderflow,
        DetectorKind::BufferUnderRead,
        DetectorKind::DoubleFree,
        DetectorKind::UseAfterFree,
        DetectorKind::WildFree,
        DetectorKind::UninitializedAccess,
        DetectorKind::InvalidRead,
        DetectorKind::InvalidWrite,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DetectorKind::BufferOverflow => "buffer_overflow",
            DetectorKind::BufferOverRead => "buffer_over_read",
            DetectorKind::BufferUnderflow => "buffer_underflow",
            DetectorKind::BufferUnderRead => "buffer_under_read",
            DetectorKind::DoubleFree => "double_free",
            DetectorKind::UseAfterFree => "use_after_free",
            DetectorKind::WildFree => "wild_free",
            DetectorKind::UninitializedAccess => "uninitialized_access",
            DetectorKind::InvalidRead => "invalid_read",
            DetectorKind::InvalidWrite => "invalid_write",
        }
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemOp {
    Read,
    Write,
    Free,
    Alloc,
}

impl fmt::Display for MemOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MemOp::Read => "read",
            MemOp::Write => "write",
            MemOp::Free => "free",
            MemOp::Alloc => "alloc",
        })
    }
}

/// Structured diagnostic for one memory-safety violation.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DetectorReport {
    pub kind: DetectorKind,
    #[serde(with = "crate::hexfmt")]
    pub address: u32,
    pub operation: MemOp,
    #[serde(with = "crate::hexfmt")]
    pub pc: u32,
    /// Faulting pc first, then call sites innermost first.
    #[serde(with = "crate::hexfmt::list")]
    pub backtrace: Vec<u32>,
}

impl fmt::Display for DetectorReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} on {} of {} at pc {}",
            self.kind,
            self.operation,
            crate::hexfmt::addr(self.address),
            crate::hexfmt::addr(self.pc)
        )?;
        if !self.backtrace.is_empty() {
            let frames: Vec<String> = self
                .backtrace
                .iter()
                .map(|&a| crate::hexfmt::addr(a))
                .collect();
            write!(f, " [{}]", frames.join(" <- "))?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Allocation {
    pub base: u32,
    pub len: u32,
    pub live: bool,
    pub freed_once: bool,
}

impl Allocation {
    pub fn end(&self) -> u32 {
        self.base + self.len
    }

    fn contains(&self, addr: u32) -> bool {
        addr >= self.base && addr < self.end()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AllocError {
    Overlap { base: u32, len: u32, existing: u32 },
    OutOfRegion { base: u32, len: u32 },
}

impl fmt::Display for AllocError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AllocError::Overlap {
                base,
                len,
                existing,
            } => write!(
                f,
                "allocation {base:#x}+{len} overlaps live allocation at {existing:#x}"
            ),
            AllocError::OutOfRegion { base, len } => {
                write!(f, "allocation {base:#x}+{len} lies outside the heap")
            }
        }
    }
}

impl std::error::Error for AllocError {}

/// Shadow state over `[start, end)` plus the allocation registry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShadowMemory {
    start: u32,
    end: u32,
    states: PagedBytes,
    allocations: Vec<Allocation>,
}

impl ShadowMemory {
    pub fn new(start: u32, end: u32) -> Self {
        assert!(start <= end, "inverted shadow region");
        ShadowMemory {
            start,
            end,
            states: PagedBytes::new(end - start, ShadowState::Unaddressable as u8),
            allocations: Vec::new(),
        }
    }

    pub fn region(&self) -> (u32, u32) {
        (self.start, self.end)
    }

    pub fn covers(&self, addr: u32) -> bool {
        addr >= self.start && addr < self.end
    }

    /// State of a heap byte; addresses outside the region read as unaddressable.
    pub fn state(&self, addr: u32) -> ShadowState {
        if !self.covers(addr) {
            return ShadowState::Unaddressable;
        }
        ShadowState::from_u8(self.states.get(addr - self.start))
    }

    fn set(&mut self, addr: u32, state: ShadowState) {
        self.states.set(addr - self.start, state as u8);
    }

    pub fn allocations(&self) -> &[Allocation] {
        &self.allocations
    }

    pub fn live_allocations(&self) -> impl Iterator<Item = &Allocation> {
        self.allocations.iter().filter(|a| a.live)
    }

    /// Configuration-time marking of a read-only range. Bytes inside live
    /// allocations are left alone.
    pub fn mark_readable(&mut self, base: u32, len: u32) {
        for addr in base..base.saturating_add(len) {
            if self.covers(addr) && self.state(addr) == ShadowState::Unaddressable {
                self.set(addr, ShadowState::Readable);
            }
        }
    }

    pub fn on_alloc(&mut self, base: u32, len: u32) -> Result<(), AllocError> {
        let end = base as u64 + len as u64;
        if !self.covers(base) || end > self.end as u64 {
            return Err(AllocError::OutOfRegion { base, len });
        }
        let end = end as u32;
        if let Some(a) = self
            .allocations
            .iter()
            .find(|a| a.live && a.len > 0 && len > 0 && base < a.end() && a.base < end)
        {
            return Err(AllocError::Overlap {
                base,
                len,
                existing: a.base,
            });
        }
        for addr in base..end {
            self.set(addr, ShadowState::Uninitialized);
        }
        self.allocations.push(Allocation {
            base,
            len,
            live: true,
            freed_once: false,
        });
        Ok(())
    }

    pub fn on_free(&mut self, base: u32, pc: u32, backtrace: &[u32]) -> Result<(), DetectorReport> {
        if let Some(idx) = self
            .allocations
            .iter()
            .rposition(|a| a.live && a.base == base)
        {
            let alloc = self.allocations[idx];
            for addr in alloc.base..alloc.end() {
                self.set(addr, ShadowState::Unaddressable);
            }
            let record = &mut self.allocations[idx];
            record.live = false;
            record.freed_once = true;
            return Ok(());
        }
        let kind = if self.allocations.iter().any(|a| a.base == base) {
            DetectorKind::DoubleFree
        } else {
            DetectorKind::WildFree
        };
        Err(report(kind, base, MemOp::Free, pc, backtrace))
    }

    pub fn on_read(
        &self,
        addr: u32,
        len: u32,
        pc: u32,
        backtrace: &[u32],
    ) -> Result<(), DetectorReport> {
        for b in byte_range(addr, len) {
            if !self.covers(b) {
                continue;
            }
            match self.state(b) {
                ShadowState::Defined | ShadowState::Readable => {}
                ShadowState::Uninitialized => {
                    return Err(report(
                        DetectorKind::UninitializedAccess,
                        b,
                        MemOp::Read,
                        pc,
                        backtrace,
                    ))
                }
                ShadowState::Unaddressable => {
                    let kind = self.classify_unaddressable(addr, b, MemOp::Read);
                    return Err(report(kind, b, MemOp::Read, pc, backtrace));
                }
            }
        }
        Ok(())
    }

    /// Checks and applies a write. Bytes before the first violating byte are
    /// committed (become `Defined`).
    pub fn on_write(
        &mut self,
        addr: u32,
        len: u32,
        pc: u32,
        backtrace: &[u32],
    ) -> Result<(), DetectorReport> {
        for b in byte_range(addr, len) {
            if !self.covers(b) {
                continue;
            }
            match self.state(b) {
                ShadowState::Uninitialized | ShadowState::Defined => {
                    self.set(b, ShadowState::Defined)
                }
                ShadowState::Readable => {
                    return Err(report(
                        DetectorKind::InvalidWrite,
                        b,
                        MemOp::Write,
                        pc,
                        backtrace,
                    ))
                }
                ShadowState::Unaddressable => {
                    let kind = self.classify_unaddressable(addr, b, MemOp::Write);
                    return Err(report(kind, b, MemOp::Write, pc, backtrace));
                }
            }
        }
        Ok(())
    }

    /// Checks a write without committing it.
    pub fn check_write(&self, addr: u32, len: u32) -> Option<DetectorKind> {
        let mut probe = self.clone();
        probe.on_write(addr, len, 0, &[]).err().map(|r| r.kind)
    }

    fn classify_unaddressable(&self, origin: u32, byte: u32, op: MemOp) -> DetectorKind {
        let (past_end, before_base, invalid) = match op {
            MemOp::Write => (
                DetectorKind::BufferOverflow,
                DetectorKind::BufferUnderflow,
                DetectorKind::InvalidWrite,
            ),
            _ => (
                DetectorKind::BufferOverRead,
                DetectorKind::BufferUnderRead,
                DetectorKind::InvalidRead,
            ),
        };
        if self
            .allocations
            .iter()
            .any(|a| a.live && a.contains(origin) && byte >= a.end())
        {
            return past_end;
        }
        if self.allocations.iter().any(|a| !a.live && a.contains(byte)) {
            return DetectorKind::UseAfterFree;
        }

        let mut best: Option<(u32, bool)> = None;
        for a in &self.allocations {
            let candidate = if byte >= a.end() {
                (byte - a.end() + 1, true)
            } else if byte < a.base {
                (a.base - byte, false)
            } else {
                continue;
            };
            if candidate.0 > ADJACENCY_WINDOW {
                continue;
            }
            best = match best {
                None => Some(candidate),
                Some(cur)
                    if candidate.0 < cur.0 || (candidate.0 == cur.0 && candidate.1 && !cur.1) =>
                {
                    Some(candidate)
                }
                keep => keep,
            };
        }
        match best {
            Some((_, true)) => past_end,
            Some((_, false)) => before_base,
            None => invalid,
        }
    }
}

fn byte_range(addr: u32, len: u32) -> impl Iterator<Item = u32> {
    (0..len).map_while(move |i| addr.checked_add(i))
}

fn report(
    kind: DetectorKind,
    address: u32,
    operation: MemOp,
    pc: u32,
    backtrace: &[u32],
) -> DetectorReport {
    DetectorReport {
        kind,
        address,
        operation,
        pc,
        backtrace: backtrace.to_vec(),
    }
}
