//! Bundled target programs used by tests, examples and the CLI.

use crate::minivm::{assemble, Program};
use crate::shadow::{DetectorKind, MemOp};

pub const CHECKS: &str = include_str!("../fixtures/checks.s");
pub const SCORING: &str = include_str!("../fixtures/scoring.s");
pub const GAUNTLET: &str = include_str!("../fixtures/gauntlet.s");
pub const MAGIC: &str = include_str!("../fixtures/magic.s");
pub const TAINT: &str = include_str!("../fixtures/taint.s");
pub const NESTED: &str = include_str!("../fixtures/nested.s");
pub const CALLS: &str = include_str!("../fixtures/calls.s");
pub const OVERFLOW: &str = include_str!("../fixtures/overflow.s");

/// One seeded-vulnerability program and the report it must produce.
#[derive(Clone, Copy, Debug)]
pub struct ZooEntry {
    pub name: &'static str,
    pub source: &'static str,
    pub kind: DetectorKind,
    pub address: u32,
    pub operation: MemOp,
}

macro_rules! zoo {
    ($($name:literal => $kind:ident, $addr:literal, $op:ident;)*) => {
        &[$(ZooEntry {
            name: $name,
            source: include_str!(concat!("../fixtures/zoo/", $name, ".s")),
            kind: DetectorKind::$kind,
            address: $addr,
            operation: MemOp::$op,
        },)*]
    };
}

/// Every program crashes when input byte 0 is 0x80 or above.
pub const ZOO: &[ZooEntry] = zoo! {
    "buffer_overflow" => BufferOverflow, 0x1020, Write;
    "buffer_over_read" => BufferOverRead, 0x1020, Read;
    "buffer_underflow" => BufferUnderflow, 0x100F, Write;
    "buffer_under_read" => BufferUnderRead, 0x100C, Read;
    "double_free" => DoubleFree, 0x1010, Free;
    "use_after_free" => UseAfterFree, 0x1014, Read;
    "wild_free" => WildFree, 0x2000, Free;
    "uninitialized_access" => UninitializedAccess, 0x1015, Read;
    "invalid_read" => InvalidRead, 0x8000, Read;
    "invalid_write" => InvalidWrite, 0x1003, Write;
};

macro_rules! benign {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../fixtures/benign/", $name, ".s"))),)*]
    };
}

/// Memory-safe control programs.
pub const BENIGN: &[(&str, &str)] = benign![
    "copy_loop",
    "bounded_index",
    "words",
    "rodata_read",
    "realloc_chain",
    "stack_use",
    "two_buffers",
    "free_null",
    "branchy",
    "leak_only",
];

fn load(src: &str) -> Program {
    assemble(src).expect("bundled fixture assembles")
}

pub fn checks() -> Program {
    load(CHECKS)
}

pub fn scoring() -> Program {
    load(SCORING)
}

pub fn gauntlet() -> Program {
    load(GAUNTLET)
}

pub fn magic() -> Program {
    load(MAGIC)
}

pub fn taint() -> Program {
    load(TAINT)
}

pub fn nested() -> Program {
    load(NESTED)
}

pub fn calls() -> Program {
    load(CALLS)
}

pub fn overflow() -> Program {
    load(OVERFLOW)
}

/// Looks a fixture up by name, including zoo and benign programs.
pub fn by_name(name: &str) -> Option<&'static str> {
    let named = [
        ("checks", CHECKS),
        ("scoring", SCORING),
        ("gauntlet", GAUNTLET),
        ("magic", MAGIC),
        ("taint", TAINT),
        ("nested", NESTED),
        ("calls", CALLS),
        ("overflow", OVERFLOW),
    ];
    named
        .into_iter()
        .find(|(n, _)| *n == name)
        .map(|(_, s)| s)
        .or_else(|| ZOO.iter().find(|z| z.name == name).map(|z| z.source))
        .or_else(|| BENIGN.iter().find(|(n, _)| *n == name).map(|(_, s)| *s))
}

/// Every bundled source.
pub fn all_sources() -> Vec<&'static str> {
    let mut v = vec![CHECKS, SCORING, GAUNTLET, MAGIC, TAINT, NESTED, CALLS, OVERFLOW];
    v.extend(ZOO.iter().map(|z| z.source));
    v.extend(BENIGN.iter().map(|(_, s)| *s));
    v
}
