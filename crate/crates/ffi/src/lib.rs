//! C ABI for the hyfuzz library.
//!
//! Programs, campaign configurations and campaign reports are opaque heap
//! handles created and released through this interface. Every fallible call
//! returns an [`HfStatus`]; on failure a message is available from
//! [`hf_last_error`] until the next failing call on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use hyfuzz::campaign::{self, CampaignConfig, CampaignReport};
use hyfuzz::cfg::Cfg;
use hyfuzz::fuzz::{fit_input, FuzzTarget};
use hyfuzz::minivm::{self, ExecStatus, Program};
use hyfuzz::symexec::{self, PairOutcome, SymexecConfig};
use hyfuzz::CampaignError;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Assembly = 3,
    Decode = 4,
    Config = 5,
    Vm = 6,
    Integrity = 7,
    Io = 8,
    NoSeeds = 9,
    IndexOutOfRange = 10,
    BufferTooSmall = 11,
    Panic = 12,
}

/// How an execution ended.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HfExecStatus {
    Halted = 0,
    Crashed = 1,
    BreakpointHit = 2,
    BudgetExhausted = 3,
}

/// Summary of a single execution.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct HfExecResult {
    pub status: HfExecStatus,
    pub steps: u64,
    pub edges: usize,
    pub violations: usize,
    pub leaks: usize,
}

/// Result of solving one constraint pair.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HfPairOutcome {
    Sat = 0,
    Unsat = 1,
    Unknown = 2,
    ValidationFailed = 3,
    Skipped = 4,
}

/// A loaded program and its control-flow graph.
pub struct HfProgram {
    program: Program,
    cfg: Cfg,
}

/// A mutable campaign configuration.
pub struct HfConfig {
    config: CampaignConfig,
}

/// A finished campaign.
pub struct HfReport {
    report: CampaignReport,
    kinds: Vec<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn fail(status: HfStatus, message: impl ToString) -> HfStatus {
    let text = message.to_string().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
    status
}

fn guard(f: impl FnOnce() -> HfStatus) -> HfStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(HfStatus::Panic, "internal panic"))
}

fn campaign_status(e: &CampaignError) -> HfStatus {
    match e {
        CampaignError::NoSeeds => HfStatus::NoSeeds,
        CampaignError::Config(_) => HfStatus::Config,
        CampaignError::Vm(_) => HfStatus::Vm,
        CampaignError::Integrity(_) => HfStatus::Integrity,
        CampaignError::Io { .. } => HfStatus::Io,
    }
}

unsafe fn bytes<'a>(data: *const u8, len: usize) -> Option<&'a [u8]> {
    if len == 0 {
        Some(&[])
    } else if data.is_null() {
        None
    } else {
        Some(slice::from_raw_parts(data, len))
    }
}

unsafe fn text<'a>(s: *const c_char) -> Result<&'a str, HfStatus> {
    if s.is_null() {
        return Err(fail(HfStatus::NullPointer, "null string"));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|e| fail(HfStatus::InvalidUtf8, e))
}

fn publish<T>(out: *mut *mut T, value: T) -> HfStatus {
    unsafe { *out = Box::into_raw(Box::new(value)) };
    HfStatus::Ok
}

fn wrap(program: Program) -> HfProgram {
    let cfg = Cfg::build(&program);
    HfProgram { program, cfg }
}

/// Message for the most recent failure on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn hf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Assembles NUL-terminated source text.
///
/// # Safety
/// `source` must be a valid C string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn hf_program_from_source(
    source: *const c_char,
    out: *mut *mut HfProgram,
) -> HfStatus {
    guard(|| {
        if out.is_null() {
            return fail(HfStatus::NullPointer, "null output pointer");
        }
        let src = match text(source) {
            Ok(s) => s,
            Err(s) => return s,
        };
        match minivm::assemble(src) {
            Ok(p) => publish(out, wrap(p)),
            Err(e) => fail(HfStatus::Assembly, e),
        }
    })
}

/// Decodes a binary program container.
///
/// # Safety
/// `data` must point to `len` readable bytes and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hf_program_from_bytes(
    data: *const u8,
    len: usize,
    out: *mut *mut HfProgram,
) -> HfStatus {
    guard(|| {
        if out.is_null() {
            return fail(HfStatus::NullPointer, "null output pointer");
        }
        let Some(data) = bytes(data, len) else {
            return fail(HfStatus::NullPointer, "null data");
        };
        match minivm::decode(data) {
            Ok(p) => publish(out, wrap(p)),
            Err(e) => fail(HfStatus::Decode, e),
        }
    })
}

/// Releases a program. Null is ignored.
///
/// # Safety
/// `program` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hf_program_free(program: *mut HfProgram) {
    if !program.is_null() {
        drop(Box::from_raw(program));
    }
}

/// Declared input size in bytes, or 0 for a null handle.
///
/// # Safety
/// `program` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hf_program_input_size(program: *const HfProgram) -> u32 {
    program.as_ref().map_or(0, |p| p.program.input_size())
}

/// Number of CFG edges reachable from the entry, or 0 for a null handle.
///
/// # Safety
/// `program` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hf_program_reachable_edges(program: *const HfProgram) -> usize {
    program.as_ref().map_or(0, |p| p.cfg.reachable_edge_count())
}

/// Runs one input with `budget` steps. A zero budget selects the default.
///
/// # Safety
/// `input` must point to `len` readable bytes and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hf_program_execute(
    program: *const HfProgram,
    input: *const u8,
    len: usize,
    budget: u64,
    out: *mut HfExecResult,
) -> HfStatus {
    guard(|| {
        let (Some(p), false) = (program.as_ref(), out.is_null()) else {
            return fail(HfStatus::NullPointer, "null handle or output");
        };
        let Some(input) = bytes(input, len) else {
            return fail(HfStatus::NullPointer, "null input");
        };
        let budget = if budget == 0 {
            minivm::DEFAULT_STEP_BUDGET
        } else {
            budget
        };
        let input = fit_input(input, p.program.input_size());
        match minivm::execute(&p.program, &input, None, budget) {
            Ok(o) => {
                let status = match o.status {
                    ExecStatus::Halted => HfExecStatus::Halted,
                    ExecStatus::Crashed => HfExecStatus::Crashed,
                    ExecStatus::BreakpointHit => HfExecStatus::BreakpointHit,
                    ExecStatus::BudgetExhausted => HfExecStatus::BudgetExhausted,
                };
                *out = HfExecResult {
                    status,
                    steps: o.steps_used,
                    edges: o.edge_trace.len(),
                    violations: o.violations.len(),
                    leaks: o.leaks.len(),
                };
                HfStatus::Ok
            }
            Err(e) => fail(HfStatus::Vm, e),
        }
    })
}

/// Solves the branch from block `src` into block `dst` starting from
/// `witness`. On `Sat` the new input is copied to `buf` (capacity `cap`) and
/// its length stored in `out_len`.
///
/// # Safety
/// Pointers must be valid for the lengths given; `outcome` and `out_len` must
/// be writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn hf_solve_pair(
    program: *const HfProgram,
    witness: *const u8,
    witness_len: usize,
    src: u32,
    dst: u32,
    outcome: *mut HfPairOutcome,
    buf: *mut u8,
    cap: usize,
    out_len: *mut usize,
) -> HfStatus {
    guard(|| {
        let Some(p) = program.as_ref() else {
            return fail(HfStatus::NullPointer, "null program");
        };
        if outcome.is_null() || out_len.is_null() {
            return fail(HfStatus::NullPointer, "null output pointer");
        }
        let Some(w) = bytes(witness, witness_len) else {
            return fail(HfStatus::NullPointer, "null witness");
        };
        let w = fit_input(w, p.program.input_size());
        let conf = SymexecConfig::default();
        let target = match FuzzTarget::new(&p.program, &p.cfg, conf.step_budget, None, &w) {
            Ok(t) => t,
            Err(e) => return fail(HfStatus::Vm, e),
        };
        *out_len = 0;
        *outcome = match symexec::run_pair(&target, &w, src, dst, &conf) {
            PairOutcome::Sat { input, .. } => {
                if buf.is_null() || cap < input.bytes.len() {
                    *outcome = HfPairOutcome::Sat;
                    *out_len = input.bytes.len();
                    return fail(HfStatus::BufferTooSmall, "output buffer too small");
                }
                ptr::copy_nonoverlapping(input.bytes.as_ptr(), buf, input.bytes.len());
                *out_len = input.bytes.len();
                HfPairOutcome::Sat
            }
            PairOutcome::Unsat { .. } => HfPairOutcome::Unsat,
            PairOutcome::Unknown { .. } => HfPairOutcome::Unknown,
            PairOutcome::ValidationFailed { .. } => HfPairOutcome::ValidationFailed,
            PairOutcome::Skipped(_) => HfPairOutcome::Skipped,
        };
        HfStatus::Ok
    })
}

/// Creates a configuration holding the defaults.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hf_config_new(out: *mut *mut HfConfig) -> HfStatus {
    if out.is_null() {
        return fail(HfStatus::NullPointer, "null output pointer");
    }
    publish(
        out,
        HfConfig {
            config: CampaignConfig::default(),
        },
    )
}

/// Sets one configuration key, using the same keys as the config file.
///
/// # Safety
/// `config` must be a live handle; `key` and `value` valid C strings.
#[no_mangle]
pub unsafe extern "C" fn hf_config_set(
    config: *mut HfConfig,
    key: *const c_char,
    value: *const c_char,
) -> HfStatus {
    guard(|| {
        let Some(c) = config.as_mut() else {
            return fail(HfStatus::NullPointer, "null config");
        };
        let (k, v) = match (text(key), text(value)) {
            (Ok(k), Ok(v)) => (k, v),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        match c.config.set(k, v) {
            Ok(()) => HfStatus::Ok,
            Err(e) => fail(HfStatus::Config, e),
        }
    })
}

/// Releases a configuration. Null is ignored.
///
/// # Safety
/// `config` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hf_config_free(config: *mut HfConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Runs a campaign from `count` seeds given as parallel pointer and length
/// arrays. A null `config` uses the defaults.
///
/// # Safety
/// `seeds` and `lens` must hold `count` entries, each seed pointing to its
/// length in readable bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hf_campaign_run(
    program: *const HfProgram,
    config: *const HfConfig,
    seeds: *const *const u8,
    lens: *const usize,
    count: usize,
    out: *mut *mut HfReport,
) -> HfStatus {
    guard(|| {
        let Some(p) = program.as_ref() else {
            return fail(HfStatus::NullPointer, "null program");
        };
        if out.is_null() || (count > 0 && (seeds.is_null() || lens.is_null())) {
            return fail(HfStatus::NullPointer, "null seeds or output");
        }
        let mut owned = Vec::with_capacity(count);
        for i in 0..count {
            match bytes(*seeds.add(i), *lens.add(i)) {
                Some(s) => owned.push(s.to_vec()),
                None => return fail(HfStatus::NullPointer, format!("seed {i} is null")),
            }
        }
        let default = CampaignConfig::default();
        let conf = config.as_ref().map_or(&default, |c| &c.config);
        match campaign::run(&p.program, &owned, conf) {
            Ok(report) => {
                let kinds = report
                    .crashes
                    .iter()
                    .map(|c| CString::new(c.report.kind_name()).unwrap_or_default())
                    .collect();
                publish(out, HfReport { report, kinds })
            }
            Err(e) => fail(campaign_status(&e), e),
        }
    })
}

/// Edges covered by the campaign.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hf_report_covered_edges(report: *const HfReport) -> usize {
    report.as_ref().map_or(0, |r| r.report.covered_edges)
}

/// Reachable edges of the target program.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hf_report_reachable_edges(report: *const HfReport) -> usize {
    report.as_ref().map_or(0, |r| r.report.reachable_edge_total)
}

/// Iterations the campaign ran.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hf_report_iterations(report: *const HfReport) -> u64 {
    report.as_ref().map_or(0, |r| r.report.iterations)
}

/// Number of symbolic phases triggered.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hf_report_symbolic_phases(report: *const HfReport) -> usize {
    report
        .as_ref()
        .map_or(0, |r| r.report.symbolic_phases.len())
}

/// Number of unique crashes.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hf_report_crash_count(report: *const HfReport) -> usize {
    report.as_ref().map_or(0, |r| r.report.crashes.len())
}

/// Kind name of crash `index`, owned by the report, or null when out of range.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hf_report_crash_kind(
    report: *const HfReport,
    index: usize,
) -> *const c_char {
    report
        .as_ref()
        .and_then(|r| r.kinds.get(index))
        .map_or(ptr::null(), |s| s.as_ptr())
}

/// Copies the input of crash `index` into `buf`, storing its length in
/// `out_len` even when the buffer is too small.
///
/// # Safety
/// `buf` must be writable for `cap` bytes and `out_len` writable.
#[no_mangle]
pub unsafe extern "C" fn hf_report_crash_input(
    report: *const HfReport,
    index: usize,
    buf: *mut u8,
    cap: usize,
    out_len: *mut usize,
) -> HfStatus {
    let Some(r) = report.as_ref() else {
        return fail(HfStatus::NullPointer, "null report");
    };
    if out_len.is_null() {
        return fail(HfStatus::NullPointer, "null length pointer");
    }
    let Some(c) = r.report.crashes.get(index) else {
        return fail(HfStatus::IndexOutOfRange, format!("no crash {index}"));
    };
    *out_len = c.bytes.len();
    if buf.is_null() || cap < c.bytes.len() {
        return fail(HfStatus::BufferTooSmall, "output buffer too small");
    }
    ptr::copy_nonoverlapping(c.bytes.as_ptr(), buf, c.bytes.len());
    HfStatus::Ok
}

/// Writes the report files into directory `dir`.
///
/// # Safety
/// `report` must be a live handle and `dir` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn hf_report_emit(report: *const HfReport, dir: *const c_char) -> HfStatus {
    guard(|| {
        let Some(r) = report.as_ref() else {
            return fail(HfStatus::NullPointer, "null report");
        };
        let dir = match text(dir) {
            Ok(d) => d,
            Err(s) => return s,
        };
        match campaign::emit_report(&r.report, Path::new(dir)) {
            Ok(_) => HfStatus::Ok,
            Err(e) => fail(campaign_status(&e), e),
        }
    })
}

/// Releases a report. Null is ignored.
///
/// # Safety
/// `report` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hf_report_free(report: *mut HfReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}
