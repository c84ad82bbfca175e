use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::ser::SerializeMap;
use serde::{Serialize, Serializer};

use super::{mutate, schedule, Corpus, FuzzHook, Origin, TestInput};
use crate::cfg::{Cfg, CoverageMap, Edge};
use crate::error::{IntegrityError, VmError};
use crate::hexfmt;
use crate::minivm::{
    execute, ExecOutcome, ExecStatus, Fault, FaultKind, Machine, Program, VmConfig, VmState,
};
use crate::shadow::DetectorReport;

/// Execution front end shared by fuzzing and validation. With a hook, runs
/// resume from a snapshot taken when the seed first reached `hook.start`.
#[derive(Clone, Debug)]
pub struct FuzzTarget<'p> {
    program: &'p Program,
    cfg: &'p Cfg,
    budget: u64,
    resume: Option<Resume>,
}

#[derive(Clone, Debug)]
struct Resume {
    hook: FuzzHook,
    state: VmState,
    prefix: Vec<Edge>,
    steps: u64,
}

impl<'p> FuzzTarget<'p> {
    pub fn new(
        program: &'p Program,
        cfg: &'p Cfg,
        budget: u64,
        hook: Option<FuzzHook>,
        seed: &[u8],
    ) -> Result<Self, VmError> {
        if budget == 0 {
            return Err(VmError::ZeroBudget);
        }
        let resume = match hook {
            None => None,
            Some(hook) => {
                hook.validate(program)?;
                let mut m = Machine::new(program, VmConfig::with_budget(budget));
                while m.state().pc != hook.start {
                    if m.step(seed).stop.is_some() {
                        return Err(VmError::HookStartNotReached(hook.start));
                    }
                }
                Some(Resume {
                    hook,
                    state: m.snapshot()?,
                    prefix: m.trace().to_vec(),
                    steps: m.steps(),
                })
            }
        };
        Ok(FuzzTarget {
            program,
            cfg,
            budget,
            resume,
        })
    }

    pub fn program(&self) -> &'p Program {
        self.program
    }

    pub fn cfg(&self) -> &'p Cfg {
        self.cfg
    }

    pub fn budget(&self) -> u64 {
        self.budget
    }

    pub fn hook(&self) -> Option<&FuzzHook> {
        self.resume.as_ref().map(|r| &r.hook)
    }

    /// Block every trace starts from.
    pub fn start_block(&self) -> u32 {
        self.program.entry()
    }

    pub fn run(&self, input: &[u8]) -> ExecOutcome {
        let Some(r) = &self.resume else {
            return execute(self.program, input, None, self.budget).expect("budget is positive");
        };
        let remaining = self.budget - r.steps;
        if remaining == 0 {
            return ExecOutcome {
                status: ExecStatus::BudgetExhausted,
                edge_trace: r.prefix.clone(),
                violations: Vec::new(),
                fault: None,
                steps_used: r.steps,
                leaks: Vec::new(),
            };
        }
        let mut m = Machine::restore(
            self.program,
            VmConfig::with_budget(remaining),
            r.state.clone(),
        )
        .expect("snapshot was taken on this program");
        m.set_breakpoint(Some(r.hook.breakpoint));
        let mut out = m.run(input);
        let mut trace = r.prefix.clone();
        trace.append(&mut out.edge_trace);
        out.edge_trace = trace;
        out.steps_used += r.steps;
        out
    }
}

/// What made an execution crash.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CrashReport {
    Detector(DetectorReport),
    Fault(Fault),
}

impl CrashReport {
    pub fn from_outcome(out: &ExecOutcome) -> Option<CrashReport> {
        if out.status != ExecStatus::Crashed {
            return None;
        }
        if let Some(r) = out.violations.first() {
            return Some(CrashReport::Detector(r.clone()));
        }
        out.fault.clone().map(CrashReport::Fault)
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            CrashReport::Detector(r) => r.kind.name(),
            CrashReport::Fault(f) => match f.kind {
                FaultKind::Unmapped { .. } => "unmapped_access",
                FaultKind::ReturnWithoutCall => "return_without_call",
                FaultKind::StackCorruption { .. } => "stack_corruption",
                FaultKind::CallDepthExceeded => "call_depth_exceeded",
            },
        }
    }

    pub fn pc(&self) -> u32 {
        match self {
            CrashReport::Detector(r) => r.pc,
            CrashReport::Fault(f) => f.pc,
        }
    }

    pub fn detector(&self) -> Option<&DetectorReport> {
        match self {
            CrashReport::Detector(r) => Some(r),
            CrashReport::Fault(_) => None,
        }
    }
}

impl std::fmt::Display for CrashReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CrashReport::Detector(r) => write!(f, "{r}"),
            CrashReport::Fault(x) => write!(f, "{} at pc {}", self.kind_name(), hexfmt::addr(x.pc)),
        }
    }
}

/// One unique crash, deduplicated by `(kind, pc)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CrashRecord {
    pub input_id: usize,
    pub bytes: Vec<u8>,
    pub iteration: u64,
    pub report: CrashReport,
}

impl Serialize for CrashRecord {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(None)?;
        m.serialize_entry("input_id", &self.input_id)?;
        m.serialize_entry("kind", self.report.kind_name())?;
        match &self.report {
            CrashReport::Detector(r) => {
                m.serialize_entry("address", &hexfmt::addr(r.address))?;
                m.serialize_entry("operation", &r.operation)?;
                m.serialize_entry("pc", &hexfmt::addr(r.pc))?;
                let bt: Vec<String> = r.backtrace.iter().map(|&a| hexfmt::addr(a)).collect();
                m.serialize_entry("backtrace", &bt)?;
            }
            CrashReport::Fault(f) => {
                match f.kind {
                    FaultKind::Unmapped { address, operation } => {
                        m.serialize_entry("address", &hexfmt::addr(address))?;
                        m.serialize_entry("operation", &operation)?;
                    }
                    FaultKind::StackCorruption { expected, found } => {
                        m.serialize_entry("expected", &hexfmt::addr(expected))?;
                        m.serialize_entry("found", &hexfmt::addr(found))?;
                    }
                    _ => {}
                }
                m.serialize_entry("pc", &hexfmt::addr(f.pc))?;
                let bt: Vec<String> = f.backtrace.iter().map(|&a| hexfmt::addr(a)).collect();
                m.serialize_entry("backtrace", &bt)?;
            }
        }
        m.serialize_entry("iteration", &self.iteration)?;
        m.end()
    }
}

#[derive(Clone, Debug, Default)]
pub struct CrashLog {
    records: Vec<CrashRecord>,
    seen: BTreeSet<(&'static str, u32)>,
}

impl CrashLog {
    pub fn new() -> Self {
        CrashLog::default()
    }

    pub fn records(&self) -> &[CrashRecord] {
        &self.records
    }

    /// Stores the crash if its `(kind, pc)` is new; returns its index.
    pub fn record(&mut self, bytes: &[u8], iteration: u64, report: CrashReport) -> Option<usize> {
        if !self.seen.insert((report.kind_name(), report.pc())) {
            return None;
        }
        let input_id = self.records.len();
        self.records.push(CrashRecord {
            input_id,
            bytes: bytes.to_vec(),
            iteration,
            report,
        });
        Some(input_id)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BatchResult {
    /// Corpus ids admitted during the batch.
    pub admitted: Vec<usize>,
    /// Indices into the crash log of crashes first seen in this batch.
    pub new_crashes: Vec<usize>,
    pub crashing_execs: u64,
    pub execs: u64,
}

/// Runs one fuzzing iteration: `batch_size` mutated executions. Inputs that
/// discover new edges are admitted; one cumulative count is appended to
/// the coverage history.
#[allow(clippy::too_many_arguments)]
pub fn run_batch(
    target: &FuzzTarget<'_>,
    corpus: &mut Corpus,
    cov: &mut CoverageMap,
    crashes: &mut CrashLog,
    batch_size: usize,
    rng_seed: u64,
    iteration: u64,
) -> Result<BatchResult, IntegrityError> {
    assert!(!corpus.is_empty(), "run_batch needs a non-empty corpus");
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut result = BatchResult::default();
    for _ in 0..batch_size {
        let pick = schedule(corpus, rng.gen());
        let donor = rng.gen_range(0..corpus.len());
        let bytes = mutate(
            &corpus.entries()[pick].input.bytes,
            rng.gen(),
            target.hook(),
            Some(&corpus.entries()[donor].input.bytes),
        );
        let out = target.run(&bytes);
        result.execs += 1;
        if let Some(report) = CrashReport::from_outcome(&out) {
            result.crashing_execs += 1;
            if let Some(idx) = crashes.record(&bytes, iteration, report) {
                result.new_crashes.push(idx);
            }
        }
        let new = cov.record_trace(target.cfg(), &out.edge_trace)?;
        if new > 0 {
            let input = TestInput {
                bytes,
                origin: Origin::Mutation,
                parent: Some(pick),
                discovered_edges: new,
                iteration,
                target: None,
            };
            let id = corpus.admit(input, target.start_block(), &out.edge_trace);
            result.admitted.push(id);
        }
    }
    cov.push_iteration();
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::minivm::assemble;
    use crate::shadow::DetectorKind;

    fn seeded<'p>(target: &FuzzTarget<'p>, cov: &mut CoverageMap, bytes: Vec<u8>) -> Corpus {
        let mut corpus = Corpus::new();
        let out = target.run(&bytes);
        cov.record_trace(target.cfg(), &out.edge_trace).unwrap();
        corpus.admit(
            TestInput::seed(bytes),
            target.start_block(),
            &out.edge_trace,
        );
        cov.push_iteration();
        corpus
    }

    #[test]
    fn fully_covered_seed_admits_nothing() {
        let p = assemble(".input 1\nIN r0, 0\nHALT").unwrap();
        let cfg = Cfg::build(&p);
        let t = FuzzTarget::new(&p, &cfg, 1000, None, &[0]).unwrap();
        let mut cov = CoverageMap::new();
        let mut corpus = seeded(&t, &mut cov, vec![0]);
        let mut crashes = CrashLog::new();
        let r = run_batch(&t, &mut corpus, &mut cov, &mut crashes, 64, 1, 1).unwrap();
        assert!(r.admitted.is_empty());
        assert_eq!(cov.history(), &[0, 0]);
    }

    #[test]
    fn magic_byte_found_for_twenty_seeds() {
        let p = fixtures::magic();
        let cfg = Cfg::build(&p);
        let t = FuzzTarget::new(&p, &cfg, 1000, None, &[0]).unwrap();
        for seed in 0..20u64 {
            let mut cov = CoverageMap::new();
            let mut corpus = seeded(&t, &mut cov, vec![0]);
            let mut crashes = CrashLog::new();
            let mut execs = 0;
            let mut i = 1;
            while cov.edge_count() < cfg.reachable_edge_count() && execs < 100_000 {
                let r = run_batch(
                    &t,
                    &mut corpus,
                    &mut cov,
                    &mut crashes,
                    256,
                    seed * 1000 + i,
                    i,
                )
                .unwrap();
                execs += r.execs;
                i += 1;
            }
            assert_eq!(cov.edge_count(), 2, "rng seed {seed}");
            assert!(corpus.entries().iter().any(|e| e.input.bytes == [0x42]));
        }
    }

    #[test]
    fn overflow_target_crashes() {
        let p = fixtures::overflow();
        let cfg = Cfg::build(&p);
        let t = FuzzTarget::new(&p, &cfg, 100_000, None, &[4]).unwrap();
        let mut cov = CoverageMap::new();
        let mut corpus = seeded(&t, &mut cov, vec![4]);
        let mut crashes = CrashLog::new();
        for i in 1..=20 {
            run_batch(&t, &mut corpus, &mut cov, &mut crashes, 256, i, i).unwrap();
        }
        let kinds: Vec<DetectorKind> = crashes
            .records()
            .iter()
            .filter_map(|c| c.report.detector().map(|r| r.kind))
            .collect();
        assert!(kinds.contains(&DetectorKind::BufferOverflow));
    }

    #[test]
    fn admitted_entries_replay_their_new_edges() {
        let p = fixtures::scoring();
        let cfg = Cfg::build(&p);
        let t = FuzzTarget::new(&p, &cfg, 1000, None, &[0; 4]).unwrap();
        let mut cov = CoverageMap::new();
        let mut corpus = seeded(&t, &mut cov, vec![0; 4]);
        let mut crashes = CrashLog::new();
        let mut seen = CoverageMap::new();
        for i in 1..=10 {
            run_batch(&t, &mut corpus, &mut cov, &mut crashes, 256, i, i).unwrap();
        }
        for e in corpus.entries() {
            let out = t.run(&e.input.bytes);
            let fresh = seen.record_trace(&cfg, &out.edge_trace).unwrap();
            if e.input.origin == Origin::Mutation {
                assert!(fresh >= 1);
            }
        }
    }

    #[test]
    fn hooked_runs_keep_outside_bytes() {
        let p = fixtures::checks();
        let cfg = Cfg::build(&p);
        let hook = FuzzHook {
            start: 0x04,
            mutation_offset: 1,
            mutation_size: 1,
            breakpoint: 0x18,
        };
        let seed = vec![0x41, 0x00];
        let t = FuzzTarget::new(&p, &cfg, 1000, Some(hook), &seed).unwrap();
        let mut cov = CoverageMap::new();
        let mut corpus = seeded(&t, &mut cov, seed);
        let mut crashes = CrashLog::new();
        for i in 1..=30 {
            run_batch(&t, &mut corpus, &mut cov, &mut crashes, 256, i, i).unwrap();
        }
        assert!(corpus.entries().iter().all(|e| e.input.bytes[0] == 0x41));
        let out = t.run(&[0x41, 0x42]);
        assert_eq!(out.status, ExecStatus::BreakpointHit);
        assert_eq!(out.edge_trace.first().unwrap().src, 0);
    }

    #[test]
    fn hook_start_must_be_reached() {
        let p = fixtures::checks();
        let cfg = Cfg::build(&p);
        let hook = FuzzHook {
            start: 0x18,
            mutation_offset: 0,
            mutation_size: 1,
            breakpoint: 0x18,
        };
        assert_eq!(
            FuzzTarget::new(&p, &cfg, 1000, Some(hook), &[0, 0]).unwrap_err(),
            VmError::HookStartNotReached(0x18)
        );
    }

    #[test]
    fn crashes_deduplicate_by_kind_and_pc() {
        let mut log = CrashLog::new();
        let report = CrashReport::Detector(DetectorReport {
            kind: DetectorKind::DoubleFree,
            address: 0x1010,
            operation: crate::shadow::MemOp::Free,
            pc: 8,
            backtrace: vec![8],
        });
        assert_eq!(log.record(&[1], 1, report.clone()), Some(0));
        assert_eq!(log.record(&[2], 2, report), None);
        let json = serde_json::to_string(&log.records()[0]).unwrap();
        assert_eq!(
            json,
            r#"{"input_id":0,"kind":"double_free","address":"0x1010","operation":"free","pc":"0x08","backtrace":["0x08"],"iteration":1}"#
        );
    }
}
