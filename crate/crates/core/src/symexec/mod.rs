//! Selective symbolic execution from a concrete mid-execution snapshot.
//!
//! A witness input is replayed concretely up to the source block, the bytes
//! feeding the source branch are made symbolic, and a bounded breadth-first
//! search over input-dependent branches collects the path constraint to the
//! destination block. Solved bytes are written back into the witness.

mod concolic;
pub mod expr;
pub mod solver;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use concolic::{BranchEvent, Concolic, ConcolicStep, Symbolize};
pub use expr::{BinOp, CmpOp, Expr, ExprRef};
pub use solver::{solve_conjuncts, SolveResult, SolveStats, DEFAULT_SOLVER_BUDGET};

use crate::cfg::{Cfg, Edge};
use crate::error::VmError;
use crate::fuzz::{FuzzHook, FuzzTarget, Origin, TestInput};
use crate::minivm::{Instruction, Machine, Program, VmConfig, VmState, NUM_REGS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymexecConfig {
    /// Blocks explored past the source before a path is dropped.
    pub max_depth: usize,
    pub fork_cap: usize,
    pub solver_budget: u64,
    /// Candidate budget for the feasibility check at each fork.
    pub feasibility_budget: u64,
    /// Grow the symbolic byte set when exploration meets new input-dependent branches.
    pub lazy: bool,
    pub step_budget: u64,
}

impl Default for SymexecConfig {
    fn default() -> Self {
        SymexecConfig {
            max_depth: 64,
            fork_cap: 4096,
            solver_budget: DEFAULT_SOLVER_BUDGET,
            feasibility_budget: 20_000,
            lazy: true,
            step_budget: crate::minivm::DEFAULT_STEP_BUDGET,
        }
    }
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum SymError {
    #[error("stale witness: input never reaches block {}", crate::hexfmt::addr(*.0))]
    StaleWitness(u32),
    #[error("block {} does not end in a conditional branch", crate::hexfmt::addr(*.0))]
    NotConditional(u32),
    #[error("input-independent branch at {}", crate::hexfmt::addr(*.0))]
    InputIndependent(u32),
    #[error("{} unreachable from {} within depth", crate::hexfmt::addr(*.dst), crate::hexfmt::addr(*.src))]
    UnreachableWithinDepth { src: u32, dst: u32 },
    #[error("fork budget of {0} paths exhausted")]
    ForkBudget(usize),
    #[error(transparent)]
    Vm(#[from] VmError),
}

impl SymError {
    /// Short machine-readable reason.
    pub fn reason(&self) -> &'static str {
        match self {
            SymError::StaleWitness(_) => "stale_witness",
            SymError::NotConditional(_) => "not_conditional",
            SymError::InputIndependent(_) => "input_independent",
            SymError::UnreachableWithinDepth { .. } => "unreachable_within_depth",
            SymError::ForkBudget(_) => "fork_budget",
            SymError::Vm(_) => "vm_error",
        }
    }
}

/// Input bytes each location depends on.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TaintMap {
    pub regs: [BTreeSet<u32>; NUM_REGS],
    pub mem: BTreeMap<u32, BTreeSet<u32>>,
}

impl TaintMap {
    pub fn of(c: &Concolic<'_>) -> TaintMap {
        let mut t = TaintMap::default();
        for (r, e) in c.regs.iter().enumerate() {
            if let Some(e) = e {
                t.regs[r] = e.bytes();
            }
        }
        for (&a, e) in &c.mem {
            t.mem.insert(a, e.bytes());
        }
        t
    }
}

/// Snapshot at the first arrival at the source block, with the symbolic
/// shadow built during the replay.
#[derive(Clone, Debug)]
pub struct SymbolicState<'p> {
    pub base: VmState,
    pub src: u32,
    pub witness: Vec<u8>,
    pub taint: TaintMap,
    pub sym_bytes: BTreeSet<u32>,
    /// Input-dependent conditions met on the way to the snapshot.
    pub prefix: Vec<ExprRef>,
    pub imprecise: bool,
    concolic: Concolic<'p>,
}

impl<'p> SymbolicState<'p> {
    pub fn regs(&self) -> &[Option<ExprRef>; NUM_REGS] {
        &self.concolic.regs
    }
}

/// Conjunction of branch conditions driving execution from the snapshot to
/// the destination.
#[derive(Clone, Debug)]
pub struct PathConstraint {
    pub conjuncts: Vec<ExprRef>,
    /// Reconstructed prefix conditions that share bytes with the path.
    pub prefix: Vec<ExprRef>,
    pub sym_bytes: BTreeSet<u32>,
    pub forks: usize,
}

impl PathConstraint {
    pub fn all(&self) -> Vec<ExprRef> {
        self.prefix.iter().chain(&self.conjuncts).cloned().collect()
    }

    /// One conjunct per line, prefix conditions first.
    pub fn dump(&self) -> String {
        self.all().iter().map(|c| format!("{c}\n")).collect()
    }
}

impl fmt::Display for PathConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.dump())
    }
}

/// Replays `witness` concretely up to the first arrival at `src`.
pub fn prepare_state<'p>(
    program: &'p Program,
    witness: &[u8],
    src: u32,
    config: &SymexecConfig,
) -> Result<SymbolicState<'p>, SymError> {
    if config.step_budget == 0 {
        return Err(VmError::ZeroBudget.into());
    }
    let mut machine = Machine::new(program, VmConfig::with_budget(config.step_budget));
    machine.set_record_trace(false);
    let mut c = Concolic::new(machine, Symbolize::All);
    let mut prefix = Vec::new();
    while c.machine.state().pc != src {
        let step = c.step(witness, None);
        if step.event.stop.is_some() {
            return Err(SymError::StaleWitness(src));
        }
        prefix.extend(step.pins);
        if let Some(b) = step.branch {
            prefix.push(b.cond);
        }
    }
    Ok(SymbolicState {
        base: c.machine.snapshot()?,
        src,
        witness: witness.to_vec(),
        taint: TaintMap::of(&c),
        sym_bytes: BTreeSet::new(),
        prefix,
        imprecise: c.imprecise,
        concolic: c,
    })
}

/// Computes the symbolic byte set from the taint of the branch ending `src`.
pub fn mark_symbolic(
    state: &mut SymbolicState<'_>,
    hook: Option<&FuzzHook>,
) -> Result<BTreeSet<u32>, SymError> {
    let program = state.concolic.machine.program();
    let src = state.src;
    let branch_pc = program.block_end(src);
    if !matches!(program.fetch(branch_pc), Some(Instruction::Branch { .. })) {
        return Err(SymError::NotConditional(src));
    }
    let mut probe = state.concolic.clone();
    while probe.machine.state().pc != branch_pc {
        if probe.step(&state.witness, None).event.stop.is_some() {
            return Err(SymError::StaleWitness(src));
        }
    }
    let Some(Instruction::Branch {
        rs, src: operand, ..
    }) = probe.machine.current().copied()
    else {
        return Err(SymError::NotConditional(src));
    };
    let taint = TaintMap::of(&probe);
    let mut bytes = taint.regs[rs as usize].clone();
    if let crate::minivm::Operand::Reg(r) = operand {
        bytes.extend(taint.regs[r as usize].iter().copied());
    }
    if let Some(h) = hook {
        let range = h.range();
        bytes.retain(|&k| range.contains(&(k as usize)));
    }
    if bytes.is_empty() {
        return Err(SymError::InputIndependent(src));
    }
    state.sym_bytes = bytes.clone();
    Ok(bytes)
}

/// Explores paths from the snapshot until one enters `goal`.
pub fn explore(
    state: &SymbolicState<'_>,
    cfg: &Cfg,
    goal: u32,
    hook: Option<&FuzzHook>,
    config: &SymexecConfig,
) -> Result<PathConstraint, SymError> {
    let src = state.src;
    let unreachable = SymError::UnreachableWithinDepth { src, dst: goal };
    if !cfg.reaches(src, goal) {
        return Err(unreachable);
    }
    let witness = &state.witness;
    let free = |k: u32| -> bool {
        let in_hook = hook.is_none_or(|h| h.range().contains(&(k as usize)));
        in_hook && (config.lazy || state.sym_bytes.contains(&k))
    };
    let fixed_value = |k: u32| -> Option<u8> {
        (!free(k)).then(|| witness.get(k as usize).copied().unwrap_or(0))
    };

    let mut root = state.concolic.clone();
    root.concretize_bytes(&fixed_value);
    if !config.lazy || hook.is_some() {
        let allowed: BTreeSet<u32> = (0..root.machine.program().input_size())
            .filter(|&k| free(k))
            .collect();
        root.symbolize = Symbolize::Only(allowed);
    }
    let prefix: Vec<ExprRef> = state
        .prefix
        .iter()
        .map(|c| Expr::substitute(c, &fixed_value))
        .filter(|c| c.as_const().is_none())
        .collect();
    let fixed_map: BTreeMap<u32, u8> = BTreeMap::new();

    struct Path<'p> {
        c: Concolic<'p>,
        conds: Vec<ExprRef>,
        depth: usize,
    }
    let mut queue = VecDeque::from([Path {
        c: root,
        conds: Vec::new(),
        depth: 0,
    }]);
    let mut forks = 0usize;

    let finish = |conds: Vec<ExprRef>, forks: usize| {
        let mut sym_bytes = state.sym_bytes.clone();
        for c in &conds {
            c.collect_bytes(&mut sym_bytes);
        }
        let path_bytes = sym_bytes.clone();
        let related = closure(&prefix, &path_bytes);
        for c in &related {
            c.collect_bytes(&mut sym_bytes);
        }
        sym_bytes.retain(|&k| free(k));
        PathConstraint {
            conjuncts: conds,
            prefix: related,
            sym_bytes,
            forks,
        }
    };

    // Advances a path by one step; returns whether it is still alive.
    let advance = |p: &mut Path<'_>, force: Option<bool>| -> Result<Option<bool>, ()> {
        let step = p.c.step(witness, force);
        p.conds.extend(step.pins);
        if let Some(b) = step.branch {
            if force.is_none() {
                p.conds.push(b.cond);
            }
        }
        if step.event.stop.is_some() && step.event.edge.is_none() {
            return Err(());
        }
        if let Some(Edge { dst, .. }) = step.event.edge {
            if dst == goal {
                return Ok(Some(true));
            }
            p.depth += 1;
            if p.depth > config.max_depth || !cfg.reaches(dst, goal) {
                return Err(());
            }
        }
        if step.event.stop.is_some() {
            return Err(());
        }
        Ok(None)
    };

    while let Some(mut path) = queue.pop_front() {
        loop {
            if let Some(c) = path.c.pending_branch() {
                for dir in [true, false] {
                    let cond = if dir { c.clone() } else { Expr::negate(&c) };
                    let mut conds = path.conds.clone();
                    conds.push(cond);
                    let mut check = prefix.clone();
                    check.extend(conds.iter().cloned());
                    let (res, _) = solve_conjuncts(&check, &fixed_map, config.feasibility_budget);
                    if res == SolveResult::Unsat {
                        continue;
                    }
                    forks += 1;
                    if forks > config.fork_cap {
                        return Err(SymError::ForkBudget(config.fork_cap));
                    }
                    let mut child = Path {
                        c: path.c.clone(),
                        conds,
                        depth: path.depth,
                    };
                    match advance(&mut child, Some(dir)) {
                        Ok(Some(_)) => return Ok(finish(child.conds, forks)),
                        Ok(None) => queue.push_back(child),
                        Err(()) => {}
                    }
                }
                break;
            }
            match advance(&mut path, None) {
                Ok(Some(_)) => return Ok(finish(path.conds, forks)),
                Ok(None) => {}
                Err(()) => break,
            }
        }
    }
    Err(unreachable)
}

/// Prefix conditions transitively sharing bytes with `bytes`.
fn closure(prefix: &[ExprRef], bytes: &BTreeSet<u32>) -> Vec<ExprRef> {
    let mut reach = bytes.clone();
    let sets: Vec<BTreeSet<u32>> = prefix.iter().map(|c| c.bytes()).collect();
    let mut taken = vec![false; prefix.len()];
    loop {
        let mut grew = false;
        for (i, s) in sets.iter().enumerate() {
            if !taken[i] && !s.is_disjoint(&reach) {
                taken[i] = true;
                reach.extend(s.iter().copied());
                grew = true;
            }
        }
        if !grew {
            break;
        }
    }
    prefix
        .iter()
        .zip(taken)
        .filter(|&(_, t)| t)
        .map(|(c, _)| c.clone())
        .collect()
}

/// Solves a path constraint; an unknown result is retried once with twice the budget.
pub fn solve(phi: &PathConstraint, budget: u64) -> (SolveResult, SolveStats) {
    let all = phi.all();
    let fixed = BTreeMap::new();
    let (res, stats) = solve_conjuncts(&all, &fixed, budget);
    if res != SolveResult::Unknown {
        return (res, stats);
    }
    let (res, more) = solve_conjuncts(&all, &fixed, budget.saturating_mul(2));
    (
        res,
        SolveStats {
            candidates: stats.candidates + more.candidates,
        },
    )
}

/// Writes the model into a copy of the witness.
pub fn concretize(witness: &[u8], assignment: &BTreeMap<u32, u8>) -> TestInput {
    let mut bytes = witness.to_vec();
    for (&k, &v) in assignment {
        let k = k as usize;
        if k >= bytes.len() {
            bytes.resize(k + 1, 0);
        }
        bytes[k] = v;
    }
    TestInput {
        origin: Origin::Symbolic,
        ..TestInput::seed(bytes)
    }
}

/// Runs `input` concretely and checks that its trace enters `goal`.
pub fn validate(target: &FuzzTarget<'_>, input: &[u8], goal: u32) -> bool {
    target.run(input).reaches(goal)
}

/// Result of one constraint pair.
#[derive(Clone, Debug)]
pub enum PairOutcome {
    Sat {
        input: TestInput,
        phi: PathConstraint,
    },
    Unsat {
        phi: PathConstraint,
    },
    Unknown {
        phi: PathConstraint,
    },
    ValidationFailed {
        phi: PathConstraint,
    },
    Skipped(SymError),
}

impl PairOutcome {
    pub fn name(&self) -> &'static str {
        match self {
            PairOutcome::Sat { .. } => "sat",
            PairOutcome::Unsat { .. } => "unsat",
            PairOutcome::Unknown { .. } => "unknown",
            PairOutcome::ValidationFailed { .. } => "validation_fail",
            PairOutcome::Skipped(e) => e.reason(),
        }
    }
}

/// Full pipeline for one pair: prepare, mark, explore, solve, concretize, validate.
pub fn run_pair(
    target: &FuzzTarget<'_>,
    witness: &[u8],
    src: u32,
    goal: u32,
    config: &SymexecConfig,
) -> PairOutcome {
    let hook = target.hook();
    let mut state = match prepare_state(target.program(), witness, src, config) {
        Ok(s) => s,
        Err(e) => return PairOutcome::Skipped(e),
    };
    if let Err(e) = mark_symbolic(&mut state, hook) {
        return PairOutcome::Skipped(e);
    }
    let phi = match explore(&state, target.cfg(), goal, hook, config) {
        Ok(p) => p,
        Err(e) => return PairOutcome::Skipped(e),
    };
    match solve(&phi, config.solver_budget).0 {
        SolveResult::Unsat => PairOutcome::Unsat { phi },
        SolveResult::Unknown => PairOutcome::Unknown { phi },
        SolveResult::Sat(model) => {
            let input = concretize(witness, &model);
            if validate(target, &input.bytes, goal) {
                PairOutcome::Sat { input, phi }
            } else {
                PairOutcome::ValidationFailed { phi }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use proptest::prelude::*;

    fn cfg_of(p: &Program) -> Cfg {
        Cfg::build(p)
    }

    fn addr(p: &Program, label: &str) -> u32 {
        p.labels()[label]
    }

    #[test]
    fn entry_snapshot_is_initial() {
        let p = fixtures::checks();
        let s = prepare_state(&p, &[0, 0], p.entry(), &SymexecConfig::default()).unwrap();
        assert_eq!(s.base, VmState::initial(&p, &Default::default()));
        assert!(s.prefix.is_empty());
    }

    #[test]
    fn taint_of_sum() {
        let p = fixtures::taint();
        let check = addr(&p, "check");
        let mut s = prepare_state(&p, &[1, 2, 3], check, &SymexecConfig::default()).unwrap();
        assert_eq!(s.taint.regs[2], BTreeSet::from([0, 1]));
        assert_eq!(s.taint.regs[4], BTreeSet::from([2]));
        assert_eq!(mark_symbolic(&mut s, None).unwrap(), BTreeSet::from([0, 1]));
    }

    #[test]
    fn single_byte_and_constant_branches() {
        let p = crate::minivm::assemble(".input 8\n IN r0, 7\n BEQ r0, 5, y\n HALT\ny: HALT\n")
            .unwrap();
        let mut s = prepare_state(&p, &[0; 8], 0, &SymexecConfig::default()).unwrap();
        assert_eq!(mark_symbolic(&mut s, None).unwrap(), BTreeSet::from([7]));

        let p = crate::minivm::assemble(".input 1\n LOADI r0, 3\n BEQ r0, 5, y\n HALT\ny: HALT\n")
            .unwrap();
        let mut s = prepare_state(&p, &[0], 0, &SymexecConfig::default()).unwrap();
        assert_eq!(
            mark_symbolic(&mut s, None),
            Err(SymError::InputIndependent(0))
        );

        let p = fixtures::checks();
        let mut s = prepare_state(&p, &[0, 0], 0, &SymexecConfig::default()).unwrap();
        assert_eq!(
            mark_symbolic(&mut s, None),
            Err(SymError::NotConditional(0))
        );
    }

    #[test]
    fn stale_witness() {
        let p = fixtures::checks();
        let second = addr(&p, "second");
        let err = prepare_state(&p, &[0, 0], second, &SymexecConfig::default()).unwrap_err();
        assert_eq!(err, SymError::StaleWitness(second));
    }

    #[test]
    fn direct_successor_single_conjunct() {
        let p = fixtures::checks();
        let cfg = cfg_of(&p);
        let conf = SymexecConfig::default();
        let mut s = prepare_state(&p, &[0, 0], 0x08, &conf).unwrap();
        mark_symbolic(&mut s, None).unwrap();
        let phi = explore(&s, &cfg, 0x10, None, &conf).unwrap();
        assert_eq!(phi.conjuncts.len(), 1);
        assert_eq!(phi.dump(), "(eq (byte 0) 65)\n");
        let phi = explore(&s, &cfg, 0x0C, None, &conf).unwrap();
        assert_eq!(phi.dump(), "(ne (byte 0) 65)\n");
    }

    #[test]
    fn nested_two_conjuncts_in_order() {
        let p = fixtures::nested();
        let cfg = cfg_of(&p);
        let conf = SymexecConfig::default();
        let src = addr(&p, "src");
        let deep = addr(&p, "deep");
        let mut s = prepare_state(&p, &[0, 0], src, &conf).unwrap();
        mark_symbolic(&mut s, None).unwrap();
        let phi = explore(&s, &cfg, deep, None, &conf).unwrap();
        let expected = [
            Expr::cmp(CmpOp::Eq, Expr::byte(0), Expr::constant(0x17)),
            Expr::cmp(
                CmpOp::Eq,
                Expr::bin(BinOp::Add, Expr::byte(1), Expr::constant(3)),
                Expr::constant(0x2A),
            ),
        ];
        assert_eq!(phi.conjuncts, expected);
        let SolveResult::Sat(m) = solve(&phi, DEFAULT_SOLVER_BUDGET).0 else {
            panic!("expected a model");
        };
        assert_eq!(m, BTreeMap::from([(0, 0x17), (1, 0x27)]));
    }

    #[test]
    fn unreachable_destination() {
        let p = fixtures::scoring();
        let cfg = cfg_of(&p);
        let conf = SymexecConfig::default();
        let n1 = addr(&p, "n1");
        let mut s = prepare_state(&p, &[0; 4], n1, &conf).unwrap();
        mark_symbolic(&mut s, None).unwrap();
        let d3 = addr(&p, "d3");
        assert!(explore(&s, &cfg, d3, None, &conf).is_ok());
        let s1 = addr(&p, "s1");
        let mut s = prepare_state(&p, &[0; 4], s1, &conf).unwrap();
        mark_symbolic(&mut s, None).unwrap();
        assert_eq!(
            explore(&s, &cfg, d3, None, &conf).unwrap_err(),
            SymError::UnreachableWithinDepth { src: s1, dst: d3 }
        );
    }

    #[test]
    fn scoring_snapshot_at_s1() {
        let p = fixtures::scoring();
        let s1 = addr(&p, "s1");
        let s = prepare_state(&p, &[0; 4], s1, &SymexecConfig::default()).unwrap();
        assert_eq!(s.base.pc, s1);
        assert_eq!(s.prefix.len(), 1);
    }

    #[test]
    fn concretize_examples() {
        let t = concretize(&[0, 0, 0, 0], &BTreeMap::from([(1, 0x42)]));
        assert_eq!(t.bytes, vec![0, 0x42, 0, 0]);
        assert_eq!(t.origin, Origin::Symbolic);
        assert_eq!(
            concretize(&[1, 2, 3], &BTreeMap::new()).bytes,
            vec![1, 2, 3]
        );
    }

    #[test]
    fn pipeline_validates_on_checks() {
        let p = fixtures::checks();
        let cfg = cfg_of(&p);
        let target = FuzzTarget::new(&p, &cfg, 10_000, None, &[0, 0]).unwrap();
        let conf = SymexecConfig::default();
        let PairOutcome::Sat { input, .. } = run_pair(&target, &[0, 0], 0x08, 0x10, &conf) else {
            panic!("expected sat");
        };
        assert_eq!(input.bytes, vec![0x41, 0]);
        let PairOutcome::Sat { input, .. } = run_pair(&target, &input.bytes, 0x10, 0x18, &conf)
        else {
            panic!("expected sat");
        };
        assert_eq!(input.bytes, vec![0x41, 0x42]);
    }

    #[test]
    fn prefix_is_kept_when_bytes_are_shared() {
        let src = ".input 1\n IN r0, 0\n BLT r0, 0x10, lo\n HALT\nlo: BEQ r0, 0x20, hit\n HALT\nhit: HALT\n";
        let p = crate::minivm::assemble(src).unwrap();
        let cfg = cfg_of(&p);
        let target = FuzzTarget::new(&p, &cfg, 10_000, None, &[0]).unwrap();
        let lo = addr(&p, "lo");
        let hit = addr(&p, "hit");
        let out = run_pair(&target, &[0], lo, hit, &SymexecConfig::default());
        assert_eq!(out.name(), "unreachable_within_depth");
        let out = run_pair(&target, &[0x30], 0x00, lo, &SymexecConfig::default());
        assert_eq!(out.name(), "sat");
    }

    #[test]
    fn gauntlet_stage_by_stage() {
        let p = fixtures::gauntlet();
        let cfg = cfg_of(&p);
        let conf = SymexecConfig::default();
        let mut input = vec![0u8; 64];
        let target = FuzzTarget::new(&p, &cfg, 100_000, None, &input).unwrap();
        for (src, dst) in [
            ("start", "stage1"),
            ("stage1", "stage2"),
            ("stage2", "stage3"),
            ("stage3", "win"),
        ] {
            let out = run_pair(&target, &input, addr(&p, src), addr(&p, dst), &conf);
            let PairOutcome::Sat { input: next, .. } = out else {
                panic!("{src}->{dst}: {}", out.name());
            };
            input = next.bytes;
        }
        assert_eq!(
            (input[0], input[17], input[38], input[59]),
            (0xA7, 0x5C, 0xC9, 0x3D)
        );
    }

    #[test]
    fn hook_restricts_symbolic_bytes() {
        let p = fixtures::checks();
        let hook = FuzzHook {
            start: 0x00,
            mutation_offset: 1,
            mutation_size: 1,
            breakpoint: 0x18,
        };
        let mut s = prepare_state(&p, &[0, 0], 0x08, &SymexecConfig::default()).unwrap();
        assert_eq!(
            mark_symbolic(&mut s, Some(&hook)),
            Err(SymError::InputIndependent(0x08))
        );
    }

    #[test]
    fn symbolic_addresses_are_pinned() {
        let src = ".input 2\n IN r0, 0\n LOADI r1, 0xD000\n ADD r1, r1, r0\n IN r2, 1\n STOREB r2, r1, 0\n LOADB r3, r1, 0\n BEQ r3, 0x99, y\n HALT\ny: HALT\n";
        let p = crate::minivm::assemble(src).unwrap();
        let cfg = cfg_of(&p);
        let target = FuzzTarget::new(&p, &cfg, 10_000, None, &[3, 0]).unwrap();
        let y = addr(&p, "y");
        let out = run_pair(&target, &[3, 0], 0, y, &SymexecConfig::default());
        let PairOutcome::Sat { input, .. } = out else {
            panic!("{}", out.name());
        };
        assert_eq!(input.bytes, vec![3, 0x99]);
    }

    fn small_program() -> impl Strategy<Value = (String, Vec<u8>)> {
        let insn = prop_oneof![
            (0u8..4, 0u32..4).prop_map(|(r, k)| format!("IN r{r}, {k}")),
            (0u8..4, 0u8..4, 0u8..4, 0usize..6).prop_map(|(d, a, b, op)| {
                let ops = ["ADD", "SUB", "XOR", "AND", "OR", "SHL"];
                format!("{} r{d}, r{a}, r{b}", ops[op])
            }),
            (0u8..4, 0u32..256).prop_map(|(d, v)| format!("LOADI r{d}, {v}")),
        ];
        (
            prop::collection::vec(insn, 1..12),
            0u8..4,
            0u8..4,
            prop::collection::vec(any::<u8>(), 4),
        )
            .prop_map(|(body, a, b, input)| {
                let mut s = String::from(".input 4\n");
                for l in body {
                    s.push_str(&format!(" {l}\n"));
                }
                s.push_str(&format!("br: BEQ r{a}, r{b}, y\n HALT\ny: HALT\n"));
                (s, input)
            })
    }

    proptest! {
        #[test]
        fn taint_is_sound((src, input) in small_program(), k in 0usize..4, flip in 1u8..=255) {
            let p = crate::minivm::assemble(&src).unwrap();
            let br = p.labels()["br"];
            let mut s = prepare_state(&p, &input, br, &SymexecConfig::default()).unwrap();
            let marked = mark_symbolic(&mut s, None).unwrap_or_default();
            prop_assume!(!marked.contains(&(k as u32)));
            let y = p.labels()["y"];
            let mut other = input.clone();
            other[k] ^= flip;
            let a = crate::minivm::execute(&p, &input, None, 1000).unwrap().reaches(y);
            let b = crate::minivm::execute(&p, &other, None, 1000).unwrap().reaches(y);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn concolic_matches_concrete((src, input) in small_program()) {
            let p = crate::minivm::assemble(&src).unwrap();
            let concrete = crate::minivm::execute(&p, &input, None, 1000).unwrap();
            let mut c = Concolic::new(Machine::new(&p, VmConfig::with_budget(1000)), Symbolize::None);
            let mut trace = Vec::new();
            loop {
                let step = c.step(&input, None);
                prop_assert!(step.branch.is_none());
                trace.extend(step.event.edge);
                if step.event.stop.is_some() {
                    break;
                }
            }
            prop_assert_eq!(trace, concrete.edge_trace);
        }

        #[test]
        fn symbolic_values_agree_with_concrete((src, input) in small_program()) {
            let p = crate::minivm::assemble(&src).unwrap();
            let br = p.labels()["br"];
            let s = prepare_state(&p, &input, br, &SymexecConfig::default()).unwrap();
            for (r, e) in s.regs().iter().enumerate() {
                if let Some(e) = e {
                    prop_assert_eq!(e.eval_input(&input), s.base.regs[r]);
                }
            }
        }
    }
}
