//! Bitvector solver over input bytes.
//!
//! Pipeline: substitute fixed bytes and fold constants; prune each byte's
//! 256-value domain with the conjuncts that mention only that byte; then
//! backtrack over the remaining bytes, rejecting partial assignments with a
//! known-bits evaluation. Every model is re-checked before it is returned.

use std::collections::{BTreeMap, BTreeSet};

use super::expr::{BinOp, CmpOp, Expr, ExprRef};

pub const DEFAULT_SOLVER_BUDGET: u64 = 1_000_000;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SolveResult {
    Sat(BTreeMap<u32, u8>),
    Unsat,
    Unknown,
}

impl SolveResult {
    pub fn is_sat(&self) -> bool {
        matches!(self, SolveResult::Sat(_))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SolveStats {
    pub candidates: u64,
}

/// Solves the conjunction of `conds`, treating bytes in `fixed` as
/// constants. The model covers exactly the free bytes that occur.
pub fn solve_conjuncts(
    conds: &[ExprRef],
    fixed: &BTreeMap<u32, u8>,
    budget: u64,
) -> (SolveResult, SolveStats) {
    let mut stats = SolveStats { candidates: 0 };
    let mut live: Vec<ExprRef> = Vec::new();
    for c in conds {
        let c = Expr::substitute(c, &|k| fixed.get(&k).copied());
        match c.as_const() {
            Some(0) => return (SolveResult::Unsat, stats),
            Some(_) => {}
            None => live.push(c),
        }
    }
    let vars: Vec<u32> = {
        let mut s = BTreeSet::new();
        for c in &live {
            c.value_bytes(&mut s);
            c.collect_bytes(&mut s);
        }
        s.into_iter().collect()
    };
    if vars.is_empty() {
        return (SolveResult::Sat(BTreeMap::new()), stats);
    }

    let cond_vars: Vec<BTreeSet<u32>> = live.iter().map(|c| c.bytes()).collect();
    let mut domains: BTreeMap<u32, Vec<u8>> =
        vars.iter().map(|&v| (v, (0..=255).collect())).collect();
    for (c, cv) in live.iter().zip(&cond_vars) {
        if cv.len() == 1 {
            let v = *cv.iter().next().expect("one var");
            let dom = domains.get_mut(&v).expect("known var");
            dom.retain(|&x| {
                stats.candidates += 1;
                c.eval(&|_| x) != 0
            });
            if dom.is_empty() {
                return (SolveResult::Unsat, stats);
            }
        }
    }

    // Most constrained variables first, then by index.
    let mut order = vars.clone();
    order.sort_by_key(|v| {
        let uses = cond_vars.iter().filter(|s| s.contains(v)).count();
        (domains[v].len(), std::cmp::Reverse(uses), *v)
    });
    let multi: Vec<usize> = (0..live.len())
        .filter(|&i| cond_vars[i].len() > 1)
        .collect();

    let mut search = Search {
        conds: &live,
        cond_vars: &cond_vars,
        multi: &multi,
        order: &order,
        domains: &domains,
        assigned: BTreeMap::new(),
        budget,
        stats: &mut stats,
    };
    let result = match search.run(0) {
        Step::Found => {
            let model = search.assigned.clone();
            let check = |c: &ExprRef| c.eval_map(&model) != 0;
            if live.iter().all(check) {
                SolveResult::Sat(model)
            } else {
                debug_assert!(false, "solver produced a non-model");
                SolveResult::Unknown
            }
        }
        Step::Exhausted => SolveResult::Unsat,
        Step::OutOfBudget => SolveResult::Unknown,
    };
    (result, stats)
}

enum Step {
    Found,
    Exhausted,
    OutOfBudget,
}

struct Search<'a> {
    conds: &'a [ExprRef],
    cond_vars: &'a [BTreeSet<u32>],
    multi: &'a [usize],
    order: &'a [u32],
    domains: &'a BTreeMap<u32, Vec<u8>>,
    assigned: BTreeMap<u32, u8>,
    budget: u64,
    stats: &'a mut SolveStats,
}

impl Search<'_> {
    fn run(&mut self, depth: usize) -> Step {
        if depth == self.order.len() {
            return Step::Found;
        }
        let var = self.order[depth];
        for &value in &self.domains[&var] {
            if self.stats.candidates >= self.budget {
                return Step::OutOfBudget;
            }
            self.stats.candidates += 1;
            self.assigned.insert(var, value);
            if self.consistent(var) {
                match self.run(depth + 1) {
                    Step::Exhausted => {}
                    other => return other,
                }
            }
        }
        self.assigned.remove(&var);
        Step::Exhausted
    }

    fn consistent(&self, var: u32) -> bool {
        self.multi.iter().all(|&i| {
            if !self.cond_vars[i].contains(&var) {
                return true;
            }
            let complete = self.cond_vars[i]
                .iter()
                .all(|v| self.assigned.contains_key(v));
            if complete {
                self.conds[i].eval_map(&self.assigned) != 0
            } else {
                truth(&self.conds[i], &self.assigned) != Some(false)
            }
        })
    }
}

/// Partially known 32-bit value: `zeros`/`ones` mark bits known 0/1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KnownBits {
    pub zeros: u32,
    pub ones: u32,
}

impl KnownBits {
    pub fn exact(v: u32) -> Self {
        KnownBits { zeros: !v, ones: v }
    }

    pub fn unknown() -> Self {
        KnownBits { zeros: 0, ones: 0 }
    }

    pub fn known(&self) -> u32 {
        self.zeros | self.ones
    }

    pub fn value(&self) -> Option<u32> {
        (self.known() == u32::MAX).then_some(self.ones)
    }

    pub fn min(&self) -> u32 {
        self.ones
    }

    pub fn max(&self) -> u32 {
        !self.zeros
    }
}

/// Known bits of `e` when only the bytes in `assigned` are fixed.
pub fn known_bits(e: &Expr, assigned: &BTreeMap<u32, u8>) -> KnownBits {
    match e {
        Expr::Const(v) => KnownBits::exact(*v),
        Expr::Byte(k) => match assigned.get(k) {
            Some(&v) => KnownBits::exact(v as u32),
            None => KnownBits {
                zeros: !0xFF,
                ones: 0,
            },
        },
        Expr::Pin(v, _) => known_bits(v, assigned),
        Expr::Cmp(..) => match truth(e, assigned) {
            Some(b) => KnownBits::exact(b as u32),
            None => KnownBits { zeros: !1, ones: 0 },
        },
        Expr::Bin(op, a, b) => {
            let (x, y) = (known_bits(a, assigned), known_bits(b, assigned));
            if let (Some(p), Some(q)) = (x.value(), y.value()) {
                return KnownBits::exact(op.apply(p, q));
            }
            match op {
                BinOp::And => KnownBits {
                    zeros: x.zeros | y.zeros,
                    ones: x.ones & y.ones,
                },
                BinOp::Or => KnownBits {
                    zeros: x.zeros & y.zeros,
                    ones: x.ones | y.ones,
                },
                BinOp::Xor => {
                    let k = x.known() & y.known();
                    let v = (x.ones ^ y.ones) & k;
                    KnownBits {
                        zeros: k & !v,
                        ones: v,
                    }
                }
                BinOp::Shl | BinOp::Shr => match y.value() {
                    Some(s) => {
                        let s = s & 31;
                        if *op == BinOp::Shl {
                            KnownBits {
                                zeros: (x.zeros << s) | ((1u32 << s) - 1),
                                ones: x.ones << s,
                            }
                        } else {
                            let high = if s == 0 { 0 } else { !(u32::MAX >> s) };
                            KnownBits {
                                zeros: (x.zeros >> s) | high,
                                ones: x.ones >> s,
                            }
                        }
                    }
                    None => KnownBits::unknown(),
                },
                BinOp::Add | BinOp::Sub => low_bits_arith(*op, x, y),
            }
        }
    }
}

// Ripple through the low bits while both operands' bits are known.
fn low_bits_arith(op: BinOp, x: KnownBits, y: KnownBits) -> KnownBits {
    let mut out = KnownBits::unknown();
    let mut carry = if op == BinOp::Sub { 1u32 } else { 0 };
    for bit in 0..32 {
        let m = 1u32 << bit;
        if x.known() & m == 0 || y.known() & m == 0 {
            break;
        }
        let a = (x.ones & m != 0) as u32;
        let mut b = (y.ones & m != 0) as u32;
        if op == BinOp::Sub {
            b ^= 1;
        }
        let s = a + b + carry;
        if s & 1 == 1 {
            out.ones |= m;
        } else {
            out.zeros |= m;
        }
        carry = s >> 1;
    }
    out
}

/// Three-valued truth of a condition under a partial assignment.
pub fn truth(e: &Expr, assigned: &BTreeMap<u32, u8>) -> Option<bool> {
    match e {
        Expr::Cmp(op, a, b) => {
            let (x, y) = (known_bits(a, assigned), known_bits(b, assigned));
            if let (Some(p), Some(q)) = (x.value(), y.value()) {
                return Some(op.holds(p, q));
            }
            let differ = (x.ones & y.zeros) | (x.zeros & y.ones) != 0;
            match op {
                CmpOp::Eq => differ.then_some(false),
                CmpOp::Ne => differ.then_some(true),
                CmpOp::Ult => {
                    if x.max() < y.min() {
                        Some(true)
                    } else if x.min() >= y.max() {
                        Some(false)
                    } else {
                        None
                    }
                }
                CmpOp::Uge => {
                    if x.min() >= y.max() {
                        Some(true)
                    } else if x.max() < y.min() {
                        Some(false)
                    } else {
                        None
                    }
                }
            }
        }
        _ => {
            let k = known_bits(e, assigned);
            if k.ones != 0 {
                Some(true)
            } else {
                k.value().map(|v| v != 0)
            }
        }
    }
}
