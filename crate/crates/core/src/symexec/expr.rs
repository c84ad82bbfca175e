use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::rc::Rc;

use crate::minivm::{AluOp, Cond};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BinOp {
    Add,
    Sub,
    Xor,
    And,
    Or,
    Shl,
    Shr,
}

impl BinOp {
    pub fn apply(self, a: u32, b: u32) -> u32 {
        match self {
            BinOp::Add => a.wrapping_add(b),
            BinOp::Sub => a.wrapping_sub(b),
            BinOp::Xor => a ^ b,
            BinOp::And => a & b,
            BinOp::Or => a | b,
            BinOp::Shl => a.wrapping_shl(b & 31),
            BinOp::Shr => a.wrapping_shr(b & 31),
        }
    }

    fn name(self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Xor => "xor",
            BinOp::And => "and",
            BinOp::Or => "or",
            BinOp::Shl => "shl",
            BinOp::Shr => "shr",
        }
    }
}

impl From<AluOp> for BinOp {
    fn from(op: AluOp) -> Self {
        match op {
            AluOp::Add => BinOp::Add,
            AluOp::Sub => BinOp::Sub,
            AluOp::Xor => BinOp::Xor,
            AluOp::And => BinOp::And,
            AluOp::Or => BinOp::Or,
            AluOp::Shl => BinOp::Shl,
            AluOp::Shr => BinOp::Shr,
        }
    }
}

/// Unsigned comparisons matching the ISA branch conditions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CmpOp {
    Eq,
    Ne,
    Ult,
    Uge,
}

impl CmpOp {
    pub fn holds(self, a: u32, b: u32) -> bool {
        match self {
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
            CmpOp::Ult => a < b,
            CmpOp::Uge => a >= b,
        }
    }

    pub fn negate(self) -> CmpOp {
        match self {
            CmpOp::Eq => CmpOp::Ne,
            CmpOp::Ne => CmpOp::Eq,
            CmpOp::Ult => CmpOp::Uge,
            CmpOp::Uge => CmpOp::Ult,
        }
    }

    fn name(self) -> &'static str {
        match self {
            CmpOp::Eq => "eq",
            CmpOp::Ne => "ne",
            CmpOp::Ult => "ult",
            CmpOp::Uge => "uge",
        }
    }
}

impl From<Cond> for CmpOp {
    fn from(c: Cond) -> Self {
        match c {
            Cond::Eq => CmpOp::Eq,
            Cond::Ne => CmpOp::Ne,
            Cond::Lt => CmpOp::Ult,
            Cond::Ge => CmpOp::Uge,
        }
    }
}

/// Symbolic 32-bit word or boolean condition.
///
/// `Byte(k)` is input byte `k` zero-extended to 32 bits. `Pin(v, a)`
/// evaluates to `v` but records that `v` was obtained through the
/// concretized address `a`, so `a`'s bytes count as dependencies.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Expr {
    Const(u32),
    Byte(u32),
    Bin(BinOp, Rc<Expr>, Rc<Expr>),
    Cmp(CmpOp, Rc<Expr>, Rc<Expr>),
    Pin(Rc<Expr>, Rc<Expr>),
}

pub type ExprRef = Rc<Expr>;

/// Width of an expression node in bits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Width {
    Bool,
    Byte,
    Word,
}

impl Expr {
    pub fn constant(v: u32) -> ExprRef {
        Rc::new(Expr::Const(v))
    }

    pub fn byte(k: u32) -> ExprRef {
        Rc::new(Expr::Byte(k))
    }

    pub fn as_const(&self) -> Option<u32> {
        match self {
            Expr::Const(v) => Some(*v),
            _ => None,
        }
    }

    pub fn is_bool(&self) -> bool {
        matches!(self, Expr::Cmp(..))
    }

    pub fn width(&self) -> Width {
        match self {
            Expr::Cmp(..) => Width::Bool,
            Expr::Byte(_) => Width::Byte,
            _ => Width::Word,
        }
    }

    /// All-ones mask covering every bit the value can have set.
    fn max_value(&self) -> u32 {
        fn round(m: u32) -> u32 {
            if m == 0 {
                0
            } else {
                u32::MAX >> m.leading_zeros()
            }
        }
        match self {
            Expr::Const(v) => round(*v),
            Expr::Byte(_) => 0xFF,
            Expr::Cmp(..) => 1,
            Expr::Pin(v, _) => v.max_value(),
            Expr::Bin(BinOp::And, a, b) => a.max_value().min(b.max_value()),
            Expr::Bin(BinOp::Shr, a, _) => a.max_value(),
            Expr::Bin(BinOp::Or | BinOp::Xor, a, b) => a.max_value() | b.max_value(),
            _ => u32::MAX,
        }
    }

    /// Builds `op(a, b)` with constant folding and identity simplification.
    pub fn bin(op: BinOp, a: ExprRef, b: ExprRef) -> ExprRef {
        if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
            return Expr::constant(op.apply(x, y));
        }
        match (op, a.as_const(), b.as_const()) {
            (
                BinOp::Add | BinOp::Sub | BinOp::Xor | BinOp::Or | BinOp::Shl | BinOp::Shr,
                _,
                Some(0),
            ) => return a,
            (BinOp::Add | BinOp::Xor | BinOp::Or, Some(0), _) => return b,
            (BinOp::And, _, Some(0)) | (BinOp::And, Some(0), _) => return Expr::constant(0),
            (BinOp::Shl | BinOp::Shr, Some(0), _) => return Expr::constant(0),
            (BinOp::And, _, Some(m)) if a.max_value() & !m == 0 => return a,
            (BinOp::And, Some(m), _) if b.max_value() & !m == 0 => return b,
            (BinOp::Shr, _, Some(s)) if (s & 31) != 0 && a.max_value() >> (s & 31) == 0 => {
                return Expr::constant(0)
            }
            _ => {}
        }
        if op == BinOp::Sub && a == b {
            return Expr::constant(0);
        }
        if op == BinOp::Xor && a == b {
            return Expr::constant(0);
        }
        Rc::new(Expr::Bin(op, a, b))
    }

    pub fn cmp(op: CmpOp, a: ExprRef, b: ExprRef) -> ExprRef {
        if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
            return Expr::constant(op.holds(x, y) as u32);
        }
        Rc::new(Expr::Cmp(op, a, b))
    }

    pub fn pin(value: ExprRef, addr: ExprRef) -> ExprRef {
        if addr.as_const().is_some() {
            return value;
        }
        Rc::new(Expr::Pin(value, addr))
    }

    /// The opposite condition. Non-boolean expressions become `eq(e, 0)`.
    pub fn negate(e: &ExprRef) -> ExprRef {
        match &**e {
            Expr::Cmp(op, a, b) => Expr::cmp(op.negate(), a.clone(), b.clone()),
            Expr::Const(v) => Expr::constant((*v == 0) as u32),
            _ => Expr::cmp(CmpOp::Eq, e.clone(), Expr::constant(0)),
        }
    }

    pub fn eval(&self, byte: &impl Fn(u32) -> u8) -> u32 {
        match self {
            Expr::Const(v) => *v,
            Expr::Byte(k) => byte(*k) as u32,
            Expr::Bin(op, a, b) => op.apply(a.eval(byte), b.eval(byte)),
            Expr::Cmp(op, a, b) => op.holds(a.eval(byte), b.eval(byte)) as u32,
            Expr::Pin(v, _) => v.eval(byte),
        }
    }

    /// Evaluates under a full assignment map; missing bytes read as 0.
    pub fn eval_map(&self, assignment: &BTreeMap<u32, u8>) -> u32 {
        self.eval(&|k| assignment.get(&k).copied().unwrap_or(0))
    }

    pub fn eval_input(&self, input: &[u8]) -> u32 {
        self.eval(&|k| input.get(k as usize).copied().unwrap_or(0))
    }

    /// Input byte indices the value depends on.
    pub fn bytes(&self) -> BTreeSet<u32> {
        let mut out = BTreeSet::new();
        self.collect_bytes(&mut out);
        out
    }

    pub fn collect_bytes(&self, out: &mut BTreeSet<u32>) {
        match self {
            Expr::Const(_) => {}
            Expr::Byte(k) => {
                out.insert(*k);
            }
            Expr::Bin(_, a, b) | Expr::Cmp(_, a, b) | Expr::Pin(a, b) => {
                a.collect_bytes(out);
                b.collect_bytes(out);
            }
        }
    }

    /// Input bytes the value is computed from, ignoring pin dependencies.
    pub fn value_bytes(&self, out: &mut BTreeSet<u32>) {
        match self {
            Expr::Const(_) => {}
            Expr::Byte(k) => {
                out.insert(*k);
            }
            Expr::Bin(_, a, b) | Expr::Cmp(_, a, b) => {
                a.value_bytes(out);
                b.value_bytes(out);
            }
            Expr::Pin(v, _) => v.value_bytes(out),
        }
    }

    /// Replaces bytes by constants where `f` returns a value, refolding.
    pub fn substitute(e: &ExprRef, f: &impl Fn(u32) -> Option<u8>) -> ExprRef {
        match &**e {
            Expr::Const(_) => e.clone(),
            Expr::Byte(k) => match f(*k) {
                Some(v) => Expr::constant(v as u32),
                None => e.clone(),
            },
            Expr::Bin(op, a, b) => {
                let (na, nb) = (Expr::substitute(a, f), Expr::substitute(b, f));
                if Rc::ptr_eq(&na, a) && Rc::ptr_eq(&nb, b) {
                    e.clone()
                } else {
                    Expr::bin(*op, na, nb)
                }
            }
            Expr::Cmp(op, a, b) => {
                let (na, nb) = (Expr::substitute(a, f), Expr::substitute(b, f));
                if Rc::ptr_eq(&na, a) && Rc::ptr_eq(&nb, b) {
                    e.clone()
                } else {
                    Expr::cmp(*op, na, nb)
                }
            }
            Expr::Pin(v, a) => {
                let (nv, na) = (Expr::substitute(v, f), Expr::substitute(a, f));
                if Rc::ptr_eq(&nv, v) && Rc::ptr_eq(&na, a) {
                    e.clone()
                } else {
                    Expr::pin(nv, na)
                }
            }
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Byte(_) => 1,
            Expr::Bin(_, a, b) | Expr::Cmp(_, a, b) | Expr::Pin(a, b) => {
                1 + a.node_count() + b.node_count()
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(v) => write!(f, "{v}"),
            Expr::Byte(k) => write!(f, "(byte {k})"),
            Expr::Bin(op, a, b) => write!(f, "({} {a} {b})", op.name()),
            Expr::Cmp(op, a, b) => write!(f, "({} {a} {b})", op.name()),
            Expr::Pin(v, a) => write!(f, "(pin {v} {a})"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prefix_notation() {
        let e = Expr::cmp(
            CmpOp::Eq,
            Expr::bin(BinOp::Add, Expr::byte(0), Expr::constant(1)),
            Expr::constant(67),
        );
        assert_eq!(e.to_string(), "(eq (add (byte 0) 1) 67)");
        assert_eq!(e.width(), Width::Bool);
    }

    #[test]
    fn folding() {
        let c = Expr::bin(BinOp::Add, Expr::constant(2), Expr::constant(3));
        assert_eq!(*c, Expr::Const(5));
        let b = Expr::bin(BinOp::And, Expr::byte(1), Expr::constant(0xFF));
        assert_eq!(*b, Expr::Byte(1));
        let z = Expr::bin(BinOp::Shr, Expr::byte(1), Expr::constant(8));
        assert_eq!(*z, Expr::Const(0));
        let x = Expr::bin(BinOp::Xor, Expr::byte(2), Expr::byte(2));
        assert_eq!(*x, Expr::Const(0));
    }

    #[test]
    fn substitution_and_eval() {
        let e = Expr::bin(BinOp::Xor, Expr::byte(0), Expr::byte(1));
        let s = Expr::substitute(&e, &|k| (k == 1).then_some(0xF0));
        assert_eq!(s.to_string(), "(xor (byte 0) 240)");
        assert_eq!(s.eval_input(&[0x0F]), 0xFF);
        assert_eq!(e.bytes(), BTreeSet::from([0, 1]));
    }

    #[test]
    fn negation() {
        let e = Expr::cmp(CmpOp::Ult, Expr::byte(0), Expr::constant(4));
        let n = Expr::negate(&e);
        assert_eq!(n.to_string(), "(uge (byte 0) 4)");
        for v in 0..=255u8 {
            assert_ne!(e.eval_input(&[v]), n.eval_input(&[v]));
        }
    }

    #[test]
    fn pins_keep_dependencies() {
        let p = Expr::pin(Expr::constant(7), Expr::byte(3));
        assert_eq!(p.eval_input(&[0, 0, 0, 9]), 7);
        assert_eq!(p.bytes(), BTreeSet::from([3]));
        let mut v = BTreeSet::new();
        p.value_bytes(&mut v);
        assert!(v.is_empty());
    }
}
