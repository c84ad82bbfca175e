//! Text assembler and disassembler.
//!
//! One instruction per line, `;` starts a comment, `name:` defines a label
//! (and starts a basic block). Registers are `r0`-`r7`, immediates are
//! decimal, negative decimal, or `0x` hex. Branch targets are label names
//! or numeric code addresses.
//!
//! Directives:
//!
//! ```text
//! .entry <label|addr>     entry point (default 0)
//! .input <n>              input bytes addressable by IN (default: highest IN index + 1)
//! .rodata <addr>, <len>   mark a heap range read-only
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::isa::{AluOp, Cond, Instruction, Opcode, Operand, Reg, INSN_SIZE, NUM_REGS};
use super::program::Program;
use crate::error::{AsmError, AsmErrorKind};

enum Target {
    Label(String),
    Addr(u32),
}

enum Pending {
    Ready(Instruction),
    Branch {
        cond: Cond,
        rs: Reg,
        src: Operand,
        target: Target,
    },
    Jmp(Target),
    Call(Target),
}

pub fn assemble(source: &str) -> Result<Program, AsmError> {
    let mut labels: BTreeMap<String, u32> = BTreeMap::new();
    let mut pending: Vec<(usize, Pending)> = Vec::new();
    let mut entry: Option<(usize, Target)> = None;
    let mut input_size: Option<u32> = None;
    let mut rodata = Vec::new();

    for (idx, raw) in source.lines().enumerate() {
        let line_no = idx + 1;
        let err = |kind| AsmError {
            line: line_no,
            kind,
        };
        let mut line = raw.split(';').next().unwrap_or("").trim();

        while let Some(colon) = line.find(':') {
            let name = line[..colon].trim();
            if !is_ident(name) {
                return Err(err(AsmErrorKind::Syntax(format!("bad label `{name}`"))));
            }
            let addr = pending.len() as u32 * INSN_SIZE;
            if labels.insert(name.to_string(), addr).is_some() {
                return Err(err(AsmErrorKind::DuplicateLabel(name.to_string())));
            }
            line = line[colon + 1..].trim();
        }
        if line.is_empty() {
            continue;
        }

        let (head, rest) = match line.find(char::is_whitespace) {
            Some(pos) => (&line[..pos], line[pos..].trim()),
            None => (line, ""),
        };
        let args: Vec<&str> = if rest.is_empty() {
            Vec::new()
        } else {
            rest.split(',').map(str::trim).collect()
        };

        if let Some(directive) = head.strip_prefix('.') {
            match directive {
                "entry" => {
                    expect_args(&args, 1).map_err(err)?;
                    entry = Some((line_no, parse_target(args[0]).map_err(err)?));
                }
                "input" => {
                    expect_args(&args, 1).map_err(err)?;
                    input_size = Some(parse_imm(args[0]).map_err(err)?);
                }
                "rodata" => {
                    expect_args(&args, 2).map_err(err)?;
                    rodata.push((
                        parse_imm(args[0]).map_err(err)?,
                        parse_imm(args[1]).map_err(err)?,
                    ));
                }
                other => {
                    return Err(err(AsmErrorKind::Syntax(format!(
                        "unknown directive `.{other}`"
                    ))))
                }
            }
            continue;
        }

        let op = Opcode::from_mnemonic(head)
            .ok_or_else(|| err(AsmErrorKind::UnknownMnemonic(head.to_string())))?;
        pending.push((line_no, parse_insn(op, &args).map_err(err)?));
    }

    let resolve = |line: usize, t: Target| -> Result<u32, AsmError> {
        match t {
            Target::Addr(a) => Ok(a),
            Target::Label(name) => labels.get(&name).copied().ok_or(AsmError {
                line,
                kind: AsmErrorKind::UndefinedLabel(name),
            }),
        }
    };

    let mut instructions = Vec::with_capacity(pending.len());
    for (line, p) in pending {
        instructions.push(match p {
            Pending::Ready(insn) => insn,
            Pending::Branch {
                cond,
                rs,
                src,
                target,
            } => Instruction::Branch {
                cond,
                rs,
                src,
                target: resolve(line, target)?,
            },
            Pending::Jmp(t) => Instruction::Jmp {
                target: resolve(line, t)?,
            },
            Pending::Call(t) => Instruction::Call {
                target: resolve(line, t)?,
            },
        });
    }
    let (entry_line, entry) = match entry {
        Some((line, t)) => (line, resolve(line, t)?),
        None => (1, 0),
    };
    let input_size = input_size.unwrap_or_else(|| {
        instructions
            .iter()
            .filter_map(|i| match i {
                Instruction::In { index, .. } => Some(index + 1),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    });
    let last_line = source.lines().count().max(1);
    Program::new(instructions, entry, labels, input_size, rodata).map_err(|e| {
        let line = match e {
            crate::error::ProgramError::BadEntry(_) => entry_line,
            _ => last_line,
        };
        AsmError {
            line,
            kind: AsmErrorKind::Program(e),
        }
    })
}

fn parse_insn(op: Opcode, args: &[&str]) -> Result<Pending, AsmErrorKind> {
    let alu = |alu_op: AluOp| -> Result<Pending, AsmErrorKind> {
        expect_args(args, 3)?;
        Ok(Pending::Ready(Instruction::Alu {
            op: alu_op,
            rd: parse_reg(args[0])?,
            rs: parse_reg(args[1])?,
            src: parse_operand(args[2])?,
        }))
    };
    let branch = |cond: Cond| -> Result<Pending, AsmErrorKind> {
        expect_args(args, 3)?;
        Ok(Pending::Branch {
            cond,
            rs: parse_reg(args[0])?,
            src: parse_operand(args[1])?,
            target: parse_target(args[2])?,
        })
    };
    // Memory forms take an optional trailing offset.
    let mem = |args: &[&str]| -> Result<(Reg, Reg, u32), AsmErrorKind> {
        if args.len() != 2 && args.len() != 3 {
            return Err(AsmErrorKind::Syntax(format!(
                "expected 2 or 3 operands, found {}",
                args.len()
            )));
        }
        let offset = match args.get(2) {
            Some(s) => parse_imm(s)?,
            None => 0,
        };
        Ok((parse_reg(args[0])?, parse_reg(args[1])?, offset))
    };
    Ok(match op {
        Opcode::LoadI => {
            expect_args(args, 2)?;
            Pending::Ready(Instruction::LoadI {
                rd: parse_reg(args[0])?,
                imm: parse_imm(args[1])?,
            })
        }
        Opcode::Mov => {
            expect_args(args, 2)?;
            Pending::Ready(Instruction::Mov {
                rd: parse_reg(args[0])?,
                rs: parse_reg(args[1])?,
            })
        }
        Opcode::Add => alu(AluOp::Add)?,
        Opcode::Sub => alu(AluOp::Sub)?,
        Opcode::Xor => alu(AluOp::Xor)?,
        Opcode::And => alu(AluOp::And)?,
        Opcode::Or => alu(AluOp::Or)?,
        Opcode::Shl => alu(AluOp::Shl)?,
        Opcode::Shr => alu(AluOp::Shr)?,
        Opcode::Beq => branch(Cond::Eq)?,
        Opcode::Bne => branch(Cond::Ne)?,
        Opcode::Blt => branch(Cond::Lt)?,
        Opcode::Bge => branch(Cond::Ge)?,
        Opcode::Jmp => {
            expect_args(args, 1)?;
            Pending::Jmp(parse_target(args[0])?)
        }
        Opcode::Call => {
            expect_args(args, 1)?;
            Pending::Call(parse_target(args[0])?)
        }
        Opcode::Ret => {
            expect_args(args, 0)?;
            Pending::Ready(Instruction::Ret)
        }
        Opcode::Halt => {
            expect_args(args, 0)?;
            Pending::Ready(Instruction::Halt)
        }
        Opcode::LoadB => {
            let (rd, base, offset) = mem(args)?;
            Pending::Ready(Instruction::LoadB { rd, base, offset })
        }
        Opcode::LoadW => {
            let (rd, base, offset) = mem(args)?;
            Pending::Ready(Instruction::LoadW { rd, base, offset })
        }
        Opcode::StoreB => {
            let (rs, base, offset) = mem(args)?;
            Pending::Ready(Instruction::StoreB { rs, base, offset })
        }
        Opcode::StoreW => {
            let (rs, base, offset) = mem(args)?;
            Pending::Ready(Instruction::StoreW { rs, base, offset })
        }
        Opcode::Alloc => {
            expect_args(args, 2)?;
            Pending::Ready(Instruction::Alloc {
                rd: parse_reg(args[0])?,
                len: parse_operand(args[1])?,
            })
        }
        Opcode::Free => {
            expect_args(args, 1)?;
            Pending::Ready(Instruction::Free {
                rs: parse_reg(args[0])?,
            })
        }
        Opcode::In => {
            expect_args(args, 2)?;
            Pending::Ready(Instruction::In {
                rd: parse_reg(args[0])?,
                index: parse_imm(args[1])?,
            })
        }
    })
}

fn expect_args(args: &[&str], n: usize) -> Result<(), AsmErrorKind> {
    if args.len() != n || args.iter().any(|a| a.is_empty()) {
        return Err(AsmErrorKind::Syntax(format!(
            "expected {n} operand(s), found {}",
            args.len()
        )));
    }
    Ok(())
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

fn parse_reg(s: &str) -> Result<Reg, AsmErrorKind> {
    let digits = s
        .strip_prefix('r')
        .or_else(|| s.strip_prefix('R'))
        .ok_or_else(|| AsmErrorKind::Syntax(format!("expected register, found `{s}`")))?;
    let idx: u32 = digits
        .parse()
        .map_err(|_| AsmErrorKind::Syntax(format!("expected register, found `{s}`")))?;
    if idx as usize >= NUM_REGS {
        return Err(AsmErrorKind::BadRegister(idx));
    }
    Ok(idx as Reg)
}

fn parse_imm(s: &str) -> Result<u32, AsmErrorKind> {
    let bad = || AsmErrorKind::Syntax(format!("bad immediate `{s}`"));
    if let Some(hex) = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        return u32::from_str_radix(hex, 16).map_err(|_| bad());
    }
    if let Some(neg) = s.strip_prefix('-') {
        let v: u32 = neg.parse().map_err(|_| bad())?;
        if v > (i32::MAX as u32) + 1 {
            return Err(bad());
        }
        return Ok((v as i64).wrapping_neg() as u32);
    }
    s.parse().map_err(|_| bad())
}

fn parse_operand(s: &str) -> Result<Operand, AsmErrorKind> {
    if s.starts_with('r') || s.starts_with('R') {
        parse_reg(s).map(Operand::Reg)
    } else {
        parse_imm(s).map(Operand::Imm)
    }
}

fn parse_target(s: &str) -> Result<Target, AsmErrorKind> {
    if s.starts_with(|c: char| c.is_ascii_digit()) {
        parse_imm(s).map(Target::Addr)
    } else if is_ident(s) {
        Ok(Target::Label(s.to_string()))
    } else {
        Err(AsmErrorKind::Syntax(format!("bad branch target `{s}`")))
    }
}

/// Renders a program as assembly that reassembles to the same program.
pub fn disassemble(program: &Program) -> String {
    let mut by_addr: BTreeMap<u32, Vec<&str>> = BTreeMap::new();
    for (name, &addr) in program.labels() {
        by_addr.entry(addr).or_default().push(name);
    }
    let target = |addr: u32| -> String {
        match by_addr.get(&addr) {
            Some(names) => names[0].to_string(),
            None => format!("{addr:#x}"),
        }
    };

    let mut out = String::new();
    let _ = writeln!(out, ".input {}", program.input_size());
    if program.entry() != 0 {
        let _ = writeln!(out, ".entry {}", target(program.entry()));
    }
    for &(base, len) in program.rodata() {
        let _ = writeln!(out, ".rodata {base:#x}, {len}");
    }
    for (idx, insn) in program.instructions().iter().enumerate() {
        let addr = idx as u32 * INSN_SIZE;
        if let Some(names) = by_addr.get(&addr) {
            for name in names {
                let _ = writeln!(out, "{name}:");
            }
        }
        let m = insn.opcode().mnemonic();
        let text = match *insn {
            Instruction::LoadI { rd, imm } => format!("{m} r{rd}, {imm:#x}"),
            Instruction::Mov { rd, rs } => format!("{m} r{rd}, r{rs}"),
            Instruction::Alu { rd, rs, src, .. } => format!("{m} r{rd}, r{rs}, {src}"),
            Instruction::Branch {
                rs, src, target: t, ..
            } => format!("{m} r{rs}, {src}, {}", target(t)),
            Instruction::Jmp { target: t } | Instruction::Call { target: t } => {
                format!("{m} {}", target(t))
            }
            Instruction::Ret | Instruction::Halt => m.to_string(),
            Instruction::LoadB { rd, base, offset } | Instruction::LoadW { rd, base, offset } => {
                format!("{m} r{rd}, r{base}, {offset:#x}")
            }
            Instruction::StoreB { rs, base, offset } | Instruction::StoreW { rs, base, offset } => {
                format!("{m} r{rs}, r{base}, {offset:#x}")
            }
            Instruction::Alloc { rd, len } => format!("{m} r{rd}, {len}"),
            Instruction::Free { rs } => format!("{m} r{rs}"),
            Instruction::In { rd, index } => format!("{m} r{rd}, {index}"),
        };
        let _ = writeln!(out, "    {text}    ; {addr:#06x}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_program() {
        let p = assemble("LOADI r0, 5\nHALT").unwrap();
        assert_eq!(p.instructions().len(), 2);
        assert_eq!(p.entry(), 0);
        assert_eq!(p.instructions()[0], Instruction::LoadI { rd: 0, imm: 5 });
    }

    #[test]
    fn undefined_label_is_named() {
        let err = assemble("JMP missing\nHALT").unwrap_err();
        assert_eq!(err.line, 1);
        assert_eq!(err.kind, AsmErrorKind::UndefinedLabel("missing".into()));
        assert!(err.to_string().contains("missing"));
    }

    #[test]
    fn register_out_of_range() {
        let err = assemble("HALT\nLOADI r8, 1\nHALT").unwrap_err();
        assert_eq!(err.line, 2);
        assert_eq!(err.kind, AsmErrorKind::BadRegister(8));
    }

    #[test]
    fn syntax_error_reports_line() {
        let err = assemble("LOADI r0, 1\nADD r0, r1\nHALT").unwrap_err();
        assert_eq!(err.line, 2);
        assert!(matches!(err.kind, AsmErrorKind::Syntax(_)));
        let err = assemble("LOADI r0, zz\nHALT").unwrap_err();
        assert_eq!(err.line, 1);
        let err = assemble("BOGUS r0\n").unwrap_err();
        assert_eq!(err.kind, AsmErrorKind::UnknownMnemonic("BOGUS".into()));
    }

    #[test]
    fn falling_off_the_end_is_rejected() {
        let err = assemble("LOADI r0, 1").unwrap_err();
        assert!(matches!(err.kind, AsmErrorKind::Program(_)));
    }

    #[test]
    fn immediates_and_directives() {
        let src = ".input 4\n.rodata 0x1000, 8\n.entry main\nHALT\nmain: LOADI r1, -1\nIN r2, 3\nBEQ r2, 0x41, main\nHALT\n";
        let p = assemble(src).unwrap();
        assert_eq!(p.entry(), 4);
        assert_eq!(p.input_size(), 4);
        assert_eq!(p.rodata(), &[(0x1000, 8)]);
        assert_eq!(
            p.instructions()[1],
            Instruction::LoadI {
                rd: 1,
                imm: u32::MAX
            }
        );
    }

    #[test]
    fn numeric_targets() {
        let p = assemble("JMP 0x8\nHALT\nHALT").unwrap();
        assert_eq!(p.instructions()[0], Instruction::Jmp { target: 8 });
        assert!(assemble("JMP 0x6\nHALT").is_err());
    }

    #[test]
    fn disassembly_round_trips() {
        for src in crate::fixtures::all_sources() {
            let p = assemble(src).unwrap();
            let text = disassemble(&p);
            let q = assemble(&text).unwrap();
            assert_eq!(p, q, "round trip failed for:\n{text}");
        }
    }
}
