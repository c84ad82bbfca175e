use proptest::prelude::*;

use hyfuzz::cfg::{Cfg, CoverageMap};
use hyfuzz::minivm::{assemble, decode, disassemble, encode, execute, ExecStatus};

fn instruction(n: u32) -> impl Strategy<Value = String> {
    let reg = || 0u8..8;
    let target = move || (0..=n).prop_map(|i| format!("{:#x}", i * 4));
    let alu = prop_oneof![
        Just("ADD"),
        Just("SUB"),
        Just("XOR"),
        Just("AND"),
        Just("OR"),
        Just("SHL"),
        Just("SHR")
    ];
    let cond = prop_oneof![Just("BEQ"), Just("BNE"), Just("BLT"), Just("BGE")];
    prop_oneof![
        4 => (alu, reg(), reg(), 0u32..64).prop_map(|(op, d, a, v)| format!("{op} r{d}, r{a}, {v}")),
        2 => (reg(), 0u32..0x2000).prop_map(|(d, v)| format!("LOADI r{d}, {v}")),
        2 => (0u8..7, 0u32..8).prop_map(|(d, k)| format!("IN r{d}, {k}")),
        4 => (cond, reg(), 0u32..4, target()).prop_map(|(c, r, v, t)| format!("{c} r{r}, {v}, {t}")),
        1 => target().prop_map(|t| format!("JMP {t}")),
        1 => target().prop_map(|t| format!("CALL {t}")),
        1 => Just("RET".to_string()),
        1 => (0u8..7, 0u32..64).prop_map(|(d, l)| format!("ALLOC r{d}, {l}")),
        1 => (0u8..7).prop_map(|r| format!("FREE r{r}")),
        1 => (0u8..7, reg(), 0u32..16).prop_map(|(d, b, o)| format!("LOADB r{d}, r{b}, {o}")),
        1 => (0u8..7, reg(), 0u32..16).prop_map(|(s, b, o)| format!("STOREB r{s}, r{b}, {o}")),
        1 => Just("HALT".to_string()),
    ]
}

fn program() -> impl Strategy<Value = String> {
    (1u32..50).prop_flat_map(|n| {
        prop::collection::vec(instruction(n), n as usize).prop_map(|body| {
            let mut s = String::from(".input 8\n");
            for l in body {
                s.push_str(&l);
                s.push('\n');
            }
            s.push_str("HALT\n");
            s
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn every_emitted_edge_is_in_the_cfg(src in program(), input in prop::collection::vec(any::<u8>(), 8)) {
        let p = assemble(&src).unwrap();
        let cfg = Cfg::build(&p);
        let out = execute(&p, &input, None, 2_000).unwrap();
        for e in &out.edge_trace {
            prop_assert!(cfg.contains_edge(e), "edge {} missing\n{}", e, src);
        }
        if let Some(first) = out.edge_trace.first() {
            prop_assert_eq!(first.src, p.entry());
        }
        for w in out.edge_trace.windows(2) {
            prop_assert_eq!(w[0].dst, w[1].src);
        }
        let mut cov = CoverageMap::new();
        prop_assert!(cov.record_trace(&cfg, &out.edge_trace).is_ok());
    }

    #[test]
    fn container_round_trip_preserves_behaviour(src in program(), input in prop::collection::vec(any::<u8>(), 8)) {
        let p = assemble(&src).unwrap();
        let q = decode(&encode(&p)).unwrap();
        let r = assemble(&disassemble(&p)).unwrap();
        let a = execute(&p, &input, None, 2_000).unwrap();
        for other in [&q, &r] {
            let b = execute(other, &input, None, 2_000).unwrap();
            prop_assert_eq!(&a.edge_trace, &b.edge_trace);
            prop_assert_eq!(a.status, b.status);
        }
    }

    #[test]
    fn execution_is_deterministic(src in program(), input in prop::collection::vec(any::<u8>(), 8)) {
        let p = assemble(&src).unwrap();
        let a = execute(&p, &input, None, 2_000).unwrap();
        let b = execute(&p, &input, None, 2_000).unwrap();
        prop_assert_eq!(a.edge_trace, b.edge_trace);
        prop_assert_eq!(a.violations, b.violations);
        prop_assert_eq!(a.steps_used, b.steps_used);
    }
}

#[test]
fn budget_exhaustion_is_reported() {
    let p = assemble("spin: JMP spin").unwrap();
    let out = execute(&p, &[], None, 50).unwrap();
    assert_eq!(out.status, ExecStatus::BudgetExhausted);
    assert_eq!(out.steps_used, 50);
}
