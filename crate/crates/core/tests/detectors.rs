use proptest::prelude::*;

use hyfuzz::fixtures::{BENIGN, ZOO};
use hyfuzz::minivm::{assemble, execute, ExecStatus, MemoryLayout};
use hyfuzz::shadow::{DetectorKind, MemOp, ShadowMemory};

#[test]
fn zoo_programs_report_exactly_their_kind() {
    for z in ZOO {
        let p = assemble(z.source).unwrap();
        let hit = execute(&p, &[0x80], None, 100_000).unwrap();
        assert_eq!(hit.status, ExecStatus::Crashed, "{}", z.name);
        assert_eq!(hit.violations.len(), 1, "{}", z.name);
        let r = &hit.violations[0];
        assert_eq!(
            (r.kind, r.address, r.operation),
            (z.kind, z.address, z.operation),
            "{}",
            z.name
        );
        assert_eq!(r.backtrace.first(), Some(&r.pc));

        let quiet = execute(&p, &[0x00], None, 100_000).unwrap();
        assert!(quiet.violations.is_empty(), "{}", z.name);
        assert_eq!(quiet.status, ExecStatus::Halted, "{}", z.name);
    }
}

proptest! {
    #[test]
    fn benign_programs_stay_quiet(idx in 0..BENIGN.len(), input in prop::collection::vec(any::<u8>(), 0..64)) {
        let (name, src) = BENIGN[idx];
        let p = assemble(src).unwrap();
        let out = execute(&p, &input, None, 100_000).unwrap();
        prop_assert!(out.violations.is_empty(), "{}: {:?}", name, out.violations);
        prop_assert!(out.fault.is_none(), "{}: {:?}", name, out.fault);
    }
}

#[derive(Clone, Debug)]
enum Op {
    Alloc(usize, u32),
    Free(usize),
    Write(usize, u32, u32),
    Read(usize, u32, u32),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        (0usize..4, 1u32..48).prop_map(|(s, l)| Op::Alloc(s, l)),
        (0usize..4).prop_map(Op::Free),
        (0usize..4, any::<u32>(), 1u32..5).prop_map(|(s, o, n)| Op::Write(s, o, n)),
        (0usize..4, any::<u32>(), 1u32..5).prop_map(|(s, o, n)| Op::Read(s, o, n)),
    ]
}

#[derive(Clone, Default)]
struct Slot {
    len: u32,
    live: bool,
    written: Vec<bool>,
}

fn slot_base(s: usize) -> u32 {
    let layout = MemoryLayout::default();
    layout.heap_start + 0x100 * (s as u32 + 1)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn legal_sequences_never_report(ops in prop::collection::vec(op(), 1..80)) {
        let layout = MemoryLayout::default();
        let mut sh = ShadowMemory::new(layout.heap_start, layout.heap_end);
        let mut slots = vec![Slot::default(); 4];
        for o in ops {
            match o {
                Op::Alloc(s, len) if !slots[s].live => {
                    sh.on_alloc(slot_base(s), len).unwrap();
                    slots[s] = Slot { len, live: true, written: vec![false; len as usize] };
                }
                Op::Free(s) if slots[s].live => {
                    prop_assert!(sh.on_free(slot_base(s), 0, &[]).is_ok());
                    slots[s].live = false;
                }
                Op::Write(s, off, n) if slots[s].live && slots[s].len >= n => {
                    let off = off % (slots[s].len - n + 1);
                    prop_assert!(sh.on_write(slot_base(s) + off, n, 0, &[]).is_ok());
                    for b in off..off + n {
                        slots[s].written[b as usize] = true;
                    }
                }
                Op::Read(s, off, n) if slots[s].live && slots[s].len >= n => {
                    let off = off % (slots[s].len - n + 1);
                    let range = off as usize..(off + n) as usize;
                    let init = slots[s].written[range].iter().all(|&w| w);
                    let r = sh.on_read(slot_base(s) + off, n, 0, &[]);
                    if init {
                        prop_assert!(r.is_ok(), "{:?}", r);
                    } else {
                        prop_assert_eq!(r.unwrap_err().kind, DetectorKind::UninitializedAccess);
                    }
                }
                _ => {}
            }
        }
    }

    #[test]
    fn one_past_the_end_is_caught(len in 1u32..48, n in 1u32..5) {
        let layout = MemoryLayout::default();
        let mut sh = ShadowMemory::new(layout.heap_start, layout.heap_end);
        let base = slot_base(0);
        sh.on_alloc(base, len).unwrap();
        let r = sh.on_write(base + len, n, 0x40, &[0x40]).unwrap_err();
        prop_assert_eq!(r.kind, DetectorKind::BufferOverflow);
        prop_assert_eq!(r.address, base + len);
        prop_assert_eq!(r.operation, MemOp::Write);
        let r = sh.on_read(base + len, n, 0x40, &[0x40]).unwrap_err();
        prop_assert_eq!(r.kind, DetectorKind::BufferOverRead);
    }
}
