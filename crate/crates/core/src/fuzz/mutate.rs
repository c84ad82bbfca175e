use std::ops::Range;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::FuzzHook;

pub const ARITH_MAX: u32 = 35;
pub const INTERESTING_8: [u8; 9] = [0x80, 0xFF, 0, 1, 16, 32, 64, 100, 127];
pub const INTERESTING_16: [u16; 10] = [0x8000, 0xFF7F, 128, 255, 256, 512, 1000, 1024, 4096, 32767];
pub const INTERESTING_32: [u32; 8] = [
    0x8000_0000,
    0xFA00_00FA,
    0xFFFF_7FFF,
    32768,
    65535,
    65536,
    0x05FF_FF05,
    0x7FFF_FFFF,
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MutationOp {
    BitFlip,
    ByteFlip,
    RandomByte,
    Arith,
    Interesting,
    Shuffle,
    Splice,
}

impl MutationOp {
    pub const ALL: [MutationOp; 7] = [
        MutationOp::BitFlip,
        MutationOp::ByteFlip,
        MutationOp::RandomByte,
        MutationOp::Arith,
        MutationOp::Interesting,
        MutationOp::Shuffle,
        MutationOp::Splice,
    ];
}

/// Applies one randomly chosen operator. Deterministic in `(bytes, seed,
/// hook, donor)`; with a hook only the hook's byte range changes.
pub fn mutate(bytes: &[u8], seed: u64, hook: Option<&FuzzHook>, donor: Option<&[u8]>) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let op = *MutationOp::ALL.choose(&mut rng).expect("non-empty");
    let range = match hook {
        Some(h) => clamp(h.range(), bytes.len()),
        None => 0..bytes.len(),
    };
    apply_op(op, bytes, range, &mut rng, donor)
}

fn clamp(r: Range<usize>, len: usize) -> Range<usize> {
    r.start.min(len)..r.end.min(len)
}

/// Applies `op` inside `range`. Bytes outside the range are never touched.
pub fn apply_op<R: Rng>(
    op: MutationOp,
    bytes: &[u8],
    range: Range<usize>,
    rng: &mut R,
    donor: Option<&[u8]>,
) -> Vec<u8> {
    let mut out = bytes.to_vec();
    let n = range.len();
    if n == 0 {
        return out;
    }
    let lo = range.start;
    match op {
        MutationOp::BitFlip => {
            let pos = lo + rng.gen_range(0..n);
            out[pos] ^= 1 << rng.gen_range(0..8);
        }
        MutationOp::ByteFlip => {
            let pos = lo + rng.gen_range(0..n);
            out[pos] ^= 0xFF;
        }
        MutationOp::RandomByte => {
            let pos = lo + rng.gen_range(0..n);
            out[pos] ^= rng.gen_range(1..=255u8);
        }
        MutationOp::Arith => {
            let width = pick_width(rng, n);
            let pos = lo + rng.gen_range(0..=n - width);
            let delta = rng.gen_range(1..=ARITH_MAX);
            let v = read_le(&out[pos..pos + width]);
            let v = if rng.gen() {
                v.wrapping_add(delta)
            } else {
                v.wrapping_sub(delta)
            };
            write_le(&mut out[pos..pos + width], v);
        }
        MutationOp::Interesting => {
            let width = pick_width(rng, n);
            let pos = lo + rng.gen_range(0..=n - width);
            let v = match width {
                1 => *INTERESTING_8.choose(rng).expect("non-empty") as u32,
                2 => *INTERESTING_16.choose(rng).expect("non-empty") as u32,
                _ => *INTERESTING_32.choose(rng).expect("non-empty"),
            };
            write_le(&mut out[pos..pos + width], v);
        }
        MutationOp::Shuffle => {
            if n >= 2 {
                let len = rng.gen_range(2..=n.min(16));
                let pos = lo + rng.gen_range(0..=n - len);
                out[pos..pos + len].shuffle(rng);
            }
        }
        MutationOp::Splice => {
            let Some(donor) = donor else {
                return out;
            };
            let len = rng.gen_range(1..=n);
            let pos = lo + rng.gen_range(0..=n - len);
            for (i, slot) in out[pos..pos + len].iter_mut().enumerate() {
                if let Some(&b) = donor.get(pos + i) {
                    *slot = b;
                }
            }
        }
    }
    out
}

fn pick_width<R: Rng>(rng: &mut R, n: usize) -> usize {
    let widths: &[usize] = match n {
        1 => &[1],
        2 | 3 => &[1, 2],
        _ => &[1, 2, 4],
    };
    *widths.choose(rng).expect("non-empty")
}

fn read_le(b: &[u8]) -> u32 {
    b.iter().rev().fold(0u32, |acc, &x| (acc << 8) | x as u32)
}

fn write_le(b: &mut [u8], v: u32) {
    for (i, slot) in b.iter_mut().enumerate() {
        *slot = (v >> (8 * i)) as u8;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bit_flip_of_bit_zero() {
        let seed = (0..10_000u64)
            .find(|&s| {
                let mut rng = ChaCha8Rng::seed_from_u64(s);
                apply_op(MutationOp::BitFlip, &[0], 0..1, &mut rng, None) == [0x01]
            })
            .expect("some seed selects bit 0");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        assert_eq!(
            apply_op(MutationOp::BitFlip, &[0], 0..1, &mut rng, None),
            vec![0x01]
        );
    }

    #[test]
    fn deterministic() {
        let input = [1u8, 2, 3, 4, 5, 6, 7, 8];
        for seed in 0..200 {
            assert_eq!(
                mutate(&input, seed, None, None),
                mutate(&input, seed, None, None)
            );
        }
    }

    #[test]
    fn every_op_changes_only_the_range() {
        let input: Vec<u8> = (0..16).collect();
        let donor = vec![0xEE; 16];
        for op in MutationOp::ALL {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            for _ in 0..200 {
                let out = apply_op(op, &input, 4..8, &mut rng, Some(&donor));
                assert_eq!(out.len(), input.len());
                assert_eq!(out[..4], input[..4], "{op:?}");
                assert_eq!(out[8..], input[8..], "{op:?}");
            }
        }
    }

    #[test]
    fn hook_range_is_respected_for_1000_seeds() {
        let hook = FuzzHook {
            start: 0,
            mutation_offset: 4,
            mutation_size: 4,
            breakpoint: 0,
        };
        let input = [0xAAu8; 12];
        for seed in 0..1000 {
            let out = mutate(&input, seed, Some(&hook), Some(&[0u8; 12]));
            assert_eq!(out[..4], input[..4]);
            assert_eq!(out[8..], input[8..]);
        }
    }

    #[test]
    fn arithmetic_and_interesting_use_little_endian_words() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut saw_carry = false;
        for _ in 0..2000 {
            let out = apply_op(MutationOp::Arith, &[0xFF, 0x00], 0..2, &mut rng, None);
            if out == [0x00, 0x01] || out[1] == 0x01 {
                saw_carry = true;
            }
        }
        assert!(saw_carry);
        assert_eq!(read_le(&[0x01, 0x02, 0x03, 0x04]), 0x0403_0201);
    }

    #[test]
    fn empty_input_is_unchanged() {
        assert!(mutate(&[], 9, None, None).is_empty());
    }
}
