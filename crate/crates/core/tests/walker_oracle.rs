// SPDX-License-Identifier: Apache-2.0

//! Randomized map/unmap/probe sequences checked against a shadow map.
//!
//! Fault levels are predicted without looking at table memory: tables are
//! created on demand and never reclaimed, so a level-L table descriptor on
//! the path of `va` is valid iff some page ever mapped shares `va`'s index
//! bits above that level. The level-3 entry is valid iff `va` is mapped now.

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use smmu_core::translation_table::{
    map_page, start_level, unmap_page, walk, TableError, WalkFaultKind,
};
use smmu_core::{PhysAddr, PhysMemory, VirtAddr, WalkConfig};

/// Lowest VA bit covered by the index of `level`.
fn level_shift(level: u8) -> u32 {
    12 + 9 * (3 - u32::from(level))
}

struct Shadow {
    mapped: BTreeMap<u64, u64>,
    ever: BTreeSet<u64>,
}

impl Shadow {
    fn expected_fault_level(&self, ia_bits: u8, va: u64) -> u8 {
        let start = start_level(ia_bits).unwrap();
        for level in start..3 {
            let shift = level_shift(level);
            let lo = (va >> shift) << shift;
            if self.ever.range(lo..lo + (1 << shift)).next().is_none() {
                return level;
            }
        }
        3
    }
}

fn random_va(rng: &mut StdRng, ia_bits: u8, hubs: &[u64]) -> u64 {
    let limit = 1u64 << ia_bits;
    let page = match rng.gen_range(0..4) {
        // Near a hub, so prefixes are shared at every level.
        0 | 1 => {
            let hub = hubs[rng.gen_range(0..hubs.len())];
            let spread = [1u64 << 12, 1 << 21, 1 << 30][rng.gen_range(0..3)];
            (hub + rng.gen_range(0..spread)) % limit
        }
        _ => rng.gen_range(0..limit),
    };
    page & !0xfff
}

fn run_sequence(ia_bits: u8, oa_bits: u8, seed: u64, ops: usize) -> usize {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut mem = PhysMemory::new();
    let root = mem.alloc_table_page().unwrap();
    let cfg = WalkConfig::new(ia_bits, oa_bits, root).unwrap();
    let mut shadow = Shadow { mapped: BTreeMap::new(), ever: BTreeSet::new() };
    let hubs: Vec<u64> = (0..4).map(|_| rng.gen_range(0..1u64 << ia_bits) & !0xfff).collect();
    let pa_limit = 1u64 << oa_bits.min(40);
    let mut probes = 0;

    for _ in 0..ops {
        let va = random_va(&mut rng, ia_bits, &hubs);
        match rng.gen_range(0..10) {
            0..=2 => {
                let pa = rng.gen_range(0..pa_limit) & !0xfff;
                let r = map_page(&mut mem, &cfg, VirtAddr(va), PhysAddr(pa));
                match shadow.mapped.get(&va) {
                    Some(&old) if old != pa => {
                        assert!(matches!(r, Err(TableError::Remap { .. })), "{va:#x}: {r:?}")
                    }
                    _ => {
                        r.unwrap();
                        shadow.mapped.insert(va, pa);
                        shadow.ever.insert(va);
                    }
                }
            }
            3 => {
                // Unmap something that exists most of the time.
                let target = if rng.gen_bool(0.8) && !shadow.mapped.is_empty() {
                    let n = rng.gen_range(0..shadow.mapped.len());
                    *shadow.mapped.keys().nth(n).unwrap()
                } else {
                    va
                };
                let r = unmap_page(&mut mem, &cfg, VirtAddr(target));
                if shadow.mapped.remove(&target).is_some() {
                    r.unwrap();
                } else {
                    assert!(r.is_err(), "unmap of unmapped {target:#x} succeeded");
                }
            }
            _ => {
                probes += 1;
                let probe = if rng.gen_bool(0.5) && !shadow.mapped.is_empty() {
                    let n = rng.gen_range(0..shadow.mapped.len());
                    *shadow.mapped.keys().nth(n).unwrap()
                } else {
                    va
                };
                let offset = rng.gen_range(0..0x1000);
                let got = walk(&mem, &cfg, VirtAddr(probe + offset));
                match shadow.mapped.get(&probe) {
                    Some(&pa) => assert_eq!(got, Ok(PhysAddr(pa + offset)), "probe {probe:#x}"),
                    None => {
                        let fault = got.expect_err("unmapped probe must fault");
                        let want = shadow.expected_fault_level(ia_bits, probe);
                        assert_eq!(
                            fault.kind,
                            WalkFaultKind::Translation { level: want },
                            "probe {probe:#x}"
                        );
                    }
                }
            }
        }
    }

    // Every mapped page still resolves at the end.
    for (&va, &pa) in &shadow.mapped {
        assert_eq!(walk(&mem, &cfg, VirtAddr(va)), Ok(PhysAddr(pa)));
    }
    probes
}

#[test]
fn oracle_48_bit() {
    let probes = run_sequence(48, 48, 1, 20_000);
    assert!(probes >= 10_000, "{probes} probes");
}

#[test]
fn oracle_39_bit() {
    let probes = run_sequence(39, 40, 2, 20_000);
    assert!(probes >= 10_000, "{probes} probes");
}

#[test]
fn oracle_30_bit() {
    let probes = run_sequence(30, 40, 3, 20_000);
    assert!(probes >= 10_000, "{probes} probes");
}

#[test]
fn input_out_of_range_faults_before_walking() {
    let mut mem = PhysMemory::new();
    let root = mem.alloc_table_page().unwrap();
    let cfg = WalkConfig::new(39, 40, root).unwrap();
    let f = walk(&mem, &cfg, VirtAddr(1 << 39)).unwrap_err();
    assert_eq!(f.kind, WalkFaultKind::AddressSizeInput);
    assert_eq!(f.level(), None);
}

fn build(ops: &[(u64, u64)]) -> PhysMemory {
    let mut mem = PhysMemory::new();
    let root = mem.alloc_table_page().unwrap();
    let cfg = WalkConfig::new(48, 48, root).unwrap();
    for &(va, pa) in ops {
        let _ = map_page(&mut mem, &cfg, VirtAddr(va << 12), PhysAddr(pa << 12));
    }
    mem
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn identical_sequences_give_identical_tables(
        ops in prop::collection::vec((0u64..1 << 36, 0u64..1 << 28), 1..40)
    ) {
        let a = build(&ops);
        let b = build(&ops);
        prop_assert_eq!(a.alloc_cursor(), b.alloc_cursor());
        let mut frame = 0x8000_0000u64 >> 12;
        while frame < a.alloc_cursor().0 >> 12 {
            prop_assert_eq!(a.page(frame), b.page(frame));
            frame += 1;
        }
    }

    #[test]
    fn offsets_are_preserved(va in 0u64..1 << 36, pa in 0u64..1 << 28, k in 0u64..4096) {
        let mut mem = PhysMemory::new();
        let root = mem.alloc_table_page().unwrap();
        let cfg = WalkConfig::new(48, 48, root).unwrap();
        map_page(&mut mem, &cfg, VirtAddr(va << 12), PhysAddr(pa << 12)).unwrap();
        prop_assert_eq!(
            walk(&mem, &cfg, VirtAddr((va << 12) + k)),
            Ok(PhysAddr((pa << 12) + k))
        );
    }
}
