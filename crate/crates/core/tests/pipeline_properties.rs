// SPDX-License-Identifier: Apache-2.0

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use proptest::prelude::*;
use smmu_core::smmu::{GlobalFaultReason, ContextFaultReason};
use smmu_core::stream_mapping::{InstCfg, S2cr, Smr};
use smmu_core::translation_table::map_page;
use smmu_core::{
    Outcome, PhysAddr, PhysMemory, SmmuState, StreamId, TraceEvent, Transaction, UnmatchedPolicy,
    VirtAddr, WalkConfig,
};

const SID: u32 = 0x200;

fn sid(v: u32) -> StreamId {
    StreamId::new(v).unwrap()
}

/// SMR for `SID` -> bank 0 (ia 48, oa 48) with the given page mappings.
fn state(pages: &[(u64, u64)]) -> (SmmuState, PhysMemory, WalkConfig) {
    let mut mem = PhysMemory::new();
    let mut smmu = SmmuState::new();
    let cb = smmu.banks_mut().allocate_bank().unwrap();
    let root = mem.alloc_table_page().unwrap();
    let cfg = smmu.banks_mut().program_bank(cb, root, 0x10, 0b101).unwrap();
    smmu.banks_mut().set_enabled(cb, true).unwrap();
    for &(va, pa) in pages {
        let _ = map_page(&mut mem, &cfg, VirtAddr(va << 12), PhysAddr(pa << 12));
    }
    smmu.streams_mut()
        .program_entry(0, Smr::exact(sid(SID)), S2cr::translate(0, InstCfg::Data))
        .unwrap();
    (smmu, mem, cfg)
}

fn digest(mem: &PhysMemory) -> u64 {
    let mut h = DefaultHasher::new();
    let mut frames = 0u64;
    // Every page this suite can touch lies below 2^32.
    for frame in 0..(1u64 << 20) {
        if let Some(page) = mem.page(frame) {
            if page.iter().any(|&b| b != 0) {
                frame.hash(&mut h);
                page.hash(&mut h);
                frames += 1;
            }
        }
    }
    frames.hash(&mut h);
    h.finish()
}

fn walks(smmu: &SmmuState) -> usize {
    smmu.sink().events().filter(|e| matches!(e, TraceEvent::Walk { .. })).count()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tlb_is_transparent(
        pages in prop::collection::vec((0x70000u64..0x70040, 0x60000u64..0x60100), 0..24),
        probes in prop::collection::vec((0x70000u64..0x70040, 0u64..4096), 1..64),
    ) {
        let (mut cached, mem, _) = state(&pages);
        let (mut cold, _, _) = state(&pages);
        for &(page, off) in &probes {
            let txn = Transaction::read(sid(SID), VirtAddr((page << 12) + off), 1);
            cold.tlb_invalidate_all();
            prop_assert_eq!(cached.translate(&mem, &txn), cold.translate(&mem, &txn));
        }
    }

    #[test]
    fn faults_leave_memory_untouched(
        pages in prop::collection::vec((0x70000u64..0x70010, 0x60000u64..0x60010), 0..8),
        page in 0x6fff0u64..0x70020,
        sid_v in prop::sample::select(vec![SID, 0x201, 0x14e8]),
        policy in prop::sample::select(vec![UnmatchedPolicy::Bypass, UnmatchedPolicy::Fault]),
        data in prop::collection::vec(1u8..=255, 1..16),
    ) {
        let (mut smmu, mut mem, _) = state(&pages);
        smmu.unmatched_policy = policy;
        let before = mem.clone();
        let h = digest(&mem);
        let txn = Transaction::write(sid(sid_v), VirtAddr(page << 12), data);
        let r = smmu.access(&mut mem, &txn).unwrap();
        if r.outcome.is_fault() {
            prop_assert_eq!(digest(&mem), h);
            prop_assert!(mem == before);
        } else {
            prop_assert!(mem != before);
        }
    }

    #[test]
    fn end_to_end_offsets(va in 0x70000u64..0x70100, pa in 0x60000u64..0x60100, k in 0u64..4096) {
        let (mut smmu, mut mem, _) = state(&[(va, pa)]);
        let txn = Transaction::write(sid(SID), VirtAddr((va << 12) + k), vec![0xa5]);
        let r = smmu.access(&mut mem, &txn).unwrap();
        prop_assert_eq!(r.outcome, Outcome::Translated { pa: PhysAddr((pa << 12) + k), bank: 0 });
        prop_assert_eq!(mem.read_bytes(PhysAddr((pa << 12) + k), 1).unwrap(), vec![0xa5]);
    }
}

#[test]
fn stream_outcomes_precede_bank_faults() {
    // Bank 0 has an empty table, so reaching it would be a context fault.
    let (mut smmu, mem, _) = state(&[]);
    smmu.unmatched_policy = UnmatchedPolicy::Fault;
    let va = VirtAddr(0x7000_0000);

    let unmatched = Transaction::read(sid(0x201), va, 4);
    assert_eq!(
        smmu.translate(&mem, &unmatched),
        Outcome::GlobalFault(GlobalFaultReason::UnmatchedStream)
    );

    smmu.streams_mut()
        .program_entry(1, Smr { valid: true, mask: 0x3f, id: 0x200 }, S2cr::translate(0, InstCfg::Data))
        .unwrap();
    let both = Transaction::read(sid(SID), va, 4);
    assert_eq!(smmu.translate(&mem, &both), Outcome::GlobalFault(GlobalFaultReason::MultipleMatch));

    smmu.streams_mut().invalidate_entry(1).unwrap();
    smmu.streams_mut().program_entry(0, Smr::exact(sid(SID)), S2cr::fault()).unwrap();
    assert_eq!(
        smmu.translate(&mem, &both),
        Outcome::GlobalFault(GlobalFaultReason::StreamFaultContext)
    );

    smmu.streams_mut()
        .program_entry(0, Smr::exact(sid(SID)), S2cr::translate(0, InstCfg::Data))
        .unwrap();
    assert!(matches!(
        smmu.translate(&mem, &both),
        Outcome::ContextFault { bank: 0, reason: ContextFaultReason::Walk(_) }
    ));
    assert_eq!(walks(&smmu), 1);
}

#[test]
fn instcfg_is_checked_before_the_bank() {
    let (mut smmu, mem, _) = state(&[(0x70002, 0x60002)]);
    smmu.streams_mut()
        .program_entry(0, Smr::exact(sid(SID)), S2cr::translate(0, InstCfg::Instruction))
        .unwrap();
    let txn = Transaction::read(sid(SID), VirtAddr(0x7000_2000), 4);
    assert_eq!(
        smmu.translate(&mem, &txn),
        Outcome::ContextFault { bank: 0, reason: ContextFaultReason::InstCfgMismatch }
    );
    assert_eq!(walks(&smmu), 0);
}

#[test]
fn disabled_bank_never_walks() {
    let (mut smmu, mem, _) = state(&[(0x70002, 0x60002)]);
    smmu.banks_mut().set_enabled(0, false).unwrap();
    for page in 0x70000u64..0x70010 {
        let txn = Transaction::read(sid(SID), VirtAddr(page << 12), 4);
        assert_eq!(smmu.translate(&mem, &txn), Outcome::Bypassed(PhysAddr(page << 12)));
    }
    assert_eq!(walks(&smmu), 0);
}

#[test]
fn bypass_does_not_allocate() {
    let (mut smmu, mut mem, _) = state(&[]);
    let cursor = mem.alloc_cursor();
    let txn = Transaction::write(sid(0x14e8), VirtAddr(0x6000_0000), vec![1, 2, 3, 4]);
    let r = smmu.access(&mut mem, &txn).unwrap();
    assert_eq!(r.outcome, Outcome::Bypassed(PhysAddr(0x6000_0000)));
    assert_eq!(mem.alloc_cursor(), cursor);
}
