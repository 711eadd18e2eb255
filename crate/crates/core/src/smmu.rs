// SPDX-License-Identifier: Apache-2.0

//! The SMMU transaction pipeline.
//!
//! A transaction is resolved in a fixed order: global enable, stream
//! resolution, S2CR type, instruction/data classification, CBAR type,
//! bank enable, TLB lookup and finally a table walk. The first step that
//! decides the transaction ends the pipeline. Each executed step emits one
//! trace event and the result is always an [`Outcome`]; only the memory
//! access performed by [`SmmuState::access`] can fail.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

use crate::context_bank::ContextBankFile;
use crate::phys_mem::{MemError, PhysAddr, PhysMemory, PAGE_SHIFT, PAGE_SIZE};
use crate::stream_mapping::{InstCfg, S2crType, StreamId, StreamMapTable, StreamMatch};
use crate::trace::{TraceBuffer, TraceEvent, TraceRecord, TraceSink};
use crate::translation_table::{walk_traced, VirtAddr, WalkFault, WalkFaultKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessKind {
    Read,
    Write,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TxnKind {
    #[default]
    Data,
    Instruction,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    Read(usize),
    Write(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    pub stream_id: StreamId,
    /// Used directly as the physical address when bypassed.
    pub va: VirtAddr,
    pub kind: TxnKind,
    pub payload: Payload,
    /// Recorded in the trace, no effect on behavior.
    pub cache_bits: u8,
}

impl Transaction {
    pub fn read(stream_id: StreamId, va: VirtAddr, len: usize) -> Self {
        Self {
            stream_id,
            va,
            kind: TxnKind::Data,
            payload: Payload::Read(len),
            cache_bits: 0,
        }
    }

    pub fn write(stream_id: StreamId, va: VirtAddr, data: Vec<u8>) -> Self {
        Self {
            stream_id,
            va,
            kind: TxnKind::Data,
            payload: Payload::Write(data),
            cache_bits: 0,
        }
    }

    pub fn with_kind(mut self, kind: TxnKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn with_cache_bits(mut self, bits: u8) -> Self {
        self.cache_bits = bits & 0xf;
        self
    }

    pub fn access_kind(&self) -> AccessKind {
        match self.payload {
            Payload::Read(_) => AccessKind::Read,
            Payload::Write(_) => AccessKind::Write,
        }
    }

    pub fn len(&self) -> usize {
        match &self.payload {
            Payload::Read(n) => *n,
            Payload::Write(data) => data.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlobalFaultReason {
    UnmatchedStream,
    MultipleMatch,
    StreamFaultContext,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContextFaultReason {
    Walk(WalkFault),
    InvalidContext,
    InstCfgMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Bypassed(PhysAddr),
    Translated { pa: PhysAddr, bank: u8 },
    GlobalFault(GlobalFaultReason),
    ContextFault { bank: u8, reason: ContextFaultReason },
}

impl Outcome {
    /// Physical address the access goes to, if it is allowed to proceed.
    pub fn pa(&self) -> Option<PhysAddr> {
        match *self {
            Self::Bypassed(pa) | Self::Translated { pa, .. } => Some(pa),
            _ => None,
        }
    }

    pub fn is_fault(&self) -> bool {
        self.pa().is_none()
    }

    /// `BYPASS`, `XLATE`, `GFAULT` or `CFAULT`.
    pub fn tag(&self) -> &'static str {
        match self {
            Self::Bypassed(_) => "BYPASS",
            Self::Translated { .. } => "XLATE",
            Self::GlobalFault(_) => "GFAULT",
            Self::ContextFault { .. } => "CFAULT",
        }
    }

    /// Short machine-readable fault reason, e.g. `translation-l3`.
    pub fn reason(&self) -> Option<FaultReason> {
        match *self {
            Self::GlobalFault(r) => Some(FaultReason::Global(r)),
            Self::ContextFault { reason, .. } => Some(FaultReason::Context(reason)),
            _ => None,
        }
    }
}

/// Display adapter for fault reasons in trace lines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultReason {
    Global(GlobalFaultReason),
    Context(ContextFaultReason),
}

impl fmt::Display for FaultReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Global(GlobalFaultReason::UnmatchedStream) => f.write_str("unmatched-stream"),
            Self::Global(GlobalFaultReason::MultipleMatch) => f.write_str("multiple-match"),
            Self::Global(GlobalFaultReason::StreamFaultContext) => {
                f.write_str("stream-fault-context")
            }
            Self::Context(ContextFaultReason::InvalidContext) => f.write_str("invalid-context"),
            Self::Context(ContextFaultReason::InstCfgMismatch) => f.write_str("instcfg-mismatch"),
            Self::Context(ContextFaultReason::Walk(w)) => match w.kind {
                WalkFaultKind::AddressSizeInput => f.write_str("addr-size-in"),
                WalkFaultKind::AddressSizeOutput { level } => write!(f, "addr-size-out-l{level}"),
                WalkFaultKind::Translation { level } => write!(f, "translation-l{level}"),
            },
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.pa() {
            Some(pa) => write!(f, "{} pa={:#014x}", self.tag(), pa.0),
            None => write!(f, "{} reason={}", self.tag(), self.reason().expect("fault has reason")),
        }
    }
}

/// What happens to a StreamID that matches no SMR.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UnmatchedPolicy {
    #[default]
    Bypass,
    Fault,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AccessError {
    #[error("transaction carries no bytes")]
    EmptyPayload,
    #[error("translated access of {len} bytes at {va:#x} crosses a 4 KiB page")]
    PageStraddle { va: u64, len: usize },
    #[error(transparent)]
    Memory(#[from] MemError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessResult {
    pub outcome: Outcome,
    /// Bytes returned by a read that was allowed to proceed.
    pub data: Option<Vec<u8>>,
}

pub struct SmmuState<S = TraceBuffer> {
    pub global_enable: bool,
    pub unmatched_policy: UnmatchedPolicy,
    streams: StreamMapTable,
    banks: ContextBankFile,
    /// (bank, input page) -> output page
    tlb: BTreeMap<(u8, u64), u64>,
    sink: S,
    seq: u64,
}

impl Default for SmmuState<TraceBuffer> {
    fn default() -> Self {
        Self::new()
    }
}

impl SmmuState<TraceBuffer> {
    pub fn new() -> Self {
        Self::with_sink(TraceBuffer::new())
    }
}

impl<S> fmt::Debug for SmmuState<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SmmuState")
            .field("global_enable", &self.global_enable)
            .field("unmatched_policy", &self.unmatched_policy)
            .field("allocated_banks", &self.banks.allocated_count())
            .field("tlb_entries", &self.tlb.len())
            .finish_non_exhaustive()
    }
}

impl<S: TraceSink> SmmuState<S> {
    pub fn with_sink(sink: S) -> Self {
        Self {
            global_enable: true,
            unmatched_policy: UnmatchedPolicy::default(),
            streams: StreamMapTable::new(),
            banks: ContextBankFile::new(),
            tlb: BTreeMap::new(),
            sink,
            seq: 0,
        }
    }

    pub fn streams(&self) -> &StreamMapTable {
        &self.streams
    }

    pub fn streams_mut(&mut self) -> &mut StreamMapTable {
        &mut self.streams
    }

    pub fn banks(&self) -> &ContextBankFile {
        &self.banks
    }

    pub fn banks_mut(&mut self) -> &mut ContextBankFile {
        &mut self.banks
    }

    pub fn sink(&self) -> &S {
        &self.sink
    }

    pub fn sink_mut(&mut self) -> &mut S {
        &mut self.sink
    }

    /// Installs a new sink and returns the previous one. Sequence numbers
    /// continue across the swap.
    pub fn replace_sink(&mut self, sink: S) -> S {
        core::mem::replace(&mut self.sink, sink)
    }

    pub fn emit(&mut self, event: TraceEvent) {
        self.seq += 1;
        self.sink.record(TraceRecord { seq: self.seq, event });
    }

    pub fn tlb_len(&self) -> usize {
        self.tlb.len()
    }

    pub fn tlb_lookup(&self, bank: u8, va: VirtAddr) -> Option<PhysAddr> {
        self.tlb
            .get(&(bank, va.page()))
            .map(|&frame| PhysAddr((frame << PAGE_SHIFT) | va.page_offset()))
    }

    pub fn tlb_invalidate_all(&mut self) {
        self.tlb.clear();
        self.emit(TraceEvent::TlbInvalidateAll);
    }

    pub fn tlb_invalidate_va(&mut self, bank: u8, va: VirtAddr) {
        self.tlb.remove(&(bank, va.page()));
        self.emit(TraceEvent::TlbInvalidateVa { cb: bank, va: va.0 });
    }

    fn finish(&mut self, outcome: Outcome) -> Outcome {
        self.emit(TraceEvent::Out(outcome));
        outcome
    }

    /// Resolves `txn` to an [`Outcome`] without touching payload memory.
    pub fn translate(&mut self, mem: &PhysMemory, txn: &Transaction) -> Outcome {
        let va = txn.va;
        self.emit(TraceEvent::Txn {
            sid: txn.stream_id,
            va: va.0,
            kind: txn.kind,
            access: txn.access_kind(),
        });

        if !self.global_enable {
            self.emit(TraceEvent::GlobalBypass);
            return self.finish(Outcome::Bypassed(PhysAddr(va.0)));
        }
        self.emit(TraceEvent::Security { cache_bits: txn.cache_bits });

        let resolved = self.streams.resolve(txn.stream_id);
        self.emit(TraceEvent::Match(resolved.clone()));
        let idx = match resolved {
            StreamMatch::Matched(i) => i,
            StreamMatch::NoMatch => {
                return self.finish(match self.unmatched_policy {
                    UnmatchedPolicy::Bypass => Outcome::Bypassed(PhysAddr(va.0)),
                    UnmatchedPolicy::Fault => {
                        Outcome::GlobalFault(GlobalFaultReason::UnmatchedStream)
                    }
                });
            }
            StreamMatch::MultipleMatch(_) => {
                return self.finish(Outcome::GlobalFault(GlobalFaultReason::MultipleMatch));
            }
        };

        let s2cr = self.streams.entries()[idx].1;
        self.emit(TraceEvent::S2cr { idx, s2cr });
        match s2cr.ctype {
            S2crType::Translation => {}
            S2crType::Bypass => return self.finish(Outcome::Bypassed(PhysAddr(va.0))),
            S2crType::Fault | S2crType::Reserved => {
                return self.finish(Outcome::GlobalFault(GlobalFaultReason::StreamFaultContext));
            }
        }

        let cb = s2cr.cbndx;
        let mismatch = matches!(
            (s2cr.instcfg, txn.kind),
            (InstCfg::Instruction, TxnKind::Data) | (InstCfg::Data, TxnKind::Instruction)
        );
        if mismatch {
            return self.finish(Outcome::ContextFault {
                bank: cb,
                reason: ContextFaultReason::InstCfgMismatch,
            });
        }

        let bank = self.banks.banks()[usize::from(cb)];
        // An unallocated bank is held in reset, i.e. disabled.
        let enabled = bank.enabled && self.banks.is_allocated(usize::from(cb));
        self.emit(TraceEvent::Bank { cb, cbar_bits: bank.cbar.bits(), enabled });
        if !bank.cbar.is_operative() {
            return self.finish(Outcome::ContextFault {
                bank: cb,
                reason: ContextFaultReason::InvalidContext,
            });
        }
        if !enabled {
            return self.finish(Outcome::Bypassed(PhysAddr(va.0)));
        }

        let cached = self.tlb_lookup(cb, va);
        self.emit(TraceEvent::Tlb { cb, page: va.page(), hit: cached.is_some() });
        if let Some(pa) = cached {
            return self.finish(Outcome::Translated { pa, bank: cb });
        }

        let cfg = match bank.walk_config() {
            Ok(cfg) => cfg,
            // Enabled with an unusable TCR; the walk cannot start.
            Err(_) => {
                let fault = WalkFault { kind: WalkFaultKind::AddressSizeInput, va };
                self.banks.record_fault(usize::from(cb), fault);
                return self.finish(Outcome::ContextFault {
                    bank: cb,
                    reason: ContextFaultReason::Walk(fault),
                });
            }
        };
        let mut steps = Vec::with_capacity(4);
        let walked = walk_traced(mem, &cfg, va, |s| steps.push(s));
        for step in steps {
            self.emit(TraceEvent::Walk { cb, step });
        }
        match walked {
            Ok(pa) => {
                self.tlb.insert((cb, va.page()), pa.frame());
                self.finish(Outcome::Translated { pa, bank: cb })
            }
            Err(fault) => {
                self.banks.record_fault(usize::from(cb), fault);
                self.finish(Outcome::ContextFault {
                    bank: cb,
                    reason: ContextFaultReason::Walk(fault),
                })
            }
        }
    }

    /// Translates `txn` and performs its memory access if permitted.
    pub fn access(
        &mut self,
        mem: &mut PhysMemory,
        txn: &Transaction,
    ) -> Result<AccessResult, AccessError> {
        if txn.is_empty() {
            return Err(AccessError::EmptyPayload);
        }
        let outcome = self.translate(mem, txn);
        let Some(pa) = outcome.pa() else {
            return Ok(AccessResult { outcome, data: None });
        };
        let len = txn.len();
        if matches!(outcome, Outcome::Translated { .. })
            && txn.va.page_offset() + len as u64 > PAGE_SIZE
        {
            return Err(AccessError::PageStraddle { va: txn.va.0, len });
        }
        let data = match &txn.payload {
            Payload::Read(n) => Some(mem.read_bytes(pa, *n)?),
            Payload::Write(bytes) => {
                mem.write_bytes(pa, bytes)?;
                None
            }
        };
        Ok(AccessResult { outcome, data })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context_bank::Cbar;
    use crate::stream_mapping::{S2cr, Smr};
    use crate::translation_table::{map_page, WalkConfig};
    use alloc::string::String;
    use alloc::vec;

    fn sid(v: u32) -> StreamId {
        StreamId::new(v).unwrap()
    }

    /// SMR 0x200 -> bank 0 (enabled, ia 48 / oa 48) with 0x70002000 -> 0x60002000.
    fn ch5_state() -> (SmmuState, PhysMemory, WalkConfig) {
        let mut mem = PhysMemory::new();
        let mut smmu = SmmuState::new();
        let cb = smmu.banks_mut().allocate_bank().unwrap();
        let root = mem.alloc_table_page().unwrap();
        let cfg = smmu.banks_mut().program_bank(cb, root, 0x10, 0b101).unwrap();
        smmu.banks_mut().set_enabled(cb, true).unwrap();
        map_page(&mut mem, &cfg, VirtAddr(0x7000_2000), PhysAddr(0x6000_2000)).unwrap();
        smmu.streams_mut()
            .program_entry(0, Smr::exact(sid(0x200)), S2cr::translate(0, InstCfg::Data))
            .unwrap();
        (smmu, mem, cfg)
    }

    fn cafebeef(sid_v: u32, va: u64) -> Transaction {
        Transaction::write(sid(sid_v), VirtAddr(va), 0xcafe_beefu32.to_le_bytes().to_vec())
            .with_cache_bits(0xf)
    }

    fn lines(smmu: &SmmuState) -> Vec<String> {
        smmu.sink().lines().collect()
    }

    #[test]
    fn translated_write_lands_at_pa() {
        let (mut smmu, mut mem, _) = ch5_state();
        let r = smmu.access(&mut mem, &cafebeef(0x200, 0x7000_2000)).unwrap();
        assert_eq!(r.outcome, Outcome::Translated { pa: PhysAddr(0x6000_2000), bank: 0 });
        assert_eq!(mem.read_u32(PhysAddr(0x6000_2000)).unwrap(), 0xcafe_beef);
        let l = lines(&smmu);
        assert_eq!(l[0], "EVT 1 TXN sid=0x0200 va=0x000070002000 kind=D acc=W");
        assert_eq!(l[1], "EVT 2 SEC state=NS cache=0xf");
        assert_eq!(l[2], "EVT 3 MATCH idx=0");
        assert_eq!(l[3], "EVT 4 S2CR idx=0 type=TRANS cb=0 inst=DATA");
        assert_eq!(l[4], "EVT 5 BANK cb=0 cbar=0b01 en=1");
        assert_eq!(l[5], "EVT 6 TLB cb=0 MISS page=0x000070002");
        assert_eq!(l[6], "EVT 7 WALK cb=0 L0 desc=0x0000000080001003 @0x000080000000");
        assert_eq!(l.len(), 11);
        assert_eq!(l[10], "EVT 11 OUT XLATE pa=0x000060002000");
    }

    #[test]
    fn global_disable_bypasses() {
        let (mut smmu, mem, _) = ch5_state();
        smmu.global_enable = false;
        let o = smmu.translate(&mem, &cafebeef(0x200, 0x7000_2000));
        assert_eq!(o, Outcome::Bypassed(PhysAddr(0x7000_2000)));
    }

    #[test]
    fn unmapped_va_context_faults() {
        let (mut smmu, mem, _) = ch5_state();
        let o = smmu.translate(&mem, &cafebeef(0x200, 0x7100_0000));
        let Outcome::ContextFault { bank: 0, reason: ContextFaultReason::Walk(w) } = o else {
            panic!("unexpected {o:?}");
        };
        assert!(w.is_translation());
        assert_eq!(smmu.banks().bank(0).unwrap().last_fault, Some(w));
    }

    #[test]
    fn unmatched_policy() {
        let (mut smmu, mem, _) = ch5_state();
        let txn = cafebeef(0x201, 0x7000_2000);
        assert_eq!(smmu.translate(&mem, &txn), Outcome::Bypassed(PhysAddr(0x7000_2000)));
        smmu.unmatched_policy = UnmatchedPolicy::Fault;
        assert_eq!(
            smmu.translate(&mem, &txn),
            Outcome::GlobalFault(GlobalFaultReason::UnmatchedStream)
        );
    }

    #[test]
    fn s2cr_types() {
        let (mut smmu, mem, _) = ch5_state();
        let txn = cafebeef(0x200, 0x7000_2000);
        smmu.streams_mut().program_entry(0, Smr::exact(sid(0x200)), S2cr::bypass()).unwrap();
        assert_eq!(smmu.translate(&mem, &txn), Outcome::Bypassed(PhysAddr(0x7000_2000)));
        smmu.streams_mut().program_entry(0, Smr::exact(sid(0x200)), S2cr::fault()).unwrap();
        assert_eq!(
            smmu.translate(&mem, &txn),
            Outcome::GlobalFault(GlobalFaultReason::StreamFaultContext)
        );
        let reserved = S2cr { ctype: S2crType::Reserved, ..S2cr::fault() };
        smmu.streams_mut().program_entry(0, Smr::exact(sid(0x200)), reserved).unwrap();
        assert_eq!(
            smmu.translate(&mem, &txn),
            Outcome::GlobalFault(GlobalFaultReason::StreamFaultContext)
        );
    }

    #[test]
    fn multiple_match_is_global_fault() {
        let (mut smmu, mem, _) = ch5_state();
        smmu.streams_mut()
            .program_entry(1, Smr { valid: true, mask: 0x3ff, id: 0 }, S2cr::bypass())
            .unwrap();
        assert_eq!(
            smmu.translate(&mem, &cafebeef(0x200, 0x7000_2000)),
            Outcome::GlobalFault(GlobalFaultReason::MultipleMatch)
        );
        assert!(lines(&smmu).iter().any(|l| l.ends_with("MATCH MULTI[0,1]")));
    }

    #[test]
    fn instcfg_mismatch_both_ways() {
        let (mut smmu, mem, _) = ch5_state();
        smmu.streams_mut()
            .program_entry(0, Smr::exact(sid(0x200)), S2cr::translate(0, InstCfg::Instruction))
            .unwrap();
        let data = cafebeef(0x200, 0x7000_2000);
        let want = Outcome::ContextFault { bank: 0, reason: ContextFaultReason::InstCfgMismatch };
        assert_eq!(smmu.translate(&mem, &data), want);
        let inst = data.clone().with_kind(TxnKind::Instruction);
        assert!(matches!(smmu.translate(&mem, &inst), Outcome::Translated { .. }));

        smmu.streams_mut()
            .program_entry(0, Smr::exact(sid(0x200)), S2cr::translate(0, InstCfg::Data))
            .unwrap();
        assert_eq!(smmu.translate(&mem, &inst), want);

        smmu.streams_mut()
            .program_entry(0, Smr::exact(sid(0x200)), S2cr::translate(0, InstCfg::Default))
            .unwrap();
        assert!(matches!(smmu.translate(&mem, &inst), Outcome::Translated { .. }));
        assert!(matches!(smmu.translate(&mem, &data), Outcome::Translated { .. }));
    }

    #[test]
    fn inoperative_cbar_is_invalid_context() {
        let (mut smmu, mem, _) = ch5_state();
        for cbar in [Cbar::Stage2, Cbar::Stage1WithStage2Fault, Cbar::Stage1ThenStage2] {
            smmu.banks_mut().set_cbar(0, cbar).unwrap();
            assert_eq!(
                smmu.translate(&mem, &cafebeef(0x200, 0x7000_2000)),
                Outcome::ContextFault { bank: 0, reason: ContextFaultReason::InvalidContext }
            );
        }
    }

    #[test]
    fn disabled_bank_bypasses_without_walking() {
        let (mut smmu, mem, _) = ch5_state();
        smmu.banks_mut().set_enabled(0, false).unwrap();
        assert_eq!(
            smmu.translate(&mem, &cafebeef(0x200, 0x7000_2000)),
            Outcome::Bypassed(PhysAddr(0x7000_2000))
        );
        assert!(!smmu.sink().events().any(|e| matches!(e, TraceEvent::Walk { .. })));
    }

    #[test]
    fn tlb_hit_skips_walk_and_invalidation_rewalks() {
        let (mut smmu, mem, _) = ch5_state();
        let txn = cafebeef(0x200, 0x7000_2000);
        smmu.translate(&mem, &txn);
        smmu.sink_mut().clear();
        assert!(matches!(smmu.translate(&mem, &txn), Outcome::Translated { .. }));
        assert!(!smmu.sink().events().any(|e| matches!(e, TraceEvent::Walk { .. })));
        assert!(smmu.sink().events().any(|e| matches!(e, TraceEvent::Tlb { hit: true, .. })));

        smmu.tlb_invalidate_all();
        smmu.sink_mut().clear();
        smmu.translate(&mem, &txn);
        assert_eq!(
            smmu.sink().events().filter(|e| matches!(e, TraceEvent::Walk { .. })).count(),
            4
        );
    }

    #[test]
    fn invalidate_va_is_per_page() {
        let (mut smmu, mut mem, cfg) = ch5_state();
        map_page(&mut mem, &cfg, VirtAddr(0x7000_3000), PhysAddr(0x6000_3000)).unwrap();
        smmu.translate(&mem, &cafebeef(0x200, 0x7000_2000));
        smmu.translate(&mem, &cafebeef(0x200, 0x7000_3000));
        assert_eq!(smmu.tlb_len(), 2);
        smmu.tlb_invalidate_va(0, VirtAddr(0x7000_2abc));
        assert_eq!(smmu.tlb_lookup(0, VirtAddr(0x7000_2000)), None);
        assert_eq!(smmu.tlb_lookup(0, VirtAddr(0x7000_3004)), Some(PhysAddr(0x6000_3004)));
    }

    #[test]
    fn faulted_write_leaves_memory_alone() {
        let (mut smmu, mut mem, _) = ch5_state();
        let before = mem.clone();
        let r = smmu.access(&mut mem, &cafebeef(0x200, 0x7100_0000)).unwrap();
        assert!(r.outcome.is_fault());
        assert_eq!(mem, before);
    }

    #[test]
    fn bypassed_write_in_place_and_reads_return_data() {
        let (mut smmu, mut mem, _) = ch5_state();
        smmu.access(&mut mem, &cafebeef(0x300, 0x6000_0000)).unwrap();
        assert_eq!(mem.read_u32(PhysAddr(0x6000_0000)).unwrap(), 0xcafe_beef);
        let r = smmu.access(&mut mem, &Transaction::read(sid(0x300), VirtAddr(0x6000_0000), 4)).unwrap();
        assert_eq!(r.data, Some(vec![0xef, 0xbe, 0xfe, 0xca]));
    }

    #[test]
    fn access_errors() {
        let (mut smmu, mut mem, _) = ch5_state();
        let empty = Transaction::write(sid(0x200), VirtAddr(0x7000_2000), vec![]);
        assert_eq!(smmu.access(&mut mem, &empty), Err(AccessError::EmptyPayload));
        let straddle = Transaction::write(sid(0x200), VirtAddr(0x7000_2ffe), vec![0; 4]);
        assert_eq!(
            smmu.access(&mut mem, &straddle),
            Err(AccessError::PageStraddle { va: 0x7000_2ffe, len: 4 })
        );
        let far = Transaction::write(sid(0x300), VirtAddr(1 << 41), vec![0; 4]);
        assert!(matches!(smmu.access(&mut mem, &far), Err(AccessError::Memory(_))));
    }

    #[test]
    fn outcome_rendering() {
        assert_eq!(
            alloc::format!("{}", Outcome::Bypassed(PhysAddr(0x6000_0000))),
            "BYPASS pa=0x000060000000"
        );
        let w = WalkFault { kind: WalkFaultKind::Translation { level: 1 }, va: VirtAddr(0) };
        assert_eq!(
            alloc::format!(
                "{}",
                Outcome::ContextFault { bank: 2, reason: ContextFaultReason::Walk(w) }
            ),
            "CFAULT reason=translation-l1"
        );
        assert_eq!(
            alloc::format!("{}", Outcome::GlobalFault(GlobalFaultReason::UnmatchedStream)),
            "GFAULT reason=unmatched-stream"
        );
    }

    #[test]
    fn sink_swap_keeps_sequence() {
        let (mut smmu, mem, _) = ch5_state();
        smmu.translate(&mem, &cafebeef(0x201, 0x1000));
        let old = smmu.replace_sink(TraceBuffer::new());
        let last = old.records().last().unwrap().seq;
        smmu.translate(&mem, &cafebeef(0x201, 0x1000));
        assert_eq!(smmu.sink().records()[0].seq, last + 1);
    }
}
