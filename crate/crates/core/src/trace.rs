// SPDX-License-Identifier: Apache-2.0

//! Trace events emitted by the SMMU pipeline and its clients.
//!
//! Every event renders as one line, `EVT <seq> <body>`:
//!
//! ```text
//! EVT 1 TXN sid=0x0200 va=0x000070002000 kind=D acc=W
//! EVT 2 SEC state=NS cache=0xf
//! EVT 3 MATCH idx=0
//! EVT 4 S2CR idx=0 type=TRANS cb=0 inst=DATA
//! EVT 5 BANK cb=0 cbar=0b01 en=1
//! EVT 6 TLB cb=0 MISS page=0x000070002
//! EVT 7 WALK cb=0 L0 desc=0x0000000080001003 @0x000080000000
//! EVT 11 OUT XLATE pa=0x000060002000
//! ```

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::smmu::{AccessKind, Outcome, TxnKind};
use crate::stream_mapping::{InstCfg, S2cr, S2crType, StreamId, StreamMatch};
use crate::translation_table::WalkStep;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceEvent {
    Txn { sid: StreamId, va: u64, kind: TxnKind, access: AccessKind },
    /// Security state (always non-secure) and recorded cache attributes.
    Security { cache_bits: u8 },
    /// SMMU globally disabled; everything bypasses.
    GlobalBypass,
    Match(StreamMatch),
    S2cr { idx: usize, s2cr: S2cr },
    Bank { cb: u8, cbar_bits: u8, enabled: bool },
    Tlb { cb: u8, page: u64, hit: bool },
    Walk { cb: u8, step: WalkStep },
    Out(Outcome),
    TlbInvalidateAll,
    TlbInvalidateVa { cb: u8, va: u64 },
    Dma { channel: String, bus_width_bits: u16, src: u64, dst: u64, len: usize },
    PlTrigger { port: &'static str },
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Txn { sid, va, kind, access } => {
                let k = match kind {
                    TxnKind::Data => 'D',
                    TxnKind::Instruction => 'I',
                };
                let a = match access {
                    AccessKind::Read => 'R',
                    AccessKind::Write => 'W',
                };
                write!(f, "TXN sid={:#06x} va={:#014x} kind={k} acc={a}", sid.value(), va)
            }
            Self::Security { cache_bits } => write!(f, "SEC state=NS cache={cache_bits:#x}"),
            Self::GlobalBypass => f.write_str("GLOBAL disabled"),
            Self::Match(m) => match m {
                StreamMatch::Matched(i) => write!(f, "MATCH idx={i}"),
                StreamMatch::NoMatch => f.write_str("MATCH NOMATCH"),
                StreamMatch::MultipleMatch(all) => {
                    f.write_str("MATCH MULTI[")?;
                    for (n, i) in all.iter().enumerate() {
                        if n > 0 {
                            f.write_str(",")?;
                        }
                        write!(f, "{i}")?;
                    }
                    f.write_str("]")
                }
            },
            Self::S2cr { idx, s2cr } => {
                let t = match s2cr.ctype {
                    S2crType::Translation => "TRANS",
                    S2crType::Bypass => "BYPASS",
                    S2crType::Fault => "FAULT",
                    S2crType::Reserved => "RESERVED",
                };
                let inst = match s2cr.instcfg {
                    InstCfg::Default => "DEFAULT",
                    InstCfg::Instruction => "INSTR",
                    InstCfg::Data => "DATA",
                };
                write!(f, "S2CR idx={idx} type={t} cb={} inst={inst}", s2cr.cbndx)
            }
            Self::Bank { cb, cbar_bits, enabled } => {
                write!(f, "BANK cb={cb} cbar={cbar_bits:#04b} en={}", u8::from(*enabled))
            }
            Self::Tlb { cb, page, hit } => {
                let h = if *hit { "HIT" } else { "MISS" };
                write!(f, "TLB cb={cb} {h} page={page:#011x}")
            }
            Self::Walk { cb, step } => write!(
                f,
                "WALK cb={cb} L{} desc={:#018x} @{:#014x}",
                step.level, step.desc.0, step.desc_pa.0
            ),
            Self::Out(outcome) => write!(f, "OUT {outcome}"),
            Self::TlbInvalidateAll => f.write_str("TLBI all"),
            Self::TlbInvalidateVa { cb, va } => write!(f, "TLBI cb={cb} va={va:#014x}"),
            Self::Dma { channel, bus_width_bits, src, dst, len } => write!(
                f,
                "DMA ch={channel} bus={bus_width_bits} src={src:#014x} dst={dst:#014x} len={len}"
            ),
            Self::PlTrigger { port } => write!(f, "PL trigger port={port}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub seq: u64,
    pub event: TraceEvent,
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EVT {} {}", self.seq, self.event)
    }
}

pub trait TraceSink {
    fn record(&mut self, record: TraceRecord);
}

impl<S: TraceSink + ?Sized> TraceSink for alloc::boxed::Box<S> {
    fn record(&mut self, record: TraceRecord) {
        (**self).record(record)
    }
}

impl<S: TraceSink + ?Sized> TraceSink for &mut S {
    fn record(&mut self, record: TraceRecord) {
        (**self).record(record)
    }
}

/// Discards everything.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullSink;

impl TraceSink for NullSink {
    fn record(&mut self, _: TraceRecord) {}
}

/// Keeps every record in memory.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TraceBuffer {
    records: Vec<TraceRecord>,
}

impl TraceBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn take(&mut self) -> Vec<TraceRecord> {
        core::mem::take(&mut self.records)
    }

    pub fn clear(&mut self) {
        self.records.clear();
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn events(&self) -> impl Iterator<Item = &TraceEvent> {
        self.records.iter().map(|r| &r.event)
    }

    pub fn lines(&self) -> impl Iterator<Item = String> + '_ {
        self.records.iter().map(|r| alloc::format!("{r}"))
    }
}

impl TraceSink for TraceBuffer {
    fn record(&mut self, record: TraceRecord) {
        self.records.push(record);
    }
}
