// SPDX-License-Identifier: Apache-2.0

//! Stream mapping table: 48 SMR/S2CR pairs resolving a StreamID to a
//! context.
//!
//! In matching mode every valid SMR is compared against the incoming ID;
//! bits set in an SMR's mask are ignored. More than one hit is reported as
//! [`StreamMatch::MultipleMatch`] with the indices in ascending order. In
//! indexing mode the StreamID selects an S2CR directly.

use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

pub const STREAM_MAP_ENTRIES: usize = 48;
pub const STREAM_ID_BITS: u32 = 15;
pub const STREAM_ID_MASK: u16 = (1 << STREAM_ID_BITS) - 1;

const AXI_ID_BITS: u32 = 6;
const MASTER_PORT_BITS: u32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum StreamError {
    #[error("{field} value {value:#x} does not fit in {bits} bits")]
    FieldOutOfRange { field: &'static str, value: u32, bits: u32 },
    #[error("stream map index {0} is outside 0..48")]
    IndexOutOfRange(usize),
    #[error("context bank index {0} is outside 0..16")]
    BankOutOfRange(u8),
    #[error("extended StreamID matching is not supported")]
    UnsupportedFeature,
}

fn check_field(field: &'static str, value: u32, bits: u32) -> Result<(), StreamError> {
    if value >> bits == 0 {
        Ok(())
    } else {
        Err(StreamError::FieldOutOfRange { field, value, bits })
    }
}

/// 15-bit transaction stream identifier. Bits [5:0] carry the AXI ID and
/// bits [9:6] the master port; bits [14:10] have no known meaning but take
/// part in matching.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct StreamId(u16);

impl StreamId {
    pub fn new(value: u32) -> Result<Self, StreamError> {
        check_field("stream id", value, STREAM_ID_BITS)?;
        Ok(Self(value as u16))
    }

    pub const fn value(self) -> u16 {
        self.0
    }

    pub const fn axi_id(self) -> u8 {
        (self.0 & 0x3f) as u8
    }

    pub const fn master_port(self) -> u8 {
        ((self.0 >> AXI_ID_BITS) & 0xf) as u8
    }

    pub const fn upper(self) -> u8 {
        (self.0 >> (AXI_ID_BITS + MASTER_PORT_BITS)) as u8
    }

    /// `(axi_id, master_port, upper)`
    pub const fn decompose(self) -> (u8, u8, u8) {
        (self.axi_id(), self.master_port(), self.upper())
    }
}

impl fmt::Debug for StreamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "StreamId({:#x})", self.0)
    }
}

impl fmt::Display for StreamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#x}", self.0)
    }
}

/// Builds a StreamID from a master-port code and an AXI ID, upper bits zero.
pub fn make_stream_id(master_port: u8, axi_id: u8) -> Result<StreamId, StreamError> {
    check_field("master port", master_port.into(), MASTER_PORT_BITS)?;
    check_field("axi id", axi_id.into(), AXI_ID_BITS)?;
    Ok(StreamId((u16::from(master_port) << AXI_ID_BITS) | u16::from(axi_id)))
}

/// Stream Match Register.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Smr {
    pub valid: bool,
    pub mask: u16,
    pub id: u16,
}

impl Smr {
    pub const INVALID: Self = Self { valid: false, mask: 0, id: 0 };

    /// Valid entry matching exactly `sid`.
    pub const fn exact(sid: StreamId) -> Self {
        Self { valid: true, mask: 0, id: sid.0 }
    }

    pub const fn matches(&self, sid: StreamId) -> bool {
        self.valid && ((sid.0 ^ self.id) & !self.mask & STREAM_ID_MASK) == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum S2crType {
    Translation,
    Bypass,
    #[default]
    Fault,
    Reserved,
}

impl S2crType {
    pub const fn from_bits(bits: u8) -> Self {
        match bits & 0b11 {
            0b00 => Self::Translation,
            0b01 => Self::Bypass,
            0b10 => Self::Fault,
            _ => Self::Reserved,
        }
    }

    pub const fn bits(self) -> u8 {
        match self {
            Self::Translation => 0b00,
            Self::Bypass => 0b01,
            Self::Fault => 0b10,
            Self::Reserved => 0b11,
        }
    }
}

/// Instruction/data classification applied to transactions of a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InstCfg {
    #[default]
    Default,
    Instruction,
    Data,
}

impl InstCfg {
    /// Register encoding as observed on the modeled part: 0b11 selects
    /// instruction, 0b10 data, anything else keeps the incoming attribute.
    pub const fn from_bits(bits: u8) -> Self {
        match bits & 0b11 {
            0b11 => Self::Instruction,
            0b10 => Self::Data,
            _ => Self::Default,
        }
    }

    pub const fn bits(self) -> u8 {
        match self {
            Self::Default => 0b00,
            Self::Data => 0b10,
            Self::Instruction => 0b11,
        }
    }
}

/// Stream-to-Context Register.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct S2cr {
    pub ctype: S2crType,
    pub cbndx: u8,
    pub instcfg: InstCfg,
}

impl S2cr {
    pub const fn translate(cbndx: u8, instcfg: InstCfg) -> Self {
        Self { ctype: S2crType::Translation, cbndx, instcfg }
    }

    pub const fn bypass() -> Self {
        Self { ctype: S2crType::Bypass, cbndx: 0, instcfg: InstCfg::Default }
    }

    pub const fn fault() -> Self {
        Self { ctype: S2crType::Fault, cbndx: 0, instcfg: InstCfg::Default }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StreamMapMode {
    #[default]
    Matching,
    Indexing,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StreamMatch {
    Matched(usize),
    NoMatch,
    MultipleMatch(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamMapTable {
    entries: [(Smr, S2cr); STREAM_MAP_ENTRIES],
    mode: StreamMapMode,
}

impl Default for StreamMapTable {
    fn default() -> Self {
        Self::new()
    }
}

impl StreamMapTable {
    pub fn new() -> Self {
        Self::with_mode(StreamMapMode::Matching)
    }

    pub fn with_mode(mode: StreamMapMode) -> Self {
        Self {
            entries: [(Smr::INVALID, S2cr::default()); STREAM_MAP_ENTRIES],
            mode,
        }
    }

    pub fn mode(&self) -> StreamMapMode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: StreamMapMode) {
        self.mode = mode;
    }

    /// The extended (EXIDENABLE) SMR format is not modeled.
    pub fn set_extended_ids(&mut self, enable: bool) -> Result<(), StreamError> {
        if enable {
            Err(StreamError::UnsupportedFeature)
        } else {
            Ok(())
        }
    }

    pub fn entries(&self) -> &[(Smr, S2cr); STREAM_MAP_ENTRIES] {
        &self.entries
    }

    pub fn entry(&self, n: usize) -> Option<&(Smr, S2cr)> {
        self.entries.get(n)
    }

    pub fn program_entry(&mut self, n: usize, smr: Smr, s2cr: S2cr) -> Result<(), StreamError> {
        if n >= STREAM_MAP_ENTRIES {
            return Err(StreamError::IndexOutOfRange(n));
        }
        check_field("smr id", smr.id.into(), STREAM_ID_BITS)?;
        check_field("smr mask", smr.mask.into(), STREAM_ID_BITS)?;
        if usize::from(s2cr.cbndx) >= crate::context_bank::CONTEXT_BANKS {
            return Err(StreamError::BankOutOfRange(s2cr.cbndx));
        }
        self.entries[n] = (smr, s2cr);
        Ok(())
    }

    /// Clears VALID on entry `n`, leaving the other fields in place.
    pub fn invalidate_entry(&mut self, n: usize) -> Result<(), StreamError> {
        let entry = self.entries.get_mut(n).ok_or(StreamError::IndexOutOfRange(n))?;
        entry.0.valid = false;
        Ok(())
    }

    /// Lowest entry whose SMR is not valid.
    pub fn first_free(&self) -> Option<usize> {
        self.entries.iter().position(|(smr, _)| !smr.valid)
    }

    pub fn match_stream(&self, sid: StreamId) -> StreamMatch {
        let mut first = None;
        let mut rest: Option<Vec<usize>> = None;
        for (i, (smr, _)) in self.entries.iter().enumerate() {
            if !smr.matches(sid) {
                continue;
            }
            match (first, rest.as_mut()) {
                (None, _) => first = Some(i),
                (Some(f), None) => rest = Some(alloc::vec![f, i]),
                (Some(_), Some(all)) => all.push(i),
            }
        }
        match (first, rest) {
            (_, Some(all)) => StreamMatch::MultipleMatch(all),
            (Some(i), None) => StreamMatch::Matched(i),
            (None, None) => StreamMatch::NoMatch,
        }
    }

    pub fn index_stream(&self, sid: StreamId) -> StreamMatch {
        let n = usize::from(sid.value());
        if n < STREAM_MAP_ENTRIES {
            StreamMatch::Matched(n)
        } else {
            StreamMatch::NoMatch
        }
    }

    /// Resolves `sid` according to the table's mode.
    pub fn resolve(&self, sid: StreamId) -> StreamMatch {
        match self.mode {
            StreamMapMode::Matching => self.match_stream(sid),
            StreamMapMode::Indexing => self.index_stream(sid),
        }
    }
}
