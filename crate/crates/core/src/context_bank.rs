// SPDX-License-Identifier: Apache-2.0

//! Translation context banks.

use thiserror::Error;

use crate::phys_mem::PhysAddr;
use crate::translation_table::{TableError, WalkConfig, WalkFault};

pub const CONTEXT_BANKS: usize = 16;

/// T0SZ/PASize programmed when a bank gets a table allocated by the SMMU.
pub const DEFAULT_T0SZ: u8 = 0x10;
pub const DEFAULT_PASIZE: u8 = 0b101;

/// T0SZ/PASize matching the processor's TCR_EL1, used with external tables.
pub const PROCESS_T0SZ: u8 = 0x19;
pub const PROCESS_PASIZE: u8 = 0b010;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum BankError {
    #[error("context bank index {0} is outside 0..16")]
    IndexOutOfRange(usize),
    #[error("context bank {0} is not allocated")]
    BankNotAllocated(usize),
    #[error("all 16 context banks are allocated")]
    NoFreeBank,
    #[error("T0SZ {0:#x} gives an input size outside 25..=48 bits")]
    InvalidT0sz(u8),
    #[error("PASize encoding {0:#05b} is reserved")]
    ReservedEncoding(u8),
    #[error("TTBR0 {0:#x} is not 4 KiB aligned")]
    MisalignedTtbr(u64),
}

/// Output-address width selected by a TCR2.PASize code.
pub const fn decode_pasize(code: u8) -> Result<u8, BankError> {
    match code {
        0b000 => Ok(32),
        0b001 => Ok(36),
        0b010 => Ok(40),
        0b011 => Ok(42),
        0b100 => Ok(44),
        0b101 => Ok(48),
        _ => Err(BankError::ReservedEncoding(code)),
    }
}

/// Input-address width for a T0SZ value: 64 - T0SZ, limited to 25..=48.
pub const fn ia_bits_for_t0sz(t0sz: u8) -> Result<u8, BankError> {
    match t0sz {
        16..=39 => Ok(64 - t0sz),
        _ => Err(BankError::InvalidT0sz(t0sz)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Cbar {
    Stage2,
    #[default]
    Stage1WithStage2Bypass,
    Stage1WithStage2Fault,
    Stage1ThenStage2,
}

impl Cbar {
    pub const fn from_bits(bits: u8) -> Self {
        match bits & 0b11 {
            0b00 => Self::Stage2,
            0b01 => Self::Stage1WithStage2Bypass,
            0b10 => Self::Stage1WithStage2Fault,
            _ => Self::Stage1ThenStage2,
        }
    }

    pub const fn bits(self) -> u8 {
        match self {
            Self::Stage2 => 0b00,
            Self::Stage1WithStage2Bypass => 0b01,
            Self::Stage1WithStage2Fault => 0b10,
            Self::Stage1ThenStage2 => 0b11,
        }
    }

    /// Only stage-1 translation with stage 2 bypassed is modeled.
    pub const fn is_operative(self) -> bool {
        matches!(self, Self::Stage1WithStage2Bypass)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContextBank {
    pub index: u8,
    /// SCTLR.M
    pub enabled: bool,
    pub ttbr0: PhysAddr,
    pub t0sz: u8,
    pub pasize: u8,
    pub cbar: Cbar,
    pub last_fault: Option<WalkFault>,
}

impl ContextBank {
    const fn reset(index: u8) -> Self {
        Self {
            index,
            enabled: false,
            ttbr0: PhysAddr(0),
            t0sz: DEFAULT_T0SZ,
            pasize: DEFAULT_PASIZE,
            cbar: Cbar::Stage1WithStage2Bypass,
            last_fault: None,
        }
    }

    pub fn ia_bits(&self) -> Result<u8, BankError> {
        ia_bits_for_t0sz(self.t0sz)
    }

    pub fn oa_bits(&self) -> Result<u8, BankError> {
        decode_pasize(self.pasize)
    }

    /// Table-walk parameters currently programmed into this bank.
    pub fn walk_config(&self) -> Result<WalkConfig, BankError> {
        let ia = self.ia_bits()?;
        let oa = self.oa_bits()?;
        WalkConfig::new(ia, oa, self.ttbr0).map_err(|e| match e {
            TableError::MisalignedAddress(a) => BankError::MisalignedTtbr(a),
            _ => BankError::InvalidT0sz(self.t0sz),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextBankFile {
    banks: [ContextBank; CONTEXT_BANKS],
    allocated: u16,
}

impl Default for ContextBankFile {
    fn default() -> Self {
        Self::new()
    }
}

impl ContextBankFile {
    pub fn new() -> Self {
        Self {
            banks: core::array::from_fn(|i| ContextBank::reset(i as u8)),
            allocated: 0,
        }
    }

    pub fn banks(&self) -> &[ContextBank; CONTEXT_BANKS] {
        &self.banks
    }

    pub fn bank(&self, index: usize) -> Option<&ContextBank> {
        self.banks.get(index)
    }

    pub fn is_allocated(&self, index: usize) -> bool {
        index < CONTEXT_BANKS && self.allocated & (1 << index) != 0
    }

    pub fn allocated_count(&self) -> usize {
        self.allocated.count_ones() as usize
    }

    fn allocated_mut(&mut self, index: usize) -> Result<&mut ContextBank, BankError> {
        if index >= CONTEXT_BANKS {
            return Err(BankError::IndexOutOfRange(index));
        }
        if !self.is_allocated(index) {
            return Err(BankError::BankNotAllocated(index));
        }
        Ok(&mut self.banks[index])
    }

    /// Claims the lowest free bank, disabled and configured for stage 1.
    pub fn allocate_bank(&mut self) -> Result<usize, BankError> {
        let index = (!self.allocated).trailing_zeros() as usize;
        if index >= CONTEXT_BANKS {
            return Err(BankError::NoFreeBank);
        }
        self.allocated |= 1 << index;
        self.banks[index] = ContextBank::reset(index as u8);
        Ok(index)
    }

    pub fn release_bank(&mut self, index: usize) -> Result<(), BankError> {
        self.allocated_mut(index)?;
        self.allocated &= !(1 << index);
        self.banks[index] = ContextBank::reset(index as u8);
        Ok(())
    }

    /// Writes TTBR0, TCR.T0SZ and TCR2.PASize. Leaves SCTLR.M alone.
    pub fn program_bank(
        &mut self,
        index: usize,
        ttbr0: PhysAddr,
        t0sz: u8,
        pasize: u8,
    ) -> Result<WalkConfig, BankError> {
        self.allocated_mut(index)?;
        let ia = ia_bits_for_t0sz(t0sz)?;
        let oa = decode_pasize(pasize)?;
        if !ttbr0.is_page_aligned() {
            return Err(BankError::MisalignedTtbr(ttbr0.0));
        }
        let bank = &mut self.banks[index];
        bank.ttbr0 = ttbr0;
        bank.t0sz = t0sz;
        bank.pasize = pasize;
        WalkConfig::new(ia, oa, ttbr0).map_err(|_| BankError::MisalignedTtbr(ttbr0.0))
    }

    pub fn set_enabled(&mut self, index: usize, enabled: bool) -> Result<(), BankError> {
        self.allocated_mut(index)?.enabled = enabled;
        Ok(())
    }

    pub fn set_cbar(&mut self, index: usize, cbar: Cbar) -> Result<(), BankError> {
        self.allocated_mut(index)?.cbar = cbar;
        Ok(())
    }

    pub(crate) fn record_fault(&mut self, index: usize, fault: WalkFault) {
        if let Some(bank) = self.banks.get_mut(index) {
            bank.last_fault = Some(fault);
        }
    }

    pub fn clear_fault(&mut self, index: usize) -> Result<Option<WalkFault>, BankError> {
        Ok(self.allocated_mut(index)?.last_fault.take())
    }
}
