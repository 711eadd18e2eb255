// SPDX-License-Identifier: Apache-2.0

//! DMA-capable masters: the sixteen PS DMA channels and a DMA-like IP
//! block in programmable logic. Both issue their accesses through the SMMU.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::phys_mem::{PhysAddr, PhysMemory, PAGE_MASK, PAGE_SIZE};
use crate::smmu::{AccessError, AccessResult, Outcome, SmmuState, Transaction, TxnKind};
use crate::stream_mapping::{make_stream_id, StreamId};
use crate::trace::{TraceEvent, TraceSink};
use crate::translation_table::VirtAddr;

pub const FPD_DMA_BASE: u64 = 0xfd50_0000;
pub const LPD_DMA_BASE: u64 = 0xffa8_0000;
pub const DMA_CHANNEL_STRIDE: u64 = 0x1_0000;
pub const CHANNELS_PER_CONTROLLER: usize = 8;

const FPD_DEFAULT_SID: u16 = 0x14e8;
const LPD_DEFAULT_SID: u16 = 0x868;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PowerDomain {
    Lpd,
    Fpd,
}

impl PowerDomain {
    pub const fn bus_width_bits(self) -> u16 {
        match self {
            Self::Fpd => 128,
            Self::Lpd => 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DmaChannel {
    pub name: String,
    pub base: PhysAddr,
    pub power_domain: PowerDomain,
    pub bus_width_bits: u16,
    pub stream_id: StreamId,
    pub enabled: bool,
}

/// The PS DMA channels: FPD channels 0..8 are `dma1chan0`..`dma8chan0`,
/// LPD channels 0..8 are `dma9chan0`..`dma16chan0`.
pub fn standard_channels() -> Vec<DmaChannel> {
    let controllers = [
        (PowerDomain::Fpd, FPD_DMA_BASE, FPD_DEFAULT_SID),
        (PowerDomain::Lpd, LPD_DMA_BASE, LPD_DEFAULT_SID),
    ];
    let mut out = Vec::with_capacity(2 * CHANNELS_PER_CONTROLLER);
    for (c, (power_domain, base, sid)) in controllers.into_iter().enumerate() {
        for k in 0..CHANNELS_PER_CONTROLLER {
            out.push(DmaChannel {
                name: format!("dma{}chan0", c * CHANNELS_PER_CONTROLLER + k + 1),
                base: PhysAddr(base + DMA_CHANNEL_STRIDE * k as u64),
                power_domain,
                bus_width_bits: power_domain.bus_width_bits(),
                stream_id: StreamId::new(u32::from(sid) + k as u32).expect("15-bit default"),
                enabled: true,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DmaError {
    #[error("channel {0} is disabled")]
    ChannelDisabled(String),
    #[error("transfer length must be at least one byte")]
    EmptyTransfer,
    #[error("register offset {0:#x} is not implemented")]
    BadRegisterOffset(u64),
    #[error(transparent)]
    Access(#[from] AccessError),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TransferReport {
    /// Every outcome in issue order: read, write, read, write, ...
    pub outcomes: Vec<Outcome>,
    pub bytes_copied: usize,
    /// The fault that stopped the transfer, if any.
    pub fault: Option<Outcome>,
}

impl TransferReport {
    pub fn completed(&self) -> bool {
        self.fault.is_none()
    }

    pub fn last_outcome(&self) -> Option<&Outcome> {
        self.outcomes.last()
    }
}

/// Copies `len` bytes from `src` to `dst`, both translated by the SMMU.
///
/// The ranges are cut at every 4 KiB boundary of either side. Each chunk is
/// one read followed by one write; the first fault ends the transfer.
pub fn dma_transfer<S: TraceSink>(
    smmu: &mut SmmuState<S>,
    mem: &mut PhysMemory,
    channel: &DmaChannel,
    src: VirtAddr,
    dst: VirtAddr,
    len: usize,
) -> Result<TransferReport, DmaError> {
    if !channel.enabled {
        return Err(DmaError::ChannelDisabled(channel.name.clone()));
    }
    if len == 0 {
        return Err(DmaError::EmptyTransfer);
    }
    smmu.emit(TraceEvent::Dma {
        channel: channel.name.clone(),
        bus_width_bits: channel.bus_width_bits,
        src: src.0,
        dst: dst.0,
        len,
    });

    let mut report = TransferReport::default();
    let mut done = 0usize;
    while done < len {
        let s = src.add(done as u64);
        let d = dst.add(done as u64);
        let room = |a: VirtAddr| (PAGE_SIZE - (a.0 & PAGE_MASK)) as usize;
        let n = (len - done).min(room(s)).min(room(d));

        let read = Transaction::read(channel.stream_id, s, n);
        let AccessResult { outcome, data } = smmu.access(mem, &read)?;
        report.outcomes.push(outcome);
        let Some(bytes) = data else {
            report.fault = Some(outcome);
            break;
        };

        let write = Transaction::write(channel.stream_id, d, bytes);
        let AccessResult { outcome, .. } = smmu.access(mem, &write)?;
        report.outcomes.push(outcome);
        if outcome.is_fault() {
            report.fault = Some(outcome);
            break;
        }
        done += n;
        report.bytes_copied = done;
    }
    Ok(report)
}

/// PS port the PL block is wired through.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HpcPort {
    #[default]
    Hpc0,
    Hpc1,
}

impl HpcPort {
    /// Master-port code carried in StreamID bits [9:6].
    pub const fn code(self) -> u8 {
        match self {
            Self::Hpc0 => 0x8,
            Self::Hpc1 => 0x9,
        }
    }

    pub const fn name(self) -> &'static str {
        match self {
            Self::Hpc0 => "HPC0",
            Self::Hpc1 => "HPC1",
        }
    }
}

pub const PL_DEFAULT_BASE: u64 = 0xb000_0000;

pub const PL_REG_DEST_LO: u64 = 0x30;
pub const PL_REG_DEST_HI: u64 = 0x34;
pub const PL_REG_DATA: u64 = 0x38;
pub const PL_REG_CACHE: u64 = 0x3c;
pub const PL_REG_AXI_ID: u64 = 0x40;
pub const PL_REG_TRIGGER: u64 = 0x44;

/// Size of the register window starting at the block's base.
pub const PL_WINDOW: u64 = PL_REG_TRIGGER + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PlRegs {
    pub dest_lo: u32,
    pub dest_hi: u32,
    pub data: u32,
    pub cache_bits: u32,
    pub axi_id: u32,
    pub trigger: u32,
}

/// DMA-like IP block in the PL: one 32-bit write per trigger.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlDmaIp {
    pub base: PhysAddr,
    pub port: HpcPort,
    pub regs: PlRegs,
}

impl Default for PlDmaIp {
    fn default() -> Self {
        Self::new(PhysAddr(PL_DEFAULT_BASE), HpcPort::Hpc0)
    }
}

impl PlDmaIp {
    pub fn new(base: PhysAddr, port: HpcPort) -> Self {
        Self { base, port, regs: PlRegs::default() }
    }

    /// Whether `pa` falls inside the register window.
    pub fn decodes(&self, pa: PhysAddr) -> bool {
        pa.0 >= self.base.0 && pa.0 < self.base.0 + PL_WINDOW
    }

    fn reg_mut(&mut self, offset: u64) -> Result<&mut u32, DmaError> {
        Ok(match offset {
            PL_REG_DEST_LO => &mut self.regs.dest_lo,
            PL_REG_DEST_HI => &mut self.regs.dest_hi,
            PL_REG_DATA => &mut self.regs.data,
            PL_REG_CACHE => &mut self.regs.cache_bits,
            PL_REG_AXI_ID => &mut self.regs.axi_id,
            PL_REG_TRIGGER => &mut self.regs.trigger,
            _ => return Err(DmaError::BadRegisterOffset(offset)),
        })
    }

    pub fn read_reg(&mut self, offset: u64) -> Result<u32, DmaError> {
        self.reg_mut(offset).map(|r| *r)
    }

    /// Latches `value`. Writing 1 to the trigger register fires the
    /// transaction, whose result is returned.
    pub fn write_reg<S: TraceSink>(
        &mut self,
        smmu: &mut SmmuState<S>,
        mem: &mut PhysMemory,
        offset: u64,
        value: u32,
    ) -> Result<Option<AccessResult>, DmaError> {
        *self.reg_mut(offset)? = value;
        if offset == PL_REG_TRIGGER && value == 1 {
            return self.trigger(smmu, mem).map(Some);
        }
        Ok(None)
    }

    pub fn stream_id(&self) -> StreamId {
        make_stream_id(self.port.code(), (self.regs.axi_id & 0x3f) as u8)
            .expect("port code and masked AXI ID fit")
    }

    pub fn transaction(&self) -> Transaction {
        let va = (u64::from(self.regs.dest_hi) << 32) | u64::from(self.regs.dest_lo);
        Transaction::write(self.stream_id(), VirtAddr(va), self.regs.data.to_le_bytes().to_vec())
            .with_kind(TxnKind::Data)
            .with_cache_bits(self.regs.cache_bits as u8)
    }

    pub fn trigger<S: TraceSink>(
        &self,
        smmu: &mut SmmuState<S>,
        mem: &mut PhysMemory,
    ) -> Result<AccessResult, DmaError> {
        smmu.emit(TraceEvent::PlTrigger { port: self.port.name() });
        Ok(smmu.access(mem, &self.transaction())?)
    }
}
