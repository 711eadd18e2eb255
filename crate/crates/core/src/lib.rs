// SPDX-License-Identifier: Apache-2.0

//! Behavioral model of an MMU-500-class system MMU inside a
//! Zynq-UltraScale+-like SoC.
//!
//! The crate is `no_std` (it needs `alloc`) and does no IO. Everything
//! operates on a [`PhysMemory`] owned by the caller:
//!
//! - [`phys_mem`]: sparse simulated physical memory plus a bump allocator
//!   for translation tables.
//! - [`translation_table`]: AArch64 4 KiB-granule table builder and walker.
//! - [`stream_mapping`]: StreamIDs and the 48-entry SMR/S2CR table.
//! - [`context_bank`]: the 16 translation context banks.
//! - [`smmu`]: the transaction pipeline with its TLB and trace.
//! - [`iommu`]: devices, groups and domains, Linux IOMMU API style.
//! - [`dma`]: PS DMA channels and the PL DMA-like IP block.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod context_bank;
pub mod dma;
pub mod iommu;
pub mod phys_mem;
pub mod smmu;
pub mod stream_mapping;
pub mod trace;
pub mod translation_table;

pub use context_bank::{decode_pasize, Cbar, ContextBank, ContextBankFile};
pub use dma::{dma_transfer, standard_channels, DmaChannel, HpcPort, PlDmaIp, TransferReport};
pub use iommu::{DomainId, GroupId, IommuRegistry, MapFlags};
pub use phys_mem::{PhysAddr, PhysMemory};
pub use smmu::{Outcome, SmmuState, Transaction, UnmatchedPolicy};
pub use stream_mapping::{make_stream_id, StreamId, StreamMapTable, StreamMatch};
pub use trace::{TraceBuffer, TraceEvent, TraceSink};
pub use translation_table::{VirtAddr, WalkConfig, WalkFault};
