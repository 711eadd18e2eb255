// SPDX-License-Identifier: Apache-2.0

//! AArch64 long-descriptor translation tables with a 4 KiB granule.
//!
//! Tables live inside [`PhysMemory`] as little-endian 64-bit descriptors.
//! The same builder and walker serve context-bank tables owned by the SMMU
//! and "process" tables built elsewhere and handed to a bank by address.
//!
//! Only TTBR0-style tables exist. Level 0..=2 descriptors must be table
//! pointers and level 3 descriptors must be pages; block descriptors are
//! never generated and the walker treats them as translation faults.

use core::fmt;

use thiserror::Error;

use crate::phys_mem::{MemError, PhysAddr, PhysMemory, PAGE_MASK, PAGE_SHIFT};

pub const ENTRIES_PER_TABLE: usize = 512;
pub const LAST_LEVEL: u8 = 3;

/// Largest modeled input-address width.
pub const VA_BITS: u32 = 49;

/// Output sizes a walk configuration may carry.
pub const OUTPUT_SIZES: [u8; 6] = [32, 36, 40, 42, 44, 48];

/// Input-address range supported with a 4 KiB granule.
pub const MIN_IA_BITS: u8 = 25;
pub const MAX_IA_BITS: u8 = 48;

/// Output-address width of tables built on the processor side.
pub const PROCESS_OA_BITS: u8 = 40;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct VirtAddr(pub u64);

impl VirtAddr {
    pub const fn new(value: u64) -> Self {
        Self(value)
    }

    pub const fn value(self) -> u64 {
        self.0
    }

    pub const fn page(self) -> u64 {
        self.0 >> PAGE_SHIFT
    }

    pub const fn page_offset(self) -> u64 {
        self.0 & PAGE_MASK
    }

    pub const fn is_page_aligned(self) -> bool {
        self.0 & PAGE_MASK == 0
    }

    pub const fn add(self, offset: u64) -> Self {
        Self(self.0.wrapping_add(offset))
    }
}

impl fmt::Debug for VirtAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "VirtAddr({:#x})", self.0)
    }
}

impl From<u64> for VirtAddr {
    fn from(value: u64) -> Self {
        Self(value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Granule {
    Size4K,
    Size16K,
    Size64K,
}

/// A raw 64-bit translation descriptor.
#[derive(Clone, Copy, PartialEq, Eq, Default)]
pub struct Descriptor(pub u64);

impl Descriptor {
    pub const VALID: u64 = 1 << 0;
    /// Table pointer at levels 0..=2, page at level 3.
    pub const TYPE: u64 = 1 << 1;
    pub const OUTPUT_MASK: u64 = 0x0000_ffff_ffff_f000;
    /// Bits [63:52], ignored by the walker.
    pub const SW_MASK: u64 = 0xfff0_0000_0000_0000;

    pub const INVALID: Self = Self(0);

    /// Table or page descriptor pointing at `pa`. Both encode as VALID|TYPE.
    pub const fn pointing_to(pa: PhysAddr) -> Self {
        Self((pa.0 & Self::OUTPUT_MASK) | Self::VALID | Self::TYPE)
    }

    pub const fn is_valid(self) -> bool {
        self.0 & Self::VALID != 0
    }

    pub const fn is_table_or_page(self) -> bool {
        self.0 & Self::TYPE != 0
    }

    pub const fn output(self) -> PhysAddr {
        PhysAddr(self.0 & Self::OUTPUT_MASK)
    }

    pub const fn software_bits(self) -> u64 {
        (self.0 & Self::SW_MASK) >> 52
    }
}

impl fmt::Debug for Descriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Descriptor({:#018x})", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum TableError {
    #[error("address {0:#x} is not 4 KiB aligned")]
    MisalignedAddress(u64),
    #[error("input address {va:#x} is outside the {ia_bits}-bit input range")]
    InputOutOfRange { va: u64, ia_bits: u8 },
    #[error("output address {pa:#x} is outside the {oa_bits}-bit output range")]
    OutputOutOfRange { pa: u64, oa_bits: u8 },
    #[error("{va:#x} already maps to {existing:#x}; unmap before mapping to {requested:#x}")]
    Remap { va: u64, existing: u64, requested: u64 },
    #[error("{0:#x} is not mapped")]
    NotMapped(u64),
    #[error("block descriptor at level {level} on the path of {va:#x}")]
    UnexpectedBlock { level: u8, va: u64 },
    #[error("unsupported translation granule {0:?}")]
    UnsupportedGranule(Granule),
    #[error("input size of {0} bits is outside 25..=48")]
    InvalidInputSize(u8),
    #[error("output size of {0} bits is not one of 32/36/40/42/44/48")]
    InvalidOutputSize(u8),
    #[error(transparent)]
    Mem(#[from] MemError),
}

/// Level at which a walk of an `ia_bits`-wide input space begins.
pub const fn start_level(ia_bits: u8) -> Option<u8> {
    match ia_bits {
        40..=48 => Some(0),
        31..=39 => Some(1),
        25..=30 => Some(2),
        _ => None,
    }
}

/// Index into the level-`level` table: VA bits [47:39], [38:30], [29:21]
/// or [20:12].
///
/// Panics if `level > 3`.
pub const fn level_index(va: VirtAddr, level: u8) -> usize {
    assert!(level <= LAST_LEVEL, "translation level out of range");
    let shift = PAGE_SHIFT + 9 * (LAST_LEVEL - level) as u32;
    ((va.0 >> shift) & 0x1ff) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WalkConfig {
    ia_bits: u8,
    oa_bits: u8,
    root: PhysAddr,
}

impl WalkConfig {
    pub fn new(ia_bits: u8, oa_bits: u8, root: PhysAddr) -> Result<Self, TableError> {
        Self::with_granule(Granule::Size4K, ia_bits, oa_bits, root)
    }

    pub fn with_granule(
        granule: Granule,
        ia_bits: u8,
        oa_bits: u8,
        root: PhysAddr,
    ) -> Result<Self, TableError> {
        if granule != Granule::Size4K {
            return Err(TableError::UnsupportedGranule(granule));
        }
        if start_level(ia_bits).is_none() {
            return Err(TableError::InvalidInputSize(ia_bits));
        }
        if !OUTPUT_SIZES.contains(&oa_bits) {
            return Err(TableError::InvalidOutputSize(oa_bits));
        }
        if !root.is_page_aligned() {
            return Err(TableError::MisalignedAddress(root.0));
        }
        Ok(Self { ia_bits, oa_bits, root })
    }

    pub fn ia_bits(&self) -> u8 {
        self.ia_bits
    }

    pub fn oa_bits(&self) -> u8 {
        self.oa_bits
    }

    pub fn root(&self) -> PhysAddr {
        self.root
    }

    pub fn start_level(&self) -> u8 {
        // Validated at construction.
        start_level(self.ia_bits).unwrap_or(0)
    }

    pub fn contains_input(&self, va: VirtAddr) -> bool {
        va.0 >> self.ia_bits == 0
    }

    pub fn contains_output(&self, pa: PhysAddr) -> bool {
        pa.0 >> self.oa_bits == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WalkFaultKind {
    AddressSizeInput,
    AddressSizeOutput { level: u8 },
    Translation { level: u8 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WalkFault {
    pub kind: WalkFaultKind,
    pub va: VirtAddr,
}

impl WalkFault {
    pub fn level(&self) -> Option<u8> {
        match self.kind {
            WalkFaultKind::AddressSizeInput => None,
            WalkFaultKind::AddressSizeOutput { level } | WalkFaultKind::Translation { level } => {
                Some(level)
            }
        }
    }

    pub fn is_translation(&self) -> bool {
        matches!(self.kind, WalkFaultKind::Translation { .. })
    }
}

impl fmt::Display for WalkFault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            WalkFaultKind::AddressSizeInput => {
                write!(f, "input address size fault at {:#x}", self.va.0)
            }
            WalkFaultKind::AddressSizeOutput { level } => {
                write!(f, "output address size fault at level {level} for {:#x}", self.va.0)
            }
            WalkFaultKind::Translation { level } => {
                write!(f, "translation fault at level {level} for {:#x}", self.va.0)
            }
        }
    }
}

/// One descriptor fetch performed by a walk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WalkStep {
    pub level: u8,
    pub desc_pa: PhysAddr,
    pub desc: Descriptor,
}

pub fn walk(mem: &PhysMemory, cfg: &WalkConfig, va: VirtAddr) -> Result<PhysAddr, WalkFault> {
    walk_traced(mem, cfg, va, |_| {})
}

/// Walks `va` under `cfg`, reporting every descriptor fetch to `on_step`.
pub fn walk_traced(
    mem: &PhysMemory,
    cfg: &WalkConfig,
    va: VirtAddr,
    mut on_step: impl FnMut(WalkStep),
) -> Result<PhysAddr, WalkFault> {
    let fault = |kind| WalkFault { kind, va };
    if !cfg.contains_input(va) {
        return Err(fault(WalkFaultKind::AddressSizeInput));
    }
    let mut table = cfg.root;
    for level in cfg.start_level()..=LAST_LEVEL {
        let desc_pa = table.add(8 * level_index(va, level) as u64);
        let desc = match mem.read_u64(desc_pa) {
            Ok(raw) => Descriptor(raw),
            // The table for this level lies beyond physical memory.
            Err(_) => return Err(fault(WalkFaultKind::AddressSizeOutput { level })),
        };
        on_step(WalkStep { level, desc_pa, desc });
        if !desc.is_valid() || !desc.is_table_or_page() {
            return Err(fault(WalkFaultKind::Translation { level }));
        }
        let out = desc.output();
        if !cfg.contains_output(out) {
            return Err(fault(WalkFaultKind::AddressSizeOutput { level }));
        }
        if level == LAST_LEVEL {
            return Ok(out.add(va.page_offset()));
        }
        table = out;
    }
    unreachable!("walk always terminates at level 3")
}

fn check_page_args(cfg: &WalkConfig, va: VirtAddr) -> Result<(), TableError> {
    if !va.is_page_aligned() {
        return Err(TableError::MisalignedAddress(va.0));
    }
    if !cfg.contains_input(va) {
        return Err(TableError::InputOutOfRange { va: va.0, ia_bits: cfg.ia_bits });
    }
    Ok(())
}

/// Maps the 4 KiB page at `va` to `pa`, allocating intermediate tables from
/// the memory's table allocator. Mapping the same pair twice is a no-op.
pub fn map_page(
    mem: &mut PhysMemory,
    cfg: &WalkConfig,
    va: VirtAddr,
    pa: PhysAddr,
) -> Result<(), TableError> {
    check_page_args(cfg, va)?;
    if !pa.is_page_aligned() {
        return Err(TableError::MisalignedAddress(pa.0));
    }
    if !cfg.contains_output(pa) {
        return Err(TableError::OutputOutOfRange { pa: pa.0, oa_bits: cfg.oa_bits });
    }
    let mut table = cfg.root;
    for level in cfg.start_level()..LAST_LEVEL {
        let desc_pa = table.add(8 * level_index(va, level) as u64);
        let desc = Descriptor(mem.read_u64(desc_pa)?);
        table = if !desc.is_valid() {
            let next = mem.alloc_table_page()?;
            mem.write_u64(desc_pa, Descriptor::pointing_to(next).0)?;
            next
        } else if desc.is_table_or_page() {
            desc.output()
        } else {
            return Err(TableError::UnexpectedBlock { level, va: va.0 });
        };
    }
    let desc_pa = table.add(8 * level_index(va, LAST_LEVEL) as u64);
    let desc = Descriptor(mem.read_u64(desc_pa)?);
    if desc.is_valid() && desc.is_table_or_page() {
        let existing = desc.output();
        return if existing == pa {
            Ok(())
        } else {
            Err(TableError::Remap { va: va.0, existing: existing.0, requested: pa.0 })
        };
    }
    mem.write_u64(desc_pa, Descriptor::pointing_to(pa).0)?;
    Ok(())
}

/// Clears the level-3 entry for `va`. Table pages are not reclaimed.
pub fn unmap_page(mem: &mut PhysMemory, cfg: &WalkConfig, va: VirtAddr) -> Result<(), TableError> {
    check_page_args(cfg, va)?;
    let mut table = cfg.root;
    for level in cfg.start_level()..=LAST_LEVEL {
        let desc_pa = table.add(8 * level_index(va, level) as u64);
        let desc = Descriptor(mem.read_u64(desc_pa)?);
        if !desc.is_valid() || !desc.is_table_or_page() {
            return Err(TableError::NotMapped(va.0));
        }
        if level == LAST_LEVEL {
            mem.write_u64(desc_pa, Descriptor::INVALID.0)?;
            return Ok(());
        }
        table = desc.output();
    }
    unreachable!("unmap always terminates at level 3")
}

/// Builds a standalone table the way a process's page table would be laid
/// out, returning a configuration rooted at a freshly allocated page.
pub fn build_process_table(
    mem: &mut PhysMemory,
    ia_bits: u8,
    mappings: &[(VirtAddr, PhysAddr)],
) -> Result<WalkConfig, TableError> {
    // Validate before touching the allocator.
    let probe = WalkConfig::new(ia_bits, PROCESS_OA_BITS, PhysAddr(0))?;
    let root = mem.alloc_table_page()?;
    let cfg = WalkConfig { root, ..probe };
    for &(va, pa) in mappings {
        map_page(mem, &cfg, va, pa)?;
    }
    Ok(cfg)
}
