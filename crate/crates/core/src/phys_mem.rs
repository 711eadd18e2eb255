// SPDX-License-Identifier: Apache-2.0

//! Sparse simulated physical memory.
//!
//! Backing pages are 4 KiB and created on first write. Never-written bytes
//! read as zero. All multi-byte accessors are little-endian.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

pub const PAGE_SHIFT: u32 = 12;
pub const PAGE_SIZE: u64 = 1 << PAGE_SHIFT;
pub const PAGE_MASK: u64 = PAGE_SIZE - 1;

/// Width of the modeled physical address space.
pub const PA_BITS: u32 = 40;
pub const PA_LIMIT: u64 = 1 << PA_BITS;

/// Default base of the translation-table allocator.
pub const DEFAULT_TABLE_BASE: PhysAddr = PhysAddr(0x8000_0000);

/// A physical byte address.
///
/// Construction is unchecked: a walker may legitimately produce an output
/// address above the memory ceiling, which is reported when it is used.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct PhysAddr(pub u64);

impl PhysAddr {
    pub const fn new(value: u64) -> Self {
        Self(value)
    }

    pub const fn value(self) -> u64 {
        self.0
    }

    pub const fn frame(self) -> u64 {
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

impl fmt::Debug for PhysAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PhysAddr({:#x})", self.0)
    }
}

impl fmt::LowerHex for PhysAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::LowerHex::fmt(&self.0, f)
    }
}

impl From<u64> for PhysAddr {
    fn from(value: u64) -> Self {
        Self(value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum MemError {
    #[error("access of {len} bytes at {pa:#x} exceeds the {PA_BITS}-bit physical address space")]
    AddressOutOfRange { pa: u64, len: u64 },
    #[error("table allocator exhausted at {cursor:#x}")]
    AllocatorExhausted { cursor: u64 },
    #[error("table allocator base {0:#x} is not page aligned")]
    MisalignedBase(u64),
}

type Page = Box<[u8; PAGE_SIZE as usize]>;

fn zero_page() -> Page {
    Box::new([0u8; PAGE_SIZE as usize])
}

#[derive(Clone)]
pub struct PhysMemory {
    pages: BTreeMap<u64, Page>,
    alloc_cursor: PhysAddr,
}

impl Default for PhysMemory {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for PhysMemory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PhysMemory")
            .field("pages", &self.pages.len())
            .field("alloc_cursor", &self.alloc_cursor)
            .finish()
    }
}

/// Semantic equality: an all-zero backing page equals an absent one.
impl PartialEq for PhysMemory {
    fn eq(&self, other: &Self) -> bool {
        fn nonzero(m: &PhysMemory) -> impl Iterator<Item = (&u64, &Page)> {
            m.pages.iter().filter(|(_, p)| p.iter().any(|&b| b != 0))
        }
        self.alloc_cursor == other.alloc_cursor && nonzero(self).eq(nonzero(other))
    }
}

impl Eq for PhysMemory {}

fn check_range(pa: PhysAddr, len: usize) -> Result<(), MemError> {
    let len = len as u64;
    match pa.0.checked_add(len) {
        Some(end) if end <= PA_LIMIT => Ok(()),
        _ => Err(MemError::AddressOutOfRange { pa: pa.0, len }),
    }
}

impl PhysMemory {
    pub fn new() -> Self {
        Self {
            pages: BTreeMap::new(),
            alloc_cursor: DEFAULT_TABLE_BASE,
        }
    }

    pub fn with_table_base(base: PhysAddr) -> Result<Self, MemError> {
        if !base.is_page_aligned() {
            return Err(MemError::MisalignedBase(base.0));
        }
        if base.0 >= PA_LIMIT {
            return Err(MemError::AllocatorExhausted { cursor: base.0 });
        }
        Ok(Self {
            pages: BTreeMap::new(),
            alloc_cursor: base,
        })
    }

    pub fn alloc_cursor(&self) -> PhysAddr {
        self.alloc_cursor
    }

    /// Number of backing pages currently materialized.
    pub fn resident_pages(&self) -> usize {
        self.pages.len()
    }

    /// Returns the backing page for `frame`, if it has been written.
    pub fn page(&self, frame: u64) -> Option<&[u8; PAGE_SIZE as usize]> {
        self.pages.get(&frame).map(|p| &**p)
    }

    pub fn write_bytes(&mut self, pa: PhysAddr, data: &[u8]) -> Result<(), MemError> {
        check_range(pa, data.len())?;
        let mut addr = pa.0;
        let mut rest = data;
        while !rest.is_empty() {
            let off = (addr & PAGE_MASK) as usize;
            let n = rest.len().min(PAGE_SIZE as usize - off);
            let page = self.pages.entry(addr >> PAGE_SHIFT).or_insert_with(zero_page);
            page[off..off + n].copy_from_slice(&rest[..n]);
            rest = &rest[n..];
            addr += n as u64;
        }
        Ok(())
    }

    pub fn read_into(&self, pa: PhysAddr, buf: &mut [u8]) -> Result<(), MemError> {
        check_range(pa, buf.len())?;
        let mut addr = pa.0;
        let mut done = 0;
        while done < buf.len() {
            let off = (addr & PAGE_MASK) as usize;
            let n = (buf.len() - done).min(PAGE_SIZE as usize - off);
            let dst = &mut buf[done..done + n];
            match self.pages.get(&(addr >> PAGE_SHIFT)) {
                Some(page) => dst.copy_from_slice(&page[off..off + n]),
                None => dst.fill(0),
            }
            done += n;
            addr += n as u64;
        }
        Ok(())
    }

    pub fn read_bytes(&self, pa: PhysAddr, len: usize) -> Result<Vec<u8>, MemError> {
        check_range(pa, len)?;
        let mut buf = vec![0u8; len];
        self.read_into(pa, &mut buf)?;
        Ok(buf)
    }

    pub fn read_u32(&self, pa: PhysAddr) -> Result<u32, MemError> {
        let mut b = [0u8; 4];
        self.read_into(pa, &mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    pub fn write_u32(&mut self, pa: PhysAddr, value: u32) -> Result<(), MemError> {
        self.write_bytes(pa, &value.to_le_bytes())
    }

    pub fn read_u64(&self, pa: PhysAddr) -> Result<u64, MemError> {
        let mut b = [0u8; 8];
        self.read_into(pa, &mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    pub fn write_u64(&mut self, pa: PhysAddr, value: u64) -> Result<(), MemError> {
        self.write_bytes(pa, &value.to_le_bytes())
    }

    /// Hands out the next zero-filled 4 KiB page from the table allocator.
    pub fn alloc_table_page(&mut self) -> Result<PhysAddr, MemError> {
        let pa = self.alloc_cursor;
        let next = pa.0 + PAGE_SIZE;
        if next > PA_LIMIT {
            return Err(MemError::AllocatorExhausted { cursor: pa.0 });
        }
        // Scenario data may already live here; a fresh table starts empty.
        self.pages.insert(pa.frame(), zero_page());
        self.alloc_cursor = PhysAddr(next);
        Ok(pa)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::collections::BTreeSet;
    use proptest::prelude::*;

    #[test]
    fn word_write_reads_back() {
        let mut mem = PhysMemory::new();
        mem.write_bytes(PhysAddr(0x6000_0000), &[0xef, 0xbe, 0xfe, 0xca]).unwrap();
        assert_eq!(mem.read_u32(PhysAddr(0x6000_0000)).unwrap(), 0xcafe_beef);
        assert_eq!(
            mem.read_bytes(PhysAddr(0x6000_0000), 4).unwrap(),
            [0xef, 0xbe, 0xfe, 0xca]
        );
    }

    #[test]
    fn fresh_memory_reads_zero() {
        let mem = PhysMemory::new();
        assert_eq!(mem.read_u32(PhysAddr(0x1234_5000)).unwrap(), 0);
        assert!(mem.read_bytes(PhysAddr(0x1234_5000), 0).unwrap().is_empty());
        assert_eq!(mem.resident_pages(), 0);
    }

    #[test]
    fn straddling_write_matches_flat_oracle() {
        let mut mem = PhysMemory::new();
        let base = 0x6000_0ff0u64;
        let mut flat = [0u8; 0x20];
        let data = [1u8, 2, 3, 4];
        mem.write_bytes(PhysAddr(0x6000_0ffe), &data).unwrap();
        flat[0xe..0x12].copy_from_slice(&data);
        for (i, want) in flat.iter().enumerate() {
            let got = mem.read_bytes(PhysAddr(base + i as u64), 1).unwrap()[0];
            assert_eq!(got, *want, "byte {i}");
        }
        assert_eq!(mem.resident_pages(), 2);
    }

    #[test]
    fn range_ceiling() {
        let mut mem = PhysMemory::new();
        assert!(mem.write_bytes(PhysAddr(PA_LIMIT - 4), &[0; 4]).is_ok());
        assert_eq!(
            mem.write_bytes(PhysAddr(PA_LIMIT - 2), &[0; 4]),
            Err(MemError::AddressOutOfRange { pa: PA_LIMIT - 2, len: 4 })
        );
        assert!(mem.read_bytes(PhysAddr(u64::MAX), 1).is_err());
    }

    #[test]
    fn allocator_bumps_by_page() {
        let mut mem = PhysMemory::new();
        assert_eq!(mem.alloc_table_page().unwrap(), PhysAddr(0x8000_0000));
        assert_eq!(mem.alloc_table_page().unwrap(), PhysAddr(0x8000_1000));
        let mut seen = BTreeSet::new();
        for _ in 0..1024 {
            let pa = mem.alloc_table_page().unwrap();
            assert!(pa.is_page_aligned());
            seen.insert(pa);
        }
        assert_eq!(seen.len(), 1024);
    }

    #[test]
    fn allocated_page_is_zeroed_and_exhaustion_reported() {
        let mut mem = PhysMemory::with_table_base(PhysAddr(PA_LIMIT - PAGE_SIZE)).unwrap();
        mem.write_u32(PhysAddr(PA_LIMIT - PAGE_SIZE), 0xdead).unwrap();
        let pa = mem.alloc_table_page().unwrap();
        assert_eq!(mem.read_u32(pa).unwrap(), 0);
        assert_eq!(
            mem.alloc_table_page(),
            Err(MemError::AllocatorExhausted { cursor: PA_LIMIT })
        );
        assert!(PhysMemory::with_table_base(PhysAddr(0x123)).is_err());
    }

    #[test]
    fn zero_pages_compare_equal_to_absent() {
        let a = PhysMemory::new();
        let mut b = PhysMemory::new();
        b.write_bytes(PhysAddr(0x5000), &[0; 16]).unwrap();
        assert_eq!(a, b);
        b.write_bytes(PhysAddr(0x5000), &[1]).unwrap();
        assert_ne!(a, b);
    }

    proptest! {
        #[test]
        fn interleaved_access_matches_flat_array(
            ops in proptest::collection::vec((0usize..0x3000, proptest::collection::vec(any::<u8>(), 0..300), any::<bool>()), 1..60)
        ) {
            // Window of three pages starting mid-page.
            const BASE: u64 = 0x6000_0800;
            let mut flat = vec![0u8; 0x3200];
            let mut mem = PhysMemory::new();
            for (off, data, is_write) in ops {
                let pa = PhysAddr(BASE + off as u64);
                if is_write {
                    mem.write_bytes(pa, &data).unwrap();
                    flat[off..off + data.len()].copy_from_slice(&data);
                } else {
                    let got = mem.read_bytes(pa, data.len()).unwrap();
                    prop_assert_eq!(&got[..], &flat[off..off + data.len()]);
                }
            }
            prop_assert_eq!(mem.read_bytes(PhysAddr(BASE), flat.len()).unwrap(), flat);
        }
    }
}
