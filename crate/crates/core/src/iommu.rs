// SPDX-License-Identifier: Apache-2.0

//! Devices, groups and domains in the shape of the Linux IOMMU API.
//!
//! Every registered device starts in its own group. A domain owns at most
//! one context bank, claimed when its first group is attached and released
//! when its last group detaches.
//!
//! Attaching programs the bank in one of two ways. A domain whose `ttbr`
//! is zero gets a table allocated and owned by the SMMU, with T0SZ 0x10 and
//! PASize 0b101. A domain given an external root (a process page table)
//! points TTBR0 at it and, unless disabled, overrides T0SZ to 0x19 and
//! PASize to 0b010 so the bank matches the processor's TCR.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use thiserror::Error;

use crate::context_bank::{
    BankError, DEFAULT_PASIZE, DEFAULT_T0SZ, PROCESS_PASIZE, PROCESS_T0SZ,
};
use crate::phys_mem::{MemError, PhysAddr, PhysMemory, PAGE_SIZE};
use crate::smmu::SmmuState;
use crate::stream_mapping::{InstCfg, S2cr, Smr, StreamError, StreamId};
use crate::trace::TraceSink;
use crate::translation_table::{map_page, TableError, VirtAddr, WalkConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroupId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DomainId(pub usize);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IommuError {
    #[error("device {0} is already registered")]
    DuplicateDevice(String),
    #[error("unknown device {0}")]
    UnknownDevice(String),
    #[error("unknown group {0:?}")]
    UnknownGroup(GroupId),
    #[error("unknown domain {0:?}")]
    UnknownDomain(DomainId),
    #[error("group {0:?} is already attached to a domain")]
    GroupBusy(GroupId),
    #[error("group {0:?} is not attached to this domain")]
    NotAttached(GroupId),
    #[error("domain {0:?} already has a programmed context bank")]
    AlreadyAttached(DomainId),
    #[error("domain {0:?} has no context bank or table yet")]
    DomainNotAttached(DomainId),
    #[error("domain {0:?} uses an external table; map through its owner")]
    ExternalTableReadOnly(DomainId),
    #[error("mapping size {0:#x} is not a positive multiple of 4 KiB")]
    MisalignedSize(u64),
    #[error("no free context bank")]
    NoFreeBank,
    #[error("no free stream mapping entry")]
    NoFreeStreamEntry,
    #[error(transparent)]
    Bank(BankError),
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Mem(#[from] MemError),
}

impl From<BankError> for IommuError {
    fn from(e: BankError) -> Self {
        match e {
            BankError::NoFreeBank => Self::NoFreeBank,
            other => Self::Bank(other),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IommuDevice {
    pub name: String,
    pub stream_id: StreamId,
    pub group: GroupId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IommuGroup {
    pub id: GroupId,
    pub members: Vec<String>,
    pub attached: Option<DomainId>,
    /// Stream mapping entries programmed for the members while attached.
    stream_entries: Vec<usize>,
}

impl IommuGroup {
    pub fn stream_entries(&self) -> &[usize] {
        &self.stream_entries
    }
}

/// Access flags accepted by [`IommuRegistry::iommu_map`]; not enforced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MapFlags {
    pub read: bool,
    pub write: bool,
}

impl MapFlags {
    pub const READ_WRITE: Self = Self { read: true, write: true };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MappingRecord {
    pub va: VirtAddr,
    pub pa: PhysAddr,
    pub size: u64,
    pub flags: MapFlags,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IommuDomain {
    pub id: DomainId,
    /// Root of an external table; zero selects a table owned by the SMMU.
    pub ttbr: PhysAddr,
    pub bank: Option<usize>,
    pub internal_cfg: Option<WalkConfig>,
    /// Apply the processor-matching T0SZ/PASize when `ttbr` is external.
    pub tcr_override: bool,
    /// INSTCFG written into the S2CRs of attached streams.
    pub instcfg: InstCfg,
    groups: Vec<GroupId>,
    mappings: Vec<MappingRecord>,
}

impl IommuDomain {
    pub fn groups(&self) -> &[GroupId] {
        &self.groups
    }

    pub fn mappings(&self) -> &[MappingRecord] {
        &self.mappings
    }
}

#[derive(Debug, Clone, Default)]
pub struct IommuRegistry {
    devices: Vec<IommuDevice>,
    groups: Vec<IommuGroup>,
    domains: Vec<IommuDomain>,
}

impl IommuRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn devices(&self) -> &[IommuDevice] {
        &self.devices
    }

    pub fn groups(&self) -> &[IommuGroup] {
        &self.groups
    }

    pub fn domains(&self) -> &[IommuDomain] {
        &self.domains
    }

    pub fn device(&self, name: &str) -> Option<&IommuDevice> {
        self.devices.iter().find(|d| d.name == name)
    }

    pub fn group(&self, id: GroupId) -> Option<&IommuGroup> {
        self.groups.get(id.0)
    }

    pub fn domain(&self, id: DomainId) -> Option<&IommuDomain> {
        self.domains.get(id.0)
    }

    fn domain_mut(&mut self, id: DomainId) -> Result<&mut IommuDomain, IommuError> {
        self.domains.get_mut(id.0).ok_or(IommuError::UnknownDomain(id))
    }

    /// Registers a device in a new singleton group.
    pub fn register_device(
        &mut self,
        name: &str,
        stream_id: StreamId,
    ) -> Result<&IommuDevice, IommuError> {
        if self.device(name).is_some() {
            return Err(IommuError::DuplicateDevice(name.to_string()));
        }
        let group = GroupId(self.groups.len());
        self.groups.push(IommuGroup {
            id: group,
            members: alloc::vec![name.to_string()],
            attached: None,
            stream_entries: Vec::new(),
        });
        self.devices.push(IommuDevice { name: name.to_string(), stream_id, group });
        Ok(self.devices.last().expect("just pushed"))
    }

    /// Group of a registered device.
    pub fn group_get(&self, device: &str) -> Result<GroupId, IommuError> {
        self.device(device)
            .map(|d| d.group)
            .ok_or_else(|| IommuError::UnknownDevice(device.to_string()))
    }

    pub fn domain_alloc(&mut self) -> DomainId {
        let id = DomainId(self.domains.len());
        self.domains.push(IommuDomain {
            id,
            ttbr: PhysAddr(0),
            bank: None,
            internal_cfg: None,
            tcr_override: true,
            instcfg: InstCfg::Data,
            groups: Vec::new(),
            mappings: Vec::new(),
        });
        id
    }

    /// Points the domain at an external table. Zero restores the default.
    pub fn set_external_table(&mut self, domain: DomainId, root: PhysAddr) -> Result<(), IommuError> {
        let d = self.domain_mut(domain)?;
        if d.bank.is_some() {
            return Err(IommuError::AlreadyAttached(domain));
        }
        d.ttbr = root;
        Ok(())
    }

    pub fn set_tcr_override(&mut self, domain: DomainId, enable: bool) -> Result<(), IommuError> {
        self.domain_mut(domain)?.tcr_override = enable;
        Ok(())
    }

    pub fn set_instcfg(&mut self, domain: DomainId, instcfg: InstCfg) -> Result<(), IommuError> {
        self.domain_mut(domain)?.instcfg = instcfg;
        Ok(())
    }

    pub fn attach_group<S: TraceSink>(
        &mut self,
        smmu: &mut SmmuState<S>,
        mem: &mut PhysMemory,
        domain: DomainId,
        group: GroupId,
    ) -> Result<usize, IommuError> {
        let g = self.groups.get(group.0).ok_or(IommuError::UnknownGroup(group))?;
        if g.attached.is_some() {
            return Err(IommuError::GroupBusy(group));
        }
        let sids: Vec<StreamId> = g
            .members
            .iter()
            .filter_map(|m| self.device(m).map(|d| d.stream_id))
            .collect();
        let free = smmu.streams().entries().iter().filter(|(smr, _)| !smr.valid).count();
        if free < sids.len() {
            return Err(IommuError::NoFreeStreamEntry);
        }

        let d = self.domains.get_mut(domain.0).ok_or(IommuError::UnknownDomain(domain))?;
        let bank = match d.bank {
            Some(bank) => bank,
            None => {
                let bank = smmu.banks_mut().allocate_bank()?;
                if let Err(e) = program_domain_bank(d, smmu, mem, bank) {
                    smmu.banks_mut().release_bank(bank)?;
                    return Err(e);
                }
                d.bank = Some(bank);
                bank
            }
        };
        let instcfg = d.instcfg;

        let mut entries = Vec::with_capacity(sids.len());
        for sid in sids {
            let n = smmu.streams().first_free().ok_or(IommuError::NoFreeStreamEntry)?;
            smmu.streams_mut()
                .program_entry(n, Smr::exact(sid), S2cr::translate(bank as u8, instcfg))?;
            entries.push(n);
        }
        smmu.tlb_invalidate_all();

        d.groups.push(group);
        let g = &mut self.groups[group.0];
        g.attached = Some(domain);
        g.stream_entries = entries;
        Ok(bank)
    }

    pub fn detach_group<S: TraceSink>(
        &mut self,
        smmu: &mut SmmuState<S>,
        domain: DomainId,
        group: GroupId,
    ) -> Result<(), IommuError> {
        let g = self.groups.get_mut(group.0).ok_or(IommuError::UnknownGroup(group))?;
        if g.attached != Some(domain) {
            return Err(IommuError::NotAttached(group));
        }
        for n in g.stream_entries.drain(..) {
            smmu.streams_mut().invalidate_entry(n)?;
        }
        g.attached = None;

        let d = self.domains.get_mut(domain.0).ok_or(IommuError::UnknownDomain(domain))?;
        d.groups.retain(|&x| x != group);
        if d.groups.is_empty() {
            if let Some(bank) = d.bank.take() {
                smmu.banks_mut().release_bank(bank)?;
            }
        }
        smmu.tlb_invalidate_all();
        Ok(())
    }

    /// Maps `size` bytes of consecutive pages into the domain's own table.
    pub fn iommu_map(
        &mut self,
        mem: &mut PhysMemory,
        domain: DomainId,
        va: VirtAddr,
        pa: PhysAddr,
        size: u64,
        flags: MapFlags,
    ) -> Result<(), IommuError> {
        let d = self.domain_mut(domain)?;
        if d.ttbr.0 != 0 {
            return Err(IommuError::ExternalTableReadOnly(domain));
        }
        let cfg = d.internal_cfg.ok_or(IommuError::DomainNotAttached(domain))?;
        if size == 0 || !size.is_multiple_of(PAGE_SIZE) {
            return Err(IommuError::MisalignedSize(size));
        }
        for off in (0..size).step_by(PAGE_SIZE as usize) {
            map_page(mem, &cfg, va.add(off), pa.add(off))?;
        }
        d.mappings.push(MappingRecord { va, pa, size, flags });
        Ok(())
    }
}

fn program_domain_bank<S: TraceSink>(
    d: &mut IommuDomain,
    smmu: &mut SmmuState<S>,
    mem: &mut PhysMemory,
    bank: usize,
) -> Result<(), IommuError> {
    let banks = smmu.banks_mut();
    if d.ttbr.0 == 0 {
        // A domain keeps its table across detach/attach cycles.
        let root = match d.internal_cfg {
            Some(cfg) => cfg.root(),
            None => mem.alloc_table_page()?,
        };
        let cfg = banks.program_bank(bank, root, DEFAULT_T0SZ, DEFAULT_PASIZE)?;
        d.internal_cfg = Some(cfg);
    } else {
        let (t0sz, pasize) = if d.tcr_override {
            (PROCESS_T0SZ, PROCESS_PASIZE)
        } else {
            (DEFAULT_T0SZ, DEFAULT_PASIZE)
        };
        banks.program_bank(bank, d.ttbr, t0sz, pasize)?;
    }
    banks.set_enabled(bank, true)?;
    Ok(())
}
