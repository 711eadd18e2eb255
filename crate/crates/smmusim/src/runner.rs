// SPDX-License-Identifier: Apache-2.0

//! Executes parsed scenario scripts against a fresh simulated system.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use smmu_core::dma::{DmaError, PL_DEFAULT_BASE};
use smmu_core::iommu::IommuError;
use smmu_core::phys_mem::MemError;
use smmu_core::stream_mapping::StreamError;
use smmu_core::translation_table::{build_process_table, TableError};
use smmu_core::{
    dma_transfer, standard_channels, DmaChannel, DomainId, IommuRegistry, MapFlags, Outcome,
    PhysAddr, PhysMemory, PlDmaIp, SmmuState, StreamId, VirtAddr, WalkConfig,
};
use thiserror::Error;

use crate::bindings::{dma_nodes, is_channel_enabled, resolve_masters, BindingError};
use crate::dts::{parse_dts, ParseError};
use crate::script::{BankExpectation, Command, FaultClass, Script};

#[derive(Debug, Error)]
pub enum RunErrorKind {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Dts { path: PathBuf, source: ParseError },
    #[error("{path}: {source}")]
    Bindings { path: PathBuf, source: BindingError },
    #[error("unknown {what} '{name}'")]
    Unknown { what: &'static str, name: String },
    #[error("{what} '{name}' already exists")]
    Duplicate { what: &'static str, name: String },
    #[error("device {0} changed stream id after it was first attached")]
    StreamIdChanged(String),
    #[error(transparent)]
    Iommu(#[from] IommuError),
    #[error(transparent)]
    Dma(#[from] DmaError),
    #[error(transparent)]
    Mem(#[from] MemError),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Stream(#[from] StreamError),
}

#[derive(Debug, Error)]
#[error("line {line}: {kind}")]
pub struct RunError {
    pub line: usize,
    pub kind: RunErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssertionFailure {
    pub line: usize,
    pub message: String,
}

/// Free-form console output, positioned after `after` trace records.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Note {
    pub after: usize,
    pub text: String,
}

#[derive(Debug, Default)]
pub struct RunReport {
    pub trace: Vec<String>,
    pub notes: Vec<Note>,
    pub failures: Vec<AssertionFailure>,
    pub assertions: usize,
    pub error: Option<RunError>,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.error.is_none() && self.failures.is_empty()
    }

    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            0
        } else {
            1
        }
    }

    /// Trace lines with notes interleaved at the point they were made.
    pub fn merged(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.trace.len() + self.notes.len());
        let mut notes = self.notes.iter().peekable();
        for (i, line) in self.trace.iter().enumerate() {
            while let Some(n) = notes.next_if(|n| n.after <= i) {
                out.push(format!("# {}", n.text));
            }
            out.push(line.clone());
        }
        out.extend(notes.map(|n| format!("# {}", n.text)));
        out
    }
}

/// Mutable simulation state for one script run.
pub struct Runner {
    base_dir: PathBuf,
    pub smmu: SmmuState,
    pub mem: PhysMemory,
    pub iommu: IommuRegistry,
    pub channels: Vec<DmaChannel>,
    /// Device name to StreamID, from defaults, `load-dts` and `register`.
    pub known: BTreeMap<String, StreamId>,
    domains: BTreeMap<String, DomainId>,
    tables: BTreeMap<String, WalkConfig>,
    pub pl: PlDmaIp,
    pub last: Option<Outcome>,
    notes: Vec<Note>,
    failures: Vec<AssertionFailure>,
}

impl Runner {
    /// `base_dir` resolves relative `load-dts` paths.
    pub fn new(base_dir: impl Into<PathBuf>) -> Self {
        let channels = standard_channels();
        let known = channels.iter().map(|c| (c.name.clone(), c.stream_id)).collect();
        Self {
            base_dir: base_dir.into(),
            smmu: SmmuState::new(),
            mem: PhysMemory::new(),
            iommu: IommuRegistry::new(),
            channels,
            known,
            domains: BTreeMap::new(),
            tables: BTreeMap::new(),
            pl: PlDmaIp::default(),
            last: None,
            notes: Vec::new(),
            failures: Vec::new(),
        }
    }

    fn note(&mut self, text: String) {
        self.notes.push(Note { after: self.smmu.sink().len(), text });
    }

    fn fail(&mut self, line: usize, message: String) {
        self.note(format!("FAIL line {line}: {message}"));
        self.failures.push(AssertionFailure { line, message });
    }

    fn domain(&self, name: &str) -> Result<DomainId, RunErrorKind> {
        self.domains
            .get(name)
            .copied()
            .ok_or_else(|| RunErrorKind::Unknown { what: "domain", name: name.into() })
    }

    fn channel(&self, name: &str) -> Result<&DmaChannel, RunErrorKind> {
        self.channels
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| RunErrorKind::Unknown { what: "DMA channel", name: name.into() })
    }

    fn read_word(&mut self, pa: u64) -> Result<u32, RunErrorKind> {
        if self.pl.decodes(PhysAddr(pa)) {
            return Ok(self.pl.read_reg(pa - self.pl.base.0)?);
        }
        Ok(self.mem.read_u32(PhysAddr(pa))?)
    }

    fn load_dts(&mut self, path: &Path) -> Result<(), RunErrorKind> {
        let path = if path.is_absolute() { path.to_path_buf() } else { self.base_dir.join(path) };
        let text = std::fs::read_to_string(&path)
            .map_err(|source| RunErrorKind::Io { path: path.clone(), source })?;
        let root = parse_dts(&text).map_err(|source| RunErrorKind::Dts { path: path.clone(), source })?;

        let mut masters = 0;
        if root.find_with(crate::bindings::MASTERS_PROP).is_some() {
            let res = resolve_masters(&root)
                .map_err(|source| RunErrorKind::Bindings { path: path.clone(), source })?;
            for d in &res.diagnostics {
                self.note(format!("dts: {d}"));
            }
            for b in &res.bindings {
                let node = root.find_by_phandle(b.device_phandle).expect("resolved above");
                let name = match self.channels.iter_mut().find(|c| Some(c.base.0) == node.reg_base()) {
                    Some(ch) if node.base_name() == "dma" => {
                        ch.stream_id = b.stream_id;
                        ch.name.clone()
                    }
                    _ => node.name.clone(),
                };
                self.known.insert(name, b.stream_id);
            }
            masters = res.bindings.len();
        }
        for node in dma_nodes(&root) {
            if let Some(ch) = self.channels.iter_mut().find(|c| Some(c.base.0) == node.reg_base()) {
                ch.enabled = is_channel_enabled(node);
            }
        }
        self.note(format!("loaded {}: {masters} masters", path.display()));
        Ok(())
    }

    fn attach(&mut self, domain: &str, device: &str) -> Result<(), RunErrorKind> {
        let dom = self.domain(domain)?;
        let sid = *self
            .known
            .get(device)
            .ok_or_else(|| RunErrorKind::Unknown { what: "device", name: device.into() })?;
        match self.iommu.device(device) {
            None => {
                self.iommu.register_device(device, sid)?;
            }
            Some(d) if d.stream_id != sid => return Err(RunErrorKind::StreamIdChanged(device.into())),
            Some(_) => {}
        }
        let group = self.iommu.group_get(device)?;
        let bank = self.iommu.attach_group(&mut self.smmu, &mut self.mem, dom, group)?;
        self.note(format!("attach {device} (sid {:#x}) to {domain}: cb {bank}", sid.value()));
        Ok(())
    }

    fn set_last(&mut self, outcome: Option<Outcome>) {
        if outcome.is_some() {
            self.last = outcome;
        }
    }

    fn check_bank(&mut self, line: usize, bank: usize, want: BankExpectation) {
        let Some(cb) = self.smmu.banks().bank(bank).cloned() else {
            return self.fail(line, format!("context bank {bank} does not exist"));
        };
        let mut wrong = Vec::new();
        if want.t0sz.is_some_and(|v| v != cb.t0sz) {
            wrong.push(format!("t0sz {:#x} (want {:#x})", cb.t0sz, want.t0sz.unwrap()));
        }
        if want.pasize.is_some_and(|v| v != cb.pasize) {
            wrong.push(format!("pasize {:#05b} (want {:#05b})", cb.pasize, want.pasize.unwrap()));
        }
        if want.ttbr.is_some_and(|v| v != cb.ttbr0.0) {
            wrong.push(format!("ttbr {:#x} (want {:#x})", cb.ttbr0.0, want.ttbr.unwrap()));
        }
        if want.enabled.is_some_and(|v| v != cb.enabled) {
            wrong.push(format!("enabled {} (want {})", cb.enabled, want.enabled.unwrap()));
        }
        if !wrong.is_empty() {
            self.fail(line, format!("cb {bank}: {}", wrong.join(", ")));
        }
    }

    fn check_outcome(&mut self, line: usize, what: &str, ok: impl FnOnce(&Outcome) -> bool) {
        match self.last {
            None => self.fail(line, format!("expected {what}, but no transaction has run")),
            Some(o) if ok(&o) => {}
            Some(o) => self.fail(line, format!("expected {what}, got {o}")),
        }
    }

    pub fn execute(&mut self, line: usize, cmd: &Command) -> Result<(), RunErrorKind> {
        match cmd {
            Command::LoadDts(path) => self.load_dts(path)?,
            Command::Policy(p) => self.smmu.unmatched_policy = *p,
            Command::Smmu { enable } => self.smmu.global_enable = *enable,
            Command::Register { device, stream_id } => {
                self.known.insert(device.clone(), StreamId::new(*stream_id)?);
            }
            Command::WritePhys { pa, value } => {
                if self.pl.decodes(PhysAddr(*pa)) {
                    let offset = pa - self.pl.base.0;
                    let r = self.pl.write_reg(&mut self.smmu, &mut self.mem, offset, *value)?;
                    self.set_last(r.map(|r| r.outcome));
                } else {
                    self.mem.write_u32(PhysAddr(*pa), *value)?;
                }
            }
            Command::ReadPhys { pa } => {
                let v = self.read_word(*pa)?;
                self.note(format!("read-phys {pa:#x} = {v:#010x}"));
            }
            Command::ExpectPhys { pa, value } => {
                let v = self.read_word(*pa)?;
                if v != *value {
                    self.fail(line, format!("phys {pa:#x} = {v:#010x}, expected {value:#010x}"));
                }
            }
            Command::DomainAlloc(name) => {
                if self.domains.contains_key(name) {
                    return Err(RunErrorKind::Duplicate { what: "domain", name: name.clone() });
                }
                let id = self.iommu.domain_alloc();
                self.domains.insert(name.clone(), id);
            }
            Command::ProcessTable { name, ia_bits, maps } => {
                if self.tables.contains_key(name) {
                    return Err(RunErrorKind::Duplicate { what: "process table", name: name.clone() });
                }
                let pairs: Vec<_> = maps.iter().map(|&(va, pa)| (VirtAddr(va), PhysAddr(pa))).collect();
                let cfg = build_process_table(&mut self.mem, *ia_bits, &pairs)?;
                self.note(format!(
                    "process table {name}: root {:#x}, ia {} oa {}",
                    cfg.root().0,
                    cfg.ia_bits(),
                    cfg.oa_bits()
                ));
                self.tables.insert(name.clone(), cfg);
            }
            Command::DomainExternal { domain, table } => {
                let dom = self.domain(domain)?;
                let cfg = self
                    .tables
                    .get(table)
                    .ok_or_else(|| RunErrorKind::Unknown { what: "process table", name: table.clone() })?;
                self.iommu.set_external_table(dom, cfg.root())?;
            }
            Command::DomainTcrOverride { domain, enable } => {
                let dom = self.domain(domain)?;
                self.iommu.set_tcr_override(dom, *enable)?;
            }
            Command::DomainInstCfg { domain, instcfg } => {
                let dom = self.domain(domain)?;
                self.iommu.set_instcfg(dom, *instcfg)?;
            }
            Command::Attach { domain, device } => self.attach(domain, device)?,
            Command::Detach { domain, device } => {
                let dom = self.domain(domain)?;
                let group = self.iommu.group_get(device)?;
                self.iommu.detach_group(&mut self.smmu, dom, group)?;
            }
            Command::Map { domain, va, pa, size } => {
                let dom = self.domain(domain)?;
                self.iommu.iommu_map(
                    &mut self.mem,
                    dom,
                    VirtAddr(*va),
                    PhysAddr(*pa),
                    *size,
                    MapFlags::READ_WRITE,
                )?;
            }
            Command::Dma { channel, src, dst, len } => {
                let ch = self.channel(channel)?.clone();
                let report =
                    dma_transfer(&mut self.smmu, &mut self.mem, &ch, VirtAddr(*src), VirtAddr(*dst), *len)?;
                if let Some(fault) = report.fault {
                    self.note(format!("dma {channel}: stopped after {} bytes: {fault}", report.bytes_copied));
                }
                self.set_last(report.last_outcome().copied());
            }
            Command::PlPort(port) => self.pl.port = *port,
            Command::PlSet { offset, value } => {
                let r = self.pl.write_reg(&mut self.smmu, &mut self.mem, *offset, *value)?;
                self.set_last(r.map(|r| r.outcome));
            }
            Command::PlTrigger => {
                let r = self.pl.trigger(&mut self.smmu, &mut self.mem)?;
                self.set_last(Some(r.outcome));
            }
            Command::TlbFlush => self.smmu.tlb_invalidate_all(),
            Command::ExpectFault { class, reason } => {
                let what = match reason {
                    Some(r) => format!("{} reason={r}", class.tag()),
                    None => class.tag().to_string(),
                };
                self.check_outcome(line, &what, |o| {
                    let class_ok = match class {
                        FaultClass::Global => matches!(o, Outcome::GlobalFault(_)),
                        FaultClass::Context => matches!(o, Outcome::ContextFault { .. }),
                    };
                    let reason_ok = match (reason, o.reason()) {
                        (None, _) => true,
                        (Some(want), Some(got)) => {
                            let got = got.to_string();
                            got == *want || got.starts_with(&format!("{want}-"))
                        }
                        (Some(_), None) => false,
                    };
                    class_ok && reason_ok
                });
            }
            Command::ExpectXlate { pa } => {
                self.check_outcome(line, &format!("XLATE pa={pa:#014x}"), |o| {
                    matches!(o, Outcome::Translated { pa: got, .. } if got.0 == *pa)
                });
            }
            Command::ExpectBypass { pa } => {
                self.check_outcome(line, &format!("BYPASS pa={pa:#014x}"), |o| {
                    *o == Outcome::Bypassed(PhysAddr(*pa))
                });
            }
            Command::ExpectBank { bank, want } => self.check_bank(line, *bank, *want),
        }
        Ok(())
    }

    /// Runs every line, stopping at the first runtime error. Assertion
    /// failures are collected and do not stop the run.
    pub fn run(mut self, script: &Script) -> RunReport {
        self.run_in_place(script)
    }

    /// Like [`Runner::run`], but keeps the final state inspectable.
    pub fn run_in_place(&mut self, script: &Script) -> RunReport {
        let mut error = None;
        for l in &script.lines {
            if let Err(kind) = self.execute(l.number, &l.command) {
                error = Some(RunError { line: l.number, kind });
                break;
            }
        }
        RunReport {
            trace: self.smmu.sink().lines().collect(),
            notes: std::mem::take(&mut self.notes),
            failures: std::mem::take(&mut self.failures),
            assertions: script.assertion_count(),
            error,
        }
    }
}

/// Reads, parses and runs a script file. `Err` means the script did not parse.
pub fn run_file(path: &Path) -> Result<RunReport, crate::script::ScriptError> {
    let text = std::fs::read_to_string(path).map_err(|e| crate::script::ScriptError {
        line: 0,
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    let name = path.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
    let script = crate::script::parse_script(&name, &text)?;
    let dir = path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
    Ok(Runner::new(dir).run(&script))
}

/// Default PL block base, re-exported for scripts that document it.
pub const PL_BASE: u64 = PL_DEFAULT_BASE;
