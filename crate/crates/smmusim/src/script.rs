// SPDX-License-Identifier: Apache-2.0

//! Scenario script grammar: one command per line, `#` starts a comment.
//!
//! Addresses, data words, stream ids and register offsets are hexadecimal
//! with an optional `0x` prefix. Sizes, lengths and bit counts are decimal
//! unless written with `0x`.

use std::path::PathBuf;

use smmu_core::stream_mapping::InstCfg;
use smmu_core::{HpcPort, UnmatchedPolicy};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultClass {
    Global,
    Context,
}

impl FaultClass {
    pub fn tag(self) -> &'static str {
        match self {
            Self::Global => "GFAULT",
            Self::Context => "CFAULT",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BankExpectation {
    pub t0sz: Option<u8>,
    pub pasize: Option<u8>,
    pub ttbr: Option<u64>,
    pub enabled: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Command {
    LoadDts(PathBuf),
    Policy(UnmatchedPolicy),
    Smmu { enable: bool },
    Register { device: String, stream_id: u32 },
    WritePhys { pa: u64, value: u32 },
    ReadPhys { pa: u64 },
    ExpectPhys { pa: u64, value: u32 },
    DomainAlloc(String),
    DomainExternal { domain: String, table: String },
    DomainTcrOverride { domain: String, enable: bool },
    DomainInstCfg { domain: String, instcfg: InstCfg },
    ProcessTable { name: String, ia_bits: u8, maps: Vec<(u64, u64)> },
    Attach { domain: String, device: String },
    Detach { domain: String, device: String },
    Map { domain: String, va: u64, pa: u64, size: u64 },
    Dma { channel: String, src: u64, dst: u64, len: usize },
    PlPort(HpcPort),
    PlSet { offset: u64, value: u32 },
    PlTrigger,
    TlbFlush,
    ExpectFault { class: FaultClass, reason: Option<String> },
    ExpectXlate { pa: u64 },
    ExpectBypass { pa: u64 },
    ExpectBank { bank: usize, want: BankExpectation },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Line {
    pub number: usize,
    pub command: Command,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Script {
    pub name: String,
    pub lines: Vec<Line>,
}

impl Script {
    /// Number of `expect-*` commands.
    pub fn assertion_count(&self) -> usize {
        self.lines
            .iter()
            .filter(|l| {
                matches!(
                    l.command,
                    Command::ExpectPhys { .. }
                        | Command::ExpectFault { .. }
                        | Command::ExpectXlate { .. }
                        | Command::ExpectBypass { .. }
                        | Command::ExpectBank { .. }
                )
            })
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct ScriptError {
    pub line: usize,
    pub message: String,
}

pub const USAGE: &str = "\
commands:
  load-dts <file>
  policy unmatched <bypass|fault>
  smmu <enable|disable>
  register <device> <hexsid>
  write-phys <hexaddr> <hexword32>
  read-phys <hexaddr>
  expect-phys <hexaddr> <hexword32>
  domain <name> alloc
  domain <name> external <process-table>
  domain <name> tcr-override <on|off>
  domain <name> instcfg <data|instruction|default>
  process-table <name> ia <bits> map <hexva> <hexpa> [<hexva> <hexpa> ...]
  attach <domain> <device>
  detach <domain> <device>
  map <domain> <hexva> <hexpa> <size>
  dma <channel> <hexsrc> <hexdst> <len>
  pl port <hpc0|hpc1>
  pl set <hexoffset> <hexword32>
  pl trigger
  tlb flush
  expect-fault <GFAULT|CFAULT> [reason]
  expect-xlate <hexpa>
  expect-bypass <hexpa>
  expect-bank <cb> [t0sz <hex>] [pasize <0bbits|hex>] [ttbr <hex>] [enabled <0|1>]";

pub fn parse_hex(s: &str) -> Option<u64> {
    let digits = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")).unwrap_or(s);
    let digits = digits.replace('_', "");
    if digits.is_empty() {
        return None;
    }
    u64::from_str_radix(&digits, 16).ok()
}

pub fn parse_count(s: &str) -> Option<u64> {
    match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(_) => parse_hex(s),
        None => s.replace('_', "").parse().ok(),
    }
}

struct Args<'a> {
    words: std::slice::Iter<'a, &'a str>,
}

impl<'a> Args<'a> {
    fn next(&mut self, what: &str) -> Result<&'a str, String> {
        self.words.next().copied().ok_or_else(|| format!("missing {what}"))
    }

    fn hex(&mut self, what: &str) -> Result<u64, String> {
        let w = self.next(what)?;
        parse_hex(w).ok_or_else(|| format!("bad hex {what} '{w}'"))
    }

    fn word32(&mut self, what: &str) -> Result<u32, String> {
        let v = self.hex(what)?;
        u32::try_from(v).map_err(|_| format!("{what} {v:#x} does not fit in 32 bits"))
    }

    /// Small register field: `0b` binary or hex.
    fn field(&mut self, what: &str) -> Result<u8, String> {
        let w = self.next(what)?;
        let v = match w.strip_prefix("0b") {
            Some(bits) => u64::from_str_radix(bits, 2).ok(),
            None => parse_hex(w),
        };
        v.and_then(|v| u8::try_from(v).ok()).ok_or_else(|| format!("bad {what} '{w}'"))
    }

    fn count(&mut self, what: &str) -> Result<u64, String> {
        let w = self.next(what)?;
        parse_count(w).ok_or_else(|| format!("bad {what} '{w}'"))
    }

    fn keyword(&mut self, kw: &str) -> Result<(), String> {
        match self.next(kw)? {
            w if w == kw => Ok(()),
            w => Err(format!("expected '{kw}', found '{w}'")),
        }
    }

    fn end(&mut self) -> Result<(), String> {
        match self.words.next() {
            None => Ok(()),
            Some(w) => Err(format!("unexpected argument '{w}'")),
        }
    }

    fn peek(&self) -> Option<&'a str> {
        self.words.clone().next().copied()
    }
}

fn on_off(w: &str) -> Result<bool, String> {
    match w {
        "on" | "enable" => Ok(true),
        "off" | "disable" => Ok(false),
        _ => Err(format!("expected on|off, found '{w}'")),
    }
}

fn parse_command(words: &[&str]) -> Result<Command, String> {
    let (head, rest) = words.split_first().expect("caller skips blank lines");
    let mut a = Args { words: rest.iter() };
    let cmd = match *head {
        "load-dts" => Command::LoadDts(PathBuf::from(a.next("file")?)),
        "policy" => {
            a.keyword("unmatched")?;
            Command::Policy(match a.next("policy")? {
                "bypass" => UnmatchedPolicy::Bypass,
                "fault" => UnmatchedPolicy::Fault,
                w => return Err(format!("expected bypass|fault, found '{w}'")),
            })
        }
        "smmu" => Command::Smmu { enable: on_off(a.next("enable|disable")?)? },
        "register" => {
            let device = a.next("device")?.to_string();
            let sid = a.hex("stream id")?;
            let stream_id = u32::try_from(sid).map_err(|_| format!("stream id {sid:#x} too large"))?;
            Command::Register { device, stream_id }
        }
        "write-phys" => Command::WritePhys { pa: a.hex("address")?, value: a.word32("value")? },
        "read-phys" => Command::ReadPhys { pa: a.hex("address")? },
        "expect-phys" => Command::ExpectPhys { pa: a.hex("address")?, value: a.word32("value")? },
        "domain" => {
            let domain = a.next("domain name")?.to_string();
            match a.next("domain action")? {
                "alloc" => Command::DomainAlloc(domain),
                "external" => Command::DomainExternal { domain, table: a.next("process table")?.into() },
                "tcr-override" => Command::DomainTcrOverride { domain, enable: on_off(a.next("on|off")?)? },
                "instcfg" => Command::DomainInstCfg {
                    domain,
                    instcfg: match a.next("instcfg")? {
                        "data" => InstCfg::Data,
                        "instruction" => InstCfg::Instruction,
                        "default" => InstCfg::Default,
                        w => return Err(format!("expected data|instruction|default, found '{w}'")),
                    },
                },
                w => return Err(format!("unknown domain action '{w}'")),
            }
        }
        "process-table" => {
            let name = a.next("table name")?.to_string();
            a.keyword("ia")?;
            let bits = a.count("input bits")?;
            let ia_bits = u8::try_from(bits).map_err(|_| format!("ia {bits} out of range"))?;
            a.keyword("map")?;
            let mut maps = Vec::new();
            while let Some(w) = a.peek() {
                if w == "map" {
                    a.next("map")?;
                    continue;
                }
                maps.push((a.hex("va")?, a.hex("pa")?));
            }
            if maps.is_empty() {
                return Err("process-table needs at least one va/pa pair".into());
            }
            Command::ProcessTable { name, ia_bits, maps }
        }
        "attach" => Command::Attach { domain: a.next("domain")?.into(), device: a.next("device")?.into() },
        "detach" => Command::Detach { domain: a.next("domain")?.into(), device: a.next("device")?.into() },
        "map" => Command::Map {
            domain: a.next("domain")?.into(),
            va: a.hex("va")?,
            pa: a.hex("pa")?,
            size: a.count("size")?,
        },
        "dma" => Command::Dma {
            channel: a.next("channel")?.into(),
            src: a.hex("source")?,
            dst: a.hex("destination")?,
            len: a.count("length")? as usize,
        },
        "pl" => match a.next("pl action")? {
            "port" => Command::PlPort(match a.next("port")? {
                "hpc0" | "HPC0" => HpcPort::Hpc0,
                "hpc1" | "HPC1" => HpcPort::Hpc1,
                w => return Err(format!("expected hpc0|hpc1, found '{w}'")),
            }),
            "set" => Command::PlSet { offset: a.hex("register offset")?, value: a.word32("value")? },
            "trigger" => Command::PlTrigger,
            w => return Err(format!("unknown pl action '{w}'")),
        },
        "tlb" => {
            a.keyword("flush")?;
            Command::TlbFlush
        }
        "expect-fault" => {
            let class = match a.next("fault class")? {
                "GFAULT" => FaultClass::Global,
                "CFAULT" => FaultClass::Context,
                w => return Err(format!("expected GFAULT|CFAULT, found '{w}'")),
            };
            let reason = a.words.next().map(|s| s.to_string());
            Command::ExpectFault { class, reason }
        }
        "expect-xlate" => Command::ExpectXlate { pa: a.hex("address")? },
        "expect-bypass" => Command::ExpectBypass { pa: a.hex("address")? },
        "expect-bank" => {
            let bank = a.count("context bank")? as usize;
            let mut want = BankExpectation::default();
            while let Some(key) = a.words.next() {
                match *key {
                    "t0sz" => want.t0sz = Some(a.field("t0sz")?),
                    "pasize" => want.pasize = Some(a.field("pasize")?),
                    "ttbr" => want.ttbr = Some(a.hex("ttbr")?),
                    "enabled" => want.enabled = Some(a.count("enabled")? != 0),
                    w => return Err(format!("unknown bank field '{w}'")),
                }
            }
            Command::ExpectBank { bank, want }
        }
        w => return Err(format!("unknown command '{w}'")),
    };
    a.end()?;
    Ok(cmd)
}

/// Parses a whole script. Nothing runs unless every line parses.
pub fn parse_script(name: &str, text: &str) -> Result<Script, ScriptError> {
    let mut lines = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let body = raw.split('#').next().unwrap_or("");
        let words: Vec<&str> = body.split_whitespace().collect();
        if words.is_empty() {
            continue;
        }
        let command = parse_command(&words).map_err(|message| ScriptError { line: i + 1, message })?;
        lines.push(Line { number: i + 1, command });
    }
    Ok(Script { name: name.to_string(), lines })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(line: &str) -> Command {
        parse_script("t", line).unwrap().lines.remove(0).command
    }

    fn err(line: &str) -> String {
        parse_script("t", line).unwrap_err().message
    }

    #[test]
    fn numbers() {
        assert_eq!(parse_hex("b0000030"), Some(0xb000_0030));
        assert_eq!(parse_hex("0xb000_0030"), Some(0xb000_0030));
        assert_eq!(parse_hex("0x"), None);
        assert_eq!(parse_count("4096"), Some(4096));
        assert_eq!(parse_count("0x1000"), Some(4096));
        assert_eq!(parse_count("10a"), None);
    }

    #[test]
    fn listing_lines() {
        assert_eq!(one("write-phys b0000044 0x1"), Command::WritePhys { pa: 0xb000_0044, value: 1 });
        assert_eq!(
            one("dma dma1chan0 0x70000000 0x70002000 4"),
            Command::Dma { channel: "dma1chan0".into(), src: 0x7000_0000, dst: 0x7000_2000, len: 4 }
        );
        assert_eq!(
            one("map d0 0x70002000 0x60002000 4096"),
            Command::Map { domain: "d0".into(), va: 0x7000_2000, pa: 0x6000_2000, size: 4096 }
        );
        assert_eq!(
            one("process-table user ia 39 map 0x1000 0x2000 0x3000 0x4000 map 0x5000 0x6000"),
            Command::ProcessTable {
                name: "user".into(),
                ia_bits: 39,
                maps: vec![(0x1000, 0x2000), (0x3000, 0x4000), (0x5000, 0x6000)],
            }
        );
        assert_eq!(
            one("expect-fault CFAULT translation-l0  # trailing comment"),
            Command::ExpectFault { class: FaultClass::Context, reason: Some("translation-l0".into()) }
        );
        assert_eq!(one("expect-fault GFAULT"), Command::ExpectFault { class: FaultClass::Global, reason: None });
        assert_eq!(
            one("expect-bank 0 t0sz 0x19 pasize 0b010"),
            Command::ExpectBank { bank: 0, want: BankExpectation { t0sz: Some(0x19), pasize: Some(0b010), ..Default::default() } }
        );
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(err("frobnicate").contains("unknown command"));
        assert!(err("write-phys 0x10").contains("missing value"));
        assert!(err("write-phys 0x10 0x100000000").contains("32 bits"));
        assert!(err("tlb flush now").contains("unexpected argument"));
        assert!(err("policy unmatched maybe").contains("bypass|fault"));
        assert!(err("process-table p ia 39 map 0x1000").contains("missing pa"));
        let e = parse_script("t", "# ok\n\ntlb flush\nbogus\n").unwrap_err();
        assert_eq!(e.line, 4);
    }

    #[test]
    fn empty_script() {
        let s = parse_script("e", "").unwrap();
        assert!(s.lines.is_empty());
        assert_eq!(s.assertion_count(), 0);
    }
}
