// SPDX-License-Identifier: Apache-2.0

use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use smmusim::bindings::{dma_nodes, is_channel_enabled, resolve_masters, MASTERS_PROP};
use smmusim::{parse_dts, run_file};

#[derive(Parser)]
#[command(name = "smmusim", version, about = "SMMU scenario runner")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario script.
    Run {
        script: PathBuf,
        /// Write trace records to this file instead of standard output.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Print nothing on standard output.
        #[arg(long)]
        quiet: bool,
    },
    /// Device-tree source tools.
    Dts {
        #[command(subcommand)]
        command: DtsCmd,
    },
}

#[derive(Subcommand)]
enum DtsCmd {
    /// Parse a file and report master bindings, disagreements and channel state.
    Check { file: PathBuf },
}

fn run(script: PathBuf, trace: Option<PathBuf>, quiet: bool) -> io::Result<u8> {
    let report = match run_file(&script) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("{}: {e}", script.display());
            eprintln!("{}", smmusim::script::USAGE);
            return Ok(2);
        }
    };
    let mut out = io::stdout().lock();
    match trace {
        Some(path) => {
            let mut text = report.trace.join("\n");
            if !text.is_empty() {
                text.push('\n');
            }
            fs::write(path, text)?;
            if !quiet {
                for n in &report.notes {
                    writeln!(out, "# {}", n.text)?;
                }
            }
        }
        None if !quiet => {
            for line in report.merged() {
                writeln!(out, "{line}")?;
            }
        }
        None => {}
    }
    if let Some(e) = &report.error {
        eprintln!("{}: error: {e}", script.display());
    }
    for f in &report.failures {
        eprintln!("{}: assertion failed at line {}: {}", script.display(), f.line, f.message);
    }
    if report.assertions > 0 || !report.passed() {
        eprintln!(
            "{}: {} of {} assertions passed",
            script.display(),
            report.assertions - report.failures.len(),
            report.assertions
        );
    }
    Ok(report.exit_code() as u8)
}

fn dts_check(file: PathBuf) -> io::Result<u8> {
    let text = match fs::read_to_string(&file) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("{}: {e}", file.display());
            return Ok(1);
        }
    };
    let root = match parse_dts(&text) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("{}:{e}", file.display());
            return Ok(2);
        }
    };
    let mut out = io::stdout().lock();
    let nodes = root.descendants().count() - 1;
    let phandles = root.descendants().filter(|n| n.phandle.is_some()).count();
    writeln!(out, "{}: {nodes} nodes, {phandles} phandles", file.display())?;

    let mut status = 0;
    if root.find_with(MASTERS_PROP).is_some() {
        match resolve_masters(&root) {
            Ok(res) => {
                writeln!(out, "{} master bindings", res.bindings.len())?;
                for b in &res.bindings {
                    let node = root.find_by_phandle(b.device_phandle).map_or("?", |n| n.name.as_str());
                    writeln!(
                        out,
                        "  phandle {:#x} sid {:#06x} {node}",
                        b.device_phandle,
                        b.stream_id.value()
                    )?;
                }
                for d in &res.diagnostics {
                    writeln!(out, "warning: {d}")?;
                }
            }
            Err(e) => {
                eprintln!("{}: {e}", file.display());
                status = 1;
            }
        }
    }
    for node in dma_nodes(&root) {
        let state = if is_channel_enabled(node) {
            "enabled".to_string()
        } else {
            let mut why = Vec::new();
            if node.value("status").is_some() && node.string("status") != Some("okay") {
                why.push("status is not \"okay\"");
            }
            if !node.has("clock-names") {
                why.push("no clock-names");
            }
            if !node.has("clocks") {
                why.push("no clocks");
            }
            format!("disabled ({})", why.join(", "))
        };
        writeln!(out, "{}: {state}", node.name)?;
    }
    Ok(status)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Run { script, trace, quiet } => run(script, trace, quiet),
        Cmd::Dts { command: DtsCmd::Check { file } } => dts_check(file),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("smmusim: {e}");
            ExitCode::from(1)
        }
    }
}
