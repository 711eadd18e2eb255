// SPDX-License-Identifier: Apache-2.0

//! Host-side tooling around `smmu-core`: a device-tree source reader,
//! master-binding resolution, and the scenario script runner.

pub mod bindings;
pub mod dts;
pub mod runner;
pub mod script;

pub use bindings::{is_channel_enabled, resolve_masters, Diagnostic, MasterBinding};
pub use dts::{parse_dts, DtsNode, DtsProperty, ParseError, PropValue};
pub use runner::{run_file, RunReport, Runner};
pub use script::{parse_script, Command, Script, ScriptError};
