// SPDX-License-Identifier: Apache-2.0

//! SMMU master bindings and DMA channel state read from a parsed tree.

use std::fmt;

use smmu_core::StreamId;
use thiserror::Error;

use crate::dts::{DtsNode, PropValue};

pub const MASTERS_PROP: &str = "mmu-masters";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MasterBinding {
    pub device_phandle: u32,
    pub stream_id: StreamId,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BindingError {
    #[error("no node carries an mmu-masters property")]
    NoSmmuNode,
    #[error("mmu-masters is not a cell list of (phandle, stream id) pairs")]
    MalformedMasters,
    #[error("mmu-masters entry {index}: stream id {value:#x} does not fit in 15 bits")]
    StreamIdOutOfRange { index: usize, value: u32 },
    #[error("mmu-masters entry {index}: phandle {phandle:#x} matches no node")]
    UnresolvedPhandle { index: usize, phandle: u32 },
}

/// Non-fatal findings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Diagnostic {
    /// The device's own `iommus` stream id differs from its `mmu-masters`
    /// entry. The `mmu-masters` value is the one used.
    IommusMismatch { node: String, phandle: u32, iommus: u32, masters: u32 },
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::IommusMismatch { node, phandle, iommus, masters } => write!(
                f,
                "{node} (phandle {phandle:#x}): iommus stream id {iommus:#x} disagrees with \
                 mmu-masters {masters:#x}; using {masters:#x}"
            ),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Resolution {
    pub bindings: Vec<MasterBinding>,
    pub diagnostics: Vec<Diagnostic>,
}

/// Reads the (phandle, StreamID) pairs of the first node with
/// `mmu-masters`, in listing order.
pub fn resolve_masters(root: &DtsNode) -> Result<Resolution, BindingError> {
    let smmu = root.find_with(MASTERS_PROP).ok_or(BindingError::NoSmmuNode)?;
    let cells = match smmu.value(MASTERS_PROP) {
        Some(PropValue::Cells(c)) if c.len() % 2 == 0 => c.as_slice(),
        _ => return Err(BindingError::MalformedMasters),
    };

    let mut out = Resolution::default();
    for (index, pair) in cells.chunks_exact(2).enumerate() {
        let (phandle, value) = (pair[0], pair[1]);
        let stream_id = StreamId::new(value)
            .map_err(|_| BindingError::StreamIdOutOfRange { index, value })?;
        let dev = root
            .find_by_phandle(phandle)
            .ok_or(BindingError::UnresolvedPhandle { index, phandle })?;
        if let Some(&[_, iommus, ..]) = dev.cells("iommus") {
            if iommus != value {
                out.diagnostics.push(Diagnostic::IommusMismatch {
                    node: dev.name.clone(),
                    phandle,
                    iommus,
                    masters: value,
                });
            }
        }
        out.bindings.push(MasterBinding { device_phandle: phandle, stream_id });
    }
    Ok(out)
}

/// A channel is usable when its status is absent or `"okay"` and it
/// declares both `clock-names` and `clocks`.
pub fn is_channel_enabled(node: &DtsNode) -> bool {
    let status_ok = node.value("status").is_none() || node.string("status") == Some("okay");
    status_ok && node.has("clock-names") && node.has("clocks")
}

/// Every `dma@...` node in pre-order.
pub fn dma_nodes(root: &DtsNode) -> impl Iterator<Item = &DtsNode> {
    root.descendants().filter(|n| n.base_name() == "dma")
}
