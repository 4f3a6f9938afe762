//! Privacy constraints on placements.
//!
//! C1 requires every layer on a trusted device. C2 lets a layer run on an
//! untrusted device only when the data it receives has a per-axis
//! resolution strictly below `delta`.

use serde::{Deserialize, Serialize};

use crate::model::{ModelError, Placement, ResourceGraph};
use crate::shape::LayerSignature;

pub const DEFAULT_DELTA: u32 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrivacyMode {
    /// Only all-trusted placements are admissible.
    C1Only,
    /// Untrusted devices may run layers whose input is below the threshold.
    C2Allowed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PrivacyPolicy {
    pub delta: u32,
    pub mode: PrivacyMode,
}

impl Default for PrivacyPolicy {
    fn default() -> Self {
        PrivacyPolicy {
            delta: DEFAULT_DELTA,
            mode: PrivacyMode::C2Allowed,
        }
    }
}

impl PrivacyPolicy {
    pub fn new(delta: u32, mode: PrivacyMode) -> Self {
        assert!(delta >= 1, "delta must be at least 1");
        PrivacyPolicy { delta, mode }
    }

    pub fn c1_only() -> Self {
        PrivacyPolicy {
            mode: PrivacyMode::C1Only,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LeakageReport {
    /// Largest input resolution (max axis) seen by an untrusted layer; 0 if none.
    pub max_similarity: u32,
    pub violating_layers: Vec<usize>,
}

impl LeakageReport {
    pub fn is_clean(&self) -> bool {
        self.violating_layers.is_empty()
    }
}

pub fn check_c1(p: &Placement, graph: &ResourceGraph) -> Result<bool, ModelError> {
    let mut all_trusted = true;
    for d in p.devices() {
        match graph.is_trusted(d) {
            Some(t) => all_trusted &= t,
            None => return Err(ModelError::UnknownDevice(d.clone())),
        }
    }
    Ok(all_trusted)
}

/// Devices missing from `graph` count as untrusted.
pub fn check_c2(
    p: &Placement,
    graph: &ResourceGraph,
    signatures: &[LayerSignature],
    policy: &PrivacyPolicy,
) -> LeakageReport {
    let mut report = LeakageReport::default();
    for seg in p.segments() {
        if graph.is_trusted(&seg.device).unwrap_or(false) {
            continue;
        }
        for layer in seg.first..=seg.last {
            let Some(sig) = layer.checked_sub(1).and_then(|i| signatures.get(i)) else {
                report.violating_layers.push(layer);
                continue;
            };
            let received = sig.input_shape.resolution();
            report.max_similarity = report.max_similarity.max(received.similarity());
            if !received.below(policy.delta) {
                report.violating_layers.push(layer);
            }
        }
    }
    report
}

pub fn admissible(p: &Placement, graph: &ResourceGraph, signatures: &[LayerSignature], policy: &PrivacyPolicy) -> bool {
    if check_c1(p, graph).unwrap_or(false) {
        return true;
    }
    policy.mode == PrivacyMode::C2Allowed && check_c2(p, graph, signatures, policy).is_clean()
}
