//! Analytic completion time of a pipelined, placed layer chain.
//!
//! A placement is decomposed into compute stages (one per segment) and
//! transmit stages (one per host crossing). Each stage serves one frame at a
//! time in FIFO order, so a chunk of `n` frames completes after
//! `sum(L_k) + (n - 1) * max(L_k)`.

use serde::Serialize;
use thiserror::Error;

use crate::model::{DeviceId, HostId, ModelError, NetworkProfile, Placement, ResourceGraph};
use crate::scalar::{Nanos, TimeScalar};
use crate::shape::LayerSignature;

/// Per-boundary decryption cost, 2.5 ms.
pub const DEFAULT_CRYPTO_OVERHEAD: Nanos = 2_500_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("no execution time for layer {layer} on {device}")]
    MissingExecTime { layer: usize, device: DeviceId },
    #[error("no bandwidth between hosts {from} and {to}")]
    MissingBandwidth { from: HostId, to: HostId },
    #[error("no shape signature for layer {0}")]
    MissingSignature(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum StageKind {
    Compute {
        device: DeviceId,
        first: usize,
        last: usize,
    },
    Transmit {
        from: HostId,
        to: HostId,
        bytes: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage<T = Nanos> {
    pub kind: StageKind,
    pub latency: T,
}

impl<T> Stage<T> {
    pub fn is_compute(&self) -> bool {
        matches!(self.kind, StageKind::Compute { .. })
    }

    /// Device name for compute stages, `from->to` for transmit stages.
    pub fn label(&self) -> String {
        match &self.kind {
            StageKind::Compute { device, .. } => device.to_string(),
            StageKind::Transmit { from, to, .. } => format!("{from}->{to}"),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            StageKind::Compute { .. } => "compute",
            StageKind::Transmit { .. } => "transmit",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StagePlan<T = Nanos> {
    pub stages: Vec<Stage<T>>,
    /// Charged to a compute stage for each boundary it receives on a trusted device.
    pub boundary_crypto_overhead: T,
}

impl<T: TimeScalar> StagePlan<T> {
    /// Compute-only plan with the given latencies, one synthetic device per stage.
    pub fn from_latencies(latencies: &[T]) -> Self {
        let stages = latencies
            .iter()
            .enumerate()
            .map(|(i, &latency)| Stage {
                kind: StageKind::Compute {
                    device: DeviceId(format!("S{}", i + 1)),
                    first: i + 1,
                    last: i + 1,
                },
                latency,
            })
            .collect();
        StagePlan {
            stages,
            boundary_crypto_overhead: T::zero(),
        }
    }

    pub fn latencies(&self) -> impl Iterator<Item = T> + '_ {
        self.stages.iter().map(|s| s.latency)
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    /// Structural check: non-empty, compute at both ends, no two transmits in a row.
    pub fn is_well_formed(&self) -> bool {
        let (Some(first), Some(last)) = (self.stages.first(), self.stages.last()) else {
            return false;
        };
        first.is_compute()
            && last.is_compute()
            && self.stages.windows(2).all(|w| w[0].is_compute() || w[1].is_compute())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostParams {
    pub crypto_overhead: Nanos,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams {
            crypto_overhead: DEFAULT_CRYPTO_OVERHEAD,
        }
    }
}

/// Splits a placement into pipeline stages.
///
/// Inter-host boundaries get a transmit stage carrying the output of the
/// last layer before the boundary. Intra-host boundaries are free unless
/// the graph sets an intra-host bandwidth. A compute stage on a trusted
/// device pays `crypto_overhead` when it receives data from another segment.
pub fn decompose<T: TimeScalar>(
    p: &Placement,
    graph: &ResourceGraph,
    signatures: &[LayerSignature],
    net: &NetworkProfile,
    params: &CostParams,
) -> Result<StagePlan<T>, CostError> {
    p.validate(net.len())?;
    let overhead = T::from_nanos(params.crypto_overhead);
    let mut stages = Vec::with_capacity(2 * p.segments().len());
    let mut prev: Option<(&HostId, usize)> = None;

    for seg in p.segments() {
        let device = graph
            .device(&seg.device)
            .ok_or_else(|| ModelError::UnknownDevice(seg.device.clone()))?;

        if let Some((prev_host, boundary_layer)) = prev {
            let bytes = signatures
                .get(boundary_layer - 1)
                .ok_or(CostError::MissingSignature(boundary_layer))?
                .output_bytes;
            let bandwidth =
                if prev_host == &device.host {
                    graph.intra_host_bandwidth
                } else {
                    Some(graph.bandwidth_between(prev_host, &device.host).ok_or_else(|| {
                        CostError::MissingBandwidth {
                            from: prev_host.clone(),
                            to: device.host.clone(),
                        }
                    })?)
                };
            if let Some(bw) = bandwidth {
                stages.push(Stage {
                    kind: StageKind::Transmit {
                        from: prev_host.clone(),
                        to: device.host.clone(),
                        bytes,
                    },
                    latency: T::from_seconds(bytes as f64 / bw),
                });
            }
        }

        let mut latency = T::zero();
        for layer in seg.first..=seg.last {
            let ns = net
                .exec_time(layer, &seg.device)
                .ok_or_else(|| CostError::MissingExecTime {
                    layer,
                    device: seg.device.clone(),
                })?;
            latency = latency + T::from_nanos(ns);
        }
        if prev.is_some() && device.trusted {
            latency = latency + overhead;
        }
        stages.push(Stage {
            kind: StageKind::Compute {
                device: seg.device.clone(),
                first: seg.first,
                last: seg.last,
            },
            latency,
        });
        prev = Some((&device.host, seg.last));
    }

    Ok(StagePlan {
        stages,
        boundary_crypto_overhead: overhead,
    })
}

/// Latency of one frame through every stage.
pub fn single_frame_latency<T: TimeScalar>(plan: &StagePlan<T>) -> T {
    plan.latencies().sum()
}

/// Index and latency of the slowest stage; the lowest index wins ties.
pub fn bottleneck<T: TimeScalar>(plan: &StagePlan<T>) -> (usize, T) {
    let mut best = (0, T::zero());
    for (i, l) in plan.latencies().enumerate() {
        if i == 0 || l > best.1 {
            best = (i, l);
        }
    }
    best
}

/// `sum(L_k) + (n - 1) * max(L_k)` for a chunk of `frames >= 1`.
pub fn chunk_completion<T: TimeScalar>(plan: &StagePlan<T>, frames: u64) -> T {
    debug_assert!(frames >= 1, "a chunk holds at least one frame");
    let (_, slowest) = bottleneck(plan);
    single_frame_latency(plan) + T::from_count(frames.saturating_sub(1)) * slowest
}
