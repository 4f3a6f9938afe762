//! Devices, resource graphs, layer profiles and placements.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Nanos;
use crate::shape::{Resolution, TensorShape};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("network has no layers")]
    EmptyNetwork,
    #[error("layer at position {position} has index {found}; indices must be 1..M consecutive")]
    LayerIndex { position: usize, found: usize },
    #[error("layer {layer} has inputs {inputs:?}; only linear chains are supported (layer x must consume layer x-1)")]
    Branching { layer: usize, inputs: Vec<usize> },
    #[error("layer {layer}: {reason}")]
    InvalidLayer { layer: usize, reason: String },
    #[error("network frame shape must have every dimension >= 1")]
    InvalidFrame,
    #[error("bytes_per_element must be >= 1")]
    InvalidElementSize,
    #[error("a chunk holds at least one frame")]
    EmptyChunk,
    #[error("placement has no segments")]
    EmptyPlacement,
    #[error("segment {first}..{last} is empty or reversed")]
    EmptySegment { first: usize, last: usize },
    #[error("placement leaves layer {layer} uncovered")]
    CoverageGap { layer: usize },
    #[error("placement assigns layer {layer} more than once")]
    CoverageOverlap { layer: usize },
    #[error("placement covers layers up to {covered}, network has {expected}")]
    LengthMismatch { expected: usize, covered: usize },
    #[error("unmerged adjacent equal-device segments at layer {layer} on {device}")]
    UnmergedSegments { layer: usize, device: DeviceId },
    #[error("unknown device {0}")]
    UnknownDevice(DeviceId),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DeviceId(pub String);

impl DeviceId {
    pub fn new(name: impl Into<String>) -> Self {
        DeviceId(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for DeviceId {
    fn from(s: &str) -> Self {
        DeviceId(s.to_owned())
    }
}

/// Physical machine. A TEE and the untrusted processor next to it share one.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HostId(pub String);

impl HostId {
    pub fn new(name: impl Into<String>) -> Self {
        HostId(name.into())
    }
}

impl fmt::Display for HostId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for HostId {
    fn from(s: &str) -> Self {
        HostId(s.to_owned())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Device {
    pub id: DeviceId,
    pub trusted: bool,
    pub host: HostId,
}

impl Device {
    pub fn new(id: impl Into<String>, trusted: bool, host: impl Into<String>) -> Self {
        Device {
            id: DeviceId(id.into()),
            trusted,
            host: HostId(host.into()),
        }
    }
}

/// Devices plus directed inter-host bandwidths in bytes per second.
///
/// A bandwidth lookup for `(a, b)` falls back to `(b, a)` when only one
/// direction is recorded. Transfers inside a host cost nothing unless
/// `intra_host_bandwidth` is set.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResourceGraph {
    pub devices: Vec<Device>,
    pub bandwidth: BTreeMap<(HostId, HostId), f64>,
    pub intra_host_bandwidth: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    EmptyDeviceId,
    EmptyHost(DeviceId),
    DuplicateDevice(DeviceId),
    UnknownHost(HostId),
    NonPositiveBandwidth { from: HostId, to: HostId, value: f64 },
    NonPositiveIntraHostBandwidth(f64),
    MissingBandwidth { a: HostId, b: HostId },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyDeviceId => write!(f, "empty device id"),
            Violation::EmptyHost(d) => write!(f, "device {d} has an empty host"),
            Violation::DuplicateDevice(d) => write!(f, "duplicate device id {d}"),
            Violation::UnknownHost(h) => write!(f, "bandwidth entry names host {h} with no devices"),
            Violation::NonPositiveBandwidth { from, to, value } => {
                write!(f, "non-positive bandwidth {value} on {from}->{to}")
            }
            Violation::NonPositiveIntraHostBandwidth(v) => {
                write!(f, "non-positive intra-host bandwidth {v}")
            }
            Violation::MissingBandwidth { a, b } => {
                write!(f, "missing bandwidth between hosts {a} and {b}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationResult {
    pub violations: Vec<Violation>,
}

impl ValidationResult {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl ResourceGraph {
    pub fn new(devices: Vec<Device>) -> Self {
        ResourceGraph {
            devices,
            ..Default::default()
        }
    }

    /// Records `bytes_per_sec` in both directions.
    pub fn with_link(mut self, a: &str, b: &str, bytes_per_sec: f64) -> Self {
        self.bandwidth.insert((a.into(), b.into()), bytes_per_sec);
        self.bandwidth.insert((b.into(), a.into()), bytes_per_sec);
        self
    }

    pub fn device(&self, id: &DeviceId) -> Option<&Device> {
        self.devices.iter().find(|d| &d.id == id)
    }

    pub fn contains(&self, id: &DeviceId) -> bool {
        self.device(id).is_some()
    }

    pub fn is_trusted(&self, id: &DeviceId) -> Option<bool> {
        self.device(id).map(|d| d.trusted)
    }

    pub fn trusted(&self) -> impl Iterator<Item = &Device> {
        self.devices.iter().filter(|d| d.trusted)
    }

    pub fn untrusted(&self) -> impl Iterator<Item = &Device> {
        self.devices.iter().filter(|d| !d.trusted)
    }

    pub fn hosts(&self) -> BTreeSet<&HostId> {
        self.devices.iter().map(|d| &d.host).collect()
    }

    pub fn bandwidth_between(&self, a: &HostId, b: &HostId) -> Option<f64> {
        self.bandwidth
            .get(&(a.clone(), b.clone()))
            .or_else(|| self.bandwidth.get(&(b.clone(), a.clone())))
            .copied()
    }

    pub fn validate(&self) -> ValidationResult {
        validate_resource_graph(self)
    }
}

pub fn validate_resource_graph(graph: &ResourceGraph) -> ValidationResult {
    let mut violations = Vec::new();
    let mut seen = BTreeSet::new();
    for d in &graph.devices {
        if d.id.0.is_empty() {
            violations.push(Violation::EmptyDeviceId);
        } else if !seen.insert(&d.id) {
            violations.push(Violation::DuplicateDevice(d.id.clone()));
        }
        if d.host.0.is_empty() {
            violations.push(Violation::EmptyHost(d.id.clone()));
        }
    }

    let hosts = graph.hosts();
    for ((from, to), &value) in &graph.bandwidth {
        for h in [from, to] {
            if !hosts.contains(h) {
                violations.push(Violation::UnknownHost(h.clone()));
            }
        }
        if value.is_nan() || value <= 0.0 {
            violations.push(Violation::NonPositiveBandwidth {
                from: from.clone(),
                to: to.clone(),
                value,
            });
        }
    }
    if let Some(v) = graph.intra_host_bandwidth {
        if v.is_nan() || v <= 0.0 {
            violations.push(Violation::NonPositiveIntraHostBandwidth(v));
        }
    }

    let hosts: Vec<_> = hosts.into_iter().collect();
    for (i, a) in hosts.iter().enumerate() {
        for b in &hosts[i + 1..] {
            if graph.bandwidth_between(a, b).is_none() {
                violations.push(Violation::MissingBandwidth {
                    a: (*a).clone(),
                    b: (*b).clone(),
                });
            }
        }
    }
    ValidationResult { violations }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv,
    Pool,
    Relu,
    Fc,
    Softmax,
    Other,
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LayerKind::Conv => "conv",
            LayerKind::Pool => "pool",
            LayerKind::Relu => "relu",
            LayerKind::Fc => "fc",
            LayerKind::Softmax => "softmax",
            LayerKind::Other => "other",
        };
        f.write_str(s)
    }
}

/// Layer operation together with the parameters its shape arithmetic needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerOp {
    Conv {
        kernel: u32,
        stride: u32,
        padding: u32,
        out_channels: u32,
    },
    /// Channels pass through unchanged.
    Pool {
        kernel: u32,
        stride: u32,
        padding: u32,
    },
    Relu,
    Fc {
        out_len: u32,
    },
    Softmax,
    /// Shape-preserving unless `out_channels` is given (flattened merge blocks).
    Other {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        out_channels: Option<u32>,
    },
}

impl LayerOp {
    pub fn kind(&self) -> LayerKind {
        match self {
            LayerOp::Conv { .. } => LayerKind::Conv,
            LayerOp::Pool { .. } => LayerKind::Pool,
            LayerOp::Relu => LayerKind::Relu,
            LayerOp::Fc { .. } => LayerKind::Fc,
            LayerOp::Softmax => LayerKind::Softmax,
            LayerOp::Other { .. } => LayerKind::Other,
        }
    }

    fn check(&self) -> Result<(), String> {
        match *self {
            LayerOp::Conv {
                kernel,
                stride,
                out_channels,
                ..
            } => {
                if kernel == 0 || stride == 0 {
                    return Err("conv needs kernel >= 1 and stride >= 1".into());
                }
                if out_channels == 0 {
                    return Err("conv needs out_channels >= 1".into());
                }
            }
            LayerOp::Pool { kernel, stride, .. } => {
                if kernel == 0 || stride == 0 {
                    return Err("pool needs kernel >= 1 and stride >= 1".into());
                }
            }
            LayerOp::Fc { out_len: 0 } => {
                return Err("fc needs out_len >= 1".into());
            }
            LayerOp::Other { out_channels: Some(0) } => return Err("out_channels must be >= 1".into()),
            _ => {}
        }
        Ok(())
    }
}

/// One layer of the chain with its per-device execution times.
///
/// `exec_time` includes the time to encrypt the layer's output.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    /// 1-based position in the chain.
    pub index: usize,
    pub name: Option<String>,
    pub op: LayerOp,
    pub exec_time: BTreeMap<DeviceId, Nanos>,
    pub explicit_output_bytes: Option<u64>,
    pub explicit_resolution: Option<Resolution>,
}

impl LayerSpec {
    pub fn new(index: usize, op: LayerOp) -> Self {
        LayerSpec {
            index,
            name: None,
            op,
            exec_time: BTreeMap::new(),
            explicit_output_bytes: None,
            explicit_resolution: None,
        }
    }

    pub fn with_time(mut self, device: &str, ns: Nanos) -> Self {
        self.exec_time.insert(device.into(), ns);
        self
    }

    pub fn kind(&self) -> LayerKind {
        self.op.kind()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkProfile {
    pub layers: Vec<LayerSpec>,
    pub input: TensorShape,
    pub bytes_per_element: u32,
}

pub const DEFAULT_BYTES_PER_ELEMENT: u32 = 4;

impl NetworkProfile {
    pub fn new(input: TensorShape, layers: Vec<LayerSpec>) -> Self {
        NetworkProfile {
            layers,
            input,
            bytes_per_element: DEFAULT_BYTES_PER_ELEMENT,
        }
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Layer by 1-based index.
    pub fn layer(&self, index: usize) -> Option<&LayerSpec> {
        index.checked_sub(1).and_then(|i| self.layers.get(i))
    }

    pub fn exec_time(&self, layer: usize, device: &DeviceId) -> Option<Nanos> {
        self.layer(layer).and_then(|l| l.exec_time.get(device).copied())
    }

    /// Sum of execution times on `device`, if every layer has one.
    pub fn total_time(&self, device: &DeviceId) -> Option<Nanos> {
        self.layers.iter().map(|l| l.exec_time.get(device).copied()).sum()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.layers.is_empty() {
            return Err(ModelError::EmptyNetwork);
        }
        if self.input.height == 0 || self.input.width == 0 || self.input.channels == 0 {
            return Err(ModelError::InvalidFrame);
        }
        if self.bytes_per_element == 0 {
            return Err(ModelError::InvalidElementSize);
        }
        for (position, layer) in self.layers.iter().enumerate() {
            if layer.index != position + 1 {
                return Err(ModelError::LayerIndex {
                    position: position + 1,
                    found: layer.index,
                });
            }
            layer.op.check().map_err(|reason| ModelError::InvalidLayer {
                layer: layer.index,
                reason,
            })?;
            if let Some((d, _)) = layer.exec_time.iter().find(|(_, &t)| t == 0) {
                return Err(ModelError::InvalidLayer {
                    layer: layer.index,
                    reason: format!("execution time on {d} must be positive"),
                });
            }
            if layer.explicit_output_bytes == Some(0) {
                return Err(ModelError::InvalidLayer {
                    layer: layer.index,
                    reason: "output_bytes override must be positive".into(),
                });
            }
            if let Some(r) = layer.explicit_resolution {
                if r.height == 0 || r.width == 0 {
                    return Err(ModelError::InvalidLayer {
                        layer: layer.index,
                        reason: "resolution override must be at least 1x1".into(),
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkSpec {
    frames: u64,
}

impl ChunkSpec {
    pub fn new(frames: u64) -> Result<Self, ModelError> {
        if frames == 0 {
            return Err(ModelError::EmptyChunk);
        }
        Ok(ChunkSpec { frames })
    }

    pub fn frames(&self) -> u64 {
        self.frames
    }
}

/// Layers `first..=last` (1-based) on `device`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Segment {
    pub first: usize,
    pub last: usize,
    pub device: DeviceId,
}

impl Segment {
    pub fn new(first: usize, last: usize, device: impl Into<DeviceId>) -> Self {
        Segment {
            first,
            last,
            device: device.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.last + 1 - self.first
    }

    pub fn is_empty(&self) -> bool {
        self.last < self.first
    }

    pub fn contains(&self, layer: usize) -> bool {
        (self.first..=self.last).contains(&layer)
    }
}

impl From<String> for DeviceId {
    fn from(s: String) -> Self {
        DeviceId(s)
    }
}

/// Assignment of every layer to a device as ordered contiguous segments.
///
/// Construction does not check structure; [`Placement::validate`] and
/// [`Placement::expand`] do.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Placement {
    pub segments: Vec<Segment>,
}

impl Placement {
    pub fn new(segments: Vec<Segment>) -> Self {
        Placement { segments }
    }

    pub fn whole(layers: usize, device: impl Into<DeviceId>) -> Self {
        Placement::new(vec![Segment::new(1, layers, device)])
    }

    /// Canonical segmentation of a per-layer device vector.
    pub fn from_devices(devices: &[DeviceId]) -> Self {
        let mut segments: Vec<Segment> = Vec::new();
        for (i, d) in devices.iter().enumerate() {
            match segments.last_mut() {
                Some(seg) if &seg.device == d => seg.last = i + 1,
                _ => segments.push(Segment::new(i + 1, i + 1, d.clone())),
            }
        }
        Placement { segments }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn device_sequence(&self) -> Vec<&DeviceId> {
        self.segments.iter().map(|s| &s.device).collect()
    }

    pub fn devices(&self) -> impl Iterator<Item = &DeviceId> {
        self.segments.iter().map(|s| &s.device)
    }

    /// Checks that the segments cover `1..=layers` in order, without gaps,
    /// overlaps or equal-device neighbours.
    pub fn validate(&self, layers: usize) -> Result<(), ModelError> {
        if self.segments.is_empty() {
            return Err(ModelError::EmptyPlacement);
        }
        let mut next = 1;
        let mut prev: Option<&DeviceId> = None;
        for seg in &self.segments {
            if seg.is_empty() || seg.first == 0 {
                return Err(ModelError::EmptySegment {
                    first: seg.first,
                    last: seg.last,
                });
            }
            if seg.first > next {
                return Err(ModelError::CoverageGap { layer: next });
            }
            if seg.first < next {
                return Err(ModelError::CoverageOverlap { layer: seg.first });
            }
            if prev == Some(&seg.device) {
                return Err(ModelError::UnmergedSegments {
                    layer: seg.first,
                    device: seg.device.clone(),
                });
            }
            prev = Some(&seg.device);
            next = seg.last + 1;
        }
        if next - 1 != layers {
            return Err(ModelError::LengthMismatch {
                expected: layers,
                covered: next - 1,
            });
        }
        Ok(())
    }

    /// Per-layer device vector `(p_1, ..., p_M)`.
    pub fn expand(&self, layers: usize) -> Result<Vec<DeviceId>, ModelError> {
        self.validate(layers)?;
        Ok(self
            .segments
            .iter()
            .flat_map(|s| std::iter::repeat_n(s.device.clone(), s.len()))
            .collect())
    }

    /// Device of layer `layer`, if covered.
    pub fn device_of(&self, layer: usize) -> Option<&DeviceId> {
        self.segments.iter().find(|s| s.contains(layer)).map(|s| &s.device)
    }
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, s) in self.segments.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            if s.first == s.last {
                write!(f, "L{}@{}", s.first, s.device)?;
            } else {
                write!(f, "L{}->L{}@{}", s.first, s.last, s.device)?;
            }
        }
        Ok(())
    }
}

pub fn expand_placement(p: &Placement, layers: usize) -> Result<Vec<DeviceId>, ModelError> {
    p.expand(layers)
}
