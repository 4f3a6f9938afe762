//! JSON documents: network profiles, resource graphs and placements.
//!
//! Files use milliseconds for execution times and megabits per second for
//! bandwidth. In memory, times are integer nanoseconds (rounded to nearest)
//! and bandwidth is bytes per second (`1 Mbps = 125000 B/s`).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    Device, DeviceId, HostId, LayerOp, LayerSpec, ModelError, NetworkProfile, Placement, ResourceGraph,
    DEFAULT_BYTES_PER_ELEMENT,
};
use crate::scalar::{millis_to_nanos, nanos_to_millis};
use crate::shape::{Resolution, TensorShape};

pub const BYTES_PER_SEC_PER_MBPS: f64 = 125_000.0;

#[derive(Debug, Error)]
pub enum FileError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{origin}: field `{field}`: {message}")]
    Parse {
        origin: String,
        field: String,
        message: String,
    },
    #[error("{origin}: {source}")]
    Invalid {
        origin: String,
        #[source]
        source: ModelError,
    },
}

/// Deserializes JSON, reporting the failing field path along with the
/// line and column.
pub fn parse_json<T: DeserializeOwned>(text: &str, origin: &str) -> Result<T, FileError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        FileError::Parse {
            origin: origin.to_string(),
            field,
            message: e.into_inner().to_string(),
        }
    })
}

fn read(path: &Path) -> Result<String, FileError> {
    fs::read_to_string(path).map_err(|source| FileError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(flatten)]
    pub op: LayerOp,
    /// Producer layers. Only `[index - 1]` (or nothing) is accepted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inputs: Option<Vec<usize>>,
    pub exec_ms: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_bytes: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<Resolution>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub input: TensorShape,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bytes_per_element: Option<u32>,
    pub layers: Vec<LayerEntry>,
}

impl ProfileFile {
    pub fn parse(text: &str, origin: &str) -> Result<Self, FileError> {
        parse_json(text, origin)
    }

    pub fn load(path: &Path) -> Result<Self, FileError> {
        Self::parse(&read(path)?, &path.display().to_string())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("profile serializes")
    }

    pub fn to_network(&self) -> Result<NetworkProfile, ModelError> {
        let mut layers = Vec::with_capacity(self.layers.len());
        for entry in &self.layers {
            if let Some(inputs) = &entry.inputs {
                let chained = match entry.index {
                    1 => inputs.is_empty() || inputs == &[0],
                    i => inputs == &[i - 1],
                };
                if !chained {
                    return Err(ModelError::Branching {
                        layer: entry.index,
                        inputs: inputs.clone(),
                    });
                }
            }
            if let Some((d, ms)) = entry.exec_ms.iter().find(|(_, ms)| !ms.is_finite() || **ms <= 0.0) {
                return Err(ModelError::InvalidLayer {
                    layer: entry.index,
                    reason: format!("execution time {ms} ms on {d} must be positive"),
                });
            }
            layers.push(LayerSpec {
                index: entry.index,
                name: entry.name.clone(),
                op: entry.op,
                exec_time: entry
                    .exec_ms
                    .iter()
                    .map(|(d, &ms)| (DeviceId(d.clone()), millis_to_nanos(ms)))
                    .collect(),
                explicit_output_bytes: entry.output_bytes,
                explicit_resolution: entry.resolution,
            });
        }
        let net = NetworkProfile {
            layers,
            input: self.input,
            bytes_per_element: self.bytes_per_element.unwrap_or(DEFAULT_BYTES_PER_ELEMENT),
        };
        net.validate()?;
        Ok(net)
    }

    pub fn from_network(net: &NetworkProfile, name: Option<String>) -> Self {
        ProfileFile {
            name,
            input: net.input,
            bytes_per_element: (net.bytes_per_element != DEFAULT_BYTES_PER_ELEMENT).then_some(net.bytes_per_element),
            layers: net
                .layers
                .iter()
                .map(|l| LayerEntry {
                    index: l.index,
                    name: l.name.clone(),
                    op: l.op,
                    inputs: None,
                    exec_ms: l
                        .exec_time
                        .iter()
                        .map(|(d, &ns)| (d.0.clone(), nanos_to_millis(ns)))
                        .collect(),
                    output_bytes: l.explicit_output_bytes,
                    resolution: l.explicit_resolution,
                })
                .collect(),
        }
    }
}

pub fn load_profile(path: &Path) -> Result<NetworkProfile, FileError> {
    let origin = path.display().to_string();
    ProfileFile::load(path)?
        .to_network()
        .map_err(|source| FileError::Invalid { origin, source })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceEntry {
    pub id: String,
    pub trusted: bool,
    pub host: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkEntry {
    pub from: String,
    pub to: String,
    pub mbps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceFile {
    pub devices: Vec<DeviceEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub links: Vec<LinkEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intra_host_mbps: Option<f64>,
}

impl ResourceFile {
    pub fn parse(text: &str, origin: &str) -> Result<Self, FileError> {
        parse_json(text, origin)
    }

    pub fn load(path: &Path) -> Result<Self, FileError> {
        Self::parse(&read(path)?, &path.display().to_string())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("resources serialize")
    }

    /// Converts to a graph. Validation is left to the caller so that every
    /// violation can be reported at once.
    pub fn to_graph(&self) -> ResourceGraph {
        ResourceGraph {
            devices: self
                .devices
                .iter()
                .map(|d| Device::new(d.id.clone(), d.trusted, d.host.clone()))
                .collect(),
            bandwidth: self
                .links
                .iter()
                .map(|l| {
                    (
                        (HostId(l.from.clone()), HostId(l.to.clone())),
                        l.mbps * BYTES_PER_SEC_PER_MBPS,
                    )
                })
                .collect(),
            intra_host_bandwidth: self.intra_host_mbps.map(|m| m * BYTES_PER_SEC_PER_MBPS),
        }
    }

    pub fn from_graph(graph: &ResourceGraph) -> Self {
        ResourceFile {
            devices: graph
                .devices
                .iter()
                .map(|d| DeviceEntry {
                    id: d.id.0.clone(),
                    trusted: d.trusted,
                    host: d.host.0.clone(),
                })
                .collect(),
            links: graph
                .bandwidth
                .iter()
                .map(|((from, to), &bps)| LinkEntry {
                    from: from.0.clone(),
                    to: to.0.clone(),
                    mbps: bps / BYTES_PER_SEC_PER_MBPS,
                })
                .collect(),
            intra_host_mbps: graph.intra_host_bandwidth.map(|b| b / BYTES_PER_SEC_PER_MBPS),
        }
    }
}

pub fn load_resources(path: &Path) -> Result<ResourceGraph, FileError> {
    Ok(ResourceFile::load(path)?.to_graph())
}

/// Reads a placement from either a bare `{"segments": [...]}` document or
/// the JSON emitted by `plan --json` (its `best.placement`).
pub fn parse_placement(text: &str, origin: &str) -> Result<Placement, FileError> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Doc {
        Bare(Placement),
        Plan { best: Best },
    }
    #[derive(Deserialize)]
    struct Best {
        placement: Placement,
    }
    match parse_json::<Doc>(text, origin) {
        Ok(Doc::Bare(p)) => Ok(p),
        Ok(Doc::Plan { best }) => Ok(best.placement),
        // untagged errors say nothing useful; retry as a bare placement for the field path
        Err(_) => parse_json::<Placement>(text, origin),
    }
}

pub fn load_placement(path: &Path) -> Result<Placement, FileError> {
    parse_placement(&read(path)?, &path.display().to_string())
}
