//! Placement search.
//!
//! Candidates come from a placement tree rooted at a trusted start device.
//! Level `k` of the tree lists the devices that may run the `k`-th segment
//! after the start; every path through the tree is combined with every way
//! of splitting the layer chain into that many contiguous non-empty parts.
//! Each candidate is costed with the pipeline model and checked against the
//! privacy policy; the fastest admissible one wins.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{chunk_completion, decompose, CostError, CostParams, StagePlan};
use crate::model::{DeviceId, ModelError, NetworkProfile, Placement, ResourceGraph, Segment, Violation};
use crate::privacy::{admissible, check_c2, PrivacyPolicy};
use crate::scalar::{Nanos, TimeScalar};
use crate::shape::{propagate_shapes, LayerSignature, ShapeError};

/// Largest chain the exhaustive oracle accepts.
pub const ORACLE_MAX_LAYERS: usize = 10;

/// Relative deviation that triggers re-planning.
pub const DEFAULT_REPLAN_TOLERANCE: f64 = 0.2;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error("invalid resource graph: {}", join(.0))]
    InvalidGraph(Vec<Violation>),
    #[error("invalid placement tree: {0}")]
    Config(String),
    #[error("infeasible under policy: none of {candidates} candidate placements satisfies the privacy constraints")]
    Infeasible { candidates: usize },
    #[error("infeasible under policy: graph has no trusted device to start from")]
    NoTrustedDevice,
    #[error("exhaustive search is limited to {max} layers, network has {layers}")]
    OracleBound { layers: usize, max: usize },
}

fn join(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// Shape of the placement tree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub start_device: DeviceId,
    /// Candidate devices for the 1st, 2nd, ... segment after the start.
    pub levels: Vec<Vec<DeviceId>>,
    /// Adds a last level holding the start device and keeps only paths that end there.
    #[serde(default)]
    pub require_return_to_start: bool,
}

impl TreeConfig {
    pub fn new(start: impl Into<DeviceId>, levels: Vec<Vec<DeviceId>>) -> Self {
        TreeConfig {
            start_device: start.into(),
            levels,
            require_return_to_start: false,
        }
    }

    /// The two-host tree: `TEE_1 -> {E_1, E_2, TEE_2} -> {E_2}`.
    pub fn two_host_default() -> Self {
        let ids = |names: &[&str]| names.iter().map(|&n| DeviceId::from(n)).collect();
        TreeConfig::new("TEE_1", vec![ids(&["E_1", "E_2", "TEE_2"]), ids(&["E_2"])])
    }

    /// The same tree shape derived from an arbitrary graph: start at the
    /// first trusted device, then any other device, then any untrusted device
    /// on a different host from the start.
    pub fn for_graph(graph: &ResourceGraph) -> Result<Self, PlanError> {
        let start = graph.trusted().next().ok_or(PlanError::NoTrustedDevice)?;
        let second: Vec<DeviceId> = graph
            .devices
            .iter()
            .filter(|d| d.id != start.id)
            .map(|d| d.id.clone())
            .collect();
        let third: Vec<DeviceId> = graph
            .untrusted()
            .filter(|d| d.host != start.host)
            .map(|d| d.id.clone())
            .collect();
        let levels = [second, third].into_iter().take_while(|l| !l.is_empty()).collect();
        Ok(TreeConfig::new(start.id.clone(), levels))
    }

    /// Every device at every level, `depth` levels deep.
    pub fn exhaustive(graph: &ResourceGraph, start: &DeviceId, depth: usize) -> Self {
        let all: Vec<DeviceId> = graph.devices.iter().map(|d| d.id.clone()).collect();
        TreeConfig::new(start.clone(), vec![all; depth])
    }

    pub fn validate(&self, graph: &ResourceGraph) -> Result<(), PlanError> {
        match graph.is_trusted(&self.start_device) {
            None => return Err(PlanError::Config(format!("unknown start device {}", self.start_device))),
            Some(false) => {
                return Err(PlanError::Config(format!(
                    "start device {} is not trusted",
                    self.start_device
                )))
            }
            Some(true) => {}
        }
        for (i, level) in self.levels.iter().enumerate() {
            if level.is_empty() {
                return Err(PlanError::Config(format!("level {} has no devices", i + 2)));
            }
            if let Some(d) = level.iter().find(|d| !graph.contains(d)) {
                return Err(PlanError::Config(format!("level {} names unknown device {d}", i + 2)));
            }
        }
        Ok(())
    }

    /// Device sequences of all root-to-node paths, in tree order. Adjacent
    /// devices on a path are distinct.
    pub fn device_sequences(&self) -> Vec<Vec<DeviceId>> {
        let mut levels = self.levels.clone();
        if self.require_return_to_start {
            levels.push(vec![self.start_device.clone()]);
        }
        let mut out = Vec::new();
        let mut seen = BTreeSet::new();
        let mut path = vec![self.start_device.clone()];
        walk(&levels, &mut path, &mut out, &mut seen);
        if self.require_return_to_start {
            out.retain(|seq| seq.last() == Some(&self.start_device));
        }
        out
    }
}

fn walk(
    levels: &[Vec<DeviceId>],
    path: &mut Vec<DeviceId>,
    out: &mut Vec<Vec<DeviceId>>,
    seen: &mut BTreeSet<Vec<DeviceId>>,
) {
    if seen.insert(path.clone()) {
        out.push(path.clone());
    }
    let Some((level, rest)) = levels.split_first() else {
        return;
    };
    for d in level {
        if path.last() == Some(d) {
            continue;
        }
        path.push(d.clone());
        walk(rest, path, out, seen);
        path.pop();
    }
}

/// All splits of layers `1..=layers` into `parts` contiguous non-empty runs,
/// as the last layer of each run but the final one.
fn cut_points(layers: usize, parts: usize) -> Vec<Vec<usize>> {
    fn go(from: usize, layers: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if left == 0 {
            out.push(cur.clone());
            return;
        }
        // leave at least `left` layers after this cut
        for cut in from..=layers - left {
            cur.push(cut);
            go(cut + 1, layers, left - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if parts >= 1 && parts <= layers {
        go(1, layers, parts - 1, &mut Vec::new(), &mut out);
    }
    out
}

fn placement_from_cuts(devices: &[DeviceId], cuts: &[usize], layers: usize) -> Placement {
    let mut first = 1;
    let mut segments = Vec::with_capacity(devices.len());
    for (i, d) in devices.iter().enumerate() {
        let last = cuts.get(i).copied().unwrap_or(layers);
        segments.push(Segment::new(first, last, d.clone()));
        first = last + 1;
    }
    Placement::new(segments)
}

/// Every canonical placement described by the tree.
pub fn enumerate_candidates(
    layers: usize,
    graph: &ResourceGraph,
    config: &TreeConfig,
) -> Result<Vec<Placement>, PlanError> {
    config.validate(graph)?;
    if layers == 0 {
        return Err(ModelError::EmptyNetwork.into());
    }
    let mut out = Vec::new();
    for seq in config.device_sequences() {
        for cuts in cut_points(layers, seq.len()) {
            out.push(placement_from_cuts(&seq, &cuts, layers));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateEvaluation<T = Nanos> {
    pub placement: Placement,
    pub t_chunk: T,
    /// Largest resolution (max axis) handed to an untrusted device; 0 if none.
    pub sim: u32,
    pub admissible: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Strategy {
    #[serde(rename = "1 TEE")]
    OneTee,
    #[serde(rename = "No pipelining")]
    NoPipelining,
    #[serde(rename = "1 TEE & 1 GPU")]
    TeeAndAccelerator,
    #[serde(rename = "2 TEEs")]
    TwoTees,
    #[serde(rename = "Proposed")]
    Proposed,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::OneTee,
        Strategy::NoPipelining,
        Strategy::TeeAndAccelerator,
        Strategy::TwoTees,
        Strategy::Proposed,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Strategy::OneTee => "1 TEE",
            Strategy::NoPipelining => "No pipelining",
            Strategy::TeeAndAccelerator => "1 TEE & 1 GPU",
            Strategy::TwoTees => "2 TEEs",
            Strategy::Proposed => "Proposed",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategyRow<T = Nanos> {
    pub strategy: Strategy,
    pub placement: Option<Placement>,
    pub t_chunk: Option<T>,
    /// `t_chunk(1 TEE) / t_chunk(this row)`.
    pub speedup: Option<f64>,
    /// Why the row has no value.
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanReport<T = Nanos> {
    pub frames: u64,
    pub best: CandidateEvaluation<T>,
    pub all_candidates: Vec<CandidateEvaluation<T>>,
    pub strategy_rows: Option<Vec<StrategyRow<T>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Replan<T = Nanos> {
    Keep,
    Replanned(PlanReport<T>),
}

/// Orders candidates by completion time, then segment count, then the
/// per-layer device sequence.
fn rank<T: TimeScalar>(a: &CandidateEvaluation<T>, b: &CandidateEvaluation<T>) -> Ordering {
    a.t_chunk
        .partial_cmp(&b.t_chunk)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.placement.segments.len().cmp(&b.placement.segments.len()))
        .then_with(|| per_layer(&a.placement).cmp(&per_layer(&b.placement)))
}

fn per_layer(p: &Placement) -> Vec<&DeviceId> {
    p.segments
        .iter()
        .flat_map(|s| std::iter::repeat_n(&s.device, s.len()))
        .collect()
}

fn select_best<T: TimeScalar>(candidates: &[CandidateEvaluation<T>]) -> Option<&CandidateEvaluation<T>> {
    candidates.iter().filter(|c| c.admissible).min_by(|a, b| rank(a, b))
}

/// A network, a resource graph and a privacy policy, with the shape
/// signatures derived once.
#[derive(Debug, Clone)]
pub struct Problem {
    pub net: NetworkProfile,
    pub graph: ResourceGraph,
    pub policy: PrivacyPolicy,
    pub params: CostParams,
    signatures: Vec<LayerSignature>,
}

impl Problem {
    pub fn new(net: NetworkProfile, graph: ResourceGraph, policy: PrivacyPolicy) -> Result<Self, PlanError> {
        let violations = graph.validate().violations;
        if !violations.is_empty() {
            return Err(PlanError::InvalidGraph(violations));
        }
        let signatures = propagate_shapes(&net)?;
        Ok(Problem {
            net,
            graph,
            policy,
            params: CostParams::default(),
            signatures,
        })
    }

    pub fn with_params(mut self, params: CostParams) -> Self {
        self.params = params;
        self
    }

    pub fn with_policy(mut self, policy: PrivacyPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn signatures(&self) -> &[LayerSignature] {
        &self.signatures
    }

    pub fn layers(&self) -> usize {
        self.net.len()
    }

    pub fn stage_plan<T: TimeScalar>(&self, p: &Placement) -> Result<StagePlan<T>, PlanError> {
        Ok(decompose(p, &self.graph, &self.signatures, &self.net, &self.params)?)
    }

    pub fn is_admissible(&self, p: &Placement) -> bool {
        admissible(p, &self.graph, &self.signatures, &self.policy)
    }

    pub fn evaluate<T: TimeScalar>(&self, p: &Placement, frames: u64) -> Result<CandidateEvaluation<T>, PlanError> {
        let plan = self.stage_plan::<T>(p)?;
        let leakage = check_c2(p, &self.graph, &self.signatures, &self.policy);
        Ok(CandidateEvaluation {
            placement: p.clone(),
            t_chunk: chunk_completion(&plan, frames),
            sim: leakage.max_similarity,
            admissible: self.is_admissible(p),
        })
    }

    /// Whether every layer has a profiled time on the device it is placed on.
    fn is_profiled(&self, p: &Placement) -> bool {
        p.segments
            .iter()
            .all(|s| (s.first..=s.last).all(|x| self.net.exec_time(x, &s.device).is_some()))
    }

    fn evaluate_all<T: TimeScalar>(
        &self,
        candidates: Vec<Placement>,
        frames: u64,
    ) -> Result<Vec<CandidateEvaluation<T>>, PlanError> {
        // placement is only permitted where a layer has a profiled time
        candidates
            .into_par_iter()
            .filter(|p| self.is_profiled(p))
            .map(|p| self.evaluate(&p, frames))
            .collect()
    }

    fn report<T: TimeScalar>(&self, candidates: Vec<Placement>, frames: u64) -> Result<PlanReport<T>, PlanError> {
        let all = self.evaluate_all::<T>(candidates, frames)?;
        let best = select_best(&all)
            .cloned()
            .ok_or(PlanError::Infeasible { candidates: all.len() })?;
        Ok(PlanReport {
            frames,
            best,
            all_candidates: all,
            strategy_rows: None,
        })
    }

    /// Fastest admissible placement in the tree for a chunk of `frames`.
    pub fn plan<T: TimeScalar>(&self, frames: u64, config: &TreeConfig) -> Result<PlanReport<T>, PlanError> {
        let candidates = enumerate_candidates(self.layers(), &self.graph, config)?;
        self.report(candidates, frames)
    }

    /// Test oracle: tries every per-layer device vector over the devices in
    /// `device_orders` and keeps those whose run-length device sequence is
    /// one of `device_orders`.
    pub fn brute_force_plan<T: TimeScalar>(
        &self,
        frames: u64,
        device_orders: &[Vec<DeviceId>],
    ) -> Result<PlanReport<T>, PlanError> {
        let layers = self.layers();
        if layers > ORACLE_MAX_LAYERS {
            return Err(PlanError::OracleBound {
                layers,
                max: ORACLE_MAX_LAYERS,
            });
        }
        let devices: Vec<&DeviceId> = device_orders
            .iter()
            .flatten()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let position = |d: &DeviceId| devices.binary_search(&d).expect("device collected above");
        let allowed: BTreeSet<Vec<usize>> = device_orders
            .iter()
            .map(|order| order.iter().map(position).collect())
            .collect();
        let mut candidates = Vec::new();
        if !devices.is_empty() {
            let mut digits = vec![0usize; layers];
            let mut runs = Vec::with_capacity(layers);
            loop {
                runs.clear();
                for &d in &digits {
                    if runs.last() != Some(&d) {
                        runs.push(d);
                    }
                }
                if allowed.contains(&runs) {
                    let vector: Vec<DeviceId> = digits.iter().map(|&i| devices[i].clone()).collect();
                    candidates.push(Placement::from_devices(&vector));
                }
                // odometer increment
                let mut pos = 0;
                while pos < layers {
                    digits[pos] += 1;
                    if digits[pos] < devices.len() {
                        break;
                    }
                    digits[pos] = 0;
                    pos += 1;
                }
                if pos == layers {
                    break;
                }
            }
        }
        self.report(candidates, frames)
    }

    /// The five-way comparison: one enclave, single-frame partitioning,
    /// enclave plus one accelerator, two enclaves, and the full tree.
    pub fn strategy_compare<T: TimeScalar>(
        &self,
        frames: u64,
        config: &TreeConfig,
    ) -> Result<Vec<StrategyRow<T>>, PlanError> {
        config.validate(&self.graph)?;
        let start = &config.start_device;
        let one_tee = self.evaluate::<T>(&Placement::whole(self.layers(), start.clone()), frames)?;
        let baseline = one_tee.t_chunk;

        let row = |strategy, outcome: Result<Option<CandidateEvaluation<T>>, PlanError>| {
            let (placement, t_chunk, note) = match outcome {
                Ok(Some(c)) => (Some(c.placement), Some(c.t_chunk), None),
                Ok(None) => (None, None, Some("skipped: device absent".to_string())),
                Err(PlanError::Infeasible { .. }) => (None, None, Some("infeasible under policy".to_string())),
                Err(e) => return Err(e),
            };
            let speedup = t_chunk.map(|t: T| baseline.to_seconds() / t.to_seconds());
            Ok(StrategyRow {
                strategy,
                placement,
                t_chunk,
                speedup,
                note,
            })
        };

        let mut rows = Vec::with_capacity(Strategy::ALL.len());
        rows.push(row(Strategy::OneTee, Ok(Some(one_tee.clone())))?);

        let no_pipelining = self
            .plan::<T>(1, config)
            .and_then(|single| self.evaluate::<T>(&single.best.placement, frames))
            .map(Some);
        rows.push(row(Strategy::NoPipelining, no_pipelining)?);

        let accelerators: Vec<DeviceId> = self.graph.untrusted().map(|d| d.id.clone()).collect();
        let tee_gpu = if accelerators.is_empty() {
            Ok(None)
        } else {
            let mut best: Option<CandidateEvaluation<T>> = None;
            let mut last_err = None;
            for acc in &accelerators {
                let tree = TreeConfig::new(start.clone(), vec![vec![acc.clone()]]);
                match self.plan::<T>(frames, &tree) {
                    Ok(r) => {
                        if best.as_ref().is_none_or(|b| rank(&r.best, b) == Ordering::Less) {
                            best = Some(r.best);
                        }
                    }
                    Err(e @ PlanError::Infeasible { .. }) => last_err = Some(e),
                    Err(e) => return Err(e),
                }
            }
            match (best, last_err) {
                (Some(b), _) => Ok(Some(b)),
                (None, Some(e)) => Err(e),
                (None, None) => Ok(None),
            }
        };
        rows.push(row(Strategy::TeeAndAccelerator, tee_gpu)?);

        let other_tees: Vec<DeviceId> = self
            .graph
            .trusted()
            .filter(|d| &d.id != start)
            .map(|d| d.id.clone())
            .collect();
        let two_tees = if other_tees.is_empty() {
            Ok(None)
        } else {
            let tree = TreeConfig::new(start.clone(), vec![other_tees]);
            self.plan::<T>(frames, &tree).map(|r| Some(r.best))
        };
        rows.push(row(Strategy::TwoTees, two_tees)?);

        rows.push(row(
            Strategy::Proposed,
            self.plan::<T>(frames, config).map(|r| Some(r.best)),
        )?);
        Ok(rows)
    }

    /// Copy of this problem whose profile uses `observed` times for each
    /// layer on the device `placement` puts it on.
    pub fn with_observed_times(&self, placement: &Placement, observed: &BTreeMap<usize, Nanos>) -> Self {
        let mut next = self.clone();
        for (&layer, &ns) in observed {
            if let (Some(device), Some(spec)) = (
                placement.device_of(layer),
                layer.checked_sub(1).and_then(|i| next.net.layers.get_mut(i)),
            ) {
                spec.exec_time.insert(device.clone(), ns);
            }
        }
        next
    }

    /// Re-plans when any placed layer's observed time differs from its
    /// profiled time by more than `tolerance` (relative).
    pub fn replan_if_deviation<T: TimeScalar>(
        &self,
        current: &PlanReport<T>,
        config: &TreeConfig,
        observed: &BTreeMap<usize, Nanos>,
        tolerance: f64,
    ) -> Result<Replan<T>, PlanError> {
        let placement = &current.best.placement;
        let deviates = observed.iter().any(|(&layer, &seen)| {
            let profiled = placement.device_of(layer).and_then(|d| self.net.exec_time(layer, d));
            match profiled {
                Some(p) if p > 0 => (seen as f64 - p as f64).abs() / p as f64 > tolerance,
                _ => false,
            }
        });
        if !deviates {
            return Ok(Replan::Keep);
        }
        let updated = self.with_observed_times(placement, observed);
        Ok(Replan::Replanned(updated.plan(current.frames, config)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Device, LayerOp, LayerSpec};
    use crate::privacy::PrivacyMode;
    use crate::shape::TensorShape;
    use proptest::prelude::*;

    const MS: Nanos = 1_000_000;

    fn four_devices() -> ResourceGraph {
        ResourceGraph::new(vec![
            Device::new("TEE_1", true, "A"),
            Device::new("E_1", false, "A"),
            Device::new("TEE_2", true, "B"),
            Device::new("E_2", false, "B"),
        ])
        .with_link("A", "B", 30.0 * 125_000.0)
    }

    fn halving(m: usize, tee_ms: &[u64], gpu_ms: u64) -> NetworkProfile {
        let layers = (1..=m)
            .map(|i| {
                let t = tee_ms[(i - 1) % tee_ms.len()] * MS;
                LayerSpec::new(
                    i,
                    LayerOp::Pool {
                        kernel: 2,
                        stride: 2,
                        padding: 0,
                    },
                )
                .with_time("TEE_1", t)
                .with_time("TEE_2", t)
                .with_time("E_1", gpu_ms * MS)
                .with_time("E_2", gpu_ms * MS)
            })
            .collect();
        NetworkProfile::new(TensorShape::new(256, 256, 3), layers)
    }

    fn shown(c: &[Placement]) -> Vec<String> {
        c.iter().map(ToString::to_string).collect()
    }

    #[test]
    fn two_host_tree_for_three_layers() {
        let c = enumerate_candidates(3, &four_devices(), &TreeConfig::two_host_default()).unwrap();
        let s = shown(&c);
        for expected in [
            "L1->L3@TEE_1",
            "L1@TEE_1, L2->L3@E_2",
            "L1->L2@TEE_1, L3@TEE_2",
            "L1@TEE_1, L2@TEE_2, L3@E_2",
        ] {
            assert!(s.contains(&expected.to_string()), "{expected} missing from {s:?}");
        }
        assert_eq!(c.len(), 9);
        assert!(c.iter().all(|p| p.validate(3).is_ok()));
    }

    #[test]
    fn single_layer_has_one_candidate() {
        let c = enumerate_candidates(1, &four_devices(), &TreeConfig::two_host_default()).unwrap();
        assert_eq!(shown(&c), vec!["L1@TEE_1"]);
    }

    #[test]
    fn two_tees_three_layers() {
        let g = four_devices();
        let cfg = TreeConfig::new("TEE_1", vec![vec!["TEE_2".into()]]);
        let c = enumerate_candidates(3, &g, &cfg).unwrap();
        assert_eq!(
            shown(&c),
            vec!["L1->L3@TEE_1", "L1@TEE_1, L2->L3@TEE_2", "L1->L2@TEE_1, L3@TEE_2"]
        );
    }

    #[test]
    fn config_errors() {
        let g = four_devices();
        let empty = TreeConfig::new("TEE_1", vec![vec![]]);
        assert!(matches!(enumerate_candidates(3, &g, &empty), Err(PlanError::Config(_))));
        let untrusted_start = TreeConfig::new("E_1", vec![]);
        assert!(matches!(untrusted_start.validate(&g), Err(PlanError::Config(_))));
    }

    #[test]
    fn graph_derived_tree_matches_two_host_default() {
        let cfg = TreeConfig::for_graph(&four_devices()).unwrap();
        let as_sets = |c: &TreeConfig| {
            c.levels
                .iter()
                .map(|l| l.iter().cloned().collect::<BTreeSet<_>>())
                .collect::<Vec<_>>()
        };
        assert_eq!(cfg.start_device, "TEE_1".into());
        assert_eq!(as_sets(&cfg), as_sets(&TreeConfig::two_host_default()));
    }

    #[test]
    fn return_to_start_paths_end_on_start() {
        let mut cfg = TreeConfig::two_host_default();
        cfg.require_return_to_start = true;
        let seqs = cfg.device_sequences();
        assert!(seqs.iter().all(|s| s.last() == Some(&"TEE_1".into())));
        assert!(seqs.contains(&vec!["TEE_1".into(), "TEE_2".into(), "E_2".into(), "TEE_1".into()]));
        assert!(seqs.contains(&vec!["TEE_1".into()]));
    }

    #[test]
    fn evaluation_examples() {
        let net = halving(6, &[100], 5);
        let p = Problem::new(net, four_devices(), PrivacyPolicy::default()).unwrap();
        let whole = p.evaluate::<Nanos>(&Placement::whole(6, "TEE_1"), 10).unwrap();
        assert_eq!((whole.sim, whole.admissible), (0, true));
        assert_eq!(whole.t_chunk, 10 * 600 * MS);

        // layer 3 receives 64x64
        let early = Placement::new(vec![Segment::new(1, 2, "TEE_1"), Segment::new(3, 6, "E_2")]);
        let e = p.evaluate::<Nanos>(&early, 10).unwrap();
        assert!(!e.admissible);
        assert_eq!(e.sim, 64);
    }

    #[test]
    fn infeasible_policy() {
        let g = ResourceGraph::new(vec![Device::new("TEE_1", true, "A"), Device::new("E_1", false, "A")]);
        let mut net = halving(3, &[100], 5);
        for l in &mut net.layers {
            l.exec_time.remove(&DeviceId::from("TEE_1"));
        }
        let p = Problem::new(net, g, PrivacyPolicy::c1_only()).unwrap();
        let cfg = TreeConfig::new("TEE_1", vec![vec!["E_1".into()]]);
        assert!(matches!(p.plan::<Nanos>(10, &cfg), Err(PlanError::Infeasible { .. })));
    }

    #[test]
    fn untrusted_only_graph_is_infeasible() {
        let g = ResourceGraph::new(vec![Device::new("E_1", false, "A")]);
        assert!(matches!(TreeConfig::for_graph(&g), Err(PlanError::NoTrustedDevice)));
    }

    #[test]
    fn single_device_graph() {
        let g = ResourceGraph::new(vec![Device::new("TEE_1", true, "A")]);
        let p = Problem::new(halving(4, &[10], 1), g, PrivacyPolicy::default()).unwrap();
        let r = p.plan::<Nanos>(5, &TreeConfig::new("TEE_1", vec![])).unwrap();
        assert_eq!(r.best.placement, Placement::whole(4, "TEE_1"));
        assert_eq!(r.all_candidates.len(), 1);
    }

    #[test]
    fn oracle_small_cases() {
        let g = four_devices();
        let p = Problem::new(halving(3, &[100, 300, 200], 5), g, PrivacyPolicy::default()).unwrap();
        let cfg = TreeConfig::new("TEE_1", vec![vec!["TEE_2".into()]]);
        let orders = vec![vec!["TEE_1".into()], vec!["TEE_1".into(), "TEE_2".into()]];
        let a = p.plan::<Nanos>(100, &cfg).unwrap();
        let b = p.brute_force_plan::<Nanos>(100, &orders).unwrap();
        assert_eq!(a.best.t_chunk, b.best.t_chunk);
        assert_eq!(a.all_candidates.len(), b.all_candidates.len());

        let one = Problem::new(
            halving(2, &[10], 1),
            ResourceGraph::new(vec![Device::new("TEE_1", true, "A")]),
            PrivacyPolicy::default(),
        )
        .unwrap();
        let r = one.brute_force_plan::<Nanos>(3, &[vec!["TEE_1".into()]]).unwrap();
        assert_eq!(r.best.placement, Placement::whole(2, "TEE_1"));
        assert_eq!(r.all_candidates.len(), 1);
    }

    #[test]
    fn oracle_bound_enforced() {
        let p = Problem::new(halving(8, &[10], 1), four_devices(), PrivacyPolicy::default()).unwrap();
        let mut big = p.net.clone();
        for i in 9..=11 {
            let mut l = big.layers[0].clone();
            l.index = i;
            l.op = LayerOp::Relu;
            big.layers.push(l);
        }
        let p = Problem::new(big, four_devices(), PrivacyPolicy::default()).unwrap();
        assert!(matches!(
            p.brute_force_plan::<Nanos>(1, &[vec!["TEE_1".into()]]),
            Err(PlanError::OracleBound { layers: 11, .. })
        ));
    }

    #[test]
    fn tie_break_prefers_fewer_segments() {
        // identical devices, one frame: splitting adds a transmit stage and overhead,
        // but with a free link and zero overhead the sums tie
        let g = ResourceGraph::new(vec![Device::new("TEE_1", true, "A"), Device::new("TEE_2", true, "A")]);
        let p = Problem::new(halving(3, &[10], 1), g, PrivacyPolicy::default())
            .unwrap()
            .with_params(CostParams { crypto_overhead: 0 });
        let cfg = TreeConfig::new("TEE_1", vec![vec!["TEE_2".into()]]);
        let r = p.plan::<Nanos>(1, &cfg).unwrap();
        assert_eq!(r.best.placement, Placement::whole(3, "TEE_1"));
        assert_eq!(r, p.plan::<Nanos>(1, &cfg).unwrap());
    }

    #[test]
    fn replan_keeps_within_tolerance() {
        let p = Problem::new(halving(6, &[100], 5), four_devices(), PrivacyPolicy::default()).unwrap();
        let cfg = TreeConfig::two_host_default();
        let current = p.plan::<Nanos>(100, &cfg).unwrap();
        let observed: BTreeMap<usize, Nanos> = (1..=6)
            .map(|x| {
                let d = current.best.placement.device_of(x).unwrap();
                (x, p.net.exec_time(x, d).unwrap() * 11 / 10)
            })
            .collect();
        assert_eq!(
            p.replan_if_deviation(&current, &cfg, &observed, 0.2).unwrap(),
            Replan::Keep
        );
    }

    #[test]
    fn replan_on_slow_layer() {
        let p = Problem::new(halving(6, &[100], 5), four_devices(), PrivacyPolicy::default()).unwrap();
        let cfg = TreeConfig::two_host_default();
        let current = p.plan::<Nanos>(100, &cfg).unwrap();
        let d = current.best.placement.device_of(1).unwrap();
        let observed = BTreeMap::from([(1, 2 * p.net.exec_time(1, d).unwrap())]);
        let Replan::Replanned(next) = p.replan_if_deviation(&current, &cfg, &observed, 0.2).unwrap() else {
            panic!("expected a new plan");
        };
        let old_under_observed = p
            .with_observed_times(&current.best.placement, &observed)
            .evaluate::<Nanos>(&current.best.placement, 100)
            .unwrap();
        assert!(next.best.t_chunk <= old_under_observed.t_chunk);
    }

    #[test]
    fn strategies_skip_absent_devices() {
        let g = ResourceGraph::new(vec![Device::new("TEE_1", true, "A"), Device::new("TEE_2", true, "B")])
            .with_link("A", "B", 3.75e6);
        let p = Problem::new(halving(6, &[100], 5), g.clone(), PrivacyPolicy::default()).unwrap();
        let rows = p
            .strategy_compare::<Nanos>(100, &TreeConfig::for_graph(&g).unwrap())
            .unwrap();
        assert_eq!(rows.len(), 5);
        assert_eq!(rows[0].speedup, Some(1.0));
        assert_eq!(rows[2].strategy, super::Strategy::TeeAndAccelerator);
        assert_eq!(rows[2].note.as_deref(), Some("skipped: device absent"));
        assert!(rows[3].speedup.unwrap() > 1.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn returned_plans_are_admissible_and_enlarging_helps(
            m in 1usize..8,
            tee in proptest::collection::vec(1u64..400, 1..5),
            gpu in 1u64..50,
            frames in 1u64..200,
            c1 in any::<bool>(),
        ) {
            let mode = if c1 { PrivacyMode::C1Only } else { PrivacyMode::C2Allowed };
            let p = Problem::new(halving(m, &tee, gpu), four_devices(), PrivacyPolicy::new(20, mode)).unwrap();
            let small = TreeConfig::new("TEE_1", vec![vec!["TEE_2".into()]]);
            let big = TreeConfig::two_host_default();
            let a = p.plan::<Nanos>(frames, &small).unwrap();
            let b = p.plan::<Nanos>(frames, &big).unwrap();
            prop_assert!(p.is_admissible(&a.best.placement));
            prop_assert!(p.is_admissible(&b.best.placement));
            prop_assert!(b.best.t_chunk <= a.best.t_chunk);
            prop_assert!(b.all_candidates.len() <= m * (m + 1) + 1);
        }

        #[test]
        fn candidate_counts_match_closed_form(m in 1usize..30) {
            // 1 + 3(M-1) + 2*C(M-1, 2) = M^2
            let c = enumerate_candidates(m, &four_devices(), &TreeConfig::two_host_default()).unwrap();
            prop_assert_eq!(c.len(), m * m);
        }
    }
}
