//! Privacy-aware partitioning of a neural-network layer chain across
//! trusted enclaves and untrusted accelerators.
//!
//! The planner enumerates placements from a placement tree, costs each with
//! a pipelined chunk-completion model, filters by the privacy policy and
//! picks the fastest. A discrete-event simulator replays any placement frame
//! by frame and agrees with the analytic model exactly in integer
//! nanoseconds.
//!
//! Cost and simulation types are generic over [`TimeScalar`]; the aliases
//! below fix the scalar to exact nanoseconds or to `f64` seconds.
//!
//! ```no_run
//! use tee_planner::{io, Nanos, PrivacyPolicy, Problem, TreeConfig};
//!
//! # fn main() -> Result<(), Box<dyn std::error::Error>> {
//! let net = io::load_profile("profile.json".as_ref())?;
//! let graph = io::load_resources("resources.json".as_ref())?;
//! let problem = Problem::new(net, graph, PrivacyPolicy::default())?;
//! let tree = TreeConfig::for_graph(&problem.graph)?;
//! let report = problem.plan::<Nanos>(1000, &tree)?;
//! println!("{} in {} ns", report.best.placement, report.best.t_chunk);
//! # Ok(())
//! # }
//! ```

pub mod cli;
pub mod cost;
pub mod io;
pub mod model;
pub mod planner;
pub mod privacy;
pub mod scalar;
pub mod shape;
pub mod sim;

pub use cost::{bottleneck, chunk_completion, decompose, single_frame_latency, CostParams, Stage, StageKind};
pub use model::{
    expand_placement, validate_resource_graph, ChunkSpec, Device, DeviceId, HostId, LayerKind, LayerOp, LayerSpec,
    NetworkProfile, Placement, ResourceGraph, Segment,
};
pub use planner::{enumerate_candidates, PlanError, Problem, Replan, Strategy, TreeConfig};
pub use privacy::{admissible, check_c1, check_c2, LeakageReport, PrivacyMode, PrivacyPolicy};
pub use scalar::{Nanos, TimeScalar};
pub use shape::{propagate_shapes, resolution_profile, LayerSignature, Resolution, TensorShape};
pub use sim::{simulate, validate_against_model};

pub type StagePlanNs = cost::StagePlan<Nanos>;
pub type StagePlanF64 = cost::StagePlan<f64>;
pub type StagePlanF32 = cost::StagePlan<f32>;

pub type SimResultNs = sim::SimResult<Nanos>;
pub type SimResultF64 = sim::SimResult<f64>;

pub type CandidateEvaluationNs = planner::CandidateEvaluation<Nanos>;
pub type CandidateEvaluationF64 = planner::CandidateEvaluation<f64>;

pub type PlanReportNs = planner::PlanReport<Nanos>;
pub type PlanReportF64 = planner::PlanReport<f64>;

pub type StrategyRowNs = planner::StrategyRow<Nanos>;
pub type StrategyRowF64 = planner::StrategyRow<f64>;
