//! Command-line front end: `shapes`, `plan`, `simulate` and `report`.
//!
//! Exit codes: 0 on success, 2 for unreadable or invalid input, 3 when the
//! privacy policy cannot be met (or a simulated placement violates it).

use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::cost::{bottleneck, single_frame_latency, CostParams, StageKind, StagePlan};
use crate::io::{load_placement, load_profile, load_resources, parse_json, FileError};
use crate::model::{DeviceId, NetworkProfile, Placement, ResourceGraph};
use crate::planner::{PlanError, PlanReport, Problem, StrategyRow, TreeConfig};
use crate::privacy::{check_c2, PrivacyMode, PrivacyPolicy, DEFAULT_DELTA};
use crate::scalar::{millis_to_nanos, nanos_to_millis, Nanos, TimeScalar};
use crate::shape::{propagate_shapes, LayerSignature};
use crate::sim::{simulate, write_trace};

pub const DEFAULT_FRAMES: u64 = 1000;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Infeasible(String),
    #[error("{0}")]
    PolicyViolation(String),
    #[error("{0}")]
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Infeasible(_) | CliError::PolicyViolation(_) => 3,
            CliError::Output(_) => 1,
        }
    }
}

impl From<FileError> for CliError {
    fn from(e: FileError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<PlanError> for CliError {
    fn from(e: PlanError) -> Self {
        match e {
            PlanError::Infeasible { .. } | PlanError::NoTrustedDevice => CliError::Infeasible(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "tee-planner",
    version,
    about = "Privacy-aware NN partitioning across enclaves and accelerators"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-layer output shapes, sizes, resolutions and cumulative time
    Shapes(ShapesArgs),
    /// Choose the fastest admissible placement
    Plan(PlanArgs),
    /// Replay a placement frame by frame
    Simulate(SimulateArgs),
    /// Compare the five partitioning strategies
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    /// Every layer on a trusted device
    C1,
    /// Untrusted devices allowed for sub-threshold inputs
    C2,
}

#[derive(Debug, Clone, Args)]
pub struct PolicyArgs {
    /// Resolution threshold in pixels per axis
    #[arg(long, default_value_t = DEFAULT_DELTA, value_parser = clap::value_parser!(u32).range(1..))]
    pub delta: u32,
    #[arg(long, value_enum, default_value_t = ModeArg::C2)]
    pub mode: ModeArg,
    /// Decryption cost per boundary received by a trusted device
    #[arg(long, default_value_t = 2.5)]
    pub crypto_overhead_ms: f64,
}

impl PolicyArgs {
    fn policy(&self) -> PrivacyPolicy {
        let mode = match self.mode {
            ModeArg::C1 => PrivacyMode::C1Only,
            ModeArg::C2 => PrivacyMode::C2Allowed,
        };
        PrivacyPolicy::new(self.delta, mode)
    }

    fn params(&self) -> Result<CostParams, CliError> {
        if !self.crypto_overhead_ms.is_finite() || self.crypto_overhead_ms < 0.0 {
            return Err(CliError::Input(
                "--crypto-overhead-ms must be a non-negative number".into(),
            ));
        }
        Ok(CostParams {
            crypto_overhead: millis_to_nanos(self.crypto_overhead_ms),
        })
    }
}

#[derive(Debug, Clone, Args)]
pub struct TreeArgs {
    /// `default` (derived from the graph), `two-host` (TEE_1 -> {E_1,E_2,TEE_2} -> {E_2}),
    /// `exhaustive`, or a JSON file with a tree configuration
    #[arg(long, default_value = "default")]
    pub tree: String,
    /// Require the last segment to run on the start device
    #[arg(long)]
    pub return_to_start: bool,
}

impl TreeArgs {
    fn config(&self, graph: &ResourceGraph) -> Result<TreeConfig, CliError> {
        let mut cfg = match self.tree.as_str() {
            "default" => TreeConfig::for_graph(graph)?,
            "two-host" => TreeConfig::two_host_default(),
            "exhaustive" => {
                let start = TreeConfig::for_graph(graph)?.start_device;
                TreeConfig::exhaustive(graph, &start, graph.devices.len().saturating_sub(1))
            }
            path => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Input(format!("cannot read tree file {path}: {e}")))?;
                parse_json::<TreeConfig>(&text, path)?
            }
        };
        cfg.require_return_to_start |= self.return_to_start;
        cfg.validate(graph)?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args)]
pub struct ShapesArgs {
    pub profile: PathBuf,
    /// Device whose times drive the cumulative fraction (default TEE_1, else the first listed)
    #[arg(long)]
    pub device: Option<String>,
    #[arg(long, conflicts_with = "csv")]
    pub json: bool,
    #[arg(long)]
    pub csv: bool,
}

#[derive(Debug, Clone, Args)]
pub struct PlanArgs {
    pub profile: PathBuf,
    pub resources: PathBuf,
    /// Frames per chunk
    #[arg(long, default_value_t = DEFAULT_FRAMES, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: u64,
    #[command(flatten)]
    pub policy: PolicyArgs,
    #[command(flatten)]
    pub tree: TreeArgs,
    #[arg(long, conflicts_with = "csv")]
    pub json: bool,
    #[arg(long)]
    pub csv: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    pub profile: PathBuf,
    pub resources: PathBuf,
    /// Placement file, or the output of `plan --json`
    pub placement: PathBuf,
    #[arg(long, default_value_t = DEFAULT_FRAMES, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: u64,
    #[command(flatten)]
    pub policy: PolicyArgs,
    /// Write one CSV row per frame and stage
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Simulate even if the placement breaks the privacy policy
    #[arg(long)]
    pub allow_violating: bool,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    pub profile: PathBuf,
    pub resources: PathBuf,
    #[arg(long, default_value_t = DEFAULT_FRAMES, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: u64,
    #[command(flatten)]
    pub policy: PolicyArgs,
    #[command(flatten)]
    pub tree: TreeArgs,
    #[arg(long, conflicts_with = "csv")]
    pub json: bool,
    #[arg(long)]
    pub csv: bool,
}

/// Runs a parsed command and returns what it prints on stdout.
pub fn execute(cli: &Cli) -> Result<String, CliError> {
    match &cli.command {
        Command::Shapes(a) => cmd_shapes(a),
        Command::Plan(a) => cmd_plan(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Report(a) => cmd_report(a),
    }
}

fn load_problem(profile: &Path, resources: &Path, policy: &PolicyArgs) -> Result<Problem, CliError> {
    let net = load_profile(profile)?;
    let graph = load_resources(resources)?;
    Ok(Problem::new(net, graph, policy.policy())?.with_params(policy.params()?))
}

fn table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let mut line = |cells: Vec<&str>| {
        let parts: Vec<String> = cells.iter().zip(&widths).map(|(c, &w)| format!("{c:<w$}")).collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(headers.to_vec());
    for row in rows {
        line(row.iter().map(String::as_str).collect());
    }
    out
}

fn csv_string<S: Serialize>(rows: &[S]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Output(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Output(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

fn json_string<S: Serialize>(value: &S) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("output serializes");
    s.push('\n');
    s
}

#[derive(Debug, Serialize)]
pub struct ShapeRow {
    pub layer: usize,
    pub name: String,
    pub kind: String,
    pub out_height: u32,
    pub out_width: u32,
    pub out_channels: u32,
    pub output_bytes: u64,
    pub resolution_height: u32,
    pub resolution_width: u32,
    pub cumulative_fraction: f64,
}

/// Per-layer rows with the cumulative share of `device` execution time.
pub fn shape_rows(net: &NetworkProfile, sigs: &[LayerSignature], device: &DeviceId) -> Result<Vec<ShapeRow>, CliError> {
    let total = net
        .total_time(device)
        .ok_or_else(|| CliError::Input(format!("some layers have no execution time on {device}")))?;
    let mut running: Nanos = 0;
    Ok(net
        .layers
        .iter()
        .zip(sigs)
        .map(|(layer, sig)| {
            running += layer.exec_time[device];
            ShapeRow {
                layer: layer.index,
                name: layer.name.clone().unwrap_or_default(),
                kind: layer.kind().to_string(),
                out_height: sig.output_shape.height,
                out_width: sig.output_shape.width,
                out_channels: sig.output_shape.channels,
                output_bytes: sig.output_bytes,
                resolution_height: sig.resolution.height,
                resolution_width: sig.resolution.width,
                cumulative_fraction: running as f64 / total as f64,
            }
        })
        .collect())
}

pub fn cmd_shapes(args: &ShapesArgs) -> Result<String, CliError> {
    let net = load_profile(&args.profile)?;
    let sigs = propagate_shapes(&net).map_err(|e| CliError::Input(e.to_string()))?;
    let device = match &args.device {
        Some(d) => DeviceId::new(d.clone()),
        None => {
            let tee = DeviceId::from("TEE_1");
            if net.layers[0].exec_time.contains_key(&tee) {
                tee
            } else {
                net.layers[0]
                    .exec_time
                    .keys()
                    .next()
                    .cloned()
                    .ok_or_else(|| CliError::Input("layer 1 has no execution times".into()))?
            }
        }
    };
    let rows = shape_rows(&net, &sigs, &device)?;
    if args.json {
        return Ok(json_string(&rows));
    }
    if args.csv {
        return csv_string(&rows);
    }
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.layer.to_string(),
                r.name.clone(),
                r.kind.clone(),
                format!("{}x{}x{}", r.out_height, r.out_width, r.out_channels),
                r.output_bytes.to_string(),
                format!("{}x{}", r.resolution_height, r.resolution_width),
                format!("{:.4}", r.cumulative_fraction),
            ]
        })
        .collect();
    let mut out = format!("input {} (cumulative time on {device})\n", net.input);
    out.push_str(&table(
        &["layer", "name", "kind", "output", "bytes", "resolution", "cum_time"],
        &body,
    ));
    Ok(out)
}

#[derive(Debug, Serialize)]
struct StageJson {
    #[serde(flatten)]
    kind: StageKind,
    latency_ns: Nanos,
}

fn stages_json(plan: &StagePlan<Nanos>) -> Vec<StageJson> {
    plan.stages
        .iter()
        .map(|s| StageJson {
            kind: s.kind.clone(),
            latency_ns: s.latency,
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct BestJson {
    placement: Placement,
    t_chunk_ns: Nanos,
    t_chunk_s: f64,
    single_frame_ns: Nanos,
    bottleneck_stage: usize,
    bottleneck_ns: Nanos,
    max_similarity: u32,
    violating_layers: Vec<usize>,
    admissible: bool,
}

#[derive(Debug, Serialize)]
struct CandidateJson {
    placement: String,
    t_chunk_ns: Nanos,
    sim: u32,
    admissible: bool,
}

#[derive(Debug, Serialize)]
struct PlanJson {
    frames: u64,
    delta: u32,
    mode: PrivacyMode,
    crypto_overhead_ns: Nanos,
    /// Where per-boundary decryption time is charged.
    decryption_charged_to: &'static str,
    tree: TreeConfig,
    candidate_count: usize,
    admissible_count: usize,
    best: BestJson,
    stages: Vec<StageJson>,
    candidates: Vec<CandidateJson>,
}

fn plan_json(problem: &Problem, report: &PlanReport<Nanos>, tree: &TreeConfig) -> Result<PlanJson, CliError> {
    let plan = problem.stage_plan::<Nanos>(&report.best.placement)?;
    let (b_idx, b_lat) = bottleneck(&plan);
    let leak = check_c2(
        &report.best.placement,
        &problem.graph,
        problem.signatures(),
        &problem.policy,
    );
    Ok(PlanJson {
        frames: report.frames,
        delta: problem.policy.delta,
        mode: problem.policy.mode,
        crypto_overhead_ns: problem.params.crypto_overhead,
        decryption_charged_to: "receiving trusted compute stage",
        tree: tree.clone(),
        candidate_count: report.all_candidates.len(),
        admissible_count: report.all_candidates.iter().filter(|c| c.admissible).count(),
        best: BestJson {
            placement: report.best.placement.clone(),
            t_chunk_ns: report.best.t_chunk,
            t_chunk_s: report.best.t_chunk.to_seconds(),
            single_frame_ns: single_frame_latency(&plan),
            bottleneck_stage: b_idx,
            bottleneck_ns: b_lat,
            max_similarity: leak.max_similarity,
            violating_layers: leak.violating_layers,
            admissible: report.best.admissible,
        },
        stages: stages_json(&plan),
        candidates: report
            .all_candidates
            .iter()
            .map(|c| CandidateJson {
                placement: c.placement.to_string(),
                t_chunk_ns: c.t_chunk,
                sim: c.sim,
                admissible: c.admissible,
            })
            .collect(),
    })
}

fn secs(ns: Nanos) -> String {
    format!("{:.6} s", ns.to_seconds())
}

pub fn cmd_plan(args: &PlanArgs) -> Result<String, CliError> {
    let problem = load_problem(&args.profile, &args.resources, &args.policy)?;
    let tree = args.tree.config(&problem.graph)?;
    let report = problem.plan::<Nanos>(args.n, &tree)?;
    let doc = plan_json(&problem, &report, &tree)?;
    if args.json {
        return Ok(json_string(&doc));
    }
    if args.csv {
        #[derive(Serialize)]
        struct Row<'a> {
            placement: &'a str,
            t_chunk_ms: f64,
            sim: u32,
            admissible: bool,
            best: bool,
        }
        let best = report.best.placement.to_string();
        let rows: Vec<Row> = doc
            .candidates
            .iter()
            .map(|c| Row {
                placement: &c.placement,
                t_chunk_ms: nanos_to_millis(c.t_chunk_ns),
                sim: c.sim,
                admissible: c.admissible,
                best: c.placement == best,
            })
            .collect();
        return csv_string(&rows);
    }

    let mut out = String::new();
    let _ = writeln!(
        out,
        "best placement (n = {}, delta = {}, mode = {}):",
        doc.frames,
        doc.delta,
        mode_name(doc.mode)
    );
    let segs: Vec<Vec<String>> = doc
        .best
        .placement
        .segments
        .iter()
        .map(|s| vec![format!("{}-{}", s.first, s.last), s.device.to_string()])
        .collect();
    out.push_str(&indent(&table(&["layers", "device"], &segs)));
    let _ = writeln!(
        out,
        "predicted t_chunk:     {} ({} ns)",
        secs(doc.best.t_chunk_ns),
        doc.best.t_chunk_ns
    );
    let _ = writeln!(out, "single-frame latency:  {}", secs(doc.best.single_frame_ns));
    let _ = writeln!(
        out,
        "bottleneck:            stage {} ({})",
        doc.best.bottleneck_stage,
        secs(doc.best.bottleneck_ns)
    );
    let _ = writeln!(out, "max leakage (pixels):  {}", doc.best.max_similarity);
    let _ = writeln!(
        out,
        "candidates evaluated:  {} ({} admissible)",
        doc.candidate_count, doc.admissible_count
    );
    Ok(out)
}

fn mode_name(mode: PrivacyMode) -> &'static str {
    match mode {
        PrivacyMode::C1Only => "c1",
        PrivacyMode::C2Allowed => "c2",
    }
}

fn indent(s: &str) -> String {
    s.lines().map(|l| format!("  {l}\n")).collect()
}

#[derive(Debug, Serialize)]
struct SimStageJson {
    index: usize,
    kind: &'static str,
    device: String,
    latency_ns: Nanos,
    utilization: f64,
}

#[derive(Debug, Serialize)]
struct SimJson {
    frames: u64,
    placement: Placement,
    completion_ns: Nanos,
    completion_s: f64,
    single_frame_ns: Nanos,
    admissible: bool,
    stages: Vec<SimStageJson>,
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<String, CliError> {
    let problem = load_problem(&args.profile, &args.resources, &args.policy)?;
    let placement = load_placement(&args.placement)?;
    placement
        .validate(problem.layers())
        .map_err(|e| CliError::Input(format!("placement does not match the profile: {e}")))?;
    let admissible = problem.is_admissible(&placement);
    if !admissible && !args.allow_violating {
        let leak = check_c2(&placement, &problem.graph, problem.signatures(), &problem.policy);
        return Err(CliError::PolicyViolation(format!(
            "placement violates the privacy policy at layers {:?} (use --allow-violating to simulate anyway)",
            leak.violating_layers
        )));
    }
    let plan = problem.stage_plan::<Nanos>(&placement)?;
    let result = simulate(&plan, args.n);

    if let Some(path) = &args.trace {
        let file = File::create(path).map_err(|e| CliError::Output(format!("cannot write {}: {e}", path.display())))?;
        write_trace(&plan, &result, BufWriter::new(file)).map_err(|e| CliError::Output(e.to_string()))?;
    }

    let stages: Vec<SimStageJson> = plan
        .stages
        .iter()
        .enumerate()
        .map(|(i, s)| SimStageJson {
            index: i,
            kind: s.kind_name(),
            device: s.label(),
            latency_ns: s.latency,
            utilization: result.per_stage_busy[i],
        })
        .collect();
    let doc = SimJson {
        frames: args.n,
        placement,
        completion_ns: result.completion,
        completion_s: result.completion.to_seconds(),
        single_frame_ns: single_frame_latency(&plan),
        admissible,
        stages,
    };
    if args.json {
        return Ok(json_string(&doc));
    }
    let mut out = String::new();
    let _ = writeln!(out, "placement: {}", doc.placement);
    let _ = writeln!(
        out,
        "measured completion ({} frames): {} ({} ns)",
        doc.frames,
        secs(doc.completion_ns),
        doc.completion_ns
    );
    let _ = writeln!(
        out,
        "single-frame latency: {} ({} ns)",
        secs(doc.single_frame_ns),
        doc.single_frame_ns
    );
    if !admissible {
        let _ = writeln!(out, "warning: placement violates the privacy policy");
    }
    let rows: Vec<Vec<String>> = doc
        .stages
        .iter()
        .map(|s| {
            vec![
                s.index.to_string(),
                s.kind.to_string(),
                s.device.clone(),
                format!("{:.3}", nanos_to_millis(s.latency_ns)),
                format!("{:.4}", s.utilization),
            ]
        })
        .collect();
    out.push_str(&table(&["stage", "kind", "device", "latency_ms", "utilization"], &rows));
    Ok(out)
}

#[derive(Debug, Serialize)]
struct ReportCsvRow {
    strategy: String,
    t_chunk_ms: String,
    speedup: String,
}

pub fn strategy_rows(args: &ReportArgs) -> Result<Vec<StrategyRow<Nanos>>, CliError> {
    let problem = load_problem(&args.profile, &args.resources, &args.policy)?;
    let tree = args.tree.config(&problem.graph)?;
    Ok(problem.strategy_compare::<Nanos>(args.n, &tree)?)
}

pub fn cmd_report(args: &ReportArgs) -> Result<String, CliError> {
    let rows = strategy_rows(args)?;
    if args.json {
        return Ok(json_string(&rows));
    }
    if args.csv {
        let csv_rows: Vec<ReportCsvRow> = rows
            .iter()
            .map(|r| ReportCsvRow {
                strategy: r.strategy.label().to_string(),
                t_chunk_ms: r.t_chunk.map(|t| nanos_to_millis(t).to_string()).unwrap_or_default(),
                speedup: match (r.speedup, &r.note) {
                    (Some(s), _) => format!("{s:.4}"),
                    (None, Some(note)) => note.clone(),
                    (None, None) => String::new(),
                },
            })
            .collect();
        return csv_string(&csv_rows);
    }
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.strategy.label().to_string(),
                r.t_chunk
                    .map(|t| format!("{:.3}", nanos_to_millis(t)))
                    .unwrap_or_else(|| "-".into()),
                r.speedup.map(|s| format!("{s:.3}x")).unwrap_or_else(|| "-".into()),
                match (&r.placement, &r.note) {
                    (Some(p), _) => p.to_string(),
                    (None, Some(n)) => n.clone(),
                    (None, None) => String::new(),
                },
            ]
        })
        .collect();
    let mut out = format!("strategy comparison (n = {})\n", args.n);
    out.push_str(&table(&["strategy", "t_chunk_ms", "speedup", "placement"], &body));
    Ok(out)
}
