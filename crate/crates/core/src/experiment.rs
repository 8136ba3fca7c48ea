//! Sweep orchestration: every (workload, arch) pair is loaded, mapped,
//! simulated and analysed, with per-pair outputs under
//! `out_dir/<workload>/<arch>/` and aggregates at `out_dir/`.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::analyzer::{
    self, analyze, average_across_configs, execution_breakdown, write_atomic, AnalyzeError, Averaging,
    ExecBreakdown, MetricsReport, ReportFormat,
};
use crate::arch::{parse_arch_file, parse_arch_with, ArchConfig, ArchError};
use crate::mapper::{build_messages, place_layers, MapError, MappingPolicy};
use crate::netsim::{simulate, SimError, SimOptions, TimedTrace};
use crate::trace;
use crate::workload::{load_workload, LayerGraph, WorkloadError};
use crate::zoo;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("no workloads given")]
    NoWorkloads,
    #[error("no architectures given")]
    NoArchs,
    #[error("unknown built-in workload `{0}`")]
    UnknownBuiltin(String),
    #[error("arch `{spec}`: {source}")]
    Arch { spec: String, source: ArchError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Analyze(#[from] AnalyzeError),
    #[error("thread pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WorkloadSource {
    File(PathBuf),
    Builtin(String),
}

impl WorkloadSource {
    /// Name used for the output directory before the workload is loaded.
    pub fn label(&self) -> String {
        match self {
            WorkloadSource::File(p) => {
                p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| p.display().to_string())
            }
            WorkloadSource::Builtin(n) => n.clone(),
        }
    }

    pub fn load(&self) -> Result<LayerGraph, ExperimentError> {
        match self {
            WorkloadSource::File(p) => Ok(load_workload(p)?),
            WorkloadSource::Builtin(n) => zoo::build(n).ok_or_else(|| ExperimentError::UnknownBuiltin(n.clone())),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub workloads: Vec<WorkloadSource>,
    /// Grid shorthand (`3x3`, `6x3 nop_bw=2`) or a config file path.
    pub archs: Vec<String>,
    pub policy: MappingPolicy,
    pub out_dir: PathBuf,
    pub sim: SimOptions,
    pub normalize: bool,
    pub format: ReportFormat,
    pub averaging: Averaging,
    /// Worker threads; 0 picks the rayon default.
    pub jobs: usize,
}

impl ExperimentSpec {
    pub fn new(workloads: Vec<WorkloadSource>, archs: Vec<String>, out_dir: impl Into<PathBuf>) -> Self {
        ExperimentSpec {
            workloads,
            archs,
            policy: MappingPolicy::AllChiplets,
            out_dir: out_dir.into(),
            sim: SimOptions::default(),
            normalize: false,
            format: ReportFormat::Csv,
            averaging: Averaging::MeanOfFractions,
            jobs: 0,
        }
    }
}

/// A resolved architecture with the label used in paths and reports.
#[derive(Debug, Clone)]
pub struct NamedArch {
    pub label: String,
    pub cfg: ArchConfig,
}

/// Resolve `spec` as a config file if one exists at that path, otherwise
/// as grid shorthand.
pub fn resolve_arch(spec: &str, normalize: bool) -> Result<NamedArch, ExperimentError> {
    let path = Path::new(spec);
    if path.is_file() {
        let text = fs::read_to_string(path).map_err(|source| ExperimentError::Io { path: path.into(), source })?;
        let cfg = parse_arch_file(&text, normalize)
            .map_err(|source| ExperimentError::Arch { spec: spec.to_string(), source })?;
        let label = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| cfg.grid_label());
        return Ok(NamedArch { label, cfg });
    }
    let cfg = parse_arch_with(spec, normalize)
        .map_err(|source| ExperimentError::Arch { spec: spec.to_string(), source })?;
    let mut tokens = spec.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty());
    let mut label = cfg.grid_label();
    tokens.next();
    for t in tokens {
        label.push('_');
        label.extend(t.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' }));
    }
    Ok(NamedArch { label, cfg })
}

/// Everything one pair produces.
#[derive(Debug, Clone)]
pub struct PairResult {
    pub report: MetricsReport,
    pub exec: ExecBreakdown,
    pub trace: TimedTrace,
}

/// Map, simulate and analyse one workload on one architecture.
pub fn run_pair(
    graph: &LayerGraph,
    arch: &NamedArch,
    policy: MappingPolicy,
    sim: SimOptions,
) -> Result<PairResult, ExperimentError> {
    let assignments = place_layers(graph, &arch.cfg, policy)?;
    let messages = build_messages(graph, &assignments, &arch.cfg)?;
    let timed = simulate(&messages, &assignments, graph, &arch.cfg, sim)?;
    let rows = trace::rows(&timed);
    let report = analyze(&graph.name, &arch.label, &rows, &arch.cfg);
    let exec = execution_breakdown(&report, timed.compute_cycles);
    Ok(PairResult { report, exec, trace: timed })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairFailure {
    pub workload: String,
    pub arch: String,
    pub error: String,
}

#[derive(Debug, Clone, Default)]
pub struct Outcome {
    /// Sorted by (workload, config).
    pub reports: Vec<MetricsReport>,
    pub exec: Vec<ExecBreakdown>,
    pub failures: Vec<PairFailure>,
    pub files: Vec<PathBuf>,
}

impl Outcome {
    pub fn success(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn exit_code(&self) -> i32 {
        i32::from(!self.success())
    }
}

fn write_file(path: &Path, body: &str) -> Result<PathBuf, ExperimentError> {
    write_atomic(path, body.as_bytes())?;
    Ok(path.to_path_buf())
}

fn create_dir(path: &Path) -> Result<(), ExperimentError> {
    fs::create_dir_all(path).map_err(|source| ExperimentError::Io { path: path.to_path_buf(), source })
}

fn emit_pair(
    out_dir: &Path,
    format: ReportFormat,
    r: &PairResult,
) -> Result<Vec<PathBuf>, ExperimentError> {
    let dir = out_dir.join(&r.report.workload).join(&r.report.config);
    create_dir(&dir)?;
    let mut files = vec![write_file(&dir.join("trace.csv"), &trace::to_csv(&trace::rows(&r.trace)))?];
    files.extend(analyzer::emit_report(std::slice::from_ref(&r.report), format, &dir)?);
    Ok(files)
}

type PairOutput = Result<(PairResult, Vec<PathBuf>), ExperimentError>;
type WorkloadOutput = (String, Result<Vec<(String, PairOutput)>, ExperimentError>);

/// Run the sweep. Errors are returned only for problems that affect the
/// whole sweep; a failing pair is recorded in [`Outcome::failures`].
pub fn run(spec: &ExperimentSpec) -> Result<Outcome, ExperimentError> {
    if spec.workloads.is_empty() {
        return Err(ExperimentError::NoWorkloads);
    }
    if spec.archs.is_empty() {
        return Err(ExperimentError::NoArchs);
    }
    create_dir(&spec.out_dir)?;

    let mut outcome = Outcome::default();
    let mut archs = Vec::new();
    for a in &spec.archs {
        match resolve_arch(a, spec.normalize) {
            Ok(named) => archs.push(named),
            Err(e) => {
                log::error!("{e}");
                outcome.failures.push(PairFailure { workload: "*".into(), arch: a.clone(), error: e.to_string() });
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.jobs)
        .build()
        .map_err(|e| ExperimentError::Pool(e.to_string()))?;

    let per_workload: Vec<WorkloadOutput> = pool.install(|| {
        spec.workloads
            .par_iter()
            .map(|w| {
                let label = w.label();
                let graph = match w.load() {
                    Ok(g) => g,
                    Err(e) => return (label, Err(e)),
                };
                let pairs = archs
                    .par_iter()
                    .map(|a| {
                        log::info!("running {} on {}", graph.name, a.label);
                        let out = run_pair(&graph, a, spec.policy, spec.sim).and_then(|r| {
                            let files = emit_pair(&spec.out_dir, spec.format, &r)?;
                            Ok((r, files))
                        });
                        (a.label.clone(), out)
                    })
                    .collect();
                (graph.name.clone(), Ok(pairs))
            })
            .collect()
    });

    for (workload, result) in per_workload {
        match result {
            Err(e) => {
                log::error!("workload {workload}: {e}");
                outcome.failures.push(PairFailure { workload, arch: "*".into(), error: e.to_string() });
            }
            Ok(pairs) => {
                for (arch, out) in pairs {
                    match out {
                        Ok((r, files)) => {
                            outcome.reports.push(r.report);
                            outcome.exec.push(r.exec);
                            outcome.files.extend(files);
                        }
                        Err(e) => {
                            log::error!("{workload} on {arch}: {e}");
                            outcome.failures.push(PairFailure { workload: workload.clone(), arch, error: e.to_string() });
                        }
                    }
                }
            }
        }
    }
    outcome.reports.sort_by(|a, b| (&a.workload, &a.config).cmp(&(&b.workload, &b.config)));
    outcome.exec.sort_by(|a, b| (&a.workload, &a.config).cmp(&(&b.workload, &b.config)));

    outcome.files.extend(analyzer::emit_report(&outcome.reports, spec.format, &spec.out_dir)?);
    if spec.format == ReportFormat::Csv {
        outcome
            .files
            .push(write_file(&spec.out_dir.join("exec_breakdown.csv"), &analyzer::exec_breakdown_csv(&outcome.exec))?);
        let avg = average_across_configs(&outcome.exec, spec.averaging);
        outcome.files.push(write_file(&spec.out_dir.join("heatmap.csv"), &analyzer::heatmap_csv(&avg))?);
    }
    Ok(outcome)
}
