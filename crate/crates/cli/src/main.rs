use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use chiplet_lab_core::analyzer::{
    self, analyze, Averaging, HopKind, ReportFormat,
};
use chiplet_lab_core::experiment::{self, resolve_arch, ExperimentSpec, WorkloadSource};
use chiplet_lab_core::mapper::MappingPolicy;
use chiplet_lab_core::netsim::SimOptions;
use chiplet_lab_core::{trace, zoo};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "chiplet-lab", version, about = "Chiplet NoC/NoP/DRAM traffic characterization")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a (workload x arch) sweep.
    Run(RunArgs),
    /// Analyse a dumped trace file.
    Analyze(AnalyzeArgs),
    /// Write the built-in workloads as JSON files.
    GenWorkloads {
        #[arg(long, default_value = "workloads")]
        out: PathBuf,
    },
    /// List built-in workload names.
    List,
}

#[derive(Args)]
struct RunArgs {
    /// Workload JSON files or glob patterns (repeatable).
    #[arg(long = "workloads", short = 'w', num_args = 1..)]
    workloads: Vec<String>,
    /// Built-in workload names (repeatable); `all` selects every one.
    #[arg(long = "builtin", num_args = 1..)]
    builtin: Vec<String>,
    /// Grid shorthand such as `3x3` or a config file path (repeatable).
    #[arg(long = "arch", short = 'a', required = true, num_args = 1..)]
    archs: Vec<String>,
    #[arg(long, default_value = "all")]
    policy: MappingPolicy,
    #[arg(long, env = "CHIPLET_LAB_OUT", default_value = "results")]
    out: PathBuf,
    #[arg(long)]
    store_and_forward: bool,
    #[arg(long)]
    serial_multicast: bool,
    /// Read `AxB` as rows=min(A,B), cols=max(A,B).
    #[arg(long)]
    normalize: bool,
    /// Worker threads (0 = one per core).
    #[arg(long, short = 'j', default_value_t = 0)]
    jobs: usize,
    #[arg(long, default_value = "csv")]
    format: ReportFormat,
    /// Heatmap rows as fraction of summed cycles instead of mean of fractions.
    #[arg(long)]
    fraction_of_means: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// trace.csv produced by `run`.
    trace: PathBuf,
    #[arg(long, short = 'a')]
    arch: String,
    #[arg(long, default_value = "trace")]
    workload: String,
    #[arg(long)]
    normalize: bool,
    /// Directory for the report files; prints a summary only if absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "csv")]
    format: ReportFormat,
}

fn expand_workloads(patterns: &[String], builtin: &[String]) -> Result<Vec<WorkloadSource>> {
    let mut out = Vec::new();
    for p in patterns {
        let mut matched: Vec<PathBuf> = glob::glob(p)
            .with_context(|| format!("bad glob `{p}`"))?
            .filter_map(Result::ok)
            .collect();
        matched.sort();
        if matched.is_empty() {
            // keep the literal path so the failure is reported per pair
            out.push(WorkloadSource::File(PathBuf::from(p)));
        } else {
            out.extend(matched.into_iter().map(WorkloadSource::File));
        }
    }
    for b in builtin {
        if b == "all" {
            out.extend(zoo::WORKLOADS.iter().map(|n| WorkloadSource::Builtin(n.to_string())));
        } else {
            out.push(WorkloadSource::Builtin(b.clone()));
        }
    }
    if out.is_empty() {
        bail!("no workloads: pass --workloads <glob> or --builtin <name>");
    }
    Ok(out)
}

fn cmd_run(a: RunArgs) -> Result<ExitCode> {
    let workloads = expand_workloads(&a.workloads, &a.builtin)?;
    let spec = ExperimentSpec {
        workloads,
        archs: a.archs,
        policy: a.policy,
        out_dir: a.out,
        sim: SimOptions { store_and_forward: a.store_and_forward, serial_multicast: a.serial_multicast },
        normalize: a.normalize,
        format: a.format,
        averaging: if a.fraction_of_means { Averaging::FractionOfMeans } else { Averaging::MeanOfFractions },
        jobs: a.jobs,
    };
    let outcome = experiment::run(&spec)?;
    println!(
        "{} pair(s) ok, {} failed; reports in {}",
        outcome.reports.len(),
        outcome.failures.len(),
        spec.out_dir.display()
    );
    for f in &outcome.failures {
        eprintln!("failed: {} on {}: {}", f.workload, f.arch, f.error);
    }
    Ok(if outcome.success() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn cmd_analyze(a: AnalyzeArgs) -> Result<ExitCode> {
    let arch = resolve_arch(&a.arch, a.normalize)?;
    let text = std::fs::read_to_string(&a.trace).with_context(|| format!("reading {}", a.trace.display()))?;
    let rows = trace::parse_csv(&text).with_context(|| a.trace.display().to_string())?;
    let report = analyze(&a.workload, &arch.label, &rows, &arch.cfg);
    println!(
        "{} on {}: {} messages ({} multicast), comm {} cycles, noc {:.3} nop {:.3} dram {:.3}",
        report.workload,
        report.config,
        report.n_messages(),
        report.n_multicast,
        report.total_comm_cycles,
        report.frac_noc,
        report.frac_nop,
        report.frac_dram
    );
    for kind in [HopKind::Unicast, HopKind::Multicast] {
        if let Some(h) = report.mean_hops(kind) {
            println!("  mean {kind} hops {h:.2}");
        }
    }
    if let Some(dir) = a.out {
        for p in analyzer::emit_report(&[report], a.format, &dir)? {
            println!("wrote {}", p.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_gen(out: PathBuf) -> Result<ExitCode> {
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    for g in zoo::all() {
        let path = out.join(format!("{}.json", g.name));
        analyzer::write_atomic(&path, g.to_json().as_bytes())?;
        println!("wrote {} ({} layers)", path.display(), g.len());
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let res = match cli.cmd {
        Cmd::Run(a) => cmd_run(a),
        Cmd::Analyze(a) => cmd_analyze(a),
        Cmd::GenWorkloads { out } => cmd_gen(out),
        Cmd::List => {
            for n in zoo::WORKLOADS {
                println!("{n}");
            }
            Ok(ExitCode::SUCCESS)
        }
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
