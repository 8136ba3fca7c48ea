//! Communication metrics over trace records: NoC/NoP/DRAM time breakdown,
//! unicast/multicast counts, multicast destination-set sizes and hop
//! distributions.
//!
//! Everything here is computed from [`TraceRow`]s plus the architecture, so
//! analysing a dumped trace file gives the same report as analysing the
//! simulator's output in memory.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::ArchConfig;
use crate::netsim::{message_busy, multicast_tree, Busy};
use crate::trace::TraceRow;

#[derive(Debug, Error)]
pub enum AnalyzeError {
    #[error("no reports for config `{0}`")]
    EmptyGroup(String),
    #[error("cannot re-route trace record {0}: {1}")]
    Route(u64, crate::arch::ArchError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HopKind {
    Unicast,
    Multicast,
}

impl fmt::Display for HopKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HopKind::Unicast => "unicast",
            HopKind::Multicast => "multicast",
        })
    }
}

/// Hop metric used for multicast messages.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum HopMetric {
    /// Links in the multicast tree.
    #[default]
    TreeLinks,
    /// Longest root-to-destination path.
    LongestPath,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    pub frac_noc: f64,
    pub frac_nop: f64,
    pub frac_dram: f64,
    /// Set when there was no communication; all fractions are then 0.
    pub empty: bool,
}

impl Breakdown {
    pub fn from_busy(b: Busy) -> Self {
        let total = b.total();
        if total == 0 {
            return Breakdown { frac_noc: 0.0, frac_nop: 0.0, frac_dram: 0.0, empty: true };
        }
        let t = total as f64;
        Breakdown {
            frac_noc: b.noc as f64 / t,
            frac_nop: b.nop as f64 / t,
            frac_dram: b.dram as f64 / t,
            empty: false,
        }
    }
}

pub type McastHist = BTreeMap<u32, u64>;
pub type HopHist = BTreeMap<HopKind, BTreeMap<u32, u64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub workload: String,
    pub config: String,
    pub noc_cycles: u64,
    pub nop_cycles: u64,
    pub dram_cycles: u64,
    pub total_comm_cycles: u64,
    pub makespan: u64,
    pub frac_noc: f64,
    pub frac_nop: f64,
    pub frac_dram: f64,
    pub n_unicast: u64,
    pub n_multicast: u64,
    pub mcast_hist: McastHist,
    pub hop_hist: HopHist,
}

impl MetricsReport {
    pub fn busy(&self) -> Busy {
        Busy { noc: self.noc_cycles, nop: self.nop_cycles, dram: self.dram_cycles }
    }

    pub fn breakdown(&self) -> Breakdown {
        Breakdown::from_busy(self.busy())
    }

    pub fn n_messages(&self) -> u64 {
        self.n_unicast + self.n_multicast
    }

    /// Share of multicasts that reach exactly `n_dsts` chiplets, in percent.
    pub fn multicast_share(&self, n_dsts: u32) -> f64 {
        if self.n_multicast == 0 {
            return 0.0;
        }
        100.0 * self.mcast_hist.get(&n_dsts).copied().unwrap_or(0) as f64 / self.n_multicast as f64
    }

    /// Mean hop count of one message kind, if any were sent.
    pub fn mean_hops(&self, kind: HopKind) -> Option<f64> {
        let h = self.hop_hist.get(&kind)?;
        let n: u64 = h.values().sum();
        if n == 0 {
            return None;
        }
        let s: u64 = h.iter().map(|(&hops, &c)| hops as u64 * c).sum();
        Some(s as f64 / n as f64)
    }
}

/// Busy cycles per resource, recomputed from the records.
pub fn busy_ledger(rows: &[TraceRow], cfg: &ArchConfig) -> Busy {
    let mut b = Busy::default();
    for r in rows {
        let m = message_busy(r.src, &r.dsts, r.bytes, r.hops, cfg);
        b.noc += m.noc;
        b.nop += m.nop;
        b.dram += m.dram;
    }
    b
}

pub fn time_breakdown(rows: &[TraceRow], cfg: &ArchConfig) -> Breakdown {
    Breakdown::from_busy(busy_ledger(rows, cfg))
}

/// Multicast messages bucketed by destination count, with their total.
pub fn multicast_histogram(rows: &[TraceRow]) -> (McastHist, u64) {
    let mut hist = McastHist::new();
    let mut n = 0;
    for r in rows.iter().filter(|r| r.dsts.len() >= 2) {
        *hist.entry(r.dsts.len() as u32).or_insert(0) += 1;
        n += 1;
    }
    (hist, n)
}

pub fn hop_histogram(rows: &[TraceRow]) -> HopHist {
    let mut hist = HopHist::new();
    for r in rows {
        let kind = if r.dsts.len() >= 2 { HopKind::Multicast } else { HopKind::Unicast };
        *hist.entry(kind).or_default().entry(r.hops).or_insert(0) += 1;
    }
    hist
}

/// Hop histogram under an alternative multicast hop metric.
pub fn hop_histogram_with(
    rows: &[TraceRow],
    cfg: &ArchConfig,
    metric: HopMetric,
) -> Result<HopHist, AnalyzeError> {
    if metric == HopMetric::TreeLinks {
        return Ok(hop_histogram(rows));
    }
    let mut hist = HopHist::new();
    for r in rows {
        let tree = multicast_tree(r.src, &r.dsts, cfg).map_err(|e| AnalyzeError::Route(r.msg_id, e))?;
        let kind = if r.dsts.len() >= 2 { HopKind::Multicast } else { HopKind::Unicast };
        *hist.entry(kind).or_default().entry(tree.depth).or_insert(0) += 1;
    }
    Ok(hist)
}

pub fn analyze(workload: &str, config: &str, rows: &[TraceRow], cfg: &ArchConfig) -> MetricsReport {
    let busy = busy_ledger(rows, cfg);
    let bd = Breakdown::from_busy(busy);
    let (mcast_hist, n_multicast) = multicast_histogram(rows);
    MetricsReport {
        workload: workload.to_string(),
        config: config.to_string(),
        noc_cycles: busy.noc,
        nop_cycles: busy.nop,
        dram_cycles: busy.dram,
        total_comm_cycles: busy.total(),
        makespan: rows.iter().map(|r| r.end).max().unwrap_or(0),
        frac_noc: bd.frac_noc,
        frac_nop: bd.frac_nop,
        frac_dram: bd.frac_dram,
        n_unicast: rows.len() as u64 - n_multicast,
        n_multicast,
        mcast_hist,
        hop_hist: hop_histogram(rows),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Linear-interpolation quantile (Hyndman-Fan type 7) of sorted data.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn box_stats(values: &[f64]) -> Option<BoxStats> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(BoxStats {
        min: v[0],
        q1: quantile(&v, 0.25),
        median: quantile(&v, 0.5),
        q3: quantile(&v, 0.75),
        max: v[v.len() - 1],
    })
}

/// Five-number summary of the NoP fraction across workloads, per config.
pub fn nop_ratio_stats(
    groups: &BTreeMap<String, Vec<MetricsReport>>,
) -> Result<BTreeMap<String, BoxStats>, AnalyzeError> {
    groups
        .iter()
        .map(|(config, reports)| {
            let fr: Vec<f64> = reports.iter().map(|r| r.frac_nop).collect();
            box_stats(&fr)
                .map(|s| (config.clone(), s))
                .ok_or_else(|| AnalyzeError::EmptyGroup(config.clone()))
        })
        .collect()
}

pub fn group_by_config(reports: &[MetricsReport]) -> BTreeMap<String, Vec<MetricsReport>> {
    let mut g: BTreeMap<String, Vec<MetricsReport>> = BTreeMap::new();
    for r in reports {
        g.entry(r.config.clone()).or_default().push(r.clone());
    }
    g
}

/// Share of execution activity per resource, compute included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecBreakdown {
    pub workload: String,
    pub config: String,
    pub compute_cycles: u64,
    pub noc_cycles: u64,
    pub nop_cycles: u64,
    pub dram_cycles: u64,
    pub frac_compute: f64,
    pub frac_noc: f64,
    pub frac_nop: f64,
    pub frac_dram: f64,
}

pub fn execution_breakdown(report: &MetricsReport, compute_cycles: u64) -> ExecBreakdown {
    let total = (report.total_comm_cycles + compute_cycles).max(1) as f64;
    ExecBreakdown {
        workload: report.workload.clone(),
        config: report.config.clone(),
        compute_cycles,
        noc_cycles: report.noc_cycles,
        nop_cycles: report.nop_cycles,
        dram_cycles: report.dram_cycles,
        frac_compute: compute_cycles as f64 / total,
        frac_noc: report.noc_cycles as f64 / total,
        frac_nop: report.nop_cycles as f64 / total,
        frac_dram: report.dram_cycles as f64 / total,
    }
}

/// How per-config breakdowns are combined into one row per workload.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Averaging {
    #[default]
    MeanOfFractions,
    FractionOfMeans,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadAverage {
    pub workload: String,
    pub configs: usize,
    pub frac_compute: f64,
    pub frac_noc: f64,
    pub frac_nop: f64,
    pub frac_dram: f64,
}

pub fn average_across_configs(rows: &[ExecBreakdown], mode: Averaging) -> Vec<WorkloadAverage> {
    let mut by: BTreeMap<&str, Vec<&ExecBreakdown>> = BTreeMap::new();
    for r in rows {
        by.entry(&r.workload).or_default().push(r);
    }
    by.into_iter()
        .map(|(w, rs)| {
            let n = rs.len() as f64;
            let (c, noc, nop, dram) = match mode {
                Averaging::MeanOfFractions => (
                    rs.iter().map(|r| r.frac_compute).sum::<f64>() / n,
                    rs.iter().map(|r| r.frac_noc).sum::<f64>() / n,
                    rs.iter().map(|r| r.frac_nop).sum::<f64>() / n,
                    rs.iter().map(|r| r.frac_dram).sum::<f64>() / n,
                ),
                Averaging::FractionOfMeans => {
                    let c: u64 = rs.iter().map(|r| r.compute_cycles).sum();
                    let noc: u64 = rs.iter().map(|r| r.noc_cycles).sum();
                    let nop: u64 = rs.iter().map(|r| r.nop_cycles).sum();
                    let dram: u64 = rs.iter().map(|r| r.dram_cycles).sum();
                    let t = (c + noc + nop + dram).max(1) as f64;
                    (c as f64 / t, noc as f64 / t, nop as f64 / t, dram as f64 / t)
                }
            };
            WorkloadAverage {
                workload: w.to_string(),
                configs: rs.len(),
                frac_compute: c,
                frac_noc: noc,
                frac_nop: nop,
                frac_dram: dram,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum ReportFormat {
    /// CSV tables plus `summary.json`.
    #[default]
    Csv,
    /// `summary.json` only.
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            _ => Err(format!("unknown report format `{s}` (expected csv or json)")),
        }
    }
}

/// Write `contents` to `path` through a sibling temp file and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), AnalyzeError> {
    let io = |source| AnalyzeError::Io { path: path.to_path_buf(), source };
    let file_name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{}.tmp{}", file_name, std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(contents).map_err(io)?;
    f.sync_all().map_err(io)?;
    drop(f);
    fs::rename(&tmp, path).map_err(io)
}

fn sorted(reports: &[MetricsReport]) -> Vec<&MetricsReport> {
    let mut v: Vec<&MetricsReport> = reports.iter().collect();
    v.sort_by(|a, b| (&a.workload, &a.config).cmp(&(&b.workload, &b.config)));
    v
}

pub fn breakdown_csv(reports: &[MetricsReport]) -> String {
    let mut s = String::from(
        "workload,config,noc_cycles,nop_cycles,dram_cycles,total_comm_cycles,makespan,frac_noc,frac_nop,frac_dram\n",
    );
    for r in sorted(reports) {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.workload,
            r.config,
            r.noc_cycles,
            r.nop_cycles,
            r.dram_cycles,
            r.total_comm_cycles,
            r.makespan,
            r.frac_noc,
            r.frac_nop,
            r.frac_dram
        ));
    }
    s
}

pub fn mcast_hist_csv(reports: &[MetricsReport]) -> String {
    let mut s = String::from("workload,config,n_dsts,messages\n");
    for r in sorted(reports) {
        for (n, c) in &r.mcast_hist {
            s.push_str(&format!("{},{},{},{}\n", r.workload, r.config, n, c));
        }
    }
    s
}

pub fn hop_hist_csv(reports: &[MetricsReport]) -> String {
    let mut s = String::from("workload,config,kind,hops,messages\n");
    for r in sorted(reports) {
        for (kind, h) in &r.hop_hist {
            for (hops, c) in h {
                s.push_str(&format!("{},{},{},{},{}\n", r.workload, r.config, kind, hops, c));
            }
        }
    }
    s
}

pub fn nop_box_csv(stats: &BTreeMap<String, BoxStats>, counts: &BTreeMap<String, usize>) -> String {
    let mut s = String::from("config,workloads,min,q1,median,q3,max\n");
    for (config, b) in stats {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            config,
            counts.get(config).copied().unwrap_or(0),
            b.min,
            b.q1,
            b.median,
            b.q3,
            b.max
        ));
    }
    s
}

pub fn summary_json(reports: &[MetricsReport]) -> String {
    let v: Vec<&MetricsReport> = sorted(reports);
    let mut s = serde_json::to_string_pretty(&v).expect("reports serialize");
    s.push('\n');
    s
}

pub fn parse_summary_json(text: &str) -> Result<Vec<MetricsReport>, serde_json::Error> {
    serde_json::from_str(text)
}

pub fn exec_breakdown_csv(rows: &[ExecBreakdown]) -> String {
    let mut v: Vec<&ExecBreakdown> = rows.iter().collect();
    v.sort_by(|a, b| (&a.workload, &a.config).cmp(&(&b.workload, &b.config)));
    let mut s = String::from(
        "workload,config,compute_cycles,noc_cycles,nop_cycles,dram_cycles,frac_compute,frac_noc,frac_nop,frac_dram\n",
    );
    for r in v {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.workload,
            r.config,
            r.compute_cycles,
            r.noc_cycles,
            r.nop_cycles,
            r.dram_cycles,
            r.frac_compute,
            r.frac_noc,
            r.frac_nop,
            r.frac_dram
        ));
    }
    s
}

pub fn heatmap_csv(rows: &[WorkloadAverage]) -> String {
    let mut s = String::from("workload,configs,frac_compute,frac_noc,frac_nop,frac_dram\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.workload, r.configs, r.frac_compute, r.frac_noc, r.frac_nop, r.frac_dram
        ));
    }
    s
}

/// Write the report set into `out_dir`. Returns the paths written.
pub fn emit_report(
    reports: &[MetricsReport],
    format: ReportFormat,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, AnalyzeError> {
    fs::create_dir_all(out_dir).map_err(|source| AnalyzeError::Io { path: out_dir.to_path_buf(), source })?;
    let mut files: Vec<(&str, String)> = Vec::new();
    if format == ReportFormat::Csv {
        files.push(("breakdown.csv", breakdown_csv(reports)));
        files.push(("mcast_hist.csv", mcast_hist_csv(reports)));
        files.push(("hop_hist.csv", hop_hist_csv(reports)));
        let groups = group_by_config(reports);
        if !groups.is_empty() {
            let counts = groups.iter().map(|(k, v)| (k.clone(), v.len())).collect();
            files.push(("nop_box.csv", nop_box_csv(&nop_ratio_stats(&groups)?, &counts)));
        }
    }
    files.push(("summary.json", summary_json(reports)));
    let mut written = Vec::with_capacity(files.len());
    for (name, body) in files {
        let path = out_dir.join(name);
        write_atomic(&path, body.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}
