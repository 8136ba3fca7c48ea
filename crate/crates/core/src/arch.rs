//! Multi-chiplet package model.
//!
//! Compute chiplets form a `rows x cols` mesh. The mesh is extended by two
//! auxiliary columns (0 on the west, `cols + 1` on the east) that hold the
//! DRAM chiplets. Each DRAM chiplet owns exactly one link, to the compute
//! chiplet at the edge of its attach row.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ArchError {
    #[error("malformed architecture token `{0}`")]
    Malformed(String),
    #[error("zero dimension in grid `{0}`")]
    ZeroDimension(String),
    #[error("invalid value for `{key}`: `{value}`")]
    BadValue { key: String, value: String },
    #[error("unknown architecture key `{0}`")]
    UnknownKey(String),
    #[error("missing `grid=` entry in architecture file")]
    MissingGrid,
    #[error("node {0} does not exist in this architecture")]
    UnknownNode(NodeId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    Compute,
    Dram,
}

/// A router position on the extended mesh.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId {
    pub kind: NodeKind,
    pub x: u32,
    pub y: u32,
}

impl NodeId {
    pub const fn compute(x: u32, y: u32) -> Self {
        NodeId { kind: NodeKind::Compute, x, y }
    }

    pub const fn dram(x: u32, y: u32) -> Self {
        NodeId { kind: NodeKind::Dram, x, y }
    }

    pub fn is_dram(&self) -> bool {
        self.kind == NodeKind::Dram
    }

    pub fn is_compute(&self) -> bool {
        self.kind == NodeKind::Compute
    }
}

/// Rendered as `C<x>_<y>` or `D<x>_<y>`; this is also the trace file spelling.
impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.kind {
            NodeKind::Compute => 'C',
            NodeKind::Dram => 'D',
        };
        write!(f, "{}{}_{}", tag, self.x, self.y)
    }
}

impl FromStr for NodeId {
    type Err = ArchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ArchError::Malformed(s.to_string());
        let mut chars = s.chars();
        let kind = match chars.next() {
            Some('C') => NodeKind::Compute,
            Some('D') => NodeKind::Dram,
            _ => return Err(bad()),
        };
        let (x, y) = chars.as_str().split_once('_').ok_or_else(bad)?;
        Ok(NodeId {
            kind,
            x: x.parse().map_err(|_| bad())?,
            y: y.parse().map_err(|_| bad())?,
        })
    }
}

/// One directed mesh link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Link {
    pub from: NodeId,
    pub to: NodeId,
}

impl fmt::Display for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.from, self.to)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    West,
    East,
}

/// Package configuration. Bandwidths are in bytes per cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub rows: u32,
    pub cols: u32,
    pub dram_count: u32,
    pub nop_bw: f64,
    pub noc_bw: f64,
    pub dram_bw: f64,
    pub hop_latency: u64,
    pub pe_count: u64,
    pub macs_per_pe_cycle: u64,
    pub gbuf_bytes: u64,
    pub clock_hz: f64,
}

pub const MIB: u64 = 1 << 20;

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            rows: 1,
            cols: 1,
            dram_count: 4,
            nop_bw: 4.0,
            noc_bw: 8.0,
            dram_bw: 16.0,
            hop_latency: 1,
            pe_count: 256,
            macs_per_pe_cycle: 1,
            gbuf_bytes: 2 * MIB,
            clock_hz: 1e9,
        }
    }
}

impl ArchConfig {
    pub fn grid(rows: u32, cols: u32) -> Self {
        ArchConfig { rows, cols, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), ArchError> {
        if self.rows == 0 || self.cols == 0 {
            return Err(ArchError::ZeroDimension(self.grid_label()));
        }
        let positive = |key: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(ArchError::BadValue { key: key.to_string(), value: v.to_string() })
            }
        };
        positive("nop_bw", self.nop_bw)?;
        positive("noc_bw", self.noc_bw)?;
        positive("dram_bw", self.dram_bw)?;
        positive("clock_hz", self.clock_hz)?;
        for (key, v) in [
            ("dram_count", self.dram_count as u64),
            ("pe_count", self.pe_count),
            ("macs_per_pe_cycle", self.macs_per_pe_cycle),
            ("gbuf_bytes", self.gbuf_bytes),
        ] {
            if v == 0 {
                return Err(ArchError::BadValue { key: key.to_string(), value: "0".into() });
            }
        }
        Ok(())
    }

    /// `<rows>x<cols>`.
    pub fn grid_label(&self) -> String {
        format!("{}x{}", self.rows, self.cols)
    }

    pub fn compute_count(&self) -> usize {
        (self.rows * self.cols) as usize
    }

    pub fn node_count(&self) -> usize {
        self.compute_count() + self.dram_count as usize
    }

    /// Bandwidth in GB/s for a bytes/cycle figure at this config's clock.
    pub fn to_gbps(&self, bytes_per_cycle: f64) -> f64 {
        bytes_per_cycle * self.clock_hz / 1e9
    }

    /// Compute nodes in row-major order, then DRAM nodes in placement order.
    pub fn nodes(&self) -> Vec<NodeId> {
        let mut out = self.compute_nodes();
        out.extend((0..self.dram_count).map(|i| self.dram_node(i)));
        out
    }

    pub fn compute_nodes(&self) -> Vec<NodeId> {
        let mut out = Vec::with_capacity(self.compute_count());
        for y in 0..self.rows {
            for x in 1..=self.cols {
                out.push(NodeId::compute(x, y));
            }
        }
        out
    }

    /// Row-major index of a compute node.
    pub fn compute_index(&self, node: NodeId) -> Option<usize> {
        if self.is_compute_node(node) {
            Some((node.y * self.cols + node.x - 1) as usize)
        } else {
            None
        }
    }

    pub fn is_compute_node(&self, node: NodeId) -> bool {
        node.is_compute() && (1..=self.cols).contains(&node.x) && node.y < self.rows
    }

    fn per_side(&self, side: Side) -> u32 {
        match side {
            Side::West => self.dram_count.div_ceil(2),
            Side::East => self.dram_count / 2,
        }
    }

    /// DRAM chiplets alternate west/east; within a side they stack
    /// top-to-bottom, centered on the compute rows.
    pub fn dram_node(&self, index: u32) -> NodeId {
        assert!(index < self.dram_count, "DRAM index {index} out of range");
        let side = if index.is_multiple_of(2) { Side::West } else { Side::East };
        let slot = index / 2;
        let n = self.per_side(side);
        let start = self.rows.saturating_sub(n) / 2;
        let x = match side {
            Side::West => 0,
            Side::East => self.cols + 1,
        };
        NodeId::dram(x, start + slot)
    }

    pub fn dram_index(&self, node: NodeId) -> Option<u32> {
        (0..self.dram_count).find(|&i| self.dram_node(i) == node)
    }

    pub fn contains(&self, node: NodeId) -> bool {
        match node.kind {
            NodeKind::Compute => self.is_compute_node(node),
            NodeKind::Dram => self.dram_index(node).is_some(),
        }
    }

    /// The compute chiplet a DRAM chiplet is wired to.
    pub fn dram_attach(&self, node: NodeId) -> Option<NodeId> {
        self.dram_index(node)?;
        let row = node.y.min(self.rows - 1);
        let x = if node.x == 0 { 1 } else { self.cols };
        Some(NodeId::compute(x, row))
    }

    /// DRAM chiplet that homes a layer's weights, spills and outputs.
    pub fn dram_home(&self, layer_index: usize) -> NodeId {
        self.dram_node((layer_index % self.dram_count as usize) as u32)
    }

    /// All physical links, both directions.
    pub fn links(&self) -> Vec<Link> {
        let mut out = Vec::new();
        for node in self.compute_nodes() {
            let (x, y) = (node.x, node.y);
            let mut nbrs = Vec::with_capacity(4);
            if x > 1 {
                nbrs.push(NodeId::compute(x - 1, y));
            }
            if x < self.cols {
                nbrs.push(NodeId::compute(x + 1, y));
            }
            if y > 0 {
                nbrs.push(NodeId::compute(x, y - 1));
            }
            if y + 1 < self.rows {
                nbrs.push(NodeId::compute(x, y + 1));
            }
            out.extend(nbrs.into_iter().map(|to| Link { from: node, to }));
        }
        for i in 0..self.dram_count {
            let d = self.dram_node(i);
            let a = self.dram_attach(d).expect("placed DRAM has an attach point");
            out.push(Link { from: d, to: a });
            out.push(Link { from: a, to: d });
        }
        out.sort();
        out
    }

    /// Canonical textual form accepted by [`parse_arch`].
    pub fn render(&self) -> String {
        let d = ArchConfig::default();
        let mut s = self.grid_label();
        let mut push = |k: &str, v: String| {
            s.push(' ');
            s.push_str(k);
            s.push('=');
            s.push_str(&v);
        };
        if self.dram_count != d.dram_count {
            push("dram_count", self.dram_count.to_string());
        }
        if self.nop_bw != d.nop_bw {
            push("nop_bw", self.nop_bw.to_string());
        }
        if self.noc_bw != d.noc_bw {
            push("noc_bw", self.noc_bw.to_string());
        }
        if self.dram_bw != d.dram_bw {
            push("dram_bw", self.dram_bw.to_string());
        }
        if self.hop_latency != d.hop_latency {
            push("hop_latency", self.hop_latency.to_string());
        }
        if self.pe_count != d.pe_count {
            push("pe_count", self.pe_count.to_string());
        }
        if self.macs_per_pe_cycle != d.macs_per_pe_cycle {
            push("macs_per_pe_cycle", self.macs_per_pe_cycle.to_string());
        }
        if self.gbuf_bytes != d.gbuf_bytes {
            push("gbuf_bytes", self.gbuf_bytes.to_string());
        }
        if self.clock_hz != d.clock_hz {
            push("clock_hz", self.clock_hz.to_string());
        }
        s
    }
}

fn parse_grid(token: &str, normalize: bool) -> Result<(u32, u32), ArchError> {
    let malformed = || ArchError::Malformed(token.to_string());
    let (a, b) = token
        .split_once(['x', 'X'])
        .ok_or_else(malformed)?;
    let a: u32 = a.trim().parse().map_err(|_| malformed())?;
    let b: u32 = b.trim().parse().map_err(|_| malformed())?;
    if a == 0 || b == 0 {
        return Err(ArchError::ZeroDimension(token.to_string()));
    }
    Ok(if normalize { (a.min(b), a.max(b)) } else { (a, b) })
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T, ArchError> {
    value.trim().parse().map_err(|_| ArchError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
    })
}

/// Keys tracked while applying overrides: GB/s figures are converted only
/// after the clock is known, whatever order the keys came in.
#[derive(Default)]
struct Overrides {
    nop_gbps: Option<f64>,
    noc_gbps: Option<f64>,
    dram_gbps: Option<f64>,
}

fn apply_key(
    cfg: &mut ArchConfig,
    pending: &mut Overrides,
    key: &str,
    value: &str,
) -> Result<(), ArchError> {
    match key {
        "dram_count" => cfg.dram_count = parse_num(key, value)?,
        "nop_bw" => cfg.nop_bw = parse_num(key, value)?,
        "noc_bw" => cfg.noc_bw = parse_num(key, value)?,
        "dram_bw" => cfg.dram_bw = parse_num(key, value)?,
        "nop_bw_gbps" => pending.nop_gbps = Some(parse_num(key, value)?),
        "noc_bw_gbps" => pending.noc_gbps = Some(parse_num(key, value)?),
        "dram_bw_gbps" => pending.dram_gbps = Some(parse_num(key, value)?),
        "hop_latency" => cfg.hop_latency = parse_num(key, value)?,
        "pe_count" => cfg.pe_count = parse_num(key, value)?,
        "macs_per_pe_cycle" => cfg.macs_per_pe_cycle = parse_num(key, value)?,
        "gbuf_bytes" => cfg.gbuf_bytes = parse_num(key, value)?,
        "gbuf_mib" => {
            let mib: f64 = parse_num(key, value)?;
            cfg.gbuf_bytes = (mib * MIB as f64).round() as u64;
        }
        "clock_hz" => cfg.clock_hz = parse_num(key, value)?,
        "clock_ghz" => cfg.clock_hz = parse_num::<f64>(key, value)? * 1e9,
        _ => return Err(ArchError::UnknownKey(key.to_string())),
    }
    Ok(())
}

fn finish(mut cfg: ArchConfig, pending: Overrides) -> Result<ArchConfig, ArchError> {
    let per_cycle = |gbps: f64| gbps * 1e9 / cfg.clock_hz;
    if let Some(g) = pending.nop_gbps {
        cfg.nop_bw = per_cycle(g);
    }
    if let Some(g) = pending.noc_gbps {
        cfg.noc_bw = per_cycle(g);
    }
    if let Some(g) = pending.dram_gbps {
        cfg.dram_bw = per_cycle(g);
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Parse `"<rows>x<cols>"`, optionally followed by whitespace- or
/// comma-separated `key=value` overrides.
pub fn parse_arch(text: &str) -> Result<ArchConfig, ArchError> {
    parse_arch_with(text, false)
}

/// As [`parse_arch`]; with `normalize` the grid is reordered to
/// `rows <= cols`.
pub fn parse_arch_with(text: &str, normalize: bool) -> Result<ArchConfig, ArchError> {
    let mut tokens = text
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty());
    let grid = tokens.next().ok_or_else(|| ArchError::Malformed(text.to_string()))?;
    let (rows, cols) = parse_grid(grid, normalize)?;
    let mut cfg = ArchConfig::grid(rows, cols);
    let mut pending = Overrides::default();
    for tok in tokens {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| ArchError::Malformed(tok.to_string()))?;
        apply_key(&mut cfg, &mut pending, k.trim(), v)?;
    }
    finish(cfg, pending)
}

/// Parse an architecture file of `key=value` lines. Blank lines and `#`
/// comments are ignored.
pub fn parse_arch_file(text: &str, normalize: bool) -> Result<ArchConfig, ArchError> {
    let mut grid = None;
    let mut entries = Vec::new();
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| ArchError::Malformed(line.to_string()))?;
        let (k, v) = (k.trim(), v.trim());
        if k == "grid" {
            grid = Some(parse_grid(v, normalize)?);
        } else {
            entries.push((k.to_string(), v.to_string()));
        }
    }
    let (rows, cols) = grid.ok_or(ArchError::MissingGrid)?;
    let mut cfg = ArchConfig::grid(rows, cols);
    let mut pending = Overrides::default();
    for (k, v) in &entries {
        apply_key(&mut cfg, &mut pending, k, v)?;
    }
    finish(cfg, pending)
}
