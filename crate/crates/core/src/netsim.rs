//! XY routing on the extended mesh and an analytic, event-driven schedule
//! of the message list.
//!
//! Each message holds every link of its route tree for one serialization
//! window of `ceil(bytes / nop_bw)` cycles. Links are granted FIFO by
//! eligibility time, then message id. NoC, NoP and DRAM busy cycles are
//! accumulated independently of wall-clock overlap.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{ArchConfig, ArchError, Link, NodeId, NodeKind};
use crate::mapper::{part_macs, serialize_multicasts, Message, TileAssignment, TrafficClass};
use crate::workload::LayerGraph;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error(transparent)]
    Arch(#[from] ArchError),
    #[error("message {id} names layer `{layer}`, which is not in the workload")]
    UnknownLayer { id: u64, layer: String },
    #[error("no tile assignment for layer `{0}`")]
    MissingAssignment(String),
    #[error("message {0} has an empty destination set or contains its own source")]
    BadMessage(u64),
    #[error("deadlock: layer `{0}` never became eligible")]
    Deadlock(String),
}

/// Routed footprint of one message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteTree {
    pub root: NodeId,
    /// Sorted by link.
    pub links: Vec<Link>,
    pub leaves: Vec<NodeId>,
    /// Longest root-to-leaf path in links.
    pub depth: u32,
    /// Distance from the root to each link's tail, aligned with `links`.
    pub link_depth: Vec<u32>,
}

impl RouteTree {
    pub fn hops(&self) -> u32 {
        self.links.len() as u32
    }
}

fn check(cfg: &ArchConfig, n: NodeId) -> Result<(), ArchError> {
    if cfg.contains(n) {
        Ok(())
    } else {
        Err(ArchError::UnknownNode(n))
    }
}

/// X-first dimension-order path, as the ordered list of links traversed.
pub fn xy_path(src: NodeId, dst: NodeId, cfg: &ArchConfig) -> Result<Vec<Link>, ArchError> {
    check(cfg, src)?;
    check(cfg, dst)?;
    let mut path = Vec::new();
    if src == dst {
        return Ok(path);
    }
    let mut cur = src;
    fn step(path: &mut Vec<Link>, cur: &mut NodeId, next: NodeId) {
        path.push(Link { from: *cur, to: next });
        *cur = next;
    }
    if src.kind == NodeKind::Dram {
        let a = cfg.dram_attach(src).expect("checked DRAM node");
        step(&mut path, &mut cur, a);
    }
    let target = match dst.kind {
        NodeKind::Dram => cfg.dram_attach(dst).expect("checked DRAM node"),
        NodeKind::Compute => dst,
    };
    while cur.x != target.x {
        let x = if cur.x < target.x { cur.x + 1 } else { cur.x - 1 };
        let next = NodeId::compute(x, cur.y);
        step(&mut path, &mut cur, next);
    }
    while cur.y != target.y {
        let y = if cur.y < target.y { cur.y + 1 } else { cur.y - 1 };
        let next = NodeId::compute(cur.x, y);
        step(&mut path, &mut cur, next);
    }
    if dst.kind == NodeKind::Dram {
        step(&mut path, &mut cur, dst);
    }
    Ok(path)
}

pub fn xy_route(src: NodeId, dst: NodeId, cfg: &ArchConfig) -> Result<RouteTree, ArchError> {
    let leaves = if src == dst { vec![] } else { vec![dst] };
    tree_from_paths(src, leaves, |d| xy_path(src, d, cfg))
}

/// Union of the XY paths from `src` to every destination.
pub fn multicast_tree(
    src: NodeId,
    dsts: &[NodeId],
    cfg: &ArchConfig,
) -> Result<RouteTree, ArchError> {
    check(cfg, src)?;
    let mut leaves = dsts.to_vec();
    leaves.sort();
    leaves.dedup();
    leaves.retain(|&d| d != src);
    tree_from_paths(src, leaves, |d| xy_path(src, d, cfg))
}

fn tree_from_paths(
    root: NodeId,
    leaves: Vec<NodeId>,
    path: impl Fn(NodeId) -> Result<Vec<Link>, ArchError>,
) -> Result<RouteTree, ArchError> {
    let mut seen: BTreeMap<Link, u32> = BTreeMap::new();
    let mut depth = 0;
    for &leaf in &leaves {
        let p = path(leaf)?;
        depth = depth.max(p.len() as u32);
        for (i, l) in p.into_iter().enumerate() {
            seen.entry(l).or_insert(i as u32);
        }
    }
    let (links, link_depth) = seen.into_iter().unzip();
    Ok(RouteTree { root, links, leaves, depth, link_depth })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimOptions {
    /// Serialization paid on every hop instead of once per message.
    pub store_and_forward: bool,
    /// Multicasts sent as one unicast per destination.
    pub serial_multicast: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Busy {
    pub noc: u64,
    pub nop: u64,
    pub dram: u64,
}

impl Busy {
    pub fn total(&self) -> u64 {
        self.noc + self.nop + self.dram
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimedRecord {
    pub message: Message,
    pub route: RouteTree,
    pub start: u64,
    pub end: u64,
    /// Cycle window each link was held: `(link, from, to)`.
    pub occupancy: Vec<(Link, u64, u64)>,
}

impl TimedRecord {
    pub fn hop_count(&self) -> u32 {
        self.route.hops()
    }

    pub fn is_multicast(&self) -> bool {
        self.message.dsts.len() >= 2
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LayerTiming {
    pub inputs_ready: u64,
    pub compute_start: u64,
    pub compute_end: u64,
    pub complete: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimedTrace {
    /// Ordered by message id.
    pub records: Vec<TimedRecord>,
    pub busy: Busy,
    pub compute_cycles: u64,
    pub makespan: u64,
    pub link_busy: BTreeMap<Link, u64>,
    pub layers: Vec<LayerTiming>,
}

pub fn hop_count(record: &TimedRecord) -> u32 {
    record.hop_count()
}

pub fn is_multicast(record: &TimedRecord) -> bool {
    record.is_multicast()
}

pub fn serialization_cycles(bytes: u64, bandwidth: f64) -> u64 {
    (bytes as f64 / bandwidth).ceil() as u64
}

/// Busy cycles one message charges to each resource.
pub fn message_busy(src: NodeId, dsts: &[NodeId], bytes: u64, hops: u32, cfg: &ArchConfig) -> Busy {
    let mut b = Busy { nop: hops as u64 * serialization_cycles(bytes, cfg.nop_bw), ..Busy::default() };
    for n in std::iter::once(&src).chain(dsts) {
        match n.kind {
            NodeKind::Compute => b.noc += serialization_cycles(bytes, cfg.noc_bw),
            NodeKind::Dram => b.dram += serialization_cycles(bytes, cfg.dram_bw),
        }
    }
    b
}

/// Cycles a layer spends computing: its largest part at full PE throughput.
pub fn layer_compute_cycles(graph: &LayerGraph, asg: &TileAssignment, cfg: &ArchConfig, i: usize) -> u64 {
    let rate = cfg.pe_count * cfg.macs_per_pe_cycle;
    asg.parts
        .iter()
        .map(|p| part_macs(&graph.layers[i], asg.strategy, &p.slice).div_ceil(rate))
        .max()
        .unwrap_or(0)
}

#[derive(Default, Clone)]
struct LayerState {
    pending_preds: usize,
    inputs_ready: u64,
    inbound: Vec<usize>,
    inbound_left: usize,
    inbound_end: u64,
    psum: Vec<usize>,
    psum_left: usize,
    psum_end: u64,
    outbound: Vec<usize>,
    spill_left: usize,
    spill_end: u64,
    compute_start: u64,
    compute_end: u64,
    complete: u64,
    available: bool,
}

enum Phase {
    Inbound,
    Reduce,
    Spill,
    Other,
}

fn phase(class: TrafficClass) -> Phase {
    match class {
        TrafficClass::Weight | TrafficClass::InputAct => Phase::Inbound,
        TrafficClass::PartialSum => Phase::Reduce,
        TrafficClass::Spill => Phase::Spill,
        TrafficClass::OutputAct => Phase::Other,
    }
}

/// `(start, end, link occupancy)` of a scheduled message.
type Timing = (u64, u64, Vec<(Link, u64, u64)>);

struct Sim<'a> {
    cfg: &'a ArchConfig,
    opts: SimOptions,
    messages: Vec<Message>,
    routes: Vec<RouteTree>,
    succs: Vec<Vec<usize>>,
    compute: Vec<u64>,
    layers: Vec<LayerState>,
    heap: BinaryHeap<Reverse<(u64, usize)>>,
    link_free: BTreeMap<Link, u64>,
    timed: Vec<Option<Timing>>,
}

impl Sim<'_> {
    fn push(&mut self, msgs: Vec<usize>, t: u64) {
        for m in msgs {
            let eligible = t.max(self.messages[m].ready);
            self.heap.push(Reverse((eligible, m)));
        }
    }

    fn release(&mut self, l: usize, t: u64) {
        self.layers[l].inputs_ready = t;
        if self.layers[l].inbound.is_empty() {
            self.start_compute(l, t);
        } else {
            let msgs = self.layers[l].inbound.clone();
            self.push(msgs, t);
        }
    }

    fn start_compute(&mut self, l: usize, t: u64) {
        let st = &mut self.layers[l];
        st.compute_start = t;
        st.compute_end = t + self.compute[l];
        let done = st.compute_end;
        if st.psum.is_empty() {
            self.complete(l, done);
        } else {
            let msgs = st.psum.clone();
            self.push(msgs, done);
        }
    }

    fn complete(&mut self, l: usize, t: u64) {
        self.layers[l].complete = t;
        let msgs = self.layers[l].outbound.clone();
        self.push(msgs, t);
        if self.layers[l].spill_left == 0 {
            self.available(l, t);
        }
    }

    fn available(&mut self, l: usize, t: u64) {
        self.layers[l].available = true;
        for s in self.succs[l].clone() {
            let st = &mut self.layers[s];
            st.pending_preds -= 1;
            st.inputs_ready = st.inputs_ready.max(t);
            if st.pending_preds == 0 {
                let ready = st.inputs_ready;
                self.release(s, ready);
            }
        }
    }

    fn schedule(&mut self, m: usize, eligible: u64) {
        let msg = &self.messages[m];
        let route = &self.routes[m];
        let ser = serialization_cycles(msg.bytes, self.cfg.nop_bw);
        let hop = self.cfg.hop_latency;
        let offset = |d: u32| if self.opts.store_and_forward { d as u64 * (ser + hop) } else { 0 };
        let mut start = eligible;
        for (link, &d) in route.links.iter().zip(&route.link_depth) {
            let free = self.link_free.get(link).copied().unwrap_or(0);
            start = start.max(free.saturating_sub(offset(d)));
        }
        let mut occupancy = Vec::with_capacity(route.links.len());
        for (link, &d) in route.links.iter().zip(&route.link_depth) {
            let from = start + offset(d);
            occupancy.push((*link, from, from + ser));
            self.link_free.insert(*link, from + ser);
        }
        let depth = route.depth as u64;
        let latency =
            if self.opts.store_and_forward { depth * (hop + ser) } else { depth * hop + ser };
        let end = start + latency;
        self.timed[m] = Some((start, end, occupancy));

        let l = msg.layer;
        match phase(msg.class) {
            Phase::Inbound => {
                let st = &mut self.layers[l];
                st.inbound_left -= 1;
                st.inbound_end = st.inbound_end.max(end);
                if st.inbound_left == 0 {
                    let t = st.inputs_ready.max(st.inbound_end);
                    self.start_compute(l, t);
                }
            }
            Phase::Reduce => {
                let st = &mut self.layers[l];
                st.psum_left -= 1;
                st.psum_end = st.psum_end.max(end);
                if st.psum_left == 0 {
                    let t = st.compute_end.max(st.psum_end);
                    self.complete(l, t);
                }
            }
            Phase::Spill => {
                let st = &mut self.layers[l];
                st.spill_left -= 1;
                st.spill_end = st.spill_end.max(end);
                if st.spill_left == 0 {
                    let t = st.spill_end;
                    self.available(l, t);
                }
            }
            Phase::Other => {}
        }
    }
}

/// Core scheduler over explicit per-layer dependencies.
fn run(
    messages: Vec<Message>,
    layer_ids: &[String],
    preds: &[Vec<usize>],
    compute: Vec<u64>,
    cfg: &ArchConfig,
    opts: SimOptions,
) -> Result<TimedTrace, SimError> {
    let n = layer_ids.len();
    let mut layers = vec![LayerState::default(); n];
    let mut succs = vec![Vec::new(); n];
    for (i, ps) in preds.iter().enumerate() {
        let mut uniq = ps.clone();
        uniq.sort();
        uniq.dedup();
        layers[i].pending_preds = uniq.len();
        for p in uniq {
            succs[p].push(i);
        }
    }
    let mut routes = Vec::with_capacity(messages.len());
    for (k, m) in messages.iter().enumerate() {
        if m.layer >= n || layer_ids[m.layer] != m.layer_id {
            return Err(SimError::UnknownLayer { id: m.id, layer: m.layer_id.clone() });
        }
        if m.dsts.is_empty() || m.dsts.contains(&m.src) {
            return Err(SimError::BadMessage(m.id));
        }
        routes.push(multicast_tree(m.src, &m.dsts, cfg)?);
        let st = &mut layers[m.layer];
        match phase(m.class) {
            Phase::Inbound => st.inbound.push(k),
            Phase::Reduce => st.psum.push(k),
            Phase::Spill => {
                st.outbound.push(k);
                st.spill_left += 1;
            }
            Phase::Other => st.outbound.push(k),
        }
    }
    for st in &mut layers {
        st.inbound_left = st.inbound.len();
        st.psum_left = st.psum.len();
    }

    let mut sim = Sim {
        cfg,
        opts,
        timed: vec![None; messages.len()],
        messages,
        routes,
        succs,
        compute,
        layers,
        heap: BinaryHeap::new(),
        link_free: BTreeMap::new(),
    };
    let roots: Vec<usize> = (0..n).filter(|&l| sim.layers[l].pending_preds == 0).collect();
    for l in roots {
        sim.release(l, 0);
    }
    while let Some(Reverse((eligible, m))) = sim.heap.pop() {
        sim.schedule(m, eligible);
    }
    if let Some(l) = (0..n).find(|&l| !sim.layers[l].available) {
        return Err(SimError::Deadlock(layer_ids[l].clone()));
    }

    let mut busy = Busy::default();
    let mut link_busy: BTreeMap<Link, u64> = BTreeMap::new();
    let mut records = Vec::with_capacity(sim.messages.len());
    let mut makespan = 0;
    for ((message, route), timed) in sim.messages.into_iter().zip(sim.routes).zip(sim.timed) {
        let (start, end, occupancy) = timed.expect("every message of an available layer was scheduled");
        let b = message_busy(message.src, &message.dsts, message.bytes, route.hops(), cfg);
        busy.noc += b.noc;
        busy.nop += b.nop;
        busy.dram += b.dram;
        for &(link, from, to) in &occupancy {
            *link_busy.entry(link).or_insert(0) += to - from;
        }
        makespan = makespan.max(end);
        records.push(TimedRecord { message, route, start, end, occupancy });
    }
    records.sort_by_key(|r| r.message.id);
    let timings: Vec<LayerTiming> = sim
        .layers
        .iter()
        .map(|st| LayerTiming {
            inputs_ready: st.inputs_ready,
            compute_start: st.compute_start,
            compute_end: st.compute_end,
            complete: st.complete,
        })
        .collect();
    makespan = timings.iter().map(|t| t.complete).fold(makespan, u64::max);
    Ok(TimedTrace {
        records,
        busy,
        compute_cycles: sim.compute.iter().sum(),
        makespan,
        link_busy,
        layers: timings,
    })
}

/// Schedule a mapped workload's messages.
pub fn simulate(
    messages: &[Message],
    assignments: &[TileAssignment],
    graph: &LayerGraph,
    cfg: &ArchConfig,
    opts: SimOptions,
) -> Result<TimedTrace, SimError> {
    let by_id: BTreeMap<&str, &TileAssignment> =
        assignments.iter().map(|a| (a.layer_id.as_str(), a)).collect();
    let mut compute = Vec::with_capacity(graph.len());
    for (i, l) in graph.layers.iter().enumerate() {
        let asg = by_id.get(l.id.as_str()).ok_or_else(|| SimError::MissingAssignment(l.id.clone()))?;
        compute.push(layer_compute_cycles(graph, asg, cfg, i));
    }
    let ids: Vec<String> = graph.layers.iter().map(|l| l.id.clone()).collect();
    let preds: Vec<Vec<usize>> = (0..graph.len()).map(|i| graph.preds(i).to_vec()).collect();
    let messages = if opts.serial_multicast {
        serialize_multicasts(messages)
    } else {
        messages.to_vec()
    };
    run(messages, &ids, &preds, compute, cfg, opts)
}
