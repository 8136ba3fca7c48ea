//! Spatial partitioning of layers onto compute chiplets and generation of
//! the resulting message list.
//!
//! Tensor regions are element intervals over the channel-major views in
//! [`crate::workload::Shape`]. For each input operand the mapper sweeps the
//! producer holdings against the consumer needs; every run of elements with
//! the same source and the same set of remote consumers becomes one message,
//! a multicast when that set has two or more chiplets.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{ArchConfig, NodeId};
use crate::workload::{layer_macs, Dims, Layer, LayerGraph, Shape, TensorKind};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MapError {
    #[error("layer `{layer}` cannot be partitioned {parts} ways under any strategy")]
    NotPartitionable { layer: String, parts: usize },
    #[error("{segments} pipeline segments do not fit on {chiplets} chiplets")]
    RegionTooSmall { segments: usize, chiplets: usize },
    #[error("no tile assignment for layer `{0}`")]
    MissingAssignment(String),
    #[error("invalid mapping policy `{0}` (expected `all` or `pipeline:<n>`)")]
    BadPolicy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    /// Output channels split; weights partitioned, input broadcast.
    SplitK,
    /// Output rows split; weights broadcast, input sliced with halos.
    SplitHW,
    /// Reduction dimension split; partial outputs summed on part 0.
    SplitC,
    /// Every part computes the whole layer.
    Replicate,
}

impl Strategy {
    pub const SPLITS: [Strategy; 3] = [Strategy::SplitK, Strategy::SplitHW, Strategy::SplitC];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Slice {
    OutChannels(Range<u64>),
    Rows(Range<u64>),
    InChannels(Range<u64>),
    Whole,
}

impl Slice {
    fn range(&self) -> Option<&Range<u64>> {
        match self {
            Slice::OutChannels(r) | Slice::Rows(r) | Slice::InChannels(r) => Some(r),
            Slice::Whole => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Part {
    pub chiplet: NodeId,
    pub slice: Slice,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileAssignment {
    pub layer_id: String,
    pub strategy: Strategy,
    pub parts: Vec<Part>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrafficClass {
    Weight,
    InputAct,
    OutputAct,
    PartialSum,
    Spill,
}

impl TrafficClass {
    pub const ALL: [TrafficClass; 5] = [
        TrafficClass::Weight,
        TrafficClass::InputAct,
        TrafficClass::OutputAct,
        TrafficClass::PartialSum,
        TrafficClass::Spill,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TrafficClass::Weight => "weight",
            TrafficClass::InputAct => "input_act",
            TrafficClass::OutputAct => "output_act",
            TrafficClass::PartialSum => "partial_sum",
            TrafficClass::Spill => "spill",
        }
    }
}

impl fmt::Display for TrafficClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TrafficClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TrafficClass::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown traffic class `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub id: u64,
    pub src: NodeId,
    /// Sorted, never contains `src`.
    pub dsts: Vec<NodeId>,
    pub bytes: u64,
    pub class: TrafficClass,
    pub layer_id: String,
    /// Topological index of `layer_id`.
    pub layer: usize,
    /// Earliest start cycle, on top of the layer dependency the simulator
    /// enforces for the message's class.
    pub ready: u64,
}

impl Message {
    pub fn is_multicast(&self) -> bool {
        self.dsts.len() >= 2
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum MappingPolicy {
    #[default]
    AllChiplets,
    PipelineSegments(usize),
}

impl FromStr for MappingPolicy {
    type Err = MapError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "all" {
            return Ok(MappingPolicy::AllChiplets);
        }
        s.strip_prefix("pipeline:")
            .and_then(|n| n.parse().ok())
            .filter(|&n: &usize| n >= 1)
            .map(MappingPolicy::PipelineSegments)
            .ok_or_else(|| MapError::BadPolicy(s.to_string()))
    }
}

impl fmt::Display for MappingPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MappingPolicy::AllChiplets => f.write_str("all"),
            MappingPolicy::PipelineSegments(n) => write!(f, "pipeline:{n}"),
        }
    }
}

type Iv = (u64, u64);

fn iv_all(s: Shape) -> Vec<Iv> {
    vec![(0, s.elems())]
}

fn iv_channels(s: Shape, lo: u64, hi: u64) -> Vec<Iv> {
    let plane = s.rows * s.row_len;
    if lo >= hi {
        vec![]
    } else {
        vec![(lo * plane, hi * plane)]
    }
}

fn iv_rows(s: Shape, lo: u64, hi: u64) -> Vec<Iv> {
    if lo >= hi {
        return vec![];
    }
    if lo == 0 && hi >= s.rows {
        return iv_all(s);
    }
    let plane = s.rows * s.row_len;
    (0..s.channels)
        .map(|c| (c * plane + lo * s.row_len, c * plane + hi * s.row_len))
        .collect()
}

fn total(ivs: &[Iv]) -> u64 {
    ivs.iter().map(|(a, b)| b - a).sum()
}

/// Input rows touched by output rows `out`, for a same-padded window.
fn halo_rows(out: &Range<u64>, h: u64, window: u64, stride: u64) -> Range<u64> {
    let out_rows = h.div_ceil(stride);
    let pad_total = ((out_rows - 1) * stride + window).saturating_sub(h);
    let pad_top = pad_total / 2;
    let lo = (out.start * stride).saturating_sub(pad_top);
    let hi = ((out.end - 1) * stride + window).saturating_sub(pad_top).min(h);
    lo..hi
}

/// Extent of the dimension a strategy splits, if it applies to this layer.
pub fn split_extent(layer: &Layer, strategy: Strategy) -> Option<u64> {
    let out = layer.output_shape();
    match strategy {
        Strategy::SplitK => Some(out.channels),
        Strategy::SplitHW => Some(out.rows),
        Strategy::SplitC => match &layer.dims {
            Dims::Conv(d) if d.groups == 1 => Some(d.c),
            Dims::Fc(d) | Dims::Matmul(d) => Some(d.k),
            Dims::LstmCell(d) => Some(d.hidden + d.input),
            _ => None,
        },
        Strategy::Replicate => None,
    }
}

fn balanced(extent: u64, n: usize) -> Vec<Range<u64>> {
    let n = n as u64;
    (0..n).map(|i| (i * extent / n)..((i + 1) * extent / n)).collect()
}

fn slices_for(layer: &Layer, strategy: Strategy, n: usize) -> Option<Vec<Slice>> {
    if strategy == Strategy::Replicate {
        return Some(vec![Slice::Whole; n]);
    }
    let extent = split_extent(layer, strategy)?;
    if extent < n as u64 {
        return None;
    }
    let mk: fn(Range<u64>) -> Slice = match strategy {
        Strategy::SplitK => Slice::OutChannels,
        Strategy::SplitHW => Slice::Rows,
        Strategy::SplitC => Slice::InChannels,
        Strategy::Replicate => unreachable!(),
    };
    Some(balanced(extent, n).into_iter().map(mk).collect())
}

/// Build an assignment of `layer` onto `chiplets` (in part order).
pub fn assign(
    layer: &Layer,
    strategy: Strategy,
    chiplets: &[NodeId],
) -> Result<TileAssignment, MapError> {
    let slices = slices_for(layer, strategy, chiplets.len()).ok_or_else(|| {
        MapError::NotPartitionable { layer: layer.id.clone(), parts: chiplets.len() }
    })?;
    Ok(TileAssignment {
        layer_id: layer.id.clone(),
        strategy,
        parts: chiplets
            .iter()
            .zip(slices)
            .map(|(&chiplet, slice)| Part { chiplet, slice })
            .collect(),
    })
}

/// Fraction `len / extent` of a quantity that is linear in the split dimension.
fn scaled(total: u64, slice: &Slice, strategy: Strategy, layer: &Layer) -> u64 {
    match (slice.range(), split_extent(layer, strategy)) {
        (Some(r), Some(extent)) => {
            ((total as u128 * (r.end - r.start) as u128).div_ceil(extent as u128)) as u64
        }
        _ => total,
    }
}

/// MACs executed by one part.
pub fn part_macs(layer: &Layer, strategy: Strategy, slice: &Slice) -> u64 {
    scaled(layer_macs(layer), slice, strategy, layer)
}

/// Weight elements one part needs, and whether all parts share one copy.
fn part_weights(layer: &Layer, strategy: Strategy, slice: &Slice) -> (u64, bool) {
    let w = layer.weight_elems();
    match strategy {
        Strategy::SplitK | Strategy::SplitC => (scaled(w, slice, strategy, layer), false),
        // gathered embedding rows follow the token split
        Strategy::SplitHW if matches!(layer.dims, Dims::Embedding(_)) => {
            (scaled(w, slice, strategy, layer), false)
        }
        Strategy::SplitHW | Strategy::Replicate => (w, true),
    }
}

/// Element intervals of each input operand one part reads.
fn part_needs(layer: &Layer, strategy: Strategy, slice: &Slice) -> Vec<Vec<Iv>> {
    let shares = layer.input_shares();
    let r = match slice.range() {
        Some(r) if strategy != Strategy::Replicate => r.clone(),
        _ => return shares.into_iter().map(iv_all).collect(),
    };
    match (&layer.dims, strategy) {
        (Dims::Conv(d), Strategy::SplitK) => {
            if d.groups == 1 {
                vec![iv_all(shares[0])]
            } else {
                let (kg, cg) = (d.k / d.groups, d.c / d.groups);
                let g0 = r.start / kg;
                let g1 = r.end.div_ceil(kg);
                vec![iv_channels(shares[0], g0 * cg, g1 * cg)]
            }
        }
        (Dims::Conv(d), Strategy::SplitHW) => {
            let rows = halo_rows(&r, d.h, d.r, d.stride);
            vec![iv_rows(shares[0], rows.start, rows.end)]
        }
        (Dims::Pool(_), Strategy::SplitK) | (Dims::Conv(_), Strategy::SplitC) => {
            vec![iv_channels(shares[0], r.start, r.end)]
        }
        (Dims::Pool(d), Strategy::SplitHW) => {
            let rows = halo_rows(&r, d.h, d.window, d.stride);
            vec![iv_rows(shares[0], rows.start, rows.end)]
        }
        (Dims::Fc(_), Strategy::SplitK) | (Dims::Embedding(_), Strategy::SplitK) => {
            vec![iv_all(shares[0])]
        }
        (Dims::Fc(_), Strategy::SplitHW)
        | (Dims::Embedding(_), Strategy::SplitHW)
        | (Dims::EltwiseAdd(_), Strategy::SplitHW) => {
            shares.iter().map(|&s| iv_rows(s, r.start, r.end)).collect()
        }
        (Dims::Fc(_), Strategy::SplitC) => vec![iv_channels(shares[0], r.start, r.end)],
        (Dims::Matmul(_), Strategy::SplitK) => {
            vec![iv_all(shares[0]), iv_channels(shares[1], r.start, r.end)]
        }
        (Dims::Matmul(_), Strategy::SplitHW) => {
            vec![iv_rows(shares[0], r.start, r.end), iv_all(shares[1])]
        }
        (Dims::Matmul(_), Strategy::SplitC) => {
            vec![iv_channels(shares[0], r.start, r.end), iv_rows(shares[1], r.start, r.end)]
        }
        (Dims::LstmCell(d), Strategy::SplitC) => {
            let x = iv_channels(shares[0], r.start.min(d.input), r.end.min(d.input));
            let h = iv_channels(
                shares[1],
                r.start.saturating_sub(d.input),
                r.end.saturating_sub(d.input),
            );
            vec![x, h]
        }
        (Dims::Concat(_), Strategy::SplitHW) => {
            let mut off = 0;
            shares
                .iter()
                .map(|s| {
                    let (lo, hi) = (off, off + s.elems());
                    off = hi;
                    let a = r.start.clamp(lo, hi) - lo;
                    let b = r.end.clamp(lo, hi) - lo;
                    if a < b {
                        vec![(a, b)]
                    } else {
                        vec![]
                    }
                })
                .collect()
        }
        // single-part fallbacks: a split over the full extent
        _ => shares.into_iter().map(iv_all).collect(),
    }
}

/// Output intervals resident on part `index` once the layer completes.
fn part_holds(layer: &Layer, strategy: Strategy, slice: &Slice, index: usize) -> Vec<Iv> {
    let out = layer.output_shape();
    match (strategy, slice) {
        (Strategy::SplitK, Slice::OutChannels(r)) => iv_channels(out, r.start, r.end),
        (Strategy::SplitHW, Slice::Rows(r)) => iv_rows(out, r.start, r.end),
        (Strategy::SplitC, _) if index > 0 => vec![],
        _ => iv_all(out),
    }
}

/// Where an input operand comes from.
#[derive(Debug, Clone)]
enum Source {
    /// Held in pieces by the producer's parts.
    Parts(Vec<(NodeId, Vec<Iv>)>),
    /// Entirely in one DRAM chiplet.
    Dram(NodeId, u64),
}

/// Minimal growable bitset keyed by consumer index.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct Members(Vec<u64>);

impl Members {
    fn new(n: usize) -> Self {
        Members(vec![0; n.div_ceil(64).max(1)])
    }

    fn insert(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }

    fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().flat_map(|(w, &bits)| {
            (0..64).filter(move |b| bits & (1 << b) != 0).map(move |b| w * 64 + b)
        })
    }
}

/// Deliver `needs` (per consumer chiplet) from `holders`. Returns
/// `(holder index, consumer set, elements)` groups in deterministic order.
fn route_operand(
    holders: &[(NodeId, Vec<Iv>)],
    needs: &[(NodeId, Vec<Iv>)],
) -> Vec<(usize, Vec<NodeId>, u64)> {
    // (position, is_holder, index, +1/-1)
    let mut events: Vec<(u64, bool, usize, i32)> = Vec::new();
    for (i, (_, ivs)) in holders.iter().enumerate() {
        for &(a, b) in ivs.iter().filter(|(a, b)| a < b) {
            events.push((a, true, i, 1));
            events.push((b, true, i, -1));
        }
    }
    for (i, (_, ivs)) in needs.iter().enumerate() {
        for &(a, b) in ivs.iter().filter(|(a, b)| a < b) {
            events.push((a, false, i, 1));
            events.push((b, false, i, -1));
        }
    }
    events.sort_unstable();

    let mut held = vec![0i32; holders.len()];
    let mut wanted = vec![0i32; needs.len()];
    let mut groups: BTreeMap<(usize, Members), u64> = BTreeMap::new();
    let mut at = 0u64;
    let mut k = 0;
    while k < events.len() {
        let pos = events[k].0;
        if pos > at {
            let len = pos - at;
            let mut per_source: BTreeMap<usize, Members> = BTreeMap::new();
            for (ci, _) in wanted.iter().enumerate().filter(|(_, &w)| w > 0) {
                let node = needs[ci].0;
                let local = holders
                    .iter()
                    .enumerate()
                    .any(|(hi, (h, _))| held[hi] > 0 && *h == node);
                if local {
                    continue;
                }
                // no holder at all means upstream inconsistency; the
                // consistency checks in LayerGraph rule it out
                if let Some(src) = (0..holders.len()).find(|&hi| held[hi] > 0) {
                    per_source
                        .entry(src)
                        .or_insert_with(|| Members::new(needs.len()))
                        .insert(ci);
                }
            }
            for (src, members) in per_source {
                *groups.entry((src, members)).or_insert(0) += len;
            }
        }
        at = pos;
        while k < events.len() && events[k].0 == pos {
            let (_, is_holder, i, delta) = events[k];
            if is_holder {
                held[i] += delta;
            } else {
                wanted[i] += delta;
            }
            k += 1;
        }
    }
    groups
        .into_iter()
        .map(|((src, members), elems)| {
            let mut dsts: Vec<NodeId> = members.iter().map(|ci| needs[ci].0).collect();
            dsts.sort();
            dsts.dedup();
            (src, dsts, elems)
        })
        .collect()
}

struct Emitter {
    next_id: u64,
    out: Vec<Message>,
}

impl Emitter {
    fn emit(
        &mut self,
        layer: usize,
        layer_id: &str,
        class: TrafficClass,
        src: NodeId,
        mut dsts: Vec<NodeId>,
        bytes: u64,
    ) {
        dsts.retain(|&d| d != src);
        dsts.sort();
        dsts.dedup();
        if dsts.is_empty() || bytes == 0 {
            return;
        }
        self.out.push(Message {
            id: self.next_id,
            src,
            dsts,
            bytes,
            class,
            layer_id: layer_id.to_string(),
            layer,
            ready: 0,
        });
        self.next_id += 1;
    }
}

/// Weight, input-activation and partial-sum messages of one layer.
fn inbound_messages(
    em: &mut Emitter,
    index: usize,
    layer: &Layer,
    asg: &TileAssignment,
    sources: &[Source],
    home: NodeId,
) {
    let bpe = layer.bytes_per_elem;
    let chiplets: Vec<NodeId> = asg.parts.iter().map(|p| p.chiplet).collect();

    // (a) weights
    let weights: Vec<(u64, bool)> =
        asg.parts.iter().map(|p| part_weights(layer, asg.strategy, &p.slice)).collect();
    if weights.iter().any(|&(_, shared)| shared) {
        em.emit(index, &layer.id, TrafficClass::Weight, home, chiplets.clone(), weights[0].0 * bpe);
    } else {
        for (p, &(elems, _)) in asg.parts.iter().zip(&weights) {
            em.emit(index, &layer.id, TrafficClass::Weight, home, vec![p.chiplet], elems * bpe);
        }
    }

    // (b) input activations, operand by operand
    let needs: Vec<Vec<Vec<Iv>>> =
        asg.parts.iter().map(|p| part_needs(layer, asg.strategy, &p.slice)).collect();
    for (share, source) in sources.iter().enumerate() {
        let holders = match source {
            Source::Parts(h) => h.clone(),
            Source::Dram(node, elems) => vec![(*node, vec![(0, *elems)])],
        };
        let wanted: Vec<(NodeId, Vec<Iv>)> = chiplets
            .iter()
            .zip(&needs)
            .map(|(&c, n)| (c, n[share].clone()))
            .collect();
        for (src, dsts, elems) in route_operand(&holders, &wanted) {
            em.emit(index, &layer.id, TrafficClass::InputAct, holders[src].0, dsts, elems * bpe);
        }
    }

    // (c) partial sums into part 0
    if asg.strategy == Strategy::SplitC {
        let bytes = layer.output_shape().elems() * bpe;
        let root = chiplets[0];
        for &c in &chiplets[1..] {
            em.emit(index, &layer.id, TrafficClass::PartialSum, c, vec![root], bytes);
        }
    }
}

/// Per-part global-buffer footprint: weights + input + output slices.
pub fn resident_bytes(layer: &Layer, asg: &TileAssignment) -> Vec<u64> {
    asg.parts
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let (w, _) = part_weights(layer, asg.strategy, &p.slice);
            let input: u64 = part_needs(layer, asg.strategy, &p.slice).iter().map(|v| total(v)).sum();
            let output = if asg.strategy == Strategy::SplitC {
                layer.output_shape().elems()
            } else {
                total(&part_holds(layer, asg.strategy, &p.slice, i))
            };
            (w + input + output) * layer.bytes_per_elem
        })
        .collect()
}

/// Choose the split minimizing delivered bytes (bytes x destinations) of
/// the layer's weight, input and partial-sum traffic, with every input
/// read from DRAM. Ties resolve SplitK, SplitHW, SplitC.
pub fn choose_strategy(
    layer: &Layer,
    n_parts: usize,
    cfg: &ArchConfig,
) -> Result<Strategy, MapError> {
    let not_partitionable = || MapError::NotPartitionable { layer: layer.id.clone(), parts: n_parts };
    if n_parts == 0 || n_parts > cfg.compute_count() {
        return Err(not_partitionable());
    }
    if n_parts == 1 {
        return Ok(Strategy::SplitK);
    }
    let chiplets: Vec<NodeId> = cfg.compute_nodes().into_iter().take(n_parts).collect();
    let home = cfg.dram_home(0);
    let sources: Vec<Source> =
        layer.input_shares().iter().map(|s| Source::Dram(home, s.elems())).collect();
    let mut best: Option<(u64, Strategy)> = None;
    for strategy in Strategy::SPLITS {
        let Ok(asg) = assign(layer, strategy, &chiplets) else { continue };
        let mut em = Emitter { next_id: 0, out: Vec::new() };
        inbound_messages(&mut em, 0, layer, &asg, &sources, home);
        let cost: u64 = em.out.iter().map(|m| m.bytes * m.dsts.len() as u64).sum();
        if best.is_none_or(|(c, _)| cost < c) {
            best = Some((cost, strategy));
        }
    }
    best.map(|(_, s)| s).ok_or_else(not_partitionable)
}

/// Assign every layer to chiplets according to `policy`.
pub fn place_layers(
    graph: &LayerGraph,
    cfg: &ArchConfig,
    policy: MappingPolicy,
) -> Result<Vec<TileAssignment>, MapError> {
    let chiplets = cfg.compute_nodes();
    let n_layers = graph.len();
    let regions: Vec<(Range<usize>, Range<usize>)> = match policy {
        MappingPolicy::AllChiplets => vec![(0..n_layers, 0..chiplets.len())],
        MappingPolicy::PipelineSegments(seg) => {
            let seg = seg.clamp(1, n_layers);
            let segments = n_layers.div_ceil(seg);
            if segments > chiplets.len() {
                return Err(MapError::RegionTooSmall { segments, chiplets: chiplets.len() });
            }
            let base = chiplets.len() / segments;
            let extra = chiplets.len() % segments;
            let mut start = 0;
            (0..segments)
                .map(|s| {
                    let size = base + usize::from(s >= segments - extra);
                    let region = start..start + size;
                    start += size;
                    (s * seg..((s + 1) * seg).min(n_layers), region)
                })
                .collect()
        }
    };
    let mut out = Vec::with_capacity(n_layers);
    for (layers, region) in regions {
        let nodes = &chiplets[region];
        for layer in &graph.layers[layers] {
            let strategy = choose_strategy(layer, nodes.len(), cfg)?;
            out.push(assign(layer, strategy, nodes)?);
        }
    }
    Ok(out)
}

/// Emit the full, ordered message list for a mapped workload.
pub fn build_messages(
    graph: &LayerGraph,
    assignments: &[TileAssignment],
    cfg: &ArchConfig,
) -> Result<Vec<Message>, MapError> {
    let by_id: BTreeMap<&str, &TileAssignment> =
        assignments.iter().map(|a| (a.layer_id.as_str(), a)).collect();
    let asg: Vec<&TileAssignment> = graph
        .layers
        .iter()
        .map(|l| by_id.get(l.id.as_str()).copied().ok_or_else(|| MapError::MissingAssignment(l.id.clone())))
        .collect::<Result<_, _>>()?;

    let spilled: Vec<bool> = graph
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| {
            !graph.is_exit(i) && resident_bytes(l, asg[i]).into_iter().any(|b| b > cfg.gbuf_bytes)
        })
        .collect();
    let holdings: Vec<Vec<(NodeId, Vec<Iv>)>> = graph
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| {
            asg[i]
                .parts
                .iter()
                .enumerate()
                .map(|(pi, p)| (p.chiplet, part_holds(l, asg[i].strategy, &p.slice, pi)))
                .collect()
        })
        .collect();

    let mut em = Emitter { next_id: 0, out: Vec::new() };
    for (i, layer) in graph.layers.iter().enumerate() {
        let home = cfg.dram_home(i);
        let shares = layer.input_shares();
        let sources: Vec<Source> = shares
            .iter()
            .enumerate()
            .map(|(slot, s)| match graph.preds(i).get(slot) {
                Some(&p) if spilled[p] => Source::Dram(cfg.dram_home(p), s.elems()),
                Some(&p) => Source::Parts(holdings[p].clone()),
                None => Source::Dram(home, s.elems()),
            })
            .collect();
        inbound_messages(&mut em, i, layer, asg[i], &sources, home);

        // (d) results leave for DRAM at exits, or when the buffer overflows
        let class = if graph.is_exit(i) {
            Some(TrafficClass::OutputAct)
        } else if spilled[i] {
            Some(TrafficClass::Spill)
        } else {
            None
        };
        if let Some(class) = class {
            for (node, ivs) in &holdings[i] {
                em.emit(i, &layer.id, class, *node, vec![home], total(ivs) * layer.bytes_per_elem);
            }
        }
    }
    Ok(em.out)
}

/// Replace every multicast by one unicast per destination, in destination
/// order, renumbering ids.
pub fn serialize_multicasts(messages: &[Message]) -> Vec<Message> {
    let mut out = Vec::with_capacity(messages.len());
    for m in messages {
        for &d in &m.dsts {
            out.push(Message { id: out.len() as u64, dsts: vec![d], ..m.clone() });
        }
    }
    out
}

/// Input bytes one layer's parts receive over the network or already hold.
pub fn delivered_input_bytes(layer: &Layer, asg: &TileAssignment) -> u64 {
    asg.parts
        .iter()
        .map(|p| part_needs(layer, asg.strategy, &p.slice).iter().map(|v| total(v)).sum::<u64>())
        .sum::<u64>()
        * layer.bytes_per_elem
}

/// Output bytes held across a layer's parts after completion.
pub fn held_output_bytes(layer: &Layer, asg: &TileAssignment) -> u64 {
    asg.parts
        .iter()
        .enumerate()
        .map(|(i, p)| total(&part_holds(layer, asg.strategy, &p.slice, i)))
        .sum::<u64>()
        * layer.bytes_per_elem
}

pub fn input_bytes(layer: &Layer) -> u64 {
    crate::workload::tensor_bytes(layer, TensorKind::Input)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::parse_arch;
    use crate::workload::{ConvDims, GemmDims, PoolDims};

    fn fc(id: &str, m: u64, k: u64, n: u64, preds: &[&str]) -> Layer {
        Layer::new(id, Dims::Fc(GemmDims { m, k, n }), preds)
    }

    fn conv(id: &str, c: u64, k: u64, r: u64, h: u64, preds: &[&str]) -> Layer {
        Layer::new(id, Dims::Conv(ConvDims { c, k, r, s: r, h, w: h, stride: 1, groups: 1 }), preds)
    }

    fn chain(n: usize) -> LayerGraph {
        let layers = (0..n)
            .map(|i| {
                let id = format!("l{i}");
                let pred = format!("l{}", i.wrapping_sub(1));
                let preds: Vec<&str> = if i == 0 { vec![] } else { vec![&pred] };
                fc(&id, 64, 64, 1, &preds)
            })
            .collect();
        LayerGraph::new("chain", 1, layers).unwrap()
    }

    #[test]
    fn halo_rows_same_padding() {
        assert_eq!(halo_rows(&(0..2), 4, 3, 1), 0..3);
        assert_eq!(halo_rows(&(2..4), 4, 3, 1), 1..4);
        assert_eq!(halo_rows(&(0..4), 4, 1, 1), 0..4);
        // 7x7 stride 2 on 224 rows: pad_top 2
        assert_eq!(halo_rows(&(0..56), 224, 7, 2), 0..115);
    }

    #[test]
    fn policy_parsing() {
        assert_eq!("all".parse(), Ok(MappingPolicy::AllChiplets));
        assert_eq!("pipeline:3".parse(), Ok(MappingPolicy::PipelineSegments(3)));
        assert!("pipeline:0".parse::<MappingPolicy>().is_err());
        assert!("greedy".parse::<MappingPolicy>().is_err());
        assert_eq!(MappingPolicy::PipelineSegments(4).to_string(), "pipeline:4");
    }

    #[test]
    fn strategy_wide_conv_tiny_map_is_split_k() {
        // weights 64*64*9 dwarf the 64*2*2 input: broadcasting the input wins
        let cfg = parse_arch("3x3").unwrap();
        let l = conv("c", 64, 64, 3, 2, &[]);
        assert_eq!(choose_strategy(&l, 4, &cfg), Ok(Strategy::SplitK));
    }

    #[test]
    fn strategy_large_map_few_weights_is_split_hw() {
        let cfg = parse_arch("3x3").unwrap();
        let l = conv("c", 3, 64, 7, 224, &[]);
        assert_eq!(choose_strategy(&l, 9, &cfg), Ok(Strategy::SplitHW));
    }

    #[test]
    fn strategy_single_feature_fc() {
        let cfg = parse_arch("1x2").unwrap();
        let l = fc("f", 16, 1, 1, &[]);
        assert_eq!(choose_strategy(&l, 2, &cfg), Ok(Strategy::SplitK));
        assert_eq!(choose_strategy(&l, 1, &cfg), Ok(Strategy::SplitK));
    }

    #[test]
    fn strategy_unpartitionable() {
        let cfg = parse_arch("3x3").unwrap();
        let l = fc("f", 2, 1, 1, &[]);
        assert_eq!(
            choose_strategy(&l, 4, &cfg),
            Err(MapError::NotPartitionable { layer: "f".into(), parts: 4 })
        );
    }

    #[test]
    fn all_chiplets_policy() {
        let cfg = parse_arch("1x2").unwrap();
        let a = place_layers(&chain(4), &cfg, MappingPolicy::AllChiplets).unwrap();
        assert_eq!(a.len(), 4);
        assert!(a.iter().all(|t| t.parts.len() == 2));
        let one = LayerGraph::new("one", 1, vec![fc("f", 64, 64, 1, &[])]).unwrap();
        let a = place_layers(&one, &parse_arch("3x3").unwrap(), MappingPolicy::AllChiplets).unwrap();
        assert_eq!(a[0].parts.len(), 9);
    }

    #[test]
    fn pipeline_regions() {
        let cfg = parse_arch("3x3").unwrap();
        let a = place_layers(&chain(4), &cfg, MappingPolicy::PipelineSegments(2)).unwrap();
        let sizes: Vec<usize> = a.iter().map(|t| t.parts.len()).collect();
        assert_eq!(sizes, vec![4, 4, 5, 5]);
        let first: Vec<NodeId> = a[0].parts.iter().map(|p| p.chiplet).collect();
        assert_eq!(first, cfg.compute_nodes()[..4].to_vec());
        let second: Vec<NodeId> = a[2].parts.iter().map(|p| p.chiplet).collect();
        assert_eq!(second, cfg.compute_nodes()[4..].to_vec());
        // oversize segments clamp to the layer count
        let a = place_layers(&chain(4), &cfg, MappingPolicy::PipelineSegments(99)).unwrap();
        assert!(a.iter().all(|t| t.parts.len() == 9));
        let tiny = parse_arch("1x2").unwrap();
        assert_eq!(
            place_layers(&chain(4), &tiny, MappingPolicy::PipelineSegments(1)),
            Err(MapError::RegionTooSmall { segments: 4, chiplets: 2 })
        );
    }

    #[test]
    fn fc_split_k_two_chiplets() {
        let cfg = parse_arch("1x2").unwrap();
        let g = LayerGraph::new("f", 1, vec![fc("f", 4, 8, 1, &[])]).unwrap();
        let asg = vec![assign(&g.layers[0], Strategy::SplitK, &cfg.compute_nodes()).unwrap()];
        let msgs = build_messages(&g, &asg, &cfg).unwrap();
        let weights: Vec<_> = msgs.iter().filter(|m| m.class == TrafficClass::Weight).collect();
        assert_eq!(weights.len(), 2);
        assert!(weights.iter().all(|m| m.bytes == 16 && m.dsts.len() == 1));
        let inputs: Vec<_> = msgs.iter().filter(|m| m.class == TrafficClass::InputAct).collect();
        assert_eq!(inputs.len(), 1);
        assert_eq!(inputs[0].dsts.len(), 2);
        assert_eq!(inputs[0].bytes, 8);
        assert_eq!(inputs[0].src, cfg.dram_home(0));
    }

    #[test]
    fn single_chiplet_single_conv() {
        let cfg = parse_arch("1x1").unwrap();
        let g = LayerGraph::new("c", 1, vec![conv("c", 3, 2, 1, 2, &[])]).unwrap();
        let asg = place_layers(&g, &cfg, MappingPolicy::AllChiplets).unwrap();
        let msgs = build_messages(&g, &asg, &cfg).unwrap();
        let classes: Vec<_> = msgs.iter().map(|m| m.class).collect();
        assert_eq!(
            classes,
            vec![TrafficClass::Weight, TrafficClass::InputAct, TrafficClass::OutputAct]
        );
        assert!(msgs.iter().all(|m| !m.is_multicast()));
        assert_eq!(msgs.iter().map(|m| m.bytes).collect::<Vec<_>>(), vec![6, 12, 8]);
    }

    #[test]
    fn split_k_chain_multicasts_each_slice() {
        let cfg = parse_arch("3x3").unwrap();
        let g = LayerGraph::new("ab", 1, vec![fc("a", 90, 90, 1, &[]), fc("b", 90, 90, 1, &["a"])])
            .unwrap();
        let nodes = cfg.compute_nodes();
        let asg: Vec<_> = g.layers.iter().map(|l| assign(l, Strategy::SplitK, &nodes).unwrap()).collect();
        let msgs = build_messages(&g, &asg, &cfg).unwrap();
        let b_inputs: Vec<_> = msgs
            .iter()
            .filter(|m| m.layer_id == "b" && m.class == TrafficClass::InputAct)
            .collect();
        assert_eq!(b_inputs.len(), 9);
        for (i, m) in b_inputs.iter().enumerate() {
            assert_eq!(m.src, nodes[i]);
            assert_eq!(m.dsts.len(), 8);
            assert_eq!(m.bytes, 10);
        }
    }

    #[test]
    fn split_hw_halos_are_neighbor_unicasts() {
        let cfg = parse_arch("1x3").unwrap();
        let nodes = cfg.compute_nodes();
        let g = LayerGraph::new(
            "hw",
            1,
            vec![conv("a", 2, 4, 3, 6, &[]), conv("b", 4, 4, 3, 6, &["a"])],
        )
        .unwrap();
        let asg: Vec<_> = g.layers.iter().map(|l| assign(l, Strategy::SplitHW, &nodes).unwrap()).collect();
        let msgs = build_messages(&g, &asg, &cfg).unwrap();
        let halos: Vec<_> = msgs
            .iter()
            .filter(|m| m.layer_id == "b" && m.class == TrafficClass::InputAct)
            .collect();
        // every boundary row travels to the neighbour only: 4 halos of 4 ch x 1 row x 6
        assert_eq!(halos.len(), 4);
        for m in &halos {
            assert_eq!(m.dsts.len(), 1);
            assert_eq!(m.bytes, 24);
            let (s, d) = (m.src.x as i64, m.dsts[0].x as i64);
            assert_eq!((s - d).abs(), 1);
        }
        // the weight tensor is shared by all parts
        let w: Vec<_> = msgs.iter().filter(|m| m.layer_id == "b" && m.class == TrafficClass::Weight).collect();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].dsts.len(), 3);
    }

    #[test]
    fn split_c_reduces_into_root() {
        let cfg = parse_arch("1x3").unwrap();
        let nodes = cfg.compute_nodes();
        let g = LayerGraph::new("c", 1, vec![fc("f", 5, 30, 1, &[])]).unwrap();
        let asg = vec![assign(&g.layers[0], Strategy::SplitC, &nodes).unwrap()];
        let msgs = build_messages(&g, &asg, &cfg).unwrap();
        let ps: Vec<_> = msgs.iter().filter(|m| m.class == TrafficClass::PartialSum).collect();
        assert_eq!(ps.len(), 2);
        assert!(ps.iter().all(|m| m.dsts == vec![nodes[0]] && m.bytes == 5));
        let out: Vec<_> = msgs.iter().filter(|m| m.class == TrafficClass::OutputAct).collect();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].src, nodes[0]);
        // disjoint input slices: three unicasts of 10 bytes
        let inp: Vec<_> = msgs.iter().filter(|m| m.class == TrafficClass::InputAct).collect();
        assert_eq!(inp.iter().map(|m| (m.dsts.len(), m.bytes)).collect::<Vec<_>>(), vec![(1, 10); 3]);
    }

    #[test]
    fn overflowing_layer_spills_and_is_refetched() {
        let cfg = parse_arch("1x2 gbuf_bytes=64").unwrap();
        let nodes = cfg.compute_nodes();
        let g = LayerGraph::new("s", 1, vec![fc("a", 40, 40, 1, &[]), fc("b", 40, 40, 1, &["a"])])
            .unwrap();
        let asg: Vec<_> = g.layers.iter().map(|l| assign(l, Strategy::SplitK, &nodes).unwrap()).collect();
        let msgs = build_messages(&g, &asg, &cfg).unwrap();
        let spills: Vec<_> = msgs.iter().filter(|m| m.class == TrafficClass::Spill).collect();
        assert_eq!(spills.len(), 2);
        assert!(spills.iter().all(|m| m.dsts == vec![cfg.dram_home(0)] && m.bytes == 20));
        let refetch: Vec<_> = msgs
            .iter()
            .filter(|m| m.layer_id == "b" && m.class == TrafficClass::InputAct)
            .collect();
        assert_eq!(refetch.len(), 1);
        assert_eq!(refetch[0].src, cfg.dram_home(0));
        assert_eq!(refetch[0].dsts.len(), 2);
    }

    #[test]
    fn grouped_conv_reads_only_its_groups() {
        let l = Layer::new(
            "g",
            Dims::Conv(ConvDims { c: 8, k: 8, r: 3, s: 3, h: 4, w: 4, stride: 1, groups: 4 }),
            &[],
        );
        let needs = part_needs(&l, Strategy::SplitK, &Slice::OutChannels(0..2));
        assert_eq!(needs, vec![vec![(0, 2 * 16)]]);
        let pool = Layer::new("p", Dims::Pool(PoolDims { c: 8, h: 4, w: 4, window: 2, stride: 2 }), &[]);
        let needs = part_needs(&pool, Strategy::SplitK, &Slice::OutChannels(2..4));
        assert_eq!(needs, vec![vec![(32, 64)]]);
    }

    #[test]
    fn serial_multicast_expansion() {
        let cfg = parse_arch("1x3").unwrap();
        let g = LayerGraph::new("f", 1, vec![fc("f", 3, 8, 1, &[])]).unwrap();
        let asg = vec![assign(&g.layers[0], Strategy::SplitK, &cfg.compute_nodes()).unwrap()];
        let msgs = build_messages(&g, &asg, &cfg).unwrap();
        let serial = serialize_multicasts(&msgs);
        assert!(serial.iter().all(|m| m.dsts.len() == 1));
        let fan: usize = msgs.iter().map(|m| m.dsts.len()).sum();
        assert_eq!(serial.len(), fan);
        assert!(serial.iter().enumerate().all(|(i, m)| m.id == i as u64));
    }
}
