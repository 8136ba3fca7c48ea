//! Reference models used as test oracles. They rebuild the topology from
//! the placement rules (not from `ArchConfig::links`) and route by explicit
//! coordinate stepping, so they share no code with the library.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::path::PathBuf;

use chiplet_lab_core::arch::{ArchConfig, NodeId, NodeKind};
use chiplet_lab_core::mapper::{assign, Message, Strategy, TrafficClass};
use chiplet_lab_core::netsim::{simulate, SimOptions, TimedTrace};
use chiplet_lab_core::workload::{Dims, GemmDims, Layer, LayerGraph};

pub type Edge = (NodeId, NodeId);

/// DRAM `i`: even indices west (x=0), odd east (x=cols+1), stacked from a
/// centered start row.
pub fn dram_pos(rows: u32, cols: u32, count: u32, i: u32) -> NodeId {
    let west = i.is_multiple_of(2);
    let on_side = if west { count.div_ceil(2) } else { count / 2 };
    let start = if rows > on_side { (rows - on_side) / 2 } else { 0 };
    NodeId::dram(if west { 0 } else { cols + 1 }, start + i / 2)
}

pub fn dram_attach(rows: u32, cols: u32, d: NodeId) -> NodeId {
    let x = if d.x == 0 { 1 } else { cols };
    NodeId::compute(x, d.y.min(rows - 1))
}

pub fn all_nodes(cfg: &ArchConfig) -> Vec<NodeId> {
    let mut v = Vec::new();
    for y in 0..cfg.rows {
        for x in 1..=cfg.cols {
            v.push(NodeId::compute(x, y));
        }
    }
    for i in 0..cfg.dram_count {
        v.push(dram_pos(cfg.rows, cfg.cols, cfg.dram_count, i));
    }
    v
}

pub fn neighbours(cfg: &ArchConfig, n: NodeId) -> Vec<NodeId> {
    let (r, c, k) = (cfg.rows, cfg.cols, cfg.dram_count);
    let mut out = Vec::new();
    match n.kind {
        NodeKind::Dram => out.push(dram_attach(r, c, n)),
        NodeKind::Compute => {
            for (dx, dy) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                let (x, y) = (n.x as i64 + dx, n.y as i64 + dy);
                if (1..=c as i64).contains(&x) && (0..r as i64).contains(&y) {
                    out.push(NodeId::compute(x as u32, y as u32));
                }
            }
            for i in 0..k {
                let d = dram_pos(r, c, k, i);
                if dram_attach(r, c, d) == n {
                    out.push(d);
                }
            }
        }
    }
    out
}

pub fn bfs(cfg: &ArchConfig, src: NodeId) -> HashMap<NodeId, u32> {
    let mut dist = HashMap::from([(src, 0)]);
    let mut q = VecDeque::from([src]);
    while let Some(n) = q.pop_front() {
        let d = dist[&n];
        for m in neighbours(cfg, n) {
            if let std::collections::hash_map::Entry::Vacant(e) = dist.entry(m) {
                e.insert(d + 1);
                q.push_back(m);
            }
        }
    }
    dist
}

/// X-first path: leave a DRAM through its stub, walk columns, then rows,
/// then enter the destination DRAM.
pub fn xy_links(cfg: &ArchConfig, src: NodeId, dst: NodeId) -> Vec<Edge> {
    let mut links = Vec::new();
    if src == dst {
        return links;
    }
    let mut at = src;
    if src.kind == NodeKind::Dram {
        let a = dram_attach(cfg.rows, cfg.cols, src);
        links.push((at, a));
        at = a;
    }
    let goal = if dst.kind == NodeKind::Dram { dram_attach(cfg.rows, cfg.cols, dst) } else { dst };
    while at.x != goal.x {
        let nx = if goal.x > at.x { at.x + 1 } else { at.x - 1 };
        let next = NodeId::compute(nx, at.y);
        links.push((at, next));
        at = next;
    }
    while at.y != goal.y {
        let ny = if goal.y > at.y { at.y + 1 } else { at.y - 1 };
        let next = NodeId::compute(at.x, ny);
        links.push((at, next));
        at = next;
    }
    if dst.kind == NodeKind::Dram {
        links.push((at, dst));
    }
    links
}

pub fn union_links(cfg: &ArchConfig, src: NodeId, dsts: &[NodeId]) -> BTreeSet<Edge> {
    dsts.iter().flat_map(|&d| xy_links(cfg, src, d)).collect()
}

/// Cycles to push `bytes` through a link of `bw` bytes/cycle, by integer
/// arithmetic on the bandwidth when it is whole.
pub fn ser(bytes: u64, bw: f64) -> u64 {
    assert_eq!(bw.fract(), 0.0, "oracle expects whole bytes/cycle");
    let bw = bw as u64;
    bytes.div_ceil(bw)
}

/// Simulate raw messages attached to a single tiny layer, so that only
/// network timing matters.
pub fn simulate_raw(cfg: &ArchConfig, msgs: &[(NodeId, Vec<NodeId>, u64)], opts: SimOptions) -> TimedTrace {
    let layer = Layer::new("l0", Dims::Fc(GemmDims { m: 1, k: 1, n: 1 }), &[]);
    let graph = LayerGraph::new("raw", 1, vec![layer.clone()]).unwrap();
    let asg = assign(&layer, Strategy::SplitK, &[NodeId::compute(1, 0)]).unwrap();
    let messages: Vec<Message> = msgs
        .iter()
        .enumerate()
        .map(|(i, (src, dsts, bytes))| {
            let mut d = dsts.clone();
            d.sort();
            Message {
                id: i as u64,
                src: *src,
                dsts: d,
                bytes: *bytes,
                class: TrafficClass::Weight,
                layer_id: "l0".into(),
                layer: 0,
                ready: 0,
            }
        })
        .collect();
    simulate(&messages, &[asg], &graph, cfg, opts).unwrap()
}

pub fn bundled_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../workloads")
}

pub fn bundled_files() -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(bundled_dir())
        .expect("workloads/ directory")
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    v.sort();
    v
}

/// Every file under `dir`, relative path -> contents.
pub fn snapshot(dir: &std::path::Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
