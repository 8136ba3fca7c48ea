//! Fixtures shared by the benchmarks.

use chiplet_lab_core::arch::{parse_arch, ArchConfig};
use chiplet_lab_core::mapper::{build_messages, place_layers, Message, MappingPolicy, TileAssignment};
use chiplet_lab_core::workload::LayerGraph;
use chiplet_lab_core::zoo;

pub struct Mapped {
    pub graph: LayerGraph,
    pub cfg: ArchConfig,
    pub assignments: Vec<TileAssignment>,
    pub messages: Vec<Message>,
}

/// A built-in workload mapped with the default policy onto `grid`.
pub fn mapped(workload: &str, grid: &str) -> Mapped {
    let graph = zoo::build(workload).expect("built-in workload");
    let cfg = parse_arch(grid).expect("grid shorthand");
    let assignments = place_layers(&graph, &cfg, MappingPolicy::AllChiplets).expect("placement");
    let messages = build_messages(&graph, &assignments, &cfg).expect("messages");
    Mapped { graph, cfg, assignments, messages }
}
