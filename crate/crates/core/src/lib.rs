//! Communication characterization of DNN inference on multi-chiplet
//! accelerators.
//!
//! A workload ([`workload::LayerGraph`]) is partitioned over the compute
//! chiplets of a 2-D mesh ([`arch::ArchConfig`]) by the [`mapper`], which
//! emits the resulting messages. [`netsim`] routes and times them, and the
//! [`analyzer`] turns the timed trace into NoC/NoP/DRAM breakdowns and
//! unicast/multicast histograms. [`experiment`] drives whole sweeps.
//!
//! ```
//! use chiplet_lab_core::{experiment::{run_pair, resolve_arch}, mapper::MappingPolicy, zoo};
//!
//! let graph = zoo::build("tf_cell").unwrap();
//! let arch = resolve_arch("3x3", false).unwrap();
//! let r = run_pair(&graph, &arch, MappingPolicy::AllChiplets, Default::default()).unwrap();
//! assert!(r.report.total_comm_cycles > 0);
//! ```

pub mod analyzer;
pub mod arch;
pub mod experiment;
pub mod mapper;
pub mod netsim;
pub mod trace;
pub mod workload;
pub mod zoo;

pub use analyzer::{Breakdown, BoxStats, HopKind, MetricsReport, ReportFormat};
pub use arch::{parse_arch, ArchConfig, Link, NodeId, NodeKind};
pub use experiment::{ExperimentSpec, Outcome, WorkloadSource};
pub use mapper::{Message, MappingPolicy, Strategy, TileAssignment, TrafficClass};
pub use netsim::{simulate, Busy, SimOptions, TimedRecord, TimedTrace};
pub use trace::TraceRow;
pub use workload::{Layer, LayerGraph, OpKind, Shape};
