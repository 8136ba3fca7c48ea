//! Trace dump: one CSV record per message, ordered by message id.
//!
//! ```text
//! msg_id,layer_id,class,src,dsts,bytes,hops,is_multicast,start,end
//! 0,conv1,weight,D0_0,C1_0|C2_0,9408,3,true,0,2355
//! ```

use std::fmt::Write as _;

use thiserror::Error;

use crate::arch::NodeId;
use crate::mapper::TrafficClass;
use crate::netsim::TimedTrace;

pub const HEADER: &str = "msg_id,layer_id,class,src,dsts,bytes,hops,is_multicast,start,end";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TraceError {
    #[error("trace header mismatch: `{0}`")]
    Header(String),
    #[error("trace line {line}: {reason}")]
    Record { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRow {
    pub msg_id: u64,
    pub layer_id: String,
    pub class: TrafficClass,
    pub src: NodeId,
    pub dsts: Vec<NodeId>,
    pub bytes: u64,
    pub hops: u32,
    pub is_multicast: bool,
    pub start: u64,
    pub end: u64,
}

pub fn rows(trace: &TimedTrace) -> Vec<TraceRow> {
    trace
        .records
        .iter()
        .map(|r| TraceRow {
            msg_id: r.message.id,
            layer_id: r.message.layer_id.clone(),
            class: r.message.class,
            src: r.message.src,
            dsts: r.message.dsts.clone(),
            bytes: r.message.bytes,
            hops: r.hop_count(),
            is_multicast: r.is_multicast(),
            start: r.start,
            end: r.end,
        })
        .collect()
}

pub fn to_csv(rows: &[TraceRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(HEADER);
    out.push('\n');
    for r in rows {
        let dsts: Vec<String> = r.dsts.iter().map(NodeId::to_string).collect();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.msg_id,
            r.layer_id,
            r.class,
            r.src,
            dsts.join("|"),
            r.bytes,
            r.hops,
            r.is_multicast,
            r.start,
            r.end
        )
        .expect("writing to a String");
    }
    out
}

pub fn parse_csv(text: &str) -> Result<Vec<TraceRow>, TraceError> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == HEADER => {}
        other => return Err(TraceError::Header(other.unwrap_or("").to_string())),
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let line_no = i + 2;
        let err = |reason: String| TraceError::Record { line: line_no, reason };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 10 {
            return Err(err(format!("expected 10 fields, found {}", f.len())));
        }
        let num = |s: &str, what: &str| s.parse::<u64>().map_err(|_| err(format!("bad {what} `{s}`")));
        let node = |s: &str| s.parse::<NodeId>().map_err(|e| err(e.to_string()));
        out.push(TraceRow {
            msg_id: num(f[0], "msg_id")?,
            layer_id: f[1].to_string(),
            class: f[2].parse().map_err(err)?,
            src: node(f[3])?,
            dsts: f[4].split('|').map(node).collect::<Result<_, _>>()?,
            bytes: num(f[5], "bytes")?,
            hops: num(f[6], "hops")? as u32,
            is_multicast: f[7].parse().map_err(|_| err(format!("bad is_multicast `{}`", f[7])))?,
            start: num(f[8], "start")?,
            end: num(f[9], "end")?,
        });
    }
    Ok(out)
}
