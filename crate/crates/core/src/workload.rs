//! DNN workloads as layer DAGs.
//!
//! Every tensor is viewed as a `channels x rows x row_len` block laid out
//! channel-major. Partitioning in the mapper is expressed as element
//! intervals over these blocks, so producer and consumer views only need
//! to agree on element count.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("failed to read workload {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed workload document: {0}")]
    Json(#[from] serde_json::Error),
    #[error("layer `{layer}`: unknown op `{op}`")]
    UnknownOp { layer: String, op: String },
    #[error("layer `{layer}`: bad dims: {reason}")]
    BadDims { layer: String, reason: String },
    #[error("duplicate layer id `{0}`")]
    DuplicateId(String),
    #[error("layer id `{0}` must be non-empty and use only [A-Za-z0-9_.-]")]
    BadId(String),
    #[error("layer `{layer}`: predecessor `{pred}` does not exist")]
    DanglingPred { layer: String, pred: String },
    #[error("layer `{layer}`: {reason}")]
    BadPreds { layer: String, reason: String },
    #[error("layer `{layer}`: input from `{pred}` has {found} elements, expected {expected}")]
    DimMismatch { layer: String, pred: String, expected: u64, found: u64 },
    #[error("dependency cycle through layer `{0}`")]
    Cycle(String),
    #[error("workload has no layers")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Conv,
    Fc,
    Pool,
    EltwiseAdd,
    Concat,
    Matmul,
    LstmCell,
    Embedding,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Conv => "conv",
            OpKind::Fc => "fc",
            OpKind::Pool => "pool",
            OpKind::EltwiseAdd => "eltwise_add",
            OpKind::Concat => "concat",
            OpKind::Matmul => "matmul",
            OpKind::LstmCell => "lstm_cell",
            OpKind::Embedding => "embedding",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "conv" => OpKind::Conv,
            "fc" => OpKind::Fc,
            "pool" => OpKind::Pool,
            "eltwise_add" => OpKind::EltwiseAdd,
            "concat" => OpKind::Concat,
            "matmul" => OpKind::Matmul,
            "lstm_cell" => OpKind::LstmCell,
            "embedding" => OpKind::Embedding,
            _ => return None,
        })
    }
}

fn one() -> u64 {
    1
}

fn is_one(v: &u64) -> bool {
    *v == 1
}

/// Convolution with "same" padding: output size is `ceil(in / stride)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvDims {
    pub c: u64,
    pub k: u64,
    pub r: u64,
    pub s: u64,
    pub h: u64,
    pub w: u64,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub stride: u64,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub groups: u64,
}

/// `out[m x n] = weight[m x k] * in[k x n]`; `n` is the token/batch extent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GemmDims {
    pub m: u64,
    pub k: u64,
    pub n: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolDims {
    pub c: u64,
    pub h: u64,
    pub w: u64,
    pub window: u64,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub stride: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LstmDims {
    pub hidden: u64,
    pub input: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EltwiseDims {
    pub elems: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConcatDims {
    pub elems: Vec<u64>,
}

/// Row lookup: `tokens` ids in, `tokens x dim` out. Only the gathered rows
/// of the table count as weight traffic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingDims {
    pub tokens: u64,
    pub dim: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Dims {
    Conv(ConvDims),
    Fc(GemmDims),
    Pool(PoolDims),
    EltwiseAdd(EltwiseDims),
    Concat(ConcatDims),
    /// Activation-activation product `out[m x n] = a[m x k] * b[k x n]`.
    Matmul(GemmDims),
    LstmCell(LstmDims),
    Embedding(EmbeddingDims),
}

impl Dims {
    pub fn op(&self) -> OpKind {
        match self {
            Dims::Conv(_) => OpKind::Conv,
            Dims::Fc(_) => OpKind::Fc,
            Dims::Pool(_) => OpKind::Pool,
            Dims::EltwiseAdd(_) => OpKind::EltwiseAdd,
            Dims::Concat(_) => OpKind::Concat,
            Dims::Matmul(_) => OpKind::Matmul,
            Dims::LstmCell(_) => OpKind::LstmCell,
            Dims::Embedding(_) => OpKind::Embedding,
        }
    }

    fn to_value(&self) -> serde_json::Value {
        let v = match self {
            Dims::Conv(d) => serde_json::to_value(d),
            Dims::Fc(d) | Dims::Matmul(d) => serde_json::to_value(d),
            Dims::Pool(d) => serde_json::to_value(d),
            Dims::EltwiseAdd(d) => serde_json::to_value(d),
            Dims::Concat(d) => serde_json::to_value(d),
            Dims::LstmCell(d) => serde_json::to_value(d),
            Dims::Embedding(d) => serde_json::to_value(d),
        };
        v.expect("dims serialize to plain JSON objects")
    }

    fn from_value(op: OpKind, v: serde_json::Value) -> Result<Self, serde_json::Error> {
        use serde_json::from_value as fv;
        Ok(match op {
            OpKind::Conv => Dims::Conv(fv(v)?),
            OpKind::Fc => Dims::Fc(fv(v)?),
            OpKind::Pool => Dims::Pool(fv(v)?),
            OpKind::EltwiseAdd => Dims::EltwiseAdd(fv(v)?),
            OpKind::Concat => Dims::Concat(fv(v)?),
            OpKind::Matmul => Dims::Matmul(fv(v)?),
            OpKind::LstmCell => Dims::LstmCell(fv(v)?),
            OpKind::Embedding => Dims::Embedding(fv(v)?),
        })
    }
}

/// A `channels x rows x row_len` tensor view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub channels: u64,
    pub rows: u64,
    pub row_len: u64,
}

impl Shape {
    pub const fn new(channels: u64, rows: u64, row_len: u64) -> Self {
        Shape { channels, rows, row_len }
    }

    pub fn elems(&self) -> u64 {
        self.channels * self.rows * self.row_len
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    Input,
    Output,
    Weight,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layer {
    pub id: String,
    pub dims: Dims,
    pub preds: Vec<String>,
    pub bytes_per_elem: u64,
}

impl Layer {
    pub fn new(id: impl Into<String>, dims: Dims, preds: &[&str]) -> Self {
        Layer {
            id: id.into(),
            dims,
            preds: preds.iter().map(|p| p.to_string()).collect(),
            bytes_per_elem: 1,
        }
    }

    pub fn op(&self) -> OpKind {
        self.dims.op()
    }

    /// Output block.
    pub fn output_shape(&self) -> Shape {
        match &self.dims {
            Dims::Conv(d) => Shape::new(d.k, d.h.div_ceil(d.stride), d.w.div_ceil(d.stride)),
            Dims::Pool(d) => Shape::new(d.c, d.h.div_ceil(d.stride), d.w.div_ceil(d.stride)),
            Dims::Fc(d) => Shape::new(d.m, d.n, 1),
            // columns of `out` are the channel axis, rows of `out` the row axis
            Dims::Matmul(d) => Shape::new(d.n, d.m, 1),
            Dims::LstmCell(d) => Shape::new(d.hidden, 1, 1),
            Dims::EltwiseAdd(d) => Shape::new(1, d.elems, 1),
            Dims::Concat(d) => Shape::new(1, d.elems.iter().sum(), 1),
            Dims::Embedding(d) => Shape::new(d.dim, d.tokens, 1),
        }
    }

    /// Input operands in the order predecessors feed them. Operands with no
    /// corresponding predecessor are read from DRAM.
    pub fn input_shares(&self) -> Vec<Shape> {
        match &self.dims {
            Dims::Conv(d) => vec![Shape::new(d.c, d.h, d.w)],
            Dims::Pool(d) => vec![Shape::new(d.c, d.h, d.w)],
            Dims::Fc(d) => vec![Shape::new(d.k, d.n, 1)],
            Dims::Matmul(d) => vec![Shape::new(d.k, d.m, 1), Shape::new(d.n, d.k, 1)],
            Dims::LstmCell(d) => vec![Shape::new(d.input, 1, 1), Shape::new(d.hidden, 1, 1)],
            Dims::EltwiseAdd(d) => vec![Shape::new(1, d.elems, 1); 2],
            Dims::Concat(d) => d.elems.iter().map(|&e| Shape::new(1, e, 1)).collect(),
            Dims::Embedding(d) => vec![Shape::new(1, d.tokens, 1)],
        }
    }

    pub fn weight_elems(&self) -> u64 {
        match &self.dims {
            Dims::Conv(d) => d.k * (d.c / d.groups) * d.r * d.s,
            Dims::Fc(d) => d.m * d.k,
            Dims::LstmCell(d) => 4 * d.hidden * (d.hidden + d.input),
            Dims::Embedding(d) => d.tokens * d.dim,
            Dims::Pool(_) | Dims::EltwiseAdd(_) | Dims::Concat(_) | Dims::Matmul(_) => 0,
        }
    }

    fn check_dims(&self) -> Result<(), WorkloadError> {
        let bad = |reason: String| WorkloadError::BadDims { layer: self.id.clone(), reason };
        let all_positive = |vals: &[u64]| vals.iter().all(|&v| v >= 1);
        let ok = match &self.dims {
            Dims::Conv(d) => {
                if !all_positive(&[d.c, d.k, d.r, d.s, d.h, d.w, d.stride, d.groups]) {
                    false
                } else if d.c % d.groups != 0 || d.k % d.groups != 0 {
                    return Err(bad(format!("groups {} must divide c and k", d.groups)));
                } else {
                    true
                }
            }
            Dims::Fc(d) | Dims::Matmul(d) => all_positive(&[d.m, d.k, d.n]),
            Dims::Pool(d) => all_positive(&[d.c, d.h, d.w, d.window, d.stride]),
            Dims::EltwiseAdd(d) => d.elems >= 1,
            Dims::Concat(d) => {
                if d.elems.len() < 2 {
                    return Err(bad("concat needs at least 2 inputs".into()));
                }
                all_positive(&d.elems)
            }
            Dims::LstmCell(d) => all_positive(&[d.hidden, d.input]),
            Dims::Embedding(d) => all_positive(&[d.tokens, d.dim]),
        };
        if ok {
            Ok(())
        } else {
            Err(bad("all dimensions must be >= 1".into()))
        }
    }

    fn check_pred_count(&self) -> Result<(), WorkloadError> {
        let n = self.preds.len();
        let shares = self.input_shares().len();
        let reason = match self.op() {
            OpKind::EltwiseAdd if n != 2 => Some("eltwise_add needs exactly 2 predecessors".into()),
            OpKind::Concat if n != shares => {
                Some(format!("concat declares {shares} inputs but has {n} predecessors"))
            }
            _ if n > shares => Some(format!("at most {shares} predecessors allowed, got {n}")),
            _ => None,
        };
        match reason {
            Some(reason) => Err(WorkloadError::BadPreds { layer: self.id.clone(), reason }),
            None => Ok(()),
        }
    }
}

pub fn layer_macs(layer: &Layer) -> u64 {
    match &layer.dims {
        Dims::Conv(d) => {
            let out = layer.output_shape();
            d.k * (d.c / d.groups) * d.r * d.s * out.rows * out.row_len
        }
        Dims::Fc(d) | Dims::Matmul(d) => d.m * d.k * d.n,
        Dims::LstmCell(d) => 4 * d.hidden * (d.hidden + d.input),
        Dims::Pool(_) | Dims::EltwiseAdd(_) | Dims::Concat(_) | Dims::Embedding(_) => 0,
    }
}

pub fn tensor_bytes(layer: &Layer, which: TensorKind) -> u64 {
    let elems = match which {
        TensorKind::Input => layer.input_shares().iter().map(Shape::elems).sum(),
        TensorKind::Output => layer.output_shape().elems(),
        TensorKind::Weight => layer.weight_elems(),
    };
    elems * layer.bytes_per_elem
}

/// A validated DAG in topological order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerGraph {
    pub name: String,
    pub bytes_per_elem: u64,
    pub layers: Vec<Layer>,
    preds: Vec<Vec<usize>>,
    succs: Vec<Vec<usize>>,
    index: HashMap<String, usize>,
}

impl LayerGraph {
    /// Validate and topologically order `layers`. Input order is kept
    /// wherever it is already consistent.
    pub fn new(
        name: impl Into<String>,
        bytes_per_elem: u64,
        mut layers: Vec<Layer>,
    ) -> Result<Self, WorkloadError> {
        if layers.is_empty() {
            return Err(WorkloadError::Empty);
        }
        let mut pos = HashMap::new();
        for (i, l) in layers.iter_mut().enumerate() {
            if l.id.is_empty()
                || !l.id.chars().all(|c| c.is_ascii_alphanumeric() || "_.-".contains(c))
            {
                return Err(WorkloadError::BadId(l.id.clone()));
            }
            if pos.insert(l.id.clone(), i).is_some() {
                return Err(WorkloadError::DuplicateId(l.id.clone()));
            }
            l.bytes_per_elem = bytes_per_elem;
        }
        for l in &layers {
            l.check_dims()?;
            l.check_pred_count()?;
            for p in &l.preds {
                if !pos.contains_key(p) {
                    return Err(WorkloadError::DanglingPred { layer: l.id.clone(), pred: p.clone() });
                }
            }
        }

        // Kahn's algorithm, always releasing the lowest original position.
        let n = layers.len();
        let mut indeg = vec![0usize; n];
        let mut out_edges = vec![Vec::new(); n];
        for (i, l) in layers.iter().enumerate() {
            for p in &l.preds {
                let j = pos[p];
                out_edges[j].push(i);
                indeg[i] += 1;
            }
        }
        let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(i) = ready.pop_first() {
            order.push(i);
            for &j in &out_edges[i] {
                indeg[j] -= 1;
                if indeg[j] == 0 {
                    ready.insert(j);
                }
            }
        }
        if order.len() != n {
            let stuck = (0..n).find(|&i| indeg[i] > 0).expect("some layer is blocked");
            return Err(WorkloadError::Cycle(layers[stuck].id.clone()));
        }

        let mut slots: Vec<Option<Layer>> = layers.into_iter().map(Some).collect();
        let layers: Vec<Layer> = order.iter().map(|&i| slots[i].take().unwrap()).collect();
        let index: HashMap<String, usize> =
            layers.iter().enumerate().map(|(i, l)| (l.id.clone(), i)).collect();
        let preds: Vec<Vec<usize>> =
            layers.iter().map(|l| l.preds.iter().map(|p| index[p]).collect()).collect();
        let mut succs = vec![Vec::new(); n];
        for (i, ps) in preds.iter().enumerate() {
            for &p in ps {
                if !succs[p].contains(&i) {
                    succs[p].push(i);
                }
            }
        }

        for (i, l) in layers.iter().enumerate() {
            let shares = l.input_shares();
            for (slot, &p) in preds[i].iter().enumerate() {
                let found = layers[p].output_shape().elems();
                let expected = shares[slot].elems();
                if found != expected {
                    return Err(WorkloadError::DimMismatch {
                        layer: l.id.clone(),
                        pred: layers[p].id.clone(),
                        expected,
                        found,
                    });
                }
            }
        }

        Ok(LayerGraph { name: name.into(), bytes_per_elem, layers, preds, succs, index })
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Predecessor indices in operand order.
    pub fn preds(&self, i: usize) -> &[usize] {
        &self.preds[i]
    }

    pub fn succs(&self, i: usize) -> &[usize] {
        &self.succs[i]
    }

    pub fn entries(&self) -> Vec<&str> {
        (0..self.len()).filter(|&i| self.preds[i].is_empty()).map(|i| &*self.layers[i].id).collect()
    }

    pub fn exits(&self) -> Vec<&str> {
        (0..self.len()).filter(|&i| self.succs[i].is_empty()).map(|i| &*self.layers[i].id).collect()
    }

    pub fn is_exit(&self, i: usize) -> bool {
        self.succs[i].is_empty()
    }

    pub fn total_macs(&self) -> u64 {
        self.layers.iter().map(layer_macs).sum()
    }

    pub fn op_counts(&self) -> BTreeMap<OpKind, usize> {
        let mut m = BTreeMap::new();
        for l in &self.layers {
            *m.entry(l.op()).or_insert(0) += 1;
        }
        m
    }

    pub fn to_json(&self) -> String {
        let doc = WorkloadDoc {
            name: self.name.clone(),
            bytes_per_elem: self.bytes_per_elem,
            layers: self
                .layers
                .iter()
                .map(|l| RawLayer {
                    id: l.id.clone(),
                    op: l.op().name().to_string(),
                    dims: l.dims.to_value(),
                    preds: l.preds.clone(),
                })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&doc).expect("workload serializes");
        s.push('\n');
        s
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLayer {
    id: String,
    op: String,
    dims: serde_json::Value,
    #[serde(default)]
    preds: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WorkloadDoc {
    name: String,
    #[serde(default = "one")]
    bytes_per_elem: u64,
    layers: Vec<RawLayer>,
}

pub fn parse_workload(text: &str) -> Result<LayerGraph, WorkloadError> {
    let doc: WorkloadDoc = serde_json::from_str(text)?;
    if doc.bytes_per_elem == 0 {
        return Err(WorkloadError::BadDims {
            layer: doc.name,
            reason: "bytes_per_elem must be >= 1".into(),
        });
    }
    let mut layers = Vec::with_capacity(doc.layers.len());
    for raw in doc.layers {
        let op = OpKind::from_name(&raw.op)
            .ok_or_else(|| WorkloadError::UnknownOp { layer: raw.id.clone(), op: raw.op.clone() })?;
        let dims = Dims::from_value(op, raw.dims).map_err(|e| WorkloadError::BadDims {
            layer: raw.id.clone(),
            reason: e.to_string(),
        })?;
        layers.push(Layer { id: raw.id, dims, preds: raw.preds, bytes_per_elem: doc.bytes_per_elem });
    }
    LayerGraph::new(doc.name, doc.bytes_per_elem, layers)
}

pub fn load_workload(path: &Path) -> Result<LayerGraph, WorkloadError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| WorkloadError::Io { path: path.display().to_string(), source })?;
    parse_workload(&text)
}
