//! Builders for the bundled inference workloads.
//!
//! Layer tables follow the published architecture definitions at batch 1.
//! Activation functions, normalization and softmax move no data of their
//! own and are folded into the neighbouring layers.

use crate::workload::{
    ConcatDims, ConvDims, Dims, EltwiseDims, EmbeddingDims, GemmDims, Layer, LayerGraph,
    LstmDims, PoolDims,
};

/// Names of every bundled workload, in sweep order.
pub const WORKLOADS: [&str; 12] = [
    "darknet19",
    "densenet121",
    "gnmt",
    "googlenet",
    "lstm",
    "resnet101",
    "resnet152",
    "resnet50",
    "resnext50",
    "tf",
    "tf_cell",
    "ires",
];

pub fn build(name: &str) -> Option<LayerGraph> {
    let layers = match name {
        "darknet19" => darknet19(),
        "densenet121" => densenet121(),
        "gnmt" => gnmt(),
        "googlenet" => googlenet(),
        "lstm" => lstm(),
        "resnet50" => resnet(&[3, 4, 6, 3], 1, 64),
        "resnet101" => resnet(&[3, 4, 23, 3], 1, 64),
        "resnet152" => resnet(&[3, 8, 36, 3], 1, 64),
        "resnext50" => resnet(&[3, 4, 6, 3], 32, 128),
        "tf" => transformer(6, 512, 2048, 128),
        "tf_cell" => transformer(1, 768, 3072, 128),
        "ires" => inception_resnet(),
        _ => return None,
    };
    Some(LayerGraph::new(name, 1, layers).expect("bundled workloads are well-formed"))
}

pub fn all() -> Vec<LayerGraph> {
    WORKLOADS.iter().map(|n| build(n).expect("listed workload exists")).collect()
}

/// Feature map produced by a layer; an empty id means "read from DRAM".
#[derive(Clone, Debug)]
struct Fm {
    id: String,
    c: u64,
    h: u64,
    w: u64,
}

impl Fm {
    fn image(c: u64, h: u64) -> Self {
        Fm { id: String::new(), c, h, w: h }
    }

    fn elems(&self) -> u64 {
        self.c * self.h * self.w
    }
}

#[derive(Default)]
struct Net {
    layers: Vec<Layer>,
}

impl Net {
    fn push(&mut self, id: &str, dims: Dims, inputs: &[&Fm]) {
        let preds: Vec<&str> =
            inputs.iter().filter(|f| !f.id.is_empty()).map(|f| f.id.as_str()).collect();
        self.layers.push(Layer::new(id, dims, &preds));
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_rs(&mut self, id: &str, x: &Fm, k: u64, r: u64, s: u64, stride: u64, groups: u64) -> Fm {
        let d = ConvDims { c: x.c, k, r, s, h: x.h, w: x.w, stride, groups };
        self.push(id, Dims::Conv(d), &[x]);
        Fm { id: id.into(), c: k, h: x.h.div_ceil(stride), w: x.w.div_ceil(stride) }
    }

    fn conv(&mut self, id: &str, x: &Fm, k: u64, r: u64, stride: u64) -> Fm {
        self.conv_rs(id, x, k, r, r, stride, 1)
    }

    fn pool(&mut self, id: &str, x: &Fm, window: u64, stride: u64) -> Fm {
        let d = PoolDims { c: x.c, h: x.h, w: x.w, window, stride };
        self.push(id, Dims::Pool(d), &[x]);
        Fm { id: id.into(), c: x.c, h: x.h.div_ceil(stride), w: x.w.div_ceil(stride) }
    }

    fn global_pool(&mut self, id: &str, x: &Fm) -> Fm {
        let d = PoolDims { c: x.c, h: x.h, w: x.w, window: x.h.max(x.w), stride: x.h.max(x.w) };
        self.push(id, Dims::Pool(d), &[x]);
        Fm { id: id.into(), c: x.c, h: 1, w: 1 }
    }

    fn add(&mut self, id: &str, a: &Fm, b: &Fm) -> Fm {
        assert_eq!(a.elems(), b.elems(), "{id}: residual operands differ");
        self.push(id, Dims::EltwiseAdd(EltwiseDims { elems: a.elems() }), &[a, b]);
        Fm { id: id.into(), ..a.clone() }
    }

    fn concat(&mut self, id: &str, parts: &[&Fm]) -> Fm {
        let elems = parts.iter().map(|f| f.elems()).collect();
        self.push(id, Dims::Concat(ConcatDims { elems }), parts);
        let c = parts.iter().map(|f| f.c).sum();
        Fm { id: id.into(), c, h: parts[0].h, w: parts[0].w }
    }

    fn fc(&mut self, id: &str, x: &Fm, m: u64) -> Fm {
        let d = GemmDims { m, k: x.elems(), n: 1 };
        self.push(id, Dims::Fc(d), &[x]);
        Fm { id: id.into(), c: m, h: 1, w: 1 }
    }
}

fn darknet19() -> Vec<Layer> {
    let mut n = Net::default();
    let mut x = Fm::image(3, 224);
    // (out channels, kernel) per conv; 0 marks a 2x2 max pool
    let plan: &[(u64, u64)] = &[
        (32, 3),
        (0, 0),
        (64, 3),
        (0, 0),
        (128, 3),
        (64, 1),
        (128, 3),
        (0, 0),
        (256, 3),
        (128, 1),
        (256, 3),
        (0, 0),
        (512, 3),
        (256, 1),
        (512, 3),
        (256, 1),
        (512, 3),
        (0, 0),
        (1024, 3),
        (512, 1),
        (1024, 3),
        (512, 1),
        (1024, 3),
        (1000, 1),
    ];
    let (mut convs, mut pools) = (0, 0);
    for &(k, r) in plan {
        if k == 0 {
            pools += 1;
            x = n.pool(&format!("pool{pools}"), &x, 2, 2);
        } else {
            convs += 1;
            x = n.conv(&format!("conv{convs}"), &x, k, r, 1);
        }
    }
    n.global_pool("avgpool", &x);
    n.layers
}

fn resnet(blocks: &[usize; 4], groups: u64, base_width: u64) -> Vec<Layer> {
    let mut n = Net::default();
    let x = n.conv("conv1", &Fm::image(3, 224), 64, 7, 2);
    let mut x = n.pool("pool1", &x, 3, 2);
    for (stage, &count) in blocks.iter().enumerate() {
        let width = base_width << stage;
        let out = 256 << stage;
        for b in 0..count {
            let p = format!("s{}b{}", stage + 2, b + 1);
            let stride = if b == 0 && stage > 0 { 2 } else { 1 };
            let a = n.conv(&format!("{p}_1x1a"), &x, width, 1, 1);
            let m = n.conv_rs(&format!("{p}_3x3"), &a, width, 3, 3, stride, groups);
            let c = n.conv(&format!("{p}_1x1b"), &m, out, 1, 1);
            let shortcut = if b == 0 { n.conv(&format!("{p}_proj"), &x, out, 1, stride) } else { x.clone() };
            x = n.add(&format!("{p}_add"), &c, &shortcut);
        }
    }
    let x = n.global_pool("avgpool", &x);
    n.fc("fc", &x, 1000);
    n.layers
}

fn googlenet() -> Vec<Layer> {
    let mut n = Net::default();
    let x = n.conv("conv1", &Fm::image(3, 224), 64, 7, 2);
    let x = n.pool("pool1", &x, 3, 2);
    let x = n.conv("conv2_red", &x, 64, 1, 1);
    let x = n.conv("conv2", &x, 192, 3, 1);
    let mut x = n.pool("pool2", &x, 3, 2);
    // name, #1x1, #3x3 reduce, #3x3, #5x5 reduce, #5x5, pool proj
    let table: &[(&str, [u64; 6])] = &[
        ("3a", [64, 96, 128, 16, 32, 32]),
        ("3b", [128, 128, 192, 32, 96, 64]),
        ("pool3", [0; 6]),
        ("4a", [192, 96, 208, 16, 48, 64]),
        ("4b", [160, 112, 224, 24, 64, 64]),
        ("4c", [128, 128, 256, 24, 64, 64]),
        ("4d", [112, 144, 288, 32, 64, 64]),
        ("4e", [256, 160, 320, 32, 128, 128]),
        ("pool4", [0; 6]),
        ("5a", [256, 160, 320, 32, 128, 128]),
        ("5b", [384, 192, 384, 48, 128, 128]),
    ];
    for (name, f) in table {
        if name.starts_with("pool") {
            x = n.pool(name, &x, 3, 2);
            continue;
        }
        let p = format!("inc{name}");
        let b1 = n.conv(&format!("{p}_1x1"), &x, f[0], 1, 1);
        let b2 = n.conv(&format!("{p}_3x3red"), &x, f[1], 1, 1);
        let b2 = n.conv(&format!("{p}_3x3"), &b2, f[2], 3, 1);
        let b3 = n.conv(&format!("{p}_5x5red"), &x, f[3], 1, 1);
        let b3 = n.conv(&format!("{p}_5x5"), &b3, f[4], 5, 1);
        let b4 = n.pool(&format!("{p}_pool"), &x, 3, 1);
        let b4 = n.conv(&format!("{p}_poolproj"), &b4, f[5], 1, 1);
        x = n.concat(&format!("{p}_concat"), &[&b1, &b2, &b3, &b4]);
    }
    let x = n.global_pool("avgpool", &x);
    n.fc("fc", &x, 1000);
    n.layers
}

fn densenet121() -> Vec<Layer> {
    const GROWTH: u64 = 32;
    let mut n = Net::default();
    let x = n.conv("conv0", &Fm::image(3, 224), 64, 7, 2);
    let mut x = n.pool("pool0", &x, 3, 2);
    let blocks = [6, 12, 24, 16];
    for (b, &count) in blocks.iter().enumerate() {
        for l in 0..count {
            let p = format!("db{}l{}", b + 1, l + 1);
            let bottleneck = n.conv(&format!("{p}_1x1"), &x, 4 * GROWTH, 1, 1);
            let new = n.conv(&format!("{p}_3x3"), &bottleneck, GROWTH, 3, 1);
            x = n.concat(&format!("{p}_cat"), &[&x, &new]);
        }
        if b + 1 < blocks.len() {
            let t = n.conv(&format!("tr{}_conv", b + 1), &x, x.c / 2, 1, 1);
            x = n.pool(&format!("tr{}_pool", b + 1), &t, 2, 2);
        }
    }
    let x = n.global_pool("avgpool", &x);
    n.fc("fc", &x, 1000);
    n.layers
}

/// Inception-ResNet-v1 with all pooling/strided convs same-padded.
fn inception_resnet() -> Vec<Layer> {
    let mut n = Net::default();
    let x = n.conv("stem1", &Fm::image(3, 299), 32, 3, 2);
    let x = n.conv("stem2", &x, 32, 3, 1);
    let x = n.conv("stem3", &x, 64, 3, 1);
    let x = n.pool("stem_pool", &x, 3, 2);
    let x = n.conv("stem4", &x, 80, 1, 1);
    let x = n.conv("stem5", &x, 192, 3, 1);
    let mut x = n.conv("stem6", &x, 256, 3, 2);

    for i in 1..=5 {
        let p = format!("a{i}");
        let b0 = n.conv(&format!("{p}_b0"), &x, 32, 1, 1);
        let b1 = n.conv(&format!("{p}_b1a"), &x, 32, 1, 1);
        let b1 = n.conv(&format!("{p}_b1b"), &b1, 32, 3, 1);
        let b2 = n.conv(&format!("{p}_b2a"), &x, 32, 1, 1);
        let b2 = n.conv(&format!("{p}_b2b"), &b2, 32, 3, 1);
        let b2 = n.conv(&format!("{p}_b2c"), &b2, 32, 3, 1);
        let cat = n.concat(&format!("{p}_cat"), &[&b0, &b1, &b2]);
        let up = n.conv(&format!("{p}_up"), &cat, 256, 1, 1);
        x = n.add(&format!("{p}_add"), &up, &x);
    }

    let r0 = n.pool("ra_pool", &x, 3, 2);
    let r1 = n.conv("ra_b1", &x, 384, 3, 2);
    let r2 = n.conv("ra_b2a", &x, 192, 1, 1);
    let r2 = n.conv("ra_b2b", &r2, 192, 3, 1);
    let r2 = n.conv("ra_b2c", &r2, 256, 3, 2);
    let mut x = n.concat("ra_cat", &[&r0, &r1, &r2]);

    for i in 1..=10 {
        let p = format!("b{i}");
        let b0 = n.conv(&format!("{p}_b0"), &x, 128, 1, 1);
        let b1 = n.conv(&format!("{p}_b1a"), &x, 128, 1, 1);
        let b1 = n.conv_rs(&format!("{p}_b1b"), &b1, 128, 1, 7, 1, 1);
        let b1 = n.conv_rs(&format!("{p}_b1c"), &b1, 128, 7, 1, 1, 1);
        let cat = n.concat(&format!("{p}_cat"), &[&b0, &b1]);
        let up = n.conv(&format!("{p}_up"), &cat, x.c, 1, 1);
        x = n.add(&format!("{p}_add"), &up, &x);
    }

    let r0 = n.pool("rb_pool", &x, 3, 2);
    let r1 = n.conv("rb_b1a", &x, 256, 1, 1);
    let r1 = n.conv("rb_b1b", &r1, 384, 3, 2);
    let r2 = n.conv("rb_b2a", &x, 256, 1, 1);
    let r2 = n.conv("rb_b2b", &r2, 256, 3, 2);
    let r3 = n.conv("rb_b3a", &x, 256, 1, 1);
    let r3 = n.conv("rb_b3b", &r3, 256, 3, 1);
    let r3 = n.conv("rb_b3c", &r3, 256, 3, 2);
    let mut x = n.concat("rb_cat", &[&r0, &r1, &r2, &r3]);

    for i in 1..=5 {
        let p = format!("c{i}");
        let b0 = n.conv(&format!("{p}_b0"), &x, 192, 1, 1);
        let b1 = n.conv(&format!("{p}_b1a"), &x, 192, 1, 1);
        let b1 = n.conv_rs(&format!("{p}_b1b"), &b1, 192, 1, 3, 1, 1);
        let b1 = n.conv_rs(&format!("{p}_b1c"), &b1, 192, 3, 1, 1, 1);
        let cat = n.concat(&format!("{p}_cat"), &[&b0, &b1]);
        let up = n.conv(&format!("{p}_up"), &cat, x.c, 1, 1);
        x = n.add(&format!("{p}_add"), &up, &x);
    }

    let x = n.global_pool("avgpool", &x);
    n.fc("fc", &x, 1000);
    n.layers
}

/// Token-major activations: `d` features for each of `seq` tokens.
struct Seq {
    id: String,
    d: u64,
    seq: u64,
}

fn seq_fc(layers: &mut Vec<Layer>, id: &str, x: &Seq, m: u64) -> Seq {
    layers.push(Layer::new(id, Dims::Fc(GemmDims { m, k: x.d, n: x.seq }), &[&x.id]));
    Seq { id: id.into(), d: m, seq: x.seq }
}

fn transformer(n_layers: usize, d: u64, ff: u64, seq: u64) -> Vec<Layer> {
    let mut layers = vec![Layer::new(
        "embed",
        Dims::Embedding(EmbeddingDims { tokens: seq, dim: d }),
        &[],
    )];
    let mut x = Seq { id: "embed".into(), d, seq };
    for l in 1..=n_layers {
        let p = format!("enc{l}");
        let q = seq_fc(&mut layers, &format!("{p}_q"), &x, d);
        let k = seq_fc(&mut layers, &format!("{p}_k"), &x, d);
        let v = seq_fc(&mut layers, &format!("{p}_v"), &x, d);
        let scores = format!("{p}_qk");
        layers.push(Layer::new(
            &scores,
            Dims::Matmul(GemmDims { m: seq, k: d, n: seq }),
            &[&q.id, &k.id],
        ));
        let ctx = format!("{p}_av");
        layers.push(Layer::new(
            &ctx,
            Dims::Matmul(GemmDims { m: seq, k: seq, n: d }),
            &[&scores, &v.id],
        ));
        let ctx = Seq { id: ctx, d, seq };
        let proj = seq_fc(&mut layers, &format!("{p}_proj"), &ctx, d);
        let add1 = format!("{p}_add1");
        layers.push(Layer::new(
            &add1,
            Dims::EltwiseAdd(EltwiseDims { elems: d * seq }),
            &[&proj.id, &x.id],
        ));
        let h = Seq { id: add1, d, seq };
        let f1 = seq_fc(&mut layers, &format!("{p}_ff1"), &h, ff);
        let f2 = seq_fc(&mut layers, &format!("{p}_ff2"), &f1, d);
        let add2 = format!("{p}_add2");
        layers.push(Layer::new(
            &add2,
            Dims::EltwiseAdd(EltwiseDims { elems: d * seq }),
            &[&f2.id, &h.id],
        ));
        x = Seq { id: add2, d, seq };
    }
    layers
}

/// Stacked LSTM unrolled over time; cell `(l, t)` reads `x` from the layer
/// below and `h` from its own previous step.
fn lstm_stack(
    layers: &mut Vec<Layer>,
    prefix: &str,
    inputs: &[String],
    input_dim: u64,
    hidden: u64,
    depth: usize,
) -> Vec<String> {
    let mut below: Vec<String> = inputs.to_vec();
    for l in 0..depth {
        let x_dim = if l == 0 { input_dim } else { hidden };
        let mut row: Vec<String> = Vec::with_capacity(below.len());
        for (t, x) in below.iter().enumerate() {
            let id = format!("{prefix}l{}t{}", l + 1, t + 1);
            let mut preds = vec![x.as_str()];
            if t > 0 {
                preds.push(&row[t - 1]);
            }
            layers.push(Layer::new(&id, Dims::LstmCell(LstmDims { hidden, input: x_dim }), &preds));
            row.push(id);
        }
        below = row;
    }
    below
}

fn embeddings(layers: &mut Vec<Layer>, prefix: &str, steps: usize, dim: u64) -> Vec<String> {
    (1..=steps)
        .map(|t| {
            let id = format!("{prefix}{t}");
            layers.push(Layer::new(&id, Dims::Embedding(EmbeddingDims { tokens: 1, dim }), &[]));
            id
        })
        .collect()
}

fn lstm() -> Vec<Layer> {
    const HIDDEN: u64 = 1024;
    const STEPS: usize = 16;
    let mut layers = Vec::new();
    let xs = embeddings(&mut layers, "emb_t", STEPS, HIDDEN);
    let top = lstm_stack(&mut layers, "lstm_", &xs, HIDDEN, HIDDEN, 2);
    let last = top.last().unwrap().clone();
    layers.push(Layer::new("fc", Dims::Fc(GemmDims { m: 1000, k: HIDDEN, n: 1 }), &[&last]));
    layers
}

/// Encoder/decoder LSTM stacks joined by per-step dot-product attention.
fn gnmt() -> Vec<Layer> {
    const HIDDEN: u64 = 512;
    const SRC: usize = 8;
    const TGT: usize = 8;
    const DEPTH: usize = 4;
    const VOCAB: u64 = 32000;
    let mut layers = Vec::new();

    let xs = embeddings(&mut layers, "src_emb_t", SRC, HIDDEN);
    let enc = lstm_stack(&mut layers, "enc_", &xs, HIDDEN, HIDDEN, DEPTH);
    let enc_refs: Vec<&str> = enc.iter().map(String::as_str).collect();
    layers.push(Layer::new(
        "enc_out",
        Dims::Concat(ConcatDims { elems: vec![HIDDEN; SRC] }),
        &enc_refs,
    ));

    let ys = embeddings(&mut layers, "tgt_emb_t", TGT, HIDDEN);
    let bottom = lstm_stack(&mut layers, "dec_", &ys, HIDDEN, HIDDEN, 1);
    let mut attended = Vec::with_capacity(TGT);
    for (t, h) in bottom.iter().enumerate() {
        let p = format!("attn_t{}", t + 1);
        let score = format!("{p}_score");
        layers.push(Layer::new(
            &score,
            Dims::Matmul(GemmDims { m: 1, k: HIDDEN, n: SRC as u64 }),
            &[h, "enc_out"],
        ));
        let ctx = format!("{p}_ctx");
        layers.push(Layer::new(
            &ctx,
            Dims::Matmul(GemmDims { m: 1, k: SRC as u64, n: HIDDEN }),
            &[&score, "enc_out"],
        ));
        let cat = format!("{p}_cat");
        layers.push(Layer::new(
            &cat,
            Dims::Concat(ConcatDims { elems: vec![HIDDEN, HIDDEN] }),
            &[h, &ctx],
        ));
        attended.push(cat);
    }
    let top = lstm_stack(&mut layers, "dec_up_", &attended, 2 * HIDDEN, HIDDEN, DEPTH - 1);
    for (t, h) in top.iter().enumerate() {
        layers.push(Layer::new(
            format!("proj_t{}", t + 1),
            Dims::Fc(GemmDims { m: VOCAB, k: HIDDEN, n: 1 }),
            &[h],
        ));
    }
    layers
}
