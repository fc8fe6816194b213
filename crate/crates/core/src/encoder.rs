//! Modality-specific feature encoders and the projection into token space.
//!
//! Every declared input owns one feature encoder (1-D conv for series,
//! affine map for scalars/small vectors, patch attention for images, message
//! passing for DAGs) and one projection (`linear -> layer norm`) to the
//! backbone width. Parameters are registered under `encoder.<input>.`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, SoftmaxMask, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Matrix;

pub const ENCODER_PREFIX: &str = "encoder.";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModalityKind {
    Image,
    TimeSeries,
    Sequence,
    Scalar,
    Graph,
    ReturnValue,
}

/// A single-channel or multi-channel raster, row-major `H×W×C`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub pixels: Vec<f64>,
}

impl Image {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            pixels: vec![0.0; height * width * channels],
        }
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.pixels[(y * self.width + x) * self.channels + c] = v;
    }
}

/// Node attributes plus parent lists of a DAG.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphSnapshot {
    pub node_attrs: Vec<Vec<f64>>,
    pub parents: Vec<Vec<usize>>,
}

impl GraphSnapshot {
    pub fn len(&self) -> usize {
        self.node_attrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_attrs.is_empty()
    }

    /// Kahn's algorithm; on failure names an edge that lies on a cycle.
    pub fn check_acyclic(&self) -> Result<()> {
        let n = self.len();
        if self.parents.len() != n {
            return Err(Error::Input(format!(
                "graph has {n} nodes but {} parent lists",
                self.parents.len()
            )));
        }
        let mut indeg = vec![0usize; n];
        let mut children = vec![Vec::new(); n];
        for (c, ps) in self.parents.iter().enumerate() {
            for &p in ps {
                if p >= n {
                    return Err(Error::Input(format!("edge {p}->{c} references a missing node")));
                }
                indeg[c] += 1;
                children[p].push(c);
            }
        }
        let mut queue: Vec<usize> = (0..n).filter(|i| indeg[*i] == 0).collect();
        let mut seen = 0;
        while let Some(v) = queue.pop() {
            seen += 1;
            for &c in &children[v] {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    queue.push(c);
                }
            }
        }
        if seen == n {
            return Ok(());
        }
        let (c, p) = (0..n)
            .filter(|c| indeg[*c] > 0)
            .find_map(|c| self.parents[c].iter().find(|p| indeg[**p] > 0).map(|p| (c, *p)))
            .expect("a node with remaining in-degree has an unresolved parent");
        Err(Error::Input(format!("cycle through edge {p}->{c}")))
    }

    /// `adj[c][p] = 1` when `p` is a parent of `c`.
    fn parent_matrix(&self) -> Matrix {
        let n = self.len();
        let mut m = Matrix::zeros(n, n);
        for (c, ps) in self.parents.iter().enumerate() {
            for &p in ps {
                m.set(c, p, m.get(c, p) + 1.0);
            }
        }
        m
    }
}

/// Raw observation piece before encoding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RawInput {
    Scalar(f64),
    Vector(Vec<f64>),
    Series(Vec<f64>),
    Image(Image),
    Graph(GraphSnapshot),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub source_modality: ModalityKind,
}

/// A width-d vector in backbone input space; only [`MultimodalEncoder::project`]
/// (and its batched graph form) produces these.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenEmbedding {
    values: Vec<f64>,
}

impl TokenEmbedding {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderParams {
    /// Feature width emitted before projection.
    pub width: usize,
    /// Convolution kernel width (series).
    pub kernel: usize,
    /// Input vector length (scalar/return inputs).
    pub in_dim: usize,
    /// Constant multiplier applied to raw values before encoding.
    pub input_scale: f64,
    /// Patch side (images).
    pub patch: usize,
    pub image_channels: usize,
    pub max_patches: usize,
    /// Message-passing rounds (graphs).
    pub rounds: usize,
    /// Node attribute length (graphs).
    pub node_dim: usize,
    /// Bind this encoder's weights as constants.
    pub frozen: bool,
}

impl Default for EncoderParams {
    fn default() -> Self {
        Self {
            width: 256,
            kernel: 4,
            in_dim: 1,
            input_scale: 1.0,
            patch: 8,
            image_channels: 1,
            max_patches: 64,
            rounds: 2,
            node_dim: 8,
            frozen: false,
        }
    }
}

/// One declared task input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSpec {
    pub name: String,
    pub kind: ModalityKind,
    /// Number of consecutive state pieces that share this encoder.
    #[serde(default = "one")]
    pub repeat: usize,
    #[serde(default)]
    pub encoder: EncoderParams,
}

fn one() -> usize {
    1
}

impl InputSpec {
    pub fn new(name: &str, kind: ModalityKind, encoder: EncoderParams) -> Self {
        Self {
            name: name.to_string(),
            kind,
            repeat: 1,
            encoder,
        }
    }
}

#[derive(Debug)]
struct Projection {
    w: ParamId,
    b: ParamId,
    gain: ParamId,
    offset: ParamId,
}

#[derive(Debug)]
struct ConvEncoder {
    kernel: usize,
    w: ParamId,
    b: ParamId,
}

#[derive(Debug)]
struct DenseEncoder {
    in_dim: usize,
    w: ParamId,
    b: ParamId,
}

#[derive(Debug)]
struct ImageEncoder {
    patch: usize,
    channels: usize,
    max_patches: usize,
    embed_w: ParamId,
    embed_b: ParamId,
    pos: ParamId,
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
}

#[derive(Debug)]
struct GraphEncoder {
    rounds: usize,
    node_dim: usize,
    w_in: ParamId,
    b_in: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Debug)]
enum FeatureEncoder {
    Conv(ConvEncoder),
    Dense(DenseEncoder),
    Image(ImageEncoder),
    Graph(GraphEncoder),
}

#[derive(Debug)]
struct Slot {
    spec: InputSpec,
    encoder: FeatureEncoder,
    proj: Projection,
}

/// Registry of per-input encoders and projections.
#[derive(Debug)]
pub struct MultimodalEncoder {
    slots: Vec<Slot>,
    model_dim: usize,
}

struct Reg<'a, R: ?Sized> {
    store: &'a mut ParamStore,
    rng: &'a mut R,
    prefix: String,
}

impl<R: Rng + ?Sized> Reg<'_, R> {
    fn randn(&mut self, name: &str, rows: usize, cols: usize, std: f64) -> Result<ParamId> {
        let m = Matrix::randn(rows, cols, std, self.rng);
        self.store.insert(format!("{}{name}", self.prefix), m)
    }

    fn fill(&mut self, name: &str, rows: usize, cols: usize, v: f64) -> Result<ParamId> {
        self.store
            .insert(format!("{}{name}", self.prefix), Matrix::filled(rows, cols, v))
    }
}

fn glorot(fan_in: usize) -> f64 {
    1.0 / (fan_in.max(1) as f64).sqrt()
}

impl MultimodalEncoder {
    pub fn new<R: Rng + ?Sized>(
        specs: &[InputSpec],
        model_dim: usize,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self> {
        let mut slots = Vec::with_capacity(specs.len());
        for spec in specs {
            if slots.iter().any(|s: &Slot| s.spec.name == spec.name) {
                return Err(Error::Config(format!("input `{}` declared twice", spec.name)));
            }
            if spec.repeat == 0 {
                return Err(Error::Config(format!("input `{}` has repeat 0", spec.name)));
            }
            let p = &spec.encoder;
            if p.width == 0 {
                return Err(Error::Config(format!("input `{}` has width 0", spec.name)));
            }
            let mut reg = Reg {
                store: &mut *store,
                rng: &mut *rng,
                prefix: format!("{ENCODER_PREFIX}{}.", spec.name),
            };
            let encoder = match spec.kind {
                ModalityKind::TimeSeries | ModalityKind::Sequence => {
                    if p.kernel == 0 {
                        return Err(Error::Config(format!("input `{}` has kernel 0", spec.name)));
                    }
                    FeatureEncoder::Conv(ConvEncoder {
                        kernel: p.kernel,
                        w: reg.randn("conv.w", p.kernel, p.width, glorot(p.kernel))?,
                        b: reg.fill("conv.b", 1, p.width, 0.0)?,
                    })
                }
                ModalityKind::Scalar | ModalityKind::ReturnValue => FeatureEncoder::Dense(DenseEncoder {
                    in_dim: p.in_dim,
                    w: reg.randn("fc.w", p.in_dim, p.width, 1.0)?,
                    b: reg.randn("fc.b", 1, p.width, 1.0)?,
                }),
                ModalityKind::Image => {
                    let pd = p.patch * p.patch * p.image_channels;
                    if p.patch == 0 || p.image_channels == 0 {
                        return Err(Error::Config(format!("input `{}` has empty patches", spec.name)));
                    }
                    FeatureEncoder::Image(ImageEncoder {
                        patch: p.patch,
                        channels: p.image_channels,
                        max_patches: p.max_patches,
                        embed_w: reg.randn("patch.w", pd, p.width, glorot(pd))?,
                        embed_b: reg.fill("patch.b", 1, p.width, 0.0)?,
                        pos: reg.randn("pos", p.max_patches, p.width, 0.1)?,
                        wq: reg.randn("att.wq", p.width, p.width, glorot(p.width))?,
                        wk: reg.randn("att.wk", p.width, p.width, glorot(p.width))?,
                        wv: reg.randn("att.wv", p.width, p.width, glorot(p.width))?,
                        wo: reg.randn("att.wo", p.width, p.width, glorot(p.width))?,
                    })
                }
                ModalityKind::Graph => FeatureEncoder::Graph(GraphEncoder {
                    rounds: p.rounds,
                    node_dim: p.node_dim,
                    w_in: reg.randn("gnn.w_in", p.node_dim, p.width, glorot(p.node_dim))?,
                    b_in: reg.fill("gnn.b_in", 1, p.width, 0.0)?,
                    w1: reg.randn("gnn.w1", p.width, p.width, glorot(p.width))?,
                    b1: reg.fill("gnn.b1", 1, p.width, 0.0)?,
                    w2: reg.randn("gnn.w2", p.width, p.width, glorot(p.width))?,
                    b2: reg.fill("gnn.b2", 1, p.width, 0.0)?,
                }),
            };
            let proj = Projection {
                w: reg.randn("proj.w", p.width, model_dim, glorot(p.width))?,
                b: reg.fill("proj.b", 1, model_dim, 0.0)?,
                gain: reg.fill("proj.ln_g", 1, model_dim, 1.0)?,
                offset: reg.fill("proj.ln_b", 1, model_dim, 0.0)?,
            };
            slots.push(Slot {
                spec: spec.clone(),
                encoder,
                proj,
            });
        }
        Ok(Self { slots, model_dim })
    }

    pub fn model_dim(&self) -> usize {
        self.model_dim
    }

    pub fn inputs(&self) -> impl Iterator<Item = &InputSpec> {
        self.slots.iter().map(|s| &s.spec)
    }

    /// Number of state pieces (tokens) one full observation produces.
    pub fn piece_count(&self) -> usize {
        self.slots.iter().map(|s| s.spec.repeat).sum()
    }

    /// Input name for each state piece, in declaration order.
    pub fn piece_names(&self) -> Vec<&str> {
        self.slots
            .iter()
            .flat_map(|s| std::iter::repeat(s.spec.name.as_str()).take(s.spec.repeat))
            .collect()
    }

    fn slot(&self, name: &str) -> Result<&Slot> {
        self.slots
            .iter()
            .find(|s| s.spec.name == name)
            .ok_or_else(|| Error::Config(format!("no encoder registered for input `{name}`")))
    }

    pub fn kind(&self, name: &str) -> Result<ModalityKind> {
        Ok(self.slot(name)?.spec.kind)
    }

    pub fn feature_width(&self, name: &str) -> Result<usize> {
        Ok(self.slot(name)?.spec.encoder.width)
    }

    fn bind(g: &mut Graph, store: &ParamStore, spec: &InputSpec, id: ParamId) -> Var {
        if spec.encoder.frozen {
            g.constant(store.value(id).clone())
        } else {
            g.param(store, id)
        }
    }

    /// Features (B×width) for a batch of raw inputs of one declared input.
    pub fn features_batch(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        name: &str,
        inputs: &[&RawInput],
    ) -> Result<Var> {
        let slot = self.slot(name)?;
        if inputs.is_empty() {
            return Err(Error::Input(format!("empty batch for input `{name}`")));
        }
        let spec = &slot.spec;
        let scale = spec.encoder.input_scale;
        match &slot.encoder {
            FeatureEncoder::Conv(enc) => {
                let series = inputs
                    .iter()
                    .map(|r| match r {
                        RawInput::Series(v) => Ok(v.as_slice()),
                        other => Err(mismatch(name, spec.kind, other)),
                    })
                    .collect::<Result<Vec<_>>>()?;
                let len = series[0].len();
                if series.iter().all(|s| s.len() == len) {
                    self.conv_batch(g, store, spec, enc, &series, scale)
                } else {
                    let parts = series
                        .iter()
                        .map(|s| self.conv_batch(g, store, spec, enc, &[s], scale))
                        .collect::<Result<Vec<_>>>()?;
                    Ok(g.concat_rows(&parts))
                }
            }
            FeatureEncoder::Dense(enc) => {
                let mut data = Vec::with_capacity(inputs.len() * enc.in_dim);
                for r in inputs {
                    let vals: &[f64] = match r {
                        RawInput::Scalar(v) => std::slice::from_ref(v),
                        RawInput::Vector(v) => v.as_slice(),
                        other => return Err(mismatch(name, spec.kind, other)),
                    };
                    if vals.len() != enc.in_dim {
                        return Err(Error::Input(format!(
                            "input `{name}` expects {} values, got {}",
                            enc.in_dim,
                            vals.len()
                        )));
                    }
                    if let Some(bad) = vals.iter().find(|v| !v.is_finite()) {
                        return Err(Error::Input(format!("input `{name}` is not finite: {bad}")));
                    }
                    data.extend(vals.iter().map(|v| v * scale));
                }
                let x = g.constant(Matrix::from_vec(inputs.len(), enc.in_dim, data)?);
                let w = Self::bind(g, store, spec, enc.w);
                let b = Self::bind(g, store, spec, enc.b);
                let h = g.matmul(x, w);
                Ok(g.add_row(h, b))
            }
            FeatureEncoder::Image(enc) => {
                let parts = inputs
                    .iter()
                    .map(|r| match r {
                        RawInput::Image(img) => self.image_features(g, store, spec, enc, img, scale),
                        other => Err(mismatch(name, spec.kind, other)),
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(if parts.len() == 1 { parts[0] } else { g.concat_rows(&parts) })
            }
            FeatureEncoder::Graph(enc) => {
                let parts = inputs
                    .iter()
                    .map(|r| match r {
                        RawInput::Graph(snap) => {
                            let (nodes, _) = self.graph_nodes(g, store, spec, enc, snap, scale)?;
                            Ok(g.mean_rows(nodes))
                        }
                        other => Err(mismatch(name, spec.kind, other)),
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(if parts.len() == 1 { parts[0] } else { g.concat_rows(&parts) })
            }
        }
    }

    fn conv_batch(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        spec: &InputSpec,
        enc: &ConvEncoder,
        series: &[&[f64]],
        scale: f64,
    ) -> Result<Var> {
        let k = enc.kernel;
        let len = series[0].len();
        if len == 0 {
            return Err(Error::Input(format!("empty sequence for input `{}`", spec.name)));
        }
        let padded = len.max(k);
        let windows = padded - k + 1;
        let mut cols = Matrix::zeros(series.len() * windows, k);
        for (b, s) in series.iter().enumerate() {
            if let Some(bad) = s.iter().find(|v| !v.is_finite()) {
                return Err(Error::Input(format!("input `{}` is not finite: {bad}", spec.name)));
            }
            let pad = padded - len;
            for t in 0..windows {
                let row = cols.row_mut(b * windows + t);
                for (j, slot) in row.iter_mut().enumerate() {
                    let pos = t + j;
                    *slot = if pos < pad { 0.0 } else { s[pos - pad] * scale };
                }
            }
        }
        let x = g.constant(cols);
        let w = Self::bind(g, store, spec, enc.w);
        let b = Self::bind(g, store, spec, enc.b);
        let h = g.matmul(x, w);
        let h = g.add_row(h, b);
        let h = g.relu(h);
        Ok(g.segment_max(h, windows))
    }

    fn image_features(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        spec: &InputSpec,
        enc: &ImageEncoder,
        img: &Image,
        scale: f64,
    ) -> Result<Var> {
        let p = enc.patch;
        if img.height % p != 0 || img.width % p != 0 {
            return Err(Error::Input(format!(
                "image {}x{} is not divisible by patch size {p}",
                img.height, img.width
            )));
        }
        if img.channels != enc.channels {
            return Err(Error::Input(format!(
                "image has {} channels, encoder expects {}",
                img.channels, enc.channels
            )));
        }
        let (py, px) = (img.height / p, img.width / p);
        let n = py * px;
        if n > enc.max_patches {
            return Err(Error::Input(format!(
                "image yields {n} patches, encoder supports {}",
                enc.max_patches
            )));
        }
        let pd = p * p * enc.channels;
        let mut patches = Matrix::zeros(n, pd);
        for by in 0..py {
            for bx in 0..px {
                let row = patches.row_mut(by * px + bx);
                let mut i = 0;
                for y in 0..p {
                    for x in 0..p {
                        for c in 0..enc.channels {
                            row[i] = img.get(by * p + y, bx * p + x, c) * scale;
                            i += 1;
                        }
                    }
                }
            }
        }
        let x = g.constant(patches);
        let w = Self::bind(g, store, spec, enc.embed_w);
        let b = Self::bind(g, store, spec, enc.embed_b);
        let pos_all = Self::bind(g, store, spec, enc.pos);
        let pos = g.slice_rows(pos_all, 0, n);
        let h = g.matmul(x, w);
        let h = g.add_row(h, b);
        let h = g.add(h, pos);
        let wq = Self::bind(g, store, spec, enc.wq);
        let wk = Self::bind(g, store, spec, enc.wk);
        let wv = Self::bind(g, store, spec, enc.wv);
        let wo = Self::bind(g, store, spec, enc.wo);
        let q = g.matmul(h, wq);
        let k = g.matmul(h, wk);
        let v = g.matmul(h, wv);
        let kt = g.transpose(k);
        let s = g.matmul(q, kt);
        let s = g.scale(s, glorot(spec.encoder.width));
        let a = g.softmax_rows(
            s,
            SoftmaxMask {
                causal: false,
                offset: 0,
                valid: None,
            },
        );
        let att = g.matmul(a, v);
        let att = g.matmul(att, wo);
        let h = g.add(h, att);
        Ok(g.mean_rows(h))
    }

    fn graph_nodes(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        spec: &InputSpec,
        enc: &GraphEncoder,
        snap: &GraphSnapshot,
        scale: f64,
    ) -> Result<(Var, Var)> {
        if snap.is_empty() {
            return Err(Error::Input(format!("empty graph for input `{}`", spec.name)));
        }
        snap.check_acyclic()?;
        let mut attrs = Vec::with_capacity(snap.len() * enc.node_dim);
        for (i, a) in snap.node_attrs.iter().enumerate() {
            if a.len() != enc.node_dim {
                return Err(Error::Input(format!(
                    "node {i} has {} attributes, encoder expects {}",
                    a.len(),
                    enc.node_dim
                )));
            }
            attrs.extend(a.iter().map(|v| v * scale));
        }
        let x = g.constant(Matrix::from_vec(snap.len(), enc.node_dim, attrs)?);
        let adj = g.constant(snap.parent_matrix());
        let w_in = Self::bind(g, store, spec, enc.w_in);
        let b_in = Self::bind(g, store, spec, enc.b_in);
        let w1 = Self::bind(g, store, spec, enc.w1);
        let b1 = Self::bind(g, store, spec, enc.b1);
        let w2 = Self::bind(g, store, spec, enc.w2);
        let b2 = Self::bind(g, store, spec, enc.b2);
        let h = g.matmul(x, w_in);
        let h = g.add_row(h, b_in);
        let mut h = g.relu(h);
        for _ in 0..enc.rounds {
            let msg = g.matmul(adj, h);
            let m = g.add(h, msg);
            let t = g.matmul(m, w1);
            let t = g.add_row(t, b1);
            let t = g.relu(t);
            let t = g.matmul(t, w2);
            let t = g.add_row(t, b2);
            h = g.relu(t);
        }
        let pooled = g.mean_rows(h);
        Ok((h, pooled))
    }

    /// Per-node features (N×width) and their mean (1×width) for a graph input.
    pub fn graph_features(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        name: &str,
        snap: &GraphSnapshot,
    ) -> Result<(Var, Var)> {
        let slot = self.slot(name)?;
        match &slot.encoder {
            FeatureEncoder::Graph(enc) => {
                self.graph_nodes(g, store, &slot.spec, enc, snap, slot.spec.encoder.input_scale)
            }
            _ => Err(Error::Config(format!("input `{name}` is not a graph input"))),
        }
    }

    /// Linear map to width d followed by layer normalization.
    pub fn project_var(&self, g: &mut Graph, store: &ParamStore, name: &str, f: Var) -> Result<Var> {
        let slot = self.slot(name)?;
        let width = slot.spec.encoder.width;
        if g.value(f).cols != width {
            return Err(Error::shape(format!("{name} features"), width, g.value(f).cols));
        }
        let w = g.param(store, slot.proj.w);
        let b = g.param(store, slot.proj.b);
        let gain = g.param(store, slot.proj.gain);
        let off = g.param(store, slot.proj.offset);
        let h = g.matmul(f, w);
        let h = g.add_row(h, b);
        Ok(g.layer_norm(h, gain, off))
    }

    /// Encoded and projected tokens (B×d) for a batch of one input's values.
    pub fn embed_batch(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        name: &str,
        inputs: &[&RawInput],
    ) -> Result<Var> {
        let f = self.features_batch(g, store, name, inputs)?;
        self.project_var(g, store, name, f)
    }

    fn feature_of(&self, store: &ParamStore, name: &str, input: &RawInput) -> Result<FeatureVector> {
        let mut g = Graph::new();
        let f = self.features_batch(&mut g, store, name, &[input])?;
        Ok(FeatureVector {
            values: g.value(f).data.clone(),
            source_modality: self.kind(name)?,
        })
    }

    pub fn encode_timeseries(&self, store: &ParamStore, name: &str, samples: &[f64]) -> Result<FeatureVector> {
        self.feature_of(store, name, &RawInput::Series(samples.to_vec()))
    }

    pub fn encode_scalar(&self, store: &ParamStore, name: &str, v: f64) -> Result<FeatureVector> {
        self.feature_of(store, name, &RawInput::Scalar(v))
    }

    pub fn encode_image(&self, store: &ParamStore, name: &str, img: &Image) -> Result<FeatureVector> {
        self.feature_of(store, name, &RawInput::Image(img.clone()))
    }

    /// One feature per node plus the mean-pooled summary.
    pub fn encode_graph(
        &self,
        store: &ParamStore,
        name: &str,
        snap: &GraphSnapshot,
    ) -> Result<(Vec<FeatureVector>, FeatureVector)> {
        let mut g = Graph::new();
        let (nodes, pooled) = self.graph_features(&mut g, store, name, snap)?;
        let nv = g.value(nodes);
        let per_node = (0..nv.rows)
            .map(|r| FeatureVector {
                values: nv.row(r).to_vec(),
                source_modality: ModalityKind::Graph,
            })
            .collect();
        Ok((
            per_node,
            FeatureVector {
                values: g.value(pooled).data.clone(),
                source_modality: ModalityKind::Graph,
            },
        ))
    }

    /// Projects a feature produced by the encoder registered as `name`.
    pub fn project(&self, store: &ParamStore, name: &str, f: &FeatureVector) -> Result<TokenEmbedding> {
        let kind = self.kind(name)?;
        if kind != f.source_modality {
            return Err(Error::Config(format!(
                "input `{name}` is registered as {kind:?}, feature came from {:?}",
                f.source_modality
            )));
        }
        if let Some(bad) = f.values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Input(format!("feature for `{name}` is not finite: {bad}")));
        }
        let mut g = Graph::new();
        let fv = g.constant(Matrix::row_vector(f.values.clone()));
        let t = self.project_var(&mut g, store, name, fv)?;
        Ok(TokenEmbedding {
            values: g.value(t).data.clone(),
        })
    }

    /// Tokens for a whole observation, in declaration order (`repeat`
    /// consecutive pieces per input).
    pub fn encode_state(&self, store: &ParamStore, state: &[RawInput]) -> Result<Vec<TokenEmbedding>> {
        let names = self.piece_names();
        if state.len() != names.len() {
            return Err(Error::Input(format!(
                "observation has {} pieces, encoder declares {}",
                state.len(),
                names.len()
            )));
        }
        let mut g = Graph::new();
        let mut out = Vec::with_capacity(state.len());
        let mut i = 0;
        for slot in &self.slots {
            let batch: Vec<&RawInput> = state[i..i + slot.spec.repeat].iter().collect();
            let t = self.embed_batch(&mut g, store, &slot.spec.name, &batch)?;
            let tv = g.value(t);
            out.extend((0..tv.rows).map(|r| TokenEmbedding {
                values: tv.row(r).to_vec(),
            }));
            i += slot.spec.repeat;
        }
        Ok(out)
    }

    /// Total parameters registered by this encoder.
    pub fn param_count(store: &ParamStore) -> usize {
        store.count_with_prefix(ENCODER_PREFIX)
    }
}

fn mismatch(name: &str, kind: ModalityKind, got: &RawInput) -> Error {
    let got = match got {
        RawInput::Scalar(_) => "scalar",
        RawInput::Vector(_) => "vector",
        RawInput::Series(_) => "series",
        RawInput::Image(_) => "image",
        RawInput::Graph(_) => "graph",
    };
    Error::Input(format!("input `{name}` ({kind:?}) received a {got} value"))
}
