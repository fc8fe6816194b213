//! Small frozen causal transformer with low-rank adapters.
//!
//! The base weights live in a [`FrozenParameterSet`] and are only ever bound
//! into a [`Graph`] as constants, so no optimizer can reach them. Each adapted
//! matrix `W0` (d×k) gets a pair `A` (d×r), `B` (r×k) registered in the shared
//! [`ParamStore`] under `adapter.`; the adapted projection is
//! `x·W0 + (x·A)·B`, evaluated without forming `W0 + AB`.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, SoftmaxMask, Var};
use crate::error::{Error, Result};
use crate::params::{digest_blocks, ParamId, ParamStore};
use crate::tensor::Matrix;

pub const ADAPTER_PREFIX: &str = "adapter.";

/// Weight matrices inside a transformer block that may carry an adapter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixRole {
    Query,
    Key,
    Value,
    Output,
    MlpUp,
    MlpDown,
}

impl MatrixRole {
    pub const ALL: [MatrixRole; 6] = [
        MatrixRole::Query,
        MatrixRole::Key,
        MatrixRole::Value,
        MatrixRole::Output,
        MatrixRole::MlpUp,
        MatrixRole::MlpDown,
    ];

    fn key(self) -> &'static str {
        match self {
            MatrixRole::Query => "q",
            MatrixRole::Key => "k",
            MatrixRole::Value => "v",
            MatrixRole::Output => "o",
            MatrixRole::MlpUp => "up",
            MatrixRole::MlpDown => "down",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    pub num_layers: usize,
    pub model_dim: usize,
    pub num_heads: usize,
    pub max_context: usize,
    pub adapter_rank: usize,
    #[serde(default = "default_targets")]
    pub adapter_targets: Vec<MatrixRole>,
    #[serde(default = "default_mlp_ratio")]
    pub mlp_ratio: usize,
}

fn default_targets() -> Vec<MatrixRole> {
    vec![MatrixRole::Query, MatrixRole::Value]
}

fn default_mlp_ratio() -> usize {
    4
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            num_layers: 2,
            model_dim: 64,
            num_heads: 4,
            max_context: 128,
            adapter_rank: 8,
            adapter_targets: default_targets(),
            mlp_ratio: default_mlp_ratio(),
        }
    }
}

impl BackboneConfig {
    /// Shape (d, k) of the frozen matrix playing `role`.
    pub fn matrix_shape(&self, role: MatrixRole) -> (usize, usize) {
        let d = self.model_dim;
        let hidden = d * self.mlp_ratio;
        match role {
            MatrixRole::MlpUp => (d, hidden),
            MatrixRole::MlpDown => (hidden, d),
            _ => (d, d),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_layers", self.num_layers),
            ("model_dim", self.model_dim),
            ("num_heads", self.num_heads),
            ("max_context", self.max_context),
            ("mlp_ratio", self.mlp_ratio),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.model_dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "num_heads {} does not divide model_dim {}",
                self.num_heads, self.model_dim
            )));
        }
        if !self.adapter_targets.is_empty() && self.adapter_rank == 0 {
            return Err(Error::Config("adapter_rank must be positive".into()));
        }
        for role in &self.adapter_targets {
            let (d, k) = self.matrix_shape(*role);
            if self.adapter_rank >= d.min(k) {
                return Err(Error::Config(format!(
                    "adapter rank {} is not below min({d}, {k}) for `{}`",
                    self.adapter_rank,
                    role.key()
                )));
            }
        }
        Ok(())
    }

    /// Checks that a window of `w` timesteps with `n` state and `m` action
    /// pieces fits in the context.
    pub fn check_window(&self, w: usize, n: usize, m: usize) -> Result<()> {
        let tokens = w * (1 + n + m);
        if tokens > self.max_context {
            return Err(Error::Config(format!(
                "window of {w} timesteps needs {tokens} tokens, max_context is {}",
                self.max_context
            )));
        }
        Ok(())
    }

    /// Exact adapter parameter count: layers · Σ_targets (d·r + r·k).
    pub fn adapter_param_count(&self) -> usize {
        let per_layer: usize = self
            .adapter_targets
            .iter()
            .map(|role| {
                let (d, k) = self.matrix_shape(*role);
                d * self.adapter_rank + self.adapter_rank * k
            })
            .sum();
        self.num_layers * per_layer
    }
}

/// The base model's weights. Never handed to an optimizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrozenParameterSet {
    blocks: BTreeMap<String, Matrix>,
}

impl FrozenParameterSet {
    pub fn random<R: Rng + ?Sized>(cfg: &BackboneConfig, rng: &mut R) -> Self {
        let d = cfg.model_dim;
        let hidden = d * cfg.mlp_ratio;
        let mut blocks = BTreeMap::new();
        let std_in = 1.0 / (d as f64).sqrt();
        let std_out = std_in / (2.0 * cfg.num_layers as f64).sqrt();
        for l in 0..cfg.num_layers {
            let p = |s: &str| format!("layer{l}.{s}");
            blocks.insert(p("ln1.g"), Matrix::filled(1, d, 1.0));
            blocks.insert(p("ln1.b"), Matrix::zeros(1, d));
            blocks.insert(p("ln2.g"), Matrix::filled(1, d, 1.0));
            blocks.insert(p("ln2.b"), Matrix::zeros(1, d));
            for role in [MatrixRole::Query, MatrixRole::Key, MatrixRole::Value] {
                blocks.insert(p(&format!("w{}", role.key())), Matrix::randn(d, d, std_in, rng));
                blocks.insert(p(&format!("b{}", role.key())), Matrix::randn(1, d, 0.02, rng));
            }
            blocks.insert(p("wo"), Matrix::randn(d, d, std_out, rng));
            blocks.insert(p("bo"), Matrix::zeros(1, d));
            blocks.insert(p("wup"), Matrix::randn(d, hidden, std_in, rng));
            blocks.insert(p("bup"), Matrix::randn(1, hidden, 0.02, rng));
            let std_down = 1.0 / (hidden as f64).sqrt() / (2.0 * cfg.num_layers as f64).sqrt();
            blocks.insert(p("wdown"), Matrix::randn(hidden, d, std_down, rng));
            blocks.insert(p("bdown"), Matrix::zeros(1, d));
        }
        blocks.insert("final_ln.g".into(), Matrix::filled(1, d, 1.0));
        blocks.insert("final_ln.b".into(), Matrix::zeros(1, d));
        Self { blocks }
    }

    pub fn from_blocks(blocks: BTreeMap<String, Matrix>) -> Self {
        Self { blocks }
    }

    pub fn blocks(&self) -> &BTreeMap<String, Matrix> {
        &self.blocks
    }

    pub fn get(&self, name: &str) -> Result<&Matrix> {
        self.blocks
            .get(name)
            .ok_or_else(|| Error::Config(format!("frozen block `{name}` missing")))
    }

    pub fn param_count(&self) -> usize {
        self.blocks.values().map(Matrix::len).sum()
    }

    pub fn checksum(&self) -> String {
        digest_blocks(self.blocks.iter().map(|(k, v)| (k.as_str(), v)))
    }

    /// Confirms every block the configuration needs is present with the
    /// right shape.
    pub fn validate_against(&self, cfg: &BackboneConfig) -> Result<()> {
        let d = cfg.model_dim;
        for l in 0..cfg.num_layers {
            for role in MatrixRole::ALL {
                let name = format!("layer{l}.w{}", role.key());
                let m = self.get(&name)?;
                let want = cfg.matrix_shape(role);
                if m.shape() != want {
                    return Err(Error::shape(name, format!("{want:?}"), format!("{:?}", m.shape())));
                }
            }
        }
        let g = self.get("final_ln.g")?;
        if g.shape() != (1, d) {
            return Err(Error::shape("final_ln.g", format!("(1, {d})"), format!("{:?}", g.shape())));
        }
        Ok(())
    }
}

/// Standalone view of one adapter pair, for the dense-free update rule.
#[derive(Clone, Debug, PartialEq)]
pub struct LowRankAdapter {
    pub a: Matrix,
    pub b: Matrix,
    pub target: String,
}

/// `x·W0 + (x·A)·B` for a single row vector.
pub fn apply_adapter(x: &[f64], w0: &Matrix, adapter: &LowRankAdapter) -> Result<Vec<f64>> {
    let name = &adapter.target;
    if x.len() != w0.rows {
        return Err(Error::shape(format!("{name} (W0 rows)"), x.len(), w0.rows));
    }
    if adapter.a.rows != w0.rows {
        return Err(Error::shape(format!("{name}.A rows"), w0.rows, adapter.a.rows));
    }
    if adapter.b.rows != adapter.a.cols {
        return Err(Error::shape(format!("{name}.B rows"), adapter.a.cols, adapter.b.rows));
    }
    if adapter.b.cols != w0.cols {
        return Err(Error::shape(format!("{name}.B cols"), w0.cols, adapter.b.cols));
    }
    let xr = Matrix::row_vector(x.to_vec());
    let base = xr.matmul(w0)?;
    let low = xr.matmul(&adapter.a)?.matmul(&adapter.b)?;
    Ok(base.data.iter().zip(&low.data).map(|(p, q)| p + q).collect())
}

#[derive(Clone, Debug)]
struct AdapterSlot {
    layer: usize,
    role: MatrixRole,
    a: ParamId,
    b: ParamId,
}

/// The frozen backbone plus handles to its adapters in a [`ParamStore`].
#[derive(Debug)]
pub struct Backbone {
    config: BackboneConfig,
    frozen: FrozenParameterSet,
    frozen_checksum: String,
    adapters: Vec<AdapterSlot>,
    adapters_enabled: bool,
    forward_calls: AtomicU64,
}

impl Backbone {
    /// Registers fresh adapters (A small random, B zero) in `store`.
    pub fn new<R: Rng + ?Sized>(
        config: BackboneConfig,
        frozen: FrozenParameterSet,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        frozen.validate_against(&config)?;
        let mut adapters = Vec::new();
        for layer in 0..config.num_layers {
            for role in &config.adapter_targets {
                let (d, k) = config.matrix_shape(*role);
                let r = config.adapter_rank;
                let base = format!("{ADAPTER_PREFIX}layer{layer}.{}", role.key());
                let a = store.insert(format!("{base}.a"), Matrix::randn(d, r, 1.0 / (d as f64).sqrt(), rng))?;
                let b = store.insert(format!("{base}.b"), Matrix::zeros(r, k))?;
                adapters.push(AdapterSlot {
                    layer,
                    role: *role,
                    a,
                    b,
                });
            }
        }
        let frozen_checksum = frozen.checksum();
        Ok(Self {
            config,
            frozen,
            frozen_checksum,
            adapters,
            adapters_enabled: true,
            forward_calls: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn frozen(&self) -> &FrozenParameterSet {
        &self.frozen
    }

    pub fn frozen_checksum(&self) -> &str {
        &self.frozen_checksum
    }

    /// Recomputes the frozen digest and compares it with the one taken at
    /// construction.
    pub fn verify_frozen(&self) -> Result<()> {
        let now = self.frozen.checksum();
        if now != self.frozen_checksum {
            return Err(Error::Invariant(format!(
                "frozen parameters changed: {} -> {now}",
                self.frozen_checksum
            )));
        }
        Ok(())
    }

    /// Disables (or re-enables) the low-rank path without touching its values.
    pub fn set_adapters_enabled(&mut self, enabled: bool) {
        self.adapters_enabled = enabled;
    }

    /// Every adapter (A, B) block, by name. Nothing frozen appears here.
    pub fn trainable_parameters(&self, store: &ParamStore) -> Vec<(String, ParamId)> {
        self.adapters
            .iter()
            .flat_map(|s| [s.a, s.b])
            .map(|id| (store.name(id).to_string(), id))
            .collect()
    }

    pub fn adapter_pairs(&self) -> usize {
        self.adapters.len()
    }

    pub fn adapter_param_count(&self, store: &ParamStore) -> usize {
        self.adapters
            .iter()
            .map(|s| store.value(s.a).len() + store.value(s.b).len())
            .sum()
    }

    /// (adapter + `other_trainable`) / (that + frozen), from shapes.
    pub fn trainable_fraction(&self, store: &ParamStore, other_trainable: usize) -> Result<f64> {
        let trainable = self.adapter_param_count(store) + other_trainable;
        if trainable == 0 {
            return Err(Error::Config("no trainable parameter blocks".into()));
        }
        Ok(trainable as f64 / (trainable + self.frozen.param_count()) as f64)
    }

    pub fn forward_count(&self) -> u64 {
        self.forward_calls.load(Ordering::Relaxed)
    }

    /// Plain-value forward over `embeddings` (T×d); rows with `valid = false`
    /// must be zero and are never attended to.
    pub fn forward(&self, store: &ParamStore, embeddings: &Matrix, valid: &[bool]) -> Result<Matrix> {
        let mut g = Graph::new();
        let x = g.constant(embeddings.clone());
        let mut session = self.session();
        let out = session.extend(&mut g, store, x, valid)?;
        Ok(g.value(out).clone())
    }

    /// Starts an incremental causal pass. One session is one backbone
    /// inference; extending it appends tokens that see the cached prefix.
    pub fn session(&self) -> Session<'_> {
        self.forward_calls.fetch_add(1, Ordering::Relaxed);
        Session {
            backbone: self,
            cache: Vec::new(),
            valid: Vec::new(),
        }
    }

    fn frozen_var(&self, g: &mut Graph, name: &str) -> Result<Var> {
        Ok(g.constant(self.frozen.get(name)?.clone()))
    }

    fn project(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        h: Var,
        layer: usize,
        role: MatrixRole,
    ) -> Result<Var> {
        let w = self.frozen_var(g, &format!("layer{layer}.w{}", role.key()))?;
        let b = self.frozen_var(g, &format!("layer{layer}.b{}", role.key()))?;
        let mut out = g.matmul(h, w);
        if self.adapters_enabled {
            if let Some(slot) = self
                .adapters
                .iter()
                .find(|s| s.layer == layer && s.role == role)
            {
                let a = g.param(store, slot.a);
                let bm = g.param(store, slot.b);
                let xa = g.matmul(h, a);
                let low = g.matmul(xa, bm);
                out = g.add(out, low);
            }
        }
        Ok(g.add_row(out, b))
    }
}

/// Keys and values of already-processed positions, per layer.
pub struct Session<'a> {
    backbone: &'a Backbone,
    cache: Vec<(Var, Var)>,
    valid: Vec<bool>,
}

impl Session<'_> {
    pub fn len(&self) -> usize {
        self.valid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valid.is_empty()
    }

    /// Appends `x` (T×d) and returns the final-layer features of those rows.
    pub fn extend(&mut self, g: &mut Graph, store: &ParamStore, x: Var, valid: &[bool]) -> Result<Var> {
        let bb = self.backbone;
        let cfg = &bb.config;
        let d = cfg.model_dim;
        let (rows, cols) = g.value(x).shape();
        if cols != d {
            return Err(Error::shape("backbone input width", d, cols));
        }
        if valid.len() != rows {
            return Err(Error::shape("attention mask", rows, valid.len()));
        }
        let total = self.valid.len() + rows;
        if total > cfg.max_context {
            return Err(Error::ContextOverflow {
                len: total,
                max: cfg.max_context,
            });
        }
        let offset = self.valid.len();
        self.valid.extend_from_slice(valid);
        let heads = cfg.num_heads;
        let dh = d / heads;
        let inv_sqrt = 1.0 / (dh as f64).sqrt();
        let mut h = x;
        for layer in 0..cfg.num_layers {
            let p = |s: &str| format!("layer{layer}.{s}");
            let g1 = bb.frozen_var(g, &p("ln1.g"))?;
            let b1 = bb.frozen_var(g, &p("ln1.b"))?;
            let n1 = g.layer_norm(h, g1, b1);
            let q = bb.project(g, store, n1, layer, MatrixRole::Query)?;
            let k_new = bb.project(g, store, n1, layer, MatrixRole::Key)?;
            let v_new = bb.project(g, store, n1, layer, MatrixRole::Value)?;
            let (k, v) = match self.cache.get(layer) {
                Some(&(kc, vc)) => (g.concat_rows(&[kc, k_new]), g.concat_rows(&[vc, v_new])),
                None => (k_new, v_new),
            };
            if layer < self.cache.len() {
                self.cache[layer] = (k, v);
            } else {
                self.cache.push((k, v));
            }
            let kt = g.transpose(k);
            let mut outs = Vec::with_capacity(heads);
            for hd in 0..heads {
                let qh = g.slice_cols(q, hd * dh, dh);
                let kth = g.slice_rows(kt, hd * dh, dh);
                let vh = g.slice_cols(v, hd * dh, dh);
                let s = g.matmul(qh, kth);
                let s = g.scale(s, inv_sqrt);
                let a = g.softmax_rows(
                    s,
                    SoftmaxMask {
                        causal: true,
                        offset,
                        valid: Some(&self.valid),
                    },
                );
                outs.push(g.matmul(a, vh));
            }
            let att = if heads == 1 { outs[0] } else { g.concat_cols(&outs) };
            let o = bb.project(g, store, att, layer, MatrixRole::Output)?;
            h = g.add(h, o);
            let g2 = bb.frozen_var(g, &p("ln2.g"))?;
            let b2 = bb.frozen_var(g, &p("ln2.b"))?;
            let n2 = g.layer_norm(h, g2, b2);
            let up = bb.project(g, store, n2, layer, MatrixRole::MlpUp)?;
            let up = g.gelu(up);
            let down = bb.project(g, store, up, layer, MatrixRole::MlpDown)?;
            h = g.add(h, down);
        }
        let fg = bb.frozen_var(g, "final_ln.g")?;
        let fb = bb.frozen_var(g, "final_ln.b")?;
        Ok(g.layer_norm(h, fg, fb))
    }
}
