//! Return-conditioned sequence model over (return, state pieces, action
//! pieces) tokens, with task heads for bitrate selection and scheduling.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{CrossEntropyTargets, Graph, Var};
use crate::backbone::{Backbone, BackboneConfig, FrozenParameterSet, Session};
use crate::baselines::{AbrPolicy, CjsPolicy};
use crate::encoder::{EncoderParams, InputSpec, ModalityKind, MultimodalEncoder, RawInput};
use crate::env::abr::AbrState;
use crate::env::cjs::{CjsAction, ClusterState, NODE_ATTRS};
use crate::error::{Error, Result};
use crate::heads::{select_stage, AbrDecision, AbrHead, AnswerSpace, CjsHeads};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Matrix;

use super::data::{ExperienceDataset, SampledWindow, TaskKind};

/// Index of the runnable flag inside a scheduler node's attributes.
pub const RUNNABLE_ATTR: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RlModelConfig {
    pub backbone: BackboneConfig,
    /// Seed of the stand-in pretrained weights.
    pub frozen_seed: u64,
    /// Size of the learned timestep table; later steps reuse the last row.
    pub max_timestep: usize,
    pub return_scale: f64,
    pub return_width: usize,
    pub inputs: Vec<InputSpec>,
}

impl RlModelConfig {
    pub fn default_for(task: TaskKind) -> Result<Self> {
        let series = |width, kernel, scale| EncoderParams {
            width,
            kernel,
            input_scale: scale,
            ..EncoderParams::default()
        };
        let (inputs, return_scale, max_timestep) = match task {
            TaskKind::Abr => (
                vec![
                    InputSpec::new("throughput", ModalityKind::TimeSeries, series(32, 4, 0.25)),
                    InputSpec::new("delay", ModalityKind::TimeSeries, series(32, 4, 0.2)),
                    InputSpec::new("chunk_sizes", ModalityKind::TimeSeries, series(32, 3, 1e-6)),
                    InputSpec::new("buffer", ModalityKind::Scalar, series(32, 1, 0.05)),
                ],
                0.01,
                64,
            ),
            TaskKind::Cjs => (
                vec![InputSpec::new(
                    "dag",
                    ModalityKind::Graph,
                    EncoderParams {
                        width: 32,
                        node_dim: NODE_ATTRS,
                        rounds: 2,
                        ..EncoderParams::default()
                    },
                )],
                1e-3,
                256,
            ),
            TaskKind::Vp => return Err(Error::Config("viewport prediction uses the supervised model".into())),
        };
        Ok(Self {
            backbone: BackboneConfig::default(),
            frozen_seed: 7,
            max_timestep,
            return_scale,
            return_width: 16,
            inputs,
        })
    }
}

/// One timestep handed to the model. The last step of an inference context
/// has no actions yet.
#[derive(Clone, Copy, Debug)]
pub struct StepInput<'a> {
    pub ret: f64,
    pub state: &'a [RawInput],
    pub actions: Option<&'a [usize]>,
    pub timestep: usize,
}

#[derive(Debug)]
struct StageEmbed {
    w: ParamId,
    b: ParamId,
    gain: ParamId,
    offset: ParamId,
}

#[derive(Debug)]
enum TaskHeads {
    Abr {
        head: AbrHead,
        table: ParamId,
    },
    Cjs {
        heads: CjsHeads,
        graph_input: String,
        stage: StageEmbed,
        table: ParamId,
    },
}

/// Positions and per-slot extras of an embedded window.
struct Embedded {
    x: Var,
    valid: Vec<bool>,
    state_pos: Vec<Option<usize>>,
    action_pos: Vec<Option<Vec<usize>>>,
    nodes: Vec<Option<Var>>,
}

pub struct RlModel {
    task: TaskKind,
    config: RlModelConfig,
    space: AnswerSpace,
    store: ParamStore,
    backbone: Backbone,
    returns: MultimodalEncoder,
    states: MultimodalEncoder,
    timestep: ParamId,
    heads: TaskHeads,
}

impl RlModel {
    pub fn new<R: Rng + ?Sized>(
        task: TaskKind,
        config: RlModelConfig,
        space: AnswerSpace,
        rng: &mut R,
    ) -> Result<Self> {
        use rand::SeedableRng;
        space.validate()?;
        let d = config.backbone.model_dim;
        let frozen = FrozenParameterSet::random(
            &config.backbone,
            &mut rand_chacha::ChaCha8Rng::seed_from_u64(config.frozen_seed),
        );
        let mut store = ParamStore::new();
        let backbone = Backbone::new(config.backbone.clone(), frozen, &mut store, rng)?;
        let returns = MultimodalEncoder::new(
            &[InputSpec::new(
                "return",
                ModalityKind::ReturnValue,
                EncoderParams {
                    width: config.return_width,
                    input_scale: config.return_scale,
                    ..EncoderParams::default()
                },
            )],
            d,
            &mut store,
            rng,
        )?;
        let states = MultimodalEncoder::new(&config.inputs, d, &mut store, rng)?;
        if config.max_timestep == 0 {
            return Err(Error::Config("timestep table needs at least one row".into()));
        }
        let timestep = store.insert("encoder.timestep", Matrix::randn(config.max_timestep, d, 0.1, rng))?;
        let heads = match (&space, task) {
            (AnswerSpace::Abr { ladder_kbps }, TaskKind::Abr) => {
                let head = AbrHead::new(d, &space, &mut store, rng)?;
                let table = store.insert("encoder.action.bitrate", Matrix::randn(ladder_kbps.len(), d, 0.5, rng))?;
                TaskHeads::Abr { head, table }
            }
            (AnswerSpace::Cjs { executor_levels, .. }, TaskKind::Cjs) => {
                let graph = config
                    .inputs
                    .iter()
                    .find(|s| s.kind == ModalityKind::Graph)
                    .ok_or_else(|| Error::Config("scheduling needs a graph input".into()))?;
                let width = graph.encoder.width;
                let heads = CjsHeads::new(d, width, &space, &mut store, rng)?;
                let stage = StageEmbed {
                    w: store.insert(
                        "encoder.action.stage.w",
                        Matrix::randn(width, d, 1.0 / (width as f64).sqrt(), rng),
                    )?,
                    b: store.insert("encoder.action.stage.b", Matrix::zeros(1, d))?,
                    gain: store.insert("encoder.action.stage.ln_g", Matrix::filled(1, d, 1.0))?,
                    offset: store.insert("encoder.action.stage.ln_b", Matrix::zeros(1, d))?,
                };
                let table = store.insert("encoder.action.executors", Matrix::randn(*executor_levels, d, 0.5, rng))?;
                TaskHeads::Cjs {
                    heads,
                    graph_input: graph.name.clone(),
                    stage,
                    table,
                }
            }
            _ => return Err(Error::Config(format!("answer space does not match task {}", task.name()))),
        };
        Ok(Self {
            task,
            config,
            space,
            store,
            backbone,
            returns,
            states,
            timestep,
            heads,
        })
    }

    pub fn task(&self) -> TaskKind {
        self.task
    }

    pub fn config(&self) -> &RlModelConfig {
        &self.config
    }

    pub fn space(&self) -> &AnswerSpace {
        &self.space
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn backbone(&self) -> &Backbone {
        &self.backbone
    }

    pub fn backbone_mut(&mut self) -> &mut Backbone {
        &mut self.backbone
    }

    pub fn state_pieces(&self) -> usize {
        self.states.piece_count()
    }

    pub fn action_pieces(&self) -> usize {
        match self.heads {
            TaskHeads::Abr { .. } => 1,
            TaskHeads::Cjs { .. } => 2,
        }
    }

    fn stage_token(&self, g: &mut Graph, feats: Var) -> Result<Var> {
        let TaskHeads::Cjs { stage, .. } = &self.heads else {
            return Err(Error::Config("stage tokens exist only for scheduling".into()));
        };
        let w = g.param(&self.store, stage.w);
        let b = g.param(&self.store, stage.b);
        let gain = g.param(&self.store, stage.gain);
        let off = g.param(&self.store, stage.offset);
        let h = g.matmul(feats, w);
        let h = g.add_row(h, b);
        Ok(g.layer_norm(h, gain, off))
    }

    fn timestep_row(&self, t: usize) -> usize {
        t.min(self.config.max_timestep - 1)
    }

    /// Token matrix for a window laid out as (R, s¹..sⁿ, a¹..aᵐ) per slot, plus
    /// a learned timestep row added to every token of a slot. Padded slots
    /// become zero rows and are masked.
    fn embed(&self, g: &mut Graph, slots: &[Option<StepInput<'_>>]) -> Result<Embedded> {
        let d = self.config.backbone.model_dim;
        let n = self.states.piece_count();
        let m = self.action_pieces();
        let present: Vec<&StepInput<'_>> = slots.iter().flatten().collect();
        if present.is_empty() {
            return Err(Error::Input("window has no valid timestep".into()));
        }
        for (k, s) in slots.iter().enumerate() {
            if let Some(s) = s {
                if s.state.len() != n {
                    return Err(Error::Input(format!("state has {} pieces, model expects {n}", s.state.len())));
                }
                if let Some(a) = s.actions {
                    if a.len() != m {
                        return Err(Error::Input(format!("action has {} pieces, model expects {m}", a.len())));
                    }
                } else if k + 1 != slots.len() {
                    return Err(Error::Input("only the final step may lack actions".into()));
                }
            }
        }

        let mut blocks: Vec<Var> = Vec::new();
        let mut offsets: Vec<usize> = Vec::new();
        let mut rows = 0;
        let mut add_block = |blocks: &mut Vec<Var>, offsets: &mut Vec<usize>, g: &Graph, v: Var| {
            offsets.push(rows);
            rows += g.value(v).rows;
            blocks.push(v);
        };

        let rets: Vec<RawInput> = present.iter().map(|s| RawInput::Scalar(s.ret)).collect();
        let ret_refs: Vec<&RawInput> = rets.iter().collect();
        let rt = self.returns.embed_batch(g, &self.store, "return", &ret_refs)?;
        add_block(&mut blocks, &mut offsets, g, rt);

        let names: Vec<String> = self.states.piece_names().iter().map(|s| s.to_string()).collect();
        let mut nodes_present: Vec<Option<Var>> = vec![None; present.len()];
        for (p, name) in names.iter().enumerate() {
            let v = if self.states.kind(name)? == ModalityKind::Graph {
                let mut pooled = Vec::with_capacity(present.len());
                for (vi, s) in present.iter().enumerate() {
                    let RawInput::Graph(snap) = &s.state[p] else {
                        return Err(Error::Input(format!("piece `{name}` is not a graph")));
                    };
                    let (nodes, pool) = self.states.graph_features(g, &self.store, name, snap)?;
                    if matches!(&self.heads, TaskHeads::Cjs { graph_input, .. } if graph_input == name) {
                        nodes_present[vi] = Some(nodes);
                    }
                    pooled.push(pool);
                }
                let f = if pooled.len() == 1 { pooled[0] } else { g.concat_rows(&pooled) };
                self.states.project_var(g, &self.store, name, f)?
            } else {
                let refs: Vec<&RawInput> = present.iter().map(|s| &s.state[p]).collect();
                self.states.embed_batch(g, &self.store, name, &refs)?
            };
            add_block(&mut blocks, &mut offsets, g, v);
        }

        let acted: Vec<(usize, &[usize])> = present
            .iter()
            .enumerate()
            .filter_map(|(vi, s)| s.actions.map(|a| (vi, a)))
            .collect();
        let mut has_actions = false;
        if !acted.is_empty() {
            has_actions = true;
            match &self.heads {
                TaskHeads::Abr { table, .. } => {
                    let t = g.param(&self.store, *table);
                    let idx: Vec<usize> = acted.iter().map(|(_, a)| a[0]).collect();
                    if let Some(bad) = idx.iter().find(|i| **i >= g.value(t).rows) {
                        return Err(Error::Input(format!("bitrate action {bad} outside the ladder")));
                    }
                    let v = g.gather_rows(t, &idx);
                    add_block(&mut blocks, &mut offsets, g, v);
                }
                TaskHeads::Cjs { table, .. } => {
                    let mut rows_sel = Vec::with_capacity(acted.len());
                    for (vi, a) in &acted {
                        let nodes = nodes_present[*vi].expect("graph features computed");
                        if a[0] >= g.value(nodes).rows {
                            return Err(Error::Input(format!("stage action {} outside the graph", a[0])));
                        }
                        rows_sel.push(g.slice_rows(nodes, a[0], 1));
                    }
                    let f = if rows_sel.len() == 1 { rows_sel[0] } else { g.concat_rows(&rows_sel) };
                    let st = self.stage_token(g, f)?;
                    add_block(&mut blocks, &mut offsets, g, st);
                    let t = g.param(&self.store, *table);
                    let idx: Vec<usize> = acted.iter().map(|(_, a)| a[1]).collect();
                    if let Some(bad) = idx.iter().find(|i| **i >= g.value(t).rows) {
                        return Err(Error::Input(format!("executor level {} outside the answer space", bad + 1)));
                    }
                    let v = g.gather_rows(t, &idx);
                    add_block(&mut blocks, &mut offsets, g, v);
                }
            }
        }
        let zero = g.constant(Matrix::zeros(1, d));
        let zero_row = rows;
        blocks.push(zero);
        let all = g.concat_rows(&blocks);
        let ts_table = g.param(&self.store, self.timestep);
        let ts_ext = g.concat_rows(&[ts_table, zero]);
        let ts_zero = self.config.max_timestep;

        let mut token_idx = Vec::new();
        let mut ts_idx = Vec::new();
        let mut valid = Vec::new();
        let mut state_pos = Vec::with_capacity(slots.len());
        let mut action_pos = Vec::with_capacity(slots.len());
        let mut nodes = Vec::with_capacity(slots.len());
        let mut vi = 0;
        let mut ai = 0;
        for slot in slots {
            match slot {
                None => {
                    let width = 1 + n + m;
                    token_idx.extend(std::iter::repeat(zero_row).take(width));
                    ts_idx.extend(std::iter::repeat(ts_zero).take(width));
                    valid.extend(std::iter::repeat(false).take(width));
                    state_pos.push(None);
                    action_pos.push(None);
                    nodes.push(None);
                }
                Some(s) => {
                    let tr = self.timestep_row(s.timestep);
                    token_idx.push(offsets[0] + vi);
                    for p in 0..n {
                        token_idx.push(offsets[1 + p] + vi);
                    }
                    state_pos.push(Some(token_idx.len() - 1));
                    let mut count = 1 + n;
                    if s.actions.is_some() && has_actions {
                        let mut pos = Vec::with_capacity(m);
                        for j in 0..m {
                            token_idx.push(offsets[1 + n + j] + ai);
                            pos.push(token_idx.len() - 1);
                        }
                        count += m;
                        ai += 1;
                        action_pos.push(Some(pos));
                    } else {
                        action_pos.push(None);
                    }
                    ts_idx.extend(std::iter::repeat(tr).take(count));
                    valid.extend(std::iter::repeat(true).take(count));
                    nodes.push(nodes_present[vi]);
                    vi += 1;
                }
            }
        }
        let tok = g.gather_rows(all, &token_idx);
        let ts = g.gather_rows(ts_ext, &ts_idx);
        let x = g.add(tok, ts);
        Ok(Embedded {
            x,
            valid,
            state_pos,
            action_pos,
            nodes,
        })
    }

    fn run<'s>(&'s self, g: &mut Graph, slots: &[Option<StepInput<'_>>]) -> Result<(Embedded, Var, Session<'s>)> {
        let e = self.embed(g, slots)?;
        let mut session = self.backbone.session();
        let out = session.extend(g, &self.store, e.x, &e.valid)?;
        Ok((e, out, session))
    }

    /// Window slots of a dataset sample.
    pub fn window_slots<'d>(data: &'d ExperienceDataset, w: &SampledWindow) -> Vec<Option<StepInput<'d>>> {
        let t = &data.trajectories()[w.trajectory];
        w.steps
            .iter()
            .map(|s| {
                s.map(|i| StepInput {
                    ret: t.returns[i],
                    state: &t.states[i],
                    actions: Some(&t.actions[i]),
                    timestep: i,
                })
            })
            .collect()
    }

    /// Offline-RL loss of one window: cross-entropy of every action piece at
    /// every valid slot, divided by the number of valid slots. `None` when
    /// all slots are padding.
    pub fn window_loss(&self, g: &mut Graph, slots: &[Option<StepInput<'_>>]) -> Result<Option<Var>> {
        let v = slots.iter().filter(|s| s.is_some()).count();
        if v == 0 {
            return Ok(None);
        }
        let (e, out, _session) = self.run(g, slots)?;
        let wgt = 1.0 / v as f64;
        let valid_slots: Vec<usize> = (0..slots.len()).filter(|&k| slots[k].is_some()).collect();
        match &self.heads {
            TaskHeads::Abr { head, .. } => {
                let rows: Vec<usize> = valid_slots.iter().map(|&k| e.state_pos[k].expect("valid")).collect();
                let z = g.gather_rows(out, &rows);
                let logits = head.logits(g, &self.store, z);
                let targets: Vec<Option<usize>> = valid_slots
                    .iter()
                    .map(|&k| slots[k].and_then(|s| s.actions).map(|a| a[0]))
                    .collect();
                let weights = vec![wgt; rows.len()];
                Ok(Some(g.cross_entropy(
                    logits,
                    CrossEntropyTargets {
                        targets: &targets,
                        weights: &weights,
                        allowed: None,
                    },
                )))
            }
            TaskHeads::Cjs { heads, .. } => {
                let mut terms = Vec::new();
                let mut exec_rows = Vec::new();
                let mut exec_targets = Vec::new();
                for &k in &valid_slots {
                    let s = slots[k].expect("valid");
                    let Some(a) = s.actions else { continue };
                    let z = g.slice_rows(out, e.state_pos[k].expect("valid"), 1);
                    let nodes = e.nodes[k].expect("graph features");
                    let scores = heads.stage_scores(g, &self.store, z, nodes)?;
                    let RawInput::Graph(snap) = &s.state[0] else {
                        return Err(Error::Input("scheduling state must be a graph".into()));
                    };
                    let allowed: Vec<bool> = snap.node_attrs.iter().map(|r| r[RUNNABLE_ATTR] > 0.5).collect();
                    if !allowed.get(a[0]).copied().unwrap_or(false) {
                        return Err(Error::Input(format!("recorded stage {} was not runnable", a[0])));
                    }
                    terms.push(g.cross_entropy(
                        scores,
                        CrossEntropyTargets {
                            targets: &[Some(a[0])],
                            weights: &[wgt],
                            allowed: Some(&[allowed]),
                        },
                    ));
                    exec_rows.push(e.action_pos[k].as_ref().expect("acted")[0]);
                    exec_targets.push(Some(a[1]));
                }
                let z = g.gather_rows(out, &exec_rows);
                let logits = heads.executor_logits(g, &self.store, z);
                let weights = vec![wgt; exec_rows.len()];
                terms.push(g.cross_entropy(
                    logits,
                    CrossEntropyTargets {
                        targets: &exec_targets,
                        weights: &weights,
                        allowed: None,
                    },
                ));
                let mut total = terms[0];
                for t in &terms[1..] {
                    total = g.add(total, *t);
                }
                Ok(Some(total))
            }
        }
    }

    /// Mean window loss over a batch; windows that are entirely padding are
    /// skipped.
    pub fn batch_loss(&self, g: &mut Graph, data: &ExperienceDataset, windows: &[SampledWindow]) -> Result<Option<Var>> {
        let mut terms = Vec::new();
        for w in windows {
            if let Some(l) = self.window_loss(g, &Self::window_slots(data, w))? {
                terms.push(l);
            }
        }
        if terms.is_empty() {
            return Ok(None);
        }
        let mut total = terms[0];
        for t in &terms[1..] {
            total = g.add(total, *t);
        }
        Ok(Some(g.scale(total, 1.0 / terms.len() as f64)))
    }

    /// Per-slot logits for every action piece (plain values), read at s^n for
    /// the first piece and at a^{j-1} for later pieces.
    pub fn predict_actions(&self, slots: &[Option<StepInput<'_>>]) -> Result<Vec<Option<Vec<Vec<f64>>>>> {
        let mut g = Graph::new();
        let (e, out, _session) = self.run(&mut g, slots)?;
        let mut result = Vec::with_capacity(slots.len());
        for (k, slot) in slots.iter().enumerate() {
            let Some(_) = slot else {
                result.push(None);
                continue;
            };
            let z = g.slice_rows(out, e.state_pos[k].expect("valid"), 1);
            let mut pieces = Vec::new();
            match &self.heads {
                TaskHeads::Abr { head, .. } => {
                    let l = head.logits(&mut g, &self.store, z);
                    pieces.push(g.value(l).data.clone());
                }
                TaskHeads::Cjs { heads, .. } => {
                    let nodes = e.nodes[k].expect("graph features");
                    let s = heads.stage_scores(&mut g, &self.store, z, nodes)?;
                    pieces.push(g.value(s).data.clone());
                    if let Some(pos) = &e.action_pos[k] {
                        let ze = g.slice_rows(out, pos[0], 1);
                        let l = heads.executor_logits(&mut g, &self.store, ze);
                        pieces.push(g.value(l).data.clone());
                    }
                }
            }
            result.push(Some(pieces));
        }
        Ok(result)
    }

    /// Bitrate decision for the final step of `context`; one backbone pass.
    pub fn decide_abr(&self, context: &[Option<StepInput<'_>>]) -> Result<AbrDecision> {
        let TaskHeads::Abr { head, .. } = &self.heads else {
            return Err(Error::Config("not a bitrate model".into()));
        };
        let mut g = Graph::new();
        let (e, out, _session) = self.run(&mut g, context)?;
        let last = e.state_pos.last().copied().flatten().ok_or_else(|| Error::Input("empty context".into()))?;
        let z = g.slice_rows(out, last, 1);
        let l = head.logits(&mut g, &self.store, z);
        Ok(head.decide_from_logits(&g.value(l).data))
    }

    /// Node index and executor level (1-based) for the final step of
    /// `context`, or `None` if nothing is runnable. The executor head reads the
    /// chosen stage's token appended to the same backbone pass.
    pub fn decide_cjs(&self, context: &[Option<StepInput<'_>>]) -> Result<Option<(usize, usize)>> {
        let TaskHeads::Cjs { heads, .. } = &self.heads else {
            return Err(Error::Config("not a scheduling model".into()));
        };
        let Some(Some(cur)) = context.last() else {
            return Err(Error::Input("empty context".into()));
        };
        let RawInput::Graph(snap) = &cur.state[0] else {
            return Err(Error::Input("scheduling state must be a graph".into()));
        };
        let runnable: Vec<bool> = snap.node_attrs.iter().map(|r| r[RUNNABLE_ATTR] > 0.5).collect();
        let mut g = Graph::new();
        let (e, out, mut session) = self.run(&mut g, context)?;
        let k = context.len() - 1;
        let z = g.slice_rows(out, e.state_pos[k].expect("valid"), 1);
        let nodes = e.nodes[k].expect("graph features");
        let scores = heads.stage_scores(&mut g, &self.store, z, nodes)?;
        let Some(stage) = select_stage(&g.value(scores).data, &runnable) else {
            return Ok(None);
        };
        let feat = g.slice_rows(nodes, stage, 1);
        let tok = self.stage_token(&mut g, feat)?;
        let ts = g.param(&self.store, self.timestep);
        let ts_row = g.slice_rows(ts, self.timestep_row(cur.timestep), 1);
        let tok = g.add(tok, ts_row);
        let ze = session.extend(&mut g, &self.store, tok, &[true])?;
        let l = heads.executor_logits(&mut g, &self.store, ze);
        Ok(Some((stage, CjsHeads::level_from_logits(&g.value(l).data))))
    }

    pub fn executor_levels(&self) -> usize {
        match &self.heads {
            TaskHeads::Cjs { heads, .. } => heads.executor_levels(),
            TaskHeads::Abr { .. } => 0,
        }
    }
}

/// Completed steps kept for conditioning plus the step awaiting feedback.
struct Context {
    window: usize,
    target: f64,
    rtg: f64,
    t: usize,
    past: VecDeque<(f64, Vec<RawInput>, Vec<usize>, usize)>,
    pending: Option<(f64, Vec<RawInput>, Vec<usize>, usize)>,
}

impl Context {
    fn new(window: usize, target: f64) -> Self {
        Self {
            window: window.max(1),
            target,
            rtg: target,
            t: 0,
            past: VecDeque::new(),
            pending: None,
        }
    }

    fn reset(&mut self) {
        self.rtg = self.target;
        self.t = 0;
        self.past.clear();
        self.pending = None;
    }

    fn slots<'a>(&'a self, state: &'a [RawInput]) -> Vec<Option<StepInput<'a>>> {
        let mut v: Vec<Option<StepInput<'a>>> = self
            .past
            .iter()
            .map(|(r, s, a, t)| {
                Some(StepInput {
                    ret: *r,
                    state: s,
                    actions: Some(a),
                    timestep: *t,
                })
            })
            .collect();
        v.push(Some(StepInput {
            ret: self.rtg,
            state,
            actions: None,
            timestep: self.t,
        }));
        v
    }

    /// Commits the pending step and lowers the return-to-go by `reward`.
    fn observe(&mut self, reward: f64) {
        if let Some(p) = self.pending.take() {
            self.past.push_back(p);
            while self.past.len() > self.window - 1 {
                self.past.pop_front();
            }
        }
        self.rtg -= reward;
        self.t += 1;
    }

    fn return_to_go(&self) -> f64 {
        self.rtg
    }
}

/// Bitrate policy driven by a target return.
pub struct DtAbrPolicy<'m> {
    model: &'m RlModel,
    ctx: Context,
}

impl<'m> DtAbrPolicy<'m> {
    pub fn new(model: &'m RlModel, window: usize, target_return: f64) -> Self {
        Self {
            model,
            ctx: Context::new(window, target_return),
        }
    }

    pub fn return_to_go(&self) -> f64 {
        self.ctx.return_to_go()
    }
}

impl AbrPolicy for DtAbrPolicy<'_> {
    fn name(&self) -> &str {
        "adapted"
    }

    fn reset(&mut self) {
        self.ctx.reset();
    }

    fn decide(&mut self, state: &AbrState) -> Result<usize> {
        let pieces = state.to_pieces();
        let decision = self.model.decide_abr(&self.ctx.slots(&pieces))?;
        self.ctx.pending = Some((self.ctx.rtg, pieces, vec![decision.index], self.ctx.t));
        Ok(decision.index)
    }

    fn observe(&mut self, reward: f64) {
        self.ctx.observe(reward);
    }
}

/// Scheduling policy driven by a target return.
pub struct DtCjsPolicy<'m> {
    model: &'m RlModel,
    ctx: Context,
}

impl<'m> DtCjsPolicy<'m> {
    pub fn new(model: &'m RlModel, window: usize, target_return: f64) -> Self {
        Self {
            model,
            ctx: Context::new(window, target_return),
        }
    }

    pub fn return_to_go(&self) -> f64 {
        self.ctx.return_to_go()
    }
}

impl CjsPolicy for DtCjsPolicy<'_> {
    fn name(&self) -> &str {
        "adapted"
    }

    fn reset(&mut self) {
        self.ctx.reset();
    }

    fn decide(&mut self, state: &ClusterState) -> Result<CjsAction> {
        let (snap, nodes, _) = state.to_graph();
        let pieces = vec![RawInput::Graph(snap)];
        let Some((node, level)) = self.model.decide_cjs(&self.ctx.slots(&pieces))? else {
            return Err(Error::Input("no runnable stage".into()));
        };
        let (job, stage) = nodes[node];
        self.ctx.pending = Some((self.ctx.rtg, pieces, vec![node, level - 1], self.ctx.t));
        Ok(CjsAction {
            job,
            stage,
            executors: level,
        })
    }

    fn observe(&mut self, reward: f64) {
        self.ctx.observe(reward);
    }
}
