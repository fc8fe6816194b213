//! Task heads: linear maps from backbone features straight to answers that
//! are valid by construction.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Matrix;

pub const HEAD_PREFIX: &str = "head.";

/// The set of answers a task may emit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum AnswerSpace {
    Abr { ladder_kbps: Vec<f64> },
    Cjs { max_stages: usize, executor_levels: usize, total_executors: usize },
    Vp { horizon: usize },
}

impl AnswerSpace {
    pub fn validate(&self) -> Result<()> {
        match self {
            AnswerSpace::Abr { ladder_kbps } => {
                if ladder_kbps.is_empty() {
                    return Err(Error::Config("empty bitrate ladder".into()));
                }
                if ladder_kbps.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::Config("bitrate ladder is not strictly increasing".into()));
                }
            }
            AnswerSpace::Cjs {
                max_stages,
                executor_levels,
                total_executors,
            } => {
                if *max_stages == 0 || *executor_levels == 0 {
                    return Err(Error::Config("empty scheduling answer space".into()));
                }
                if executor_levels > total_executors {
                    return Err(Error::Config(format!(
                        "{executor_levels} executor levels exceed {total_executors} executors"
                    )));
                }
            }
            AnswerSpace::Vp { horizon } => {
                if *horizon == 0 {
                    return Err(Error::Config("zero prediction horizon".into()));
                }
            }
        }
        Ok(())
    }
}

/// Index of the largest value; exact ties resolve to the lowest index.
pub fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn linear_params<R: Rng + ?Sized>(
    store: &mut ParamStore,
    rng: &mut R,
    prefix: &str,
    d: usize,
    out: usize,
) -> Result<(ParamId, ParamId)> {
    let w = store.insert(format!("{prefix}.w"), Matrix::randn(d, out, 0.02, rng))?;
    let b = store.insert(format!("{prefix}.b"), Matrix::zeros(1, out))?;
    Ok((w, b))
}

fn affine(g: &mut Graph, store: &ParamStore, x: Var, w: ParamId, b: ParamId) -> Var {
    let wv = g.param(store, w);
    let bv = g.param(store, b);
    let h = g.matmul(x, wv);
    g.add_row(h, bv)
}

/// Roll, pitch and yaw for every future sample, in one shot.
#[derive(Debug)]
pub struct VpHead {
    horizon: usize,
    w: ParamId,
    b: ParamId,
}

impl VpHead {
    pub fn new<R: Rng + ?Sized>(d: usize, horizon: usize, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        AnswerSpace::Vp { horizon }.validate()?;
        let (w, b) = linear_params(store, rng, "head.vp", d, horizon * 3)?;
        Ok(Self { horizon, w, b })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// B×d features to B×3H raw angles (row layout: t0 roll, t0 pitch, t0 yaw, t1 roll, ...).
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, z: Var) -> Var {
        affine(g, store, z, self.w, self.b)
    }

    pub fn predict(&self, store: &ParamStore, feature: &[f64], horizon: usize) -> Result<Vec<[f64; 3]>> {
        if horizon != self.horizon {
            return Err(Error::Config(format!(
                "vp head built for horizon {}, asked for {horizon}",
                self.horizon
            )));
        }
        let mut g = Graph::new();
        let z = g.constant(Matrix::row_vector(feature.to_vec()));
        let y = self.forward(&mut g, store, z);
        Ok(g.value(y).data.chunks(3).map(|c| [c[0], c[1], c[2]]).collect())
    }
}

/// Distribution over the bitrate ladder.
#[derive(Debug)]
pub struct AbrHead {
    ladder_kbps: Vec<f64>,
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AbrDecision {
    pub probabilities: Vec<f64>,
    pub index: usize,
    pub bitrate_kbps: f64,
}

impl AbrHead {
    pub fn new<R: Rng + ?Sized>(
        d: usize,
        space: &AnswerSpace,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self> {
        space.validate()?;
        let AnswerSpace::Abr { ladder_kbps } = space else {
            return Err(Error::Config("abr head needs an abr answer space".into()));
        };
        let (w, b) = linear_params(store, rng, "head.abr", d, ladder_kbps.len())?;
        Ok(Self {
            ladder_kbps: ladder_kbps.clone(),
            w,
            b,
        })
    }

    pub fn levels(&self) -> usize {
        self.ladder_kbps.len()
    }

    pub fn logits(&self, g: &mut Graph, store: &ParamStore, z: Var) -> Var {
        affine(g, store, z, self.w, self.b)
    }

    /// Argmax selection from logits; ties go to the lower bitrate.
    pub fn decide_from_logits(&self, logits: &[f64]) -> AbrDecision {
        let probabilities = softmax(logits);
        let index = argmax_lowest(&probabilities);
        AbrDecision {
            bitrate_kbps: self.ladder_kbps[index],
            probabilities,
            index,
        }
    }

    pub fn decide(&self, store: &ParamStore, feature: &[f64]) -> AbrDecision {
        let mut g = Graph::new();
        let z = g.constant(Matrix::row_vector(feature.to_vec()));
        let l = self.logits(&mut g, store, z);
        self.decide_from_logits(&g.value(l).data)
    }
}

/// Stage-selection and executor-count heads for scheduling.
#[derive(Debug)]
pub struct CjsHeads {
    node_width: usize,
    executor_levels: usize,
    query_w: ParamId,
    query_b: ParamId,
    node_w: ParamId,
    exec_w: ParamId,
    exec_b: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CjsDecision {
    /// No runnable stage: the harness skips this decision point.
    Idle,
    Act { stage: usize, executors: usize },
}

/// Highest-scoring runnable stage; non-runnable stages never win.
pub fn select_stage(scores: &[f64], runnable: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, (s, r)) in scores.iter().zip(runnable).enumerate() {
        if *r && best.map_or(true, |b| *s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

impl CjsHeads {
    pub fn new<R: Rng + ?Sized>(
        d: usize,
        node_width: usize,
        space: &AnswerSpace,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self> {
        space.validate()?;
        let AnswerSpace::Cjs { executor_levels, .. } = space else {
            return Err(Error::Config("cjs heads need a cjs answer space".into()));
        };
        let (query_w, query_b) = linear_params(store, rng, "head.cjs.stage_query", d, node_width)?;
        let node_w = store.insert("head.cjs.stage_node.w", Matrix::randn(node_width, 1, 0.02, rng))?;
        let (exec_w, exec_b) = linear_params(store, rng, "head.cjs.executors", d, *executor_levels)?;
        Ok(Self {
            node_width,
            executor_levels: *executor_levels,
            query_w,
            query_b,
            node_w,
            exec_w,
            exec_b,
        })
    }

    pub fn executor_levels(&self) -> usize {
        self.executor_levels
    }

    /// Scores (1×N) of each node given the state feature `z` (1×d) and node
    /// features (N×F): `node·(z·Wq + bq) + node·u`, linear in `z`.
    pub fn stage_scores(&self, g: &mut Graph, store: &ParamStore, z: Var, nodes: Var) -> Result<Var> {
        let width = g.value(nodes).cols;
        if width != self.node_width {
            return Err(Error::shape("cjs node features", self.node_width, width));
        }
        let q = affine(g, store, z, self.query_w, self.query_b);
        let u = g.param(store, self.node_w);
        let qt = g.transpose(q);
        let qu = g.add(qt, u);
        let s = g.matmul(nodes, qu);
        Ok(g.transpose(s))
    }

    /// Logits (B×E) over executor levels 1..=E.
    pub fn executor_logits(&self, g: &mut Graph, store: &ParamStore, z: Var) -> Var {
        affine(g, store, z, self.exec_w, self.exec_b)
    }

    /// Executor level (1-based) from logits; ties go to the fewest executors.
    pub fn level_from_logits(logits: &[f64]) -> usize {
        argmax_lowest(logits) + 1
    }

    /// Full decision from plain features. `exec_feature` is the feature the
    /// executor head reads (the stage-action position in the sequence model).
    pub fn decide(
        &self,
        store: &ParamStore,
        node_features: &Matrix,
        stage_feature: &[f64],
        exec_feature: &[f64],
        runnable: &[bool],
    ) -> Result<CjsDecision> {
        if runnable.len() != node_features.rows {
            return Err(Error::shape("runnable mask", node_features.rows, runnable.len()));
        }
        let mut g = Graph::new();
        let z = g.constant(Matrix::row_vector(stage_feature.to_vec()));
        let nodes = g.constant(node_features.clone());
        let s = self.stage_scores(&mut g, store, z, nodes)?;
        let Some(stage) = select_stage(&g.value(s).data, runnable) else {
            return Ok(CjsDecision::Idle);
        };
        let ze = g.constant(Matrix::row_vector(exec_feature.to_vec()));
        let l = self.executor_logits(&mut g, store, ze);
        Ok(CjsDecision::Act {
            stage,
            executors: Self::level_from_logits(&g.value(l).data),
        })
    }
}
