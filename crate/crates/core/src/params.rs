//! Named parameter blocks, digests and the Adam optimizer.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Trainable parameter blocks keyed by dotted name (`adapter.l0.q.a`,
/// `encoder.buffer.proj.w`, ...). Insertion order is stable and defines
/// the optimizer layout.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter `{name}`")));
        }
        self.index.insert(name.clone(), self.values.len());
        self.names.push(name);
        self.values.push(value);
        Ok(ParamId(self.values.len() - 1))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Ids whose name starts with `prefix`.
    pub fn ids_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = ParamId> + 'a {
        self.ids().filter(move |id| self.names[id.0].starts_with(prefix))
    }

    pub fn count_with_prefix(&self, prefix: &str) -> usize {
        self.ids_with_prefix(prefix).map(|id| self.values[id.0].len()).sum()
    }

    pub fn total_count(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }

    pub fn digest(&self) -> String {
        digest_blocks(self.iter())
    }

    pub fn to_map(&self) -> BTreeMap<String, Matrix> {
        self.iter().map(|(n, m)| (n.to_string(), m.clone())).collect()
    }

    /// Overwrites every block present in `blocks`; shapes must agree and
    /// every parameter must be supplied.
    pub fn load_from(&mut self, blocks: &BTreeMap<String, Matrix>) -> Result<()> {
        for (i, name) in self.names.iter().enumerate() {
            let src = blocks
                .get(name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks parameter `{name}`")))?;
            if src.shape() != self.values[i].shape() {
                return Err(Error::shape(
                    name.clone(),
                    format!("{:?}", self.values[i].shape()),
                    format!("{:?}", src.shape()),
                ));
            }
            self.values[i] = src.clone();
        }
        Ok(())
    }
}

/// SHA-256 over names, shapes and little-endian values, in iteration order.
pub fn digest_blocks<'a>(blocks: impl Iterator<Item = (&'a str, &'a Matrix)>) -> String {
    let mut h = Sha256::new();
    for (name, m) in blocks {
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
        h.update((m.rows as u64).to_le_bytes());
        h.update((m.cols as u64).to_le_bytes());
        for v in &m.data {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global-norm clipping threshold; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(1.0),
        }
    }
}

pub struct Adam {
    cfg: AdamConfig,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: u64,
}

impl Adam {
    pub fn new(store: &ParamStore, cfg: AdamConfig) -> Self {
        let zeros = |m: &Matrix| Matrix::zeros(m.rows, m.cols);
        Self {
            m: store.values.iter().map(zeros).collect(),
            v: store.values.iter().map(zeros).collect(),
            cfg,
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Matrix)]) {
        self.t += 1;
        let norm = grads
            .iter()
            .flat_map(|(_, g)| g.data.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt();
        let clip = match self.cfg.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        let t = self.t as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);
        for (id, g) in grads {
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            let p = &mut store.values[id.0];
            for i in 0..p.data.len() {
                let gi = g.data[i] * clip;
                m.data[i] = self.cfg.beta1 * m.data[i] + (1.0 - self.cfg.beta1) * gi;
                v.data[i] = self.cfg.beta2 * v.data[i] + (1.0 - self.cfg.beta2) * gi * gi;
                let mh = m.data[i] / bc1;
                let vh = v.data[i] / bc2;
                p.data[i] -= self.cfg.lr * mh / (vh.sqrt() + self.cfg.eps);
            }
        }
    }
}
