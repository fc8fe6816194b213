//! Viewport predictor: history samples (and an optional content image) as
//! tokens, one feature read at the last token, all future samples at once.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::backbone::{Backbone, BackboneConfig, FrozenParameterSet};
use crate::baselines::VpPredictor;
use crate::encoder::{EncoderParams, Image, InputSpec, ModalityKind, MultimodalEncoder, RawInput};
use crate::error::{Error, Result};
use crate::heads::VpHead;
use crate::params::{ParamId, ParamStore};
use crate::tensor::Matrix;
use crate::vp::{saliency_image, Viewport, VpSample, WindowConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VpModelConfig {
    pub backbone: BackboneConfig,
    pub frozen_seed: u64,
    pub window: WindowConfig,
    pub viewport: EncoderParams,
    pub image: EncoderParams,
    /// Degrees per unit of head output.
    pub output_scale: f64,
}

impl Default for VpModelConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneConfig::default(),
            frozen_seed: 7,
            window: WindowConfig::default(),
            viewport: EncoderParams {
                width: 32,
                in_dim: 3,
                input_scale: 0.2,
                ..EncoderParams::default()
            },
            image: EncoderParams {
                width: 32,
                patch: 4,
                max_patches: 16,
                ..EncoderParams::default()
            },
            output_scale: 30.0,
        }
    }
}

/// History tokens carry per-step displacement; the first token carries zero.
pub fn step_deltas(history: &[Viewport]) -> Vec<RawInput> {
    (0..history.len())
        .map(|i| {
            let d = if i == 0 {
                [0.0; 3]
            } else {
                [0, 1, 2].map(|c| history[i][c] - history[i - 1][c])
            };
            RawInput::Vector(d.to_vec())
        })
        .collect()
}

pub struct VpModel {
    config: VpModelConfig,
    store: ParamStore,
    backbone: Backbone,
    encoder: MultimodalEncoder,
    pos: ParamId,
    head: VpHead,
}

impl VpModel {
    pub fn new<R: Rng + ?Sized>(config: VpModelConfig, rng: &mut R) -> Result<Self> {
        use rand::SeedableRng;
        config.window.validate()?;
        let d = config.backbone.model_dim;
        let frozen = FrozenParameterSet::random(
            &config.backbone,
            &mut rand_chacha::ChaCha8Rng::seed_from_u64(config.frozen_seed),
        );
        let mut store = ParamStore::new();
        let backbone = Backbone::new(config.backbone.clone(), frozen, &mut store, rng)?;
        let hist = config.window.history_len();
        let mut viewport = InputSpec::new("viewport", ModalityKind::Scalar, config.viewport.clone());
        viewport.repeat = hist;
        let mut specs = vec![viewport];
        if config.window.with_images {
            specs.push(InputSpec::new("image", ModalityKind::Image, config.image.clone()));
        }
        let encoder = MultimodalEncoder::new(&specs, d, &mut store, rng)?;
        let tokens = encoder.piece_count();
        config.backbone.check_window(1, tokens - 1, 0)?;
        let pos = store.insert("encoder.position", Matrix::randn(tokens, d, 0.1, rng))?;
        let head = VpHead::new(d, config.window.horizon(), &mut store, rng)?;
        Ok(Self {
            config,
            store,
            backbone,
            encoder,
            pos,
            head,
        })
    }

    pub fn config(&self) -> &VpModelConfig {
        &self.config
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

    pub fn horizon(&self) -> usize {
        self.head.horizon()
    }

    fn pieces(&self, history: &[Viewport], image: Option<&Image>) -> Result<Vec<RawInput>> {
        let hist = self.config.window.history_len();
        if history.len() != hist {
            return Err(Error::Input(format!("history has {} samples, model expects {hist}", history.len())));
        }
        let mut pieces = step_deltas(history);
        if self.config.window.with_images {
            let img = match image {
                Some(i) => i.clone(),
                None => saliency_image(history[hist - 1], self.config.window.image_size),
            };
            pieces.push(RawInput::Image(img));
        }
        Ok(pieces)
    }

    /// Head output (1×3H, in units of `output_scale`) for one sample.
    fn forward(&self, g: &mut Graph, history: &[Viewport], image: Option<&Image>) -> Result<Var> {
        let pieces = self.pieces(history, image)?;
        let mut parts = Vec::new();
        let mut i = 0;
        for spec in self.encoder.inputs() {
            let refs: Vec<&RawInput> = pieces[i..i + spec.repeat].iter().collect();
            parts.push(self.encoder.embed_batch(g, &self.store, &spec.name, &refs)?);
            i += spec.repeat;
        }
        let tok = if parts.len() == 1 { parts[0] } else { g.concat_rows(&parts) };
        let pos = g.param(&self.store, self.pos);
        let x = g.add(tok, pos);
        let t = g.value(x).rows;
        let mut session = self.backbone.session();
        let out = session.extend(g, &self.store, x, &vec![true; t])?;
        let z = g.slice_rows(out, t - 1, 1);
        Ok(self.head.forward(g, &self.store, z))
    }

    /// Mean squared error between head outputs and scaled future
    /// displacements, averaged over the batch.
    pub fn batch_loss(&self, g: &mut Graph, samples: &[&VpSample]) -> Result<Var> {
        if samples.is_empty() {
            return Err(Error::Input("empty batch".into()));
        }
        let mut terms = Vec::with_capacity(samples.len());
        for s in samples {
            if s.target.len() != self.horizon() {
                return Err(Error::Input(format!(
                    "sample has {} target steps, model predicts {}",
                    s.target.len(),
                    self.horizon()
                )));
            }
            let y = self.forward(g, &s.history, s.image.as_ref())?;
            let last = s.history[s.history.len() - 1];
            let scale = self.config.output_scale;
            let target: Vec<f64> = s
                .target
                .iter()
                .flat_map(|v| (0..3).map(move |c| (v[c] - last[c]) / scale))
                .collect();
            let t = g.constant(Matrix::row_vector(target));
            terms.push(g.mse(y, t));
        }
        let mut total = terms[0];
        for t in &terms[1..] {
            total = g.add(total, *t);
        }
        Ok(g.scale(total, 1.0 / samples.len() as f64))
    }

    /// Future viewports from one backbone pass.
    pub fn predict(&self, history: &[Viewport], image: Option<&Image>) -> Result<Vec<Viewport>> {
        let mut g = Graph::new();
        let y = self.forward(&mut g, history, image)?;
        let last = history[history.len() - 1];
        let scale = self.config.output_scale;
        Ok(g.value(y)
            .data
            .chunks(3)
            .map(|c| [0, 1, 2].map(|k| last[k] + scale * c[k]))
            .collect())
    }
}

impl VpPredictor for VpModel {
    fn name(&self) -> &str {
        "adapted"
    }

    fn predict(&mut self, history: &[Viewport], horizon: usize, rate_hz: f64) -> Result<Vec<Viewport>> {
        if horizon != self.horizon() {
            return Err(Error::Config(format!(
                "vp head built for horizon {}, asked for {horizon}",
                self.horizon()
            )));
        }
        if (rate_hz - self.config.window.rate_hz).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "model trained at {} Hz, asked for {rate_hz} Hz",
                self.config.window.rate_hz
            )));
        }
        VpModel::predict(self, history, None)
    }
}
