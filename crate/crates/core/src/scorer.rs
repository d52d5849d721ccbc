//! The entity probability head `p(s) = sigmoid(MLP(E(s)))` with analytic
//! backpropagation, and model checkpoints.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::encoder::{CharNGramEncoder, Embedding, TableGrad, Trace};
use crate::error::{Error, Result};
use crate::io;

/// Logits are clamped to `[-LOGIT_CLAMP, LOGIT_CLAMP]` before the sigmoid.
pub const LOGIT_CLAMP: f64 = 30.0;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Upper bound of the per-entity loss `-ln p` under the logit clamp,
/// `ln(1 + e^30)`.
pub fn loss_bound() -> f64 {
    softplus(LOGIT_CLAMP)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Dense layer, `w` is `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl Layer {
    fn zeros(input: usize, output: usize) -> Self {
        Layer {
            w: vec![vec![0.0; input]; output],
            b: vec![0.0; output],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.first().map_or(0, Vec::len)
    }

    pub fn output_dim(&self) -> usize {
        self.b.len()
    }

    fn affine(&self, x: &[f64]) -> Vec<f64> {
        self.w
            .iter()
            .zip(&self.b)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    fn add_scaled(&mut self, other: &Layer, scale: f64) {
        for (r, o) in self.w.iter_mut().zip(&other.w) {
            for (a, b) in r.iter_mut().zip(o) {
                *a += scale * b;
            }
        }
        for (a, b) in self.b.iter_mut().zip(&other.b) {
            *a += scale * b;
        }
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.w.iter().flatten().chain(&self.b)
    }
}

/// Intermediate values of one head evaluation.
#[derive(Debug, Clone)]
pub struct HeadPass {
    /// Input of every layer; `inputs[0]` is the embedding.
    inputs: Vec<Vec<f64>>,
    raw_logit: f64,
    logit: f64,
}

impl HeadPass {
    pub fn logit(&self) -> f64 {
        self.logit
    }

    pub fn probability(&self) -> f64 {
        sigmoid(self.logit)
    }

    /// False when the clamp is active, in which case the logit has zero
    /// gradient.
    pub fn unclamped(&self) -> bool {
        self.raw_logit.abs() < LOGIT_CLAMP
    }
}

/// Tanh MLP producing one logit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpHead {
    pub layers: Vec<Layer>,
}

impl MlpHead {
    pub fn zeros(input: usize, hidden: &[usize]) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = input;
        for &h in hidden.iter().chain(std::iter::once(&1)) {
            layers.push(Layer::zeros(prev, h));
            prev = h;
        }
        MlpHead { layers }
    }

    /// Weights drawn from `N(0, 1/fan_in)`, zero biases.
    pub fn random(input: usize, hidden: &[usize], seed: u64) -> Self {
        let mut head = Self::zeros(input, hidden);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut head.layers {
            let std = (1.0 / layer.input_dim() as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            for w in layer.w.iter_mut().flatten() {
                *w = normal.sample(&mut rng);
            }
        }
        head
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    fn check_shapes(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Checkpoint(m));
        if self.layers.is_empty() {
            return bad("head has no layers".into());
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.w.len() != l.b.len() || l.w.iter().any(|r| r.len() != l.input_dim()) {
                return bad(format!("layer {i} has ragged shape"));
            }
            if l.input_dim() == 0 {
                return bad(format!("layer {i} has zero inputs"));
            }
            if i > 0 && l.input_dim() != self.layers[i - 1].output_dim() {
                return bad(format!("layer {i} input does not match previous output"));
            }
            if l.params().any(|v| !v.is_finite()) {
                return bad(format!("layer {i} has non-finite parameters"));
            }
        }
        if self.layers.last().map(Layer::output_dim) != Some(1) {
            return bad("head must end in a single logit".into());
        }
        Ok(())
    }

    pub fn forward(&self, r: &[f64]) -> Result<HeadPass> {
        if r.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: r.len(),
            });
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut x = r.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.affine(&x);
            inputs.push(x);
            x = if i < last {
                z.into_iter().map(f64::tanh).collect()
            } else {
                z
            };
        }
        let raw_logit = x[0];
        Ok(HeadPass {
            inputs,
            raw_logit,
            logit: raw_logit.clamp(-LOGIT_CLAMP, LOGIT_CLAMP),
        })
    }

    /// Accumulates `scale * dL/dθ` into `grad` given `dlogit = dL/dlogit`
    /// and returns `dL/dr` (unscaled).
    pub fn backward(&self, pass: &HeadPass, dlogit: f64, scale: f64, grad: &mut [Layer]) -> Vec<f64> {
        let input_dim = self.input_dim();
        if !pass.unclamped() || dlogit == 0.0 {
            return vec![0.0; input_dim];
        }
        let mut delta = vec![dlogit];
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let x = &pass.inputs[i];
            let g = &mut grad[i];
            for (o, d) in delta.iter().enumerate() {
                g.b[o] += scale * d;
                for (gw, xv) in g.w[o].iter_mut().zip(x) {
                    *gw += scale * d * xv;
                }
            }
            let mut dx = vec![0.0; layer.input_dim()];
            for (row, d) in layer.w.iter().zip(&delta) {
                for (acc, w) in dx.iter_mut().zip(row) {
                    *acc += w * d;
                }
            }
            if i > 0 {
                // x = tanh(z) of the previous layer
                for (acc, xv) in dx.iter_mut().zip(x) {
                    *acc *= 1.0 - xv * xv;
                }
            }
            delta = dx;
        }
        delta
    }
}

/// Gradient of a scalar loss with respect to every model parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub table: TableGrad,
    pub head: Vec<Layer>,
}

impl Gradients {
    pub fn zeros_like(head: &MlpHead) -> Self {
        Gradients {
            table: TableGrad::new(),
            head: head
                .layers
                .iter()
                .map(|l| Layer::zeros(l.input_dim(), l.output_dim()))
                .collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (bucket, g) in &other.table {
            let row = self
                .table
                .entry(*bucket)
                .or_insert_with(|| vec![0.0; g.len()]);
            for (a, b) in row.iter_mut().zip(g) {
                *a += scale * b;
            }
        }
        for (a, b) in self.head.iter_mut().zip(&other.head) {
            a.add_scaled(b, scale);
        }
    }

    pub fn scale(&mut self, k: f64) {
        for row in self.table.values_mut() {
            row.iter_mut().for_each(|v| *v *= k);
        }
        for l in &mut self.head {
            l.w.iter_mut().flatten().for_each(|v| *v *= k);
            l.b.iter_mut().for_each(|v| *v *= k);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.table.values().flatten().all(|v| v.is_finite())
            && self.head.iter().all(|l| l.params().all(|v| v.is_finite()))
    }
}

#[derive(Serialize)]
struct CheckpointOut<'a> {
    version: u32,
    config: &'a RunConfig,
    encoder_table: Vec<&'a [f64]>,
    head_layers: &'a [Layer],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointIn {
    version: u32,
    config: RunConfig,
    encoder_table: Vec<Vec<f64>>,
    head_layers: Vec<Layer>,
}

#[derive(Deserialize)]
struct VersionOnly {
    version: u32,
}

/// Trainable encoder plus head, with the configuration it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorerModel {
    pub config: RunConfig,
    pub encoder: CharNGramEncoder,
    pub head: MlpHead,
    pub version: u32,
}

impl ScorerModel {
    /// Fresh model: random table from `config.seed`, random head.
    pub fn new(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let encoder = CharNGramEncoder::trainable(config)?;
        let head = MlpHead::random(config.dim, &config.hidden, config.seed.wrapping_add(1));
        Self::from_parts(config.clone(), encoder, head)
    }

    pub fn from_parts(config: RunConfig, encoder: CharNGramEncoder, head: MlpHead) -> Result<Self> {
        head.check_shapes()?;
        if encoder.dim() != head.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: encoder.dim(),
                actual: head.input_dim(),
            });
        }
        Ok(ScorerModel {
            config,
            encoder,
            head,
            version: CHECKPOINT_VERSION,
        })
    }

    pub fn score_embedding(&self, r: &Embedding) -> Result<f64> {
        Ok(self.head.forward(r)?.probability())
    }

    pub fn score_text(&self, text: &str) -> Result<f64> {
        self.score_embedding(&self.encoder.encode(text)?)
    }

    pub fn score_texts<S: AsRef<str>>(&self, texts: &[S]) -> Result<Vec<f64>> {
        texts.iter().map(|t| self.score_text(t.as_ref())).collect()
    }

    /// Encoding of `text`, the head pass on it and the encoder trace.
    pub fn forward_text(&self, text: &str) -> Result<(Embedding, HeadPass, Trace)> {
        let (r, trace) = self.encoder.encode_traced(text)?;
        let pass = self.head.forward(&r)?;
        Ok((r, pass, trace))
    }

    pub fn zero_grad(&self) -> Gradients {
        Gradients::zeros_like(&self.head)
    }

    pub fn apply_sgd(&mut self, grad: &Gradients, lr: f64) {
        self.encoder.apply_sgd(&grad.table, lr);
        for (l, g) in self.head.layers.iter_mut().zip(&grad.head) {
            l.add_scaled(g, -lr);
        }
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let out = CheckpointOut {
            version: self.version,
            config: &self.config,
            encoder_table: self.encoder.rows().collect(),
            head_layers: &self.head.layers,
        };
        Ok(serde_json::to_vec(&out)?)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let parsed: CheckpointIn = match serde_json::from_slice(bytes) {
            Ok(c) => c,
            Err(e) => {
                if let Ok(v) = serde_json::from_slice::<VersionOnly>(bytes) {
                    if v.version != CHECKPOINT_VERSION {
                        return Err(Error::Checkpoint(format!(
                            "unsupported checkpoint version {}",
                            v.version
                        )));
                    }
                }
                return Err(Error::Checkpoint(format!("corrupt checkpoint: {e}")));
            }
        };
        if parsed.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {}",
                parsed.version
            )));
        }
        let cfg = parsed.config;
        cfg.validate()?;
        if parsed.encoder_table.len() != cfg.num_buckets
            || parsed.encoder_table.iter().any(|r| r.len() != cfg.dim)
        {
            return Err(Error::Checkpoint(format!(
                "encoder table is not {} x {}",
                cfg.num_buckets, cfg.dim
            )));
        }
        let encoder = CharNGramEncoder::from_table(
            cfg.ngram_min,
            cfg.ngram_max,
            cfg.num_buckets,
            cfg.dim,
            cfg.hash_seed,
            cfg.lowercase,
            parsed.encoder_table.into_iter().flatten().collect(),
        )
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let head = MlpHead {
            layers: parsed.head_layers,
        };
        Self::from_parts(cfg, encoder, head)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, &self.to_json()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read(path)?)
    }
}
