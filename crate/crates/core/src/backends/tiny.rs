//! A small pre-norm decoder-only transformer with a tied output head.
//!
//! The sequence is laid out as `m` visual embedding rows followed by the text
//! tokens, all under one causal mask. Weights come from a seeded Gaussian
//! and are kept exactly representable in `f32`, so a saved weight file
//! reloads bit-identically.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::decoding::{label_tokens, ModelBackend, Segment, SegmentMarkers, TokenId, VisualPrefill, VocabDistribution};
use crate::entropy::VisualHiddenStates;
use crate::error::{Error, Result};
use crate::kernels::{layer_norm, matmul, matvec, softmax_in_place, Matrix};

use super::AttentionSummary;

const LN_EPS: f64 = 1e-5;
const FFN_MULT: usize = 4;

/// Architecture and seed. Serialized verbatim as the weight-file header.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TinyConfig {
    pub vocab_size: usize,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub context: usize,
    /// Number of visual positions.
    pub m: usize,
    pub seed: u64,
}

impl Default for TinyConfig {
    fn default() -> Self {
        Self {
            vocab_size: 64,
            dim: 32,
            layers: 2,
            heads: 2,
            context: 256,
            m: 8,
            seed: 0,
        }
    }
}

impl TinyConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("dim", self.dim),
            ("layers", self.layers),
            ("heads", self.heads),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("tiny transformer {name} must be positive")));
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "dim {} not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        if self.m < 2 {
            return Err(Error::Config("tiny transformer needs at least 2 visual positions".into()));
        }
        if self.context <= self.m {
            return Err(Error::Config("context must exceed the number of visual positions".into()));
        }
        Ok(())
    }

    fn parameter_count(&self) -> usize {
        let d = self.dim;
        let h = FFN_MULT * d;
        let per_layer = 4 * d + 4 * d * d + d * h + h + h * d + d;
        self.vocab_size * d + self.context * d + self.layers * per_layer + 2 * d
    }
}

/// One transformer block. Projection matrices are stored input-major
/// (`in x out`) so that a row of activations multiplies them directly.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyLayer {
    pub ln1_gain: Vec<f64>,
    pub ln1_bias: Vec<f64>,
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    pub ln2_gain: Vec<f64>,
    pub ln2_bias: Vec<f64>,
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TinyTransformer {
    config: TinyConfig,
    /// `|V| x d`; doubles as the language head.
    pub token_embedding: Matrix,
    pub position_embedding: Matrix,
    pub layers: Vec<TinyLayer>,
    pub final_gain: Vec<f64>,
    pub final_bias: Vec<f64>,
}

/// Output of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyForward {
    pub dist: VocabDistribution,
    /// Final-layer (post final norm) activations at the visual positions.
    pub visual_states: VisualHiddenStates,
    /// Head-averaged final-layer attention of the last position over every
    /// position of the sequence.
    pub attention: Vec<f64>,
    pub summary: AttentionSummary,
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            // keep every weight exactly representable as f32
            ((z * scale) as f32) as f64
        })
        .collect()
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}

impl TinyTransformer {
    /// Seeded Gaussian weights scaled by `1/sqrt(fan_in)`; norms start at
    /// unit gain and zero bias.
    pub fn from_seed(config: TinyConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.dim;
        let h = FFN_MULT * d;
        let sd = 1.0 / (d as f64).sqrt();
        let sh = 1.0 / (h as f64).sqrt();
        let mut mat = |rows: usize, cols: usize, scale: f64| {
            Matrix::from_vec(rows, cols, gaussian(&mut rng, rows * cols, scale))
        };
        let token_embedding = mat(config.vocab_size, d, sd)?;
        let position_embedding = mat(config.context, d, sd)?;
        let mut layers = Vec::with_capacity(config.layers);
        for _ in 0..config.layers {
            layers.push(TinyLayer {
                ln1_gain: vec![1.0; d],
                ln1_bias: vec![0.0; d],
                wq: mat(d, d, sd)?,
                wk: mat(d, d, sd)?,
                wv: mat(d, d, sd)?,
                wo: mat(d, d, sd)?,
                ln2_gain: vec![1.0; d],
                ln2_bias: vec![0.0; d],
                w1: mat(d, h, sd)?,
                b1: vec![0.0; h],
                w2: mat(h, d, sh)?,
                b2: vec![0.0; d],
            });
        }
        Ok(Self {
            config,
            token_embedding,
            position_embedding,
            layers,
            final_gain: vec![1.0; d],
            final_bias: vec![0.0; d],
        })
    }

    pub fn config(&self) -> &TinyConfig {
        &self.config
    }

    /// Deterministic stand-in visual embeddings (`m x d`) for a sample that
    /// does not carry its own.
    pub fn synthetic_visual_embeddings(&self, stream: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ 0x5e_ed0f_1a6e);
        rng.set_stream(stream);
        let d = self.config.dim;
        let values = gaussian(&mut rng, self.config.m * d, 1.0 / (d as f64).sqrt());
        Matrix::from_vec(self.config.m, d, values).expect("shape matches")
    }

    fn parameters(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![self.token_embedding.as_slice(), self.position_embedding.as_slice()];
        for l in &self.layers {
            out.extend([
                l.ln1_gain.as_slice(),
                l.ln1_bias.as_slice(),
                l.wq.as_slice(),
                l.wk.as_slice(),
                l.wv.as_slice(),
                l.wo.as_slice(),
                l.ln2_gain.as_slice(),
                l.ln2_bias.as_slice(),
                l.w1.as_slice(),
                l.b1.as_slice(),
                l.w2.as_slice(),
                l.b2.as_slice(),
            ]);
        }
        out.push(&self.final_gain);
        out.push(&self.final_bias);
        out
    }

    /// Writes `u64 LE header length`, the JSON header, then every parameter
    /// as little-endian `f32` in declaration order.
    pub fn save<W: Write>(&self, mut out: W) -> Result<()> {
        let header = serde_json::to_vec(&self.config)?;
        out.write_all(&(header.len() as u64).to_le_bytes())?;
        out.write_all(&header)?;
        for block in self.parameters() {
            for v in block {
                out.write_all(&(*v as f32).to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn load<R: Read>(mut input: R) -> Result<Self> {
        let mut len = [0u8; 8];
        input.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len);
        if len > 1 << 20 {
            return Err(Error::Config(format!("implausible weight header length {len}")));
        }
        let mut header = vec![0u8; len as usize];
        input.read_exact(&mut header)?;
        let config: TinyConfig = serde_json::from_slice(&header)?;
        config.validate()?;

        let mut payload = Vec::new();
        input.read_to_end(&mut payload)?;
        let expected = config.parameter_count() * 4;
        if payload.len() != expected {
            return Err(Error::Config(format!(
                "weight payload has {} bytes, header implies {expected}",
                payload.len()
            )));
        }
        let mut floats = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
        let mut take = |n: usize| -> Vec<f64> { floats.by_ref().take(n).collect() };

        let d = config.dim;
        let h = FFN_MULT * d;
        let token_embedding = Matrix::from_vec(config.vocab_size, d, take(config.vocab_size * d))?;
        let position_embedding = Matrix::from_vec(config.context, d, take(config.context * d))?;
        let mut layers = Vec::with_capacity(config.layers);
        for _ in 0..config.layers {
            layers.push(TinyLayer {
                ln1_gain: take(d),
                ln1_bias: take(d),
                wq: Matrix::from_vec(d, d, take(d * d))?,
                wk: Matrix::from_vec(d, d, take(d * d))?,
                wv: Matrix::from_vec(d, d, take(d * d))?,
                wo: Matrix::from_vec(d, d, take(d * d))?,
                ln2_gain: take(d),
                ln2_bias: take(d),
                w1: Matrix::from_vec(d, h, take(d * h))?,
                b1: take(h),
                w2: Matrix::from_vec(h, d, take(h * d))?,
                b2: take(d),
            });
        }
        let final_gain = take(d);
        let final_bias = take(d);
        let model = Self {
            config,
            token_embedding,
            position_embedding,
            layers,
            final_gain,
            final_bias,
        };
        if model.parameters().iter().any(|b| b.iter().any(|v| !v.is_finite())) {
            return Err(Error::Numeric("non-finite weight in file".into()));
        }
        Ok(model)
    }

    /// A per-sequence view with fixed visual embeddings.
    pub fn session(&self, visual: Matrix, markers: SegmentMarkers) -> Result<TinySession<'_>> {
        if visual.rows() != self.config.m || visual.cols() != self.config.dim {
            return Err(Error::Config(format!(
                "visual embeddings are {}x{}, model expects {}x{}",
                visual.rows(),
                visual.cols(),
                self.config.m,
                self.config.dim
            )));
        }
        if !visual.is_finite() {
            return Err(Error::Numeric("non-finite visual embedding".into()));
        }
        Ok(TinySession {
            model: self,
            visual,
            markers,
            eos: None,
        })
    }
}

/// Full forward pass over `m` visual rows followed by `prefix`.
pub fn tiny_forward(
    model: &TinyTransformer,
    visual: &Matrix,
    prefix: &[TokenId],
    markers: SegmentMarkers,
) -> Result<TinyForward> {
    let cfg = &model.config;
    let m = cfg.m;
    let d = cfg.dim;
    let n = m + prefix.len();
    if n > cfg.context {
        return Err(Error::Length {
            len: n,
            context: cfg.context,
        });
    }
    if visual.rows() != m || visual.cols() != d {
        return Err(Error::Config("visual embedding shape does not match model".into()));
    }
    if let Some(&bad) = prefix.iter().find(|&&t| t >= cfg.vocab_size) {
        return Err(Error::Index {
            index: bad,
            len: cfg.vocab_size,
        });
    }

    let mut x = Matrix::zeros(n, d);
    for i in 0..n {
        let src = if i < m {
            visual.row(i)
        } else {
            model.token_embedding.row(prefix[i - m])
        };
        let pos = model.position_embedding.row(i);
        for (o, (a, b)) in x.row_mut(i).iter_mut().zip(src.iter().zip(pos)) {
            *o = a + b;
        }
    }

    let heads = cfg.heads;
    let hd = d / heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut last_attention = vec![0.0; n];

    for (li, layer) in model.layers.iter().enumerate() {
        let normed = rowwise_norm(&x, &layer.ln1_gain, &layer.ln1_bias)?;
        let q = matmul(&normed, &layer.wq)?;
        let k = matmul(&normed, &layer.wk)?;
        let v = matmul(&normed, &layer.wv)?;
        let mut mixed = Matrix::zeros(n, d);
        let is_last = li + 1 == model.layers.len();
        if is_last {
            last_attention.iter_mut().for_each(|a| *a = 0.0);
        }
        let mut scores = vec![0.0; n];
        for head in 0..heads {
            let cols = head * hd..(head + 1) * hd;
            for i in 0..n {
                let qi = &q.row(i)[cols.clone()];
                let row = &mut scores[..=i];
                for (j, s) in row.iter_mut().enumerate() {
                    let kj = &k.row(j)[cols.clone()];
                    *s = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                }
                softmax_in_place(row)?;
                let out = &mut mixed.row_mut(i)[cols.clone()];
                for (j, &a) in row.iter().enumerate() {
                    let vj = &v.row(j)[cols.clone()];
                    for (o, vv) in out.iter_mut().zip(vj) {
                        *o += a * vv;
                    }
                }
                if is_last && i + 1 == n {
                    for (acc, &a) in last_attention.iter_mut().zip(row.iter()) {
                        *acc += a / heads as f64;
                    }
                }
            }
        }
        let projected = matmul(&mixed, &layer.wo)?;
        add_in_place(&mut x, &projected);

        let normed = rowwise_norm(&x, &layer.ln2_gain, &layer.ln2_bias)?;
        let mut hidden = matmul(&normed, &layer.w1)?;
        for i in 0..n {
            for (hv, b) in hidden.row_mut(i).iter_mut().zip(&layer.b1) {
                *hv = gelu(*hv + b);
            }
        }
        let mut ff = matmul(&hidden, &layer.w2)?;
        for i in 0..n {
            for (fv, b) in ff.row_mut(i).iter_mut().zip(&layer.b2) {
                *fv += b;
            }
        }
        add_in_place(&mut x, &ff);
    }

    let final_states = rowwise_norm(&x, &model.final_gain, &model.final_bias)?;
    let mut probs = matvec(&model.token_embedding, final_states.row(n - 1))?;
    softmax_in_place(&mut probs)?;
    let dist = VocabDistribution::new(probs)?;

    let mut visual_states = Matrix::zeros(d, m);
    for j in 0..m {
        for (r, v) in final_states.row(j).iter().enumerate() {
            visual_states.set(r, j, *v);
        }
    }
    let visual_states = VisualHiddenStates::new(visual_states, model.layers.len())?;

    let labels = label_tokens(markers, prefix);
    let mut summary = AttentionSummary {
        image: 0.0,
        think: 0.0,
        other: 0.0,
        residual: 0.0,
    };
    for (pos, &a) in last_attention.iter().enumerate() {
        if pos < m {
            summary.image += a;
        } else if labels[pos - m] == Segment::Think {
            summary.think += a;
        } else {
            summary.other += a;
        }
    }

    Ok(TinyForward {
        dist,
        visual_states,
        attention: last_attention,
        summary,
    })
}

fn rowwise_norm(x: &Matrix, gain: &[f64], bias: &[f64]) -> Result<Matrix> {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for i in 0..x.rows() {
        out.row_mut(i).copy_from_slice(&layer_norm(x.row(i), gain, bias, LN_EPS)?);
    }
    Ok(out)
}

fn add_in_place(x: &mut Matrix, y: &Matrix) {
    for i in 0..x.rows() {
        for (a, b) in x.row_mut(i).iter_mut().zip(y.row(i)) {
            *a += b;
        }
    }
}

/// One sequence on a [`TinyTransformer`].
#[derive(Debug, Clone)]
pub struct TinySession<'a> {
    model: &'a TinyTransformer,
    visual: Matrix,
    markers: SegmentMarkers,
    eos: Option<TokenId>,
}

impl TinySession<'_> {
    pub fn with_eos(mut self, eos: Option<TokenId>) -> Self {
        self.eos = eos;
        self
    }

    pub fn forward(&self, prompt: &[TokenId], generated: &[TokenId]) -> Result<TinyForward> {
        let prefix: Vec<TokenId> = prompt.iter().chain(generated).copied().collect();
        tiny_forward(self.model, &self.visual, &prefix, self.markers)
    }
}

impl ModelBackend for TinySession<'_> {
    fn vocab_size(&self) -> usize {
        self.model.config.vocab_size
    }

    fn eos_token(&self) -> Option<TokenId> {
        self.eos
    }

    fn prefill(&self) -> Result<VisualPrefill> {
        let out = tiny_forward(self.model, &self.visual, &[], self.markers)?;
        Ok(VisualPrefill::HiddenStates {
            states: out.visual_states,
            head: self.model.token_embedding.clone(),
        })
    }

    fn next_distribution(
        &self,
        prompt: &[TokenId],
        generated: &[TokenId],
    ) -> Result<VocabDistribution> {
        Ok(self.forward(prompt, generated)?.dist)
    }

    fn attention_summary(
        &self,
        prompt: &[TokenId],
        generated: &[TokenId],
    ) -> Result<Option<AttentionSummary>> {
        Ok(Some(self.forward(prompt, generated)?.summary))
    }
}
