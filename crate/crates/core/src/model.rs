//! The target text classifier.
//!
//! Architecture: mean of token embeddings → dense + ReLU → dropout (train
//! only) → dense + ReLU → linear head → softmax. Gradients and exact
//! Hessian-vector products are hand-derived for this fixed architecture;
//! the HVP is a forward-over-reverse (R-operator) pass, so it is exact up to
//! floating-point rounding away from ReLU kinks.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{self, Corpus, TokenSeq, Vocab, PAD_ID};
use crate::error::{Error, Result};
use crate::seed;

pub type GradientVector = Vec<f64>;

/// Representation layers exposed for neighbor search and Gaussian scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    Pooled,
    H1,
    H2,
    Logits,
}

impl Layer {
    pub const ALL: [Layer; 4] = [Layer::Pooled, Layer::H1, Layer::H2, Layer::Logits];

    pub fn name(self) -> &'static str {
        match self {
            Layer::Pooled => "pooled",
            Layer::H1 => "h1",
            Layer::H2 => "h2",
            Layer::Logits => "logits",
        }
    }
}

impl std::str::FromStr for Layer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Layer::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown layer {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dims: [usize; 2],
    pub n_classes: usize,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(vocab_size: usize, n_classes: usize, seed: u64) -> Self {
        ModelConfig {
            vocab_size,
            embed_dim: 32,
            hidden_dims: [32, 32],
            n_classes,
            dropout_rate: 0.5,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.vocab_size,
            self.embed_dim,
            self.hidden_dims[0],
            self.hidden_dims[1],
            self.n_classes,
        ];
        if dims.contains(&0) {
            return Err(Error::invalid("model dimensions must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid("dropout_rate must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        Layout::of(self).total
    }

    pub fn layer_dim(&self, layer: Layer) -> usize {
        match layer {
            Layer::Pooled => self.embed_dim,
            Layer::H1 => self.hidden_dims[0],
            Layer::H2 => self.hidden_dims[1],
            Layer::Logits => self.n_classes,
        }
    }
}

/// Offsets of each parameter block inside the flat vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    d: usize,
    h1: usize,
    h2: usize,
    c: usize,
    e: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    wc: usize,
    bc: usize,
    total: usize,
}

impl Layout {
    fn of(cfg: &ModelConfig) -> Self {
        let (v, d, h1, h2, c) = (
            cfg.vocab_size,
            cfg.embed_dim,
            cfg.hidden_dims[0],
            cfg.hidden_dims[1],
            cfg.n_classes,
        );
        let e = 0;
        let w1 = e + v * d;
        let b1 = w1 + h1 * d;
        let w2 = b1 + h1;
        let b2 = w2 + h2 * h1;
        let wc = b2 + h2;
        let bc = wc + c * h2;
        let total = bc + c;
        Layout {
            d,
            h1,
            h2,
            c,
            e,
            w1,
            b1,
            w2,
            b2,
            wc,
            bc,
            total,
        }
    }
}

/// Borrowed structured view of a flat parameter (or direction) vector.
#[derive(Debug, Clone, Copy)]
pub struct Blocks<'a> {
    pub embedding: &'a [f64],
    pub w1: &'a [f64],
    pub b1: &'a [f64],
    pub w2: &'a [f64],
    pub b2: &'a [f64],
    pub wc: &'a [f64],
    pub bc: &'a [f64],
}

impl<'a> Blocks<'a> {
    fn split(flat: &'a [f64], l: &Layout) -> Self {
        Blocks {
            embedding: &flat[l.e..l.w1],
            w1: &flat[l.w1..l.b1],
            b1: &flat[l.b1..l.w2],
            w2: &flat[l.w2..l.b2],
            b2: &flat[l.b2..l.wc],
            wc: &flat[l.wc..l.bc],
            bc: &flat[l.bc..l.total],
        }
    }

    /// Concatenates the blocks back into one flat vector.
    pub fn to_flat(&self) -> Vec<f64> {
        [self.embedding, self.w1, self.b1, self.w2, self.b2, self.wc, self.bc].concat()
    }
}

struct BlocksMut<'a> {
    embedding: &'a mut [f64],
    w1: &'a mut [f64],
    b1: &'a mut [f64],
    w2: &'a mut [f64],
    b2: &'a mut [f64],
    wc: &'a mut [f64],
    bc: &'a mut [f64],
}

impl<'a> BlocksMut<'a> {
    fn split(flat: &'a mut [f64], l: &Layout) -> Self {
        let (embedding, rest) = flat.split_at_mut(l.w1 - l.e);
        let (w1, rest) = rest.split_at_mut(l.b1 - l.w1);
        let (b1, rest) = rest.split_at_mut(l.w2 - l.b1);
        let (w2, rest) = rest.split_at_mut(l.b2 - l.w2);
        let (b2, rest) = rest.split_at_mut(l.wc - l.b2);
        let (wc, bc) = rest.split_at_mut(l.bc - l.wc);
        BlocksMut {
            embedding,
            w1,
            b1,
            w2,
            b2,
            wc,
            bc,
        }
    }
}

/// Classifier parameters θ held as one flat vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    config: ModelConfig,
    values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerActivations {
    pub pooled: Vec<f64>,
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl LayerActivations {
    pub fn layer(&self, layer: Layer) -> &[f64] {
        match layer {
            Layer::Pooled => &self.pooled,
            Layer::H1 => &self.h1,
            Layer::H2 => &self.h2,
            Layer::Logits => &self.logits,
        }
    }

    /// Argmax of the class probabilities; ties go to the lowest index.
    pub fn predicted(&self) -> usize {
        argmax(&self.probs)
    }
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub enum ForwardMode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

/// An encoded, labeled point ready for the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSeq {
    pub id: usize,
    pub tokens: TokenSeq,
    pub label: usize,
}

pub fn encode_corpus(corpus: &Corpus, vocab: &Vocab, max_len: usize) -> Result<Vec<LabeledSeq>> {
    corpus
        .examples
        .iter()
        .map(|ex| {
            Ok(LabeledSeq {
                id: ex.id,
                tokens: corpus::encode(&ex.text, vocab, max_len)?,
                label: ex.label,
            })
        })
        .collect()
}

struct Trace {
    pooled: Vec<f64>,
    a1: Vec<f64>,
    h1: Vec<f64>,
    /// Per-unit dropout multiplier (0 or 1/(1-rate)); `None` in eval mode.
    keep: Option<Vec<f64>>,
    h1d: Vec<f64>,
    a2: Vec<f64>,
    h2: Vec<f64>,
    logits: Vec<f64>,
    probs: Vec<f64>,
}

fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let n_in = x.len();
    b.iter()
        .enumerate()
        .map(|(j, &bj)| {
            let row = &w[j * n_in..(j + 1) * n_in];
            bj + dot(row, x)
        })
        .collect()
}

/// `wᵀ y` for a row-major `w` of shape `[y.len() × n_in]`, accumulated into `out`.
fn add_matvec_t(w: &[f64], y: &[f64], out: &mut [f64]) {
    let n_in = out.len();
    for (j, &yj) in y.iter().enumerate() {
        if yj == 0.0 {
            continue;
        }
        let row = &w[j * n_in..(j + 1) * n_in];
        for (o, &r) in out.iter_mut().zip(row) {
            *o += r * yj;
        }
    }
}

/// `w += scale · y xᵀ`.
fn add_outer(w: &mut [f64], y: &[f64], x: &[f64], scale: f64) {
    let n_in = x.len();
    for (j, &yj) in y.iter().enumerate() {
        let s = scale * yj;
        if s == 0.0 {
            continue;
        }
        let row = &mut w[j * n_in..(j + 1) * n_in];
        for (r, &xi) in row.iter_mut().zip(x) {
            *r += s * xi;
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&x| (x - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / s).collect()
}

fn log_softmax_at(z: &[f64], k: usize) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
    z[k] - lse
}

fn relu(a: &[f64]) -> Vec<f64> {
    a.iter().map(|&x| x.max(0.0)).collect()
}

fn relu_gate(a: &[f64], x: &mut [f64]) {
    for (xi, &ai) in x.iter_mut().zip(a) {
        if ai <= 0.0 {
            *xi = 0.0;
        }
    }
}

impl ModelParams {
    /// Deterministic initialization: embeddings U(−0.1, 0.1) with a zero pad
    /// row, Kaiming-uniform dense weights, zero biases.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::of(&config);
        let mut values = vec![0.0; layout.total];
        let mut rng = seed::rng(config.seed, "init", 0);
        {
            let b = BlocksMut::split(&mut values, &layout);
            for x in b.embedding.iter_mut() {
                *x = rng.random_range(-0.1..0.1);
            }
            b.embedding[PAD_ID * layout.d..(PAD_ID + 1) * layout.d].fill(0.0);
            for (w, fan_in) in [(b.w1, layout.d), (b.w2, layout.h1), (b.wc, layout.h2)] {
                let bound = (6.0 / fan_in as f64).sqrt();
                for x in w.iter_mut() {
                    *x = rng.random_range(-bound..bound);
                }
            }
        }
        Ok(ModelParams { config, values })
    }

    pub fn from_flat(config: ModelConfig, values: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if values.len() != config.n_params() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                config.n_params(),
                values.len()
            )));
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::numerical("non-finite parameter"));
        }
        Ok(ModelParams { config, values })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn flat(&self) -> &[f64] {
        &self.values
    }

    pub fn n_params(&self) -> usize {
        self.values.len()
    }

    pub fn blocks(&self) -> Blocks<'_> {
        Blocks::split(&self.values, &self.layout())
    }

    /// Structured view of any flat vector with this model's layout.
    pub fn view<'a>(&self, flat: &'a [f64]) -> Blocks<'a> {
        Blocks::split(flat, &self.layout())
    }

    /// Offset of an embedding row in the flat vector.
    pub fn embedding_row_range(&self, token: usize) -> std::ops::Range<usize> {
        let d = self.config.embed_dim;
        token * d..(token + 1) * d
    }

    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::from_flat(self.config.clone(), values)
    }

    fn layout(&self) -> Layout {
        Layout::of(&self.config)
    }

    fn check_tokens(&self, tokens: &TokenSeq) -> Result<()> {
        if tokens.true_len() == 0 {
            return Err(Error::invalid("token sequence has no tokens"));
        }
        if let Some(&bad) = tokens.tokens().iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(Error::invalid(format!(
                "token id {bad} outside vocabulary of {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    fn trace(&self, tokens: &TokenSeq, mode: ForwardMode<'_>) -> Result<Trace> {
        self.check_tokens(tokens)?;
        let l = self.layout();
        let b = self.blocks();
        let n = tokens.true_len() as f64;
        let mut pooled = vec![0.0; l.d];
        for &t in tokens.tokens() {
            let row = &b.embedding[t * l.d..(t + 1) * l.d];
            for (p, &r) in pooled.iter_mut().zip(row) {
                *p += r;
            }
        }
        for p in pooled.iter_mut() {
            *p /= n;
        }
        let a1 = affine(b.w1, b.b1, &pooled);
        let h1 = relu(&a1);
        let (keep, h1d) = match mode {
            ForwardMode::Eval => (None, h1.clone()),
            ForwardMode::Train(rng) => {
                let rate = self.config.dropout_rate;
                let scale = 1.0 / (1.0 - rate);
                let keep: Vec<f64> = (0..l.h1)
                    .map(|_| if rng.random::<f64>() < rate { 0.0 } else { scale })
                    .collect();
                let h1d = h1.iter().zip(&keep).map(|(h, k)| h * k).collect();
                (Some(keep), h1d)
            }
        };
        let a2 = affine(b.w2, b.b2, &h1d);
        let h2 = relu(&a2);
        let logits = affine(b.wc, b.bc, &h2);
        let probs = softmax(&logits);
        Ok(Trace {
            pooled,
            a1,
            h1,
            keep,
            h1d,
            a2,
            h2,
            logits,
            probs,
        })
    }

    pub fn forward(&self, tokens: &TokenSeq, mode: ForwardMode<'_>) -> Result<LayerActivations> {
        let t = self.trace(tokens, mode)?;
        Ok(LayerActivations {
            pooled: t.pooled,
            h1: t.h1,
            h2: t.h2,
            logits: t.logits,
            probs: t.probs,
        })
    }

    pub fn eval(&self, tokens: &TokenSeq) -> Result<LayerActivations> {
        self.forward(tokens, ForwardMode::Eval)
    }

    /// Cross-entropy in eval mode.
    pub fn loss(&self, z: &LabeledSeq) -> Result<f64> {
        self.check_label(z.label)?;
        let t = self.trace(&z.tokens, ForwardMode::Eval)?;
        Ok(-log_softmax_at(&t.logits, z.label))
    }

    fn check_label(&self, label: usize) -> Result<()> {
        if label >= self.config.n_classes {
            return Err(Error::invalid(format!("label {label} >= {}", self.config.n_classes)));
        }
        Ok(())
    }

    /// Reverse pass accumulating `scale · ∇θ loss` into `out`.
    fn backward_into(&self, tr: &Trace, tokens: &TokenSeq, label: usize, scale: f64, out: &mut [f64]) {
        let l = self.layout();
        let b = self.blocks();
        let g = BlocksMut::split(out, &l);

        let mut dz = tr.probs.clone();
        dz[label] -= 1.0;
        add_outer(g.wc, &dz, &tr.h2, scale);
        for (o, &d) in g.bc.iter_mut().zip(&dz) {
            *o += scale * d;
        }
        let mut da2 = vec![0.0; l.h2];
        add_matvec_t(b.wc, &dz, &mut da2);
        relu_gate(&tr.a2, &mut da2);
        add_outer(g.w2, &da2, &tr.h1d, scale);
        for (o, &d) in g.b2.iter_mut().zip(&da2) {
            *o += scale * d;
        }
        let mut da1 = vec![0.0; l.h1];
        add_matvec_t(b.w2, &da2, &mut da1);
        if let Some(keep) = &tr.keep {
            for (d, k) in da1.iter_mut().zip(keep) {
                *d *= k;
            }
        }
        relu_gate(&tr.a1, &mut da1);
        add_outer(g.w1, &da1, &tr.pooled, scale);
        for (o, &d) in g.b1.iter_mut().zip(&da1) {
            *o += scale * d;
        }
        let mut dp = vec![0.0; l.d];
        add_matvec_t(b.w1, &da1, &mut dp);
        let s = scale / tokens.true_len() as f64;
        for &t in tokens.tokens() {
            let row = &mut g.embedding[t * l.d..(t + 1) * l.d];
            for (r, &d) in row.iter_mut().zip(&dp) {
                *r += s * d;
            }
        }
    }

    /// Exact gradient of the eval-mode loss.
    pub fn grad(&self, z: &LabeledSeq) -> Result<GradientVector> {
        self.check_label(z.label)?;
        let tr = self.trace(&z.tokens, ForwardMode::Eval)?;
        let mut out = vec![0.0; self.n_params()];
        self.backward_into(&tr, &z.tokens, z.label, 1.0, &mut out);
        Ok(out)
    }

    /// Accumulates `scale · H_z v` for one point (eval mode) into `out`.
    fn hvp_into(&self, z: &LabeledSeq, v: &[f64], scale: f64, out: &mut [f64]) -> Result<()> {
        self.check_label(z.label)?;
        let tr = self.trace(&z.tokens, ForwardMode::Eval)?;
        let l = self.layout();
        let b = self.blocks();
        let vb = Blocks::split(v, &l);
        let o = BlocksMut::split(out, &l);
        let n = z.tokens.true_len() as f64;

        // Forward R-pass.
        let mut r_p = vec![0.0; l.d];
        for &t in z.tokens.tokens() {
            for (rp, &x) in r_p.iter_mut().zip(&vb.embedding[t * l.d..(t + 1) * l.d]) {
                *rp += x;
            }
        }
        for x in r_p.iter_mut() {
            *x /= n;
        }
        let mut r_a1 = affine(vb.w1, vb.b1, &tr.pooled);
        for (r, x) in r_a1.iter_mut().zip(affine(b.w1, &vec![0.0; l.h1], &r_p)) {
            *r += x;
        }
        let mut r_h1 = r_a1;
        relu_gate(&tr.a1, &mut r_h1);
        let mut r_a2 = affine(vb.w2, vb.b2, &tr.h1);
        for (r, x) in r_a2.iter_mut().zip(affine(b.w2, &vec![0.0; l.h2], &r_h1)) {
            *r += x;
        }
        let mut r_h2 = r_a2;
        relu_gate(&tr.a2, &mut r_h2);
        let mut r_z = affine(vb.wc, vb.bc, &tr.h2);
        for (r, x) in r_z.iter_mut().zip(affine(b.wc, &vec![0.0; l.c], &r_h2)) {
            *r += x;
        }
        let p = &tr.probs;
        let pz = dot(p, &r_z);
        let r_dz: Vec<f64> = p.iter().zip(&r_z).map(|(pi, rz)| pi * (rz - pz)).collect();

        // Reverse R-pass.
        let mut dz = p.clone();
        dz[z.label] -= 1.0;
        add_outer(o.wc, &r_dz, &tr.h2, scale);
        add_outer(o.wc, &dz, &r_h2, scale);
        for (x, &d) in o.bc.iter_mut().zip(&r_dz) {
            *x += scale * d;
        }
        let mut da2 = vec![0.0; l.h2];
        add_matvec_t(b.wc, &dz, &mut da2);
        relu_gate(&tr.a2, &mut da2);
        let mut r_da2 = vec![0.0; l.h2];
        add_matvec_t(vb.wc, &dz, &mut r_da2);
        add_matvec_t(b.wc, &r_dz, &mut r_da2);
        relu_gate(&tr.a2, &mut r_da2);
        add_outer(o.w2, &r_da2, &tr.h1, scale);
        add_outer(o.w2, &da2, &r_h1, scale);
        for (x, &d) in o.b2.iter_mut().zip(&r_da2) {
            *x += scale * d;
        }
        let mut da1 = vec![0.0; l.h1];
        add_matvec_t(b.w2, &da2, &mut da1);
        relu_gate(&tr.a1, &mut da1);
        let mut r_da1 = vec![0.0; l.h1];
        add_matvec_t(vb.w2, &da2, &mut r_da1);
        add_matvec_t(b.w2, &r_da2, &mut r_da1);
        relu_gate(&tr.a1, &mut r_da1);
        add_outer(o.w1, &r_da1, &tr.pooled, scale);
        add_outer(o.w1, &da1, &r_p, scale);
        for (x, &d) in o.b1.iter_mut().zip(&r_da1) {
            *x += scale * d;
        }
        let mut r_dp = vec![0.0; l.d];
        add_matvec_t(vb.w1, &da1, &mut r_dp);
        add_matvec_t(b.w1, &r_da1, &mut r_dp);
        let s = scale / n;
        for &t in z.tokens.tokens() {
            let row = &mut o.embedding[t * l.d..(t + 1) * l.d];
            for (r, &d) in row.iter_mut().zip(&r_dp) {
                *r += s * d;
            }
        }
        Ok(())
    }

    /// `H v` for the mean eval-mode loss over `batch`.
    pub fn hvp(&self, batch: &[&LabeledSeq], v: &[f64]) -> Result<GradientVector> {
        if batch.is_empty() {
            return Err(Error::invalid("hvp needs a non-empty batch"));
        }
        if v.len() != self.n_params() {
            return Err(Error::invalid("direction has the wrong dimension"));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::numerical("non-finite direction in hvp"));
        }
        let mut out = vec![0.0; self.n_params()];
        let scale = 1.0 / batch.len() as f64;
        for z in batch {
            self.hvp_into(z, v, scale, &mut out)?;
        }
        Ok(out)
    }

    pub fn accuracy(&self, data: &[LabeledSeq]) -> Result<f64> {
        if data.is_empty() {
            return Ok(0.0);
        }
        let mut correct = 0usize;
        for z in data {
            if self.eval(&z.tokens)?.predicted() == z.label {
                correct += 1;
            }
        }
        Ok(correct as f64 / data.len() as f64)
    }
}

/// Twice-differentiable per-point objectives: what influence estimation needs.
pub trait TwiceDifferentiable: Sync {
    type Point: Sync;

    fn n_params(&self) -> usize;
    fn point_loss(&self, z: &Self::Point) -> Result<f64>;
    fn point_grad(&self, z: &Self::Point) -> Result<GradientVector>;
    /// Hessian of the batch-mean objective applied to `v`.
    fn batch_hvp(&self, batch: &[&Self::Point], v: &[f64]) -> Result<GradientVector>;
}

impl TwiceDifferentiable for ModelParams {
    type Point = LabeledSeq;

    fn n_params(&self) -> usize {
        self.values.len()
    }

    fn point_loss(&self, z: &LabeledSeq) -> Result<f64> {
        self.loss(z)
    }

    fn point_grad(&self, z: &LabeledSeq) -> Result<GradientVector> {
        self.grad(z)
    }

    fn batch_hvp(&self, batch: &[&LabeledSeq], v: &[f64]) -> Result<GradientVector> {
        self.hvp(batch, v)
    }
}

/// The classifier with everything below the head frozen: the objective is a
/// convex, L2-regularized multinomial logistic regression over the fixed
/// penultimate features, parameterized by `[Wc, bc]`.
#[derive(Debug, Clone)]
pub struct FrozenHead {
    body: ModelParams,
    head: Vec<f64>,
    /// Coefficient of `l2/2 ‖head‖²` added to the mean loss.
    pub l2: f64,
}

impl FrozenHead {
    pub fn new(body: &ModelParams, l2: f64) -> Self {
        let b = body.blocks();
        let head = [b.wc, b.bc].concat();
        FrozenHead {
            body: body.clone(),
            head,
            l2,
        }
    }

    pub fn head(&self) -> &[f64] {
        &self.head
    }

    pub fn with_head(&self, head: Vec<f64>) -> Self {
        assert_eq!(head.len(), self.head.len());
        FrozenHead {
            body: self.body.clone(),
            head,
            l2: self.l2,
        }
    }

    pub fn features(&self, z: &LabeledSeq) -> Result<Vec<f64>> {
        Ok(self.body.eval(&z.tokens)?.h2)
    }

    fn logits(&self, h2: &[f64]) -> Vec<f64> {
        let l = self.body.layout();
        let (wc, bc) = self.head.split_at(l.c * l.h2);
        affine(wc, bc, h2)
    }

    /// Mean loss plus the L2 penalty.
    pub fn objective(&self, data: &[LabeledSeq]) -> Result<f64> {
        let mut s = 0.0;
        for z in data {
            s += self.point_loss(z)?;
        }
        Ok(s / data.len() as f64 + 0.5 * self.l2 * dot(&self.head, &self.head))
    }

    /// Gradient of `objective`.
    pub fn objective_grad(&self, data: &[LabeledSeq]) -> Result<Vec<f64>> {
        let mut g: Vec<f64> = self.head.iter().map(|w| self.l2 * w).collect();
        let inv = 1.0 / data.len() as f64;
        for z in data {
            for (gi, pi) in g.iter_mut().zip(self.point_grad(z)?) {
                *gi += inv * pi;
            }
        }
        Ok(g)
    }
}

impl TwiceDifferentiable for FrozenHead {
    type Point = LabeledSeq;

    fn n_params(&self) -> usize {
        self.head.len()
    }

    fn point_loss(&self, z: &LabeledSeq) -> Result<f64> {
        let h2 = self.features(z)?;
        Ok(-log_softmax_at(&self.logits(&h2), z.label))
    }

    fn point_grad(&self, z: &LabeledSeq) -> Result<GradientVector> {
        let l = self.body.layout();
        let h2 = self.features(z)?;
        let mut dz = softmax(&self.logits(&h2));
        dz[z.label] -= 1.0;
        let mut g = vec![0.0; self.head.len()];
        let (gw, gb) = g.split_at_mut(l.c * l.h2);
        add_outer(gw, &dz, &h2, 1.0);
        gb.copy_from_slice(&dz);
        Ok(g)
    }

    fn batch_hvp(&self, batch: &[&LabeledSeq], v: &[f64]) -> Result<GradientVector> {
        if batch.is_empty() {
            return Err(Error::invalid("hvp needs a non-empty batch"));
        }
        let l = self.body.layout();
        let (vw, vb) = v.split_at(l.c * l.h2);
        let mut out: Vec<f64> = v.iter().map(|x| self.l2 * x).collect();
        let scale = 1.0 / batch.len() as f64;
        for z in batch {
            let h2 = self.features(z)?;
            let p = softmax(&self.logits(&h2));
            let r_z = affine(vw, vb, &h2);
            let pz = dot(&p, &r_z);
            let r_dz: Vec<f64> = p.iter().zip(&r_z).map(|(pi, rz)| pi * (rz - pz)).collect();
            let (ow, ob) = out.split_at_mut(l.c * l.h2);
            add_outer(ow, &r_dz, &h2, scale);
            for (o, d) in ob.iter_mut().zip(&r_dz) {
                *o += scale * d;
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 3,
            learning_rate: 5e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            batch_size: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean train-mode minibatch loss over the epoch.
    pub train_loss: f64,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

/// AdamW minibatch training on cross-entropy with dropout active.
pub fn train(
    params: &ModelParams,
    train_set: &[LabeledSeq],
    val_set: &[LabeledSeq],
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainHistory)> {
    if train_set.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if cfg.epochs == 0 || cfg.learning_rate <= 0.0 || cfg.batch_size == 0 {
        return Err(Error::invalid("epochs, learning_rate and batch_size must be positive"));
    }
    let mut model = params.clone();
    let p = model.n_params();
    let mut m = vec![0.0; p];
    let mut v = vec![0.0; p];
    let mut step = 0i32;
    let mut dropout_rng = seed::rng(cfg.seed, "dropout", 0);
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut seed::rng(cfg.seed, "shuffle", epoch as u64));
        let mut loss_sum = 0.0;
        let mut n_batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let mut grad = vec![0.0; p];
            let scale = 1.0 / chunk.len() as f64;
            let mut batch_loss = 0.0;
            for &i in chunk {
                let z = &train_set[i];
                model.check_label(z.label)?;
                let tr = model.trace(&z.tokens, ForwardMode::Train(&mut dropout_rng))?;
                batch_loss += -log_softmax_at(&tr.logits, z.label) * scale;
                model.backward_into(&tr, &z.tokens, z.label, scale, &mut grad);
            }
            if !batch_loss.is_finite() {
                return Err(Error::numerical(format!(
                    "non-finite training loss at epoch {} step {step}",
                    epoch + 1
                )));
            }
            loss_sum += batch_loss;
            n_batches += 1;
            step += 1;
            let bc1 = 1.0 - cfg.beta1.powi(step);
            let bc2 = 1.0 - cfg.beta2.powi(step);
            for i in 0..p {
                let g = grad[i];
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                let w = &mut model.values[i];
                *w -= cfg.learning_rate * (mhat / (vhat.sqrt() + cfg.eps) + cfg.weight_decay * *w);
            }
        }
        let val_accuracy = if val_set.is_empty() {
            None
        } else {
            Some(model.accuracy(val_set)?)
        };
        let train_loss = loss_sum / n_batches as f64;
        log::debug!("epoch {} loss {train_loss:.4} val {val_accuracy:?}", epoch + 1);
        history.epochs.push(EpochStats {
            epoch: epoch + 1,
            train_loss,
            val_accuracy,
        });
    }
    Ok((model, history))
}

/// Parameters bundled with the vocabulary and sequence length they expect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetModel {
    pub params: ModelParams,
    pub vocab: Vocab,
    pub max_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub confidence: f64,
    pub activations: LayerActivations,
}

impl TargetModel {
    pub fn encode(&self, text: &str) -> Result<TokenSeq> {
        corpus::encode(text, &self.vocab, self.max_len)
    }

    pub fn encode_labeled(&self, id: usize, text: &str, label: usize) -> Result<LabeledSeq> {
        Ok(LabeledSeq {
            id,
            tokens: self.encode(text)?,
            label,
        })
    }

    pub fn encode_corpus(&self, corpus: &Corpus) -> Result<Vec<LabeledSeq>> {
        encode_corpus(corpus, &self.vocab, self.max_len)
    }

    pub fn activations(&self, text: &str) -> Result<LayerActivations> {
        self.params.eval(&self.encode(text)?)
    }

    pub fn predict(&self, text: &str) -> Result<Prediction> {
        let activations = self.activations(text)?;
        let class = activations.predicted();
        Ok(Prediction {
            class,
            confidence: activations.probs[class],
            activations,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string(self)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: TargetModel = serde_json::from_str(&raw)?;
        let params = ModelParams::from_flat(model.params.config.clone(), model.params.values)?;
        if params.config.vocab_size != model.vocab.len() {
            return Err(Error::invalid("checkpoint vocabulary size mismatch"));
        }
        Ok(TargetModel { params, ..model })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Vocab;

    fn mini(seed: u64) -> ModelParams {
        let cfg = ModelConfig {
            vocab_size: 20,
            embed_dim: 4,
            hidden_dims: [4, 4],
            n_classes: 3,
            dropout_rate: 0.5,
            seed,
        };
        ModelParams::init(cfg).unwrap()
    }

    fn seq(ids: &[usize], max_len: usize) -> TokenSeq {
        let mut v = ids.to_vec();
        v.resize(max_len, 0);
        TokenSeq::new(v, ids.len()).unwrap()
    }

    #[test]
    fn init_is_deterministic_with_zero_pad_row() {
        let a = mini(3);
        assert_eq!(a, mini(3));
        assert_ne!(a, mini(4));
        assert!(a.blocks().embedding[..4].iter().all(|&x| x == 0.0));
        assert_eq!(a.n_params(), 20 * 4 + 4 * 4 + 4 + 4 * 4 + 4 + 4 * 3 + 3);
        assert!(a.blocks().b1.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn flat_view_round_trips() {
        let a = mini(1);
        assert_eq!(a.blocks().to_flat(), a.flat());
    }

    #[test]
    fn zero_weights_give_bias_logits() {
        let a = mini(1);
        let zero = a.with_values(vec![0.0; a.n_params()]).unwrap();
        let act = zero.eval(&seq(&[2, 3], 4)).unwrap();
        assert_eq!(act.logits, vec![0.0; 3]);
        for p in &act.probs {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn eval_deterministic_and_normalized() {
        let a = mini(2);
        let s = seq(&[5, 6, 7], 6);
        let x = a.eval(&s).unwrap();
        assert_eq!(x, a.eval(&s).unwrap());
        assert!((x.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn forward_rejects_out_of_vocab() {
        let a = mini(2);
        assert!(a.eval(&seq(&[25], 2)).is_err());
    }

    #[test]
    fn loss_of_uniform_is_ln_c() {
        let a = mini(1);
        let zero = a.with_values(vec![0.0; a.n_params()]).unwrap();
        let z = LabeledSeq {
            id: 0,
            tokens: seq(&[2], 2),
            label: 1,
        };
        assert!((zero.loss(&z).unwrap() - 3f64.ln()).abs() < 1e-12);
        assert!(a.loss(&z).unwrap() >= 0.0);
    }

    #[test]
    fn pad_row_gradient_is_zero() {
        let a = mini(5);
        let z = LabeledSeq {
            id: 0,
            tokens: seq(&[2, 9], 5),
            label: 0,
        };
        let g = a.grad(&z).unwrap();
        assert!(g[a.embedding_row_range(PAD_ID)].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn hvp_of_zero_is_zero() {
        let a = mini(5);
        let z = LabeledSeq {
            id: 0,
            tokens: seq(&[2, 9], 5),
            label: 0,
        };
        let h = a.hvp(&[&z], &vec![0.0; a.n_params()]).unwrap();
        assert!(h.iter().all(|&x| x == 0.0));
        assert!(a.hvp(&[], &vec![0.0; a.n_params()]).is_err());
    }

    #[test]
    fn predict_tie_goes_to_lowest_class() {
        let vocab = Vocab::from_tokens(["a".to_string()]).unwrap();
        let cfg = ModelConfig {
            vocab_size: vocab.len(),
            embed_dim: 2,
            hidden_dims: [2, 2],
            n_classes: 2,
            dropout_rate: 0.0,
            seed: 0,
        };
        let params = ModelParams::from_flat(cfg.clone(), vec![0.0; cfg.n_params()]).unwrap();
        let m = TargetModel {
            params,
            vocab,
            max_len: 4,
        };
        let p = m.predict("a").unwrap();
        assert_eq!(p.class, 0);
        assert_eq!(p.confidence, 0.5);
        assert_eq!(p.activations, m.params.eval(&m.encode("a").unwrap()).unwrap());
        assert_eq!(argmax(&[0.3, 0.7]), 1);
        assert_eq!(argmax(&[0.7, 0.3]), 0);
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let vocab = Vocab::from_tokens((0..18).map(|i| format!("w{i}"))).unwrap();
        let m = TargetModel {
            params: mini(9),
            vocab,
            max_len: 8,
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        m.save(&p).unwrap();
        let back = TargetModel::load(&p).unwrap();
        assert_eq!(back, m);
        for (a, b) in back.params.flat().iter().zip(m.params.flat()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn frozen_head_grad_matches_finite_differences() {
        let a = mini(11);
        let fh = FrozenHead::new(&a, 0.0);
        let z = LabeledSeq {
            id: 0,
            tokens: seq(&[3, 4, 5], 4),
            label: 2,
        };
        let g = fh.point_grad(&z).unwrap();
        let h = 1e-6;
        for i in 0..fh.n_params() {
            let mut up = fh.head().to_vec();
            up[i] += h;
            let mut dn = fh.head().to_vec();
            dn[i] -= h;
            let fd = (fh.with_head(up).point_loss(&z).unwrap() - fh.with_head(dn).point_loss(&z).unwrap()) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-7, "{i}: {fd} vs {}", g[i]);
        }
    }
}
