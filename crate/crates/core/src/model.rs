//! Decoder-only transformer: pre-norm blocks of grouped-query attention and
//! a gated (or plain) MLP, rotary sequence positions, no biases, untied
//! output projection.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::beeembed::{BeeEmbeddingParams, EmbedMode, EmbedVars, DEFAULT_ROPE_BASE};
use crate::error::{Error, Result};
use crate::numcore::{AttentionShape, Graph, Real, Tensor, Var};
use crate::tokenspell::{SpellingTable, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    SwiGlu,
    Gelu,
    Relu,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::SwiGlu => "swiglu",
            Activation::Gelu => "gelu",
            Activation::Relu => "relu",
        }
    }

    pub fn gated(self) -> bool {
        self == Activation::SwiGlu
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "swiglu" => Ok(Activation::SwiGlu),
            "gelu" => Ok(Activation::Gelu),
            "relu" => Ok(Activation::Relu),
            _ => Err(Error::Config(format!("unknown activation `{}` (expected swiglu, gelu, relu)", s))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub n_kv_heads: usize,
    pub head_dim: usize,
    pub d_model: usize,
    pub ffn_hidden: usize,
    pub vocab_size: usize,
    pub seq_len: usize,
    pub rope_base: f64,
    pub activation: Activation,
}

impl ModelConfig {
    /// SwiGLU config with `head_dim = d_model / n_heads`, a quarter as many
    /// KV heads (at least one) and the default MLP width.
    pub fn new(d_model: usize, n_layers: usize, n_heads: usize, vocab_size: usize, seq_len: usize) -> Self {
        let n_heads = n_heads.max(1);
        Self {
            n_layers,
            n_heads,
            n_kv_heads: (n_heads / 4).max(1),
            head_dim: d_model / n_heads,
            d_model,
            ffn_hidden: Self::default_ffn(d_model, Activation::SwiGlu),
            vocab_size,
            seq_len,
            rope_base: DEFAULT_ROPE_BASE,
            activation: Activation::SwiGlu,
        }
    }

    /// `8d/3` rounded up to a multiple of 8 for SwiGLU, `4d` otherwise.
    pub fn default_ffn(d_model: usize, activation: Activation) -> usize {
        if activation.gated() {
            let h = (8 * d_model + 1) / 3; // round(8d/3)
            h.div_ceil(8) * 8
        } else {
            4 * d_model
        }
    }

    /// Switches the MLP type and resets its width to the matching default.
    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self.ffn_hidden = Self::default_ffn(self.d_model, activation);
        self
    }

    /// The 816m architecture: 25 layers, 12 heads of 128, width 1536, MLP
    /// width 4096, two KV heads.
    pub fn chinchilla_816m(vocab_size: usize) -> Self {
        Self {
            n_layers: 25,
            n_heads: 12,
            n_kv_heads: 2,
            head_dim: 128,
            d_model: 1536,
            ffn_hidden: 4096,
            vocab_size,
            seq_len: 512,
            rope_base: DEFAULT_ROPE_BASE,
            activation: Activation::SwiGlu,
        }
    }

    pub fn attn_width(&self) -> usize {
        self.n_heads * self.head_dim
    }

    pub fn kv_width(&self) -> usize {
        self.n_kv_heads * self.head_dim
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("n_kv_heads", self.n_kv_heads),
            ("head_dim", self.head_dim),
            ("d_model", self.d_model),
            ("ffn_hidden", self.ffn_hidden),
            ("vocab_size", self.vocab_size),
            ("seq_len", self.seq_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{} must be positive", name)));
            }
        }
        if !self.n_heads.is_multiple_of(self.n_kv_heads) {
            return Err(Error::Config(format!(
                "n_heads {} is not divisible by n_kv_heads {}",
                self.n_heads, self.n_kv_heads
            )));
        }
        if !self.head_dim.is_multiple_of(2) {
            return Err(Error::Config(format!("head_dim must be even, got {}", self.head_dim)));
        }
        if !(self.rope_base > 0.0 && self.rope_base.is_finite()) {
            return Err(Error::Config(format!("rope_base must be positive, got {}", self.rope_base)));
        }
        Ok(())
    }
}

/// Parameter totals for one config and embedding mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    /// Everything the mode trains.
    pub total: usize,
    /// Blocks, norms and output projection; no input tables.
    pub non_embedding: usize,
}

pub fn count_params(cfg: &ModelConfig, mode: EmbedMode) -> ParamCount {
    let d = cfg.d_model;
    let mlp_mats = if cfg.activation.gated() { 3 } else { 2 };
    let layer = 2 * d
        + d * cfg.attn_width()
        + 2 * d * cfg.kv_width()
        + cfg.attn_width() * d
        + mlp_mats * d * cfg.ffn_hidden;
    let non_embedding = cfg.n_layers * layer + d + d * cfg.vocab_size;
    let token = if mode == EmbedMode::NoTokenEmb { 0 } else { cfg.vocab_size * d };
    let bytes = if mode.uses_spelling() { 256 * d } else { 0 };
    let bias = if mode == EmbedMode::BiasOnly { d } else { 0 };
    ParamCount {
        total: non_embedding + token + bytes + bias,
        non_embedding,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights<T> {
    pub attn_norm: Tensor<T>,
    pub wq: Tensor<T>,
    pub wk: Tensor<T>,
    pub wv: Tensor<T>,
    pub wo: Tensor<T>,
    pub mlp_norm: Tensor<T>,
    pub w_up: Tensor<T>,
    /// Present for gated activations only.
    pub w_gate: Option<Tensor<T>>,
    pub w_down: Tensor<T>,
}

/// All model parameters. [`Weights::tensors`] fixes the canonical order used
/// by optimizers, gradient checks and checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights<T> {
    pub embed: BeeEmbeddingParams<T>,
    pub layers: Vec<LayerWeights<T>>,
    pub final_norm: Tensor<T>,
    /// `[d_model, vocab]`
    pub w_out: Tensor<T>,
}

/// Shape of every weight tensor, in canonical order.
pub fn tensor_specs(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let d = cfg.d_model;
    let mut out = Vec::new();
    out.push((String::from("embed.token_table"), alloc::vec![cfg.vocab_size, d]));
    out.push((String::from("embed.byte_table"), alloc::vec![256, d]));
    out.push((String::from("embed.shared_bias"), alloc::vec![d]));
    for i in 0..cfg.n_layers {
        let mut push = |name: &str, shape: Vec<usize>| out.push((format!("layers.{}.{}", i, name), shape));
        push("attn_norm", alloc::vec![d]);
        push("wq", alloc::vec![d, cfg.attn_width()]);
        push("wk", alloc::vec![d, cfg.kv_width()]);
        push("wv", alloc::vec![d, cfg.kv_width()]);
        push("wo", alloc::vec![cfg.attn_width(), d]);
        push("mlp_norm", alloc::vec![d]);
        push("w_up", alloc::vec![d, cfg.ffn_hidden]);
        if cfg.activation.gated() {
            push("w_gate", alloc::vec![d, cfg.ffn_hidden]);
        }
        push("w_down", alloc::vec![cfg.ffn_hidden, d]);
    }
    out.push((String::from("final_norm"), alloc::vec![d]));
    out.push((String::from("output"), alloc::vec![d, cfg.vocab_size]));
    out
}

impl<T: Real> Weights<T> {
    /// Reassembles weights from tensors in canonical order.
    pub fn from_tensors(
        cfg: &ModelConfig,
        tensors: Vec<Tensor<T>>,
        alpha: f64,
        mode: EmbedMode,
    ) -> Result<Self> {
        let specs = tensor_specs(cfg);
        if specs.len() != tensors.len() {
            return Err(Error::Config(format!("expected {} tensors, got {}", specs.len(), tensors.len())));
        }
        for ((name, shape), t) in specs.iter().zip(&tensors) {
            if t.shape() != shape.as_slice() {
                return Err(Error::Config(format!("{} has shape {:?}, expected {:?}", name, t.shape(), shape)));
            }
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("length checked");
        let embed = BeeEmbeddingParams {
            token_table: next(),
            byte_table: next(),
            shared_bias: next(),
            alpha,
            rope_base: cfg.rope_base,
            mode,
        };
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for _ in 0..cfg.n_layers {
            layers.push(LayerWeights {
                attn_norm: next(),
                wq: next(),
                wk: next(),
                wv: next(),
                wo: next(),
                mlp_norm: next(),
                w_up: next(),
                w_gate: if cfg.activation.gated() { Some(next()) } else { None },
                w_down: next(),
            });
        }
        let final_norm = next();
        let w_out = next();
        Ok(Self { embed, layers, final_norm, w_out })
    }

    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let e = &self.embed;
        let mut out = alloc::vec![&e.token_table, &e.byte_table, &e.shared_bias];
        for l in &self.layers {
            out.extend([&l.attn_norm, &l.wq, &l.wk, &l.wv, &l.wo, &l.mlp_norm, &l.w_up]);
            out.extend(l.w_gate.as_ref());
            out.push(&l.w_down);
        }
        out.push(&self.final_norm);
        out.push(&self.w_out);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let e = &mut self.embed;
        let mut out = alloc::vec![&mut e.token_table, &mut e.byte_table, &mut e.shared_bias];
        for l in &mut self.layers {
            out.extend([
                &mut l.attn_norm,
                &mut l.wq,
                &mut l.wk,
                &mut l.wv,
                &mut l.wo,
                &mut l.mlp_norm,
                &mut l.w_up,
            ]);
            out.extend(l.w_gate.as_mut());
            out.push(&mut l.w_down);
        }
        out.push(&mut self.final_norm);
        out.push(&mut self.w_out);
        out
    }

    pub fn cast<U: Real>(&self) -> Weights<U> {
        let layer = |l: &LayerWeights<T>| LayerWeights {
            attn_norm: l.attn_norm.cast(),
            wq: l.wq.cast(),
            wk: l.wk.cast(),
            wv: l.wv.cast(),
            wo: l.wo.cast(),
            mlp_norm: l.mlp_norm.cast(),
            w_up: l.w_up.cast(),
            w_gate: l.w_gate.as_ref().map(|t| t.cast()),
            w_down: l.w_down.cast(),
        };
        Weights {
            embed: BeeEmbeddingParams {
                token_table: self.embed.token_table.cast(),
                byte_table: self.embed.byte_table.cast(),
                shared_bias: self.embed.shared_bias.cast(),
                alpha: self.embed.alpha,
                rope_base: self.embed.rope_base,
                mode: self.embed.mode,
            },
            layers: self.layers.iter().map(layer).collect(),
            final_norm: self.final_norm.cast(),
            w_out: self.w_out.cast(),
        }
    }

    /// Records every tensor as a leaf, in canonical order.
    pub fn register(&self, g: &mut Graph<T>, trainable: bool) -> Vec<Var> {
        self.tensors()
            .into_iter()
            .map(|t| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) })
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerVars {
    attn_norm: Var,
    wq: Var,
    wk: Var,
    wv: Var,
    wo: Var,
    mlp_norm: Var,
    w_up: Var,
    w_gate: Option<Var>,
    w_down: Var,
}

/// Graph handles for a registered weight set.
#[derive(Debug, Clone)]
pub struct WeightVars {
    embed: EmbedVars,
    layers: Vec<LayerVars>,
    final_norm: Var,
    w_out: Var,
}

impl WeightVars {
    /// Interprets `vars` (canonical order) for `cfg`.
    pub fn from_vars(cfg: &ModelConfig, vars: &[Var]) -> Result<Self> {
        let expected = tensor_specs(cfg).len();
        if vars.len() != expected {
            return Err(Error::Config(format!("expected {} vars, got {}", expected, vars.len())));
        }
        let mut it = vars.iter().copied();
        let mut next = || it.next().expect("length checked");
        let embed = EmbedVars {
            token_table: next(),
            byte_table: next(),
            shared_bias: next(),
        };
        let layers = (0..cfg.n_layers)
            .map(|_| LayerVars {
                attn_norm: next(),
                wq: next(),
                wk: next(),
                wv: next(),
                wo: next(),
                mlp_norm: next(),
                w_up: next(),
                w_gate: if cfg.activation.gated() { Some(next()) } else { None },
                w_down: next(),
            })
            .collect();
        Ok(Self {
            embed,
            layers,
            final_norm: next(),
            w_out: next(),
        })
    }
}

/// `ids` is `batch × seq` row-major. Returns the final-normed hidden states
/// `[batch*seq, d_model]`.
#[allow(clippy::too_many_arguments)]
pub fn hidden_on_graph<T: Real>(
    g: &mut Graph<T>,
    cfg: &ModelConfig,
    embed: &BeeEmbeddingParams<T>,
    vars: &WeightVars,
    ids: &[u32],
    batch: usize,
    seq: usize,
    table: &SpellingTable,
) -> Result<Var> {
    if seq == 0 || seq > cfg.seq_len {
        return Err(Error::Config(format!("sequence length {} outside 1..={}", seq, cfg.seq_len)));
    }
    if ids.len() != batch * seq {
        return Err(Error::Config(format!("{} ids for batch {} × seq {}", ids.len(), batch, seq)));
    }
    let shape = AttentionShape {
        batch,
        seq,
        n_heads: cfg.n_heads,
        n_kv_heads: cfg.n_kv_heads,
        head_dim: cfg.head_dim,
        causal: true,
    };
    let mut x = embed.embed_on_graph(g, vars.embed, ids, table)?;
    for l in &vars.layers {
        let h = g.layer_norm(x, l.attn_norm)?;
        let q = g.matmul(h, l.wq)?;
        let k = g.matmul(h, l.wk)?;
        let v = g.matmul(h, l.wv)?;
        let q = g.rope(q, seq, cfg.head_dim, cfg.rope_base)?;
        let k = g.rope(k, seq, cfg.head_dim, cfg.rope_base)?;
        let a = g.attention(q, k, v, shape)?;
        let o = g.matmul(a, l.wo)?;
        x = g.add(x, o)?;

        let h = g.layer_norm(x, l.mlp_norm)?;
        let up = g.matmul(h, l.w_up)?;
        let act = match (cfg.activation, l.w_gate) {
            (Activation::SwiGlu, Some(wg)) => {
                let gate = g.matmul(h, wg)?;
                let gate = g.silu(gate);
                g.mul(gate, up)?
            }
            (Activation::Gelu, None) => g.gelu(up),
            (Activation::Relu, None) => g.relu(up),
            _ => return Err(Error::Config(String::from("gate projection does not match activation"))),
        };
        let down = g.matmul(act, l.w_down)?;
        x = g.add(x, down)?;
    }
    g.layer_norm(x, vars.final_norm)
}

/// Logits `[batch*seq, vocab]` recorded on `g`.
#[allow(clippy::too_many_arguments)]
pub fn logits_on_graph<T: Real>(
    g: &mut Graph<T>,
    cfg: &ModelConfig,
    embed: &BeeEmbeddingParams<T>,
    vars: &WeightVars,
    ids: &[u32],
    batch: usize,
    seq: usize,
    table: &SpellingTable,
) -> Result<Var> {
    let h = hidden_on_graph(g, cfg, embed, vars, ids, batch, seq, table)?;
    g.matmul(h, vars.w_out)
}

/// Mean next-token loss of packed rows of `seq + 1` tokens.
pub fn loss_on_graph<T: Real>(
    g: &mut Graph<T>,
    cfg: &ModelConfig,
    embed: &BeeEmbeddingParams<T>,
    vars: &WeightVars,
    rows: &[u32],
    seq: usize,
    table: &SpellingTable,
) -> Result<Var> {
    let width = seq + 1;
    if rows.is_empty() || !rows.len().is_multiple_of(width) {
        return Err(Error::Config(format!("{} tokens is not a whole number of rows of {}", rows.len(), width)));
    }
    let batch = rows.len() / width;
    let mut inputs = Vec::with_capacity(batch * seq);
    let mut targets = Vec::with_capacity(batch * seq);
    for row in rows.chunks_exact(width) {
        inputs.extend_from_slice(&row[..seq]);
        targets.extend(row[1..].iter().map(|&t| t as usize));
    }
    let logits = logits_on_graph(g, cfg, embed, vars, &inputs, batch, seq, table)?;
    g.cross_entropy(logits, &targets)
}

/// A model ready for inference.
#[derive(Debug, Clone, Copy)]
pub struct Lm<'a, T> {
    pub config: &'a ModelConfig,
    pub weights: &'a Weights<T>,
    pub table: &'a SpellingTable,
}

impl<T: Real> Lm<'_, T> {
    fn setup(&self, g: &mut Graph<T>) -> Result<WeightVars> {
        let vars = self.weights.register(g, false);
        WeightVars::from_vars(self.config, &vars)
    }

    /// Logits `[batch*seq, vocab]` without recording gradients.
    pub fn forward(&self, ids: &[u32], batch: usize, seq: usize) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let vars = self.setup(&mut g)?;
        let out = logits_on_graph(&mut g, self.config, &self.weights.embed, &vars, ids, batch, seq, self.table)?;
        Ok(g.value(out).clone())
    }

    /// Mean next-token loss over packed rows of `seq + 1` tokens.
    pub fn loss(&self, rows: &[u32], seq: usize) -> Result<f64> {
        let mut g = Graph::new();
        let vars = self.setup(&mut g)?;
        let out = loss_on_graph(&mut g, self.config, &self.weights.embed, &vars, rows, seq, self.table)?;
        Ok(g.value(out).item().to_f64())
    }
}

/// Anything that scores the next token of a context.
pub trait NextTokenModel {
    /// Longest context accepted by [`NextTokenModel::next_logits`].
    fn max_context(&self) -> usize;
    fn next_logits(&self, context: &[u32]) -> Result<Vec<f64>>;
}

impl<T: Real> NextTokenModel for Lm<'_, T> {
    fn max_context(&self) -> usize {
        self.config.seq_len
    }

    fn next_logits(&self, context: &[u32]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let vars = self.setup(&mut g)?;
        let n = context.len();
        let h = hidden_on_graph(&mut g, self.config, &self.weights.embed, &vars, context, 1, n, self.table)?;
        let last = g.gather(h, &[n - 1])?;
        let logits = g.matmul(last, vars.w_out)?;
        Ok(g.value(logits).data().iter().map(|x| x.to_f64()).collect())
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &x) in xs.iter().enumerate() {
        match best {
            Some(b) if !(x > xs[b]) => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Greedy continuation of `prompt`, decoded as (lossy) UTF-8.
///
/// Stops after `max_new` tokens, when the decoded continuation contains
/// `stop` (the result is cut before it), or when the context is full.
pub fn generate_greedy<M: NextTokenModel + ?Sized>(
    model: &M,
    vocab: &Vocabulary,
    prompt: &[u32],
    max_new: usize,
    stop: &[u8],
) -> Result<String> {
    if prompt.is_empty() {
        return Err(Error::Invalid(String::from("empty prompt")));
    }
    if prompt.len() >= model.max_context() {
        return Err(Error::Invalid(format!(
            "prompt of {} tokens does not fit a context of {}",
            prompt.len(),
            model.max_context()
        )));
    }
    let mut ctx = prompt.to_vec();
    let mut text: Vec<u8> = Vec::new();
    for _ in 0..max_new {
        if ctx.len() > model.max_context() {
            break;
        }
        let logits = model.next_logits(&ctx)?;
        let next = argmax(&logits).ok_or_else(|| Error::Invalid(String::from("model returned no logits")))? as u32;
        ctx.push(next);
        text.extend_from_slice(&vocab.decode(&[next])?);
        if !stop.is_empty() {
            if let Some(pos) = text.windows(stop.len()).position(|w| w == stop) {
                text.truncate(pos);
                break;
            }
        }
    }
    Ok(String::from_utf8_lossy(&text).into_owned())
}
