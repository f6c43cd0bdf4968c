//! Initialization, AdamW, the learning-rate schedule, token budgeting, FLOP
//! accounting and the training loop.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::beeembed::{calibrate_alpha, EmbedMode};
use crate::datapipe::PackedBatchStream;
use crate::error::{Error, Result};
use crate::model::{count_params, loss_on_graph, tensor_specs, Lm, ModelConfig, WeightVars, Weights};
use crate::numcore::{Graph, Real, Tensor};
use crate::tokenspell::SpellingTable;

/// Variance multiplier of the MLP up (and gate) projections.
pub const SWIGLU_UP_GAIN: f64 = 1.679;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr_max: f64,
    pub warmup_steps: u64,
    pub final_lr_frac: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seq_len: usize,
    /// Training tokens; `None` means `20 × total params × chinchilla_multiplier`.
    pub token_budget: Option<u64>,
    pub chinchilla_multiplier: u64,
    pub seed: u64,
    /// Steps between held-out evaluations (the final step is always evaluated).
    pub eval_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_max: 0.0007,
            warmup_steps: 500,
            final_lr_frac: 0.1,
            beta1: 0.9,
            beta2: 0.995,
            eps: 1e-7,
            weight_decay: 0.1,
            batch_size: 192,
            seq_len: 512,
            token_budget: None,
            chinchilla_multiplier: 1,
            seed: 0,
            eval_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr_max > 0.0
            && self.final_lr_frac >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0
            && self.batch_size > 0
            && self.seq_len > 0
            && self.chinchilla_multiplier > 0
            && self.eval_every > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid training config {:?}", self)))
        }
    }

    pub fn tokens_per_step(&self) -> u64 {
        (self.batch_size * self.seq_len) as u64
    }

    pub fn token_budget_for(&self, total_params: usize) -> u64 {
        self.token_budget
            .unwrap_or(20 * total_params as u64 * self.chinchilla_multiplier)
    }

    /// Whole optimizer steps in the budget; a trailing partial step is dropped.
    pub fn total_steps(&self, total_params: usize) -> u64 {
        self.token_budget_for(total_params) / self.tokens_per_step()
    }
}

/// Linear warmup from 0 to `lr_max`, then linear decay to
/// `final_lr_frac · lr_max` at `total_steps`; clamped beyond.
pub fn lr_at(step: u64, cfg: &TrainConfig, total_steps: u64) -> f64 {
    let w = cfg.warmup_steps;
    let end = cfg.lr_max * cfg.final_lr_frac;
    if step < w {
        cfg.lr_max * step as f64 / w as f64
    } else if step >= total_steps {
        if step == w { cfg.lr_max } else { end }
    } else {
        let t = (step - w) as f64 / (total_steps - w) as f64;
        cfg.lr_max + (end - cfg.lr_max) * t
    }
}

pub fn flops_estimate(non_embedding_params: u64, tokens: u64) -> f64 {
    6.0 * non_embedding_params as f64 * tokens as f64
}

/// Zero-mean normal init: embeddings with variance `1/√d`, MLP up/gate
/// projections `1.679/√fan_in`, other matrices `1/√fan_in`, norm weights 1.
/// `alpha` is left at 1; see [`init_model`].
pub fn init_weights<T: Real>(cfg: &ModelConfig, mode: EmbedMode, seed: u64) -> Result<Weights<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = cfg.d_model as f64;
    let tensors = tensor_specs(cfg)
        .into_iter()
        .map(|(name, shape)| {
            let leaf = name.rsplit('.').next().unwrap_or(&name);
            let variance = match leaf {
                "attn_norm" | "mlp_norm" | "final_norm" => return Tensor::full(&shape, T::ONE),
                "token_table" | "byte_table" | "shared_bias" => 1.0 / libm::sqrt(d),
                "w_up" | "w_gate" => SWIGLU_UP_GAIN / libm::sqrt(shape[0] as f64),
                _ => 1.0 / libm::sqrt(shape[0] as f64),
            };
            let dist = Normal::new(0.0, libm::sqrt(variance)).expect("positive std");
            Tensor::from_fn(&shape, |_| T::from_f64(dist.sample(&mut rng)))
        })
        .collect();
    Weights::from_tensors(cfg, tensors, 1.0, mode)
}

/// [`init_weights`] followed by alpha calibration for modes that read
/// spellings.
pub fn init_model<T: Real>(cfg: &ModelConfig, mode: EmbedMode, table: &SpellingTable, seed: u64) -> Result<Weights<T>> {
    let mut w = init_weights(cfg, mode, seed)?;
    if mode.uses_spelling() {
        w.embed.alpha = calibrate_alpha(&w.embed, table)?;
    }
    w.embed.validate(table)?;
    Ok(w)
}

/// AdamW moments, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(params: &[&Tensor<T>]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self { m: zeros(), v: zeros(), step: 0 }
    }
}

/// One decoupled AdamW update with bias correction:
/// `w ← w·(1 − lr·wd) − lr·m̂/(√v̂ + ε)`.
///
/// A missing gradient counts as zero. Nothing is modified if any gradient
/// has a non-finite entry; the error names the first such tensor.
pub fn adamw_step<T: Real>(
    params: &mut [&mut Tensor<T>],
    grads: &[Option<Tensor<T>>],
    names: &[String],
    state: &mut OptimizerState<T>,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::Config(format!(
            "{} params, {} grads, {} moment buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, g) in grads.iter().enumerate() {
        if let Some(g) = g {
            if g.shape() != params[i].shape() {
                return Err(Error::Config(format!("gradient shape mismatch for tensor {}", i)));
            }
            if g.data().iter().any(|x| !x.is_finite()) {
                let name = names.get(i).cloned().unwrap_or_else(|| format!("#{}", i));
                return Err(Error::NonFiniteGradient(name));
            }
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let bc1 = 1.0 - libm::pow(b1, t as f64);
    let bc2 = 1.0 - libm::pow(b2, t as f64);
    let decay = 1.0 - lr * cfg.weight_decay;
    for (i, p) in params.iter_mut().enumerate() {
        let (m, v) = (state.m[i].data_mut(), state.v[i].data_mut());
        let g = grads[i].as_ref().map(|g| g.data());
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            let gj = g.map_or(0.0, |g| g[j].to_f64());
            let mj = b1 * m[j].to_f64() + (1.0 - b1) * gj;
            let vj = b2 * v[j].to_f64() + (1.0 - b2) * gj * gj;
            m[j] = T::from_f64(mj);
            v[j] = T::from_f64(vj);
            let update = (mj / bc1) / (libm::sqrt(vj / bc2) + cfg.eps);
            *w = T::from_f64(w.to_f64() * decay - lr * update);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub tokens: u64,
    pub flops: f64,
    pub lr: f64,
    pub train_loss: f64,
    pub test_loss: Option<f64>,
}

/// Mean next-token loss over packed rows, evaluated `chunk_rows` at a time.
pub fn evaluate_loss<T: Real>(lm: &Lm<'_, T>, rows: &[u32], seq: usize, chunk_rows: usize) -> Result<f64> {
    let width = seq + 1;
    if rows.is_empty() || !rows.len().is_multiple_of(width) {
        return Err(Error::Invalid(format!("{} tokens are not whole rows of {}", rows.len(), width)));
    }
    let n_rows = rows.len() / width;
    let mut total = 0.0;
    for chunk in rows.chunks(chunk_rows.max(1) * width) {
        total += lm.loss(chunk, seq)? * (chunk.len() / width) as f64;
    }
    Ok(total / n_rows as f64)
}

/// Packs documents into at most `max_rows` rows of `seq + 1` tokens.
pub fn pack_rows(docs: &[Vec<u32>], seq: usize, separator: Option<u32>, max_rows: usize) -> Result<Vec<u32>> {
    let stream = PackedBatchStream::new(docs.iter().cloned(), 1, seq, separator)?;
    Ok(stream.take(max_rows).flatten().collect())
}

/// Weights, optimizer and log at the end of (or just before a failure in) a
/// run.
#[derive(Debug, Clone)]
pub struct TrainState<T> {
    pub weights: Weights<T>,
    pub optimizer: OptimizerState<T>,
    pub metrics: Vec<MetricsRow>,
}

/// A run that stopped early; `state` is the last good one.
#[derive(Debug, Clone)]
pub struct TrainFailure<T> {
    pub error: Error,
    pub state: Box<TrainState<T>>,
}

pub struct TrainInputs<'a> {
    pub table: &'a SpellingTable,
    /// Training documents, cycled in order if the budget outlasts them.
    pub train_docs: &'a [Vec<u32>],
    /// Held-out packed rows of `seq_len + 1` tokens.
    pub test_rows: &'a [u32],
    pub separator: Option<u32>,
}

/// Runs `total_steps` optimizer steps, calling `on_row` after each.
pub fn train<T: Real>(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    weights: Weights<T>,
    inputs: &TrainInputs<'_>,
    mut on_row: impl FnMut(&MetricsRow),
) -> Result<TrainState<T>, TrainFailure<T>> {
    let mut state = TrainState {
        optimizer: OptimizerState::new(&weights.tensors()),
        weights,
        metrics: Vec::new(),
    };
    let fail = |error: Error, state: TrainState<T>| TrainFailure { error, state: Box::new(state) };
    if let Err(e) = check_inputs(model_cfg, cfg, &state.weights, inputs) {
        return Err(fail(e, state));
    }
    let counts = count_params(model_cfg, state.weights.embed.mode);
    let total_steps = cfg.total_steps(counts.total);
    let names: Vec<String> = tensor_specs(model_cfg).into_iter().map(|(n, _)| n).collect();
    let mut batches = PackedBatchStream::new(
        inputs.train_docs.iter().cloned().cycle(),
        cfg.batch_size,
        cfg.seq_len,
        inputs.separator,
    )
    .expect("validated");

    for step in 1..=total_steps {
        let batch = batches.next().expect("cycled stream never ends");
        let lr = lr_at(step, cfg, total_steps);
        let sw = &state.weights;
        let result = (|| -> Result<(f64, Vec<Option<Tensor<T>>>)> {
            let mut g = Graph::new();
            let vars = sw.register(&mut g, true);
            let wv = WeightVars::from_vars(model_cfg, &vars)?;
            let loss = loss_on_graph(&mut g, model_cfg, &sw.embed, &wv, &batch, cfg.seq_len, inputs.table)?;
            let value = g.value(loss).item().to_f64();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss(step));
            }
            let mut grads = g.backward(loss)?;
            Ok((value, vars.iter().map(|&v| grads.take(v)).collect()))
        })();
        let (train_loss, grads) = match result {
            Ok(r) => r,
            Err(e) => return Err(fail(e, state)),
        };
        let mut params = state.weights.tensors_mut();
        if let Err(e) = adamw_step(&mut params, &grads, &names, &mut state.optimizer, lr, cfg) {
            return Err(fail(e, state));
        }

        let test_loss = if step % cfg.eval_every == 0 || step == total_steps {
            let lm = Lm { config: model_cfg, weights: &state.weights, table: inputs.table };
            match evaluate_loss(&lm, inputs.test_rows, cfg.seq_len, cfg.batch_size) {
                Ok(l) => Some(l),
                Err(e) => return Err(fail(e, state)),
            }
        } else {
            None
        };
        let tokens = step * cfg.tokens_per_step();
        let row = MetricsRow {
            step,
            tokens,
            flops: flops_estimate(counts.non_embedding as u64, tokens),
            lr,
            train_loss,
            test_loss,
        };
        on_row(&row);
        state.metrics.push(row);
    }
    Ok(state)
}

fn check_inputs<T: Real>(model_cfg: &ModelConfig, cfg: &TrainConfig, w: &Weights<T>, inputs: &TrainInputs<'_>) -> Result<()> {
    model_cfg.validate()?;
    cfg.validate()?;
    w.embed.validate(inputs.table)?;
    if cfg.seq_len > model_cfg.seq_len {
        return Err(Error::Config(format!(
            "training sequence length {} exceeds model context {}",
            cfg.seq_len, model_cfg.seq_len
        )));
    }
    let tokens: usize = inputs.train_docs.iter().map(Vec::len).sum();
    if tokens < cfg.batch_size * (cfg.seq_len + 1) {
        return Err(Error::Invalid(format!(
            "{} training tokens cannot fill one batch of {} × {}",
            tokens,
            cfg.batch_size,
            cfg.seq_len + 1
        )));
    }
    if inputs.test_rows.is_empty() {
        return Err(Error::Invalid(String::from("no held-out rows")));
    }
    Ok(())
}
