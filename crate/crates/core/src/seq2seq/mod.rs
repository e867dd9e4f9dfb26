//! Non-autoregressive transformer mapping murmur embeddings to speech embeddings,
//! trained on a weighted sum of a frame-embedding MSE and a CTC loss on the
//! encoder states.

mod checkpoint;
mod ctc;
mod model;
mod tape;
mod tokenizer;
mod train;

pub use checkpoint::Checkpoint;
pub use ctc::{ctc_loss, ctc_nll_and_grad, min_frames};
pub use model::{init_params, param_shapes, Params};
pub use tape::{log_softmax_rows, Tape, Var};
pub use tokenizer::{TokenSequence, Vocab};
pub use train::{
    batch_indices, dataset_loss, example_loss_and_grads, train, AdamState, LossBreakdown, StepRecord, TrainExample,
};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::encode::{EmbeddingSequence, EMBEDDING_DIM};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Seq2SeqConfig {
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub attention_heads: usize,
    pub hidden_dim: usize,
    /// Width of the first convolution in each feed-forward block.
    pub conv_filter: usize,
    pub conv_kernel: usize,
    pub embedding_dim: usize,
    pub alpha_ctc: f64,
    pub alpha_mse: f64,
    pub vocab: Vocab,
}

impl Default for Seq2SeqConfig {
    fn default() -> Self {
        Seq2SeqConfig {
            encoder_layers: 6,
            decoder_layers: 6,
            attention_heads: 2,
            hidden_dim: 256,
            conv_filter: 1024,
            conv_kernel: 9,
            embedding_dim: EMBEDDING_DIM,
            alpha_ctc: 0.001,
            alpha_mse: 1.0,
            vocab: Vocab::default(),
        }
    }
}

impl Seq2SeqConfig {
    pub fn validate(&self) -> Result<()> {
        if self.encoder_layers == 0 || self.decoder_layers == 0 {
            return Err(Error::validation("encoder and decoder need at least one layer"));
        }
        if self.attention_heads == 0 || !self.hidden_dim.is_multiple_of(self.attention_heads) {
            return Err(Error::validation(format!(
                "hidden_dim {} must be a positive multiple of attention_heads {}",
                self.hidden_dim, self.attention_heads
            )));
        }
        if self.conv_kernel == 0 || self.conv_filter == 0 || self.embedding_dim == 0 {
            return Err(Error::validation("conv sizes and embedding_dim must be positive"));
        }
        if !(self.alpha_ctc >= 0.0 && self.alpha_mse >= 0.0) {
            return Err(Error::validation("loss weights must be non-negative"));
        }
        self.vocab.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_steps: usize,
    pub lr_init: f64,
    pub anneal_rate: f64,
    pub anneal_steps: Vec<usize>,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip_norm: f64,
    /// Validation loss is recorded every this many steps (and at the end); 0 = end only.
    pub val_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            max_steps: 20_000,
            lr_init: 4.4e-2,
            anneal_rate: 0.3,
            anneal_steps: vec![3000, 4000, 5000],
            seed: 1234,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip_norm: 1.0,
            val_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_init > 0.0) {
            return Err(Error::validation("lr_init must be positive"));
        }
        if !(self.anneal_rate > 0.0) {
            return Err(Error::validation("anneal_rate must be positive"));
        }
        if self.anneal_steps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::validation("anneal_steps must be strictly increasing"));
        }
        if !(self.grad_clip_norm >= 0.0) {
            return Err(Error::validation("grad_clip_norm must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("batch_size must be positive"));
        }
        Ok(())
    }
}

/// `lr_init * anneal_rate ^ (number of anneal steps <= step)`.
pub fn lr_at_step(step: usize, config: &TrainConfig) -> f64 {
    let drops = config.anneal_steps.iter().filter(|&&s| s <= step).count();
    config.lr_init * config.anneal_rate.powi(drops as i32)
}

/// Mean over frames of the squared L2 distance between rows (summed over dims).
pub fn mse_loss(predicted: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>) -> Result<f64> {
    if predicted.dim() != target.dim() {
        return Err(Error::shape(format!("prediction {:?} vs target {:?}", predicted.dim(), target.dim())));
    }
    if predicted.nrows() == 0 {
        return Err(Error::shape("empty sequences"));
    }
    let sum: f64 = predicted.iter().zip(target.iter()).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(sum / predicted.nrows() as f64)
}

pub fn total_loss(l_ctc: f64, l_mse: f64, config: &Seq2SeqConfig) -> Result<f64> {
    if !l_ctc.is_finite() || !l_mse.is_finite() {
        return Err(Error::validation("loss terms must be finite"));
    }
    Ok(config.alpha_ctc * l_ctc + config.alpha_mse * l_mse)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    pub predicted_embeddings: Array2<f64>,
    pub encoder_states: Array2<f64>,
    pub ctc_logits: Array2<f64>,
}

/// Runs the network on one sequence.
pub fn forward(nam: &EmbeddingSequence, config: &Seq2SeqConfig, params: &Params) -> Result<ModelOutput> {
    check_input(nam, config, params)?;
    let mut tape = Tape::new();
    let out = model::build(&mut tape, config, params, nam.frames());
    Ok(ModelOutput {
        predicted_embeddings: tape.value(out.predicted).clone(),
        encoder_states: tape.value(out.encoder).clone(),
        ctc_logits: tape.value(out.logits).clone(),
    })
}

fn check_input(nam: &EmbeddingSequence, config: &Seq2SeqConfig, params: &Params) -> Result<()> {
    if nam.dim() != config.embedding_dim {
        return Err(Error::shape(format!("input dim {} but model expects {}", nam.dim(), config.embedding_dim)));
    }
    if nam.frames().iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("non-finite input embedding"));
    }
    params.check_against(config)
}

/// Predicted speech embeddings for one murmur sequence.
pub fn infer(nam: &EmbeddingSequence, checkpoint: &Checkpoint) -> Result<EmbeddingSequence> {
    let out = forward(nam, &checkpoint.seq2seq, &checkpoint.params)?;
    EmbeddingSequence::new(out.predicted_embeddings, nam.frame_rate())
}

/// Greedy transcript from the CTC head.
pub fn ctc_greedy_transcript(output: &ModelOutput, vocab: &Vocab) -> String {
    let ids: Vec<usize> = output
        .ctc_logits
        .rows()
        .into_iter()
        .map(|r| {
            r.iter().enumerate().fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best }).0
        })
        .collect();
    vocab.decode_frames(&ids)
}
