use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::ctc::{ctc_nll_and_grad, min_frames};
use super::model::{self, init_params, Params};
use super::tape::Tape;
use super::tokenizer::TokenSequence;
use super::{lr_at_step, mse_loss, Seq2SeqConfig, TrainConfig};
use crate::encode::EmbeddingSequence;
use crate::error::{Error, Result};

/// One aligned training pair with its transcript.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub id: String,
    pub source: EmbeddingSequence,
    pub target: EmbeddingSequence,
    pub tokens: TokenSequence,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub mse: f64,
    pub ctc: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
}

impl std::fmt::Display for StepRecord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "step={} lr={:e} l_mse={:.6} l_ctc={:.6} l_total={:.6}",
            self.step, self.lr, self.loss.mse, self.loss.ctc, self.loss.total
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
}

impl AdamState {
    pub fn new(params: &Params) -> Self {
        AdamState {
            t: 0,
            m: params.tensors.iter().map(|p| Array2::zeros(p.raw_dim())).collect(),
            v: params.tensors.iter().map(|p| Array2::zeros(p.raw_dim())).collect(),
        }
    }

    fn step(&mut self, params: &mut Params, grads: &[Array2<f64>], lr: f64, tr: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (tr.adam_beta1, tr.adam_beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for (((p, g), m), v) in params.tensors.iter_mut().zip(grads).zip(self.m.iter_mut()).zip(self.v.iter_mut()) {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + tr.adam_eps);
            });
        }
    }
}

/// Loss terms and parameter gradients of `alpha_ctc * ctc + alpha_mse * mse` for one example.
pub fn example_loss_and_grads(
    config: &Seq2SeqConfig,
    params: &Params,
    ex: &TrainExample,
) -> Result<(LossBreakdown, Vec<Array2<f64>>)> {
    let mut tape = Tape::new();
    let g = model::build(&mut tape, config, params, ex.source.frames());

    let pred = tape.value(g.predicted);
    let target = ex.target.frames();
    let mse = mse_loss(pred.view(), target.view())?;
    let mse_grad = (pred - target) * (2.0 / pred.nrows() as f64);
    let mse_var = tape.scalar_with_grad(g.predicted, mse, mse_grad);

    let logp = tape.log_softmax(g.logits);
    let (ctc, ctc_grad) = ctc_nll_and_grad(tape.value(logp).view(), &ex.tokens.tokens, config.vocab.blank)?;
    let ctc_var = tape.scalar_with_grad(logp, ctc, ctc_grad);

    let total = tape.combine(&[(ctc_var, config.alpha_ctc), (mse_var, config.alpha_mse)]);
    let loss = LossBreakdown { mse, ctc, total: tape.scalar(total) };
    let grads = tape
        .backward(total, params.len())
        .into_iter()
        .zip(&params.tensors)
        .map(|(g, p)| g.unwrap_or_else(|| Array2::zeros(p.raw_dim())))
        .collect();
    Ok((loss, grads))
}

/// Mean loss terms over `examples` (no gradient).
pub fn dataset_loss(config: &Seq2SeqConfig, params: &Params, examples: &[TrainExample]) -> Result<LossBreakdown> {
    if examples.is_empty() {
        return Err(Error::validation("no examples"));
    }
    let mut acc = LossBreakdown::default();
    for ex in examples {
        let mut tape = Tape::new();
        let g = model::build(&mut tape, config, params, ex.source.frames());
        let mse = mse_loss(tape.value(g.predicted).view(), ex.target.frames().view())?;
        let logp = tape.log_softmax(g.logits);
        let (ctc, _) = ctc_nll_and_grad(tape.value(logp).view(), &ex.tokens.tokens, config.vocab.blank)?;
        acc.mse += mse;
        acc.ctc += ctc;
    }
    let n = examples.len() as f64;
    acc.mse /= n;
    acc.ctc /= n;
    acc.total = config.alpha_ctc * acc.ctc + config.alpha_mse * acc.mse;
    Ok(acc)
}

/// Example indices used at `step`: epochs are independent seeded permutations,
/// so any step's batch is computable without replaying earlier ones.
pub fn batch_indices(n: usize, batch_size: usize, seed: u64, step: usize) -> Vec<usize> {
    let per_epoch = n.div_ceil(batch_size);
    let epoch = step / per_epoch;
    let b = step % per_epoch;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    order.shuffle(&mut rng);
    order[b * batch_size..((b + 1) * batch_size).min(n)].to_vec()
}

fn validate_examples(config: &Seq2SeqConfig, examples: &[TrainExample]) -> Result<()> {
    for ex in examples {
        if ex.source.len() != ex.target.len() {
            return Err(Error::validation(format!(
                "pair {} is not aligned ({} vs {} frames)",
                ex.id,
                ex.source.len(),
                ex.target.len()
            )));
        }
        if ex.source.dim() != config.embedding_dim || ex.target.dim() != config.embedding_dim {
            return Err(Error::shape(format!(
                "pair {} has dims {}/{}, model expects {}",
                ex.id,
                ex.source.dim(),
                ex.target.dim(),
                config.embedding_dim
            )));
        }
        let need = min_frames(&ex.tokens.tokens);
        if need > ex.source.len() {
            return Err(Error::validation(format!(
                "pair {}: transcript needs {need} CTC frames but has {}",
                ex.id,
                ex.source.len()
            )));
        }
        if ex.tokens.tokens.iter().any(|&t| t == config.vocab.blank || t >= config.vocab.len()) {
            return Err(Error::validation(format!("pair {}: invalid token ids", ex.id)));
        }
    }
    Ok(())
}

/// Adam training up to `train_cfg.max_steps`, optionally continuing from `resume`.
///
/// Every example is validated before the first update. `on_step` receives one
/// record per update.
pub fn train(
    examples: &[TrainExample],
    val: &[TrainExample],
    s2s: &Seq2SeqConfig,
    train_cfg: &TrainConfig,
    resume: Option<Checkpoint>,
    on_step: &mut dyn FnMut(&StepRecord),
) -> Result<Checkpoint> {
    s2s.validate()?;
    train_cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::validation("no training pairs"));
    }
    validate_examples(s2s, examples)?;
    validate_examples(s2s, val)?;

    let mut ckpt = match resume {
        Some(c) => {
            if &c.seq2seq != s2s {
                return Err(Error::validation("resume checkpoint has a different model config"));
            }
            c.params.check_against(s2s)?;
            Checkpoint { train: train_cfg.clone(), ..c }
        }
        None => {
            let params = init_params(s2s, train_cfg.seed);
            let adam = AdamState::new(&params);
            Checkpoint {
                seq2seq: s2s.clone(),
                train: train_cfg.clone(),
                step: 0,
                params,
                adam,
                loss_history: Vec::new(),
                val_history: Vec::new(),
            }
        }
    };

    while ckpt.step < train_cfg.max_steps {
        let step = ckpt.step;
        let lr = lr_at_step(step, train_cfg);
        let idx = batch_indices(examples.len(), train_cfg.batch_size, train_cfg.seed, step);
        let mut grads: Vec<Array2<f64>> = ckpt.params.tensors.iter().map(|p| Array2::zeros(p.raw_dim())).collect();
        let mut loss = LossBreakdown::default();
        for &i in &idx {
            let (l, g) = example_loss_and_grads(s2s, &ckpt.params, &examples[i])?;
            loss.mse += l.mse;
            loss.ctc += l.ctc;
            loss.total += l.total;
            for (acc, gi) in grads.iter_mut().zip(g) {
                *acc += &gi;
            }
        }
        let scale = 1.0 / idx.len() as f64;
        for g in grads.iter_mut() {
            *g *= scale;
        }
        loss.mse *= scale;
        loss.ctc *= scale;
        loss.total *= scale;
        let clip = train_cfg.grad_clip_norm;
        if clip > 0.0 {
            let norm = grads.iter().map(|g| g.iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
            if norm > clip {
                for g in grads.iter_mut() {
                    *g *= clip / norm;
                }
            }
        }
        if !loss.total.is_finite() {
            return Err(Error::validation(format!("loss diverged at step {step}")));
        }
        ckpt.adam.step(&mut ckpt.params, &grads, lr, train_cfg);
        ckpt.step += 1;
        let rec = StepRecord { step: ckpt.step, lr, loss };
        on_step(&rec);
        ckpt.loss_history.push(rec);

        let at_end = ckpt.step == train_cfg.max_steps;
        let periodic = train_cfg.val_every > 0 && ckpt.step % train_cfg.val_every == 0;
        if !val.is_empty() && (at_end || periodic) {
            let vl = dataset_loss(s2s, &ckpt.params, val)?;
            ckpt.val_history.retain(|(s, _)| *s != ckpt.step);
            ckpt.val_history.push((ckpt.step, vl));
        }
    }
    Ok(ckpt)
}
