//! Parameter layout and the forward graph.
//!
//! input projection -> + positions -> encoder FFT blocks -> (CTC head)
//! -> + positions -> decoder FFT blocks -> output projection.
//!
//! Each FFT block is post-norm: `x = LN(x + MHA(x))`, then
//! `x = LN(x + Conv_1(ReLU(Conv_k(x))))`.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::Seq2SeqConfig;
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub names: Vec<String>,
    pub tensors: Vec<Array2<f64>>,
}

impl Params {
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn check_against(&self, config: &Seq2SeqConfig) -> Result<()> {
        let shapes = param_shapes(config);
        if shapes.len() != self.tensors.len() {
            return Err(Error::shape(format!(
                "config expects {} tensors, checkpoint has {}",
                shapes.len(),
                self.tensors.len()
            )));
        }
        for ((name, shape), t) in shapes.iter().zip(&self.tensors) {
            if t.dim() != *shape {
                return Err(Error::shape(format!("{name}: expected {shape:?}, found {:?}", t.dim())));
            }
        }
        Ok(())
    }
}

fn block_shapes(prefix: &str, c: &Seq2SeqConfig, out: &mut Vec<(String, (usize, usize))>) {
    let h = c.hidden_dim;
    let f = c.conv_filter;
    let mut push = |n: &str, s| out.push((format!("{prefix}.{n}"), s));
    for p in ["q", "k", "v", "o"] {
        push(&format!("attn.w{p}"), (h, h));
        push(&format!("attn.b{p}"), (1, h));
    }
    push("ln1.gamma", (1, h));
    push("ln1.beta", (1, h));
    push("conv1.w", (c.conv_kernel * h, f));
    push("conv1.b", (1, f));
    push("conv2.w", (f, h));
    push("conv2.b", (1, h));
    push("ln2.gamma", (1, h));
    push("ln2.beta", (1, h));
}

/// Names and shapes of every tensor, in graph order.
pub fn param_shapes(c: &Seq2SeqConfig) -> Vec<(String, (usize, usize))> {
    let mut out =
        vec![("input.w".to_string(), (c.embedding_dim, c.hidden_dim)), ("input.b".to_string(), (1, c.hidden_dim))];
    for l in 0..c.encoder_layers {
        block_shapes(&format!("encoder.{l}"), c, &mut out);
    }
    out.push(("ctc.w".into(), (c.hidden_dim, c.vocab.len())));
    out.push(("ctc.b".into(), (1, c.vocab.len())));
    for l in 0..c.decoder_layers {
        block_shapes(&format!("decoder.{l}"), c, &mut out);
    }
    out.push(("output.w".into(), (c.hidden_dim, c.embedding_dim)));
    out.push(("output.b".into(), (1, c.embedding_dim)));
    out
}

/// Xavier-uniform weights, zero biases, unit layer-norm gains.
pub fn init_params(c: &Seq2SeqConfig, seed: u64) -> Params {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut names = Vec::new();
    let mut tensors = Vec::new();
    for (name, (r, cols)) in param_shapes(c) {
        let t = if name.ends_with(".gamma") {
            Array2::ones((r, cols))
        } else if r == 1 {
            Array2::zeros((r, cols))
        } else {
            let bound = (6.0 / (r + cols) as f64).sqrt();
            Array2::from_shape_fn((r, cols), |_| rng.gen_range(-bound..bound))
        };
        names.push(name);
        tensors.push(t);
    }
    Params { names, tensors }
}

/// Sinusoidal position table, `T x hidden`.
pub fn positions(t: usize, hidden: usize) -> Array2<f64> {
    Array2::from_shape_fn((t, hidden), |(pos, i)| {
        let pair = (i / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * pair / hidden as f64);
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

pub(crate) struct Graph {
    pub predicted: Var,
    pub encoder: Var,
    pub logits: Var,
}

struct Cursor {
    vars: std::vec::IntoIter<Var>,
}

impl Cursor {
    fn next(&mut self) -> Var {
        self.vars.next().expect("parameter layout matches config")
    }
}

fn linear(t: &mut Tape, x: Var, p: &mut Cursor) -> Var {
    let w = p.next();
    let b = p.next();
    let y = t.matmul(x, w);
    t.add_row(y, b)
}

fn fft_block(t: &mut Tape, x: Var, c: &Seq2SeqConfig, p: &mut Cursor) -> Var {
    let heads = c.attention_heads;
    let dh = c.hidden_dim / heads;
    let q = linear(t, x, p);
    let k = linear(t, x, p);
    let v = linear(t, x, p);
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = t.col_slice(q, h * dh, dh);
        let kh = t.col_slice(k, h * dh, dh);
        let vh = t.col_slice(v, h * dh, dh);
        let scores = t.matmul_t(qh, kh);
        let scores = t.scale(scores, 1.0 / (dh as f64).sqrt());
        let attn = t.softmax(scores);
        outs.push(t.matmul(attn, vh));
    }
    let cat = if heads == 1 { outs[0] } else { t.concat_cols(&outs) };
    let a = linear(t, cat, p);
    let res = t.add(x, a);
    let (g1, b1) = (p.next(), p.next());
    let x = t.layer_norm(res, g1, b1, LN_EPS);

    let cols = t.im2col(x, c.conv_kernel);
    let h1 = linear(t, cols, p);
    let h1 = t.relu(h1);
    let h2 = linear(t, h1, p);
    let res = t.add(x, h2);
    let (g2, b2) = (p.next(), p.next());
    t.layer_norm(res, g2, b2, LN_EPS)
}

pub(crate) fn build(t: &mut Tape, c: &Seq2SeqConfig, params: &Params, input: &Array2<f64>) -> Graph {
    let vars: Vec<Var> = params.tensors.iter().enumerate().map(|(i, p)| t.param(i, p)).collect();
    let mut p = Cursor { vars: vars.into_iter() };
    let pe = t.leaf(positions(input.nrows(), c.hidden_dim));
    let x = t.leaf(input.clone());
    let h = linear(t, x, &mut p);
    let mut h = t.add(h, pe);
    for _ in 0..c.encoder_layers {
        h = fft_block(t, h, c, &mut p);
    }
    let encoder = h;
    let logits = linear(t, encoder, &mut p);
    let mut d = t.add(encoder, pe);
    for _ in 0..c.decoder_layers {
        d = fft_block(t, d, c, &mut p);
    }
    let predicted = linear(t, d, &mut p);
    Graph { predicted, encoder, logits }
}
