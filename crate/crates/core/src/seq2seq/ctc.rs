//! Connectionist temporal classification loss (forward-backward in log space).

use ndarray::{Array2, ArrayView2};

use super::tape::log_softmax_rows;
use crate::error::{Error, Result};

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Frames needed to emit `target`: one per label plus a blank between equal neighbours.
pub fn min_frames(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

fn check(t: usize, vocab: usize, target: &[usize], blank: usize) -> Result<()> {
    if blank >= vocab {
        return Err(Error::validation(format!("blank {blank} outside vocab of {vocab}")));
    }
    if let Some(&bad) = target.iter().find(|&&c| c >= vocab || c == blank) {
        return Err(Error::validation(format!("target label {bad} is blank or out of range")));
    }
    let need = min_frames(target);
    if need > t {
        return Err(Error::validation(format!(
            "target of {} labels needs {need} frames, only {t} available",
            target.len()
        )));
    }
    Ok(())
}

/// Negative log-likelihood and its gradient with respect to the `T x V`
/// log-probabilities.
pub fn ctc_nll_and_grad(log_probs: ArrayView2<'_, f64>, target: &[usize], blank: usize) -> Result<(f64, Array2<f64>)> {
    let (t_len, vocab) = log_probs.dim();
    check(t_len, vocab, target, blank)?;

    // extended label sequence: blank, c1, blank, c2, ..., blank
    let ext: Vec<usize> = std::iter::once(blank).chain(target.iter().flat_map(|&c| [c, blank])).collect();
    let s_len = ext.len();
    let skip_ok = |s: usize| s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];

    let ninf = f64::NEG_INFINITY;
    let mut alpha = Array2::from_elem((t_len, s_len), ninf);
    alpha[[0, 0]] = log_probs[[0, ext[0]]];
    if s_len > 1 {
        alpha[[0, 1]] = log_probs[[0, ext[1]]];
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let mut a = alpha[[t - 1, s]];
            if s >= 1 {
                a = log_add(a, alpha[[t - 1, s - 1]]);
            }
            if skip_ok(s) {
                a = log_add(a, alpha[[t - 1, s - 2]]);
            }
            alpha[[t, s]] = a + log_probs[[t, ext[s]]];
        }
    }

    // beta excludes the emission at its own frame
    let mut beta = Array2::from_elem((t_len, s_len), ninf);
    beta[[t_len - 1, s_len - 1]] = 0.0;
    if s_len > 1 {
        beta[[t_len - 1, s_len - 2]] = 0.0;
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let mut b = beta[[t + 1, s]] + log_probs[[t + 1, ext[s]]];
            if s + 1 < s_len {
                b = log_add(b, beta[[t + 1, s + 1]] + log_probs[[t + 1, ext[s + 1]]]);
            }
            if s + 2 < s_len && skip_ok(s + 2) {
                b = log_add(b, beta[[t + 1, s + 2]] + log_probs[[t + 1, ext[s + 2]]]);
            }
            beta[[t, s]] = b;
        }
    }

    let mut log_p = alpha[[t_len - 1, s_len - 1]];
    if s_len > 1 {
        log_p = log_add(log_p, alpha[[t_len - 1, s_len - 2]]);
    }
    if log_p == ninf {
        return Err(Error::validation("target has zero probability under these logits"));
    }

    let mut grad = Array2::zeros((t_len, vocab));
    for t in 0..t_len {
        for s in 0..s_len {
            let occ = alpha[[t, s]] + beta[[t, s]] - log_p;
            if occ > ninf {
                grad[[t, ext[s]]] -= occ.exp();
            }
        }
    }
    Ok((-log_p, grad))
}

/// CTC loss of unnormalized `T x V` logits (log-softmax is applied per frame).
pub fn ctc_loss(logits: ArrayView2<'_, f64>, target: &[usize], blank: usize) -> Result<f64> {
    let lp = log_softmax_rows(&logits.to_owned());
    ctc_nll_and_grad(lp.view(), target, blank).map(|(l, _)| l)
}
