//! Connectionist temporal classification: loss with gradient, and greedy decoding.
//!
//! Class 0 is the blank. All recursions run in log space.

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};
use crate::text::{CharSet, LabelSequence};

/// Loss and its gradient with respect to the `[T, C]` log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct CtcOutput {
    /// `+inf` when the target cannot be aligned in `T` frames.
    pub loss: f64,
    pub grad: Vec<f64>,
}

impl CtcOutput {
    pub fn is_feasible(&self) -> bool {
        self.loss.is_finite()
    }
}

/// Fewest frames that can emit `labels`: one per label plus a blank between
/// each pair of equal neighbours.
pub fn min_alignable_length(labels: &[usize]) -> usize {
    labels.len() + labels.windows(2).filter(|w| w[0] == w[1]).count()
}

fn lse2(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Negative log-likelihood of `labels` under per-frame `log_probs` `[T, C]`.
pub fn ctc_loss(log_probs: &Tensor, labels: &[usize]) -> Result<CtcOutput> {
    let shape = log_probs.shape();
    if shape.len() != 2 || shape[0] == 0 || shape[1] < 2 {
        return Err(Error::shape("ctc_loss", format!("log_probs {shape:?}; need [T >= 1, C >= 2]")));
    }
    let (t_len, c) = (shape[0], shape[1]);
    for &l in labels {
        if l == 0 || l >= c {
            return Err(Error::LabelOutOfRange { id: l, size: c });
        }
    }
    let lp = log_probs.data();
    if min_alignable_length(labels) > t_len {
        return Ok(CtcOutput {
            loss: f64::INFINITY,
            grad: vec![0.0; lp.len()],
        });
    }

    // extended sequence: blank, l1, blank, l2, ..., blank
    let s_len = 2 * labels.len() + 1;
    let ext = |s: usize| if s % 2 == 0 { 0 } else { labels[s / 2] };
    let can_skip = |s: usize| s >= 2 && s % 2 == 1 && ext(s) != ext(s - 2);
    let neg = f64::NEG_INFINITY;

    let mut alpha = vec![neg; t_len * s_len];
    alpha[0] = lp[0];
    if s_len > 1 {
        alpha[1] = lp[ext(1)];
    }
    for t in 1..t_len {
        let (prev, cur) = alpha.split_at_mut(t * s_len);
        let prev = &prev[(t - 1) * s_len..];
        for s in 0..s_len {
            let mut a = prev[s];
            if s >= 1 {
                a = lse2(a, prev[s - 1]);
            }
            if can_skip(s) {
                a = lse2(a, prev[s - 2]);
            }
            cur[s] = if a == neg { neg } else { a + lp[t * c + ext(s)] };
        }
    }

    // beta excludes the emission at t
    let mut beta = vec![neg; t_len * s_len];
    let last = (t_len - 1) * s_len;
    beta[last + s_len - 1] = 0.0;
    if s_len > 1 {
        beta[last + s_len - 2] = 0.0;
    }
    for t in (0..t_len - 1).rev() {
        let (cur, next) = beta.split_at_mut((t + 1) * s_len);
        let cur = &mut cur[t * s_len..];
        let emit = |s: usize| lp[(t + 1) * c + ext(s)];
        for s in 0..s_len {
            let mut b = next[s] + emit(s);
            if s + 1 < s_len {
                b = lse2(b, next[s + 1] + emit(s + 1));
            }
            if s + 2 < s_len && can_skip(s + 2) {
                b = lse2(b, next[s + 2] + emit(s + 2));
            }
            cur[s] = b;
        }
    }

    let log_p = if s_len > 1 {
        lse2(alpha[last + s_len - 1], alpha[last + s_len - 2])
    } else {
        alpha[last]
    };
    if log_p == neg {
        return Ok(CtcOutput {
            loss: f64::INFINITY,
            grad: vec![0.0; lp.len()],
        });
    }

    let mut grad = vec![0.0; lp.len()];
    let mut acc = vec![neg; c];
    for t in 0..t_len {
        acc.fill(neg);
        for s in 0..s_len {
            let v = alpha[t * s_len + s] + beta[t * s_len + s];
            let k = ext(s);
            acc[k] = lse2(acc[k], v);
        }
        for k in 0..c {
            if acc[k] != neg {
                grad[t * c + k] = -(acc[k] - log_p).exp();
            }
        }
    }
    Ok(CtcOutput { loss: -log_p, grad })
}

/// Batch loss on a graph.
#[derive(Debug, Clone)]
pub struct BatchLoss {
    /// Mean over feasible utterances; `None` if every utterance was infeasible.
    pub loss: Option<Var>,
    pub per_utterance: Vec<f64>,
    /// Indices of utterances whose targets could not be aligned.
    pub skipped: Vec<usize>,
}

/// CTC over `log_probs: [B, T, C]`. Frames at or beyond `input_lengths[b]` are ignored.
pub fn ctc_batch_loss(
    g: &mut Graph,
    log_probs: Var,
    targets: &[Vec<usize>],
    input_lengths: &[usize],
) -> Result<BatchLoss> {
    let shape = g.shape(log_probs).to_vec();
    if shape.len() != 3 || shape[0] != targets.len() || shape[0] != input_lengths.len() {
        return Err(Error::shape(
            "ctc_batch_loss",
            format!(
                "log_probs {shape:?} with {} targets and {} lengths",
                targets.len(),
                input_lengths.len()
            ),
        ));
    }
    let (b, t_max, c) = (shape[0], shape[1], shape[2]);
    let data = g.value(log_probs).data();
    let mut grad = vec![0.0; data.len()];
    let mut total = 0.0;
    let mut per_utterance = Vec::with_capacity(b);
    let mut skipped = Vec::new();
    for i in 0..b {
        let t_len = input_lengths[i].min(t_max);
        if t_len == 0 {
            per_utterance.push(f64::INFINITY);
            skipped.push(i);
            continue;
        }
        let base = i * t_max * c;
        let rows = Tensor::new(vec![t_len, c], data[base..base + t_len * c].to_vec())?;
        let out = ctc_loss(&rows, &targets[i])?;
        per_utterance.push(out.loss);
        if !out.is_feasible() {
            skipped.push(i);
            continue;
        }
        total += out.loss;
        grad[base..base + t_len * c].copy_from_slice(&out.grad);
    }
    let n = b - skipped.len();
    if n == 0 {
        return Ok(BatchLoss {
            loss: None,
            per_utterance,
            skipped,
        });
    }
    let scale = 1.0 / n as f64;
    grad.iter_mut().for_each(|v| *v *= scale);
    let loss = g.scalar_with_grad(log_probs, total * scale, grad)?;
    Ok(BatchLoss {
        loss: Some(loss),
        per_utterance,
        skipped,
    })
}

/// Per-frame argmax; ties go to the lowest class index.
pub fn best_path(log_probs: &Tensor) -> Vec<usize> {
    let c = *log_probs.shape().last().unwrap_or(&1);
    log_probs
        .data()
        .chunks(c.max(1))
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Merges adjacent repeats, then drops blanks.
pub fn collapse(path: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &k in path {
        if Some(k) != prev && k != CharSet::BLANK {
            out.push(k);
        }
        prev = Some(k);
    }
    out
}

pub fn greedy_labels(log_probs: &Tensor) -> Vec<usize> {
    collapse(&best_path(log_probs))
}

pub fn greedy_decode(log_probs: &Tensor, cs: &CharSet) -> Result<String> {
    let ids = greedy_labels(log_probs);
    let labels: LabelSequence = cs.labels(ids)?;
    crate::text::decode_text(&labels, cs)
}
