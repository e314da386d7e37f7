//! Additive attention over decoder outputs.
//!
//! With decoder output `x: [B, T, d]` and final hidden states `h: [B, k, d/2]`
//! (zero-padded along the time axis to `T`):
//!
//! ```text
//! s       = v(tanh(w1 x + w2 h))        [B, T, d]
//! weights = softmax(s) over features
//! c       = weights * x
//! out     = concat(c, x)                [B, T, 2d]
//! ```

use crate::error::{Error, Result};
use crate::tensor::{Graph, Var};

#[derive(Debug, Clone, Copy)]
pub struct AttentionHead {
    /// `[d, d/2]`, no bias.
    pub w1: Var,
    /// `[d/2, d/2]`, no bias.
    pub w2: Var,
    /// `[d/2, d]`
    pub v: Var,
    /// `[d]`
    pub v_bias: Var,
}

impl AttentionHead {
    /// Feature width `d` the head was built for.
    pub fn dim(&self, g: &Graph) -> usize {
        g.shape(self.w1)[0]
    }

    pub fn validate(&self, g: &Graph) -> Result<()> {
        let w1 = g.shape(self.w1);
        if w1.len() != 2 || w1[0] % 2 != 0 || w1[0] == 0 || w1[1] != w1[0] / 2 {
            return Err(Error::shape("attention", format!("w1 shape {w1:?}; need [d, d/2] with d even")));
        }
        let (d, half) = (w1[0], w1[1]);
        let checks = [
            ("w2", self.w2, vec![half, half]),
            ("v", self.v, vec![half, d]),
            ("v_bias", self.v_bias, vec![d]),
        ];
        for (name, var, expect) in checks {
            if g.shape(var) != expect.as_slice() {
                return Err(Error::shape(
                    "attention",
                    format!("{name} has shape {:?}, expected {expect:?}", g.shape(var)),
                ));
            }
        }
        Ok(())
    }
}

/// Appends zero rows along axis 1: `[B, k, H] -> [B, target_k, H]`.
pub fn pad_hidden_state(g: &mut Graph, h: Var, target_k: usize) -> Result<Var> {
    let shape = g.shape(h).to_vec();
    if shape.len() != 3 {
        return Err(Error::shape("pad_hidden_state", format!("expected [B, k, H], got {shape:?}")));
    }
    if target_k < shape[1] {
        return Err(Error::shape(
            "pad_hidden_state",
            format!("cannot pad {} rows down to {target_k}", shape[1]),
        ));
    }
    if target_k == shape[1] {
        return Ok(h);
    }
    g.pad_to(h, 1, target_k)
}

/// Pre-softmax scores `v(tanh(w1 x + w2 h))`; `h` must already match `x` in time.
pub fn attention_scores(g: &mut Graph, x: Var, h: Var, head: &AttentionHead) -> Result<Var> {
    head.validate(g)?;
    let (sx, sh) = (g.shape(x).to_vec(), g.shape(h).to_vec());
    let d = head.dim(g);
    if sx.len() != 3 || sx[2] != d || sh.len() != 3 || sh[0] != sx[0] || sh[1] != sx[1] || sh[2] != d / 2 {
        return Err(Error::shape(
            "attention",
            format!("x {sx:?} and hidden {sh:?} for feature width {d}"),
        ));
    }
    let a = g.matmul(x, head.w1)?;
    let b = g.matmul(h, head.w2)?;
    let m = g.add(a, b)?;
    let m = g.tanh(m);
    g.linear(m, head.v, Some(head.v_bias))
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionOutput {
    /// `[B, T, 2d]`
    pub output: Var,
    /// `[B, T, d]`, each feature slice sums to 1.
    pub weights: Var,
}

/// Scores, normalizes and concatenates. `h: [B, k, d/2]` with `k <= T` is
/// zero-padded to `T` first.
pub fn attention_apply(g: &mut Graph, x: Var, h: Var, head: &AttentionHead) -> Result<AttentionOutput> {
    let t = match g.shape(x) {
        [_, t, _] => *t,
        other => return Err(Error::shape("attention", format!("x must be [B, T, d], got {other:?}"))),
    };
    let h = pad_hidden_state(g, h, t)?;
    let s = attention_scores(g, x, h, head)?;
    let weights = g.softmax(s);
    let c = g.mul(weights, x)?;
    let output = g.concat(&[c, x], 2)?;
    Ok(AttentionOutput { output, weights })
}
