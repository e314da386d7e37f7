//! LSTM and GRU cells built from graph ops, and a bidirectional driver.
//!
//! Gate layout follows the common convention: LSTM weights hold `[i, f, g, o]`
//! blocks along the output axis, GRU weights hold `[r, z, n]`.

use super::{Graph, Var};
use crate::error::{Error, Result};

/// A recurrence over `[B, in]` inputs with `[B, H]` hidden output.
pub trait RecurrentCell {
    type State: Clone;

    fn input_size(&self) -> usize;
    fn hidden_size(&self) -> usize;
    fn zero_state(&self, g: &mut Graph, batch: usize) -> Self::State;
    fn hidden(state: &Self::State) -> Var;

    /// Input-to-gate projection for any leading shape `[.., in] -> [.., G]`.
    fn project(&self, g: &mut Graph, x: Var) -> Result<Var>;

    /// One step from an already projected input `[B, G]`.
    fn step_projected(&self, g: &mut Graph, xp: Var, state: &Self::State) -> Result<Self::State>;

    /// One step from a raw input `[B, in]`; returns the new hidden output and state.
    fn step(&self, g: &mut Graph, x: Var, state: &Self::State) -> Result<(Var, Self::State)> {
        let xp = self.project(g, x)?;
        let next = self.step_projected(g, xp, state)?;
        Ok((Self::hidden(&next), next))
    }
}

fn check_weight(g: &Graph, name: &str, v: Var, expect: &[usize]) -> Result<()> {
    if g.shape(v) != expect {
        return Err(Error::shape(
            "rnn",
            format!("{name} has shape {:?}, expected {expect:?}", g.shape(v)),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
pub struct LstmWeights {
    /// `[in, 4H]`
    pub w_ih: Var,
    /// `[H, 4H]`
    pub w_hh: Var,
    /// `[4H]`
    pub bias: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

#[derive(Debug, Clone)]
pub struct LstmCell {
    w: LstmWeights,
    input: usize,
    hidden: usize,
}

impl LstmCell {
    pub fn new(g: &Graph, w: LstmWeights) -> Result<Self> {
        let s = g.shape(w.w_ih);
        if s.len() != 2 || s[1] % 4 != 0 || s[1] == 0 {
            return Err(Error::shape("lstm", format!("w_ih shape {s:?}")));
        }
        let (input, hidden) = (s[0], s[1] / 4);
        check_weight(g, "w_hh", w.w_hh, &[hidden, 4 * hidden])?;
        check_weight(g, "bias", w.bias, &[4 * hidden])?;
        Ok(Self { w, input, hidden })
    }
}

impl RecurrentCell for LstmCell {
    type State = LstmState;

    fn input_size(&self) -> usize {
        self.input
    }

    fn hidden_size(&self) -> usize {
        self.hidden
    }

    fn zero_state(&self, g: &mut Graph, batch: usize) -> LstmState {
        let z = g.constant(super::Tensor::zeros(&[batch, self.hidden]));
        LstmState { h: z, c: z }
    }

    fn hidden(state: &LstmState) -> Var {
        state.h
    }

    fn project(&self, g: &mut Graph, x: Var) -> Result<Var> {
        g.linear(x, self.w.w_ih, Some(self.w.bias))
    }

    fn step_projected(&self, g: &mut Graph, xp: Var, s: &LstmState) -> Result<LstmState> {
        let h = self.hidden;
        let hp = g.matmul(s.h, self.w.w_hh)?;
        let gates = g.add(xp, hp)?;
        let i = g.slice(gates, 1, 0, h)?;
        let f = g.slice(gates, 1, h, h)?;
        let gg = g.slice(gates, 1, 2 * h, h)?;
        let o = g.slice(gates, 1, 3 * h, h)?;
        let (i, f, gg, o) = (g.sigmoid(i), g.sigmoid(f), g.tanh(gg), g.sigmoid(o));
        let keep = g.mul(f, s.c)?;
        let write = g.mul(i, gg)?;
        let c = g.add(keep, write)?;
        let tc = g.tanh(c);
        let h = g.mul(o, tc)?;
        Ok(LstmState { h, c })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GruWeights {
    /// `[in, 3H]`
    pub w_ih: Var,
    /// `[3H]`
    pub b_ih: Var,
    /// `[H, 3H]`
    pub w_hh: Var,
    /// `[3H]`
    pub b_hh: Var,
}

/// GRU with the reset gate applied after the hidden projection:
/// `n = tanh(W_in x + b_in + r * (W_hn h + b_hn))`, `h' = (1 - z) * n + z * h`.
#[derive(Debug, Clone)]
pub struct GruCell {
    w: GruWeights,
    input: usize,
    hidden: usize,
}

impl GruCell {
    pub fn new(g: &Graph, w: GruWeights) -> Result<Self> {
        let s = g.shape(w.w_ih);
        if s.len() != 2 || s[1] % 3 != 0 || s[1] == 0 {
            return Err(Error::shape("gru", format!("w_ih shape {s:?}")));
        }
        let (input, hidden) = (s[0], s[1] / 3);
        check_weight(g, "b_ih", w.b_ih, &[3 * hidden])?;
        check_weight(g, "w_hh", w.w_hh, &[hidden, 3 * hidden])?;
        check_weight(g, "b_hh", w.b_hh, &[3 * hidden])?;
        Ok(Self { w, input, hidden })
    }
}

impl RecurrentCell for GruCell {
    type State = Var;

    fn input_size(&self) -> usize {
        self.input
    }

    fn hidden_size(&self) -> usize {
        self.hidden
    }

    fn zero_state(&self, g: &mut Graph, batch: usize) -> Var {
        g.constant(super::Tensor::zeros(&[batch, self.hidden]))
    }

    fn hidden(state: &Var) -> Var {
        *state
    }

    fn project(&self, g: &mut Graph, x: Var) -> Result<Var> {
        g.linear(x, self.w.w_ih, Some(self.w.b_ih))
    }

    fn step_projected(&self, g: &mut Graph, xp: Var, h: &Var) -> Result<Var> {
        let n_h = self.hidden;
        let hp = g.linear(*h, self.w.w_hh, Some(self.w.b_hh))?;
        let xr = g.slice(xp, 1, 0, n_h)?;
        let xz = g.slice(xp, 1, n_h, n_h)?;
        let xn = g.slice(xp, 1, 2 * n_h, n_h)?;
        let hr = g.slice(hp, 1, 0, n_h)?;
        let hz = g.slice(hp, 1, n_h, n_h)?;
        let hn = g.slice(hp, 1, 2 * n_h, n_h)?;
        let r = g.add(xr, hr)?;
        let r = g.sigmoid(r);
        let z = g.add(xz, hz)?;
        let z = g.sigmoid(z);
        let rh = g.mul(r, hn)?;
        let n = g.add(xn, rh)?;
        let n = g.tanh(n);
        let d = g.sub(*h, n)?;
        let zd = g.mul(z, d)?;
        g.add(n, zd)
    }
}

/// Runs `fwd` left to right and `bwd` right to left over `xs: [B, T, in]`
/// from zero states.
///
/// Returns `outputs: [B, T, 2H]` (forward half first) and the final hidden
/// states `[B, 2, H]` (forward, then backward).
pub fn bidirectional_rnn<C: RecurrentCell>(
    g: &mut Graph,
    xs: Var,
    fwd: &C,
    bwd: &C,
) -> Result<(Var, Var)> {
    bidirectional_rnn_with_lengths(g, xs, None, fwd, bwd)
}

/// Like [`bidirectional_rnn`], but sequence `b` only occupies the first
/// `lengths[b]` steps. The backward direction starts at each sequence's own
/// last step and final states are taken there, so padding never reaches the
/// valid outputs.
pub fn bidirectional_rnn_with_lengths<C: RecurrentCell>(
    g: &mut Graph,
    xs: Var,
    lengths: Option<&[usize]>,
    fwd: &C,
    bwd: &C,
) -> Result<(Var, Var)> {
    let shape = g.shape(xs).to_vec();
    if shape.len() != 3 || shape[2] != fwd.input_size() || shape[2] != bwd.input_size() {
        return Err(Error::shape(
            "bidirectional_rnn",
            format!(
                "input {shape:?} for cells with input sizes {} and {}",
                fwd.input_size(),
                bwd.input_size()
            ),
        ));
    }
    if fwd.hidden_size() != bwd.hidden_size() {
        return Err(Error::shape(
            "bidirectional_rnn",
            format!("hidden sizes {} vs {}", fwd.hidden_size(), bwd.hidden_size()),
        ));
    }
    let (b, t_len, h) = (shape[0], shape[1], fwd.hidden_size());
    let lengths: Vec<usize> = match lengths {
        Some(l) => l.to_vec(),
        None => vec![t_len; b],
    };
    if t_len == 0 || lengths.len() != b || lengths.iter().any(|&l| l == 0 || l > t_len) {
        return Err(Error::shape(
            "bidirectional_rnn",
            format!("lengths {lengths:?} for input {shape:?}"),
        ));
    }

    let run = |g: &mut Graph, cell: &C, input: Var| -> Result<Var> {
        let proj = cell.project(g, input)?;
        let gate_width = g.shape(proj)[2];
        let mut state = cell.zero_state(g, b);
        let mut outs = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let xp = g.slice(proj, 1, t, 1)?;
            let xp = g.reshape(xp, &[b, gate_width])?;
            state = cell.step_projected(g, xp, &state)?;
            outs.push(g.reshape(C::hidden(&state), &[b, 1, h])?);
        }
        g.concat(&outs, 1)
    };
    let last_step = |g: &mut Graph, seq: Var| -> Result<Var> {
        let idx = (0..b)
            .flat_map(|bi| {
                let base = (bi * t_len + lengths[bi] - 1) * h;
                base..base + h
            })
            .collect();
        g.gather(seq, &[b, 1, h], idx)
    };

    let f_seq = run(g, fwd, xs)?;
    let f_final = last_step(g, f_seq)?;

    let reversed = reverse_within(g, xs, &lengths)?;
    let r_seq = run(g, bwd, reversed)?;
    let b_final = last_step(g, r_seq)?;
    let b_seq = reverse_within(g, r_seq, &lengths)?;

    let outputs = g.concat(&[f_seq, b_seq], 2)?;
    let finals = g.concat(&[f_final, b_final], 1)?;
    Ok((outputs, finals))
}

/// Reverses the first `lengths[b]` steps of each sequence in `[B, T, F]`;
/// later steps stay in place.
fn reverse_within(g: &mut Graph, x: Var, lengths: &[usize]) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let (t_len, f) = (shape[1], shape[2]);
    let mut idx = Vec::with_capacity(shape.iter().product());
    for (bi, &len) in lengths.iter().enumerate() {
        for t in 0..t_len {
            let src = if t < len { len - 1 - t } else { t };
            let base = (bi * t_len + src) * f;
            idx.extend(base..base + f);
        }
    }
    g.gather(x, &shape, idx)
}
