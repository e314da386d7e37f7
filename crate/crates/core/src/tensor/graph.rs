use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{split_axis, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddAlong { x: Var, b: Var, axis: usize },
    ScaleAlong { x: Var, s: Var, axis: usize },
    MatMul(Var, Var),
    Conv2d {
        x: Var,
        k: Var,
        bias: Option<Var>,
        stride: (usize, usize),
        pad: (usize, usize),
    },
    Standardize {
        x: Var,
        axis: usize,
        inv_std: Vec<f64>,
    },
    Gelu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Mask(Var, Vec<f64>),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Concat(Vec<Var>, usize),
    Slice { x: Var, axis: usize, start: usize },
    Pad { x: Var, axis: usize },
    Sum(Var),
    Gather(Var, Vec<usize>),
    ScalarGrad { x: Var, grad: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Append-only record of a forward computation.
///
/// Gradients from [`Graph::backward`] accumulate on leaf nodes until
/// [`Graph::zero_grad`].
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_COEF: f64 = 0.044_715;

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// First node holding a NaN or infinite value, if any.
    pub fn first_non_finite(&self) -> Option<Var> {
        self.nodes
            .iter()
            .position(|n| !n.value.is_finite())
            .map(Var)
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn map(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let t = &self.nodes[x.0].value;
        let data = t.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(t.shape().to_vec(), data).unwrap();
        self.push(value, op, &[x])
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data).unwrap();
        self.push(value, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.map(x, Op::Scale(x, c), |v| v * c)
    }

    fn along_check(&self, op: &'static str, x: Var, p: Var, axis: usize) -> Result<()> {
        let (sx, sp) = (self.shape(x), self.shape(p));
        if axis >= sx.len() || sp.len() != 1 || sp[0] != sx[axis] {
            return Err(Error::shape(
                op,
                format!("{sp:?} along axis {axis} of {sx:?}"),
            ));
        }
        Ok(())
    }

    /// `y[.., i, ..] = x[.., i, ..] + b[i]` with `i` indexing `axis`.
    pub fn add_along(&mut self, x: Var, b: Var, axis: usize) -> Result<Var> {
        self.along_check("add_along", x, b, axis)?;
        let value = along(&self.nodes[x.0].value, &self.nodes[b.0].value, axis, |v, p| v + p);
        Ok(self.push(value, Op::AddAlong { x, b, axis }, &[x, b]))
    }

    /// `y[.., i, ..] = x[.., i, ..] * s[i]` with `i` indexing `axis`.
    pub fn scale_along(&mut self, x: Var, s: Var, axis: usize) -> Result<Var> {
        self.along_check("scale_along", x, s, axis)?;
        let value = along(&self.nodes[x.0].value, &self.nodes[s.0].value, axis, |v, p| v * p);
        Ok(self.push(value, Op::ScaleAlong { x, s, axis }, &[x, s]))
    }

    /// Bias over the last axis.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let axis = self.shape(x).len().saturating_sub(1);
        self.add_along(x, b, axis)
    }

    /// `x[.., k] · w[k, n] -> [.., n]`.
    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.is_empty() || sw.len() != 2 || sx[sx.len() - 1] != sw[0] {
            return Err(Error::shape("matmul", format!("{sx:?} x {sw:?}")));
        }
        let (k, n) = (sw[0], sw[1]);
        let rows = self.value(x).numel() / k;
        let mut out = vec![0.0; rows * n];
        matmul_into(
            self.value(x).data(),
            self.value(w).data(),
            &mut out,
            rows,
            k,
            n,
        );
        let mut shape = sx;
        *shape.last_mut().unwrap() = n;
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::MatMul(x, w), &[x, w]))
    }

    /// Dense layer `x W (+ b)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_bias(y, b).map_err(|_| {
                Error::shape(
                    "linear",
                    format!(
                        "bias {:?} for output {:?}",
                        self.shape(b),
                        self.shape(y)
                    ),
                )
            }),
            None => Ok(y),
        }
    }

    /// 2-D cross-correlation over `[B, C, H, W]` with kernel `[O, C, KH, KW]`.
    /// Output extents are `floor((H + 2p - KH) / stride) + 1`.
    pub fn conv2d(
        &mut self,
        x: Var,
        k: Var,
        bias: Option<Var>,
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Result<Var> {
        let (sx, sk) = (self.shape(x).to_vec(), self.shape(k).to_vec());
        if sx.len() != 4 || sk.len() != 4 || sx[1] != sk[1] {
            return Err(Error::shape("conv2d", format!("input {sx:?}, kernel {sk:?}")));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::shape("conv2d", "zero stride"));
        }
        if let Some(b) = bias {
            if self.shape(b) != [sk[0]] {
                return Err(Error::shape(
                    "conv2d",
                    format!("bias {:?} for {} output channels", self.shape(b), sk[0]),
                ));
            }
        }
        let geo = ConvGeometry::new(&sx, &sk, stride, pad)?;
        let mut out = vec![0.0; geo.b * geo.o * geo.ho * geo.wo];
        if let Some(b) = bias {
            let bv = self.value(b).data();
            let plane = geo.ho * geo.wo;
            for (i, chunk) in out.chunks_mut(plane).enumerate() {
                chunk.fill(bv[i % geo.o]);
            }
        }
        geo.forward(self.value(x).data(), self.value(k).data(), &mut out);
        let value = Tensor::new(vec![geo.b, geo.o, geo.ho, geo.wo], out)?;
        let mut parents = vec![x, k];
        parents.extend(bias);
        Ok(self.push(
            value,
            Op::Conv2d {
                x,
                k,
                bias,
                stride,
                pad,
            },
            &parents,
        ))
    }

    /// Zero-mean unit-variance along `axis` (biased variance, `eps` guard).
    pub fn standardize(&mut self, x: Var, axis: usize, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(Error::shape(
                "standardize",
                format!("axis {axis} of {shape:?}"),
            ));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        let mut inv_std = vec![0.0; outer * inner];
        for o in 0..outer {
            for r in 0..inner {
                let idx = |i: usize| (o * n + i) * inner + r;
                let mean = (0..n).map(|i| src[idx(i)]).sum::<f64>() / n as f64;
                let var = (0..n).map(|i| (src[idx(i)] - mean).powi(2)).sum::<f64>() / n as f64;
                let is = 1.0 / (var + eps).sqrt();
                inv_std[o * inner + r] = is;
                for i in 0..n {
                    out[idx(i)] = (src[idx(i)] - mean) * is;
                }
            }
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Standardize { x, axis, inv_std }, &[x]))
    }

    /// Layer normalization along `axis` with per-position affine `gamma`, `beta`.
    pub fn layer_norm(
        &mut self,
        x: Var,
        axis: usize,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<Var> {
        let z = self.standardize(x, axis, eps)?;
        let z = self.scale_along(z, gamma, axis)?;
        self.add_along(z, beta, axis)
    }

    /// Tanh-approximated GeLU.
    pub fn gelu(&mut self, x: Var) -> Var {
        self.map(x, Op::Gelu(x), |v| {
            0.5 * v * (1.0 + (SQRT_2_OVER_PI * (v + GELU_COEF * v * v * v)).tanh())
        })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, Op::Tanh(x), f64::tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, Op::Sigmoid(x), sigmoid)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let n = *t.shape().last().unwrap_or(&1);
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(n.max(1)) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        let value = Tensor::new(t.shape().to_vec(), data).unwrap();
        self.push(value, Op::Softmax(x), &[x])
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let n = *t.shape().last().unwrap_or(&1);
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(n.max(1)) {
            let lse = logsumexp(row);
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let value = Tensor::new(t.shape().to_vec(), data).unwrap();
        self.push(value, Op::LogSoftmax(x), &[x])
    }

    /// Inverted dropout with a mask drawn from `seed`.
    ///
    /// Identity (no new node) when `training` is false or `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64, training: bool, seed: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Domain(format!("dropout probability must be in [0, 1), got {p}")));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(x).numel())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let t = self.value(x);
        let data = t.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Mask(x, mask), &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::shape("permute", format!("{perm:?} for {shape:?}")));
        }
        let value = permute_tensor(self.value(x), perm);
        Ok(self.push(value, Op::Permute(x, perm.to_vec()), &[x]))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(*xs.first().ok_or_else(|| Error::shape("concat", "no inputs"))?)
            .to_vec();
        if axis >= first.len() {
            return Err(Error::shape("concat", format!("axis {axis} of {first:?}")));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", format!("{s:?} vs {first:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &v in xs {
                let n = self.shape(v)[axis];
                let src = self.value(v).data();
                out.extend_from_slice(&src[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Concat(xs.to_vec(), axis), xs))
    }

    /// `x[.., start..start + len, ..]` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::shape(
                "slice",
                format!("{start}..{} on axis {axis} of {shape:?}", start + len),
            ));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut new_shape = shape;
        new_shape[axis] = len;
        let value = Tensor::new(new_shape, out)?;
        Ok(self.push(value, Op::Slice { x, axis, start }, &[x]))
    }

    /// Appends zeros along `axis` until it has extent `target`.
    pub fn pad_to(&mut self, x: Var, axis: usize, target: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || target < shape[axis] {
            return Err(Error::shape(
                "pad",
                format!("cannot pad axis {axis} of {shape:?} to {target}"),
            ));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![0.0; outer * target * inner];
        for o in 0..outer {
            out[o * target * inner..(o * target + n) * inner]
                .copy_from_slice(&src[o * n * inner..(o + 1) * n * inner]);
        }
        let mut new_shape = shape;
        new_shape[axis] = target;
        let value = Tensor::new(new_shape, out)?;
        Ok(self.push(value, Op::Pad { x, axis }, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// `out.flat[i] = x.flat[indices[i]]`, reshaped to `shape`.
    pub fn gather(&mut self, x: Var, shape: &[usize], indices: Vec<usize>) -> Result<Var> {
        let n = self.value(x).numel();
        if shape.iter().product::<usize>() != indices.len() || indices.iter().any(|&i| i >= n) {
            return Err(Error::shape(
                "gather",
                format!("{} indices into {:?} for output {shape:?}", indices.len(), self.shape(x)),
            ));
        }
        let src = self.value(x).data();
        let data = indices.iter().map(|&i| src[i]).collect();
        let value = Tensor::new(shape.to_vec(), data)?;
        Ok(self.push(value, Op::Gather(x, indices), &[x]))
    }

    /// Scalar node with an externally computed value and gradient w.r.t. `x`.
    pub fn scalar_with_grad(&mut self, x: Var, value: f64, grad: Vec<f64>) -> Result<Var> {
        if grad.len() != self.value(x).numel() {
            return Err(Error::shape(
                "scalar_with_grad",
                format!("{} gradient entries for {:?}", grad.len(), self.shape(x)),
            ));
        }
        Ok(self.push(Tensor::scalar(value), Op::ScalarGrad { x, grad }, &[x]))
    }

    /// Back-propagates from a scalar `loss`, accumulating into leaf gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                let node = &mut self.nodes[i];
                match &mut node.grad {
                    Some(g) => g.data_mut().iter_mut().zip(&dy).for_each(|(a, b)| *a += b),
                    None => node.grad = Some(Tensor::new(node.value.shape().to_vec(), dy)?),
                }
                continue;
            }
            self.propagate(i, &dy, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, dy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let val = |v: Var| self.nodes[v.0].value.data();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if self.nodes[v.0].requires_grad {
                let n = self.nodes[v.0].value.numel();
                f(grads[v.0].get_or_insert_with(|| vec![0.0; n]));
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, &mut |g| add_into(g, dy));
                acc(*b, &mut |g| add_into(g, dy));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |g| add_into(g, dy));
                acc(*b, &mut |g| g.iter_mut().zip(dy).for_each(|(g, d)| *g -= d));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc(*a, &mut |g| {
                    for ((g, d), y) in g.iter_mut().zip(dy).zip(vb) {
                        *g += d * y;
                    }
                });
                acc(*b, &mut |g| {
                    for ((g, d), x) in g.iter_mut().zip(dy).zip(va) {
                        *g += d * x;
                    }
                });
            }
            Op::Scale(x, c) => acc(*x, &mut |g| g.iter_mut().zip(dy).for_each(|(g, d)| *g += d * c)),
            Op::AddAlong { x, b, axis } => {
                acc(*x, &mut |g| add_into(g, dy));
                let (outer, n, inner) = split_axis(self.nodes[x.0].value.shape(), *axis);
                acc(*b, &mut |g| {
                    for o in 0..outer {
                        for (j, gj) in g.iter_mut().enumerate().take(n) {
                            let base = (o * n + j) * inner;
                            *gj += dy[base..base + inner].iter().sum::<f64>();
                        }
                    }
                });
            }
            Op::ScaleAlong { x, s, axis } => {
                let (outer, n, inner) = split_axis(self.nodes[x.0].value.shape(), *axis);
                let (vx, vs) = (val(*x), val(*s));
                acc(*x, &mut |g| {
                    for o in 0..outer {
                        for j in 0..n {
                            let base = (o * n + j) * inner;
                            for r in base..base + inner {
                                g[r] += dy[r] * vs[j];
                            }
                        }
                    }
                });
                acc(*s, &mut |g| {
                    for o in 0..outer {
                        for (j, gj) in g.iter_mut().enumerate().take(n) {
                            let base = (o * n + j) * inner;
                            *gj += (base..base + inner).map(|r| dy[r] * vx[r]).sum::<f64>();
                        }
                    }
                });
            }
            Op::MatMul(x, w) => {
                let sw = self.nodes[w.0].value.shape();
                let (k, n) = (sw[0], sw[1]);
                let rows = dy.len() / n;
                let (vx, vw) = (val(*x), val(*w));
                acc(*x, &mut |g| {
                    for r in 0..rows {
                        let dyr = &dy[r * n..(r + 1) * n];
                        let gr = &mut g[r * k..(r + 1) * k];
                        for (kk, gv) in gr.iter_mut().enumerate() {
                            let wr = &vw[kk * n..(kk + 1) * n];
                            *gv += dyr.iter().zip(wr).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                });
                acc(*w, &mut |g| {
                    for r in 0..rows {
                        let dyr = &dy[r * n..(r + 1) * n];
                        let xr = &vx[r * k..(r + 1) * k];
                        for (kk, &xv) in xr.iter().enumerate() {
                            if xv == 0.0 {
                                continue;
                            }
                            let gr = &mut g[kk * n..(kk + 1) * n];
                            for (gv, d) in gr.iter_mut().zip(dyr) {
                                *gv += xv * d;
                            }
                        }
                    }
                });
            }
            Op::Conv2d {
                x,
                k,
                bias,
                stride,
                pad,
            } => {
                let geo = ConvGeometry::new(
                    self.nodes[x.0].value.shape(),
                    self.nodes[k.0].value.shape(),
                    *stride,
                    *pad,
                )
                .expect("geometry validated in forward");
                let (vx, vk) = (val(*x), val(*k));
                acc(*x, &mut |g| geo.backward_input(dy, vk, g));
                acc(*k, &mut |g| geo.backward_kernel(dy, vx, g));
                if let Some(b) = bias {
                    let plane = geo.ho * geo.wo;
                    acc(*b, &mut |g| {
                        for (i, chunk) in dy.chunks(plane).enumerate() {
                            g[i % geo.o] += chunk.iter().sum::<f64>();
                        }
                    });
                }
            }
            Op::Standardize { x, axis, inv_std } => {
                let (outer, n, inner) = split_axis(node.value.shape(), *axis);
                let z = node.value.data();
                acc(*x, &mut |g| {
                    for o in 0..outer {
                        for r in 0..inner {
                            let idx = |i: usize| (o * n + i) * inner + r;
                            let (mut s1, mut s2) = (0.0, 0.0);
                            for i in 0..n {
                                s1 += dy[idx(i)];
                                s2 += dy[idx(i)] * z[idx(i)];
                            }
                            let is = inv_std[o * inner + r];
                            let nf = n as f64;
                            for i in 0..n {
                                g[idx(i)] += is / nf * (nf * dy[idx(i)] - s1 - z[idx(i)] * s2);
                            }
                        }
                    }
                });
            }
            Op::Gelu(x) => {
                let vx = val(*x);
                acc(*x, &mut |g| {
                    for ((g, d), &v) in g.iter_mut().zip(dy).zip(vx) {
                        let u = SQRT_2_OVER_PI * (v + GELU_COEF * v * v * v);
                        let t = u.tanh();
                        let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_COEF * v * v);
                        *g += d * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
                    }
                });
            }
            Op::Tanh(x) => {
                let y = node.value.data();
                acc(*x, &mut |g| {
                    for ((g, d), y) in g.iter_mut().zip(dy).zip(y) {
                        *g += d * (1.0 - y * y);
                    }
                });
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                acc(*x, &mut |g| {
                    for ((g, d), y) in g.iter_mut().zip(dy).zip(y) {
                        *g += d * y * (1.0 - y);
                    }
                });
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let n = *node.value.shape().last().unwrap_or(&1);
                acc(*x, &mut |g| {
                    for ((gr, dr), yr) in g.chunks_mut(n).zip(dy.chunks(n)).zip(y.chunks(n)) {
                        let dot: f64 = dr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for ((g, d), y) in gr.iter_mut().zip(dr).zip(yr) {
                            *g += y * (d - dot);
                        }
                    }
                });
            }
            Op::LogSoftmax(x) => {
                let y = node.value.data();
                let n = *node.value.shape().last().unwrap_or(&1);
                acc(*x, &mut |g| {
                    for ((gr, dr), yr) in g.chunks_mut(n).zip(dy.chunks(n)).zip(y.chunks(n)) {
                        let total: f64 = dr.iter().sum();
                        for ((g, d), y) in gr.iter_mut().zip(dr).zip(yr) {
                            *g += d - y.exp() * total;
                        }
                    }
                });
            }
            Op::Mask(x, mask) => acc(*x, &mut |g| {
                for ((g, d), m) in g.iter_mut().zip(dy).zip(mask) {
                    *g += d * m;
                }
            }),
            Op::Reshape(x) => acc(*x, &mut |g| add_into(g, dy)),
            Op::Permute(x, perm) => {
                let mut inverse = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inverse[p] = i;
                }
                let back = permute_tensor(
                    &Tensor::new(node.value.shape().to_vec(), dy.to_vec()).unwrap(),
                    &inverse,
                );
                acc(*x, &mut |g| add_into(g, back.data()));
            }
            Op::Concat(xs, axis) => {
                let (outer, total, inner) = split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for &v in xs {
                    let n = self.nodes[v.0].value.shape()[*axis];
                    acc(v, &mut |g| {
                        for o in 0..outer {
                            let src = (o * total + offset) * inner;
                            add_into(&mut g[o * n * inner..(o + 1) * n * inner], &dy[src..src + n * inner]);
                        }
                    });
                    offset += n;
                }
            }
            Op::Slice { x, axis, start } => {
                let (outer, n, inner) = split_axis(self.nodes[x.0].value.shape(), *axis);
                let len = node.value.shape()[*axis];
                acc(*x, &mut |g| {
                    for o in 0..outer {
                        let base = (o * n + start) * inner;
                        add_into(&mut g[base..base + len * inner], &dy[o * len * inner..(o + 1) * len * inner]);
                    }
                });
            }
            Op::Pad { x, axis } => {
                let (outer, n, inner) = split_axis(self.nodes[x.0].value.shape(), *axis);
                let target = node.value.shape()[*axis];
                acc(*x, &mut |g| {
                    for o in 0..outer {
                        let src = o * target * inner;
                        add_into(&mut g[o * n * inner..(o + 1) * n * inner], &dy[src..src + n * inner]);
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |g| g.iter_mut().for_each(|g| *g += dy[0])),
            Op::Gather(x, indices) => acc(*x, &mut |g| {
                for (&i, d) in indices.iter().zip(dy) {
                    g[i] += d;
                }
            }),
            Op::ScalarGrad { x, grad } => acc(*x, &mut |g| {
                for (g, v) in g.iter_mut().zip(grad) {
                    *g += dy[0] * v;
                }
            }),
        }
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn add_into(g: &mut [f64], d: &[f64]) {
    for (g, d) in g.iter_mut().zip(d) {
        *g += d;
    }
}

fn along(x: &Tensor, p: &Tensor, axis: usize, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let (outer, n, inner) = split_axis(x.shape(), axis);
    let src = x.data();
    let pv = p.data();
    let mut out = vec![0.0; src.len()];
    for o in 0..outer {
        for (j, &pj) in pv.iter().enumerate().take(n) {
            let base = (o * n + j) * inner;
            for r in base..base + inner {
                out[r] = f(src[r], pj);
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out).unwrap()
}

fn matmul_into(x: &[f64], w: &[f64], out: &mut [f64], rows: usize, k: usize, n: usize) {
    for r in 0..rows {
        let or = &mut out[r * n..(r + 1) * n];
        for (kk, &xv) in x[r * k..(r + 1) * k].iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            for (o, wv) in or.iter_mut().zip(&w[kk * n..(kk + 1) * n]) {
                *o += xv * wv;
            }
        }
    }
}

fn permute_tensor(t: &Tensor, perm: &[usize]) -> Tensor {
    let shape = t.shape();
    let rank = shape.len();
    let mut in_strides = vec![1; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(t.numel());
    let mut idx = vec![0usize; rank];
    let src = t.data();
    for _ in 0..t.numel() {
        let off: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        out.push(src[off]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    Tensor::new(out_shape, out).unwrap()
}

struct ConvGeometry {
    b: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
}

impl ConvGeometry {
    fn new(sx: &[usize], sk: &[usize], stride: (usize, usize), pad: (usize, usize)) -> Result<Self> {
        let (h, w) = (sx[2], sx[3]);
        let (kh, kw) = (sk[2], sk[3]);
        if h + 2 * pad.0 < kh || w + 2 * pad.1 < kw {
            return Err(Error::shape(
                "conv2d",
                format!("input {h}x{w} with padding {pad:?} is smaller than kernel {kh}x{kw}"),
            ));
        }
        Ok(Self {
            b: sx[0],
            c: sx[1],
            h,
            w,
            o: sk[0],
            kh,
            kw,
            ho: (h + 2 * pad.0 - kh) / stride.0 + 1,
            wo: (w + 2 * pad.1 - kw) / stride.1 + 1,
            sh: stride.0,
            sw: stride.1,
            ph: pad.0,
            pw: pad.1,
        })
    }

    /// Valid output columns for kernel column `kj`.
    fn col_range(&self, kj: usize) -> (usize, usize) {
        let lo = if self.pw > kj {
            (self.pw - kj).div_ceil(self.sw)
        } else {
            0
        };
        let hi = if self.w + self.pw > kj {
            ((self.w - 1 + self.pw - kj) / self.sw + 1).min(self.wo)
        } else {
            0
        };
        (lo, hi.max(lo))
    }

    fn input_row(&self, oh: usize, ki: usize) -> Option<usize> {
        let ih = (oh * self.sh + ki) as isize - self.ph as isize;
        (ih >= 0 && (ih as usize) < self.h).then_some(ih as usize)
    }

    /// Calls `f(x_offset, out_offset, kernel_offset, cols)` for every
    /// contiguous run of output columns.
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize, (usize, usize))) {
        for b in 0..self.b {
            for o in 0..self.o {
                for c in 0..self.c {
                    let in_base = (b * self.c + c) * self.h * self.w;
                    let out_base = (b * self.o + o) * self.ho * self.wo;
                    for ki in 0..self.kh {
                        for kj in 0..self.kw {
                            let kidx = ((o * self.c + c) * self.kh + ki) * self.kw + kj;
                            let cols = self.col_range(kj);
                            if cols.0 >= cols.1 {
                                continue;
                            }
                            for oh in 0..self.ho {
                                if let Some(ih) = self.input_row(oh, ki) {
                                    // column offset of ow = 0 (may be "negative", compensated by cols.0)
                                    let x_row = in_base + ih * self.w + kj;
                                    f(x_row, out_base + oh * self.wo, kidx, cols);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn forward(&self, x: &[f64], k: &[f64], out: &mut [f64]) {
        let (sw, pw) = (self.sw, self.pw);
        self.for_each_run(|x_row, o_row, kidx, (lo, hi)| {
            let wv = k[kidx];
            for ow in lo..hi {
                out[o_row + ow] += wv * x[x_row + ow * sw - pw];
            }
        });
    }

    fn backward_input(&self, dy: &[f64], k: &[f64], gx: &mut [f64]) {
        let (sw, pw) = (self.sw, self.pw);
        self.for_each_run(|x_row, o_row, kidx, (lo, hi)| {
            let wv = k[kidx];
            for ow in lo..hi {
                gx[x_row + ow * sw - pw] += wv * dy[o_row + ow];
            }
        });
    }

    fn backward_kernel(&self, dy: &[f64], x: &[f64], gk: &mut [f64]) {
        let (sw, pw) = (self.sw, self.pw);
        self.for_each_run(|x_row, o_row, kidx, (lo, hi)| {
            let mut s = 0.0;
            for ow in lo..hi {
                s += dy[o_row + ow] * x[x_row + ow * sw - pw];
            }
            gk[kidx] += s;
        });
    }
}
