//! Central finite-difference gradient checks.

use super::{Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

pub const STEP: f64 = 1e-5;

/// Gradients smaller than this are compared absolutely rather than relatively.
pub const ABS_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub checked: usize,
    /// `(input, flat index, analytic, numeric)` of the worst entry.
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradReport {
    fn new() -> Self {
        Self {
            max_rel_err: 0.0,
            checked: 0,
            worst: None,
        }
    }

    fn record(&mut self, input: usize, index: usize, analytic: f64, numeric: f64) {
        let err = relative_error(analytic, numeric);
        self.checked += 1;
        if err > self.max_rel_err || self.worst.is_none() {
            self.max_rel_err = self.max_rel_err.max(err);
            self.worst = Some((input, index, analytic, numeric));
        }
    }
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(ABS_FLOOR)
}

fn scalar_of(g: &Graph, loss: Var) -> Result<f64> {
    let v = g.value(loss);
    if v.numel() != 1 {
        return Err(Error::shape("gradcheck", format!("loss shape {:?}", v.shape())));
    }
    Ok(v.data()[0])
}

/// Compares `backward` against central differences for every entry of `inputs`.
/// `f` builds a scalar loss from leaves holding the inputs.
pub fn check_gradients<F>(inputs: &[Tensor], mut f: F) -> Result<GradReport>
where
    F: FnMut(&mut Graph, &[Var]) -> Var,
{
    let mut eval = |values: &[Tensor], grads: bool| -> Result<(f64, Vec<Tensor>)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.leaf(t.clone(), true)).collect();
        let loss = f(&mut g, &vars);
        let value = scalar_of(&g, loss)?;
        let mut out = Vec::new();
        if grads {
            g.backward(loss)?;
            for (v, t) in vars.iter().zip(values) {
                out.push(g.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())));
            }
        }
        Ok((value, out))
    };
    let (_, analytic) = eval(inputs, true)?;
    let mut report = GradReport::new();
    let mut work = inputs.to_vec();
    for i in 0..inputs.len() {
        for j in 0..inputs[i].numel() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + STEP;
            let (plus, _) = eval(&work, false)?;
            work[i].data_mut()[j] = orig - STEP;
            let (minus, _) = eval(&work, false)?;
            work[i].data_mut()[j] = orig;
            report.record(i, j, analytic[i].data()[j], (plus - minus) / (2.0 * STEP));
        }
    }
    Ok(report)
}

/// Finite-difference check over the trainable parameters of a store.
/// Every `stride`-th scalar of each parameter is perturbed.
pub fn check_store_gradients<F>(store: &mut ParamStore, stride: usize, mut f: F) -> Result<GradReport>
where
    F: FnMut(&mut Graph, &ParamStore, &super::Bound) -> Result<Var>,
{
    let (_, analytic) = {
        let mut g = Graph::new();
        let bound = store.bind(&mut g);
        let loss = f(&mut g, store, &bound)?;
        let v = scalar_of(&g, loss)?;
        g.backward(loss)?;
        (v, bound.grads(&g, store))
    };
    let mut eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let bound = store.bind(&mut g);
        let loss = f(&mut g, store, &bound)?;
        scalar_of(&g, loss)
    };
    let mut report = GradReport::new();
    let ids: Vec<_> = store.trainable_ids().collect();
    for id in ids {
        let n = store.get(id).numel();
        for j in (0..n).step_by(stride.max(1)) {
            let orig = store.get(id).data()[j];
            store.value_mut(id).data_mut()[j] = orig + STEP;
            let plus = eval(store)?;
            store.value_mut(id).data_mut()[j] = orig - STEP;
            let minus = eval(store)?;
            store.value_mut(id).data_mut()[j] = orig;
            let idx = id.index();
            report.record(idx, j, analytic[idx].data()[j], (plus - minus) / (2.0 * STEP));
        }
    }
    Ok(report)
}
