use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    AdamW,
    Nesterov,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// One decoupled-weight-decay Adam update. `step` counts from 1.
pub fn adamw_update(
    theta: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    lr: f64,
    cfg: &AdamWConfig,
) -> Result<()> {
    check_lengths("adamw", theta.len(), &[grad.len(), m.len(), v.len()])?;
    if step == 0 {
        return Err(Error::Domain("adamw step count starts at 1".into()));
    }
    let bc1 = 1.0 - cfg.beta1.powf(step as f64);
    let bc2 = 1.0 - cfg.beta2.powf(step as f64);
    for i in 0..theta.len() {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        theta[i] -= lr * (m_hat / (v_hat.sqrt() + cfg.eps)) + lr * cfg.weight_decay * theta[i];
    }
    Ok(())
}

/// `v <- mu v - lr g; theta <- theta + v`, with `g` taken at the lookahead
/// point `theta + mu v`.
pub fn nesterov_update(theta: &mut [f64], grad: &[f64], velocity: &mut [f64], lr: f64, momentum: f64) -> Result<()> {
    check_lengths("nesterov", theta.len(), &[grad.len(), velocity.len()])?;
    for i in 0..theta.len() {
        velocity[i] = momentum * velocity[i] - lr * grad[i];
        theta[i] += velocity[i];
    }
    Ok(())
}

fn check_lengths(op: &'static str, n: usize, others: &[usize]) -> Result<()> {
    if others.iter().any(|&o| o != n) {
        return Err(Error::shape(op, format!("parameter has {n} values, state/gradient lengths {others:?}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    #[serde(default)]
    pub adamw: AdamWConfig,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
}

fn default_momentum() -> f64 {
    0.9
}

impl OptimizerConfig {
    pub fn adamw() -> Self {
        Self {
            kind: OptimizerKind::AdamW,
            adamw: AdamWConfig::default(),
            momentum: default_momentum(),
        }
    }

    pub fn nesterov() -> Self {
        Self {
            kind: OptimizerKind::Nesterov,
            ..Self::adamw()
        }
    }
}

/// Optimizer state for every trainable parameter of a store.
#[derive(Debug, Clone)]
pub struct Optimizer {
    cfg: OptimizerConfig,
    step: u64,
    /// AdamW: first moments. Nesterov: velocities.
    first: Vec<Vec<f64>>,
    /// AdamW second moments; empty for Nesterov.
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig, params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = params.ids().map(|id| vec![0.0; params.get(id).numel()]).collect();
        let second = match cfg.kind {
            OptimizerKind::AdamW => zeros.clone(),
            OptimizerKind::Nesterov => Vec::new(),
        };
        Self {
            cfg,
            step: 0,
            first: zeros,
            second,
        }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.cfg
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Parameters at which the next gradient should be evaluated: the
    /// lookahead `theta + mu v` for Nesterov, `None` when that is `theta`.
    pub fn lookahead(&self, params: &ParamStore) -> Result<Option<ParamStore>> {
        if self.cfg.kind != OptimizerKind::Nesterov || self.step == 0 {
            return Ok(None);
        }
        let mut ahead = params.clone();
        for id in params.trainable_ids().collect::<Vec<_>>() {
            let v = &self.first[id.index()];
            let shifted: Vec<f64> = params
                .get(id)
                .data()
                .iter()
                .zip(v)
                .map(|(t, v)| t + self.cfg.momentum * v)
                .collect();
            ahead.set(id, &shifted)?;
        }
        Ok(Some(ahead))
    }

    /// Applies one update with learning rate `lr`; `grads` is indexed by parameter.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor], lr: f64) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::shape(
                "optimizer",
                format!("{} gradients for {} parameters", grads.len(), params.len()),
            ));
        }
        self.step += 1;
        for id in params.trainable_ids().collect::<Vec<_>>() {
            let i = id.index();
            let mut theta = params.get(id).data().to_vec();
            let g = grads[i].data();
            match self.cfg.kind {
                OptimizerKind::AdamW => {
                    adamw_update(&mut theta, g, &mut self.first[i], &mut self.second[i], self.step, lr, &self.cfg.adamw)?
                }
                OptimizerKind::Nesterov => nesterov_update(&mut theta, g, &mut self.first[i], lr, self.cfg.momentum)?,
            }
            params.set(id, &theta)?;
        }
        Ok(())
    }

    /// State as a parameter store (`m.*`, `v.*` or `velocity.*`), for checkpoints.
    pub fn to_store(&self, params: &ParamStore) -> Result<ParamStore> {
        let mut out = ParamStore::new();
        let first_name = match self.cfg.kind {
            OptimizerKind::AdamW => "m",
            OptimizerKind::Nesterov => "velocity",
        };
        for id in params.ids() {
            let shape = params.get(id).shape().to_vec();
            let name = params.name(id);
            out.add(
                &format!("{first_name}.{name}"),
                Tensor::new(shape.clone(), self.first[id.index()].clone())?,
                true,
            )?;
            if let Some(s) = self.second.get(id.index()) {
                out.add(&format!("v.{name}"), Tensor::new(shape, s.clone())?, true)?;
            }
        }
        Ok(out)
    }

    pub fn from_store(cfg: OptimizerConfig, step: u64, params: &ParamStore, state: &ParamStore) -> Result<Self> {
        let mut opt = Self::new(cfg, params);
        opt.step = step;
        let first_name = match cfg.kind {
            OptimizerKind::AdamW => "m",
            OptimizerKind::Nesterov => "velocity",
        };
        let fetch = |prefix: &str, id| -> Result<Vec<f64>> {
            let name = format!("{prefix}.{}", params.name(id));
            let sid = state
                .id(&name)
                .ok_or_else(|| Error::Incompatible(format!("optimizer state lacks {name}")))?;
            if state.get(sid).shape() != params.get(id).shape() {
                return Err(Error::Incompatible(format!("optimizer state {name} has the wrong shape")));
            }
            Ok(state.get(sid).data().to_vec())
        };
        for id in params.ids() {
            opt.first[id.index()] = fetch(first_name, id)?;
            if cfg.kind == OptimizerKind::AdamW {
                opt.second[id.index()] = fetch("v", id)?;
            }
        }
        Ok(opt)
    }
}

/// Scales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}
