use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const WARMUP_FRACTION: f64 = 0.3;
pub const START_DIVISOR: f64 = 25.0;
pub const FINAL_DIVISOR: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Linear warm-up from `max_lr / 25` to `max_lr` over the first 30% of
    /// steps, then cosine decay to `max_lr / 1e4` at the last step.
    #[default]
    OneCycle,
    Constant,
}

pub fn lr_at(schedule: Schedule, step: usize, total_steps: usize, max_lr: f64) -> Result<f64> {
    if step >= total_steps {
        return Err(Error::Domain(format!("step {step} outside 0..{total_steps}")));
    }
    if !(max_lr > 0.0 && max_lr.is_finite()) {
        return Err(Error::Domain(format!("max_lr must be positive, got {max_lr}")));
    }
    Ok(match schedule {
        Schedule::Constant => max_lr,
        Schedule::OneCycle => {
            let s = step as f64;
            let peak = WARMUP_FRACTION * total_steps as f64;
            let start = max_lr / START_DIVISOR;
            let end = max_lr / FINAL_DIVISOR;
            if s <= peak {
                max_lr - (max_lr - start) * (1.0 - s / peak)
            } else {
                let p = (s - peak) / ((total_steps - 1) as f64 - peak);
                end + (max_lr - end) * 0.5 * (1.0 + (PI * p).cos())
            }
        }
    })
}
