//! Optimizers, learning-rate schedule, early stopping, checkpoints and the
//! training loop.

pub mod checkpoint;
mod early_stop;
mod evaluate;
mod optim;
mod schedule;

use serde::{Deserialize, Serialize};

use crate::audio::{spec_augment, SpecAugmentConfig};
use crate::ctc::ctc_batch_loss;
use crate::data::{batch_indices, collate, Utterance};
use crate::error::{Error, Result};
use crate::model::{AcousticModel, Mode};
use crate::tensor::{Graph, ParamStore};
use crate::text::CharSet;

pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use early_stop::{EarlyStopping, Verdict};
pub use evaluate::{evaluate, summarize, transcribe_all, EvalSummary, UtteranceResult};
pub use optim::{
    adamw_update, clip_global_norm, nesterov_update, AdamWConfig, Optimizer, OptimizerConfig, OptimizerKind,
};
pub use schedule::{lr_at, Schedule};

fn default_clip() -> f64 {
    5.0
}
fn default_momentum() -> f64 {
    0.9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(rename = "max_learning_rate")]
    pub max_lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs without validation improvement before stopping.
    #[serde(rename = "early_stopping")]
    pub early_stop_patience: usize,
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_clip")]
    pub grad_clip: f64,
    /// Stop once validation WER is 0 and validation loss is below this.
    #[serde(default)]
    pub target_loss: Option<f64>,
    #[serde(default)]
    pub spec_augment: Option<SpecAugmentConfig>,
    #[serde(default)]
    pub adamw: AdamWConfig,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(format!("train: {m}")));
        if !(self.max_lr > 0.0 && self.max_lr.is_finite()) {
            return fail(format!("max_learning_rate must be positive, got {}", self.max_lr));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.early_stop_patience == 0 {
            return fail("batch_size, epochs and early_stopping must be at least 1".into());
        }
        if !(self.grad_clip > 0.0) {
            return fail(format!("grad_clip must be positive, got {}", self.grad_clip));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum {} outside [0, 1)", self.momentum));
        }
        Ok(())
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        OptimizerConfig {
            kind: self.optimizer,
            adamw: self.adamw,
            momentum: self.momentum,
        }
    }
}

/// One line of the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub steps: u64,
    pub train_loss: f64,
    /// Utterances left out of the loss because their target could not be aligned.
    pub skipped: usize,
    pub lr: f64,
    pub val_loss: f64,
    pub val_wer: f64,
    pub val_cer: f64,
    pub improved: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EpochsExhausted,
    EarlyStopping,
    TargetReached,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stop: StopReason,
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Trains `model` in place and leaves it holding the best weights by
/// validation (WER, then loss). `on_epoch` sees every epoch's record and
/// the current state.
pub fn train<F>(
    model: &mut AcousticModel,
    opt: &mut Optimizer,
    train_set: &[Utterance],
    val_set: &[Utterance],
    cs: &CharSet,
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&EpochRecord, &AcousticModel, &Optimizer) -> Result<()>,
{
    cfg.validate()?;
    if model.config().charset_size != cs.len() {
        return Err(Error::Config(format!(
            "model predicts {} classes but the charset has {}",
            model.config().charset_size,
            cs.len()
        )));
    }
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Training("training and validation sets must be non-empty".into()));
    }
    let batches_per_epoch = train_set.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * batches_per_epoch;
    let augment = cfg.spec_augment.as_ref().filter(|a| !a.is_noop());

    let mut stopper = EarlyStopping::new(cfg.early_stop_patience);
    let mut best: Option<ParamStore> = None;
    let mut best_epoch = 0;
    let mut history = Vec::new();
    let mut stop = StopReason::EpochsExhausted;
    let mut global = 0usize;

    for epoch in 1..=cfg.epochs {
        let order = batch_indices(train_set.len(), cfg.batch_size, Some(mix(cfg.seed, epoch as u64, 0)));
        let (mut loss_sum, mut stepped, mut skipped, mut lr) = (0.0, 0usize, 0usize, 0.0);
        for (b, idx) in order.iter().enumerate() {
            lr = lr_at(cfg.schedule, global, total_steps, cfg.max_lr)?;
            global += 1;
            let members: Vec<Utterance> = idx
                .iter()
                .map(|&i| match augment {
                    Some(a) => {
                        let mut u = train_set[i].clone();
                        let ac = SpecAugmentConfig {
                            seed: mix(cfg.seed ^ a.seed, epoch as u64, i as u64 + 1),
                            ..a.clone()
                        };
                        u.features = spec_augment(&u.features, &ac);
                        u
                    }
                    None => train_set[i].clone(),
                })
                .collect();
            let full = collate(&members, model.config())?;
            skipped += full.feasible.iter().filter(|f| !**f).count();
            let Some(batch) = full.feasible_only() else {
                log::warn!("epoch {epoch} batch {b}: every target is infeasible, skipping");
                continue;
            };

            let ahead = opt.lookahead(model.params())?;
            let store = ahead.as_ref().unwrap_or(model.params());
            let mut g = Graph::new();
            let bound = store.bind(&mut g);
            let x = g.constant(batch.features.clone());
            let seed = mix(cfg.seed, global as u64, 1);
            let out = model.forward(&mut g, &bound, x, &batch.feature_lengths, Mode::Train { seed })?;
            let bl = ctc_batch_loss(&mut g, out.log_probs, &batch.labels, &out.output_lengths)?;
            let Some(loss) = bl.loss else {
                continue;
            };
            let value = g.value(loss).data()[0];
            let names = || {
                batch
                    .audio_paths
                    .iter()
                    .map(|p| p.display().to_string())
                    .collect::<Vec<_>>()
                    .join(", ")
            };
            if !value.is_finite() {
                return Err(Error::Training(format!(
                    "loss is {value} at epoch {epoch}, batch {b} ({})",
                    names()
                )));
            }
            g.backward(loss)?;
            let mut grads = bound.grads(&g, store);
            let norm = clip_global_norm(&mut grads, cfg.grad_clip);
            if !norm.is_finite() {
                return Err(Error::Training(format!(
                    "gradient norm is {norm} at epoch {epoch}, batch {b} ({})",
                    names()
                )));
            }
            drop(ahead);
            opt.step(model.params_mut(), &grads, lr)?;
            if let Some((mean, var)) = out.batch_norm_stats {
                model.update_batch_norm(&mean, &var)?;
            }
            loss_sum += value;
            stepped += 1;
        }
        if stepped == 0 {
            return Err(Error::Training(format!(
                "epoch {epoch}: no batch had an alignable target; check transcripts against audio lengths"
            )));
        }

        let val = evaluate(model, val_set, cs, cfg.batch_size)?;
        let key = (val.wer, if val.loss.is_nan() { f64::INFINITY } else { val.loss });
        let verdict = stopper.observe(key);
        let improved = verdict == Verdict::Improved;
        if improved {
            best = Some(model.params().clone());
            best_epoch = epoch;
        }
        let record = EpochRecord {
            epoch,
            steps: opt.steps_taken(),
            train_loss: loss_sum / stepped as f64,
            skipped,
            lr,
            val_loss: val.loss,
            val_wer: val.wer,
            val_cer: val.cer,
            improved,
        };
        log::info!(
            "epoch {epoch}: train loss {:.4}, val loss {:.4}, WER {:.2}%, CER {:.2}%{}",
            record.train_loss,
            record.val_loss,
            record.val_wer,
            record.val_cer,
            if improved { " *" } else { "" }
        );
        on_epoch(&record, model, opt)?;
        history.push(record);
        if cfg.target_loss.is_some_and(|t| val.wer == 0.0 && val.loss < t) {
            stop = StopReason::TargetReached;
            break;
        }
        if verdict == Verdict::Stop {
            stop = StopReason::EarlyStopping;
            break;
        }
    }
    if let Some(best) = best {
        model.params_mut().load_values(&best)?;
    }
    Ok(TrainOutcome {
        history,
        best_epoch,
        stop,
    })
}
