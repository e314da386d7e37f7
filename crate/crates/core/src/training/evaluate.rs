use std::path::PathBuf;

use rayon::prelude::*;
use serde::Serialize;

use crate::ctc::{ctc_loss, greedy_decode};
use crate::data::{collate, Utterance};
use crate::error::Result;
use crate::metrics::{cer, corpus_rate, wer, ErrorRateReport};
use crate::model::AcousticModel;
use crate::tensor::Tensor;
use crate::text::CharSet;

#[derive(Debug, Clone, Serialize)]
pub struct UtteranceResult {
    pub audio_path: PathBuf,
    pub reference: String,
    pub hypothesis: String,
    pub wer: ErrorRateReport,
    pub cer: ErrorRateReport,
    /// CTC loss of the reference; absent when it cannot be aligned.
    pub loss: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalSummary {
    /// Corpus WER in percent.
    pub wer: f64,
    /// Corpus CER in percent.
    pub cer: f64,
    /// Mean CTC loss over alignable utterances; NaN when there are none.
    pub loss: f64,
    pub utterances: Vec<UtteranceResult>,
}

/// Greedy transcripts for a set of utterances, in order, computed in
/// batches of `batch_size`. Utterances too short for the model decode to "".
pub fn transcribe_all(
    model: &AcousticModel,
    utts: &[&Utterance],
    cs: &CharSet,
    batch_size: usize,
) -> Result<Vec<(String, Option<f64>)>> {
    let min = model.config().min_input_frames();
    let usable: Vec<usize> = (0..utts.len()).filter(|&i| utts[i].features.n_frames() >= min).collect();
    let chunks: Vec<&[usize]> = usable.chunks(batch_size.max(1)).collect();
    let decoded: Vec<Vec<(usize, String, Option<f64>)>> = chunks
        .par_iter()
        .map(|idx| decode_batch(model, utts, idx, cs))
        .collect::<Result<_>>()?;
    let mut out = vec![(String::new(), None); utts.len()];
    for (i, text, loss) in decoded.into_iter().flatten() {
        out[i] = (text, loss);
    }
    Ok(out)
}

fn decode_batch(
    model: &AcousticModel,
    utts: &[&Utterance],
    idx: &[usize],
    cs: &CharSet,
) -> Result<Vec<(usize, String, Option<f64>)>> {
    let members: Vec<&Utterance> = idx.iter().map(|&i| utts[i]).collect();
    let batch = collate(&members, model.config())?;
    let (log_probs, out_lens) = model.infer(&batch.features, &batch.feature_lengths)?;
    let (t, c) = (log_probs.shape()[1], log_probs.shape()[2]);
    let mut out = Vec::with_capacity(idx.len());
    for k in 0..idx.len() {
        let len = out_lens[k];
        let base = k * t * c;
        let trimmed = Tensor::new(vec![len, c], log_probs.data()[base..base + len * c].to_vec())?;
        let text = greedy_decode(&trimmed, cs)?;
        let loss = if batch.feasible[k] {
            Some(ctc_loss(&trimmed, &batch.labels[k])?.loss)
        } else {
            None
        };
        out.push((idx[k], text, loss));
    }
    Ok(out)
}

/// Decodes every utterance and scores it against its transcript.
pub fn evaluate(model: &AcousticModel, utts: &[Utterance], cs: &CharSet, batch_size: usize) -> Result<EvalSummary> {
    let refs: Vec<&Utterance> = utts.iter().collect();
    let hyps = transcribe_all(model, &refs, cs, batch_size)?;
    let utterances: Vec<UtteranceResult> = utts
        .iter()
        .zip(hyps)
        .map(|(u, (hyp, loss))| UtteranceResult {
            audio_path: u.audio_path.clone(),
            wer: wer(&u.text, &hyp),
            cer: cer(&u.text, &hyp),
            reference: u.text.clone(),
            hypothesis: hyp,
            loss,
        })
        .collect();
    summarize(utterances)
}

pub fn summarize(utterances: Vec<UtteranceResult>) -> Result<EvalSummary> {
    let losses: Vec<f64> = utterances.iter().filter_map(|u| u.loss).collect();
    let loss = if losses.is_empty() {
        f64::NAN
    } else {
        losses.iter().sum::<f64>() / losses.len() as f64
    };
    Ok(EvalSummary {
        wer: corpus_rate(utterances.iter().map(|u| &u.wer))?,
        cer: corpus_rate(utterances.iter().map(|u| &u.cer))?,
        loss,
        utterances,
    })
}
