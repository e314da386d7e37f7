//! Manifests, filtering, splitting, and padded batches.

mod manifest;
pub mod synth;

use std::borrow::Borrow;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::{mel_spectrogram, read_wav, resample, FrontendConfig, MelFilterbank, MelSpectrogram};
use crate::ctc::min_alignable_length;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::tensor::Tensor;
use crate::text::CharSet;

pub use manifest::{load_manifest, parse_manifest, parse_manifest_str, write_manifest, ManifestEntry};

fn infinity() -> f64 {
    f64::INFINITY
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    #[serde(default)]
    pub min_duration_s: f64,
    #[serde(default = "infinity")]
    pub max_duration_s: f64,
    #[serde(default)]
    pub max_words: Option<usize>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            min_duration_s: 0.0,
            max_duration_s: f64::INFINITY,
            max_words: None,
        }
    }
}

impl FilterConfig {
    /// 2 s to 5 s, no word limit.
    pub fn fon() -> Self {
        Self {
            min_duration_s: 2.0,
            max_duration_s: 5.0,
            max_words: None,
        }
    }
}

/// Keeps entries within the duration bounds and word limit, in order.
/// Entries without a known duration pass the duration test.
pub fn filter_dataset(entries: &[ManifestEntry], cfg: &FilterConfig) -> Vec<ManifestEntry> {
    entries
        .iter()
        .filter(|e| {
            e.duration_s
                .is_none_or(|d| d >= cfg.min_duration_s && d <= cfg.max_duration_s)
        })
        .filter(|e| cfg.max_words.is_none_or(|m| e.word_count() <= m))
        .cloned()
        .collect()
}

/// Train / validation / test proportions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    /// 8235 / 1500 / 669.
    fn default() -> Self {
        let total = 8235.0 + 1500.0 + 669.0;
        Self {
            train: 8235.0 / total,
            val: 1500.0 / total,
            test: 669.0 / total,
        }
    }
}

impl SplitRatios {
    /// `(train, val, test)` counts for `n` items; rounding slack goes to test.
    pub fn sizes(&self, n: usize) -> Result<(usize, usize, usize)> {
        let sum = self.train + self.val + self.test;
        if [self.train, self.val, self.test].iter().any(|r| !(r.is_finite() && *r >= 0.0)) || sum <= 0.0 {
            return Err(Error::Config(format!("invalid split ratios {self:?}")));
        }
        let train = ((n as f64 * self.train / sum).round() as usize).min(n);
        let val = ((n as f64 * self.val / sum).round() as usize).min(n - train);
        Ok((train, val, n - train - val))
    }
}

/// Shuffles with `seed` and cuts into train, validation and test.
pub fn split_dataset<T>(mut items: Vec<T>, ratios: &SplitRatios, seed: u64) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let (n_train, n_val, _) = ratios.sizes(items.len())?;
    items.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = items.split_off(n_train + n_val);
    let val = items.split_off(n_train);
    Ok((items, val, test))
}

/// Index groups of at most `batch_size`, shuffled when a seed is given.
pub fn batch_indices(n: usize, batch_size: usize, shuffle_seed: Option<u64>) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    if let Some(seed) = shuffle_seed {
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Reads, resamples to the frontend rate if needed, and computes features.
pub fn featurize_file(path: &Path, frontend: &FrontendConfig, fb: &MelFilterbank) -> Result<MelSpectrogram> {
    let mut wave = read_wav(path)?;
    if wave.sample_rate() != frontend.sample_rate {
        wave = resample(&wave, frontend.sample_rate)?;
    }
    mel_spectrogram(&wave, frontend, fb)
}

/// A featurized, encoded utterance.
#[derive(Debug, Clone)]
pub struct Utterance {
    pub audio_path: PathBuf,
    pub text: String,
    pub labels: Vec<usize>,
    pub features: MelSpectrogram,
}

impl Utterance {
    pub fn prepare(entry: &ManifestEntry, cs: &CharSet, frontend: &FrontendConfig, fb: &MelFilterbank) -> Result<Self> {
        let wrap = |e| Error::Utterance {
            path: entry.audio_path.clone(),
            source: Box::new(e),
        };
        let labels = cs.encode(&entry.text).map_err(wrap)?.into_ids();
        let features = featurize_file(&entry.audio_path, frontend, fb).map_err(wrap)?;
        Ok(Self {
            audio_path: entry.audio_path.clone(),
            text: entry.text.clone(),
            labels,
            features,
        })
    }
}

/// Featurizes every entry in parallel; the first failure is returned.
pub fn prepare_all(
    entries: &[ManifestEntry],
    cs: &CharSet,
    frontend: &FrontendConfig,
    fb: &MelFilterbank,
) -> Result<Vec<Utterance>> {
    entries
        .par_iter()
        .map(|e| Utterance::prepare(e, cs, frontend, fb))
        .collect()
}

#[derive(Debug, Clone)]
pub struct Batch {
    /// `[B, n_mels, T_max]`, zero beyond each utterance's length.
    pub features: Tensor,
    pub feature_lengths: Vec<usize>,
    pub labels: Vec<Vec<usize>>,
    pub label_lengths: Vec<usize>,
    /// False where the target cannot be aligned to the model's output frames.
    pub feasible: Vec<bool>,
    pub audio_paths: Vec<PathBuf>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.feature_lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.feature_lengths.is_empty()
    }

    pub fn max_frames(&self) -> usize {
        self.features.shape()[2]
    }

    /// Features of utterance `i` without padding, row-major `[n_mels, len]`.
    pub fn unpadded(&self, i: usize) -> Vec<f32> {
        let (n_mels, t_max) = (self.features.shape()[1], self.features.shape()[2]);
        let len = self.feature_lengths[i];
        let base = i * n_mels * t_max;
        (0..n_mels)
            .flat_map(|m| {
                let row = base + m * t_max;
                self.features.data()[row..row + len].iter().map(|&v| v as f32)
            })
            .collect()
    }

    /// Same batch restricted to feasible utterances, or `None` if none are.
    pub fn feasible_only(&self) -> Option<Batch> {
        let keep: Vec<usize> = (0..self.len()).filter(|&i| self.feasible[i]).collect();
        if keep.is_empty() {
            return None;
        }
        if keep.len() == self.len() {
            return Some(self.clone());
        }
        let (n_mels, t_max) = (self.features.shape()[1], self.features.shape()[2]);
        let per = n_mels * t_max;
        let t_keep = keep.iter().map(|&i| self.feature_lengths[i]).max().unwrap();
        let mut data = Vec::with_capacity(keep.len() * n_mels * t_keep);
        for &i in &keep {
            for m in 0..n_mels {
                let row = i * per + m * t_max;
                data.extend_from_slice(&self.features.data()[row..row + t_keep]);
            }
        }
        let pick = |v: &[usize]| keep.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Some(Batch {
            features: Tensor::new(vec![keep.len(), n_mels, t_keep], data).expect("consistent shape"),
            feature_lengths: pick(&self.feature_lengths),
            labels: keep.iter().map(|&i| self.labels[i].clone()).collect(),
            label_lengths: pick(&self.label_lengths),
            feasible: vec![true; keep.len()],
            audio_paths: keep.iter().map(|&i| self.audio_paths[i].clone()).collect(),
        })
    }
}

/// Pads utterances to the longest one and flags targets the model cannot align.
pub fn collate<U: Borrow<Utterance>>(utts: &[U], model: &ModelConfig) -> Result<Batch> {
    let first = utts
        .first()
        .ok_or_else(|| Error::Config("cannot collate an empty batch".into()))?
        .borrow();
    let n_mels = first.features.n_mels();
    let t_max = utts.iter().map(|u| u.borrow().features.n_frames()).max().unwrap();
    let b = utts.len();
    let mut data = vec![0.0; b * n_mels * t_max];
    let mut batch = Batch {
        features: Tensor::zeros(&[0]),
        feature_lengths: Vec::with_capacity(b),
        labels: Vec::with_capacity(b),
        label_lengths: Vec::with_capacity(b),
        feasible: Vec::with_capacity(b),
        audio_paths: Vec::with_capacity(b),
    };
    for (i, u) in utts.iter().enumerate() {
        let u = u.borrow();
        let f = &u.features;
        if f.n_mels() != n_mels {
            return Err(Error::Utterance {
                path: u.audio_path.clone(),
                source: Box::new(Error::shape("collate", format!("{} mel bands, batch has {n_mels}", f.n_mels()))),
            });
        }
        let len = f.n_frames();
        for m in 0..n_mels {
            let dst = i * n_mels * t_max + m * t_max;
            for (d, &s) in data[dst..dst + len].iter_mut().zip(f.row(m)) {
                *d = s as f64;
            }
        }
        let feasible = len >= model.min_input_frames()
            && min_alignable_length(&u.labels) <= model.output_frames(len);
        batch.feature_lengths.push(len);
        batch.label_lengths.push(u.labels.len());
        batch.labels.push(u.labels.clone());
        batch.feasible.push(feasible);
        batch.audio_paths.push(u.audio_path.clone());
    }
    batch.features = Tensor::new(vec![b, n_mels, t_max], data)?;
    Ok(batch)
}
