//! A tiny synthetic corpus: each "word" is one letter rendered as a fixed
//! tone or chirp, words are separated by short silences, and the transcript
//! spells out the letters.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::{write_wav, Waveform};
use crate::error::{Error, IoContext, Result};
use crate::text::CharSet;

use super::{write_manifest, ManifestEntry};

pub const SAMPLE_RATE: u32 = 8_000;
pub const LETTERS: [&str; 6] = ["a", "b", "c", "d", "e", "f"];
pub const MANIFEST_NAME: &str = "manifest.jsonl";

const WORD_S: f64 = 0.24;
const GAP_S: f64 = 0.12;
const EDGE_S: f64 = 0.12;
const RAMP_S: f64 = 0.01;
const AMPLITUDE: f64 = 0.5;
const NOISE: f64 = 0.005;
const MIN_WORDS: usize = 2;
const MAX_WORDS: usize = 4;

/// Start and end frequency in Hz of each letter's sweep; equal ends are pure tones.
const PATTERNS: [(f64, f64); 6] = [
    (400.0, 400.0),
    (750.0, 750.0),
    (1150.0, 1150.0),
    (1700.0, 1700.0),
    (500.0, 1500.0),
    (2600.0, 1300.0),
];

/// Blank, space, and the six letters.
pub fn charset() -> CharSet {
    CharSet::from_symbols(std::iter::once(" ").chain(LETTERS)).expect("valid symbols")
}

fn push_word(out: &mut Vec<f64>, letter: usize) {
    let n = (WORD_S * SAMPLE_RATE as f64) as usize;
    let ramp = (RAMP_S * SAMPLE_RATE as f64) as usize;
    let (f0, f1) = PATTERNS[letter];
    let dur = n as f64 / SAMPLE_RATE as f64;
    for i in 0..n {
        let t = i as f64 / SAMPLE_RATE as f64;
        // linear chirp phase: 2 pi (f0 t + (f1 - f0) t^2 / (2 dur))
        let phase = 2.0 * PI * (f0 * t + (f1 - f0) * t * t / (2.0 * dur));
        let edge = i.min(n - 1 - i);
        let env = if edge < ramp {
            0.5 - 0.5 * (PI * edge as f64 / ramp as f64).cos()
        } else {
            1.0
        };
        out.push(AMPLITUDE * env * phase.sin());
    }
}

fn push_silence(out: &mut Vec<f64>, seconds: f64) {
    out.resize(out.len() + (seconds * SAMPLE_RATE as f64) as usize, 0.0);
}

/// One utterance drawn from `rng`: the waveform and its transcript.
pub fn synth_utterance<R: Rng>(rng: &mut R) -> (Waveform, String) {
    let n_words = rng.random_range(MIN_WORDS..=MAX_WORDS);
    let letters: Vec<usize> = (0..n_words).map(|_| rng.random_range(0..LETTERS.len())).collect();
    let mut samples = Vec::new();
    push_silence(&mut samples, EDGE_S);
    for (i, &l) in letters.iter().enumerate() {
        if i > 0 {
            push_silence(&mut samples, GAP_S);
        }
        push_word(&mut samples, l);
    }
    push_silence(&mut samples, EDGE_S);
    for s in &mut samples {
        *s += rng.random_range(-NOISE..NOISE);
    }
    let text = letters.iter().map(|&l| LETTERS[l]).collect::<Vec<_>>().join(" ");
    (Waveform::new(samples, SAMPLE_RATE).expect("finite samples"), text)
}

/// Writes `n` WAV files and `manifest.jsonl` into `out_dir`. The manifest
/// stores relative paths; the returned entries are resolved against `out_dir`.
pub fn synth_corpus(out_dir: &Path, n: usize, seed: u64) -> Result<Vec<ManifestEntry>> {
    if n == 0 {
        return Err(Error::Config("synthetic corpus needs at least one utterance".into()));
    }
    fs::create_dir_all(out_dir).with_path(out_dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::with_capacity(n);
    for i in 0..n {
        let (wave, text) = synth_utterance(&mut rng);
        let name = format!("utt_{i:04}.wav");
        write_wav(&out_dir.join(&name), &wave)?;
        entries.push(ManifestEntry {
            audio_path: PathBuf::from(name),
            text,
            duration_s: Some(wave.duration_s()),
        });
    }
    write_manifest(&out_dir.join(MANIFEST_NAME), &entries)?;
    for e in &mut entries {
        e.audio_path = out_dir.join(&e.audio_path);
    }
    Ok(entries)
}
