use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::wav_duration_s;
use crate::error::{Error, IoContext, Result};
use crate::text::normalize_text;

/// One utterance of a line-delimited JSON manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    /// Relative paths resolve against the manifest's directory.
    pub audio_path: PathBuf,
    #[serde(alias = "transcript")]
    pub text: String,
    #[serde(default, rename = "duration", skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
}

impl ManifestEntry {
    pub fn word_count(&self) -> usize {
        self.text.split_whitespace().count()
    }
}

/// Parses a manifest without touching the audio files. Transcripts are
/// normalized and paths made absolute relative to the manifest.
pub fn parse_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let content = fs::read_to_string(path).with_path(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_manifest_str(&content, base)
}

pub fn parse_manifest_str(content: &str, base: &Path) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (i, line) in content.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut e: ManifestEntry = serde_json::from_str(line).map_err(|err| Error::Manifest {
            line: line_no,
            reason: err.to_string(),
        })?;
        e.text = normalize_text(&e.text);
        if e.text.is_empty() {
            return Err(Error::Manifest {
                line: line_no,
                reason: "transcript is empty after normalization".into(),
            });
        }
        if let Some(d) = e.duration_s {
            if !(d.is_finite() && d >= 0.0) {
                return Err(Error::Manifest {
                    line: line_no,
                    reason: format!("invalid duration {d}"),
                });
            }
        }
        if e.audio_path.is_relative() {
            e.audio_path = base.join(&e.audio_path);
        }
        out.push(e);
    }
    Ok(out)
}

/// Parses a manifest, checks every audio file exists and fills in missing
/// durations from the WAV headers.
pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let mut entries = parse_manifest(path)?;
    let missing: Vec<PathBuf> = entries
        .iter()
        .filter(|e| !e.audio_path.is_file())
        .map(|e| e.audio_path.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingAudio(missing));
    }
    for e in &mut entries {
        if e.duration_s.is_none() {
            e.duration_s = Some(wav_duration_s(&e.audio_path)?);
        }
    }
    Ok(entries)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut s = String::new();
    for e in entries {
        s.push_str(&serde_json::to_string(e)?);
        s.push('\n');
    }
    fs::write(path, s).with_path(path)
}
