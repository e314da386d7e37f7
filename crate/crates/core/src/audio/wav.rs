use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};

use super::Waveform;

/// Reads a 16-bit PCM RIFF WAV file. Multi-channel audio is averaged to mono.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let mut reader = WavReader::open(path)?;
    let spec = reader.spec();
    if spec.sample_format != SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::UnsupportedAudio {
            path: path.to_path_buf(),
            reason: format!(
                "expected 16-bit PCM, found {:?} {}-bit",
                spec.sample_format, spec.bits_per_sample
            ),
        });
    }
    let channels = spec.channels.max(1) as usize;
    let raw: Vec<i16> = reader.samples::<i16>().collect::<Result<_, _>>()?;
    let samples = raw
        .chunks(channels)
        .map(|frame| {
            frame.iter().map(|&s| s as f64 / 32768.0).sum::<f64>() / channels as f64
        })
        .collect();
    Waveform::new(samples, spec.sample_rate)
}

/// Duration from the WAV header alone.
pub fn wav_duration_s(path: &Path) -> Result<f64> {
    let reader = WavReader::open(path)?;
    Ok(reader.duration() as f64 / reader.spec().sample_rate as f64)
}

/// Writes mono 16-bit PCM, clamping samples to [-1, 1].
pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: w.sample_rate(),
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec)?;
    for &s in w.samples() {
        let q = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer.write_sample(q)?;
    }
    writer.finalize()?;
    Ok(())
}
