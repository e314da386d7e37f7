//! Audio frontend: waveforms, narrow-band mel-spectrograms, SpecAugment
//! masking, resampling, and the WAV / feature-file formats.
//!
//! The pipeline is
//!
//! ```text
//! Waveform --frame (hann, n_fft, hop)--> power spectra --MelFilterbank--> MelSpectrogram
//! ```
//!
//! Frames start at sample 0 (no center padding). A waveform shorter than
//! `n_fft` is zero-padded to a single frame.

mod augment;
mod features;
mod mel;
mod resample;
mod stft;
mod wav;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use augment::{spec_augment, SpecAugmentConfig};
pub use features::{read_features, write_features, FEATURE_MAGIC, FEATURE_VERSION};
pub use mel::{build_mel_filterbank, hertz_to_mel, mel_to_hertz, MelFilterbank};
pub use resample::resample;
pub use stft::{frame_count, mel_spectrogram, power_spectrum, MelSpectrogram, LOG_FLOOR};
pub use wav::{read_wav, wav_duration_s, write_wav};

/// Mono time-domain signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Domain("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Domain(format!("sample {i} is not finite")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Analysis window applied to each frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    /// Periodic Hann: `0.5 - 0.5 cos(2 pi n / N)`.
    #[default]
    Hann,
    Rectangular,
}

impl Window {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            Window::Hann => (0..len)
                .map(|n| {
                    0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos()
                })
                .collect(),
            Window::Rectangular => vec![1.0; len],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrontendConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop_length: usize,
    pub n_mels: usize,
    #[serde(default)]
    pub window: Window,
    #[serde(default = "default_true")]
    pub log_compress: bool,
}

fn default_true() -> bool {
    true
}

impl FrontendConfig {
    /// 16 kHz, 512-point FFT and hop, 128 mel bands.
    pub fn fon() -> Self {
        Self {
            sample_rate: 16_000,
            n_fft: 512,
            hop_length: 512,
            n_mels: 128,
            window: Window::Hann,
            log_compress: true,
        }
    }

    /// 8 kHz, 512-point FFT and hop, 64 mel bands.
    pub fn igbo() -> Self {
        Self {
            sample_rate: 8_000,
            n_mels: 64,
            ..Self::fon()
        }
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn frame_rate(&self) -> f64 {
        self.sample_rate as f64 / self.hop_length as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::Config("sample_rate must be positive".into()));
        }
        if self.n_fft == 0 {
            return Err(Error::Config("n_fft must be positive".into()));
        }
        if self.hop_length == 0 || self.hop_length > self.n_fft {
            return Err(Error::Config(format!(
                "hop_length must lie in 1..={}, got {}",
                self.n_fft, self.hop_length
            )));
        }
        if self.n_mels == 0 || self.n_mels > self.n_bins() {
            return Err(Error::Config(format!(
                "n_mels must lie in 1..={}, got {}",
                self.n_bins(),
                self.n_mels
            )));
        }
        Ok(())
    }
}
